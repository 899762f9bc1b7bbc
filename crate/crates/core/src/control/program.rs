//! Composition of actions into sequences, parallel groups and triggers.

use super::action::Action;
use super::condition::Condition;
use super::Status;

/// Tree of actions as submitted by a designer.
#[derive(Debug, Clone)]
pub enum Program {
    /// Children run one after another; the next starts on the tick the
    /// previous one finishes.
    Seq(Vec<Program>),
    /// Children run at the same time; done when all are done.
    Par(Vec<Program>),
    /// The child stays pending until the condition holds on some tick, then
    /// runs to completion.
    When(Condition, Box<Program>),
    Leaf(Action),
}

impl Program {
    pub fn seq(children: impl IntoIterator<Item = Program>) -> Self {
        Program::Seq(children.into_iter().collect())
    }

    pub fn par(children: impl IntoIterator<Item = Program>) -> Self {
        Program::Par(children.into_iter().collect())
    }

    pub fn when(condition: Condition, child: impl Into<Program>) -> Self {
        Program::When(condition, Box::new(child.into()))
    }

    /// Leaves in depth-first order.
    pub fn leaves(&self) -> Vec<&Action> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a Action>) {
        match self {
            Program::Seq(c) | Program::Par(c) => c.iter().for_each(|p| p.collect(out)),
            Program::When(_, c) => c.collect(out),
            Program::Leaf(a) => out.push(a),
        }
    }
}

impl From<Action> for Program {
    fn from(a: Action) -> Self {
        Program::Leaf(a)
    }
}

/// Runtime form of a [`Program`].
#[derive(Debug, Clone)]
pub(crate) enum Node {
    Seq {
        children: Vec<Node>,
        cursor: usize,
    },
    Par {
        children: Vec<Node>,
    },
    When {
        condition: Condition,
        child: Box<Node>,
        triggered: bool,
    },
    Leaf {
        id: usize,
        action: Action,
    },
}

impl Node {
    pub(crate) fn build(program: Program, next_leaf: &mut usize) -> Node {
        match program {
            Program::Seq(c) => Node::Seq {
                children: c.into_iter().map(|p| Node::build(p, next_leaf)).collect(),
                cursor: 0,
            },
            Program::Par(c) => Node::Par {
                children: c.into_iter().map(|p| Node::build(p, next_leaf)).collect(),
            },
            Program::When(condition, child) => Node::When {
                condition,
                child: Box::new(Node::build(*child, next_leaf)),
                triggered: false,
            },
            Program::Leaf(action) => {
                *next_leaf += 1;
                Node::Leaf {
                    id: *next_leaf,
                    action,
                }
            }
        }
    }

    pub(crate) fn status(&self) -> Status {
        match self {
            Node::Leaf { action, .. } => action.status(),
            Node::When {
                triggered: false, ..
            } => Status::Pending,
            Node::When { child, .. } => child.status(),
            Node::Seq { children, .. } | Node::Par { children } => {
                aggregate(children.iter().map(Node::status))
            }
        }
    }

    pub(crate) fn leaves(&self) -> Vec<&Action> {
        let mut out = Vec::new();
        self.visit(&mut |_, a| out.push(a));
        out
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(usize, &'a Action)) {
        match self {
            Node::Seq { children, .. } | Node::Par { children } => {
                children.iter().for_each(|c| c.visit(f))
            }
            Node::When { child, .. } => child.visit(f),
            Node::Leaf { id, action } => f(*id, action),
        }
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(usize, &mut Action)) {
        match self {
            Node::Seq { children, .. } | Node::Par { children } => {
                children.iter_mut().for_each(|c| c.visit_mut(f))
            }
            Node::When { child, .. } => child.visit_mut(f),
            Node::Leaf { id, action } => f(*id, action),
        }
    }

    /// Advances the tree by one tick. `leaf` runs one leaf and returns its
    /// new status.
    pub(crate) fn advance(
        &mut self,
        leaf: &mut dyn FnMut(usize, &mut Action) -> Status,
        gate: &dyn Fn(&Condition) -> bool,
    ) -> Status {
        match self {
            Node::Leaf { id, action } => {
                if action.status().is_finished() {
                    action.status()
                } else {
                    leaf(*id, action)
                }
            }
            Node::When {
                condition,
                child,
                triggered,
            } => {
                if !*triggered {
                    if !gate(condition) {
                        return Status::Pending;
                    }
                    *triggered = true;
                }
                child.advance(leaf, gate)
            }
            Node::Seq { children, cursor } => {
                while *cursor < children.len() {
                    match children[*cursor].advance(leaf, gate) {
                        Status::Done => *cursor += 1,
                        Status::Aborted => return Status::Aborted,
                        _ => return Status::Running,
                    }
                }
                Status::Done
            }
            Node::Par { children } => {
                let mut statuses = Vec::with_capacity(children.len());
                for c in children.iter_mut() {
                    statuses.push(c.advance(leaf, gate));
                }
                aggregate(statuses.into_iter())
            }
        }
    }
}

fn aggregate(statuses: impl Iterator<Item = Status>) -> Status {
    let (mut any, mut all_done, mut all_pending) = (false, true, true);
    for s in statuses {
        any = true;
        if s == Status::Aborted {
            return Status::Aborted;
        }
        all_done &= s == Status::Done;
        all_pending &= s == Status::Pending;
    }
    if !any || all_done {
        Status::Done
    } else if all_pending {
        Status::Pending
    } else {
        Status::Running
    }
}
