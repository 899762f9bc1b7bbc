use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::action::{ActionKind, ActionSpec, JointOutput, LeafCtx, RemoteSample};
use super::program::{Node, Program};
use super::safety::{safety_check, SafetyVerdict, ShutdownReason};
use super::{ControlError, ControlEvent, ControlParams, Status};
use crate::model::{ExoskeletonConfig, JointId, JointKind};
use crate::sim::Snapshot;

/// Finished programs kept around for status queries.
const HISTORY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProgramHandle(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorCommand {
    /// N·m, clamped to the motor limit.
    pub torque: f64,
    /// Position reference the torque was derived from, if any.
    pub setpoint: Option<f64>,
}

/// One torque per actuated joint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotorCommandSet {
    commands: BTreeMap<JointId, MotorCommand>,
}

impl MotorCommandSet {
    pub fn zeros(config: &ExoskeletonConfig) -> Self {
        MotorCommandSet {
            commands: config
                .joints()
                .filter(|jc| jc.kind == JointKind::Actuated)
                .map(|jc| (jc.id, MotorCommand::default()))
                .collect(),
        }
    }

    pub fn get(&self, joint: JointId) -> Option<MotorCommand> {
        self.commands.get(&joint).copied()
    }

    pub fn torque(&self, joint: JointId) -> f64 {
        self.get(joint).map_or(0.0, |c| c.torque)
    }

    pub fn setpoint(&self, joint: JointId) -> Option<f64> {
        self.get(joint).and_then(|c| c.setpoint)
    }

    pub fn torques(&self) -> impl Iterator<Item = (JointId, f64)> + '_ {
        self.commands.iter().map(|(&j, c)| (j, c.torque))
    }

    pub fn is_all_zero(&self) -> bool {
        self.commands.values().all(|c| c.torque == 0.0)
    }

    fn set(&mut self, joint: JointId, out: JointOutput) {
        if let Some(c) = self.commands.get_mut(&joint) {
            c.torque = out.torque;
            c.setpoint = out.setpoint;
        }
    }

    fn clear(&mut self, joint: JointId) {
        if let Some(c) = self.commands.get_mut(&joint) {
            *c = MotorCommand::default();
        }
    }

    fn clamp(&mut self, config: &ExoskeletonConfig) {
        for (j, c) in self.commands.iter_mut() {
            let max = config
                .joint(*j)
                .ok()
                .and_then(|jc| jc.motor)
                .map_or(0.0, |m| m.max_torque);
            c.torque = c.torque.clamp(-max, max);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramInfo {
    pub handle: ProgramHandle,
    /// Kind of the first action in the program.
    pub kind: ActionKind,
    pub status: Status,
}

#[derive(Debug, Clone)]
struct Slot {
    handle: ProgramHandle,
    root: Node,
    finished: bool,
}

type LeafKey = (ProgramHandle, usize);

/// Fixed-rate executor of programs.
///
/// [`Controller::tick`] must be called exactly once per control period with
/// the snapshot taken at that tick boundary.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ExoskeletonConfig,
    params: ControlParams,
    rng: ChaCha8Rng,
    slots: Vec<Slot>,
    claims: BTreeMap<JointId, LeafKey>,
    remote: BTreeMap<ProgramHandle, BTreeMap<JointId, RemoteSample>>,
    halted: Option<ShutdownReason>,
    next_program: u64,
    next_leaf: usize,
    events: Vec<ControlEvent>,
    now_us: u64,
}

impl Controller {
    pub fn new(config: ExoskeletonConfig, seed: u64) -> Self {
        Self::with_params(config, ControlParams::default(), seed)
    }

    pub fn with_params(config: ExoskeletonConfig, params: ControlParams, seed: u64) -> Self {
        Controller {
            config,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            slots: Vec::new(),
            claims: BTreeMap::new(),
            remote: BTreeMap::new(),
            halted: None,
            next_program: 0,
            next_leaf: 0,
            events: Vec::new(),
            now_us: 0,
        }
    }

    pub fn config(&self) -> &ExoskeletonConfig {
        &self.config
    }

    pub fn params(&self) -> &ControlParams {
        &self.params
    }

    /// Takes effect from the next tick.
    pub fn set_config(&mut self, config: ExoskeletonConfig) {
        self.config = config;
    }

    pub fn run_program(
        &mut self,
        program: impl Into<Program>,
    ) -> Result<ProgramHandle, ControlError> {
        if self.halted.is_some() {
            return Err(ControlError::SystemHalted);
        }
        self.next_program += 1;
        let handle = ProgramHandle(self.next_program);
        let root = Node::build(program.into(), &mut self.next_leaf);
        self.slots.push(Slot {
            handle,
            root,
            finished: false,
        });
        Ok(handle)
    }

    pub fn is_halted(&self) -> bool {
        self.halted.is_some()
    }

    pub fn halt_reason(&self) -> Option<ShutdownReason> {
        self.halted
    }

    /// Latches the controller in the halted state and aborts everything.
    pub fn panic(&mut self) {
        self.halt(ShutdownReason::Panic);
    }

    fn halt(&mut self, reason: ShutdownReason) {
        if self.halted.is_some() {
            return;
        }
        self.halted = Some(reason);
        self.events.push(ControlEvent::Halted {
            time_us: self.now_us,
            reason,
        });
        let handles: Vec<_> = self.slots.iter().map(|s| s.handle).collect();
        for h in handles {
            let _ = self.abort(h);
        }
    }

    fn slot_mut(&mut self, handle: ProgramHandle) -> Result<&mut Slot, ControlError> {
        self.slots
            .iter_mut()
            .find(|s| s.handle == handle)
            .ok_or(ControlError::NoSuchProgram)
    }

    fn finish_leaves(
        &mut self,
        handle: ProgramHandle,
        running_to: Status,
    ) -> Result<(), ControlError> {
        let claims = &mut self.claims;
        let slot = self
            .slots
            .iter_mut()
            .find(|s| s.handle == handle)
            .ok_or(ControlError::NoSuchProgram)?;
        slot.root.visit_mut(&mut |id, action| {
            let next = match action.status() {
                Status::Running => running_to,
                Status::Pending => Status::Aborted,
                _ => return,
            };
            claims.retain(|_, owner| *owner != (handle, id));
            action.set_status(next);
        });
        slot.finished = true;
        self.remote.remove(&handle);
        Ok(())
    }

    /// Running actions finish as Done, pending ones are dropped as Aborted.
    pub fn stop(&mut self, handle: ProgramHandle) -> Result<(), ControlError> {
        self.finish_leaves(handle, Status::Done)
    }

    pub fn abort(&mut self, handle: ProgramHandle) -> Result<(), ControlError> {
        self.finish_leaves(handle, Status::Aborted)
    }

    /// Stops the running actions that drive any of `joints`. Returns how many
    /// were stopped.
    pub fn stop_joints(&mut self, joints: &[JointId]) -> usize {
        let owners: BTreeSet<LeafKey> = joints
            .iter()
            .filter_map(|j| self.claims.get(j).copied())
            .collect();
        for &(handle, leaf) in &owners {
            self.stop_leaf(handle, leaf);
        }
        owners.len()
    }

    fn stop_leaf(&mut self, handle: ProgramHandle, leaf: usize) -> Vec<JointId> {
        let mut released = Vec::new();
        self.claims.retain(|j, owner| {
            if *owner == (handle, leaf) {
                released.push(*j);
                false
            } else {
                true
            }
        });
        if let Ok(slot) = self.slot_mut(handle) {
            slot.root.visit_mut(&mut |id, action| {
                if id == leaf && action.status() == Status::Running {
                    action.set_status(Status::Done);
                }
            });
            if slot.root.status().is_finished() {
                slot.finished = true;
            }
        }
        released
    }

    pub fn status(&self, handle: ProgramHandle) -> Option<Status> {
        self.slots
            .iter()
            .find(|s| s.handle == handle)
            .map(|s| s.root.status())
    }

    /// Kind and status of every action in the program, depth first.
    pub fn leaf_statuses(&self, handle: ProgramHandle) -> Vec<(ActionKind, Status)> {
        self.slots
            .iter()
            .find(|s| s.handle == handle)
            .map(|s| {
                s.root
                    .leaves()
                    .into_iter()
                    .map(|a| (a.kind(), a.status()))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// All known programs, oldest first.
    pub fn programs(&self) -> Vec<ProgramInfo> {
        self.slots
            .iter()
            .map(|s| ProgramInfo {
                handle: s.handle,
                kind: s
                    .root
                    .leaves()
                    .first()
                    .map_or(ActionKind::Stop, |a| a.kind()),
                status: s.root.status(),
            })
            .collect()
    }

    /// Joints referenced by unfinished actions of unfinished programs.
    pub fn busy_joints(&self) -> BTreeSet<JointId> {
        let mut out = BTreeSet::new();
        for slot in self.slots.iter().filter(|s| !s.finished) {
            slot.root.visit(&mut |_, a| {
                if !a.status().is_finished() {
                    out.extend(a.claims().iter().copied());
                }
            });
        }
        out
    }

    /// Delivers one remote joint sample to a link program.
    pub fn feed_remote(
        &mut self,
        handle: ProgramHandle,
        source: JointId,
        angle: f64,
        received_us: u64,
    ) {
        self.remote
            .entry(handle)
            .or_default()
            .insert(source, RemoteSample { angle, received_us });
    }

    pub fn take_events(&mut self) -> Vec<ControlEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn tick(&mut self, snap: &Snapshot) -> MotorCommandSet {
        self.now_us = snap.time_us;
        let mut set = MotorCommandSet::zeros(&self.config);
        if self.halted.is_none() && self.params.safety_monitor {
            if let SafetyVerdict::Shutdown(reason) =
                safety_check(snap, &self.config, self.params.safety_margin)
            {
                self.halt(reason);
            }
        }
        if self.halted.is_some() {
            return set;
        }

        let dt = self.config.control_period_us() as f64 * 1e-6;
        let mut stop_requests: Vec<JointId> = Vec::new();
        let mut aborted_programs = Vec::new();
        {
            let Controller {
                config,
                params,
                rng,
                slots,
                claims,
                remote,
                events,
                ..
            } = self;
            for slot in slots.iter_mut().filter(|s| !s.finished) {
                let handle = slot.handle;
                let mut ctx = LeafCtx {
                    snap,
                    cfg: config,
                    params,
                    rng,
                    remote: remote.get(&handle),
                    dt,
                    events,
                };
                let mut leaf = |id: usize, action: &mut super::Action| -> Status {
                    if action.status() == Status::Pending {
                        let conflict = action
                            .claims()
                            .iter()
                            .find(|j| claims.get(j).is_some_and(|o| *o != (handle, id)))
                            .copied();
                        if let Some(joint) = conflict {
                            ctx.events.push(ControlEvent::Conflict {
                                time_us: snap.time_us,
                                joint,
                            });
                            action.set_status(Status::Aborted);
                            return Status::Aborted;
                        }
                        for &j in action.claims() {
                            claims.insert(j, (handle, id));
                        }
                        if matches!(action.spec(), ActionSpec::Stop) {
                            stop_requests.extend(action.joints().iter().copied());
                        }
                        action.activate(&mut ctx);
                    }
                    let mut out = Vec::new();
                    let mut status = action.step(&mut ctx, &mut out);
                    if status == Status::Running {
                        if let Some(&(joint, _)) = out.iter().find(|(_, o)| !o.torque.is_finite()) {
                            ctx.events.push(ControlEvent::Fault {
                                time_us: snap.time_us,
                                joint,
                            });
                            status = Status::Aborted;
                        }
                    }
                    if status == Status::Running {
                        for (j, o) in out {
                            set.set(j, o);
                        }
                    } else if status.is_finished() {
                        claims.retain(|_, owner| *owner != (handle, id));
                    }
                    action.set_status(status);
                    status
                };
                let status = slot.root.advance(&mut leaf, &|c| c.evaluate(snap));
                if status.is_finished() {
                    slot.finished = true;
                }
                if status == Status::Aborted {
                    aborted_programs.push(handle);
                }
            }
        }

        for handle in aborted_programs {
            self.release_outputs(handle, &mut set);
            let _ = self.abort(handle);
        }
        for joint in stop_requests {
            if let Some((handle, leaf)) = self.claims.get(&joint).copied() {
                for j in self.stop_leaf(handle, leaf) {
                    set.clear(j);
                }
            }
        }
        set.clamp(&self.config);

        let finished = self.slots.iter().filter(|s| s.finished).count();
        if finished > HISTORY {
            let mut excess = finished - HISTORY;
            self.slots.retain(|s| {
                if s.finished && excess > 0 {
                    excess -= 1;
                    false
                } else {
                    true
                }
            });
        }
        set
    }

    /// Zeroes this tick's outputs of a program's still-claimed joints.
    fn release_outputs(&self, handle: ProgramHandle, set: &mut MotorCommandSet) {
        for (j, owner) in &self.claims {
            if owner.0 == handle {
                set.clear(*j);
            }
        }
    }
}
