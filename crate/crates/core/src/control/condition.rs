//! Boolean triggers over a state snapshot.

use crate::model::JointId;
use crate::sim::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Above,
    AtLeast,
    Below,
    AtMost,
}

impl Comparator {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Above => value > bound,
            Comparator::AtLeast => value >= bound,
            Comparator::Below => value < bound,
            Comparator::AtMost => value <= bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTarget {
    pub joint: JointId,
    pub angle: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Angle {
        joint: JointId,
        cmp: Comparator,
        bound: f64,
    },
    /// Compares |ω|.
    Speed {
        joint: JointId,
        cmp: Comparator,
        bound: f64,
    },
    /// Compares |α|.
    Accel {
        joint: JointId,
        cmp: Comparator,
        bound: f64,
    },
    /// Compares the load cell reading where fitted, else the motor torque.
    Torque {
        joint: JointId,
        cmp: Comparator,
        bound: f64,
    },
    InRange {
        joint: JointId,
        min: f64,
        max: f64,
    },
    OutOfRange {
        joint: JointId,
        min: f64,
        max: f64,
    },
    /// Moving in the given direction faster than `deadband`.
    Direction {
        joint: JointId,
        positive: bool,
        deadband: f64,
    },
    Pose(Vec<PoseTarget>),
}

impl Condition {
    pub fn pose(targets: &[(JointId, f64, f64)]) -> Self {
        Condition::Pose(
            targets
                .iter()
                .map(|&(joint, angle, tolerance)| PoseTarget {
                    joint,
                    angle,
                    tolerance,
                })
                .collect(),
        )
    }

    pub fn joints(&self) -> Vec<JointId> {
        match self {
            Condition::Angle { joint, .. }
            | Condition::Speed { joint, .. }
            | Condition::Accel { joint, .. }
            | Condition::Torque { joint, .. }
            | Condition::InRange { joint, .. }
            | Condition::OutOfRange { joint, .. }
            | Condition::Direction { joint, .. } => vec![*joint],
            Condition::Pose(targets) => targets.iter().map(|t| t.joint).collect(),
        }
    }

    /// Conditions over joints missing from the snapshot are false.
    pub fn evaluate(&self, snap: &Snapshot) -> bool {
        let state = |j: &JointId| snap.joint(*j);
        match self {
            Condition::Angle { joint, cmp, bound } => {
                state(joint).is_some_and(|s| cmp.holds(s.angle, *bound))
            }
            Condition::Speed { joint, cmp, bound } => {
                state(joint).is_some_and(|s| cmp.holds(s.velocity.abs(), *bound))
            }
            Condition::Accel { joint, cmp, bound } => {
                state(joint).is_some_and(|s| cmp.holds(s.acceleration.abs(), *bound))
            }
            Condition::Torque { joint, cmp, bound } => state(joint).is_some_and(|s| {
                let torque = s.load_cell.unwrap_or_else(|| s.motor_torque());
                cmp.holds(torque, *bound)
            }),
            Condition::InRange { joint, min, max } => {
                state(joint).is_some_and(|s| s.angle >= *min && s.angle <= *max)
            }
            Condition::OutOfRange { joint, min, max } => {
                state(joint).is_some_and(|s| s.angle < *min || s.angle > *max)
            }
            Condition::Direction {
                joint,
                positive,
                deadband,
            } => state(joint).is_some_and(|s| {
                if *positive {
                    s.velocity > *deadband
                } else {
                    s.velocity < -*deadband
                }
            }),
            Condition::Pose(targets) => targets
                .iter()
                .all(|t| state(&t.joint).is_some_and(|s| (s.angle - t.angle).abs() <= t.tolerance)),
        }
    }
}
