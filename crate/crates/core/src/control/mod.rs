//! The firmware-side control loop: actions, triggers, composition and the
//! software safety layers.

mod action;
mod condition;
mod controller;
mod program;
mod safety;
pub mod strategy;

use thiserror::Error;

use crate::model::{JointId, JointName};

pub use action::{
    Action, ActionKind, ActionSpec, Effort, JerkParams, JointOutput, LinkPair, Target, WaveParams,
};
pub use condition::{Comparator, Condition, PoseTarget};
pub use controller::{Controller, MotorCommand, MotorCommandSet, ProgramHandle, ProgramInfo};
pub use program::Program;
pub use safety::{safety_check, SafetyVerdict, ShutdownReason};
pub use strategy::{Area, DirectionFilter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("no joint {0}")]
    NoSuchJoint(JointId),
    #[error("joint {0} is not actuated")]
    NotActuated(JointId),
    #[error("joint {0} has no encoder")]
    NotSensed(JointId),
    #[error("joint {0} is not calibrated")]
    NotCalibrated(JointId),
    #[error("action needs at least one joint")]
    NoJoints,
    #[error("{} {} {}", joint.name, if *upper { "max" } else { "min" }, limit)]
    TargetOutOfRange {
        joint: JointId,
        target: f64,
        limit: f64,
        upper: bool,
    },
    #[error("velocity {velocity} on {joint} outside (0, {max}]")]
    VelocityOutOfRange {
        joint: JointId,
        velocity: f64,
        max: f64,
    },
    #[error("torque {tau} on {joint} outside (0, {max}]")]
    TorqueOutOfRange { joint: JointId, tau: f64, max: f64 },
    #[error("frequency {frequency} Hz too high ({reason}, limit {limit})")]
    FrequencyTooHigh {
        frequency: f64,
        limit: f64,
        reason: &'static str,
    },
    #[error("source and destination are both {0}")]
    SameJoint(JointId),
    #[error("{0}")]
    BadRange(String),
    #[error("area lies outside the range of {0}")]
    AreaOutsideRom(JointId),
    #[error("joint {0} is already driven by another action")]
    JointConflict(JointId),
    #[error("system is shut down")]
    SystemHalted,
    #[error("no such program")]
    NoSuchProgram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Pending,
    Running,
    Done,
    Aborted,
}

impl Status {
    pub fn is_finished(self) -> bool {
        matches!(self, Status::Done | Status::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pending => "pending",
            Status::Running => "running",
            Status::Done => "done",
            Status::Aborted => "aborted",
        }
    }
}

/// Tuning constants of the control loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlParams {
    /// Tracking PD used by moves, vibration, mirroring and jerks. N·m/deg.
    pub kp_move: f64,
    /// N·m·s/deg
    pub kd_move: f64,
    /// Stiffer PD used by lock. N·m/deg.
    pub kp_lock: f64,
    /// N·m·s/deg
    pub kd_lock: f64,
    /// Multiplies move and lock gains on shoulder joints, which carry the
    /// whole arm.
    pub shoulder_gain_scale: f64,
    /// |ω| at or below this is treated as no motion. deg/s.
    pub omega_dead: f64,
    /// Moves complete only below this speed. deg/s.
    pub omega_rest: f64,
    /// Smallest completion band of a move. deg.
    pub epsilon_floor: f64,
    /// Software monitor tolerance beyond the configured range. deg.
    pub safety_margin: f64,
    pub safety_monitor: bool,
    /// Acceleration of move reference profiles. deg/s².
    pub reference_accel: f64,
    /// Acceleration of jerk reference profiles. deg/s².
    pub jerk_accel: f64,
    /// How long a jerk holds its displaced setpoint before release. ms.
    pub jerk_hold_ms: f64,
}

impl ControlParams {
    /// Gain multiplier for `name`.
    pub fn gain_scale(&self, name: JointName) -> f64 {
        match name {
            JointName::Elbow => 1.0,
            JointName::ShoulderAbduction | JointName::ShoulderFlexion => self.shoulder_gain_scale,
        }
    }
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            kp_move: 0.8,
            kd_move: 0.05,
            kp_lock: 2.5,
            kd_lock: 0.08,
            shoulder_gain_scale: 2.5,
            omega_dead: 2.0,
            omega_rest: 1.0,
            epsilon_floor: 0.5,
            safety_margin: 1.0,
            safety_monitor: true,
            reference_accel: 600.0,
            jerk_accel: 10_000.0,
            jerk_hold_ms: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlEvent {
    Jerk {
        time_us: u64,
        joint: JointId,
        displacement: f64,
    },
    Conflict {
        time_us: u64,
        joint: JointId,
    },
    LinkLost {
        time_us: u64,
    },
    Fault {
        time_us: u64,
        joint: JointId,
    },
    Halted {
        time_us: u64,
        reason: ShutdownReason,
    },
}
