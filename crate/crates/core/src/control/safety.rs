//! Software range-of-motion monitor.

use std::fmt;

use crate::model::{ExoskeletonConfig, JointId};
use crate::sim::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShutdownReason {
    RomViolation { joint: JointId, angle: f64 },
    Panic,
}

impl fmt::Display for ShutdownReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShutdownReason::RomViolation { joint, angle } => {
                write!(f, "rom violation on {joint} at {angle:.3}")
            }
            ShutdownReason::Panic => f.write_str("panic"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafetyVerdict {
    Ok,
    Shutdown(ShutdownReason),
}

/// Checks every calibrated joint against its configured range widened by
/// `margin` degrees. The first offending joint (in id order) is reported.
pub fn safety_check(snap: &Snapshot, config: &ExoskeletonConfig, margin: f64) -> SafetyVerdict {
    for jc in config.joints() {
        if !config.is_calibrated(jc.id) {
            continue;
        }
        let Some(state) = snap.joint(jc.id) else {
            continue;
        };
        let a = state.angle;
        if a > jc.rom.max_deg + margin || a < jc.rom.min_deg - margin || !a.is_finite() {
            return SafetyVerdict::Shutdown(ShutdownReason::RomViolation {
                joint: jc.id,
                angle: a,
            });
        }
    }
    SafetyVerdict::Ok
}
