//! A simulated exoskeleton and its controller advanced together.

use crate::control::{ControlParams, Controller, MotorCommandSet};
use crate::model::{ExoskeletonConfig, JointId, ModelError};
use crate::sim::{SimWorld, Snapshot};

#[derive(Debug, Clone)]
pub struct Exoskeleton {
    pub world: SimWorld,
    pub controller: Controller,
    last: Option<MotorCommandSet>,
}

impl Exoskeleton {
    pub fn new(config: ExoskeletonConfig, seed: u64) -> Self {
        Self::with_params(config, ControlParams::default(), seed)
    }

    pub fn with_params(config: ExoskeletonConfig, params: ControlParams, seed: u64) -> Self {
        Exoskeleton {
            world: SimWorld::new(config.clone()),
            controller: Controller::with_params(config, params, seed),
            last: None,
        }
    }

    pub fn config(&self) -> &ExoskeletonConfig {
        self.world.config()
    }

    /// One control period: sense, decide, actuate. Returns the snapshot the
    /// controller saw.
    pub fn step(&mut self) -> Snapshot {
        let snap = self.world.snapshot();
        let cmds = self.controller.tick(&snap);
        self.world
            .step(cmds.torques())
            .expect("controller only commands actuated joints of this config");
        self.last = Some(cmds);
        snap
    }

    /// Commands applied during the most recent [`Exoskeleton::step`].
    pub fn last_commands(&self) -> Option<&MotorCommandSet> {
        self.last.as_ref()
    }

    pub fn run_for(&mut self, ms: f64) {
        let ticks = (ms * 1000.0 / self.world.dt_us() as f64).round() as u64;
        for _ in 0..ticks {
            self.step();
        }
    }

    /// Declares the joint's current raw reading to be its zero.
    pub fn calibrate(&mut self, joint: JointId) -> Result<(), ModelError> {
        let raw = self
            .world
            .raw_angle(joint)
            .map_err(|_| ModelError::NoSuchJoint(joint))?;
        let config = self.world.config().calibrate_zero(joint, raw)?;
        self.world
            .set_config(config.clone())
            .expect("calibration keeps the joint set");
        self.controller.set_config(config);
        Ok(())
    }
}
