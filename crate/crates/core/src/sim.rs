//! Fixed-timestep joint dynamics standing in for the physical arm and its
//! servos.
//!
//! Each joint is an independent rotational plant
//!
//! ```text
//! I·α = τ_motor + τ_user + τ_disturbance + τ_gravity − b·ω
//! ```
//!
//! integrated with semi-implicit Euler (velocity first, then angle). Angles
//! are in degrees at the API; the damping coefficient is per radian, so the
//! integrator works in radians internally. Mechanical end stops are
//! inelastic: a joint that would leave its hard range is placed on the bound
//! with zero velocity.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{ExoskeletonConfig, JointId, JointKind, JointName, RomLimits};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("no joint {0}")]
    NoSuchJoint(JointId),
    #[error("joint {0} is not actuated and cannot take motor commands")]
    CommandForNonActuatedJoint(JointId),
    #[error("disturbance duration must be positive, got {0} ms")]
    InvalidDuration(f64),
    #[error("new configuration does not describe the same joints")]
    ConfigMismatch,
}

/// Physical parameters of one simulated joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// kg·m²
    pub inertia: f64,
    /// N·m·s/rad
    pub damping: f64,
    /// Peak gravity torque G in N·m; the load is −G·sin(θ). Zero disables it.
    pub gravity: f64,
    /// Whether the hard range is enforced by end stops.
    pub end_stops: bool,
    /// Raw encoder reading minus anatomical angle.
    pub encoder_offset: f64,
}

impl PlantParams {
    pub fn default_for(name: JointName) -> Self {
        let inertia = match name {
            JointName::Elbow => 0.1,
            JointName::ShoulderAbduction | JointName::ShoulderFlexion => 0.25,
        };
        PlantParams {
            inertia,
            damping: 0.05,
            gravity: 0.0,
            end_stops: true,
            encoder_offset: 0.0,
        }
    }
}

/// Synthetic wearer: a saturated PD pulling the joint along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentTrajectory {
    /// (time ms, angle deg), strictly increasing in time. Linear in between,
    /// held constant outside.
    waypoints: Vec<(f64, f64)>,
    /// N·m
    pub strength: f64,
    /// N·m/deg
    pub kp: f64,
    /// N·m·s/deg
    pub kd: f64,
}

impl IntentTrajectory {
    pub const DEFAULT_KP: f64 = 0.35;
    pub const DEFAULT_KD: f64 = 0.02;
    pub const DEFAULT_STRENGTH: f64 = 4.0;

    /// Waypoints are sorted by time; duplicate times keep the later angle.
    pub fn new(mut waypoints: Vec<(f64, f64)>) -> Self {
        waypoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        waypoints.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                earlier.1 = later.1;
                true
            } else {
                false
            }
        });
        IntentTrajectory {
            waypoints,
            strength: Self::DEFAULT_STRENGTH,
            kp: Self::DEFAULT_KP,
            kd: Self::DEFAULT_KD,
        }
    }

    pub fn hold(angle: f64) -> Self {
        Self::new(vec![(0.0, angle)])
    }

    /// Linear ramp between two angles, holding before and after.
    pub fn ramp(from: f64, to: f64, start_ms: f64, duration_ms: f64) -> Self {
        Self::new(vec![(start_ms, from), (start_ms + duration_ms, to)])
    }

    pub fn with_gains(mut self, kp: f64, kd: f64) -> Self {
        self.kp = kp;
        self.kd = kd;
        self
    }

    pub fn with_strength(mut self, strength: f64) -> Self {
        self.strength = strength;
        self
    }

    /// Appends a waypoint after the current last one.
    pub fn then(mut self, t_ms: f64, angle: f64) -> Self {
        self.waypoints.push((t_ms, angle));
        Self::new(self.waypoints)
            .with_gains(self.kp, self.kd)
            .with_strength(self.strength)
    }

    /// Target (angle deg, velocity deg/s) at `t_ms`.
    pub fn target(&self, t_ms: f64) -> (f64, f64) {
        let w = &self.waypoints;
        match w.len() {
            0 => (0.0, 0.0),
            _ if t_ms <= w[0].0 => (w[0].1, 0.0),
            n if t_ms >= w[n - 1].0 => (w[n - 1].1, 0.0),
            _ => {
                let i = w.partition_point(|p| p.0 <= t_ms);
                let (t0, a0) = w[i - 1];
                let (t1, a1) = w[i];
                let slope = (a1 - a0) / (t1 - t0);
                (a0 + slope * (t_ms - t0), slope * 1000.0)
            }
        }
    }

    pub fn torque(&self, t_ms: f64, angle: f64, velocity: f64) -> f64 {
        let (target, target_vel) = self.target(t_ms);
        let raw = self.kp * (target - angle) + self.kd * (target_vel - velocity);
        raw.clamp(-self.strength, self.strength)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueReadings {
    pub motor: f64,
    pub user: f64,
    pub disturbance: f64,
}

/// Sensor view of one joint. Angles are in the calibrated frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub angle: f64,
    pub velocity: f64,
    pub acceleration: f64,
    /// Absent for passive joints.
    pub torques: Option<TorqueReadings>,
    pub load_cell: Option<f64>,
}

impl JointState {
    pub fn motor_torque(&self) -> f64 {
        self.torques.map_or(0.0, |t| t.motor)
    }
}

/// All joint states at one tick boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time_us: u64,
    pub joints: BTreeMap<JointId, JointState>,
}

impl Snapshot {
    pub fn time_ms(&self) -> f64 {
        self.time_us as f64 / 1000.0
    }

    pub fn joint(&self, id: JointId) -> Option<&JointState> {
        self.joints.get(&id)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct JointSim {
    kind: JointKind,
    max_torque: f64,
    max_speed: f64,
    hard: RomLimits,
    load_cell: bool,
    params: PlantParams,
    theta: f64,
    omega: f64,
    alpha: f64,
    motor: f64,
    user: f64,
    disturbance: f64,
    intent: Option<IntentTrajectory>,
    /// (torque, remaining µs)
    pulses: Vec<(f64, u64)>,
}

/// The simulated exoskeleton and wearer.
#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    config: ExoskeletonConfig,
    joints: BTreeMap<JointId, JointSim>,
    time_us: u64,
    dt_us: u64,
}

impl SimWorld {
    pub fn new(config: ExoskeletonConfig) -> Self {
        let joints = config
            .joints()
            .map(|jc| {
                let hard = jc.hard_range();
                let sim = JointSim {
                    kind: jc.kind,
                    max_torque: jc.motor.map_or(0.0, |m| m.max_torque),
                    max_speed: jc.motor.map_or(f64::INFINITY, |m| m.max_speed),
                    hard,
                    load_cell: jc.has_load_cell,
                    params: PlantParams::default_for(jc.id.name),
                    theta: hard.clamp(0.0),
                    omega: 0.0,
                    alpha: 0.0,
                    motor: 0.0,
                    user: 0.0,
                    disturbance: 0.0,
                    intent: None,
                    pulses: Vec::new(),
                };
                (jc.id, sim)
            })
            .collect();
        SimWorld {
            dt_us: config.control_period_us(),
            config,
            joints,
            time_us: 0,
        }
    }

    pub fn config(&self) -> &ExoskeletonConfig {
        &self.config
    }

    /// Swaps in a new configuration version (typically new calibration).
    pub fn set_config(&mut self, config: ExoskeletonConfig) -> Result<(), SimError> {
        let same = config.joint_ids().eq(self.config.joint_ids())
            && config.control_rate_hz() == self.config.control_rate_hz();
        if !same {
            return Err(SimError::ConfigMismatch);
        }
        for jc in config.joints() {
            let js = self.joints.get_mut(&jc.id).expect("same joint set");
            js.hard = jc.hard_range();
        }
        self.config = config;
        Ok(())
    }

    pub fn time_us(&self) -> u64 {
        self.time_us
    }

    pub fn time_ms(&self) -> f64 {
        self.time_us as f64 / 1000.0
    }

    pub fn dt_us(&self) -> u64 {
        self.dt_us
    }

    fn joint_mut(&mut self, id: JointId) -> Result<&mut JointSim, SimError> {
        self.joints.get_mut(&id).ok_or(SimError::NoSuchJoint(id))
    }

    pub fn params(&self, id: JointId) -> Result<PlantParams, SimError> {
        self.joints
            .get(&id)
            .map(|j| j.params)
            .ok_or(SimError::NoSuchJoint(id))
    }

    pub fn set_params(&mut self, id: JointId, params: PlantParams) -> Result<(), SimError> {
        self.joint_mut(id)?.params = params;
        Ok(())
    }

    /// Places a joint at an anatomical angle, at rest. Test and demo setup.
    pub fn set_angle(&mut self, id: JointId, angle: f64) -> Result<(), SimError> {
        let js = self.joint_mut(id)?;
        js.theta = if js.params.end_stops {
            js.hard.clamp(angle)
        } else {
            angle
        };
        js.omega = 0.0;
        js.alpha = 0.0;
        Ok(())
    }

    /// Raw encoder reading of a joint.
    pub fn raw_angle(&self, id: JointId) -> Result<f64, SimError> {
        let js = self.joints.get(&id).ok_or(SimError::NoSuchJoint(id))?;
        Ok(js.theta + js.params.encoder_offset)
    }

    pub fn set_intent(&mut self, id: JointId, traj: IntentTrajectory) -> Result<(), SimError> {
        self.joint_mut(id)?.intent = Some(traj);
        Ok(())
    }

    pub fn clear_intent(&mut self, id: JointId) -> Result<(), SimError> {
        self.joint_mut(id)?.intent = None;
        Ok(())
    }

    /// Adds `torque` for the next `duration_ms` of simulated time. Pulses sum.
    pub fn inject_disturbance(
        &mut self,
        id: JointId,
        torque: f64,
        duration_ms: f64,
    ) -> Result<(), SimError> {
        if !(duration_ms > 0.0) || !duration_ms.is_finite() {
            return Err(SimError::InvalidDuration(duration_ms));
        }
        let us = (duration_ms * 1000.0).round() as u64;
        self.joint_mut(id)?.pulses.push((torque, us));
        Ok(())
    }

    pub fn read_state(&self, id: JointId) -> Result<JointState, SimError> {
        let js = self.joints.get(&id).ok_or(SimError::NoSuchJoint(id))?;
        let raw = js.theta + js.params.encoder_offset;
        let torques = js.kind.is_sensed().then_some(TorqueReadings {
            motor: js.motor,
            user: js.user,
            disturbance: js.disturbance,
        });
        let load_cell = js.load_cell.then(|| {
            js.motor
                - js.params.inertia * js.alpha.to_radians()
                - js.params.damping * js.omega.to_radians()
        });
        Ok(JointState {
            angle: self.config.to_absolute(id, raw),
            velocity: js.omega,
            acceleration: js.alpha,
            torques,
            load_cell,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            time_us: self.time_us,
            joints: self
                .joints
                .keys()
                .map(|&id| (id, self.read_state(id).expect("known joint")))
                .collect(),
        }
    }

    /// Advances one control period. Commands are motor torques in N·m and are
    /// clamped to the motor's limit; joints without a command get zero.
    pub fn step<I>(&mut self, commands: I) -> Result<(), SimError>
    where
        I: IntoIterator<Item = (JointId, f64)>,
    {
        let mut torques: BTreeMap<JointId, f64> = BTreeMap::new();
        for (id, tau) in commands {
            let js = self.joints.get(&id).ok_or(SimError::NoSuchJoint(id))?;
            if js.kind != JointKind::Actuated {
                return Err(SimError::CommandForNonActuatedJoint(id));
            }
            *torques.entry(id).or_insert(0.0) += tau;
        }

        let dt = self.dt_us as f64 * 1e-6;
        let t_ms = self.time_ms();
        for (id, js) in self.joints.iter_mut() {
            let cmd = torques.get(id).copied().unwrap_or(0.0);
            let motor = if cmd.is_finite() {
                cmd.clamp(-js.max_torque, js.max_torque)
            } else {
                0.0
            };
            let user = js
                .intent
                .as_ref()
                .map_or(0.0, |i| i.torque(t_ms, js.theta, js.omega));
            let disturbance: f64 = js.pulses.iter().filter(|p| p.1 > 0).map(|p| p.0).sum();
            let gravity = -js.params.gravity * js.theta.to_radians().sin();
            let p = js.params;

            let alpha_rad = (motor + user + disturbance + gravity
                - p.damping * js.omega.to_radians())
                / p.inertia;
            let mut omega = js.omega + alpha_rad.to_degrees() * dt;
            if js.kind == JointKind::Actuated {
                omega = omega.clamp(-js.max_speed, js.max_speed);
            }
            let mut theta = js.theta + omega * dt;
            if p.end_stops {
                if theta > js.hard.max_deg {
                    theta = js.hard.max_deg;
                    omega = 0.0;
                } else if theta < js.hard.min_deg {
                    theta = js.hard.min_deg;
                    omega = 0.0;
                }
            }

            js.alpha = (omega - js.omega) / dt;
            js.omega = omega;
            js.theta = theta;
            js.motor = motor;
            js.user = user;
            js.disturbance = disturbance;
            for pulse in js.pulses.iter_mut() {
                pulse.1 = pulse.1.saturating_sub(self.dt_us);
            }
            js.pulses.retain(|p| p.1 > 0);
        }
        self.time_us += self.dt_us;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExoskeletonBuilder, JointConfig, MechanicalRestriction, Side};

    const R_ELBOW: JointId = JointId::new(Side::Right, JointName::Elbow);
    const R_ABD: JointId = JointId::new(Side::Right, JointName::ShoulderAbduction);

    fn world_with(jc: JointConfig) -> SimWorld {
        let cfg = ExoskeletonBuilder::new()
            .add_joint(jc)
            .unwrap()
            .build()
            .unwrap()
            .calibrated_at_zero();
        SimWorld::new(cfg)
    }

    fn elbow_world() -> SimWorld {
        world_with(JointConfig::actuated(R_ELBOW))
    }

    #[test]
    fn zero_torque_equilibrium() {
        let mut w = elbow_world();
        w.set_angle(R_ELBOW, 40.0).unwrap();
        let before = w.read_state(R_ELBOW).unwrap();
        for _ in 0..100 {
            w.step([]).unwrap();
        }
        let after = w.read_state(R_ELBOW).unwrap();
        assert_eq!(before.angle, after.angle);
        assert_eq!(after.velocity, 0.0);
        assert_eq!(w.time_us(), 1_000_000);
    }

    #[test]
    fn saturated_motor_parks_on_stop() {
        let mut w = elbow_world();
        for _ in 0..300 {
            w.step([(R_ELBOW, 10.0)]).unwrap();
        }
        let s = w.read_state(R_ELBOW).unwrap();
        assert_eq!(s.angle, 115.0);
        assert_eq!(s.velocity, 0.0);
        // commands above the motor limit are clamped
        w.step([(R_ELBOW, -50.0)]).unwrap();
        assert_eq!(w.read_state(R_ELBOW).unwrap().motor_torque(), -10.0);
    }

    #[test]
    fn restriction_narrows_stops() {
        let mut w = world_with(
            JointConfig::actuated(R_ELBOW).with_restriction(MechanicalRestriction::Deg15),
        );
        assert_eq!(w.read_state(R_ELBOW).unwrap().angle, 15.0);
        for _ in 0..300 {
            w.step([(R_ELBOW, 10.0)]).unwrap();
        }
        assert_eq!(w.read_state(R_ELBOW).unwrap().angle, 100.0);
    }

    #[test]
    fn commands_to_unactuated_joints_rejected() {
        let mut w = world_with(JointConfig::sensing(R_ELBOW));
        assert_eq!(
            w.step([(R_ELBOW, 1.0)]),
            Err(SimError::CommandForNonActuatedJoint(R_ELBOW))
        );
        assert_eq!(w.step([(R_ABD, 1.0)]), Err(SimError::NoSuchJoint(R_ABD)));
    }

    #[test]
    fn disturbance_lasts_its_duration() {
        let mut w = elbow_world();
        w.set_angle(R_ELBOW, 50.0).unwrap();
        w.inject_disturbance(R_ELBOW, 5.0, 2000.0).unwrap();
        let mut active = 0;
        for _ in 0..400 {
            w.step([]).unwrap();
            if w.read_state(R_ELBOW).unwrap().torques.unwrap().disturbance != 0.0 {
                active += 1;
            }
        }
        assert_eq!(active, 200);
        assert!(matches!(
            w.inject_disturbance(R_ELBOW, 1.0, 0.0),
            Err(SimError::InvalidDuration(_))
        ));
    }

    #[test]
    fn overlapping_disturbances_sum() {
        let mut w = elbow_world();
        w.set_angle(R_ELBOW, 50.0).unwrap();
        w.inject_disturbance(R_ELBOW, 1.0, 100.0).unwrap();
        w.inject_disturbance(R_ELBOW, 2.5, 50.0).unwrap();
        w.step([]).unwrap();
        assert_eq!(
            w.read_state(R_ELBOW).unwrap().torques.unwrap().disturbance,
            3.5
        );
        for _ in 0..5 {
            w.step([]).unwrap();
        }
        assert_eq!(
            w.read_state(R_ELBOW).unwrap().torques.unwrap().disturbance,
            1.0
        );
    }

    #[test]
    fn zero_gain_intent_is_silent() {
        let mut w = elbow_world();
        w.set_intent(R_ELBOW, IntentTrajectory::hold(90.0).with_gains(0.0, 0.0))
            .unwrap();
        for _ in 0..50 {
            w.step([]).unwrap();
            assert_eq!(w.read_state(R_ELBOW).unwrap().torques.unwrap().user, 0.0);
        }
        assert_eq!(w.read_state(R_ELBOW).unwrap().angle, 0.0);
    }

    #[test]
    fn intent_beyond_stop_settles_on_stop() {
        let mut w = elbow_world();
        w.set_intent(R_ELBOW, IntentTrajectory::hold(130.0))
            .unwrap();
        for _ in 0..500 {
            w.step([]).unwrap();
        }
        assert_eq!(w.read_state(R_ELBOW).unwrap().angle, 115.0);
    }

    #[test]
    fn intent_target_interpolates() {
        let t = IntentTrajectory::ramp(0.0, 90.0, 1000.0, 3000.0);
        assert_eq!(t.target(0.0), (0.0, 0.0));
        assert_eq!(t.target(2500.0), (45.0, 30.0));
        assert_eq!(t.target(9000.0), (90.0, 0.0));
        let t = t.then(5000.0, 30.0);
        assert_eq!(t.target(4500.0), (60.0, -60.0));
    }

    #[test]
    fn calibration_shifts_readings() {
        let cfg = ExoskeletonBuilder::new()
            .add_joint(JointConfig::actuated(R_ELBOW))
            .unwrap()
            .build()
            .unwrap();
        let mut w = SimWorld::new(cfg.clone());
        let mut p = w.params(R_ELBOW).unwrap();
        p.encoder_offset = 37.5;
        w.set_params(R_ELBOW, p).unwrap();
        assert_eq!(w.read_state(R_ELBOW).unwrap().angle, 37.5);
        let raw = w.raw_angle(R_ELBOW).unwrap();
        w.set_config(cfg.calibrate_zero(R_ELBOW, raw).unwrap())
            .unwrap();
        let s = w.read_state(R_ELBOW).unwrap();
        assert_eq!((s.angle, s.velocity), (0.0, 0.0));
    }

    #[test]
    fn passive_joint_reports_angle_only() {
        let mut w = world_with(JointConfig::passive(R_ELBOW));
        w.set_intent(R_ELBOW, IntentTrajectory::hold(30.0)).unwrap();
        for _ in 0..200 {
            w.step([]).unwrap();
        }
        let s = w.read_state(R_ELBOW).unwrap();
        assert!(s.torques.is_none());
        assert!(s.load_cell.is_none());
        assert!(
            (s.angle - 30.0).abs() < 1.0,
            "passive joint follows the wearer"
        );
    }

    #[test]
    fn load_cell_reads_stall_torque() {
        // Static equilibrium: a 2 N·m motor held still by the wearer transmits
        // all of it through the cuff.
        let mut w = world_with(JointConfig::actuated(R_ELBOW).with_load_cell());
        w.set_angle(R_ELBOW, 60.0).unwrap();
        w.set_intent(R_ELBOW, IntentTrajectory::hold(60.0)).unwrap();
        for _ in 0..400 {
            w.step([(R_ELBOW, 2.0)]).unwrap();
        }
        let s = w.read_state(R_ELBOW).unwrap();
        assert!(s.velocity.abs() < 1e-6);
        assert!((s.load_cell.unwrap() - 2.0).abs() < 1e-3, "{s:?}");

        // against the end stop
        let mut w = world_with(JointConfig::actuated(R_ELBOW).with_load_cell());
        w.set_angle(R_ELBOW, 115.0).unwrap();
        w.step([(R_ELBOW, 2.0)]).unwrap();
        w.step([(R_ELBOW, 2.0)]).unwrap();
        assert_eq!(w.read_state(R_ELBOW).unwrap().load_cell, Some(2.0));
    }

    #[test]
    fn disabled_end_stops_allow_overtravel() {
        let mut w = elbow_world();
        let mut p = w.params(R_ELBOW).unwrap();
        p.end_stops = false;
        w.set_params(R_ELBOW, p).unwrap();
        w.set_intent(R_ELBOW, IntentTrajectory::hold(130.0))
            .unwrap();
        for _ in 0..500 {
            w.step([]).unwrap();
        }
        assert!(w.read_state(R_ELBOW).unwrap().angle > 125.0);
    }
}
