//! Actions: basic functions and augmentation strategies.
//!
//! Constructors validate against the configuration the action will run
//! under. Anything that depends on the joint's live state (current angle for
//! relative targets, lock setpoints, vibration centers) is captured when the
//! action activates on its first tick.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use super::strategy::{self, Area, DirectionFilter, TrapezoidProfile};
use super::{ControlError, ControlParams, Status};
use crate::model::{ExoskeletonConfig, JointId, JointKind, JointName, Side};
use crate::sim::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    MoveTo,
    Lock,
    Gesture,
    Vibrate,
    Mirror,
    Amplify,
    Resist,
    FilterVelocity,
    AddJerks,
    ConstrainTo,
    GuideTowards,
    GuideAway,
    Stop,
    Link,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::MoveTo => "moveto",
            ActionKind::Lock => "lock",
            ActionKind::Gesture => "gesture",
            ActionKind::Vibrate => "vibrate",
            ActionKind::Mirror => "mirror",
            ActionKind::Amplify => "amplify",
            ActionKind::Resist => "resist",
            ActionKind::FilterVelocity => "filtervel",
            ActionKind::AddJerks => "jerks",
            ActionKind::ConstrainTo => "constrain",
            ActionKind::GuideTowards => "guideto",
            ActionKind::GuideAway => "guideaway",
            ActionKind::Stop => "stop",
            ActionKind::Link => "link",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Absolute(f64),
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effort {
    Resist,
    Amplify,
}

/// Choreography of the waving gesture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveParams {
    /// Elbow angle the wave oscillates around.
    pub raise_deg: f64,
    pub amplitude_deg: f64,
    pub cycles: u32,
    pub velocity: f64,
    pub epsilon: f64,
}

impl Default for WaveParams {
    fn default() -> Self {
        WaveParams {
            raise_deg: 80.0,
            amplitude_deg: 20.0,
            cycles: 3,
            velocity: 120.0,
            epsilon: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JerkParams {
    pub disp_min: f64,
    pub disp_max: f64,
    pub interval_min_ms: f64,
    pub interval_max_ms: f64,
    pub count: u32,
}

/// One remote-source → local-destination pair of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPair {
    pub source: JointId,
    pub destination: JointId,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpec {
    MoveTo {
        target: Target,
        epsilon: f64,
        velocity: f64,
    },
    Lock,
    Wave(WaveParams),
    Vibrate {
        amplitude: f64,
        frequency: f64,
        duration_ms: f64,
    },
    Mirror {
        source: JointId,
        factor: f64,
    },
    Effort {
        effort: Effort,
        tau: f64,
        filter: DirectionFilter,
    },
    FilterVelocity {
        v_min: f64,
        v_max: f64,
        tau_assist: f64,
        tau_resist: f64,
    },
    AddJerks(JerkParams),
    ConstrainTo(Area),
    GuideTowards {
        area: Area,
        tau_assist: f64,
        tau_resist: f64,
    },
    GuideAway {
        area: Area,
        tau_assist: f64,
        tau_resist: f64,
    },
    /// Stops whatever holds the target joints, then finishes.
    Stop,
    /// Mirror driven by samples of a remote exoskeleton.
    Link {
        pairs: Vec<LinkPair>,
        grace_ms: f64,
    },
}

/// A unit of behavior over a set of joints.
#[derive(Debug, Clone)]
pub struct Action {
    joints: Vec<JointId>,
    spec: ActionSpec,
    status: Status,
    runtime: Option<Runtime>,
}

fn require_joint(cfg: &ExoskeletonConfig, j: JointId) -> Result<JointKind, ControlError> {
    cfg.joint(j)
        .map(|jc| jc.kind)
        .map_err(|_| ControlError::NoSuchJoint(j))
}

fn require_actuated(cfg: &ExoskeletonConfig, j: JointId) -> Result<(), ControlError> {
    if require_joint(cfg, j)? != JointKind::Actuated {
        return Err(ControlError::NotActuated(j));
    }
    if !cfg.is_calibrated(j) {
        return Err(ControlError::NotCalibrated(j));
    }
    Ok(())
}

fn require_joints(
    cfg: &ExoskeletonConfig,
    joints: &[JointId],
) -> Result<Vec<JointId>, ControlError> {
    if joints.is_empty() {
        return Err(ControlError::NoJoints);
    }
    let mut out: Vec<JointId> = Vec::with_capacity(joints.len());
    for &j in joints {
        require_actuated(cfg, j)?;
        if !out.contains(&j) {
            out.push(j);
        }
    }
    Ok(out)
}

fn max_torque(cfg: &ExoskeletonConfig, j: JointId) -> f64 {
    cfg.joint(j)
        .ok()
        .and_then(|jc| jc.motor)
        .map_or(0.0, |m| m.max_torque)
}

fn max_speed(cfg: &ExoskeletonConfig, j: JointId) -> f64 {
    cfg.joint(j)
        .ok()
        .and_then(|jc| jc.motor)
        .map_or(0.0, |m| m.max_speed)
}

fn require_torque(cfg: &ExoskeletonConfig, j: JointId, tau: f64) -> Result<(), ControlError> {
    let max = max_torque(cfg, j);
    if tau > 0.0 && tau <= max {
        Ok(())
    } else {
        Err(ControlError::TorqueOutOfRange { joint: j, tau, max })
    }
}

fn require_area(cfg: &ExoskeletonConfig, j: JointId, area: Area) -> Result<(), ControlError> {
    let hard = cfg
        .joint(j)
        .map_err(|_| ControlError::NoSuchJoint(j))?
        .hard_range();
    let ok = area.epsilon >= 0.0
        && area.center.is_finite()
        && area.epsilon.is_finite()
        && area.lo() <= hard.max_deg
        && area.hi() >= hard.min_deg;
    if ok {
        Ok(())
    } else {
        Err(ControlError::AreaOutsideRom(j))
    }
}

fn bad_range(what: impl Into<String>) -> ControlError {
    ControlError::BadRange(what.into())
}

impl Action {
    fn new(joints: Vec<JointId>, spec: ActionSpec) -> Self {
        Action {
            joints,
            spec,
            status: Status::Pending,
            runtime: None,
        }
    }

    pub fn move_to(
        cfg: &ExoskeletonConfig,
        joints: &[JointId],
        target: Target,
        epsilon: f64,
        velocity: f64,
    ) -> Result<Self, ControlError> {
        let joints = require_joints(cfg, joints)?;
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(bad_range(format!("epsilon {epsilon} must be >= 0")));
        }
        for &j in &joints {
            let vmax = max_speed(cfg, j);
            if !(velocity > 0.0 && velocity <= vmax) {
                return Err(ControlError::VelocityOutOfRange {
                    joint: j,
                    velocity,
                    max: vmax,
                });
            }
            match target {
                Target::Absolute(a) => {
                    let hard = cfg.joint(j).expect("validated").hard_range();
                    if !a.is_finite() || a > hard.max_deg {
                        return Err(ControlError::TargetOutOfRange {
                            joint: j,
                            target: a,
                            limit: hard.max_deg,
                            upper: true,
                        });
                    }
                    if a < hard.min_deg {
                        return Err(ControlError::TargetOutOfRange {
                            joint: j,
                            target: a,
                            limit: hard.min_deg,
                            upper: false,
                        });
                    }
                }
                Target::Relative(d) if !d.is_finite() => {
                    return Err(bad_range(format!("relative target {d}")))
                }
                Target::Relative(_) => {}
            }
        }
        Ok(Self::new(
            joints,
            ActionSpec::MoveTo {
                target,
                epsilon,
                velocity,
            },
        ))
    }

    pub fn lock(cfg: &ExoskeletonConfig, joints: &[JointId]) -> Result<Self, ControlError> {
        Ok(Self::new(require_joints(cfg, joints)?, ActionSpec::Lock))
    }

    /// Waving gesture with the elbow of `side`.
    pub fn wave(
        cfg: &ExoskeletonConfig,
        side: Side,
        params: WaveParams,
    ) -> Result<Self, ControlError> {
        let elbow = JointId::new(side, JointName::Elbow);
        match cfg.joint(elbow).map(|jc| jc.kind) {
            Ok(JointKind::Actuated) => {}
            _ => return Err(ControlError::NotActuated(elbow)),
        }
        require_actuated(cfg, elbow)?;
        if params.cycles == 0 || !(params.amplitude_deg > 0.0) {
            return Err(bad_range(
                "wave needs at least one cycle and a positive amplitude",
            ));
        }
        // the raise target is validated like any absolute move
        Self::move_to(
            cfg,
            &[elbow],
            Target::Absolute(params.raise_deg),
            params.epsilon,
            params.velocity,
        )?;
        Ok(Self::new(vec![elbow], ActionSpec::Wave(params)))
    }

    pub fn vibrate(
        cfg: &ExoskeletonConfig,
        joints: &[JointId],
        amplitude: f64,
        frequency: f64,
        duration_ms: f64,
    ) -> Result<Self, ControlError> {
        let joints = require_joints(cfg, joints)?;
        if !(amplitude >= 0.0) || !(duration_ms > 0.0) || !(frequency > 0.0) {
            return Err(bad_range(
                "vibration needs amplitude >= 0, frequency > 0 and duration > 0",
            ));
        }
        let limit = f64::from(cfg.control_rate_hz()) / 10.0;
        if frequency > limit {
            return Err(ControlError::FrequencyTooHigh {
                frequency,
                limit,
                reason: "above a tenth of the control rate",
            });
        }
        for &j in &joints {
            // a square wave swings 2·amplitude every half period
            if 4.0 * amplitude * frequency > max_speed(cfg, j) {
                return Err(ControlError::FrequencyTooHigh {
                    frequency,
                    limit: max_speed(cfg, j) / (4.0 * amplitude),
                    reason: "amplitude cannot be tracked within the motor's speed",
                });
            }
        }
        Ok(Self::new(
            joints,
            ActionSpec::Vibrate {
                amplitude,
                frequency,
                duration_ms,
            },
        ))
    }

    pub fn mirror(
        cfg: &ExoskeletonConfig,
        source: JointId,
        destination: JointId,
        factor: f64,
    ) -> Result<Self, ControlError> {
        if source == destination {
            return Err(ControlError::SameJoint(source));
        }
        if !require_joint(cfg, source)?.is_sensed() {
            return Err(ControlError::NotSensed(source));
        }
        if !cfg.is_calibrated(source) {
            return Err(ControlError::NotCalibrated(source));
        }
        require_actuated(cfg, destination)?;
        if factor == 0.0 || !factor.is_finite() {
            return Err(bad_range(format!("mirror factor {factor}")));
        }
        Ok(Self::new(
            vec![destination],
            ActionSpec::Mirror { source, factor },
        ))
    }

    fn effort(
        cfg: &ExoskeletonConfig,
        joints: &[JointId],
        effort: Effort,
        tau: f64,
        filter: DirectionFilter,
    ) -> Result<Self, ControlError> {
        let joints = require_joints(cfg, joints)?;
        for &j in &joints {
            require_torque(cfg, j, tau)?;
        }
        Ok(Self::new(
            joints,
            ActionSpec::Effort {
                effort,
                tau,
                filter,
            },
        ))
    }

    pub fn resist(
        cfg: &ExoskeletonConfig,
        joints: &[JointId],
        tau: f64,
        filter: DirectionFilter,
    ) -> Result<Self, ControlError> {
        Self::effort(cfg, joints, Effort::Resist, tau, filter)
    }

    pub fn amplify(
        cfg: &ExoskeletonConfig,
        joints: &[JointId],
        tau: f64,
        filter: DirectionFilter,
    ) -> Result<Self, ControlError> {
        Self::effort(cfg, joints, Effort::Amplify, tau, filter)
    }

    pub fn filter_velocity(
        cfg: &ExoskeletonConfig,
        joint: JointId,
        v_min: f64,
        v_max: f64,
        tau_assist: f64,
        tau_resist: f64,
    ) -> Result<Self, ControlError> {
        require_actuated(cfg, joint)?;
        if !(v_min >= 0.0 && v_min < v_max) || !v_max.is_finite() {
            return Err(bad_range(format!("velocity range [{v_min}, {v_max}]")));
        }
        require_torque(cfg, joint, tau_assist)?;
        require_torque(cfg, joint, tau_resist)?;
        Ok(Self::new(
            vec![joint],
            ActionSpec::FilterVelocity {
                v_min,
                v_max,
                tau_assist,
                tau_resist,
            },
        ))
    }

    pub fn add_jerks(
        cfg: &ExoskeletonConfig,
        joint: JointId,
        params: JerkParams,
    ) -> Result<Self, ControlError> {
        require_actuated(cfg, joint)?;
        let p = params;
        if !(p.disp_min > 0.0 && p.disp_min <= p.disp_max && p.disp_max.is_finite()) {
            return Err(bad_range(format!(
                "displacement range [{}, {}]",
                p.disp_min, p.disp_max
            )));
        }
        if !(p.interval_min_ms >= 0.0
            && p.interval_min_ms <= p.interval_max_ms
            && p.interval_max_ms.is_finite())
        {
            return Err(bad_range(format!(
                "interval range [{}, {}]",
                p.interval_min_ms, p.interval_max_ms
            )));
        }
        if p.count == 0 {
            return Err(bad_range("jerk count must be positive"));
        }
        Ok(Self::new(vec![joint], ActionSpec::AddJerks(params)))
    }

    pub fn constrain_to(
        cfg: &ExoskeletonConfig,
        joint: JointId,
        theta: f64,
        epsilon: f64,
    ) -> Result<Self, ControlError> {
        require_actuated(cfg, joint)?;
        let area = Area::new(theta, epsilon);
        require_area(cfg, joint, area)?;
        Ok(Self::new(vec![joint], ActionSpec::ConstrainTo(area)))
    }

    pub fn guide_towards(
        cfg: &ExoskeletonConfig,
        joint: JointId,
        theta: f64,
        epsilon: f64,
        tau_assist: f64,
        tau_resist: f64,
    ) -> Result<Self, ControlError> {
        require_actuated(cfg, joint)?;
        let area = Area::new(theta, epsilon);
        require_area(cfg, joint, area)?;
        require_torque(cfg, joint, tau_assist)?;
        require_torque(cfg, joint, tau_resist)?;
        Ok(Self::new(
            vec![joint],
            ActionSpec::GuideTowards {
                area,
                tau_assist,
                tau_resist,
            },
        ))
    }

    pub fn guide_away(
        cfg: &ExoskeletonConfig,
        joint: JointId,
        theta: f64,
        epsilon: f64,
        tau_assist: f64,
        tau_resist: f64,
    ) -> Result<Self, ControlError> {
        require_actuated(cfg, joint)?;
        let area = Area::new(theta, epsilon);
        require_area(cfg, joint, area)?;
        require_torque(cfg, joint, tau_assist)?;
        require_torque(cfg, joint, tau_resist)?;
        Ok(Self::new(
            vec![joint],
            ActionSpec::GuideAway {
                area,
                tau_assist,
                tau_resist,
            },
        ))
    }

    pub fn stop(cfg: &ExoskeletonConfig, joints: &[JointId]) -> Result<Self, ControlError> {
        if joints.is_empty() {
            return Err(ControlError::NoJoints);
        }
        for &j in joints {
            require_joint(cfg, j)?;
        }
        Ok(Self::new(joints.to_vec(), ActionSpec::Stop))
    }

    /// Remote mirror; samples arrive through `Controller::feed_remote`.
    pub fn link(
        cfg: &ExoskeletonConfig,
        pairs: &[LinkPair],
        grace_ms: f64,
    ) -> Result<Self, ControlError> {
        if pairs.is_empty() {
            return Err(ControlError::NoJoints);
        }
        let mut dsts = Vec::new();
        for p in pairs {
            require_actuated(cfg, p.destination)?;
            if dsts.contains(&p.destination) {
                return Err(bad_range(format!(
                    "destination {} mapped twice",
                    p.destination
                )));
            }
            if p.factor == 0.0 || !p.factor.is_finite() {
                return Err(bad_range(format!("link factor {}", p.factor)));
            }
            dsts.push(p.destination);
        }
        if !(grace_ms > 0.0) {
            return Err(bad_range("grace period must be positive"));
        }
        Ok(Self::new(
            dsts,
            ActionSpec::Link {
                pairs: pairs.to_vec(),
                grace_ms,
            },
        ))
    }

    pub fn kind(&self) -> ActionKind {
        match &self.spec {
            ActionSpec::MoveTo { .. } => ActionKind::MoveTo,
            ActionSpec::Lock => ActionKind::Lock,
            ActionSpec::Wave(_) => ActionKind::Gesture,
            ActionSpec::Vibrate { .. } => ActionKind::Vibrate,
            ActionSpec::Mirror { .. } => ActionKind::Mirror,
            ActionSpec::Effort {
                effort: Effort::Resist,
                ..
            } => ActionKind::Resist,
            ActionSpec::Effort {
                effort: Effort::Amplify,
                ..
            } => ActionKind::Amplify,
            ActionSpec::FilterVelocity { .. } => ActionKind::FilterVelocity,
            ActionSpec::AddJerks(_) => ActionKind::AddJerks,
            ActionSpec::ConstrainTo(_) => ActionKind::ConstrainTo,
            ActionSpec::GuideTowards { .. } => ActionKind::GuideTowards,
            ActionSpec::GuideAway { .. } => ActionKind::GuideAway,
            ActionSpec::Stop => ActionKind::Stop,
            ActionSpec::Link { .. } => ActionKind::Link,
        }
    }

    pub fn joints(&self) -> &[JointId] {
        &self.joints
    }

    pub fn spec(&self) -> &ActionSpec {
        &self.spec
    }

    pub fn status(&self) -> Status {
        self.status
    }

    /// Joints this action drives (and therefore claims). Stop claims nothing.
    pub(crate) fn claims(&self) -> &[JointId] {
        if matches!(self.spec, ActionSpec::Stop) {
            &[]
        } else {
            &self.joints
        }
    }

    pub(crate) fn set_status(&mut self, status: Status) {
        self.status = status;
        if status.is_finished() {
            self.runtime = None;
        }
    }
}

/// Output of one joint for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointOutput {
    pub torque: f64,
    pub setpoint: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RemoteSample {
    pub angle: f64,
    pub received_us: u64,
}

/// What a leaf needs from the controller during a tick.
pub(crate) struct LeafCtx<'a> {
    pub snap: &'a Snapshot,
    pub cfg: &'a ExoskeletonConfig,
    pub params: &'a ControlParams,
    pub rng: &'a mut rand_chacha::ChaCha8Rng,
    pub remote: Option<&'a BTreeMap<JointId, RemoteSample>>,
    pub dt: f64,
    pub events: &'a mut Vec<super::ControlEvent>,
}

impl LeafCtx<'_> {
    fn angle(&self, j: JointId) -> f64 {
        self.snap.joint(j).map_or(0.0, |s| s.angle)
    }

    fn omega(&self, j: JointId) -> f64 {
        self.snap.joint(j).map_or(0.0, |s| s.velocity)
    }

    /// PD toward `reference` with gains scaled for the joint.
    fn pd(&self, j: JointId, kp: f64, kd: f64, reference: (f64, f64)) -> f64 {
        let s = self.params.gain_scale(j.name);
        strategy::pd_torque(kp * s, kd * s, reference, self.angle(j), self.omega(j))
    }

    fn hard_clamp(&self, j: JointId, angle: f64) -> f64 {
        self.cfg
            .joint(j)
            .map_or(angle, |jc| jc.hard_range().clamp(angle))
    }
}

#[derive(Debug, Clone)]
struct Track {
    joint: JointId,
    profile: TrapezoidProfile,
    target: f64,
}

#[derive(Debug, Clone)]
struct Move {
    tracks: Vec<Track>,
    start_us: u64,
    tolerance: f64,
}

impl Move {
    fn start(
        ctx: &LeafCtx,
        joints: &[JointId],
        target: Target,
        epsilon: f64,
        velocity: f64,
        accel: f64,
    ) -> Self {
        let tracks = joints
            .iter()
            .map(|&joint| {
                let from = ctx.angle(joint);
                let goal = match target {
                    Target::Absolute(a) => a,
                    Target::Relative(d) => from + d,
                };
                let goal = ctx.hard_clamp(joint, goal);
                Track {
                    joint,
                    profile: TrapezoidProfile::new(from, goal, velocity, accel),
                    target: goal,
                }
            })
            .collect();
        Move {
            tracks,
            start_us: ctx.snap.time_us,
            tolerance: epsilon.max(ctx.params.epsilon_floor),
        }
    }

    fn elapsed(&self, ctx: &LeafCtx) -> f64 {
        ctx.snap.time_us.saturating_sub(self.start_us) as f64 * 1e-6
    }

    fn done(&self, ctx: &LeafCtx) -> bool {
        let t = self.elapsed(ctx);
        self.tracks.iter().all(|tr| {
            t >= tr.profile.duration()
                && (ctx.angle(tr.joint) - tr.target).abs() <= self.tolerance
                && ctx.omega(tr.joint).abs() < ctx.params.omega_rest
        })
    }

    fn output(&self, ctx: &LeafCtx, kp: f64, kd: f64, out: &mut Vec<(JointId, JointOutput)>) {
        // reference for the end of the coming period
        let t = self.elapsed(ctx) + ctx.dt;
        for tr in &self.tracks {
            let reference = tr.profile.sample(t);
            let torque = ctx.pd(tr.joint, kp, kd, reference);
            out.push((
                tr.joint,
                JointOutput {
                    torque,
                    setpoint: Some(reference.0),
                },
            ));
        }
    }
}

#[derive(Debug, Clone)]
enum JerkPhase {
    Waiting { until_us: u64 },
    Jerking { motion: Move, release_us: u64 },
}

#[derive(Debug, Clone)]
enum Runtime {
    Move(Move),
    Hold(Vec<(JointId, f64)>),
    Wave {
        segments: Vec<Target>,
        index: usize,
        current: Move,
    },
    Vibrate {
        centers: Vec<(JointId, f64)>,
        start_us: u64,
    },
    Mirror {
        previous: Option<f64>,
    },
    Stateless,
    Jerks {
        phase: JerkPhase,
        done: u32,
    },
    Link {
        started_us: u64,
        previous: BTreeMap<JointId, f64>,
    },
}

fn draw(rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round().max(0.0) as u64
}

impl Action {
    /// First tick: capture live state. Returns an error to abort.
    pub(crate) fn activate(&mut self, ctx: &mut LeafCtx) {
        let p = ctx.params;
        let runtime = match &self.spec {
            ActionSpec::MoveTo {
                target,
                epsilon,
                velocity,
            } => Runtime::Move(Move::start(
                ctx,
                &self.joints,
                *target,
                *epsilon,
                *velocity,
                p.reference_accel,
            )),
            ActionSpec::Lock => {
                Runtime::Hold(self.joints.iter().map(|&j| (j, ctx.angle(j))).collect())
            }
            ActionSpec::Wave(w) => {
                let rest = ctx.angle(self.joints[0]);
                let mut segments = vec![
                    Target::Absolute(w.raise_deg),
                    Target::Relative(-w.amplitude_deg),
                ];
                for i in 0..(2 * w.cycles - 1) {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    segments.push(Target::Relative(sign * 2.0 * w.amplitude_deg));
                }
                segments.push(Target::Absolute(rest));
                let current = Move::start(
                    ctx,
                    &self.joints,
                    segments[0],
                    w.epsilon,
                    w.velocity,
                    p.reference_accel,
                );
                Runtime::Wave {
                    segments,
                    index: 0,
                    current,
                }
            }
            ActionSpec::Vibrate { .. } => Runtime::Vibrate {
                centers: self.joints.iter().map(|&j| (j, ctx.angle(j))).collect(),
                start_us: ctx.snap.time_us,
            },
            ActionSpec::Mirror { .. } => Runtime::Mirror { previous: None },
            ActionSpec::AddJerks(jp) => Runtime::Jerks {
                phase: JerkPhase::Waiting {
                    until_us: ctx.snap.time_us
                        + ms_to_us(draw(ctx.rng, jp.interval_min_ms, jp.interval_max_ms)),
                },
                done: 0,
            },
            ActionSpec::Link { .. } => Runtime::Link {
                started_us: ctx.snap.time_us,
                previous: BTreeMap::new(),
            },
            _ => Runtime::Stateless,
        };
        self.runtime = Some(runtime);
        self.status = Status::Running;
    }

    /// One tick of a running action. Pushes joint outputs and returns the new
    /// status. Finished actions push nothing.
    pub(crate) fn step(
        &mut self,
        ctx: &mut LeafCtx,
        out: &mut Vec<(JointId, JointOutput)>,
    ) -> Status {
        let p = *ctx.params;
        let Some(runtime) = self.runtime.as_mut() else {
            return self.status;
        };
        let joints = &self.joints;
        let per_joint = |out: &mut Vec<(JointId, JointOutput)>, f: &dyn Fn(JointId) -> f64| {
            for &j in joints {
                out.push((
                    j,
                    JointOutput {
                        torque: f(j),
                        setpoint: None,
                    },
                ));
            }
        };
        let next = match (&self.spec, runtime) {
            (ActionSpec::MoveTo { .. }, Runtime::Move(m)) => {
                if m.done(ctx) {
                    Status::Done
                } else {
                    m.output(ctx, p.kp_move, p.kd_move, out);
                    Status::Running
                }
            }
            (ActionSpec::Lock, Runtime::Hold(points)) => {
                for &(j, sp) in points.iter() {
                    let torque = ctx.pd(j, p.kp_lock, p.kd_lock, (sp, 0.0));
                    out.push((
                        j,
                        JointOutput {
                            torque,
                            setpoint: Some(sp),
                        },
                    ));
                }
                Status::Running
            }
            (
                ActionSpec::Wave(w),
                Runtime::Wave {
                    segments,
                    index,
                    current,
                },
            ) => {
                while current.done(ctx) && *index + 1 < segments.len() {
                    *index += 1;
                    *current = Move::start(
                        ctx,
                        joints,
                        segments[*index],
                        w.epsilon,
                        w.velocity,
                        p.reference_accel,
                    );
                }
                if current.done(ctx) {
                    Status::Done
                } else {
                    current.output(ctx, p.kp_move, p.kd_move, out);
                    Status::Running
                }
            }
            (
                ActionSpec::Vibrate {
                    amplitude,
                    frequency,
                    duration_ms,
                },
                Runtime::Vibrate { centers, start_us },
            ) => {
                let elapsed = ctx.snap.time_us.saturating_sub(*start_us) as f64 * 1e-6;
                if elapsed >= duration_ms / 1000.0 {
                    Status::Done
                } else {
                    // square wave evaluated at the end of the coming period
                    let phase = ((elapsed + ctx.dt) * frequency).fract();
                    let sign = if phase < 0.5 { 1.0 } else { -1.0 };
                    for &(j, c) in centers.iter() {
                        let sp = ctx.hard_clamp(j, c + sign * amplitude);
                        let torque = ctx.pd(j, p.kp_move, p.kd_move, (sp, 0.0));
                        out.push((
                            j,
                            JointOutput {
                                torque,
                                setpoint: Some(sp),
                            },
                        ));
                    }
                    Status::Running
                }
            }
            (ActionSpec::Mirror { source, factor }, Runtime::Mirror { previous }) => {
                let dst = joints[0];
                let sp = ctx.hard_clamp(dst, factor * ctx.angle(*source));
                let ref_vel = previous.map_or(0.0, |prev| (sp - prev) / ctx.dt);
                *previous = Some(sp);
                let torque = ctx.pd(dst, p.kp_move, p.kd_move, (sp, ref_vel));
                out.push((
                    dst,
                    JointOutput {
                        torque,
                        setpoint: Some(sp),
                    },
                ));
                Status::Running
            }
            (
                ActionSpec::Effort {
                    effort,
                    tau,
                    filter,
                },
                _,
            ) => {
                let law = match effort {
                    Effort::Resist => strategy::resist_torque,
                    Effort::Amplify => strategy::amplify_torque,
                };
                per_joint(out, &|j| law(ctx.omega(j), *tau, *filter, p.omega_dead));
                Status::Running
            }
            (
                ActionSpec::FilterVelocity {
                    v_min,
                    v_max,
                    tau_assist,
                    tau_resist,
                },
                _,
            ) => {
                per_joint(out, &|j| {
                    strategy::filter_velocity_torque(
                        ctx.omega(j),
                        *v_min,
                        *v_max,
                        *tau_assist,
                        *tau_resist,
                        p.omega_dead,
                    )
                });
                Status::Running
            }
            (ActionSpec::ConstrainTo(area), _) => {
                per_joint(out, &|j| {
                    strategy::constrain_torque(ctx.angle(j), *area, max_torque(ctx.cfg, j))
                });
                Status::Running
            }
            (
                ActionSpec::GuideTowards {
                    area,
                    tau_assist,
                    tau_resist,
                },
                _,
            ) => {
                per_joint(out, &|j| {
                    strategy::guide_towards_torque(
                        ctx.angle(j),
                        ctx.omega(j),
                        *area,
                        *tau_assist,
                        *tau_resist,
                        p.omega_dead,
                    )
                });
                Status::Running
            }
            (
                ActionSpec::GuideAway {
                    area,
                    tau_assist,
                    tau_resist,
                },
                _,
            ) => {
                per_joint(out, &|j| {
                    strategy::guide_away_torque(
                        ctx.angle(j),
                        ctx.omega(j),
                        *area,
                        *tau_assist,
                        *tau_resist,
                        p.omega_dead,
                    )
                });
                Status::Running
            }
            (ActionSpec::AddJerks(jp), Runtime::Jerks { phase, done }) => {
                let joint = joints[0];
                let now = ctx.snap.time_us;
                loop {
                    match phase {
                        JerkPhase::Waiting { until_us } if now >= *until_us => {
                            let amplitude = draw(ctx.rng, jp.disp_min, jp.disp_max);
                            let sign = if ctx.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                            let here = ctx.angle(joint);
                            let hard = ctx.cfg.joint(joint).expect("validated").hard_range();
                            let mut delta = sign * amplitude;
                            if !hard.contains(here + delta) {
                                delta = -delta;
                            }
                            ctx.events.push(super::ControlEvent::Jerk {
                                time_us: now,
                                joint,
                                displacement: delta,
                            });
                            let vmax = max_speed(ctx.cfg, joint);
                            let motion = Move::start(
                                ctx,
                                joints,
                                Target::Relative(delta),
                                0.0,
                                vmax,
                                p.jerk_accel,
                            );
                            let release_us = now
                                + ms_to_us(
                                    motion.tracks[0].profile.duration() * 1000.0 + p.jerk_hold_ms,
                                );
                            *phase = JerkPhase::Jerking { motion, release_us };
                        }
                        JerkPhase::Jerking { release_us, .. } if now >= *release_us => {
                            *done += 1;
                            *phase = JerkPhase::Waiting {
                                until_us: now
                                    + ms_to_us(draw(
                                        ctx.rng,
                                        jp.interval_min_ms,
                                        jp.interval_max_ms,
                                    )),
                            };
                            if *done >= jp.count {
                                break Status::Done;
                            }
                        }
                        JerkPhase::Jerking { motion, .. } => {
                            motion.output(ctx, p.kp_move, p.kd_move, out);
                            break Status::Running;
                        }
                        JerkPhase::Waiting { .. } => break Status::Running,
                    }
                }
            }
            (ActionSpec::Stop, _) => Status::Done,
            (
                ActionSpec::Link { pairs, grace_ms },
                Runtime::Link {
                    started_us,
                    previous,
                },
            ) => {
                let now = ctx.snap.time_us;
                let grace_us = ms_to_us(*grace_ms);
                let remote = ctx.remote;
                let mut fresh = false;
                for pair in pairs.iter() {
                    let sample = remote.and_then(|r| r.get(&pair.source)).copied();
                    let alive = match sample {
                        Some(s) => now.saturating_sub(s.received_us) <= grace_us,
                        None => now.saturating_sub(*started_us) <= grace_us,
                    };
                    fresh |= alive;
                    let dst = pair.destination;
                    match sample {
                        Some(s) if alive => {
                            let sp = ctx.hard_clamp(dst, pair.factor * s.angle);
                            let ref_vel =
                                previous.get(&dst).map_or(0.0, |prev| (sp - prev) / ctx.dt);
                            previous.insert(dst, sp);
                            let torque = ctx.pd(dst, p.kp_move, p.kd_move, (sp, ref_vel));
                            out.push((
                                dst,
                                JointOutput {
                                    torque,
                                    setpoint: Some(sp),
                                },
                            ));
                        }
                        _ => out.push((dst, JointOutput::default())),
                    }
                }
                if fresh {
                    Status::Running
                } else {
                    out.clear();
                    ctx.events
                        .push(super::ControlEvent::LinkLost { time_us: now });
                    Status::Aborted
                }
            }
            _ => Status::Aborted,
        };
        next
    }
}
