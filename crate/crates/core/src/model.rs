//! Static description of an exoskeleton: which joints exist, how they are
//! driven, the ranges they may travel and where their zero lies.
//!
//! Configurations are assembled through [`ExoskeletonBuilder`], validated on
//! [`ExoskeletonBuilder::build`] and immutable afterwards. Calibration returns
//! a new configuration value instead of editing the existing one, so a control
//! loop can keep using its copy until it swaps at a tick boundary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Strongest supported motor torque in N·m.
pub const MAX_MOTOR_TORQUE: f64 = 10.0;
/// 77 RPM expressed in deg/s.
pub const MAX_MOTOR_SPEED: f64 = 77.0 * 360.0 / 60.0;
/// Default control loop rate.
pub const DEFAULT_CONTROL_RATE_HZ: u32 = 100;
/// Default telemetry rate.
pub const DEFAULT_TELEMETRY_RATE_HZ: u32 = 80;
/// Header line of the persisted configuration format.
pub const CONFIG_HEADER: &str = "exokit-config v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("joint {0} already present")]
    DuplicateJoint(JointId),
    #[error("actuated joint {0} needs a motor spec")]
    MotorMissing(JointId),
    #[error("joint {0} is not actuated and cannot carry a motor")]
    UnexpectedMotor(JointId),
    #[error("motor of {joint} outside envelope: {detail}")]
    MotorOutOfEnvelope { joint: JointId, detail: String },
    #[error("range of motion of {joint} outside envelope: [{min}, {max}] not within [{env_min}, {env_max}]")]
    RomOutOfEnvelope {
        joint: JointId,
        min: f64,
        max: f64,
        env_min: f64,
        env_max: f64,
    },
    #[error("restriction of {0} leaves no travel")]
    EmptyHardRange(JointId),
    #[error("configuration has no joints")]
    EmptyConfig,
    #[error("invalid rates: {0}")]
    BadRates(String),
    #[error("no joint {0}")]
    NoSuchJoint(JointId),
    #[error("passive joint {0} has no encoder to calibrate")]
    PassiveJointNotCalibratable(JointId),
    #[error("joint {0} is not calibrated")]
    NotCalibrated(JointId),
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("unsupported config version: {0}")]
    VersionMismatch(String),
    #[error("line {line}: {message}")]
    ParseFailure { line: usize, message: String },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

impl FromStr for Side {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "L" => Ok(Side::Left),
            "R" => Ok(Side::Right),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JointName {
    ShoulderAbduction,
    ShoulderFlexion,
    Elbow,
}

impl JointName {
    pub const ALL: [JointName; 3] = [
        JointName::ShoulderAbduction,
        JointName::ShoulderFlexion,
        JointName::Elbow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JointName::ShoulderAbduction => "sh_abd",
            JointName::ShoulderFlexion => "sh_flex",
            JointName::Elbow => "elbow",
        }
    }

    /// Anatomical envelope the hardware supports, in degrees.
    pub fn envelope(self) -> (f64, f64) {
        match self {
            JointName::ShoulderAbduction => (0.0, 90.0),
            JointName::ShoulderFlexion => (-20.0, 115.0),
            JointName::Elbow => (0.0, 115.0),
        }
    }
}

impl FromStr for JointName {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "sh_abd" => Ok(JointName::ShoulderAbduction),
            "sh_flex" => Ok(JointName::ShoulderFlexion),
            "elbow" => Ok(JointName::Elbow),
            _ => Err(()),
        }
    }
}

impl fmt::Display for JointName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A joint is identified by arm side and anatomical axis, written `R.elbow`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointId {
    pub side: Side,
    pub name: JointName,
}

impl JointId {
    pub const fn new(side: Side, name: JointName) -> Self {
        JointId { side, name }
    }

    /// All six joint ids in a stable order.
    pub fn all() -> impl Iterator<Item = JointId> {
        [Side::Left, Side::Right].into_iter().flat_map(|side| {
            JointName::ALL
                .into_iter()
                .map(move |name| JointId { side, name })
        })
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.side, self.name)
    }
}

impl FromStr for JointId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (side, name) = s.split_once('.').ok_or(())?;
        Ok(JointId {
            side: side.parse()?,
            name: name.parse()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointKind {
    Actuated,
    SensingOnly,
    Passive,
}

impl JointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JointKind::Actuated => "actuated",
            JointKind::SensingOnly => "sensing",
            JointKind::Passive => "passive",
        }
    }

    /// Whether the joint carries an encoder.
    pub fn is_sensed(self) -> bool {
        !matches!(self, JointKind::Passive)
    }
}

impl FromStr for JointKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "actuated" => Ok(JointKind::Actuated),
            "sensing" => Ok(JointKind::SensingOnly),
            "passive" => Ok(JointKind::Passive),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorSpec {
    /// N·m
    pub max_torque: f64,
    /// deg/s
    pub max_speed: f64,
}

impl MotorSpec {
    pub const fn new(max_torque: f64, max_speed: f64) -> Self {
        MotorSpec {
            max_torque,
            max_speed,
        }
    }

    /// The strongest supported motor: 10 N·m at 77 RPM.
    pub const fn strongest() -> Self {
        MotorSpec::new(MAX_MOTOR_TORQUE, MAX_MOTOR_SPEED)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomLimits {
    pub min_deg: f64,
    pub max_deg: f64,
}

impl RomLimits {
    pub const fn new(min_deg: f64, max_deg: f64) -> Self {
        RomLimits { min_deg, max_deg }
    }

    pub fn envelope(name: JointName) -> Self {
        let (min, max) = name.envelope();
        RomLimits::new(min, max)
    }

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min_deg && angle <= self.max_deg
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.min_deg, self.max_deg)
    }
}

/// Mechanical block narrowing the travel on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MechanicalRestriction {
    #[default]
    None,
    Deg15,
    Deg30,
    Deg45,
}

impl MechanicalRestriction {
    pub fn degrees(self) -> f64 {
        match self {
            MechanicalRestriction::None => 0.0,
            MechanicalRestriction::Deg15 => 15.0,
            MechanicalRestriction::Deg30 => 30.0,
            MechanicalRestriction::Deg45 => 45.0,
        }
    }

    pub fn from_degrees(deg: u32) -> Option<Self> {
        match deg {
            0 => Some(MechanicalRestriction::None),
            15 => Some(MechanicalRestriction::Deg15),
            30 => Some(MechanicalRestriction::Deg30),
            45 => Some(MechanicalRestriction::Deg45),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub id: JointId,
    pub kind: JointKind,
    pub motor: Option<MotorSpec>,
    /// Configured (soft) range of motion.
    pub rom: RomLimits,
    pub restriction: MechanicalRestriction,
    pub has_load_cell: bool,
}

impl JointConfig {
    /// An actuated joint with the strongest motor and the full envelope.
    pub fn actuated(id: JointId) -> Self {
        JointConfig {
            id,
            kind: JointKind::Actuated,
            motor: Some(MotorSpec::strongest()),
            rom: RomLimits::envelope(id.name),
            restriction: MechanicalRestriction::None,
            has_load_cell: false,
        }
    }

    pub fn sensing(id: JointId) -> Self {
        JointConfig {
            kind: JointKind::SensingOnly,
            motor: None,
            ..JointConfig::actuated(id)
        }
    }

    pub fn passive(id: JointId) -> Self {
        JointConfig {
            kind: JointKind::Passive,
            motor: None,
            ..JointConfig::actuated(id)
        }
    }

    pub fn with_motor(mut self, motor: MotorSpec) -> Self {
        self.motor = Some(motor);
        self
    }

    pub fn with_rom(mut self, min_deg: f64, max_deg: f64) -> Self {
        self.rom = RomLimits::new(min_deg, max_deg);
        self
    }

    pub fn with_restriction(mut self, restriction: MechanicalRestriction) -> Self {
        self.restriction = restriction;
        self
    }

    pub fn with_load_cell(mut self) -> Self {
        self.has_load_cell = true;
        self
    }

    /// Travel left after the mechanical restriction narrows the soft range.
    pub fn hard_range(&self) -> RomLimits {
        let n = self.restriction.degrees();
        RomLimits::new(self.rom.min_deg + n, self.rom.max_deg - n)
    }

    fn validate(&self, ceiling: &MotorSpec) -> Result<()> {
        match (self.kind, self.motor) {
            (JointKind::Actuated, None) => return Err(ModelError::MotorMissing(self.id)),
            (JointKind::Actuated, Some(m)) => {
                let ok_torque = m.max_torque > 0.0 && m.max_torque <= ceiling.max_torque;
                let ok_speed = m.max_speed > 0.0 && m.max_speed <= ceiling.max_speed;
                if !ok_torque || !ok_speed {
                    return Err(ModelError::MotorOutOfEnvelope {
                        joint: self.id,
                        detail: format!(
                            "torque {} (max {}), speed {} (max {})",
                            m.max_torque, ceiling.max_torque, m.max_speed, ceiling.max_speed
                        ),
                    });
                }
            }
            (_, Some(_)) => return Err(ModelError::UnexpectedMotor(self.id)),
            (_, None) => {}
        }
        let (env_min, env_max) = self.id.name.envelope();
        let rom = self.rom;
        if !(rom.min_deg.is_finite()
            && rom.max_deg.is_finite()
            && rom.min_deg < rom.max_deg
            && rom.min_deg >= env_min
            && rom.max_deg <= env_max)
        {
            return Err(ModelError::RomOutOfEnvelope {
                joint: self.id,
                min: rom.min_deg,
                max: rom.max_deg,
                env_min,
                env_max,
            });
        }
        let hard = self.hard_range();
        if hard.min_deg >= hard.max_deg {
            return Err(ModelError::EmptyHardRange(self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointCalibration {
    /// Raw encoder reading at the anatomical zero.
    pub zero_offset: f64,
    pub calibrated: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationState {
    joints: BTreeMap<JointId, JointCalibration>,
}

impl CalibrationState {
    pub fn get(&self, joint: JointId) -> JointCalibration {
        self.joints.get(&joint).copied().unwrap_or_default()
    }

    pub fn is_calibrated(&self, joint: JointId) -> bool {
        self.get(joint).calibrated
    }
}

/// Collects joints and rates, then validates them into an [`ExoskeletonConfig`].
#[derive(Debug, Clone)]
pub struct ExoskeletonBuilder {
    joints: BTreeMap<JointId, JointConfig>,
    control_rate_hz: u32,
    telemetry_rate_hz: u32,
    motor_ceiling: MotorSpec,
}

impl Default for ExoskeletonBuilder {
    fn default() -> Self {
        ExoskeletonBuilder {
            joints: BTreeMap::new(),
            control_rate_hz: DEFAULT_CONTROL_RATE_HZ,
            telemetry_rate_hz: DEFAULT_TELEMETRY_RATE_HZ,
            motor_ceiling: MotorSpec::strongest(),
        }
    }
}

impl ExoskeletonBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Raises or lowers the motor limits joints are validated against.
    pub fn motor_ceiling(mut self, ceiling: MotorSpec) -> Self {
        self.motor_ceiling = ceiling;
        self
    }

    pub fn add_joint(mut self, joint: JointConfig) -> Result<Self> {
        if self.joints.contains_key(&joint.id) {
            return Err(ModelError::DuplicateJoint(joint.id));
        }
        joint.validate(&self.motor_ceiling)?;
        self.joints.insert(joint.id, joint);
        Ok(self)
    }

    pub fn control_rate_hz(mut self, hz: u32) -> Self {
        self.control_rate_hz = hz;
        self
    }

    pub fn telemetry_rate_hz(mut self, hz: u32) -> Self {
        self.telemetry_rate_hz = hz;
        self
    }

    pub fn build(self) -> Result<ExoskeletonConfig> {
        if self.joints.is_empty() {
            return Err(ModelError::EmptyConfig);
        }
        check_rates(self.control_rate_hz, self.telemetry_rate_hz)?;
        Ok(ExoskeletonConfig {
            joints: self.joints,
            calibration: CalibrationState::default(),
            control_rate_hz: self.control_rate_hz,
            telemetry_rate_hz: self.telemetry_rate_hz,
        })
    }
}

fn check_rates(control: u32, telemetry: u32) -> Result<()> {
    if control == 0 || telemetry == 0 {
        return Err(ModelError::BadRates("rates must be positive".into()));
    }
    if telemetry > control {
        return Err(ModelError::BadRates(format!(
            "telemetry rate {telemetry} Hz above control rate {control} Hz"
        )));
    }
    if 1_000_000 % control != 0 {
        return Err(ModelError::BadRates(format!(
            "control rate {control} Hz does not give a whole-microsecond period"
        )));
    }
    Ok(())
}

/// Validated, immutable exoskeleton description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExoskeletonConfig {
    joints: BTreeMap<JointId, JointConfig>,
    calibration: CalibrationState,
    control_rate_hz: u32,
    telemetry_rate_hz: u32,
}

impl ExoskeletonConfig {
    pub fn builder() -> ExoskeletonBuilder {
        ExoskeletonBuilder::new()
    }

    pub fn joints(&self) -> impl Iterator<Item = &JointConfig> {
        self.joints.values()
    }

    pub fn joint_ids(&self) -> impl Iterator<Item = JointId> + '_ {
        self.joints.keys().copied()
    }

    pub fn joint(&self, id: JointId) -> Result<&JointConfig> {
        self.joints.get(&id).ok_or(ModelError::NoSuchJoint(id))
    }

    pub fn contains(&self, id: JointId) -> bool {
        self.joints.contains_key(&id)
    }

    pub fn calibration(&self) -> &CalibrationState {
        &self.calibration
    }

    pub fn is_calibrated(&self, id: JointId) -> bool {
        self.calibration.is_calibrated(id)
    }

    pub fn control_rate_hz(&self) -> u32 {
        self.control_rate_hz
    }

    pub fn telemetry_rate_hz(&self) -> u32 {
        self.telemetry_rate_hz
    }

    /// Control period in microseconds.
    pub fn control_period_us(&self) -> u64 {
        1_000_000 / u64::from(self.control_rate_hz)
    }

    /// Returns a copy with `raw_angle` recorded as the joint's zero.
    pub fn calibrate_zero(&self, joint: JointId, raw_angle: f64) -> Result<ExoskeletonConfig> {
        let jc = self.joint(joint)?;
        if !jc.kind.is_sensed() {
            return Err(ModelError::PassiveJointNotCalibratable(joint));
        }
        let mut next = self.clone();
        next.calibration.joints.insert(
            joint,
            JointCalibration {
                zero_offset: raw_angle,
                calibrated: true,
            },
        );
        Ok(next)
    }

    /// Same configuration with every sensed joint calibrated at raw zero.
    pub fn calibrated_at_zero(&self) -> ExoskeletonConfig {
        let mut next = self.clone();
        for jc in self.joints.values().filter(|j| j.kind.is_sensed()) {
            next.calibration.joints.insert(
                jc.id,
                JointCalibration {
                    zero_offset: 0.0,
                    calibrated: true,
                },
            );
        }
        next
    }

    /// Raw encoder reading to anatomical angle.
    pub fn to_absolute(&self, joint: JointId, raw: f64) -> f64 {
        raw - self.calibration.get(joint).zero_offset
    }

    pub fn clamp_to_rom(&self, joint: JointId, angle: f64) -> Result<f64> {
        let jc = self.joint(joint)?;
        if !self.is_calibrated(joint) {
            return Err(ModelError::NotCalibrated(joint));
        }
        Ok(jc.hard_range().clamp(angle))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| ModelError::IoFailure(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ExoskeletonConfig> {
        let text = fs::read_to_string(path).map_err(|e| ModelError::IoFailure(e.to_string()))?;
        ExoskeletonConfig::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CONFIG_HEADER);
        out.push('\n');
        out.push_str(&format!("control_rate_hz={}\n", self.control_rate_hz));
        out.push_str(&format!("telemetry_rate_hz={}\n", self.telemetry_rate_hz));
        for jc in self.joints.values() {
            let p = format!("joint.{}", jc.id);
            out.push_str(&format!("{p}.kind={}\n", jc.kind.as_str()));
            if let Some(m) = jc.motor {
                out.push_str(&format!("{p}.max_torque={}\n", m.max_torque));
                out.push_str(&format!("{p}.max_speed={}\n", m.max_speed));
            }
            out.push_str(&format!("{p}.rom_min={}\n", jc.rom.min_deg));
            out.push_str(&format!("{p}.rom_max={}\n", jc.rom.max_deg));
            out.push_str(&format!("{p}.restriction={}\n", jc.restriction.degrees()));
            out.push_str(&format!("{p}.load_cell={}\n", jc.has_load_cell));
            let cal = self.calibration.get(jc.id);
            if cal.calibrated {
                out.push_str(&format!("{p}.zero_offset={}\n", cal.zero_offset));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ExoskeletonConfig> {
        parse_config(text)
    }
}

#[derive(Default)]
struct PendingJoint {
    line: usize,
    kind: Option<JointKind>,
    max_torque: Option<f64>,
    max_speed: Option<f64>,
    rom_min: Option<f64>,
    rom_max: Option<f64>,
    restriction: Option<MechanicalRestriction>,
    load_cell: Option<bool>,
    zero_offset: Option<f64>,
}

fn parse_config(text: &str) -> Result<ExoskeletonConfig> {
    let fail = |line: usize, message: String| ModelError::ParseFailure { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let header = lines
        .by_ref()
        .find(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match header {
        Some((_, CONFIG_HEADER)) => {}
        Some((_, h)) if h.starts_with("exokit-config ") => {
            return Err(ModelError::VersionMismatch(h.to_string()))
        }
        Some((n, h)) => {
            return Err(fail(
                n,
                format!("expected header '{CONFIG_HEADER}', got '{h}'"),
            ))
        }
        None => return Err(fail(1, "empty file".into())),
    }

    let mut control = None;
    let mut telemetry = None;
    let mut pending: BTreeMap<JointId, PendingJoint> = BTreeMap::new();

    fn set<T>(slot: &mut Option<T>, value: T, line: usize, key: &str) -> Result<()> {
        if slot.is_some() {
            return Err(ModelError::ParseFailure {
                line,
                message: format!("duplicate key '{key}'"),
            });
        }
        *slot = Some(value);
        Ok(())
    }
    fn num(v: &str, line: usize) -> Result<f64> {
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ModelError::ParseFailure {
                line,
                message: format!("bad number '{v}'"),
            })
    }

    for (n, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(n, format!("expected key=value, got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "control_rate_hz" => {
                let v = value
                    .parse()
                    .map_err(|_| fail(n, format!("bad rate '{value}'")))?;
                set(&mut control, v, n, key)?;
            }
            "telemetry_rate_hz" => {
                let v = value
                    .parse()
                    .map_err(|_| fail(n, format!("bad rate '{value}'")))?;
                set(&mut telemetry, v, n, key)?;
            }
            _ => {
                let rest = key
                    .strip_prefix("joint.")
                    .ok_or_else(|| fail(n, format!("unknown key '{key}'")))?;
                let (id, field) = rest
                    .rsplit_once('.')
                    .ok_or_else(|| fail(n, format!("unknown key '{key}'")))?;
                let id: JointId = id
                    .parse()
                    .map_err(|_| fail(n, format!("bad joint id '{id}'")))?;
                let pj = pending.entry(id).or_insert_with(|| PendingJoint {
                    line: n,
                    ..PendingJoint::default()
                });
                match field {
                    "kind" => {
                        let k = value
                            .parse()
                            .map_err(|_| fail(n, format!("bad joint kind '{value}'")))?;
                        set(&mut pj.kind, k, n, key)?;
                    }
                    "max_torque" => set(&mut pj.max_torque, num(value, n)?, n, key)?,
                    "max_speed" => set(&mut pj.max_speed, num(value, n)?, n, key)?,
                    "rom_min" => set(&mut pj.rom_min, num(value, n)?, n, key)?,
                    "rom_max" => set(&mut pj.rom_max, num(value, n)?, n, key)?,
                    "restriction" => {
                        let r = value
                            .parse::<u32>()
                            .ok()
                            .and_then(MechanicalRestriction::from_degrees)
                            .ok_or_else(|| fail(n, format!("bad restriction '{value}'")))?;
                        set(&mut pj.restriction, r, n, key)?;
                    }
                    "load_cell" => {
                        let b = value
                            .parse()
                            .map_err(|_| fail(n, format!("bad boolean '{value}'")))?;
                        set(&mut pj.load_cell, b, n, key)?;
                    }
                    "zero_offset" => set(&mut pj.zero_offset, num(value, n)?, n, key)?,
                    _ => return Err(fail(n, format!("unknown field '{field}'"))),
                }
            }
        }
    }

    let mut builder = ExoskeletonBuilder::new()
        .control_rate_hz(control.unwrap_or(DEFAULT_CONTROL_RATE_HZ))
        .telemetry_rate_hz(telemetry.unwrap_or(DEFAULT_TELEMETRY_RATE_HZ));
    let mut offsets = Vec::new();
    for (id, pj) in pending {
        let missing = |what: &str| fail(pj.line, format!("joint {id} missing '{what}'"));
        let kind = pj.kind.ok_or_else(|| missing("kind"))?;
        let motor = match (pj.max_torque, pj.max_speed) {
            (Some(t), Some(s)) => Some(MotorSpec::new(t, s)),
            (None, None) => None,
            _ => return Err(missing("max_torque/max_speed pair")),
        };
        let jc = JointConfig {
            id,
            kind,
            motor,
            rom: RomLimits::new(
                pj.rom_min.ok_or_else(|| missing("rom_min"))?,
                pj.rom_max.ok_or_else(|| missing("rom_max"))?,
            ),
            restriction: pj.restriction.unwrap_or_default(),
            has_load_cell: pj.load_cell.unwrap_or(false),
        };
        builder = builder.add_joint(jc)?;
        if let Some(z) = pj.zero_offset {
            offsets.push((id, z));
        }
    }
    let mut config = builder.build()?;
    for (id, z) in offsets {
        config = config.calibrate_zero(id, z)?;
    }
    Ok(config)
}
