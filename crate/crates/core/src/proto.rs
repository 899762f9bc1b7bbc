//! Line-based text protocol: commands, responses and telemetry frames.
//!
//! Every line is at most [`MAX_LINE`] bytes. Tokens are separated by ASCII
//! whitespace. Joint ids are written `R.elbow`, joint lists are
//! comma-separated, numbers are plain decimals with an optional sign and
//! fraction.

use std::fmt;

use thiserror::Error;

use crate::control::{ActionKind, ControlError, DirectionFilter, LinkPair, Status, Target};
use crate::model::{JointId, JointKind, ModelError, Side};
use crate::sim::JointState;

pub const GREETING: &str = "proto v1";
pub const MAX_LINE: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JointSelector {
    All,
    Joints(Vec<JointId>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopTarget {
    Action(u64),
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    MoveTo {
        joints: Vec<JointId>,
        target: Target,
        epsilon: f64,
        velocity: f64,
    },
    Lock(Vec<JointId>),
    Unlock(Vec<JointId>),
    Sense(Vec<JointId>),
    StreamOn {
        joints: JointSelector,
        hz: f64,
    },
    StreamOff(JointSelector),
    Wave {
        side: Side,
        cycles: u32,
    },
    Vibrate {
        joints: Vec<JointId>,
        amplitude: f64,
        frequency: f64,
        duration_ms: f64,
    },
    Mirror {
        source: JointId,
        destination: JointId,
        factor: f64,
    },
    Amplify {
        joints: Vec<JointId>,
        tau: f64,
        filter: DirectionFilter,
    },
    Resist {
        joints: Vec<JointId>,
        tau: f64,
        filter: DirectionFilter,
    },
    FilterVelocity {
        joint: JointId,
        v_min: f64,
        v_max: f64,
        tau_assist: f64,
        tau_resist: f64,
    },
    Jerks {
        joint: JointId,
        disp_min: f64,
        disp_max: f64,
        interval_min_ms: f64,
        interval_max_ms: f64,
        count: u32,
    },
    Constrain {
        joint: JointId,
        theta: f64,
        epsilon: f64,
    },
    GuideTowards {
        joint: JointId,
        theta: f64,
        epsilon: f64,
        tau_assist: f64,
        tau_resist: f64,
    },
    GuideAway {
        joint: JointId,
        theta: f64,
        epsilon: f64,
        tau_assist: f64,
        tau_resist: f64,
    },
    Stop(StopTarget),
    Panic,
    Status,
    Step(u64),
    Link {
        peer: String,
        pairs: Vec<LinkPair>,
    },
    Calibrate(JointId),
    ConfigSave(String),
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::MoveTo { .. } => "moveto",
            Command::Lock(_) => "lock",
            Command::Unlock(_) => "unlock",
            Command::Sense(_) => "sense",
            Command::StreamOn { .. } | Command::StreamOff(_) => "stream",
            Command::Wave { .. } => "gesture",
            Command::Vibrate { .. } => "vibrate",
            Command::Mirror { .. } => "mirror",
            Command::Amplify { .. } => "amplify",
            Command::Resist { .. } => "resist",
            Command::FilterVelocity { .. } => "filtervel",
            Command::Jerks { .. } => "jerks",
            Command::Constrain { .. } => "constrain",
            Command::GuideTowards { .. } => "guideto",
            Command::GuideAway { .. } => "guideaway",
            Command::Stop(_) => "stop",
            Command::Panic => "panic",
            Command::Status => "status",
            Command::Step(_) => "step",
            Command::Link { .. } => "link",
            Command::Calibrate(_) => "calibrate",
            Command::ConfigSave(_) => "config",
        }
    }

    /// Whether the command schedules an action on the controller.
    pub fn is_action(&self) -> bool {
        matches!(
            self,
            Command::MoveTo { .. }
                | Command::Lock(_)
                | Command::Wave { .. }
                | Command::Vibrate { .. }
                | Command::Mirror { .. }
                | Command::Amplify { .. }
                | Command::Resist { .. }
                | Command::FilterVelocity { .. }
                | Command::Jerks { .. }
                | Command::Constrain { .. }
                | Command::GuideTowards { .. }
                | Command::GuideAway { .. }
                | Command::Link { .. }
        )
    }
}

struct Joints<'a>(&'a [JointId]);

impl fmt::Display for Joints<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{j}")?;
        }
        Ok(())
    }
}

impl fmt::Display for JointSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JointSelector::All => f.write_str("all"),
            JointSelector::Joints(j) => Joints(j).fmt(f),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.verb();
        match self {
            Command::MoveTo {
                joints,
                target,
                epsilon,
                velocity,
            } => {
                let (mode, a) = match target {
                    Target::Absolute(a) => ("abs", a),
                    Target::Relative(a) => ("rel", a),
                };
                write!(f, "{v} {} {mode} {a} {epsilon} {velocity}", Joints(joints))
            }
            Command::Lock(j) | Command::Unlock(j) | Command::Sense(j) => {
                write!(f, "{v} {}", Joints(j))
            }
            Command::StreamOn { joints, hz } => write!(f, "{v} on {joints} {hz}"),
            Command::StreamOff(joints) => write!(f, "{v} off {joints}"),
            Command::Wave { side, cycles } => write!(f, "{v} wave {side} {cycles}"),
            Command::Vibrate {
                joints,
                amplitude,
                frequency,
                duration_ms,
            } => write!(
                f,
                "{v} {} {amplitude} {frequency} {duration_ms}",
                Joints(joints)
            ),
            Command::Mirror {
                source,
                destination,
                factor,
            } => write!(f, "{v} {source} {destination} {factor}"),
            Command::Amplify {
                joints,
                tau,
                filter,
            }
            | Command::Resist {
                joints,
                tau,
                filter,
            } => {
                write!(f, "{v} {} {tau} {}", Joints(joints), filter.as_str())
            }
            Command::FilterVelocity {
                joint,
                v_min,
                v_max,
                tau_assist,
                tau_resist,
            } => write!(f, "{v} {joint} {v_min} {v_max} {tau_assist} {tau_resist}"),
            Command::Jerks {
                joint,
                disp_min,
                disp_max,
                interval_min_ms,
                interval_max_ms,
                count,
            } => write!(
                f,
                "{v} {joint} {disp_min} {disp_max} {interval_min_ms} {interval_max_ms} {count}"
            ),
            Command::Constrain {
                joint,
                theta,
                epsilon,
            } => write!(f, "{v} {joint} {theta} {epsilon}"),
            Command::GuideTowards {
                joint,
                theta,
                epsilon,
                tau_assist,
                tau_resist,
            }
            | Command::GuideAway {
                joint,
                theta,
                epsilon,
                tau_assist,
                tau_resist,
            } => write!(f, "{v} {joint} {theta} {epsilon} {tau_assist} {tau_resist}"),
            Command::Stop(StopTarget::All) => write!(f, "{v} all"),
            Command::Stop(StopTarget::Action(id)) => write!(f, "{v} {id}"),
            Command::Panic | Command::Status => f.write_str(v),
            Command::Step(n) => write!(f, "{v} {n}"),
            Command::Link { peer, pairs } => {
                write!(f, "{v} {peer} ")?;
                for (i, p) in pairs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}:{}:{}", p.source, p.destination, p.factor)?;
                }
                Ok(())
            }
            Command::Calibrate(j) => write!(f, "{v} {j}"),
            Command::ConfigSave(path) => write!(f, "{v} save {path}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty line")]
    Empty,
    #[error("line of {0} bytes exceeds {MAX_LINE}")]
    TooLong(usize),
    #[error("line is not valid utf-8")]
    NotUtf8,
    #[error("unknown verb '{0}'")]
    UnknownVerb(String),
    #[error("{verb}: expected {expected} tokens, got {got}")]
    Arity {
        verb: String,
        expected: usize,
        got: usize,
    },
    #[error("{verb}: malformed joint id '{token}'")]
    MalformedJointId { verb: String, token: String },
    #[error("{verb}: malformed number '{token}'")]
    MalformedNumber { verb: String, token: String },
    #[error("{verb}: bad argument '{token}', expected {expected}")]
    BadArgument {
        verb: String,
        token: String,
        expected: &'static str,
    },
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Empty => "EMPTY",
            ParseError::TooLong(_) => "LINE_TOO_LONG",
            ParseError::NotUtf8 => "NOT_UTF8",
            ParseError::UnknownVerb(_) => "UNKNOWN_VERB",
            ParseError::Arity { .. } => "ARITY",
            ParseError::MalformedJointId { .. } => "MALFORMED_JOINT_ID",
            ParseError::MalformedNumber { .. } => "MALFORMED_NUMBER",
            ParseError::BadArgument { .. } => "BAD_ARGUMENT",
        }
    }
}

/// `[+-]?\d+(\.\d+)?`
fn is_decimal(s: &str) -> bool {
    let s = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    digits(int) && frac.is_none_or(digits)
}

struct Args<'a> {
    verb: &'a str,
    tokens: Vec<&'a str>,
}

impl<'a> Args<'a> {
    fn arity(&self, expected: usize) -> Result<(), ParseError> {
        if self.tokens.len() == expected {
            Ok(())
        } else {
            Err(ParseError::Arity {
                verb: self.verb.to_string(),
                expected,
                got: self.tokens.len(),
            })
        }
    }

    fn token(&self, i: usize) -> &'a str {
        self.tokens[i]
    }

    fn number(&self, i: usize) -> Result<f64, ParseError> {
        let t = self.token(i);
        let malformed = || ParseError::MalformedNumber {
            verb: self.verb.to_string(),
            token: t.to_string(),
        };
        if !is_decimal(t) {
            return Err(malformed());
        }
        let v: f64 = t.parse().map_err(|_| malformed())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(malformed())
        }
    }

    fn integer<T: std::str::FromStr>(&self, i: usize) -> Result<T, ParseError> {
        let t = self.token(i);
        let t_digits = t.strip_prefix('+').unwrap_or(t);
        if !t_digits.is_empty() && t_digits.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(v) = t_digits.parse() {
                return Ok(v);
            }
        }
        Err(ParseError::MalformedNumber {
            verb: self.verb.to_string(),
            token: t.to_string(),
        })
    }

    fn joint_str(&self, t: &str) -> Result<JointId, ParseError> {
        t.parse().map_err(|_| ParseError::MalformedJointId {
            verb: self.verb.to_string(),
            token: t.to_string(),
        })
    }

    fn joint(&self, i: usize) -> Result<JointId, ParseError> {
        self.joint_str(self.token(i))
    }

    fn joints(&self, i: usize) -> Result<Vec<JointId>, ParseError> {
        self.token(i)
            .split(',')
            .map(|t| self.joint_str(t))
            .collect()
    }

    fn selector(&self, i: usize) -> Result<JointSelector, ParseError> {
        if self.token(i) == "all" {
            Ok(JointSelector::All)
        } else {
            self.joints(i).map(JointSelector::Joints)
        }
    }

    fn bad(&self, i: usize, expected: &'static str) -> ParseError {
        ParseError::BadArgument {
            verb: self.verb.to_string(),
            token: self.token(i).to_string(),
            expected,
        }
    }

    fn filter(&self, i: usize) -> Result<DirectionFilter, ParseError> {
        match self.token(i) {
            "pos" => Ok(DirectionFilter::Positive),
            "neg" => Ok(DirectionFilter::Negative),
            "both" => Ok(DirectionFilter::Both),
            _ => Err(self.bad(i, "pos, neg or both")),
        }
    }

    fn link_pairs(&self, i: usize) -> Result<Vec<LinkPair>, ParseError> {
        self.token(i)
            .split(',')
            .map(|p| {
                let mut it = p.split(':');
                let (Some(s), Some(d), Some(f), None) =
                    (it.next(), it.next(), it.next(), it.next())
                else {
                    return Err(self.bad(i, "src:dst:factor[,...]"));
                };
                let factor = if is_decimal(f) {
                    f.parse::<f64>().ok().filter(|v| v.is_finite())
                } else {
                    None
                };
                Ok(LinkPair {
                    source: self.joint_str(s)?,
                    destination: self.joint_str(d)?,
                    factor: factor.ok_or_else(|| ParseError::MalformedNumber {
                        verb: self.verb.to_string(),
                        token: f.to_string(),
                    })?,
                })
            })
            .collect()
    }
}

fn valid_endpoint(s: &str) -> bool {
    match s.rsplit_once(':') {
        Some((host, port)) => !host.is_empty() && port.parse::<u16>().is_ok(),
        None => false,
    }
}

/// Parses raw bytes, e.g. straight off a socket.
pub fn parse_command_bytes(line: &[u8]) -> Result<Command, ParseError> {
    if line.len() > MAX_LINE {
        return Err(ParseError::TooLong(line.len()));
    }
    let s = std::str::from_utf8(line).map_err(|_| ParseError::NotUtf8)?;
    parse_command(s)
}

pub fn parse_command(line: &str) -> Result<Command, ParseError> {
    if line.len() > MAX_LINE {
        return Err(ParseError::TooLong(line.len()));
    }
    let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
    let Some(&verb) = tokens.first() else {
        return Err(ParseError::Empty);
    };
    let a = Args { verb, tokens };
    let cmd = match verb {
        "moveto" => {
            a.arity(6)?;
            let amount = a.number(3)?;
            let target = match a.token(2) {
                "abs" => Target::Absolute(amount),
                "rel" => Target::Relative(amount),
                _ => return Err(a.bad(2, "abs or rel")),
            };
            Command::MoveTo {
                joints: a.joints(1)?,
                target,
                epsilon: a.number(4)?,
                velocity: a.number(5)?,
            }
        }
        "lock" | "unlock" | "sense" => {
            a.arity(2)?;
            let j = a.joints(1)?;
            match verb {
                "lock" => Command::Lock(j),
                "unlock" => Command::Unlock(j),
                _ => Command::Sense(j),
            }
        }
        "stream" => {
            if a.tokens.len() < 2 {
                return Err(ParseError::Arity {
                    verb: verb.to_string(),
                    expected: 4,
                    got: a.tokens.len(),
                });
            }
            match a.token(1) {
                "on" => {
                    a.arity(4)?;
                    Command::StreamOn {
                        joints: a.selector(2)?,
                        hz: a.number(3)?,
                    }
                }
                "off" => {
                    a.arity(3)?;
                    Command::StreamOff(a.selector(2)?)
                }
                _ => return Err(a.bad(1, "on or off")),
            }
        }
        "gesture" => {
            a.arity(4)?;
            if a.token(1) != "wave" {
                return Err(a.bad(1, "wave"));
            }
            let side = a.token(2).parse().map_err(|_| a.bad(2, "L or R"))?;
            Command::Wave {
                side,
                cycles: a.integer(3)?,
            }
        }
        "vibrate" => {
            a.arity(5)?;
            Command::Vibrate {
                joints: a.joints(1)?,
                amplitude: a.number(2)?,
                frequency: a.number(3)?,
                duration_ms: a.number(4)?,
            }
        }
        "mirror" => {
            a.arity(4)?;
            Command::Mirror {
                source: a.joint(1)?,
                destination: a.joint(2)?,
                factor: a.number(3)?,
            }
        }
        "amplify" | "resist" => {
            a.arity(4)?;
            let (joints, tau, filter) = (a.joints(1)?, a.number(2)?, a.filter(3)?);
            if verb == "amplify" {
                Command::Amplify {
                    joints,
                    tau,
                    filter,
                }
            } else {
                Command::Resist {
                    joints,
                    tau,
                    filter,
                }
            }
        }
        "filtervel" => {
            a.arity(6)?;
            Command::FilterVelocity {
                joint: a.joint(1)?,
                v_min: a.number(2)?,
                v_max: a.number(3)?,
                tau_assist: a.number(4)?,
                tau_resist: a.number(5)?,
            }
        }
        "jerks" => {
            a.arity(7)?;
            Command::Jerks {
                joint: a.joint(1)?,
                disp_min: a.number(2)?,
                disp_max: a.number(3)?,
                interval_min_ms: a.number(4)?,
                interval_max_ms: a.number(5)?,
                count: a.integer(6)?,
            }
        }
        "constrain" => {
            a.arity(4)?;
            Command::Constrain {
                joint: a.joint(1)?,
                theta: a.number(2)?,
                epsilon: a.number(3)?,
            }
        }
        "guideto" | "guideaway" => {
            a.arity(6)?;
            let (joint, theta, epsilon, tau_assist, tau_resist) = (
                a.joint(1)?,
                a.number(2)?,
                a.number(3)?,
                a.number(4)?,
                a.number(5)?,
            );
            if verb == "guideto" {
                Command::GuideTowards {
                    joint,
                    theta,
                    epsilon,
                    tau_assist,
                    tau_resist,
                }
            } else {
                Command::GuideAway {
                    joint,
                    theta,
                    epsilon,
                    tau_assist,
                    tau_resist,
                }
            }
        }
        "stop" => {
            a.arity(2)?;
            if a.token(1) == "all" {
                Command::Stop(StopTarget::All)
            } else {
                Command::Stop(StopTarget::Action(a.integer(1)?))
            }
        }
        "panic" => {
            a.arity(1)?;
            Command::Panic
        }
        "status" => {
            a.arity(1)?;
            Command::Status
        }
        "step" => {
            a.arity(2)?;
            Command::Step(a.integer(1)?)
        }
        "link" => {
            a.arity(3)?;
            if !valid_endpoint(a.token(1)) {
                return Err(a.bad(1, "host:port"));
            }
            Command::Link {
                peer: a.token(1).to_string(),
                pairs: a.link_pairs(2)?,
            }
        }
        "calibrate" => {
            a.arity(2)?;
            Command::Calibrate(a.joint(1)?)
        }
        "config" => {
            a.arity(3)?;
            if a.token(1) != "save" {
                return Err(a.bad(1, "save"));
            }
            Command::ConfigSave(a.token(2).to_string())
        }
        _ => return Err(ParseError::UnknownVerb(verb.to_string())),
    };
    Ok(cmd)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ok(Option<String>),
    Err { code: String, message: String },
}

impl Response {
    pub fn ok() -> Self {
        Response::Ok(None)
    }

    pub fn ok_with(payload: impl Into<String>) -> Self {
        Response::Ok(Some(payload.into()))
    }

    pub fn err(code: &str, message: impl Into<String>) -> Self {
        Response::Err {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Response::Ok(_))
    }

    pub fn parse(line: &str) -> Option<Response> {
        let line = line.trim_end_matches(['\r', '\n']);
        if line == "ok" {
            return Some(Response::Ok(None));
        }
        if let Some(p) = line.strip_prefix("ok ") {
            return Some(Response::Ok(Some(p.to_string())));
        }
        let rest = line.strip_prefix("err ")?;
        let (code, message) = rest.split_once(' ').unwrap_or((rest, ""));
        Some(Response::Err {
            code: code.to_string(),
            message: message.to_string(),
        })
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Ok(None) => f.write_str("ok"),
            Response::Ok(Some(p)) => write!(f, "ok {p}"),
            Response::Err { code, message } if message.is_empty() => write!(f, "err {code}"),
            Response::Err { code, message } => write!(f, "err {code} {message}"),
        }
    }
}

impl From<&ParseError> for Response {
    fn from(e: &ParseError) -> Self {
        Response::err(e.code(), e.to_string())
    }
}

impl From<&ControlError> for Response {
    fn from(e: &ControlError) -> Self {
        let code = match e {
            ControlError::NoSuchJoint(_) => "NO_SUCH_JOINT",
            ControlError::NotActuated(_) => "NOT_ACTUATED",
            ControlError::NotSensed(_) => "NOT_SENSED",
            ControlError::NotCalibrated(_) => "NOT_CALIBRATED",
            ControlError::NoJoints => "NO_JOINTS",
            ControlError::TargetOutOfRange { .. } => "TARGET_OUT_OF_RANGE",
            ControlError::VelocityOutOfRange { .. } => "VELOCITY_OUT_OF_RANGE",
            ControlError::TorqueOutOfRange { .. } => "TORQUE_OUT_OF_RANGE",
            ControlError::FrequencyTooHigh { .. } => "FREQUENCY_TOO_HIGH",
            ControlError::SameJoint(_) => "SAME_JOINT",
            ControlError::BadRange(_) => "BAD_RANGE",
            ControlError::AreaOutsideRom(_) => "AREA_OUTSIDE_ROM",
            ControlError::JointConflict(_) => "JOINT_CONFLICT",
            ControlError::SystemHalted => "HALTED",
            ControlError::NoSuchProgram => "NO_SUCH_ACTION",
        };
        Response::err(code, e.to_string())
    }
}

impl From<&ModelError> for Response {
    fn from(e: &ModelError) -> Self {
        let code = match e {
            ModelError::NoSuchJoint(_) => "NO_SUCH_JOINT",
            ModelError::PassiveJointNotCalibratable(_) => "NOT_SENSED",
            ModelError::NotCalibrated(_) => "NOT_CALIBRATED",
            ModelError::IoFailure(_) => "IO_FAILURE",
            _ => "CONFIG_INVALID",
        };
        Response::err(code, e.to_string())
    }
}

/// One per-joint sensor sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryFrame {
    pub t_ms: u64,
    pub joint: JointId,
    pub angle: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub torque: f64,
    pub load_cell: Option<f64>,
}

impl TelemetryFrame {
    pub fn from_state(t_ms: u64, joint: JointId, s: &JointState) -> Self {
        TelemetryFrame {
            t_ms,
            joint,
            angle: s.angle,
            velocity: s.velocity,
            acceleration: s.acceleration,
            torque: s.motor_torque(),
            load_cell: s.load_cell,
        }
    }
}

/// Fixed three decimals, without a negative zero.
struct Fixed(f64);

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{:.3}", self.0);
        match s.strip_prefix('-') {
            Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => f.write_str(rest),
            _ => f.write_str(&s),
        }
    }
}

impl fmt::Display for TelemetryFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "T {} {} {} {} {} {}",
            self.t_ms,
            self.joint,
            Fixed(self.angle),
            Fixed(self.velocity),
            Fixed(self.acceleration),
            Fixed(self.torque)
        )?;
        if let Some(l) = self.load_cell {
            write!(f, " {}", Fixed(l))?;
        }
        Ok(())
    }
}

pub fn format_telemetry(frame: &TelemetryFrame) -> String {
    frame.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed telemetry line: {0}")]
pub struct TelemetryParseError(pub String);

pub fn parse_telemetry(line: &str) -> Result<TelemetryFrame, TelemetryParseError> {
    let bad = |what: &str| TelemetryParseError(what.to_string());
    let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
    if tokens.first() != Some(&"T") {
        return Err(bad("missing T prefix"));
    }
    if !(7..=8).contains(&tokens.len()) {
        return Err(bad("expected 7 or 8 tokens"));
    }
    let num = |t: &str| -> Result<f64, TelemetryParseError> {
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| TelemetryParseError(format!("bad number '{t}'")))
    };
    Ok(TelemetryFrame {
        t_ms: tokens[1]
            .parse()
            .map_err(|_| TelemetryParseError(format!("bad time '{}'", tokens[1])))?,
        joint: tokens[2]
            .parse()
            .map_err(|_| TelemetryParseError(format!("bad joint '{}'", tokens[2])))?,
        angle: num(tokens[3])?,
        velocity: num(tokens[4])?,
        acceleration: num(tokens[5])?,
        torque: num(tokens[6])?,
        load_cell: tokens.get(7).map(|t| num(t)).transpose()?,
    })
}

/// Payload of a successful `status` reply.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusReport {
    /// `None` while running, else a short reason token.
    pub halted: Option<String>,
    pub clock: String,
    /// Control rate in Hz.
    pub rate_hz: u32,
    pub time_ms: u64,
    pub joints: Vec<(JointId, JointKind, bool)>,
    pub actions: Vec<(u64, ActionKind, Status)>,
}

fn action_kind_from_str(s: &str) -> Option<ActionKind> {
    use ActionKind::*;
    [
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
    ]
    .into_iter()
    .find(|k| k.as_str() == s)
}

fn status_from_str(s: &str) -> Option<Status> {
    [
        Status::Pending,
        Status::Running,
        Status::Done,
        Status::Aborted,
    ]
    .into_iter()
    .find(|k| k.as_str() == s)
}

impl StatusReport {
    pub fn action(&self, id: u64) -> Option<Status> {
        self.actions.iter().find(|a| a.0 == id).map(|a| a.2)
    }

    pub fn parse(payload: &str) -> Option<StatusReport> {
        let mut report = StatusReport {
            halted: None,
            clock: String::new(),
            rate_hz: 0,
            time_ms: 0,
            joints: Vec::new(),
            actions: Vec::new(),
        };
        for field in payload.split_ascii_whitespace() {
            let (key, value) = field.split_once('=')?;
            match key {
                "state" => {
                    report.halted = match value.split_once(':') {
                        None if value == "running" => None,
                        Some(("halted", reason)) => Some(reason.to_string()),
                        _ => return None,
                    }
                }
                "clock" => report.clock = value.to_string(),
                "rate" => report.rate_hz = value.parse().ok()?,
                "t" => report.time_ms = value.parse().ok()?,
                "joints" => {
                    for item in value.split(',').filter(|s| !s.is_empty()) {
                        let mut it = item.split('/');
                        let j = it.next()?.parse().ok()?;
                        let k = it.next()?.parse().ok()?;
                        let cal = match it.next()? {
                            "cal" => true,
                            "uncal" => false,
                            _ => return None,
                        };
                        report.joints.push((j, k, cal));
                    }
                }
                "actions" => {
                    for item in value.split(',').filter(|s| !s.is_empty()) {
                        let mut it = item.split('/');
                        let id = it.next()?.parse().ok()?;
                        let k = action_kind_from_str(it.next()?)?;
                        let s = status_from_str(it.next()?)?;
                        report.actions.push((id, k, s));
                    }
                }
                _ => {}
            }
        }
        Some(report)
    }
}

impl fmt::Display for StatusReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.halted {
            None => f.write_str("state=running")?,
            Some(r) => write!(f, "state=halted:{r}")?,
        }
        write!(
            f,
            " clock={} rate={} t={} joints=",
            self.clock, self.rate_hz, self.time_ms
        )?;
        for (i, (j, k, cal)) in self.joints.iter().enumerate() {
            let sep = if i > 0 { "," } else { "" };
            let cal = if *cal { "cal" } else { "uncal" };
            write!(f, "{sep}{j}/{}/{cal}", k.as_str())?;
        }
        f.write_str(" actions=")?;
        for (i, (id, k, s)) in self.actions.iter().enumerate() {
            let sep = if i > 0 { "," } else { "" };
            write!(f, "{sep}{id}/{}/{}", k.as_str(), s.as_str())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JointName;

    const E: JointId = JointId::new(Side::Right, JointName::Elbow);

    #[test]
    fn grammar_examples() {
        assert_eq!(
            parse_command("moveto R.elbow abs 90 2 30").unwrap(),
            Command::MoveTo {
                joints: vec![E],
                target: Target::Absolute(90.0),
                epsilon: 2.0,
                velocity: 30.0
            }
        );
        assert_eq!(parse_command("panic\n").unwrap(), Command::Panic);
        let e = parse_command("moveto R.elbow abs").unwrap_err();
        assert_eq!(e.to_string(), "moveto: expected 6 tokens, got 3");
        assert_eq!(
            parse_command("lock R.knee").unwrap_err(),
            ParseError::MalformedJointId {
                verb: "lock".into(),
                token: "R.knee".into()
            }
        );
        for bad in ["1e3", ".5", "5.", "--1", "nan", "inf", "0x10", "1,5"] {
            let line = format!("constrain R.elbow {bad} 5");
            assert!(
                matches!(
                    parse_command(&line),
                    Err(ParseError::MalformedNumber { .. } | ParseError::MalformedJointId { .. })
                ),
                "{bad}"
            );
        }
        assert!(
            matches!(parse_command("frobnicate"), Err(ParseError::UnknownVerb(v)) if v == "frobnicate")
        );
        assert_eq!(parse_command("   "), Err(ParseError::Empty));
        let long = format!("status {}", "x".repeat(MAX_LINE));
        assert!(matches!(parse_command(&long), Err(ParseError::TooLong(_))));
    }

    #[test]
    fn responses() {
        let e = ControlError::TargetOutOfRange {
            joint: E,
            target: 130.0,
            limit: 115.0,
            upper: true,
        };
        assert_eq!(
            Response::from(&e).to_string(),
            "err TARGET_OUT_OF_RANGE elbow max 115"
        );
        assert_eq!(
            Response::from(&ControlError::SystemHalted).to_string(),
            "err HALTED system is shut down"
        );
        assert_eq!(Response::ok().to_string(), "ok");
        for line in ["ok", "ok 12", "err HALTED system is shut down", "err X"] {
            assert_eq!(Response::parse(line).unwrap().to_string(), line);
        }
        assert_eq!(Response::parse("T 1 R.elbow"), None);
    }

    #[test]
    fn telemetry_format() {
        let f = TelemetryFrame {
            t_ms: 12,
            joint: E,
            angle: 45.5,
            velocity: 10.0,
            acceleration: 0.0,
            torque: 1.25,
            load_cell: None,
        };
        assert_eq!(f.to_string(), "T 12 R.elbow 45.500 10.000 0.000 1.250");
        assert_eq!(parse_telemetry(&f.to_string()).unwrap(), f);
        let g = TelemetryFrame {
            velocity: -0.0001,
            load_cell: Some(-2.0),
            ..f
        };
        assert_eq!(
            g.to_string(),
            "T 12 R.elbow 45.500 0.000 0.000 1.250 -2.000"
        );
        assert!(parse_telemetry("T 12 R.elbow 1 2 3").is_err());
        assert!(parse_telemetry("X 12 R.elbow 1 2 3 4").is_err());
    }

    #[test]
    fn status_round_trip() {
        let r = StatusReport {
            halted: Some("panic".into()),
            clock: "lockstep".into(),
            rate_hz: 100,
            time_ms: 1230,
            joints: vec![(E, JointKind::Actuated, true)],
            actions: vec![
                (1, ActionKind::MoveTo, Status::Done),
                (2, ActionKind::Lock, Status::Running),
            ],
        };
        let s = r.to_string();
        assert_eq!(
            s,
            "state=halted:panic clock=lockstep rate=100 t=1230 joints=R.elbow/actuated/cal actions=1/moveto/done,2/lock/running"
        );
        assert_eq!(StatusReport::parse(&s).unwrap(), r);
        assert_eq!(r.action(2), Some(Status::Running));
    }
}
