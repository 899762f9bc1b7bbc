//! Per-tick torque laws of the augmentation strategies.
//!
//! Every function here is a pure function of the joint's instantaneous
//! angle/velocity and the strategy parameters. Velocities whose magnitude is
//! at or below the deadband count as "at rest" and never receive effort,
//! style or guidance torque.

/// Which motion directions an effort strategy reacts to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DirectionFilter {
    Positive,
    Negative,
    #[default]
    Both,
}

impl DirectionFilter {
    pub fn admits(self, omega: f64) -> bool {
        match self {
            DirectionFilter::Positive => omega > 0.0,
            DirectionFilter::Negative => omega < 0.0,
            DirectionFilter::Both => omega != 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DirectionFilter::Positive => "pos",
            DirectionFilter::Negative => "neg",
            DirectionFilter::Both => "both",
        }
    }
}

/// Angular area `center ± epsilon`, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub center: f64,
    pub epsilon: f64,
}

impl Area {
    pub fn new(center: f64, epsilon: f64) -> Self {
        Area { center, epsilon }
    }

    pub fn lo(&self) -> f64 {
        self.center - self.epsilon
    }

    pub fn hi(&self) -> f64 {
        self.center + self.epsilon
    }

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.lo() && angle <= self.hi()
    }

    /// True if moving with velocity `omega` from `angle` heads toward the center.
    fn approaching(&self, angle: f64, omega: f64) -> bool {
        let to_center = self.center - angle;
        to_center != 0.0 && to_center.signum() == omega.signum()
    }
}

fn moving(omega: f64, deadband: f64) -> bool {
    omega.abs() > deadband
}

pub fn resist_torque(omega: f64, tau: f64, filter: DirectionFilter, deadband: f64) -> f64 {
    if moving(omega, deadband) && filter.admits(omega) {
        -tau * omega.signum()
    } else {
        0.0
    }
}

pub fn amplify_torque(omega: f64, tau: f64, filter: DirectionFilter, deadband: f64) -> f64 {
    if moving(omega, deadband) && filter.admits(omega) {
        tau * omega.signum()
    } else {
        0.0
    }
}

/// Resists above `v_max`, assists moving joints below `v_min`.
pub fn filter_velocity_torque(
    omega: f64,
    v_min: f64,
    v_max: f64,
    tau_assist: f64,
    tau_resist: f64,
    deadband: f64,
) -> f64 {
    let speed = omega.abs();
    if speed > v_max {
        -tau_resist * omega.signum()
    } else if moving(omega, deadband) && speed < v_min {
        tau_assist * omega.signum()
    } else {
        0.0
    }
}

/// Full authority back toward the nearest boundary whenever outside the area.
pub fn constrain_torque(angle: f64, area: Area, max_torque: f64) -> f64 {
    if angle > area.hi() {
        -max_torque
    } else if angle < area.lo() {
        max_torque
    } else {
        0.0
    }
}

pub fn guide_towards_torque(
    angle: f64,
    omega: f64,
    area: Area,
    tau_assist: f64,
    tau_resist: f64,
    deadband: f64,
) -> f64 {
    if area.contains(angle) || !moving(omega, deadband) {
        0.0
    } else if area.approaching(angle, omega) {
        tau_assist * omega.signum()
    } else {
        -tau_resist * omega.signum()
    }
}

/// Opposes motion toward the area's center and aids motion away from it,
/// both inside and outside the area.
pub fn guide_away_torque(
    angle: f64,
    omega: f64,
    area: Area,
    tau_assist: f64,
    tau_resist: f64,
    deadband: f64,
) -> f64 {
    if !moving(omega, deadband) {
        0.0
    } else if area.approaching(angle, omega) {
        -tau_resist * omega.signum()
    } else {
        tau_assist * omega.signum()
    }
}

/// Saturated PD toward a reference angle and velocity.
pub fn pd_torque(kp: f64, kd: f64, reference: (f64, f64), angle: f64, omega: f64) -> f64 {
    kp * (reference.0 - angle) + kd * (reference.1 - omega)
}

/// Trapezoidal (or triangular, for short moves) velocity profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidProfile {
    start: f64,
    dir: f64,
    peak_speed: f64,
    accel: f64,
    t_accel: f64,
    t_cruise: f64,
}

impl TrapezoidProfile {
    /// `speed` in deg/s and `accel` in deg/s² must be positive.
    pub fn new(start: f64, end: f64, speed: f64, accel: f64) -> Self {
        let distance = (end - start).abs();
        let dir = if end >= start { 1.0 } else { -1.0 };
        let ramp_distance = speed * speed / accel;
        let (peak_speed, t_cruise) = if ramp_distance >= distance {
            ((distance * accel).sqrt(), 0.0)
        } else {
            (speed, (distance - ramp_distance) / speed)
        };
        TrapezoidProfile {
            start,
            dir,
            peak_speed,
            accel,
            t_accel: peak_speed / accel,
            t_cruise,
        }
    }

    /// Total duration in seconds.
    pub fn duration(&self) -> f64 {
        2.0 * self.t_accel + self.t_cruise
    }

    pub fn end(&self) -> f64 {
        self.start + self.dir * self.distance()
    }

    fn distance(&self) -> f64 {
        self.peak_speed * (self.t_accel + self.t_cruise)
    }

    /// (angle, velocity) at `t` seconds after the start.
    pub fn sample(&self, t: f64) -> (f64, f64) {
        let (a, v, ta, tc) = (self.accel, self.peak_speed, self.t_accel, self.t_cruise);
        let (s, vel) = if t <= 0.0 {
            (0.0, 0.0)
        } else if t < ta {
            (0.5 * a * t * t, a * t)
        } else if t < ta + tc {
            (0.5 * a * ta * ta + v * (t - ta), v)
        } else if t < 2.0 * ta + tc {
            let td = 2.0 * ta + tc - t;
            (self.distance() - 0.5 * a * td * td, a * td)
        } else {
            (self.distance(), 0.0)
        };
        (self.start + self.dir * s, self.dir * vel)
    }
}
