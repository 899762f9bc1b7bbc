//! The tick loop: sole owner of the simulated exoskeleton and controller.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use exokit_core::control::{
    Action, ControlError, ControlEvent, JerkParams, ProgramHandle, ShutdownReason, WaveParams,
};
use exokit_core::model::{ExoskeletonConfig, JointId};
use exokit_core::proto::{
    parse_command, Command, JointSelector, ParseError, Response, StatusReport, StopTarget,
    TelemetryFrame,
};
use exokit_core::runtime::Exoskeleton;

use crate::conn::Line;
use crate::link::LinkConn;
use crate::{ClockMode, DaemonConfig, DaemonError};

pub(crate) enum Msg {
    Connected {
        id: u64,
        out: Sender<String>,
        stream: TcpStream,
    },
    Line {
        id: u64,
        line: Line,
    },
    Disconnected {
        id: u64,
    },
    LinkFrame {
        link: u64,
        frame: TelemetryFrame,
    },
    LinkClosed {
        link: u64,
    },
    Shutdown,
}

/// Emission schedule of one telemetry stream. Frames go out on the first
/// tick at or after each due time; the first is due one period after start.
#[derive(Debug, Clone, Copy)]
struct Schedule {
    start_us: u64,
    period_us: f64,
    k: u64,
}

impl Schedule {
    fn new(start_us: u64, hz: f64) -> Self {
        Schedule {
            start_us,
            period_us: 1e6 / hz,
            k: 1,
        }
    }

    fn due_us(&self) -> u64 {
        self.start_us + (self.k as f64 * self.period_us).round() as u64
    }

    /// Whether a frame is due at `now_us`; advances past it if so.
    fn fire(&mut self, now_us: u64) -> bool {
        if now_us < self.due_us() {
            return false;
        }
        while self.due_us() <= now_us {
            self.k += 1;
        }
        true
    }
}

struct Client {
    out: Sender<String>,
    stream: TcpStream,
    subs: BTreeMap<JointId, Schedule>,
}

struct Link {
    handle: ProgramHandle,
    conn: LinkConn,
    pending: VecDeque<TelemetryFrame>,
    latest_ms: Option<u64>,
    closed: bool,
}

pub(crate) struct Server {
    clock: ClockMode,
    link_grace_ms: f64,
    link_barrier: Duration,
    exo: Exoskeleton,
    clients: BTreeMap<u64, Client>,
    links: BTreeMap<u64, Link>,
    next_link: u64,
    log: Option<(BufWriter<File>, Schedule)>,
    mailbox: Sender<Msg>,
    deferred: VecDeque<(u64, Line)>,
    stopping: bool,
}

fn sensed_joints(cfg: &ExoskeletonConfig) -> Vec<JointId> {
    cfg.joints()
        .filter(|jc| jc.kind.is_sensed())
        .map(|jc| jc.id)
        .collect()
}

fn require_sensed(cfg: &ExoskeletonConfig, joints: &[JointId]) -> Result<(), ControlError> {
    for &j in joints {
        match cfg.joint(j) {
            Err(_) => return Err(ControlError::NoSuchJoint(j)),
            Ok(jc) if !jc.kind.is_sensed() => return Err(ControlError::NotSensed(j)),
            Ok(_) => {}
        }
    }
    Ok(())
}

/// Maps an action command onto a controller action.
pub(crate) fn build_action(
    cfg: &ExoskeletonConfig,
    cmd: &Command,
    grace_ms: f64,
) -> Option<Result<Action, ControlError>> {
    Some(match cmd {
        Command::MoveTo {
            joints,
            target,
            epsilon,
            velocity,
        } => Action::move_to(cfg, joints, *target, *epsilon, *velocity),
        Command::Lock(j) => Action::lock(cfg, j),
        Command::Wave { side, cycles } => Action::wave(
            cfg,
            *side,
            WaveParams {
                cycles: *cycles,
                ..WaveParams::default()
            },
        ),
        Command::Vibrate {
            joints,
            amplitude,
            frequency,
            duration_ms,
        } => Action::vibrate(cfg, joints, *amplitude, *frequency, *duration_ms),
        Command::Mirror {
            source,
            destination,
            factor,
        } => Action::mirror(cfg, *source, *destination, *factor),
        Command::Amplify {
            joints,
            tau,
            filter,
        } => Action::amplify(cfg, joints, *tau, *filter),
        Command::Resist {
            joints,
            tau,
            filter,
        } => Action::resist(cfg, joints, *tau, *filter),
        Command::FilterVelocity {
            joint,
            v_min,
            v_max,
            tau_assist,
            tau_resist,
        } => Action::filter_velocity(cfg, *joint, *v_min, *v_max, *tau_assist, *tau_resist),
        Command::Jerks {
            joint,
            disp_min,
            disp_max,
            interval_min_ms,
            interval_max_ms,
            count,
        } => Action::add_jerks(
            cfg,
            *joint,
            JerkParams {
                disp_min: *disp_min,
                disp_max: *disp_max,
                interval_min_ms: *interval_min_ms,
                interval_max_ms: *interval_max_ms,
                count: *count,
            },
        ),
        Command::Constrain {
            joint,
            theta,
            epsilon,
        } => Action::constrain_to(cfg, *joint, *theta, *epsilon),
        Command::GuideTowards {
            joint,
            theta,
            epsilon,
            tau_assist,
            tau_resist,
        } => Action::guide_towards(cfg, *joint, *theta, *epsilon, *tau_assist, *tau_resist),
        Command::GuideAway {
            joint,
            theta,
            epsilon,
            tau_assist,
            tau_resist,
        } => Action::guide_away(cfg, *joint, *theta, *epsilon, *tau_assist, *tau_resist),
        Command::Link { pairs, .. } => Action::link(cfg, pairs, grace_ms),
        _ => return None,
    })
}

fn halt_token(reason: ShutdownReason) -> String {
    match reason {
        ShutdownReason::Panic => "panic".into(),
        ShutdownReason::RomViolation { joint, .. } => format!("rom_violation@{joint}"),
    }
}

impl Server {
    pub(crate) fn new(cfg: DaemonConfig, mailbox: Sender<Msg>) -> Result<Server, DaemonError> {
        let log = match &cfg.log {
            Some(path) => {
                let f = File::create(path).map_err(|source| DaemonError::Log {
                    path: path.clone(),
                    source,
                })?;
                let hz = f64::from(cfg.config.telemetry_rate_hz());
                Some((BufWriter::new(f), Schedule::new(0, hz)))
            }
            None => None,
        };
        Ok(Server {
            clock: cfg.clock,
            link_grace_ms: cfg.link_grace_ms,
            link_barrier: Duration::from_millis(cfg.link_barrier_ms),
            exo: Exoskeleton::new(cfg.config, cfg.seed),
            clients: BTreeMap::new(),
            links: BTreeMap::new(),
            next_link: 0,
            log,
            mailbox,
            deferred: VecDeque::new(),
            stopping: false,
        })
    }

    pub(crate) fn run(mut self, rx: Receiver<Msg>) {
        match self.clock {
            ClockMode::Lockstep => self.run_lockstep(&rx),
            ClockMode::Realtime => self.run_timed(&rx, 1.0),
            ClockMode::Fast(x) => self.run_timed(&rx, x),
        }
        self.finish();
    }

    fn run_lockstep(&mut self, rx: &Receiver<Msg>) {
        while !self.stopping {
            if let Some((id, line)) = self.deferred.pop_front() {
                self.handle_line(id, line, rx);
                continue;
            }
            match rx.recv() {
                Ok(msg) => self.on_msg(msg),
                Err(_) => break,
            }
        }
    }

    fn run_timed(&mut self, rx: &Receiver<Msg>, speed: f64) {
        let period = Duration::from_secs_f64(self.exo.world.dt_us() as f64 * 1e-6 / speed);
        let mut next = Instant::now() + period;
        while !self.stopping {
            loop {
                let now = Instant::now();
                if now >= next || self.stopping {
                    break;
                }
                match rx.recv_timeout(next - now) {
                    Ok(msg) => self.on_msg(msg),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => self.stopping = true,
                }
            }
            if self.stopping {
                break;
            }
            while let Some((id, line)) = self.deferred.pop_front() {
                self.handle_line(id, line, rx);
            }
            self.tick();
            self.flush_log();
            next += period;
            let now = Instant::now();
            if now > next + period * 50 {
                log::warn!("tick loop fell behind, resynchronizing");
                next = now + period;
            }
        }
    }

    fn finish(&mut self) {
        self.flush_log();
        for (_, c) in std::mem::take(&mut self.clients) {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
        for (_, l) in std::mem::take(&mut self.links) {
            l.conn.close();
        }
    }

    fn flush_log(&mut self) {
        if let Some((w, _)) = &mut self.log {
            if let Err(e) = w.flush() {
                log::error!("telemetry log: {e}");
            }
        }
    }

    fn on_msg(&mut self, msg: Msg) {
        match msg {
            Msg::Connected { id, out, stream } => {
                self.clients.insert(
                    id,
                    Client {
                        out,
                        stream,
                        subs: BTreeMap::new(),
                    },
                );
            }
            Msg::Line { id, line } => self.deferred.push_back((id, line)),
            Msg::Disconnected { id } => {
                self.clients.remove(&id);
            }
            Msg::LinkFrame { link, frame } => {
                if let Some(l) = self.links.get_mut(&link) {
                    l.latest_ms = Some(frame.t_ms);
                    l.pending.push_back(frame);
                }
            }
            Msg::LinkClosed { link } => {
                if let Some(l) = self.links.get_mut(&link) {
                    log::warn!("link {link} to peer closed");
                    l.closed = true;
                }
            }
            Msg::Shutdown => self.stopping = true,
        }
    }

    fn reply(&mut self, id: u64, resp: Response) {
        if let Some(c) = self.clients.get(&id) {
            if c.out.send(resp.to_string()).is_err() {
                self.clients.remove(&id);
            }
        }
    }

    fn handle_line(&mut self, id: u64, line: Line, rx: &Receiver<Msg>) {
        let parsed = match line {
            Line::Text(s) => parse_command(&s),
            Line::TooLong(n) => Err(ParseError::TooLong(n)),
            Line::NotUtf8 => Err(ParseError::NotUtf8),
        };
        let resp = match parsed {
            Ok(cmd) => self.execute(id, cmd, rx),
            Err(ParseError::Empty) => return,
            Err(e) => Response::from(&e),
        };
        self.reply(id, resp);
    }

    fn status(&self) -> StatusReport {
        let cfg = self.exo.config();
        StatusReport {
            halted: self.exo.controller.halt_reason().map(halt_token),
            clock: self.clock.to_string(),
            rate_hz: cfg.control_rate_hz(),
            time_ms: self.exo.world.time_us() / 1000,
            joints: cfg
                .joints()
                .map(|jc| (jc.id, jc.kind, cfg.is_calibrated(jc.id)))
                .collect(),
            actions: self
                .exo
                .controller
                .programs()
                .into_iter()
                .map(|p| (p.handle.0, p.kind, p.status))
                .collect(),
        }
    }

    fn execute(&mut self, client: u64, cmd: Command, rx: &Receiver<Msg>) -> Response {
        let result = match cmd {
            Command::Status => return Response::ok_with(self.status().to_string()),
            Command::Panic => {
                self.exo.controller.panic();
                log::warn!("panic requested");
                return Response::ok();
            }
            Command::Step(n) => return self.step(n, rx),
            Command::Sense(joints) => return self.sense(&joints),
            Command::StreamOn { joints, hz } => return self.stream_on(client, joints, hz),
            Command::StreamOff(joints) => {
                if let Some(c) = self.clients.get_mut(&client) {
                    match joints {
                        JointSelector::All => c.subs.clear(),
                        JointSelector::Joints(js) => js.iter().for_each(|j| {
                            c.subs.remove(j);
                        }),
                    }
                }
                return Response::ok();
            }
            _ if self.exo.controller.is_halted() => Err(ControlError::SystemHalted),
            Command::Calibrate(j) => {
                return match self.exo.calibrate(j) {
                    Ok(()) => Response::ok(),
                    Err(e) => Response::from(&e),
                }
            }
            Command::ConfigSave(path) => {
                return match self.exo.config().save(std::path::Path::new(&path)) {
                    Ok(()) => Response::ok(),
                    Err(e) => Response::from(&e),
                }
            }
            Command::Unlock(joints) => {
                if let Some(&j) = joints.iter().find(|j| !self.exo.config().contains(**j)) {
                    Err(ControlError::NoSuchJoint(j))
                } else {
                    self.exo.controller.stop_joints(&joints);
                    Ok(())
                }
            }
            Command::Stop(StopTarget::All) => {
                for p in self.exo.controller.programs() {
                    if !p.status.is_finished() {
                        let _ = self.exo.controller.stop(p.handle);
                    }
                }
                Ok(())
            }
            Command::Stop(StopTarget::Action(h)) => self.exo.controller.stop(ProgramHandle(h)),
            Command::Link {
                ref peer,
                ref pairs,
            } => {
                let action = match build_action(self.exo.config(), &cmd, self.link_grace_ms) {
                    Some(Ok(a)) => a,
                    Some(Err(e)) => return Response::from(&e),
                    None => unreachable!("link is an action"),
                };
                return self.link(peer, pairs.iter().map(|p| p.source).collect(), action);
            }
            cmd => match build_action(self.exo.config(), &cmd, self.link_grace_ms) {
                Some(Ok(action)) => self.exo.controller.run_program(action).map(|_| ()),
                Some(Err(e)) => Err(e),
                None => unreachable!("every remaining command is an action"),
            },
        };
        match result {
            Ok(()) => Response::ok(),
            Err(e) => Response::from(&e),
        }
    }

    fn link(&mut self, peer: &str, mut sources: Vec<JointId>, action: Action) -> Response {
        sources.sort();
        sources.dedup();
        let id = self.next_link + 1;
        let hz = self.exo.config().control_rate_hz();
        let conn = match LinkConn::open(id, peer, &sources, hz, self.mailbox.clone()) {
            Ok(c) => c,
            Err(e) => return Response::err("PEER_UNREACHABLE", format!("{peer}: {e}")),
        };
        let handle = match self.exo.controller.run_program(action) {
            Ok(h) => h,
            Err(e) => {
                conn.close();
                return Response::from(&e);
            }
        };
        self.next_link = id;
        self.links.insert(
            id,
            Link {
                handle,
                conn,
                pending: VecDeque::new(),
                latest_ms: None,
                closed: false,
            },
        );
        Response::ok()
    }

    fn sense(&self, joints: &[JointId]) -> Response {
        let cfg = self.exo.config();
        if let Err(e) = require_sensed(cfg, joints) {
            return Response::from(&e);
        }
        let t_ms = self.exo.world.time_us() / 1000;
        let frames: Vec<String> = joints
            .iter()
            .map(|&j| {
                let s = self.exo.world.read_state(j).expect("validated joint");
                TelemetryFrame::from_state(t_ms, j, &s).to_string()
            })
            .collect();
        Response::ok_with(frames.join(" ; "))
    }

    fn stream_on(&mut self, client: u64, joints: JointSelector, hz: f64) -> Response {
        let cfg = self.exo.config();
        let joints = match joints {
            JointSelector::All => sensed_joints(cfg),
            JointSelector::Joints(js) => {
                if let Err(e) = require_sensed(cfg, &js) {
                    return Response::from(&e);
                }
                js
            }
        };
        if hz.is_nan() || hz <= 0.0 {
            return Response::err("BAD_RANGE", format!("stream: rate '{hz}' must be positive"));
        }
        let hz = hz.min(f64::from(cfg.control_rate_hz()));
        let now = self.exo.world.time_us();
        if let Some(c) = self.clients.get_mut(&client) {
            for j in joints {
                c.subs.insert(j, Schedule::new(now, hz));
            }
        }
        Response::ok()
    }

    fn step(&mut self, n: u64, rx: &Receiver<Msg>) -> Response {
        if self.clock != ClockMode::Lockstep {
            return Response::err(
                "CLOCK",
                format!("step: needs lockstep clock, running {}", self.clock),
            );
        }
        for _ in 0..n {
            self.link_barrier(rx);
            if self.stopping {
                break;
            }
            self.tick();
        }
        self.flush_log();
        Response::ok_with((self.exo.world.time_us() / 1000).to_string())
    }

    /// Lockstep only: waits until every open link has delivered the peer's
    /// state for the end of the coming tick.
    fn link_barrier(&mut self, rx: &Receiver<Msg>) {
        let end_ms = (self.exo.world.time_us() + self.exo.world.dt_us()) / 1000;
        let deadline = Instant::now() + self.link_barrier;
        loop {
            let waiting = self
                .links
                .values()
                .any(|l| !l.closed && l.latest_ms.is_none_or(|t| t < end_ms));
            if !waiting || self.stopping {
                return;
            }
            let now = Instant::now();
            if now >= deadline {
                log::warn!("link barrier timed out at {end_ms} ms");
                return;
            }
            match rx.recv_timeout(deadline - now) {
                Ok(msg) => self.on_msg(msg),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => self.stopping = true,
            }
        }
    }

    fn tick(&mut self) {
        let now = self.exo.world.time_us();
        let horizon_ms = (now + self.exo.world.dt_us()) / 1000;
        let lockstep = self.clock == ClockMode::Lockstep;
        for l in self.links.values_mut() {
            while let Some(f) = l.pending.front() {
                if lockstep && f.t_ms > horizon_ms {
                    break;
                }
                self.exo
                    .controller
                    .feed_remote(l.handle, f.joint, f.angle, now);
                l.pending.pop_front();
            }
        }

        self.exo.step();
        for e in self.exo.controller.take_events() {
            match e {
                ControlEvent::Halted { reason, .. } => log::warn!("halted: {reason}"),
                e => log::info!("{e:?}"),
            }
        }

        let snap = self.exo.world.snapshot();
        let t_ms = snap.time_us / 1000;
        let frame = |j: JointId| {
            TelemetryFrame::from_state(t_ms, j, snap.joint(j).expect("configured joint"))
                .to_string()
        };
        let mut gone = Vec::new();
        for (&id, c) in self.clients.iter_mut() {
            for (&j, sched) in c.subs.iter_mut() {
                if sched.fire(snap.time_us) && c.out.send(frame(j)).is_err() {
                    gone.push(id);
                    break;
                }
            }
        }
        for id in gone {
            self.clients.remove(&id);
        }
        if let Some((w, sched)) = &mut self.log {
            if sched.fire(snap.time_us) {
                for j in sensed_joints(self.exo.config()) {
                    if let Err(e) = writeln!(w, "{}", frame(j)) {
                        log::error!("telemetry log: {e}");
                    }
                }
            }
        }

        let controller = &self.exo.controller;
        self.links.retain(|id, l| {
            let live = controller
                .status(l.handle)
                .is_some_and(|s| !s.is_finished());
            if !live {
                log::info!("link {id} finished");
                l.conn.close();
            }
            live
        });
    }
}
