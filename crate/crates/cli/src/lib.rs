//! Console client for the exoskeleton daemon and a runner for `.exo` command
//! scripts.
//!
//! Script lines are protocol commands, `wait <ms>`, `wait_done`, blank lines
//! or `#` comments. A transcript written while running is itself a valid
//! script: every line sent is recorded verbatim and each reply follows as a
//! comment.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use exokit_core::control::Status;
use exokit_core::proto::{parse_command, Command, Response, StatusReport, GREETING};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connection: {0}")]
    Io(#[from] io::Error),
    #[error("unexpected greeting '{0}'")]
    Greeting(String),
    #[error("connection closed by daemon")]
    Closed,
    #[error("unreadable reply '{0}'")]
    BadReply(String),
}

/// Synchronous request/response client. Telemetry lines that arrive while
/// waiting for a reply are kept in arrival order.
pub struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    frames: VecDeque<String>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut greeting = String::new();
        if reader.read_line(&mut greeting)? == 0 {
            return Err(ClientError::Closed);
        }
        let greeting = greeting.trim_end();
        if greeting != GREETING {
            return Err(ClientError::Greeting(greeting.to_string()));
        }
        Ok(Client {
            writer: stream,
            reader,
            frames: VecDeque::new(),
        })
    }

    fn read_raw(&mut self) -> Result<String, ClientError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ClientError::Closed);
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }

    /// Sends one line and waits for its reply.
    pub fn request(&mut self, line: &str) -> Result<Response, ClientError> {
        writeln!(self.writer, "{line}")?;
        loop {
            let l = self.read_raw()?;
            if l.starts_with("T ") {
                self.frames.push_back(l);
                continue;
            }
            return Response::parse(&l).ok_or(ClientError::BadReply(l));
        }
    }

    pub fn status(&mut self) -> Result<StatusReport, ClientError> {
        match self.request("status")? {
            Response::Ok(Some(p)) => StatusReport::parse(&p).ok_or(ClientError::BadReply(p)),
            other => Err(ClientError::BadReply(other.to_string())),
        }
    }

    /// Telemetry lines received so far.
    pub fn take_frames(&mut self) -> Vec<String> {
        self.frames.drain(..).collect()
    }

    /// Waits up to `timeout` for the next telemetry line.
    pub fn next_frame(&mut self, timeout: Duration) -> Result<Option<String>, ClientError> {
        if let Some(f) = self.frames.pop_front() {
            return Ok(Some(f));
        }
        self.reader.get_ref().set_read_timeout(Some(timeout))?;
        let r = self.read_raw();
        self.reader.get_ref().set_read_timeout(None)?;
        match r {
            Ok(l) if l.starts_with("T ") => Ok(Some(l)),
            Ok(l) => Err(ClientError::BadReply(l)),
            Err(ClientError::Io(e))
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn close(self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptLine {
    Command { text: String, command: Command },
    Wait { ms: f64 },
    WaitDone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    /// 1-based line number in the source.
    pub line: usize,
    pub item: ScriptLine,
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ScriptParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>, ScriptParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let err = |message: String| ScriptParseError { line, message };
        let mut tokens = t.split_ascii_whitespace();
        let item = match tokens.next() {
            Some("wait") => {
                let ms = tokens
                    .next()
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v >= 0.0 && v.is_finite())
                    .ok_or_else(|| err(format!("wait: expected a duration in ms in '{t}'")))?;
                if tokens.next().is_some() {
                    return Err(err(format!("wait: trailing tokens in '{t}'")));
                }
                ScriptLine::Wait { ms }
            }
            Some("wait_done") if tokens.next().is_none() => ScriptLine::WaitDone,
            _ => ScriptLine::Command {
                command: parse_command(t).map_err(|e| err(e.to_string()))?,
                text: t.to_string(),
            },
        };
        out.push(ScriptStep { line, item });
    }
    Ok(out)
}

/// What `--dry-run` prints: one line per planned step.
pub fn plan(script: &[ScriptStep]) -> Vec<String> {
    script
        .iter()
        .map(|s| match &s.item {
            ScriptLine::Command { command, .. } => format!("{:>4}  send {command}", s.line),
            ScriptLine::Wait { ms } => format!("{:>4}  wait {ms} ms", s.line),
            ScriptLine::WaitDone => format!("{:>4}  wait until the last action finishes", s.line),
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("line {line}: {response}")]
    Daemon { line: usize, response: Response },
    #[error("transcript: {0}")]
    Transcript(io::Error),
}

pub struct RunOptions<'a> {
    /// Receives every line sent and, as a comment, every reply.
    pub transcript: Option<&'a mut dyn Write>,
    /// Status poll period of `wait_done` outside lockstep.
    pub poll: Duration,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions {
            transcript: None,
            poll: Duration::from_millis(100),
        }
    }
}

struct Runner<'a, 'b> {
    client: &'a mut Client,
    opts: RunOptions<'b>,
}

impl Runner<'_, '_> {
    fn record(&mut self, sent: &str, resp: &Response) -> Result<(), RunError> {
        if let Some(t) = self.opts.transcript.as_mut() {
            writeln!(t, "{sent}")
                .and_then(|_| writeln!(t, "# {resp}"))
                .map_err(RunError::Transcript)?;
        }
        Ok(())
    }

    fn send(&mut self, line: usize, text: &str) -> Result<Response, RunError> {
        let resp = self.client.request(text)?;
        self.record(text, &resp)?;
        if resp.is_ok() {
            Ok(resp)
        } else {
            Err(RunError::Daemon {
                line,
                response: resp,
            })
        }
    }
}

fn last_action_finished(report: &StatusReport) -> bool {
    report.halted.is_some()
        || report
            .actions
            .iter()
            .max_by_key(|a| a.0)
            .is_none_or(|a| a.2.is_finished())
}

/// Runs a parsed script, stopping at the first error reply. In lockstep
/// `wait` becomes `step` and `wait_done` steps one tick at a time.
pub fn run_script(
    client: &mut Client,
    script: &[ScriptStep],
    opts: RunOptions<'_>,
) -> Result<(), RunError> {
    let first = client.status()?;
    let lockstep = first.clock == "lockstep";
    let rate = f64::from(first.rate_hz.max(1));
    let mut r = Runner { client, opts };
    for step in script {
        match &step.item {
            ScriptLine::Command { text, .. } => {
                r.send(step.line, text)?;
            }
            ScriptLine::Wait { ms } if lockstep => {
                let ticks = (ms * rate / 1000.0).round() as u64;
                if ticks > 0 {
                    r.send(step.line, &format!("step {ticks}"))?;
                }
            }
            ScriptLine::Wait { ms } => {
                if let Some(t) = r.opts.transcript.as_mut() {
                    writeln!(t, "wait {ms}").map_err(RunError::Transcript)?;
                }
                std::thread::sleep(Duration::from_secs_f64(ms / 1000.0));
            }
            ScriptLine::WaitDone => loop {
                if last_action_finished(&r.client.status()?) {
                    break;
                }
                if lockstep {
                    r.send(step.line, "step 1")?;
                } else {
                    std::thread::sleep(r.opts.poll);
                }
            },
        }
    }
    Ok(())
}

/// Status of the highest-numbered action, if any.
pub fn last_action(report: &StatusReport) -> Option<Status> {
    report.actions.iter().max_by_key(|a| a.0).map(|a| a.2)
}

type SharedOut = Arc<Mutex<dyn Write + Send>>;

fn print_line(out: &SharedOut, line: &str) {
    let mut o = out.lock().unwrap_or_else(|e| e.into_inner());
    let _ = writeln!(o, "{line}");
    let _ = o.flush();
}

/// Handle that sends `panic` on the session's connection from any thread.
#[derive(Clone)]
pub struct PanicButton(Arc<Mutex<TcpStream>>);

impl PanicButton {
    pub fn press(&self) {
        if let Ok(mut s) = self.0.lock() {
            let _ = s.write_all(b"panic\n");
        }
    }
}

/// Interactive session. Lines from `input` are sent verbatim; replies and
/// telemetry are printed whole to `out` as they arrive. Returns once input
/// ends and every sent line has been answered.
pub fn repl(
    addr: impl ToSocketAddrs,
    input: impl BufRead,
    out: SharedOut,
    on_connect: impl FnOnce(PanicButton),
) -> Result<(), ClientError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut greeting = String::new();
    reader.read_line(&mut greeting)?;
    if greeting.trim_end() != GREETING {
        return Err(ClientError::Greeting(greeting.trim_end().to_string()));
    }
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    on_connect(PanicButton(writer.clone()));

    let answered = Arc::new(Mutex::new(0u64));
    let printer = {
        let out = out.clone();
        let answered = answered.clone();
        std::thread::spawn(move || {
            let mut line = String::new();
            loop {
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        let l = line.trim_end_matches(['\r', '\n']);
                        if !l.starts_with("T ") {
                            *answered.lock().unwrap_or_else(|e| e.into_inner()) += 1;
                        }
                        print_line(&out, l);
                    }
                }
            }
        })
    };

    let mut sent = 0u64;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "quit" || line == "exit" {
            break;
        }
        writer
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .write_all(format!("{line}\n").as_bytes())?;
        sent += 1;
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while *answered.lock().unwrap_or_else(|e| e.into_inner()) < sent && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    let _ = stream.shutdown(Shutdown::Both);
    let _ = printer.join();
    Ok(())
}
