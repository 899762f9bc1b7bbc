//! Networked service around a simulated exoskeleton.
//!
//! One thread owns the world and the controller and runs the tick loop.
//! Connection threads only parse bytes into lines and forward them through an
//! ordered mailbox; replies and telemetry travel back over per-connection
//! channels so lines never interleave.

mod conn;
mod link;
mod server;

use std::fmt;
use std::io;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;

use exokit_core::model::{ExoskeletonConfig, ModelError};
use thiserror::Error;

/// Default hold time of a link after its last remote sample.
pub const LINK_GRACE_MS: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockMode {
    Realtime,
    /// Simulated time runs this many times faster than wall time.
    Fast(f64),
    /// Time advances only on `step` commands.
    Lockstep,
}

impl fmt::Display for ClockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClockMode::Realtime => f.write_str("realtime"),
            ClockMode::Fast(x) => write!(f, "fast:{x}"),
            ClockMode::Lockstep => f.write_str("lockstep"),
        }
    }
}

impl FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "realtime" => Ok(ClockMode::Realtime),
            "lockstep" => Ok(ClockMode::Lockstep),
            _ => {
                let x = s
                    .strip_prefix("fast:")
                    .and_then(|x| x.parse::<f64>().ok())
                    .filter(|x| *x > 0.0 && x.is_finite())
                    .ok_or_else(|| {
                        format!("bad clock mode '{s}', expected realtime, fast:<x> or lockstep")
                    })?;
                Ok(ClockMode::Fast(x))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub config: ExoskeletonConfig,
    /// e.g. `127.0.0.1:0` for an ephemeral port.
    pub listen: String,
    pub clock: ClockMode,
    pub seed: u64,
    /// Telemetry log, one wire line per frame of every sensed joint.
    pub log: Option<PathBuf>,
    pub link_grace_ms: f64,
    /// How long a lockstep tick waits for linked peers to catch up.
    pub link_barrier_ms: u64,
}

impl DaemonConfig {
    pub fn new(config: ExoskeletonConfig) -> Self {
        DaemonConfig {
            config,
            listen: "127.0.0.1:0".to_string(),
            clock: ClockMode::Lockstep,
            seed: 0,
            log: None,
            link_grace_ms: LINK_GRACE_MS,
            link_barrier_ms: 1000,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DaemonError> {
        Ok(Self::new(
            ExoskeletonConfig::load(path).map_err(DaemonError::ConfigLoad)?,
        ))
    }
}

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("cannot load config: {0}")]
    ConfigLoad(ModelError),
    #[error("cannot open telemetry log {path}: {source}")]
    Log { path: PathBuf, source: io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// A running daemon. Dropping the handle shuts it down.
pub struct DaemonHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    mailbox: mpsc::Sender<server::Msg>,
    threads: Vec<JoinHandle<()>>,
}

impl DaemonHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the tick loop, closes every connection and flushes the log.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.mailbox.send(server::Msg::Shutdown);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Binds the listen address and starts serving.
pub fn spawn(cfg: DaemonConfig) -> Result<DaemonHandle, DaemonError> {
    let listener = TcpListener::bind(&cfg.listen).map_err(|source| DaemonError::Bind {
        addr: cfg.listen.clone(),
        source,
    })?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let server = server::Server::new(cfg, tx.clone())?;
    let tick = std::thread::Builder::new()
        .name("exo-tick".into())
        .spawn(move || server.run(rx))?;
    let accept = {
        let stop = stop.clone();
        let tx = tx.clone();
        std::thread::Builder::new()
            .name("exo-accept".into())
            .spawn(move || conn::accept_loop(listener, tx, stop))?
    };
    log::info!("listening on {addr}");
    Ok(DaemonHandle {
        addr,
        stop,
        mailbox: tx,
        threads: vec![accept, tick],
    })
}
