use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;

use clap::Parser;
use exokit_daemon::{spawn, ClockMode, DaemonConfig};

/// Runs a simulated exoskeleton behind the line protocol.
#[derive(Parser, Debug)]
#[command(name = "exo-daemon", version)]
struct Args {
    /// Exoskeleton configuration file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// realtime, fast:<x> or lockstep
    #[arg(long, default_value = "realtime")]
    clock: ClockMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Telemetry log file. EXOKIT_LOG takes precedence.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut cfg = match DaemonConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("exo-daemon: {e}");
            return ExitCode::FAILURE;
        }
    };
    cfg.listen = args.listen;
    cfg.clock = args.clock;
    cfg.seed = args.seed;
    cfg.log = std::env::var_os("EXOKIT_LOG")
        .map(PathBuf::from)
        .or(args.log);
    let handle = match spawn(cfg) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("exo-daemon: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("listening on {}", handle.local_addr());
    let (tx, rx) = mpsc::channel();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = tx.send(());
    }) {
        eprintln!("exo-daemon: cannot install signal handler: {e}");
    }
    let _ = rx.recv();
    handle.shutdown();
    ExitCode::SUCCESS
}
