use std::fs;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use exokit_cli::{parse_script, plan, repl, run_script, Client, RunOptions};

#[derive(Parser, Debug)]
#[command(
    name = "exokit",
    version,
    about = "Console and script runner for exo-daemon"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Interactive session. Ctrl-C sends `panic`.
    Repl {
        #[arg(long)]
        connect: String,
    },
    /// Executes a script file line by line.
    Run {
        script: PathBuf,
        #[arg(long, required_unless_present = "dry_run")]
        connect: Option<String>,
        /// Parse and print the plan without connecting.
        #[arg(long)]
        dry_run: bool,
        /// Write sent lines and replies here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Cmd::Repl { connect } => {
            let out: Arc<Mutex<dyn io::Write + Send>> = Arc::new(Mutex::new(io::stdout()));
            let r = repl(connect.as_str(), io::stdin().lock(), out, |button| {
                if let Err(e) = ctrlc::set_handler(move || button.press()) {
                    eprintln!("exokit: cannot install interrupt handler: {e}");
                }
            });
            match r {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("exokit: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Run {
            script,
            connect,
            dry_run,
            transcript,
        } => {
            let text = match fs::read_to_string(&script) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("exokit: {}: {e}", script.display());
                    return ExitCode::FAILURE;
                }
            };
            let steps = match parse_script(&text) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("exokit: {}: {e}", script.display());
                    return ExitCode::FAILURE;
                }
            };
            if dry_run {
                for line in plan(&steps) {
                    println!("{line}");
                }
                return ExitCode::SUCCESS;
            }
            let addr = connect.expect("required without --dry-run");
            let mut client = match Client::connect(addr.as_str()) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("exokit: {addr}: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let mut file = match transcript.map(fs::File::create).transpose() {
                Ok(f) => f.map(BufWriter::new),
                Err(e) => {
                    eprintln!("exokit: transcript: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let opts = RunOptions {
                transcript: file.as_mut().map(|f| f as &mut dyn io::Write),
                ..RunOptions::default()
            };
            match run_script(&mut client, &steps, opts) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("exokit: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
