use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sensebus::gateway::{EchoPeer, MessagingPattern, PeerOptions};
use sensebus::harness::{
    run_experiment, run_paired, run_scenario, write_paired, write_reports, ExperimentSpec, HarnessError, Parallelism,
    Transport,
};

#[derive(Parser)]
#[command(name = "sensebus", version, about = "Event-driven service middleware: benchmarks, scenarios, test peers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Middleware,
    Baseline,
    /// Both transports, with perf_rate_pct on the middleware row.
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    RequestResponse,
    RouterDealer,
    Pair,
}

#[derive(Subcommand)]
enum Command {
    /// Run a latency experiment and write a CSV report.
    Bench {
        #[arg(long, default_value_t = 1)]
        services: usize,
        #[arg(long, default_value_t = 1)]
        messages: usize,
        #[arg(long, value_enum, default_value_t = TransportArg::Both)]
        transport: TransportArg,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 1024)]
        payload_bytes: usize,
        /// Discarded repetitions run before the measured ones.
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Fan clients out one after another instead of on the rayon pool.
        #[arg(long)]
        sequential: bool,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a sensor script through rules and stub services.
    Scenario {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long)]
        script: PathBuf,
        /// Trace destination; stdout when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Serve echo replies over the gateway framing until killed.
    GatewayEcho {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        #[arg(long, value_enum, default_value_t = PatternArg::RequestResponse)]
        pattern: PatternArg,
    },
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(f) as Box<dyn Write>)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Bench {
            services,
            messages,
            transport,
            reps,
            payload_bytes,
            warmup,
            sequential,
            out,
        } => {
            let mut spec = ExperimentSpec::new(services, messages, Transport::Middleware).with_repetitions(reps);
            spec.payload_bytes = payload_bytes;
            spec.warmup = warmup;
            if sequential {
                spec = spec.with_parallelism(Parallelism::Sequential);
            }
            spec.validate()?;
            let sink = output(out.as_ref())?;
            match transport {
                TransportArg::Both => write_paired(sink, &[run_paired(&spec)?])?,
                TransportArg::Middleware => write_reports(sink, &[run_experiment(&spec)?])?,
                TransportArg::Baseline => {
                    write_reports(sink, &[run_experiment(&spec.with_transport(Transport::Baseline))?])?
                }
            }
            if let Some(p) = out {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Scenario {
            rules,
            fixtures,
            script,
            trace,
        } => {
            let log = run_scenario(&rules, &fixtures, &script)?;
            let mut sink = output(trace.as_ref())?;
            write!(sink, "{log}").map_err(|e| Failure::Runtime(e.to_string()))?;
            if !log.errors.is_empty() {
                return Err(Failure::Runtime(format!("{} rule engine error(s)", log.errors.len())));
            }
        }
        Command::GatewayEcho { listen, pattern } => {
            let pattern = match pattern {
                PatternArg::RequestResponse => MessagingPattern::RequestResponse,
                PatternArg::RouterDealer => MessagingPattern::RouterDealer,
                PatternArg::Pair => MessagingPattern::Pair,
            };
            let peer = EchoPeer::spawn_with(&listen, PeerOptions {
                pattern,
                ..PeerOptions::default()
            })
            .map_err(|e| Failure::Runtime(format!("{listen}: {e}")))?;
            println!("listening on {}", peer.local_addr());
            let _ = io::stdout().flush();
            peer.join();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
