//! `ccein` — experiment front end for the collaborative embodied-intelligence
//! network simulator.
//!
//! Every subcommand writes a self-describing run directory:
//!
//! ```text
//! <out>/
//!   manifest            what ran, with a SHA-256 digest of every output
//!   config/config.toml  the configuration text the run used (verbatim)
//!   artifacts/          worlds, traces, checkpoints, graymaps
//!   metrics/            CSV tables
//! ```
//!
//! Runs are deterministic: the same command with the same inputs rewrites
//! byte-identical files. Exit codes are part of the interface:
//!
//! | code | meaning                                              |
//! |------|------------------------------------------------------|
//! | 0    | success                                              |
//! | 2    | usage error (bad flags, missing input file)          |
//! | 3    | configuration error (invalid config or checkpoint)   |
//! | 4    | runtime error (engine failure, unwritable output)    |

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// The command line itself is unusable (exit 2).
    Usage(String),
    /// Inputs parsed but their contents are invalid (exit 3).
    Config(String),
    /// The run itself failed (exit 4).
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

/// Transmission scheme under test. Baselines are named schemes rather than
/// separate binaries, so every command shares one evaluation code path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    /// Learned controller (requires `--checkpoint`).
    Adaptive,
    /// Fixed mid-table action on sub-channel 0, no deferral.
    Static,
    /// Urgency-keyed action table with load-based channel choice.
    Greedy,
}

/// Classifier output class, for `explain`.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassArg {
    Victim,
    Obstacle,
    Supply,
    Clear,
}

#[derive(Debug, Parser)]
#[command(
    name = "ccein",
    version,
    about = "Deterministic rescue-network simulator: scenarios, policy training, evaluation, sweeps and decision explanations",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; omitted, the built-in defaults apply.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base seed every random stream of the run is derived from.
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    seed: u64,

    /// Run directory to write (default: runs/<subcommand>).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the world a given seed evaluates on and write it out.
    Scenario,

    /// Train the transmission controller with PPO and save checkpoints.
    Train {
        /// Train up to this many iterations (overrides `train.iterations`).
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
        /// Continue from a previously saved checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },

    /// Run one scheme across consecutive seeds and write every metric table.
    Eval {
        /// Scheme to evaluate.
        #[arg(long, value_enum)]
        scheme: Scheme,
        /// Policy checkpoint (required for the adaptive scheme).
        #[arg(long, value_name = "PATH", required_if_eq("scheme", "adaptive"))]
        checkpoint: Option<PathBuf>,
        /// Number of evaluation episodes, on seeds seed, seed+1, ...
        #[arg(long, default_value_t = 10, value_name = "N")]
        runs: usize,
    },

    /// Evaluate adaptive, static and greedy side by side in one table.
    Ablate {
        /// Policy checkpoint for the adaptive scheme.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Episodes per scheme, on seeds seed, seed+1, ...
        #[arg(long, default_value_t = 10, value_name = "N")]
        runs: usize,
    },

    /// Sweep channel bandwidth and record the transmit power a scheme picks.
    SweepBandwidth {
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long, value_name = "PATH", required_if_eq("scheme", "adaptive"))]
        checkpoint: Option<PathBuf>,
    },

    /// Sweep channel SNR and record end-of-episode semantic consistency.
    SweepSnr {
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long, value_name = "PATH", required_if_eq("scheme", "adaptive"))]
        checkpoint: Option<PathBuf>,
    },

    /// Render the Grad-CAM explanation of a recorded observation.
    Explain {
        /// Run directory of a previous `eval` (holds worlds and traces).
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        /// Observing device id.
        #[arg(long, value_name = "ID")]
        device: u32,
        /// Tick of the observation.
        #[arg(long, value_name = "TICK")]
        tick: u64,
        /// Class to explain the patch against.
        #[arg(long, value_enum)]
        class: ClassArg,
        /// Episode seed within the run (default: the run's lowest).
        #[arg(long, value_name = "SEED")]
        episode: Option<u64>,
        /// Classifier checkpoint (default: the built-in trained classifier).
        #[arg(long, value_name = "PATH")]
        classifier: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Scenario => "scenario",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::SweepBandwidth { .. } => "sweep-bandwidth",
            Command::SweepSnr { .. } => "sweep-snr",
            Command::Explain { .. } => "explain",
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    let ctx = commands::Context {
        config_path: cli.config.clone(),
        seed: cli.seed,
        out,
        quiet: cli.quiet,
        command_line: manifest::shell_join(std::env::args().skip(1)),
    };

    match &cli.command {
        Command::Scenario => commands::scenario(&ctx),
        Command::Train { iterations, resume } => {
            commands::train(&ctx, *iterations, resume.as_deref())
        }
        Command::Eval { scheme, checkpoint, runs } => {
            commands::eval(&ctx, *scheme, checkpoint.as_deref(), *runs)
        }
        Command::Ablate { checkpoint, runs } => commands::ablate(&ctx, checkpoint, *runs),
        Command::SweepBandwidth { scheme, checkpoint } => {
            commands::sweep_bandwidth(&ctx, *scheme, checkpoint.as_deref())
        }
        Command::SweepSnr { scheme, checkpoint } => {
            commands::sweep_snr(&ctx, *scheme, checkpoint.as_deref())
        }
        Command::Explain { run, device, tick, class, episode, classifier } => commands::explain(
            &ctx,
            commands::ExplainRequest {
                run,
                device: *device,
                tick: *tick,
                class: *class,
                episode: *episode,
                classifier: classifier.as_deref(),
            },
        ),
    }
}
