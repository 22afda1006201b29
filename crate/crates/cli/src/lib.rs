//! Command-line front end: argument parsing, configuration, and the
//! subcommands that chain ingestion, training and evaluation through files.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] crowd_irl::Error),
    #[error("training stopped after {0} iterations without converging")]
    NotConverged(usize),
}

fn core_exit_code(e: &crowd_irl::Error) -> i32 {
    use crowd_irl::Error as E;
    match e {
        E::Training { source, .. } => core_exit_code(source),
        E::Invariant(_) | E::NonFiniteCost { .. } | E::SingularGainSystem { .. } => EXIT_INVARIANT,
        _ => EXIT_INPUT,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Core(e) => core_exit_code(e),
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "crowd-irl", version, about = "Multi-agent maximum-entropy IRL for crowd navigation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML configuration file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores); results do not depend on it
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_name = "F")]
    pub fd_step: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    pub eps_psd: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    pub entropy_temp: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    pub beta: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub iters: Option<usize>,
    #[arg(long, global = true, value_name = "M")]
    pub rollouts: Option<usize>,
    /// Report covariance conditioning events on stderr
    #[arg(long, global = true)]
    pub diagnostics: bool,
}

impl GlobalArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = self.fd_step {
            cfg.solver.fd_step = v;
        }
        if let Some(v) = self.eps_psd {
            cfg.solver.eps_psd = v;
        }
        if let Some(v) = self.entropy_temp {
            cfg.solver.entropy_temp = v;
        }
        if let Some(v) = self.beta {
            cfg.training.beta = v;
        }
        if let Some(v) = self.iters {
            cfg.training.max_iters = v;
        }
        if let Some(v) = self.rollouts {
            cfg.training.rollouts = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mairl,
    Sairl,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Mairl => "mairl",
            Method::Sairl => "sairl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Cv,
    Gmm,
    Ebm,
    Mairl,
    Sairl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
    Svg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a tracker frame stream into filtered tracks and a scenario catalog
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate demonstrations from ground-truth weights on a preset scene
    Synth {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        /// Weight file to use instead of `synth.theta_star`
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn cost weights from a demonstration file
    Train {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, value_enum, default_value = "mairl")]
        method: Method,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Sample closed-loop rollouts of learned weights on a scene
    Rollout {
        #[arg(long)]
        theta: PathBuf,
        /// Scene taken from a demonstration file
        #[arg(long, conflicts_with = "preset")]
        demos: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a learned policy or baseline against held-out demonstrations
    Eval {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, value_enum)]
        baseline: Baseline,
        /// Weight file, required for mairl and sairl
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        best_of: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw RMSE CDF curves from JSONL reports, or a trajectory overlay
    Plot {
        #[arg(long, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long, conflicts_with = "reports")]
        demos: Option<PathBuf>,
        #[arg(long, requires = "demos")]
        theta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank methods from CSV reports by ADE, ties broken by FDE
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn command_with_defaults() -> clap::Command {
    Cli::command().after_long_help(format!(
        "Configuration keys and defaults (TOML, dotted keys are sections):\n{}",
        config::describe_defaults()
    ))
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command_with_defaults().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_INPUT;
        }
    };
    match commands::execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
