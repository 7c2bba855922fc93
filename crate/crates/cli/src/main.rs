//! Batch experiment runner: execute configured runs or strategy sweeps and
//! emit metric artifacts, dump communication graphs, preview schedules.

mod graph;
mod preview;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gossipbench_core::{ConfigError, DataError, EngineError};

/// Exit codes: 2 config, 3 divergence, 4 I/O.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Divergence(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Divergence(m) => write!(f, "divergence: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            ConfigError::Data(DataError::Io(_)) | ConfigError::Data(DataError::Csv(_)) => {
                CliError::Io(e.to_string())
            }
            ConfigError::Engine(EngineError::Diverged { .. }) => {
                CliError::Divergence(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Diverged { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "gossipbench",
    version,
    about = "Decentralized SGD simulator and benchmark runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a configured run or sweep and write metric artifacts.
    Run(run::RunArgs),
    /// Inspect communication graphs.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Inspect schedules without training.
    #[command(subcommand)]
    Schedule(ScheduleCommand),
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Print a topology, its mixing matrix and spectral report as JSON.
    Dump(graph::DumpArgs),
}

#[derive(Subcommand)]
enum ScheduleCommand {
    /// Print the per-epoch (k, degree, lr, message volume) table of a config.
    Preview(preview::PreviewArgs),
}

/// Config overrides mirroring the config keys; flags win over the file.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    #[arg(long)]
    strategy: Option<String>,
    /// Graph kind for the generic `decentralized` strategy.
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    n_workers: Option<usize>,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    gamma_k: Option<f64>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    heterogeneity: Option<f64>,
    #[arg(long)]
    update_order: Option<String>,
    /// Comma-separated artifact formats (csv, ndjson).
    #[arg(long, value_delimiter = ',')]
    emit: Option<Vec<String>>,
}

impl Overrides {
    pub fn apply(&self, config: &mut gossipbench_core::ExperimentConfig) {
        if let Some(strategy) = &self.strategy {
            if self.topology.is_none() {
                config.topology.kind = None;
            }
            config.strategy = strategy.clone();
        }
        if let Some(topology) = &self.topology {
            config.topology.kind = Some(topology.clone());
        }
        if let Some(n) = self.n_workers {
            config.n_workers = n;
        }
        if let Some(k0) = self.k0 {
            config.k0 = Some(k0);
        }
        if let Some(gamma_k) = self.gamma_k {
            config.gamma_k = Some(gamma_k);
        }
        if let Some(k_min) = self.k_min {
            config.k_min = k_min;
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        if let Some(batch_size) = self.batch_size {
            config.batch_size = batch_size;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(h) = self.heterogeneity {
            config.heterogeneity = h;
        }
        if let Some(order) = &self.update_order {
            config.update_order = order.clone();
        }
        if let Some(emit) = &self.emit {
            config.emit = emit.clone();
        }
    }
}

/// Write to stdout, treating a closed pipe (e.g. `| head`) as success.
pub fn print_stdout(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
    {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError::Io(e.to_string())),
    }
}

/// Output directory: `--out`, then the config's `out`, then
/// `$GOSSIPBENCH_OUT/<config stem>`, then `out/<config stem>`.
pub fn resolve_out_dir(
    flag: Option<&PathBuf>,
    config_out: Option<&PathBuf>,
    config_path: &std::path::Path,
) -> PathBuf {
    if let Some(out) = flag {
        return out.clone();
    }
    if let Some(out) = config_out {
        return out.clone();
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    let root = std::env::var_os("GOSSIPBENCH_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"));
    root.join(stem)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::execute(args),
        Command::Graph(GraphCommand::Dump(args)) => graph::execute(args),
        Command::Schedule(ScheduleCommand::Preview(args)) => preview::execute(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("{error}");
            ExitCode::from(error.code())
        }
    }
}
