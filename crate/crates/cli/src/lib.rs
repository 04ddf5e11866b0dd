//! Command-line front end for the `pfedmb` engine.
//!
//! ```text
//! pfedmb run --config exp.json --branches 5 --out results/
//! pfedmb compare --config exp.json --methods local,fedavg,pfedmb_plain_agg,pfedmb --seeds 0,1,2
//! pfedmb gradcheck --dims 8,16,4 --branches 3
//! pfedmb partition-stats --config exp.json
//! ```

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pfedmb::federation::Method;

pub use config::{ConfigError, DataSource, ExperimentConfig, RawConfig};

#[derive(Debug, Parser)]
#[command(name = "pfedmb", version, about = "Personalized federated learning with multi-branch layers")]
pub struct Cli {
    /// Worker threads for per-client work (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method end to end, fine-tune and write result files.
    Run(ConfigArgs),
    /// Run several methods on the same partition and seeds; writes a table.
    Compare(CompareArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write per-client class histograms of the configured partition.
    PartitionStats(ConfigArgs),
}

/// Config file plus flat overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Branches per layer (`B`).
    #[arg(long)]
    pub branches: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Clients sampled per round (`S`).
    #[arg(long)]
    pub clients: Option<usize>,
    /// Fraction of clients sampled per round.
    #[arg(long, conflicts_with = "clients")]
    pub participation: Option<f64>,
    #[arg(long)]
    pub lr_alpha: Option<f64>,
    #[arg(long)]
    pub lr_w: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $PFEDMB_OUT, then ./pfedmb-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One mixing vector shared by all layers.
    #[arg(long)]
    pub shared_alpha: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> RawConfig {
        RawConfig {
            method: self.method,
            branches: self.branches,
            rounds: self.rounds,
            clients_per_round: self.clients,
            participation: self.participation,
            lr_alpha: self.lr_alpha,
            lr_w: self.lr_w,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            output_dir: self.out.clone(),
            shared_alpha: self.shared_alpha.then_some(true),
            ..Default::default()
        }
    }

    /// Reads the file (if any), applies flags and resolves.
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        Ok(ExperimentConfig::resolve(file.merge(self.overrides()))?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Extra configs to compare; each must share data, partition and seeds.
    #[arg(long = "with")]
    pub with: Vec<PathBuf>,
    /// Methods to run from the base config (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    /// Seeds to repeat the comparison over (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub base: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Layer widths, input first.
    #[arg(long, value_delimiter = ',', default_value = "8,16,4")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub branches: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub shared_alpha: bool,
    /// Corrupt one analytic gradient entry (exercises the failure path).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Runs a parsed command line. Returns `Ok(false)` when the command ran but
/// reported a failure (a failed gradient check).
pub fn execute(cli: Cli) -> anyhow::Result<bool> {
    let threads = cli.threads;
    let run = move || match &cli.command {
        Command::Run(a) => commands::run(&a.resolve()?).map(|_| true),
        Command::Compare(a) => commands::compare(a).map(|_| true),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::PartitionStats(a) => commands::partition_stats(&a.resolve()?).map(|_| true),
    };
    match threads {
        Some(0) => anyhow::bail!("threads: must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(run),
        None => run(),
    }
}
