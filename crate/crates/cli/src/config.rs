//! Experiment configuration: a JSON file with flat flag overrides.
//!
//! Precedence is flag > file > built-in default. Resolution collects every
//! violation before failing so one run reports all of them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use pfedmb::data::{
    load_csv_many, partition_splits, DataSplits, LabeledDataset, Partition, PartitionScheme,
    PartitionSpec, SyntheticTaskSpec,
};
use pfedmb::federation::{Method, ProtocolConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_OUT_DIR: &str = "pfedmb-out";
pub const OUT_ENV: &str = "PFEDMB_OUT";

/// Where client data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticTaskSpec),
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
}

/// The file layout: every key optional so missing ones can be listed
/// together.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub method: Option<Method>,
    pub num_clients: Option<usize>,
    pub clients_per_round: Option<usize>,
    pub participation: Option<f64>,
    pub rounds: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub branches: Option<usize>,
    pub lr_alpha: Option<f64>,
    pub lr_w: Option<f64>,
    pub shared_alpha: Option<bool>,
    pub hidden_dims: Option<Vec<usize>>,
    pub data: Option<DataSource>,
    pub partition: Option<PartitionScheme>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RawConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies `flags` on top of `self`. Setting either participation form
    /// on the command line discards the other one from the file.
    pub fn merge(mut self, flags: RawConfig) -> Self {
        if flags.clients_per_round.is_some() || flags.participation.is_some() {
            self.clients_per_round = flags.clients_per_round;
            self.participation = flags.participation;
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(
            method, num_clients, rounds, epochs, batch_size, branches, lr_alpha, lr_w, shared_alpha,
            hidden_dims, data, partition, seed, output_dir
        );
        self
    }
}

/// Every violation found while resolving a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub num_clients: usize,
    /// `S`, after resolving a participation fraction.
    pub clients_per_round: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub branches: usize,
    pub lr_alpha: f64,
    pub lr_w: f64,
    pub shared_alpha: bool,
    pub hidden_dims: Vec<usize>,
    pub data: DataSource,
    pub partition: PartitionScheme,
    pub seed: u64,
    /// Not part of the experiment identity.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

fn rate_ok(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

impl ExperimentConfig {
    /// Applies defaults and checks every field.
    pub fn resolve(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut bad = Vec::new();
        macro_rules! required {
            ($f:ident) => {{
                if raw.$f.is_none() {
                    bad.push(format!("{}: missing required field", stringify!($f)));
                }
                raw.$f.clone()
            }};
        }
        let method = required!(method);
        let num_clients = required!(num_clients);
        let rounds = required!(rounds);
        let lr_alpha = required!(lr_alpha);
        let lr_w = required!(lr_w);
        let hidden_dims = required!(hidden_dims);
        let data = required!(data);
        let partition = required!(partition);
        let seed = required!(seed);

        let single = method.is_some_and(|m| m.requires_single_branch());
        let branches = match (raw.branches, single) {
            (Some(b), _) => b,
            (None, true) => 1,
            (None, false) => {
                bad.push("branches: missing required field".into());
                0
            }
        };
        if raw.branches.is_some() && branches == 0 {
            bad.push("branches: must be at least 1".into());
        }
        if let Some(m) = method {
            if m.requires_single_branch() && branches != 1 {
                bad.push(format!("branches: method {m} uses a single branch, got {branches}"));
            }
        }
        if num_clients == Some(0) {
            bad.push("num_clients: must be at least 1".into());
        }
        let epochs = raw.epochs.unwrap_or(DEFAULT_EPOCHS);
        if epochs == 0 {
            bad.push("epochs: must be at least 1".into());
        }
        let batch_size = raw.batch_size.unwrap_or(DEFAULT_BATCH_SIZE);
        if batch_size == 0 {
            bad.push("batch_size: must be at least 1".into());
        }
        for (name, v) in [("lr_alpha", lr_alpha), ("lr_w", lr_w)] {
            if v.is_some_and(|v| !rate_ok(v)) {
                bad.push(format!("{name}: must be a finite non-negative number"));
            }
        }
        if hidden_dims.as_ref().is_some_and(|h| h.contains(&0)) {
            bad.push("hidden_dims: layer widths must be positive".into());
        }

        let clients_per_round = match (raw.clients_per_round, raw.participation, num_clients) {
            (Some(_), Some(_), _) => {
                bad.push("clients_per_round: give either clients_per_round or participation, not both".into());
                0
            }
            (Some(s), None, n) => {
                if s == 0 || n.is_some_and(|n| s > n) {
                    bad.push(format!(
                        "clients_per_round: {s} must lie in [1, num_clients={}]",
                        n.map_or("?".into(), |n| n.to_string())
                    ));
                }
                s
            }
            (None, p, n) => {
                let p = p.unwrap_or(1.0);
                if !(p > 0.0 && p <= 1.0) {
                    bad.push(format!("participation: {p} must lie in (0, 1]"));
                }
                n.map_or(0, |n| ((p * n as f64).round() as usize).clamp(1, n.max(1)))
            }
        };

        if let Some(DataSource::Synthetic(spec)) = &data {
            if let Err(e) = spec.validate() {
                bad.push(format!("data.synthetic: {e}"));
            }
            if spec.test_samples_per_class == 0 {
                bad.push("data.synthetic.test_samples_per_class: clients need a test split".into());
            }
            if let (Some(scheme), Some(n)) = (&partition, num_clients) {
                let ps = PartitionSpec {
                    scheme: scheme.clone(),
                    num_clients: n,
                    seed: 0,
                };
                if let Err(e) = ps.validate(spec.num_classes) {
                    bad.push(format!("partition: {e}"));
                }
            }
        }

        if !bad.is_empty() {
            return Err(ConfigError { violations: bad });
        }
        let output_dir = raw
            .output_dir
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok(Self {
            method: method.unwrap(),
            num_clients: num_clients.unwrap(),
            clients_per_round,
            rounds: rounds.unwrap(),
            epochs,
            batch_size,
            branches,
            lr_alpha: lr_alpha.unwrap(),
            lr_w: lr_w.unwrap(),
            shared_alpha: raw.shared_alpha.unwrap_or(false),
            hidden_dims: hidden_dims.unwrap(),
            data: data.unwrap(),
            partition: partition.unwrap(),
            seed: seed.unwrap(),
            output_dir,
        })
    }

    /// Canonical JSON of everything that determines results.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical config, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            method: self.method,
            rounds: self.rounds,
            clients_per_round: self.clients_per_round,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_alpha: self.lr_alpha,
            lr_w: self.lr_w,
            num_branches: self.branches,
            shared_alpha: self.shared_alpha,
            hidden_dims: self.hidden_dims.clone(),
            seed: self.seed,
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            scheme: self.partition.clone(),
            num_clients: self.num_clients,
            seed: self.seed,
        }
    }

    /// The same experiment with another method; baselines drop to one branch.
    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            branches: if method.requires_single_branch() { 1 } else { self.branches },
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let data = match &self.data {
            DataSource::Synthetic(s) => DataSource::Synthetic(SyntheticTaskSpec {
                seed,
                ..s.clone()
            }),
            other => other.clone(),
        };
        Self {
            seed,
            data,
            ..self.clone()
        }
    }

    /// Everything except the method and branch count, for comparing runs.
    pub fn shared_setup(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("method");
            m.remove("branches");
        }
        v.to_string()
    }
}

/// Loaded splits: train, optional validation, test (last).
pub struct Prepared {
    pub splits: Vec<LabeledDataset>,
    pub partition: Partition,
}

impl Prepared {
    pub fn shards(&self) -> anyhow::Result<Vec<(LabeledDataset, LabeledDataset)>> {
        let test = self.splits.len() - 1;
        Ok(self
            .partition
            .train_test_shards(&self.splits[0], &self.splits[test], test)?)
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> anyhow::Result<Prepared> {
    let splits = match &cfg.data {
        DataSource::Synthetic(spec) => {
            let DataSplits {
                train,
                validation,
                test,
            } = spec.generate_splits()?;
            let mut v = vec![train];
            v.extend(validation);
            v.extend(test);
            v
        }
        DataSource::Csv { train, test } => load_csv_many(&[train.as_path(), test.as_path()])?,
    };
    let refs: Vec<&LabeledDataset> = splits.iter().collect();
    let partition = partition_splits(&refs, &cfg.partition_spec()).context("partitioning data")?;
    Ok(Prepared { splits, partition })
}
