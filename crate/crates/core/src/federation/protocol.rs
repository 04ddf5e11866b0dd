//! End-to-end method runs: the multi-branch protocol, its plain-averaging
//! ablation, FedAvg and local-only training, each followed by fine-tuning.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::AggregationStrategy;
use super::client::{fine_tune, local_learning, ClientState, LocalConfig, Pass, PersonalizedModel};
use super::server::{initialize, run_training, RoundConfig, RoundReport, ServerState};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::evaluate_client;
use crate::nn::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Multi-branch layers with alpha-weighted aggregation.
    Pfedmb,
    /// Multi-branch layers with plain sample-weighted aggregation.
    PfedmbPlainAgg,
    /// Single-branch FedAvg.
    Fedavg,
    /// Independent per-client training, no communication.
    Local,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Local, Method::Fedavg, Method::PfedmbPlainAgg, Method::Pfedmb];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pfedmb => "pfedmb",
            Method::PfedmbPlainAgg => "pfedmb_plain_agg",
            Method::Fedavg => "fedavg",
            Method::Local => "local",
        }
    }

    pub fn strategy(self) -> AggregationStrategy {
        match self {
            Method::Pfedmb => AggregationStrategy::AlphaWeighted,
            _ => AggregationStrategy::PlainWeighted,
        }
    }

    pub fn learns_alpha(self) -> bool {
        matches!(self, Method::Pfedmb | Method::PfedmbPlainAgg)
    }

    /// Baselines run a single-branch network.
    pub fn requires_single_branch(self) -> bool {
        matches!(self, Method::Fedavg | Method::Local)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown method '{s}' (expected one of pfedmb, pfedmb_plain_agg, fedavg, local)"
                ))
            })
    }
}

/// Everything a method run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub method: Method,
    pub rounds: usize,
    pub clients_per_round: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_alpha: f64,
    pub lr_w: f64,
    pub num_branches: usize,
    pub shared_alpha: bool,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn local_config(&self) -> LocalConfig {
        LocalConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_alpha: self.lr_alpha,
            lr_w: self.lr_w,
            learn_alpha: self.method.learns_alpha(),
        }
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            clients_per_round: self.clients_per_round,
            local: self.local_config(),
            strategy: self.method.strategy(),
        }
    }

    pub fn dims(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(num_classes))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_branches == 0 {
            return Err(Error::config("number of branches must be at least 1"));
        }
        if self.method.requires_single_branch() && self.num_branches != 1 {
            return Err(Error::config(format!(
                "method {} uses a single branch, got branches={}",
                self.method, self.num_branches
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        self.local_config().validate()
    }
}

/// Result of a full method run.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub method: Method,
    pub reports: Vec<RoundReport>,
    /// Final global state; absent for local-only training.
    pub server: Option<ServerState>,
    pub clients: Vec<ClientState>,
    /// Fine-tuned per-client models.
    pub personalized: Vec<PersonalizedModel>,
    /// Test accuracy of each fine-tuned model.
    pub final_accuracies: Vec<f64>,
}

impl ProtocolOutcome {
    /// Simplex weights per client and layer of the fine-tuned models.
    pub fn final_alphas(&self) -> Vec<Vec<Vec<f64>>> {
        self.personalized
            .iter()
            .map(|m| m.alpha.per_layer(m.params.num_layers()))
            .collect()
    }

    /// Mixing weights per client and layer at the end of federated training
    /// (before fine-tuning).
    pub fn trained_alphas(&self) -> Vec<Vec<Vec<f64>>> {
        let layers = self.personalized.first().map_or(0, |m| m.params.num_layers());
        self.clients.iter().map(|c| c.alpha.per_layer(layers)).collect()
    }
}

/// Runs one method end to end on per-client `(train, test)` shards.
pub fn run_protocol(
    cfg: &ProtocolConfig,
    shards: Vec<(LabeledDataset, LabeledDataset)>,
) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    let first = shards
        .first()
        .ok_or_else(|| Error::config("no client shards"))?;
    let dims = cfg.dims(first.0.input_dim(), first.0.num_classes());
    let (mut server, mut clients) =
        initialize(&dims, cfg.num_branches, cfg.shared_alpha, shards, cfg.seed)?;
    let local = cfg.local_config();

    if cfg.method == Method::Local {
        return run_local_only(cfg, server.global, clients);
    }

    let reports = run_training(&mut server, &mut clients, &cfg.round_config(), cfg.rounds)?;
    let personalized: Vec<PersonalizedModel> = clients
        .par_iter()
        .map(|c| fine_tune(c, &server.global, &local))
        .collect::<Result<_>>()?;
    let final_accuracies = score(&personalized, &clients)?;
    Ok(ProtocolOutcome {
        method: cfg.method,
        reports,
        server: Some(server),
        clients,
        personalized,
        final_accuracies,
    })
}

fn score(models: &[PersonalizedModel], clients: &[ClientState]) -> Result<Vec<f64>> {
    models
        .par_iter()
        .zip(clients)
        .map(|(m, c)| evaluate_client(&m.params, &m.alpha, &c.test))
        .collect()
}

/// Each client trains its own copy of the initial network for `rounds × E`
/// epochs (in per-round chunks with the same batch streams the federated
/// methods use), then fine-tunes.
fn run_local_only(
    cfg: &ProtocolConfig,
    init: Network,
    clients: Vec<ClientState>,
) -> Result<ProtocolOutcome> {
    let local = cfg.local_config();
    let init_layers = init.num_layers();
    let mut models = vec![init; clients.len()];
    let mut reports = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let start = Instant::now();
        let stepped: Vec<(Network, f64, f64)> = clients
            .par_iter()
            .zip(models.par_iter())
            .map(|(c, m)| {
                let (params, _) = local_learning(c, m, &c.alpha, &local, Pass::Round(t))?;
                let loss = params.loss(&c.alpha, c.train.features(), c.train.labels())?;
                let acc = evaluate_client(&params, &c.alpha, &c.test)?;
                Ok((params, loss, acc))
            })
            .collect::<Result<_>>()?;
        let mut train_losses = Vec::with_capacity(clients.len());
        let mut test_accuracies = Vec::with_capacity(clients.len());
        for (i, (params, loss, acc)) in stepped.into_iter().enumerate() {
            models[i] = params;
            train_losses.push((i, loss));
            test_accuracies.push(acc);
        }
        reports.push(RoundReport {
            round: t,
            sampled: (0..clients.len()).collect(),
            train_losses,
            test_accuracies,
            alphas: clients.iter().map(|c| c.alpha.per_layer(init_layers)).collect(),
            duration: start.elapsed(),
        });
    }
    let personalized: Vec<PersonalizedModel> = clients
        .par_iter()
        .zip(models.par_iter())
        .map(|(c, m)| fine_tune(c, m, &local))
        .collect::<Result<_>>()?;
    let final_accuracies = score(&personalized, &clients)?;
    Ok(ProtocolOutcome {
        method: Method::Local,
        reports,
        server: None,
        clients,
        personalized,
        final_accuracies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    LocalOnly,
    Fedavg,
}

/// FedAvg or local-only training with the same settings otherwise.
pub fn run_baseline(
    kind: BaselineKind,
    cfg: &ProtocolConfig,
    shards: Vec<(LabeledDataset, LabeledDataset)>,
) -> Result<ProtocolOutcome> {
    let cfg = ProtocolConfig {
        method: match kind {
            BaselineKind::LocalOnly => Method::Local,
            BaselineKind::Fedavg => Method::Fedavg,
        },
        num_branches: 1,
        ..cfg.clone()
    };
    run_protocol(&cfg, shards)
}
