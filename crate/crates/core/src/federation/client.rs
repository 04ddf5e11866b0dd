use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{AlphaParams, Network, Wrt};
use crate::rng::{self, tag, StreamRng};

/// Hyperparameters of one client's local learning pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_alpha: f64,
    pub lr_w: f64,
    /// When false the mixing weights stay fixed and the alpha phase is skipped.
    pub learn_alpha: bool,
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("local epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        for (name, lr) in [("lr_alpha", self.lr_alpha), ("lr_w", self.lr_w)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be a non-negative finite number")));
            }
        }
        Ok(())
    }
}

/// Which slot of a client's random streams a pass draws its batch order from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Round(usize),
    FineTune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Alpha,
    Weights,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Alpha => "alpha",
            Phase::Weights => "weights",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Phase::Alpha => tag::ALPHA_PHASE,
            Phase::Weights => tag::WEIGHT_PHASE,
        }
    }
}

/// One participant: its private shards and persistent mixing logits.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub alpha: AlphaParams,
    /// Root of this client's random streams.
    pub rng_seed: u64,
}

impl ClientState {
    pub fn new(
        client_id: usize,
        train: LabeledDataset,
        test: LabeledDataset,
        alpha: AlphaParams,
        experiment_seed: u64,
    ) -> Self {
        Self {
            client_id,
            train,
            test,
            alpha,
            rng_seed: rng::derive_seed(experiment_seed, &[tag::CLIENT, client_id as u64]),
        }
    }

    /// `n_i`
    pub fn num_samples(&self) -> usize {
        self.train.len()
    }

    pub(crate) fn phase_rng(&self, pass: Pass, phase: Phase) -> StreamRng {
        match pass {
            Pass::Round(t) => rng::stream(self.rng_seed, &[phase.tag(), t as u64]),
            Pass::FineTune => rng::stream(self.rng_seed, &[tag::FINE_TUNE, phase.tag()]),
        }
    }
}

/// What a client returns to the server after local learning.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub num_samples: usize,
    /// Locally trained branch parameters.
    pub params: Network,
    /// Mixing weights per layer (simplex values, expanded in shared mode).
    pub alpha: Vec<Vec<f64>>,
    /// Mean training loss of the returned model on the client's shard.
    pub train_loss: f64,
}

/// Mini-batch SGD over one parameter group for `epochs` passes. Each epoch
/// reshuffles the shard with `rng`.
#[allow(clippy::too_many_arguments)]
pub fn run_epochs(
    net: &mut Network,
    alpha: &mut AlphaParams,
    data: &LabeledDataset,
    phase: Phase,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut StreamRng,
    client_id: usize,
) -> Result<()> {
    let wrt = match phase {
        Phase::Alpha => Wrt::Alpha,
        Phase::Weights => Wrt::Weights,
    };
    let non_finite = |epoch| Error::NonFiniteLoss {
        client: client_id,
        phase: phase.name(),
        epoch,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(rng);
        for batch in order.chunks(batch_size) {
            let x = data.features().select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let (loss, grads) = match net.loss_and_grads(alpha, &x, &y, wrt) {
                Err(Error::NonFiniteActivation { .. }) => return Err(non_finite(epoch)),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(non_finite(epoch));
            }
            match phase {
                Phase::Alpha => alpha.sgd_step(&grads.d_alpha_logits, learning_rate)?,
                Phase::Weights => net.sgd_step(&grads, learning_rate)?,
            }
        }
    }
    Ok(())
}

/// Both local phases: first the mixing logits with the received weights
/// frozen, then all branch weights and biases with the new mixing weights
/// frozen. Returns the trained pair without touching the client.
pub fn local_learning(
    client: &ClientState,
    start_params: &Network,
    start_alpha: &AlphaParams,
    cfg: &LocalConfig,
    pass: Pass,
) -> Result<(Network, AlphaParams)> {
    cfg.validate()?;
    if client.train.is_empty() {
        return Err(Error::usage(format!("client {} has an empty shard", client.client_id)));
    }
    let mut params = start_params.clone();
    let mut alpha = start_alpha.clone();
    if cfg.learn_alpha {
        let mut r = client.phase_rng(pass, Phase::Alpha);
        run_epochs(
            &mut params,
            &mut alpha,
            &client.train,
            Phase::Alpha,
            cfg.epochs,
            cfg.batch_size,
            cfg.lr_alpha,
            &mut r,
            client.client_id,
        )?;
    }
    let mut r = client.phase_rng(pass, Phase::Weights);
    run_epochs(
        &mut params,
        &mut alpha,
        &client.train,
        Phase::Weights,
        cfg.epochs,
        cfg.batch_size,
        cfg.lr_w,
        &mut r,
        client.client_id,
    )?;
    Ok((params, alpha))
}

/// One round of client-side work: trains from the received global weights
/// and the client's persisted mixing logits, stores the new logits on the
/// client and returns the update for aggregation.
pub fn client_local_learning(
    client: &mut ClientState,
    global: &Network,
    cfg: &LocalConfig,
    round: usize,
) -> Result<ClientUpdate> {
    let (params, alpha) = local_learning(client, global, &client.alpha, cfg, Pass::Round(round))?;
    let train_loss = params.loss(&alpha, client.train.features(), client.train.labels())?;
    client.alpha = alpha;
    Ok(ClientUpdate {
        client_id: client.client_id,
        num_samples: client.num_samples(),
        alpha: client.alpha.per_layer(params.num_layers()),
        params,
        train_loss,
    })
}

/// A client's final model: never sent to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedModel {
    pub params: Network,
    pub alpha: AlphaParams,
}

/// Post-training local adaptation using both phases on the client's own data.
pub fn fine_tune(client: &ClientState, global: &Network, cfg: &LocalConfig) -> Result<PersonalizedModel> {
    let (params, alpha) = local_learning(client, global, &client.alpha, cfg, Pass::FineTune)?;
    Ok(PersonalizedModel { params, alpha })
}
