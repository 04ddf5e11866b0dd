use std::time::{Duration, Instant};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, AggregationStrategy};
use super::client::{client_local_learning, ClientState, ClientUpdate, LocalConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::evaluate_client;
use crate::nn::{AlphaParams, Network};
use crate::rng::{self, tag};

/// Global branch parameters and the round counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global: Network,
    /// Number of completed rounds.
    pub round: usize,
    /// Root of the client-sampling stream.
    pub seed: u64,
}

/// Draws `s` distinct clients out of `n` uniformly without replacement.
/// The result is sorted and depends only on `(seed, round)`.
pub fn sample_clients(seed: u64, n: usize, s: usize, round: usize) -> Result<Vec<usize>> {
    if s == 0 || s > n {
        return Err(Error::config(format!(
            "cannot sample {s} clients out of {n} (need 1 <= S <= N)"
        )));
    }
    if s == n {
        return Ok((0..n).collect());
    }
    let mut r = rng::stream(seed, &[tag::SAMPLING, round as u64]);
    let mut picked = index::sample(&mut r, n, s).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Protocol settings shared by every round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    /// `S`, clients sampled per round.
    pub clients_per_round: usize,
    pub local: LocalConfig,
    pub strategy: AggregationStrategy,
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// Zero-based index `t` of the round.
    pub round: usize,
    pub sampled: Vec<usize>,
    /// `(client, loss)` for every sampled client, after local learning.
    pub train_losses: Vec<(usize, f64)>,
    /// Test accuracy of every client's personalized model after the round.
    pub test_accuracies: Vec<f64>,
    /// Every client's mixing weights after the round, `[client][layer][branch]`.
    pub alphas: Vec<Vec<Vec<f64>>>,
    pub duration: Duration,
}

impl RoundReport {
    pub fn mean_test_accuracy(&self) -> f64 {
        mean(&self.test_accuracies)
    }

    pub fn mean_train_loss(&self) -> f64 {
        mean(&self.train_losses.iter().map(|(_, l)| *l).collect::<Vec<_>>())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Builds the round-zero server and client states: He-uniform branches drawn
/// from the experiment seed, uniform mixing weights for every client.
pub fn initialize(
    dims: &[usize],
    num_branches: usize,
    shared_alpha: bool,
    shards: Vec<(LabeledDataset, LabeledDataset)>,
    seed: u64,
) -> Result<(ServerState, Vec<ClientState>)> {
    let mut init_rng = rng::stream(seed, &[tag::INIT]);
    let global = Network::he_uniform(dims, num_branches, &mut init_rng)?;
    let layers = global.num_layers();
    let clients = shards
        .into_iter()
        .enumerate()
        .map(|(i, (train, test))| {
            if train.input_dim() != dims[0] || test.input_dim() != dims[0] {
                return Err(Error::config(format!(
                    "client {i} data has the wrong feature count for the network"
                )));
            }
            Ok(ClientState::new(
                i,
                train,
                test,
                AlphaParams::uniform(layers, num_branches, shared_alpha),
                seed,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    if clients.is_empty() {
        return Err(Error::config("no clients"));
    }
    Ok((
        ServerState {
            global,
            round: 0,
            seed: rng::derive_seed(seed, &[tag::SAMPLING]),
        },
        clients,
    ))
}

/// Test accuracy of each client's personalized model `(global, α_i)`.
pub fn evaluate_all(global: &Network, clients: &[ClientState]) -> Result<Vec<f64>> {
    clients
        .par_iter()
        .map(|c| evaluate_client(global, &c.alpha, &c.test))
        .collect()
}

/// One communication round: sample, train the sampled clients from the
/// current global weights (in parallel), aggregate, advance the counter.
/// Clients that are not sampled keep their mixing weights untouched.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &RoundConfig,
) -> Result<RoundReport> {
    let start = Instant::now();
    let t = server.round;
    let sampled = sample_clients(server.seed, clients.len(), cfg.clients_per_round, t)?;
    let global = &server.global;
    let mut updates: Vec<ClientUpdate> = clients
        .par_iter_mut()
        .filter(|c| sampled.binary_search(&c.client_id).is_ok())
        .map(|c| client_local_learning(c, global, &cfg.local, t))
        .collect::<Result<Vec<_>>>()?;
    updates.sort_by_key(|u| u.client_id);
    server.global = aggregate(&updates, cfg.strategy, &server.global)?;
    server.round += 1;
    let test_accuracies = evaluate_all(&server.global, clients)?;
    Ok(RoundReport {
        round: t,
        sampled,
        train_losses: updates.iter().map(|u| (u.client_id, u.train_loss)).collect(),
        test_accuracies,
        alphas: clients
            .iter()
            .map(|c| c.alpha.per_layer(server.global.num_layers()))
            .collect(),
        duration: start.elapsed(),
    })
}

/// Runs `rounds` further rounds and returns their reports.
pub fn run_training(
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &RoundConfig,
    rounds: usize,
) -> Result<Vec<RoundReport>> {
    (0..rounds).map(|_| run_round(server, clients, cfg)).collect()
}
