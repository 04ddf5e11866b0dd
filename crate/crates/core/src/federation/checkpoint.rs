//! JSON checkpoints sufficient to resume a federated run bit-exactly.
//!
//! Client batch orders come from streams keyed by `(client seed, round)`, so
//! a client's position in its random stream is fully described by its root
//! seed and the next round to be played.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::client::ClientState;
use super::server::ServerState;
use crate::error::{Error, Result};
use crate::nn::{AlphaParams, Network};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[input, hidden…, classes]`
    pub dims: Vec<usize>,
    pub num_branches: usize,
    pub shared_alpha: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngPosition {
    pub seed: u64,
    pub next_round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub architecture: Architecture,
    pub round: usize,
    pub sampling_seed: u64,
    /// Global branch weights and biases as nested arrays.
    pub global: Network,
    /// `[client][row][branch]`
    pub client_alpha_logits: Vec<Vec<Vec<f64>>>,
    pub client_rng: Vec<RngPosition>,
}

impl Checkpoint {
    pub fn capture(server: &ServerState, clients: &[ClientState]) -> Self {
        let shared = clients.first().is_some_and(|c| c.alpha.is_shared());
        Self {
            version: CHECKPOINT_VERSION,
            architecture: Architecture {
                dims: server.global.dims(),
                num_branches: server.global.num_branches(),
                shared_alpha: shared,
            },
            round: server.round,
            sampling_seed: server.seed,
            global: server.global.clone(),
            client_alpha_logits: clients.iter().map(|c| c.alpha.logits().to_vec()).collect(),
            client_rng: clients
                .iter()
                .map(|c| RngPosition {
                    seed: c.rng_seed,
                    next_round: server.round,
                })
                .collect(),
        }
    }

    /// Restores server state and writes the saved mixing logits and stream
    /// seeds into `clients` (which supply the data shards).
    pub fn restore(&self, clients: &mut [ClientState]) -> Result<ServerState> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.global.dims() != self.architecture.dims
            || self.global.num_branches() != self.architecture.num_branches
        {
            return Err(Error::config("checkpoint weights disagree with its architecture"));
        }
        if clients.len() != self.client_alpha_logits.len() || clients.len() != self.client_rng.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} clients, {} supplied",
                self.client_alpha_logits.len(),
                clients.len()
            )));
        }
        for (c, (logits, pos)) in clients
            .iter_mut()
            .zip(self.client_alpha_logits.iter().zip(&self.client_rng))
        {
            let alpha = AlphaParams::from_logits(logits.clone(), self.architecture.shared_alpha)?;
            if !alpha.fits(self.global.num_layers(), self.global.num_branches()) {
                return Err(Error::config(format!(
                    "client {} mixing logits do not fit the architecture",
                    c.client_id
                )));
            }
            if pos.next_round != self.round {
                return Err(Error::config("client stream positions disagree with the round"));
            }
            c.alpha = alpha;
            c.rng_seed = pos.seed;
        }
        Ok(ServerState {
            global: self.global.clone(),
            round: self.round,
            seed: self.sampling_seed,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
