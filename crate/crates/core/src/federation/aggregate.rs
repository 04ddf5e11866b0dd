//! Server-side combination of client updates.
//!
//! Alpha-weighted aggregation updates each branch with coefficients
//! proportional to `n_i · α_{l,b}^i`, so clients that lean on a branch shape
//! it more. Plain weighted aggregation uses `n_i` alone (FedAvg weighting).

use serde::{Deserialize, Serialize};

use super::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::nn::{Matrix, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    AlphaWeighted,
    PlainWeighted,
}

/// Relative mass below which a branch keeps its previous global value.
pub const MASS_EPSILON: f64 = 1e-12;

/// Convex coefficients for one (layer, branch) over `updates`, or `None`
/// when the branch's total weighted mass is below `MASS_EPSILON · Σ n_j`.
pub fn aggregation_coefficients(
    updates: &[ClientUpdate],
    strategy: AggregationStrategy,
    layer: usize,
    branch: usize,
) -> Option<Vec<f64>> {
    let raw: Vec<f64> = updates
        .iter()
        .map(|u| {
            let n = u.num_samples as f64;
            match strategy {
                AggregationStrategy::AlphaWeighted => n * u.alpha[layer][branch],
                AggregationStrategy::PlainWeighted => n,
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let total_n: f64 = updates.iter().map(|u| u.num_samples as f64).sum();
    if total.is_nan() || total < MASS_EPSILON * total_n || total <= 0.0 {
        return None;
    }
    Some(raw.into_iter().map(|w| w / total).collect())
}

fn check_updates(updates: &[ClientUpdate], previous: &Network) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::usage("cannot aggregate an empty update list"));
    }
    for u in updates {
        if !u.params.same_shape(previous) {
            return Err(Error::config(format!(
                "update from client {} does not match the global architecture",
                u.client_id
            )));
        }
        if u.alpha.len() != previous.num_layers()
            || u.alpha.iter().any(|a| a.len() != previous.num_branches())
        {
            return Err(Error::config(format!(
                "update from client {} carries mis-shaped mixing weights",
                u.client_id
            )));
        }
    }
    Ok(())
}

/// New global branch parameters from the participating clients' updates.
pub fn aggregate(
    updates: &[ClientUpdate],
    strategy: AggregationStrategy,
    previous: &Network,
) -> Result<Network> {
    check_updates(updates, previous)?;
    let mut next = previous.clone();
    for (l, layer) in next.layers_mut().iter_mut().enumerate() {
        for b in 0..layer.num_branches() {
            let Some(coeffs) = aggregation_coefficients(updates, strategy, l, b) else {
                continue;
            };
            let (rows, cols) = layer.branch_weights()[b].shape();
            let mut w = Matrix::zeros(rows, cols);
            let mut bias = vec![0.0; rows];
            for (c, u) in coeffs.iter().zip(updates) {
                let src = &u.params.layers()[l];
                w.add_scaled(*c, &src.branch_weights()[b]);
                for (acc, v) in bias.iter_mut().zip(&src.branch_biases()[b]) {
                    *acc += c * v;
                }
            }
            layer.branch_weights_mut()[b] = w;
            layer.branch_biases_mut()[b] = bias;
        }
    }
    Ok(next)
}
