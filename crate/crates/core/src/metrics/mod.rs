//! Evaluation of personalized models, mixing-weight similarity and result
//! files.

mod report;

pub use report::{emit_results, fmt_sig, round_sig, ExperimentResult, RoundSummary, SCHEMA_VERSION};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{AlphaParams, Network};

/// Fraction of test samples whose argmax prediction under `(net, alpha)` is
/// correct.
pub fn evaluate_client(net: &Network, alpha: &AlphaParams, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::usage("cannot evaluate on an empty test shard"));
    }
    let predicted = net.predict(alpha, test.features())?;
    let correct = predicted
        .iter()
        .zip(test.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Unweighted mean over clients.
pub fn mean_accuracy(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::usage("mean of an empty accuracy list"));
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

/// Pairwise distances between clients' mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSimilarity {
    /// Symmetric, zero diagonal.
    pub distances: Vec<Vec<f64>>,
    /// Mean over pairs in the same group (when groups were given and such
    /// pairs exist).
    pub within_group_mean: Option<f64>,
    pub across_group_mean: Option<f64>,
}

/// L2 distance between concatenated per-layer simplex vectors for every pair
/// of clients. `alphas` is `[client][layer][branch]`.
pub fn alpha_similarity(alphas: &[Vec<Vec<f64>>], groups: Option<&[usize]>) -> Result<AlphaSimilarity> {
    if alphas.len() < 2 {
        return Err(Error::usage("similarity needs at least two clients"));
    }
    let shape: Vec<usize> = alphas[0].iter().map(Vec::len).collect();
    if let Some(i) = alphas
        .iter()
        .position(|a| a.iter().map(Vec::len).ne(shape.iter().copied()))
    {
        return Err(Error::usage(format!(
            "client {i} mixing weights differ in shape from client 0"
        )));
    }
    if let Some(g) = groups {
        if g.len() != alphas.len() {
            return Err(Error::usage(format!(
                "{} group labels for {} clients",
                g.len(),
                alphas.len()
            )));
        }
    }
    let flat: Vec<Vec<f64>> = alphas.iter().map(|a| a.concat()).collect();
    let n = flat.len();
    let mut distances = vec![vec![0.0; n]; n];
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            let d = flat[i]
                .iter()
                .zip(&flat[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            distances[i][j] = d;
            distances[j][i] = d;
            if let Some(g) = groups {
                if g[i] == g[j] {
                    within.push(d);
                } else {
                    across.push(d);
                }
            }
        }
    }
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(AlphaSimilarity {
        distances,
        within_group_mean: avg(&within),
        across_group_mean: avg(&across),
    })
}
