use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// A dense layer split into `B` parallel branches.
///
/// Each branch owns a weight matrix of shape `(out_dim, in_dim)` and a bias
/// vector of length `out_dim`. A client collapses the branches into one
/// effective layer with its own simplex weights (see [`combine_branches`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiBranchDense {
    in_dim: usize,
    out_dim: usize,
    branch_weights: Vec<Matrix>,
    branch_biases: Vec<Vec<f64>>,
}

impl MultiBranchDense {
    pub fn new(branch_weights: Vec<Matrix>, branch_biases: Vec<Vec<f64>>) -> Result<Self> {
        let first = branch_weights
            .first()
            .ok_or_else(|| Error::config("a multi-branch layer needs at least one branch"))?;
        let (out_dim, in_dim) = first.shape();
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        if branch_weights.iter().any(|w| w.shape() != (out_dim, in_dim)) {
            return Err(Error::config("branch weight matrices differ in shape"));
        }
        if branch_biases.len() != branch_weights.len() {
            return Err(Error::config(format!(
                "{} branch weights but {} branch biases",
                branch_weights.len(),
                branch_biases.len()
            )));
        }
        if branch_biases.iter().any(|b| b.len() != out_dim) {
            return Err(Error::config("branch bias length differs from out_dim"));
        }
        if branch_biases.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("branch biases must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            branch_weights,
            branch_biases,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, num_branches: usize) -> Result<Self> {
        Self::new(
            vec![Matrix::zeros(out_dim, in_dim); num_branches],
            vec![vec![0.0; out_dim]; num_branches],
        )
    }

    /// He-uniform weights, drawn independently per branch; zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        num_branches: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        let limit = (6.0 / in_dim as f64).sqrt();
        let dist = Uniform::new(-limit, limit).expect("finite positive limit");
        let weights = (0..num_branches)
            .map(|_| Matrix::from_fn(out_dim, in_dim, |_, _| dist.sample(rng)))
            .collect();
        Self::new(weights, vec![vec![0.0; out_dim]; num_branches])
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    pub fn num_branches(&self) -> usize {
        self.branch_weights.len()
    }

    pub fn branch_weights(&self) -> &[Matrix] {
        &self.branch_weights
    }

    pub fn branch_biases(&self) -> &[Vec<f64>] {
        &self.branch_biases
    }

    pub fn branch_weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.branch_weights
    }

    pub fn branch_biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.branch_biases
    }

    /// Single-branch layer holding branch `b` only.
    pub fn extract_branch(&self, b: usize) -> MultiBranchDense {
        MultiBranchDense {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            branch_weights: vec![self.branch_weights[b].clone()],
            branch_biases: vec![self.branch_biases[b].clone()],
        }
    }

    pub(crate) fn same_shape(&self, other: &MultiBranchDense) -> bool {
        self.in_dim == other.in_dim
            && self.out_dim == other.out_dim
            && self.num_branches() == other.num_branches()
    }
}

/// Collapses a layer's branches with simplex weights:
/// `W = Σ_b α_b W_b` and `bias = Σ_b α_b bias_b`.
pub fn combine_branches(layer: &MultiBranchDense, alpha: &[f64]) -> Result<(Matrix, Vec<f64>)> {
    if alpha.len() != layer.num_branches() {
        return Err(Error::config(format!(
            "mixing vector has {} entries for {} branches",
            alpha.len(),
            layer.num_branches()
        )));
    }
    let mut weight = Matrix::zeros(layer.out_dim, layer.in_dim);
    let mut bias = vec![0.0; layer.out_dim];
    for ((a, w), b) in alpha
        .iter()
        .zip(&layer.branch_weights)
        .zip(&layer.branch_biases)
    {
        weight.add_scaled(*a, w);
        for (acc, v) in bias.iter_mut().zip(b) {
            *acc += a * v;
        }
    }
    Ok((weight, bias))
}
