//! Client-specific branch mixing weights.
//!
//! Mixing weights live on the probability simplex. They are stored as free
//! logits and mapped through a softmax, so any SGD step on the logits keeps
//! the derived weights feasible and strictly positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pulls a gradient w.r.t. simplex weights back to their logits:
/// `∂f/∂ρ_b = α_b (∂f/∂α_b − Σ_k α_k ∂f/∂α_k)`.
pub fn softmax_backward(alpha: &[f64], d_alpha: &[f64]) -> Vec<f64> {
    let mean: f64 = alpha.iter().zip(d_alpha).map(|(a, g)| a * g).sum();
    alpha
        .iter()
        .zip(d_alpha)
        .map(|(a, g)| a * (g - mean))
        .collect()
}

/// Per-client mixing logits for every multi-branch layer.
///
/// In shared mode a single logit vector drives all layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    logits: Vec<Vec<f64>>,
    shared: bool,
}

impl AlphaParams {
    /// All-zero logits: every branch gets weight `1/B`.
    pub fn uniform(num_layers: usize, num_branches: usize, shared: bool) -> Self {
        let rows = if shared { 1 } else { num_layers };
        Self {
            logits: vec![vec![0.0; num_branches]; rows],
            shared,
        }
    }

    pub fn from_logits(logits: Vec<Vec<f64>>, shared: bool) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::config("alpha logits need at least one row"));
        }
        if shared && logits.len() != 1 {
            return Err(Error::config("shared alpha must have exactly one logit row"));
        }
        let b = logits[0].len();
        if b == 0 || logits.iter().any(|r| r.len() != b) {
            return Err(Error::config("alpha logit rows must share a nonzero length"));
        }
        if logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("alpha logits must be finite"));
        }
        Ok(Self { logits, shared })
    }

    #[inline]
    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn num_branches(&self) -> usize {
        self.logits[0].len()
    }

    /// Stored logit rows (one when shared).
    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    /// Index of the stored logit row used by `layer`.
    #[inline]
    pub fn row_for_layer(&self, layer: usize) -> usize {
        if self.shared {
            0
        } else {
            layer
        }
    }

    /// Simplex weights for one layer.
    pub fn layer_alpha(&self, layer: usize) -> Vec<f64> {
        softmax(&self.logits[self.row_for_layer(layer)])
    }

    /// Simplex weights expanded to every layer.
    pub fn per_layer(&self, num_layers: usize) -> Vec<Vec<f64>> {
        (0..num_layers).map(|l| self.layer_alpha(l)).collect()
    }

    /// Whether this parameter set fits a network of the given shape.
    pub fn fits(&self, num_layers: usize, num_branches: usize) -> bool {
        self.num_branches() == num_branches && (self.shared || self.logits.len() == num_layers)
    }

    /// Zero-filled array congruent with the stored logits.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.logits.iter().map(|r| vec![0.0; r.len()]).collect()
    }

    /// Plain SGD on the logits.
    pub fn sgd_step(&mut self, grads: &[Vec<f64>], learning_rate: f64) -> Result<()> {
        if grads.len() != self.logits.len()
            || grads.iter().zip(&self.logits).any(|(g, p)| g.len() != p.len())
        {
            return Err(Error::config("alpha gradient shape mismatch"));
        }
        for (p, g) in self.logits.iter_mut().zip(grads) {
            super::sgd_step(p, g, learning_rate)?;
        }
        Ok(())
    }
}

/// Checks that `alpha` lies on the simplex within `tol`.
pub fn is_simplex(alpha: &[f64], tol: f64) -> bool {
    !alpha.is_empty()
        && alpha.iter().all(|&a| a.is_finite() && a >= -tol)
        && (alpha.iter().sum::<f64>() - 1.0).abs() <= tol
}
