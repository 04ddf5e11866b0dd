//! Minimal neural-network kernel: dense matrices, multi-branch dense layers,
//! ReLU, softmax cross-entropy, exact reverse-mode gradients and plain SGD.

pub mod alpha;
pub mod gradcheck;
pub mod layer;
pub mod matrix;
pub mod network;

pub use alpha::{is_simplex, softmax, AlphaParams};
pub use gradcheck::{compare_gradients, gradient_check, GradCheckReport, GroupReport};
pub use layer::{combine_branches, MultiBranchDense};
pub use matrix::Matrix;
pub use network::{ForwardCache, GradientBundle, Network, Wrt};

use crate::error::{Error, Result};

/// `p ← p − η·g`, elementwise. No momentum, no weight decay.
pub fn sgd_step(params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::config(format!(
            "sgd: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::config(format!("invalid learning rate {learning_rate}")));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0];
        sgd_step(&mut p, &[0.0, 0.0], 0.3).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn one_step_arithmetic() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &[0.5], 0.1).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn two_steps_equal_one_double_step() {
        let mut a = vec![0.7, -1.3];
        let mut b = a.clone();
        let g = [0.25, 0.5];
        sgd_step(&mut a, &g, 0.125).unwrap();
        sgd_step(&mut a, &g, 0.125).unwrap();
        sgd_step(&mut b, &g, 0.25).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_shape_mismatch_and_negative_rate() {
        assert!(sgd_step(&mut [1.0], &[1.0, 2.0], 0.1).is_err());
        assert!(sgd_step(&mut [1.0], &[1.0], -0.1).is_err());
    }
}
