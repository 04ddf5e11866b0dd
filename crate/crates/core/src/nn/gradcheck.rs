//! Central finite-difference verification of the analytic gradients.

use serde::Serialize;

use super::{AlphaParams, GradientBundle, Matrix, Network, Wrt};
use crate::error::{Error, Result};

/// Outcome for one parameter group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    /// Largest `|a − n| / max(|a|, |n|, 1e-8)` over the group.
    pub max_rel_error: f64,
    /// Flat index (traversal order) of the worst entry.
    pub worst_index: usize,
    pub entries: usize,
    /// Set when the group is identically zero by construction (one branch).
    pub skipped: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tolerance: f64,
    pub weights: GroupReport,
    pub alpha: GroupReport,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.weights.passed && self.alpha.passed
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn summarize(pairs: impl Iterator<Item = (f64, f64)>, tolerance: f64) -> GroupReport {
    let mut report = GroupReport {
        max_rel_error: 0.0,
        worst_index: 0,
        entries: 0,
        skipped: false,
        passed: true,
    };
    for (i, (a, n)) in pairs.enumerate() {
        let e = rel_error(a, n);
        if e > report.max_rel_error || e.is_nan() {
            report.max_rel_error = e;
            report.worst_index = i;
        }
        report.entries += 1;
    }
    report.passed = report.max_rel_error < tolerance;
    report
}

/// Computes analytic gradients and checks them with central differences.
pub fn gradient_check(
    net: &Network,
    alpha: &AlphaParams,
    x: &Matrix,
    labels: &[usize],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = net.loss_and_grads(alpha, x, labels, Wrt::Both)?;
    compare_gradients(net, alpha, x, labels, &analytic, h, tolerance)
}

/// Checks a supplied gradient bundle against central differences. Exposed
/// separately so a deliberately corrupted bundle can be verified to fail.
pub fn compare_gradients(
    net: &Network,
    alpha: &AlphaParams,
    x: &Matrix,
    labels: &[usize],
    analytic: &GradientBundle,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::usage(format!("finite-difference step {h} outside (0, 1e-2]")));
    }
    let numeric_w = numeric_weight_grads(net, alpha, x, labels, h)?;
    let weights = summarize(analytic.weight_entries().zip(numeric_w), tolerance);

    let alpha_report = if net.num_branches() == 1 {
        let all_zero = analytic.d_alpha_logits.iter().flatten().all(|&g| g == 0.0);
        GroupReport {
            max_rel_error: if all_zero { 0.0 } else { f64::INFINITY },
            worst_index: 0,
            entries: analytic.d_alpha_logits.iter().map(Vec::len).sum(),
            skipped: true,
            passed: all_zero,
        }
    } else {
        let numeric_a = numeric_alpha_grads(net, alpha, x, labels, h)?;
        summarize(
            analytic.d_alpha_logits.iter().flatten().copied().zip(numeric_a),
            tolerance,
        )
    };

    Ok(GradCheckReport {
        h,
        tolerance,
        weights,
        alpha: alpha_report,
    })
}

fn numeric_weight_grads(
    net: &Network,
    alpha: &AlphaParams,
    x: &Matrix,
    labels: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = net.clone();
    let mut out = Vec::new();
    for l in 0..net.num_layers() {
        for b in 0..net.num_branches() {
            let len = net.layers()[l].branch_weights()[b].as_slice().len();
            for i in 0..len {
                out.push(central(&mut probe, alpha, x, labels, h, |n| {
                    &mut n.layers_mut()[l].branch_weights_mut()[b].as_mut_slice()[i]
                })?);
            }
            for i in 0..net.layers()[l].out_dim() {
                out.push(central(&mut probe, alpha, x, labels, h, |n| {
                    &mut n.layers_mut()[l].branch_biases_mut()[b][i]
                })?);
            }
        }
    }
    Ok(out)
}

fn central(
    probe: &mut Network,
    alpha: &AlphaParams,
    x: &Matrix,
    labels: &[usize],
    h: f64,
    entry: impl Fn(&mut Network) -> &mut f64,
) -> Result<f64> {
    let orig = *entry(probe);
    *entry(probe) = orig + h;
    let plus = probe.loss(alpha, x, labels)?;
    *entry(probe) = orig - h;
    let minus = probe.loss(alpha, x, labels)?;
    *entry(probe) = orig;
    Ok((plus - minus) / (2.0 * h))
}

fn numeric_alpha_grads(
    net: &Network,
    alpha: &AlphaParams,
    x: &Matrix,
    labels: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = alpha.clone();
    let mut out = Vec::new();
    for r in 0..alpha.logits().len() {
        for b in 0..alpha.num_branches() {
            let orig = probe.logits()[r][b];
            probe.logits_mut()[r][b] = orig + h;
            let plus = net.loss(&probe, x, labels)?;
            probe.logits_mut()[r][b] = orig - h;
            let minus = net.loss(&probe, x, labels)?;
            probe.logits_mut()[r][b] = orig;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn fixture(dims: &[usize], b: usize, shared: bool, seed: u64) -> (Network, AlphaParams, Matrix, Vec<usize>) {
        let mut r = rng::stream(seed, &[]);
        let net = Network::he_uniform(dims, b, &mut r).unwrap();
        let rows = if shared { 1 } else { dims.len() - 1 };
        let logits = (0..rows)
            .map(|_| (0..b).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let alpha = AlphaParams::from_logits(logits, shared).unwrap();
        let x = Matrix::from_fn(8, dims[0], |_, _| r.random_range(-1.0..1.0));
        let classes = *dims.last().unwrap();
        let y = (0..8).map(|_| r.random_range(0..classes)).collect();
        (net, alpha, x, y)
    }

    #[test]
    fn random_net_passes_both_groups() {
        for seed in 0..5 {
            let (net, alpha, x, y) = fixture(&[4, 5, 3], 3, false, seed);
            let rep = gradient_check(&net, &alpha, &x, &y, 1e-5, 1e-4).unwrap();
            assert!(rep.passed(), "seed {seed}: {rep:?}");
            assert!(!rep.alpha.skipped);
        }
    }

    #[test]
    fn shared_alpha_gradients_accumulate_over_layers() {
        let (net, alpha, x, y) = fixture(&[4, 6, 5, 3], 2, true, 11);
        let rep = gradient_check(&net, &alpha, &x, &y, 1e-5, 1e-4).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.alpha.entries, 2);
    }

    #[test]
    fn zero_weight_net_passes() {
        let net = Network::zeros(&[3, 4, 2], 2).unwrap();
        let alpha = AlphaParams::uniform(2, 2, false);
        let x = Matrix::from_fn(4, 3, |r, c| (r + c) as f64 * 0.1);
        // unbalanced labels keep the output-bias gradient away from an exact zero
        let rep = gradient_check(&net, &alpha, &x, &[0, 1, 1, 1], 1e-5, 1e-4).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn corrupted_entry_is_flagged() {
        let (net, alpha, x, y) = fixture(&[4, 5, 3], 3, false, 2);
        let (_, mut g) = net.loss_and_grads(&alpha, &x, &y, Wrt::Both).unwrap();
        g.d_branch_weights[1][2].as_mut_slice()[3] += 1.0;
        let rep = compare_gradients(&net, &alpha, &x, &y, &g, 1e-5, 1e-4).unwrap();
        assert!(!rep.weights.passed);
        assert!(rep.weights.max_rel_error >= 0.1);
        assert!(rep.alpha.passed);

        let (_, mut g) = net.loss_and_grads(&alpha, &x, &y, Wrt::Both).unwrap();
        g.d_alpha_logits[0][1] += 1.0;
        let rep = compare_gradients(&net, &alpha, &x, &y, &g, 1e-5, 1e-4).unwrap();
        assert!(rep.weights.passed);
        assert!(rep.alpha.max_rel_error >= 0.1);
    }

    #[test]
    fn single_branch_alpha_group_is_skipped() {
        let (net, alpha, x, y) = fixture(&[4, 5, 3], 1, false, 3);
        let rep = gradient_check(&net, &alpha, &x, &y, 1e-5, 1e-4).unwrap();
        assert!(rep.alpha.skipped);
        assert_eq!(rep.alpha.max_rel_error, 0.0);
        assert!(rep.passed());
    }

    #[test]
    fn step_size_is_validated() {
        let (net, alpha, x, y) = fixture(&[2, 2], 2, false, 4);
        assert!(gradient_check(&net, &alpha, &x, &y, 0.0, 1e-4).is_err());
        assert!(gradient_check(&net, &alpha, &x, &y, 0.1, 1e-4).is_err());
    }
}
