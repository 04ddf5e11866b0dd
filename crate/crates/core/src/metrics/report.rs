use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mean_accuracy;
use crate::error::{Error, Result};
use crate::federation::ProtocolOutcome;

/// Bumped whenever the layout of `final.json` or the CSV files changes.
pub const SCHEMA_VERSION: u32 = 1;

const MEAN_CONVENTION: &str = "unweighted mean over clients";

/// Rounds `x` to 10 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.9e}").parse().unwrap_or(x)
}

/// `x` with 10 significant digits, shortest form.
pub fn fmt_sig(x: f64) -> String {
    format!("{}", round_sig(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    /// Zero-based round index.
    pub round: usize,
    pub mean_test_acc: f64,
    pub mean_train_loss: f64,
}

/// Everything a run reports. The emitted files are a function of this value
/// alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub method: String,
    /// Hash of the canonical config and seed.
    pub config_fingerprint: String,
    /// How `mean_test_acc` and `final_mean_accuracy` average over clients.
    pub mean_convention: String,
    /// The resolved configuration, echoed for provenance.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    pub rounds: Vec<RoundSummary>,
    /// Test accuracy of each client's fine-tuned model.
    pub final_accuracies: Vec<f64>,
    pub final_mean_accuracy: f64,
    /// `[client][layer][branch]`, simplex rows.
    pub final_alphas: Vec<Vec<Vec<f64>>>,
    /// `[round][client][layer][branch]`; written to `alpha_trajectory.csv`
    /// rather than `final.json`.
    #[serde(skip)]
    pub alpha_trajectory: Vec<Vec<Vec<Vec<f64>>>>,
}

impl ExperimentResult {
    pub fn from_outcome(
        outcome: &ProtocolOutcome,
        config_fingerprint: impl Into<String>,
        config: Option<serde_json::Value>,
    ) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            method: outcome.method.name().to_string(),
            config_fingerprint: config_fingerprint.into(),
            mean_convention: MEAN_CONVENTION.to_string(),
            config,
            rounds: outcome
                .reports
                .iter()
                .map(|r| RoundSummary {
                    round: r.round,
                    mean_test_acc: r.mean_test_accuracy(),
                    mean_train_loss: r.mean_train_loss(),
                })
                .collect(),
            final_mean_accuracy: mean_accuracy(&outcome.final_accuracies)?,
            final_accuracies: outcome.final_accuracies.clone(),
            final_alphas: outcome.final_alphas(),
            alpha_trajectory: outcome.reports.iter().map(|r| r.alphas.clone()).collect(),
        })
    }

    /// A copy with every reported float rounded to 10 significant digits.
    fn rounded(&self) -> Self {
        let r3 = |v: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Vec<f64>>> {
            v.iter()
                .map(|c| c.iter().map(|l| l.iter().map(|&a| round_sig(a)).collect()).collect())
                .collect()
        };
        Self {
            rounds: self
                .rounds
                .iter()
                .map(|r| RoundSummary {
                    round: r.round,
                    mean_test_acc: round_sig(r.mean_test_acc),
                    mean_train_loss: round_sig(r.mean_train_loss),
                })
                .collect(),
            final_accuracies: self.final_accuracies.iter().map(|&a| round_sig(a)).collect(),
            final_mean_accuracy: round_sig(self.final_mean_accuracy),
            final_alphas: r3(&self.final_alphas),
            alpha_trajectory: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.rounded())?;
        s.push('\n');
        Ok(s)
    }

    pub fn rounds_csv(&self) -> String {
        let mut out = String::from("round,method,mean_test_acc,mean_train_loss\n");
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.round,
                self.method,
                fmt_sig(r.mean_test_acc),
                fmt_sig(r.mean_train_loss)
            );
        }
        out
    }

    pub fn alpha_trajectory_csv(&self) -> String {
        let mut out = String::from("round,client,layer,branch,alpha\n");
        for (round, clients) in self.rounds.iter().zip(&self.alpha_trajectory) {
            for (i, layers) in clients.iter().enumerate() {
                for (l, row) in layers.iter().enumerate() {
                    for (b, a) in row.iter().enumerate() {
                        let _ = writeln!(out, "{},{i},{l},{b},{}", round.round, fmt_sig(*a));
                    }
                }
            }
        }
        out
    }
}

/// Writes `rounds.csv`, `final.json` and `alpha_trajectory.csv` into `dir`,
/// creating it if needed.
pub fn emit_results(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("rounds.csv", result.rounds_csv()),
        ("final.json", result.to_json()?),
        ("alpha_trajectory.csv", result.alpha_trajectory_csv()),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
