use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{self, tag};

/// Feature rows with dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("a dataset needs at least one sample"));
        }
        if features.rows() != labels.len() {
            return Err(Error::config(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::config(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Subset by row indices. Fails on an empty selection.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::usage(format!("row index {bad} out of range")));
        }
        Self::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }

    /// Sample count per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        histogram(&self.labels, self.num_classes)
    }

    /// Row indices grouped by class, ascending within each class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }
}

pub(crate) fn histogram(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for &y in labels {
        h[y] += 1;
    }
    h
}

/// Gaussian class clusters around uniformly drawn means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Class means are drawn uniformly from `[-scale, scale]^d`.
    pub class_mean_scale: f64,
    pub noise_std: f64,
    /// Training samples per class.
    pub samples_per_class: usize,
    #[serde(default)]
    pub validation_samples_per_class: usize,
    #[serde(default)]
    pub test_samples_per_class: usize,
    pub seed: u64,
}

/// Train / validation / test datasets sharing one label space.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: LabeledDataset,
    pub validation: Option<LabeledDataset>,
    pub test: Option<LabeledDataset>,
}

impl DataSplits {
    /// Datasets in partitioning order: train, then validation and test when present.
    pub fn as_list(&self) -> Vec<&LabeledDataset> {
        std::iter::once(&self.train)
            .chain(self.validation.as_ref())
            .chain(self.test.as_ref())
            .collect()
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_classes < 2 {
            problems.push("num_classes must be at least 2");
        }
        if self.input_dim < 1 {
            problems.push("input_dim must be at least 1");
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            problems.push("noise_std must be positive");
        }
        if !(self.class_mean_scale >= 0.0 && self.class_mean_scale.is_finite()) {
            problems.push("class_mean_scale must be non-negative");
        }
        if self.samples_per_class < 1 {
            problems.push("samples_per_class must be at least 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    fn class_means(&self) -> Vec<Vec<f64>> {
        let mut r = rng::stream(self.seed, &[tag::DATA, 0]);
        let s = self.class_mean_scale;
        (0..self.num_classes)
            .map(|_| {
                (0..self.input_dim)
                    .map(|_| if s > 0.0 { r.random_range(-s..=s) } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn sample(&self, means: &[Vec<f64>], per_class: usize, split: u64) -> Result<LabeledDataset> {
        let mut r = rng::stream(self.seed, &[tag::DATA, 1, split]);
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::config(e.to_string()))?;
        let n = per_class * self.num_classes;
        let mut data = Vec::with_capacity(n * self.input_dim);
        let mut labels = Vec::with_capacity(n);
        for (c, mu) in means.iter().enumerate() {
            for _ in 0..per_class {
                data.extend(mu.iter().map(|m| m + noise.sample(&mut r)));
                labels.push(c);
            }
        }
        LabeledDataset::new(
            Matrix::from_vec(n, self.input_dim, data)?,
            labels,
            self.num_classes,
        )
    }

    /// Training split only.
    pub fn generate(&self) -> Result<LabeledDataset> {
        generate_synthetic(self)
    }

    /// All configured splits, drawn around the same class means.
    pub fn generate_splits(&self) -> Result<DataSplits> {
        self.validate()?;
        let means = self.class_means();
        let optional = |per_class: usize, split: u64| {
            (per_class > 0)
                .then(|| self.sample(&means, per_class, split))
                .transpose()
        };
        Ok(DataSplits {
            train: self.sample(&means, self.samples_per_class, 0)?,
            validation: optional(self.validation_samples_per_class, 1)?,
            test: optional(self.test_samples_per_class, 2)?,
        })
    }
}

/// Balanced Gaussian-cluster classification data, deterministic in the seed.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let means = spec.class_means();
    spec.sample(&means, spec.samples_per_class, 0)
}

/// Uniform draw helper used where `rand_distr::Uniform` needs an inclusive range.
pub(crate) fn uniform(lo: f64, hi: f64) -> Result<Uniform<f64>> {
    Uniform::new_inclusive(lo, hi).map_err(|e| Error::config(format!("invalid range [{lo}, {hi}]: {e}")))
}
