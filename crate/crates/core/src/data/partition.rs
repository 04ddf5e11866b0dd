//! Non-IID splits of a labeled dataset across clients.
//!
//! Every scheme first draws an *allocation plan*: for each class, the
//! fraction of that class's samples each client receives. The plan is then
//! applied to every split (train, validation, test) with the same fractions,
//! converting fractions to counts by largest-remainder apportionment so that
//! no sample is lost or duplicated.

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::dataset::{uniform, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// How classes are spread over clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    /// Each client holds `k` random classes; a class is split equally among its holders.
    RandomKClasses { k: usize },
    /// Per class, client shares are drawn from `Dir(beta · 1_N)`.
    Dirichlet { beta: f64 },
    /// Each client holds `k` random classes with weight `u ~ U(u_min, u_max)`
    /// per (client, class); shares are the weights normalized per class.
    SizeHeterogeneous {
        k: usize,
        #[serde(default = "default_u_min")]
        u_min: f64,
        #[serde(default = "default_u_max")]
        u_max: f64,
    },
    /// Clients `2m` and `2m+1` share the same `classes_per_pair` classes;
    /// pairs hold disjoint classes.
    PairedClusters {
        num_pairs: usize,
        classes_per_pair: usize,
    },
}

fn default_u_min() -> f64 {
    0.3
}

fn default_u_max() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    pub seed: u64,
}

/// Per-client index lists for one or more splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// `splits[s][client]`: indices into the `s`-th dataset passed to
    /// [`partition_splits`].
    pub splits: Vec<Vec<Vec<usize>>>,
    /// Cluster id per client, when the scheme defines clusters.
    pub groups: Option<Vec<usize>>,
    /// Number of plan draws used (1 unless empty shards forced a redraw).
    pub attempts: usize,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.splits.first().map_or(0, Vec::len)
    }

    pub fn client(&self, split: usize, client: usize) -> &[usize] {
        &self.splits[split][client]
    }

    /// Materializes split `split` of `dataset` into one dataset per client.
    pub fn client_datasets(&self, split: usize, dataset: &LabeledDataset) -> Result<Vec<LabeledDataset>> {
        let shards = self
            .splits
            .get(split)
            .ok_or_else(|| Error::usage(format!("partition has no split {split}")))?;
        shards.iter().map(|idx| dataset.subset(idx)).collect()
    }

    /// `(train, test)` pairs per client from splits 0 and `test_split`.
    pub fn train_test_shards(
        &self,
        train: &LabeledDataset,
        test: &LabeledDataset,
        test_split: usize,
    ) -> Result<Vec<(LabeledDataset, LabeledDataset)>> {
        Ok(self
            .client_datasets(0, train)?
            .into_iter()
            .zip(self.client_datasets(test_split, test)?)
            .collect())
    }
}

/// Redraws allowed when a plan leaves some client with an empty shard.
pub const MAX_ATTEMPTS: usize = 100;

/// Class-by-client share matrix plus optional group labels.
struct Plan {
    /// `shares[class][client]`, each row sums to 1 or is all zero (unowned class).
    shares: Vec<Vec<f64>>,
    /// Classes each client must actually receive at least one sample of.
    required: Vec<Vec<usize>>,
    groups: Option<Vec<usize>>,
}

impl PartitionSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let n = self.num_clients;
        if n == 0 {
            return Err(Error::config("number of clients must be positive"));
        }
        match self.scheme {
            PartitionScheme::RandomKClasses { k } => {
                if k == 0 || k > num_classes {
                    return Err(Error::config(format!(
                        "classes per client k={k} must lie in [1, {num_classes}]"
                    )));
                }
            }
            PartitionScheme::Dirichlet { beta } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::config(format!("dirichlet beta={beta} must be positive")));
                }
            }
            PartitionScheme::SizeHeterogeneous { k, u_min, u_max } => {
                if k == 0 || k > num_classes {
                    return Err(Error::config(format!(
                        "classes per client k={k} must lie in [1, {num_classes}]"
                    )));
                }
                if !(u_min > 0.0 && u_min <= u_max && u_max.is_finite()) {
                    return Err(Error::config(format!(
                        "size weights need 0 < u_min <= u_max, got [{u_min}, {u_max}]"
                    )));
                }
            }
            PartitionScheme::PairedClusters {
                num_pairs,
                classes_per_pair,
            } => {
                if num_pairs == 0 || classes_per_pair == 0 {
                    return Err(Error::config("paired clusters need positive pair and class counts"));
                }
                if 2 * num_pairs != n {
                    return Err(Error::config(format!(
                        "{num_pairs} pairs need {} clients, got {n}",
                        2 * num_pairs
                    )));
                }
                if num_pairs * classes_per_pair > num_classes {
                    return Err(Error::config(format!(
                        "{num_pairs} pairs x {classes_per_pair} classes exceeds {num_classes} classes"
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw_plan(&self, num_classes: usize, attempt: usize) -> Result<Plan> {
        let n = self.num_clients;
        let mut r = rng::stream(self.seed, &[tag::PARTITION, attempt as u64]);
        let mut shares = vec![vec![0.0; n]; num_classes];
        let mut required = vec![Vec::new(); n];
        let mut groups = None;
        match self.scheme {
            PartitionScheme::RandomKClasses { k } => {
                for (i, req) in required.iter_mut().enumerate() {
                    let mut classes = index::sample(&mut r, num_classes, k).into_vec();
                    classes.sort_unstable();
                    for &c in &classes {
                        shares[c][i] = 1.0;
                    }
                    *req = classes;
                }
                normalize_rows(&mut shares);
            }
            PartitionScheme::Dirichlet { beta } => {
                let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::config(e.to_string()))?;
                for row in shares.iter_mut() {
                    for v in row.iter_mut() {
                        *v = gamma.sample(&mut r);
                    }
                }
                normalize_rows(&mut shares);
            }
            PartitionScheme::SizeHeterogeneous { k, u_min, u_max } => {
                let u = uniform(u_min, u_max)?;
                for (i, req) in required.iter_mut().enumerate() {
                    let mut classes = index::sample(&mut r, num_classes, k).into_vec();
                    classes.sort_unstable();
                    for &c in &classes {
                        shares[c][i] = u.sample(&mut r);
                    }
                    *req = classes;
                }
                normalize_rows(&mut shares);
            }
            PartitionScheme::PairedClusters {
                num_pairs,
                classes_per_pair,
            } => {
                let mut classes: Vec<usize> = (0..num_classes).collect();
                classes.shuffle(&mut r);
                for m in 0..num_pairs {
                    let mut own = classes[m * classes_per_pair..(m + 1) * classes_per_pair].to_vec();
                    own.sort_unstable();
                    for &c in &own {
                        shares[c][2 * m] = 0.5;
                        shares[c][2 * m + 1] = 0.5;
                    }
                    required[2 * m] = own.clone();
                    required[2 * m + 1] = own;
                }
                groups = Some((0..n).map(|i| i / 2).collect());
            }
        }
        Ok(Plan {
            shares,
            required,
            groups,
        })
    }
}

fn normalize_rows(shares: &mut [Vec<f64>]) {
    for row in shares {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
}

/// Splits `total` items by `shares` (summing to 1) using largest-remainder
/// apportionment. Ties in the remainder go to the lower client index.
pub fn largest_remainder(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; shares.len()];
    }
    let quotas: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).filter(|&i| shares[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn apply_plan(dataset: &LabeledDataset, plan: &Plan, seed: u64, attempt: usize, split: usize) -> Vec<Vec<usize>> {
    let n = plan.required.len();
    let mut clients = vec![Vec::new(); n];
    for (c, mut members) in dataset.indices_by_class().into_iter().enumerate() {
        let shares = match plan.shares.get(c) {
            Some(s) => s,
            None => continue,
        };
        let mut r = rng::stream(seed, &[tag::PARTITION, attempt as u64, split as u64, c as u64]);
        members.shuffle(&mut r);
        let counts = largest_remainder(members.len(), shares);
        let mut start = 0;
        for (client, count) in counts.into_iter().enumerate() {
            clients[client].extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }
    for idx in &mut clients {
        idx.sort_unstable();
    }
    clients
}

fn is_degenerate(dataset: &LabeledDataset, clients: &[Vec<usize>], plan: &Plan) -> bool {
    clients.iter().zip(&plan.required).any(|(idx, req)| {
        idx.is_empty() || {
            let hist = super::dataset::histogram(
                &idx.iter().map(|&i| dataset.labels()[i]).collect::<Vec<_>>(),
                dataset.num_classes(),
            );
            req.iter().any(|&c| hist[c] == 0)
        }
    })
}

/// Partitions one dataset.
pub fn partition(dataset: &LabeledDataset, spec: &PartitionSpec) -> Result<Partition> {
    partition_splits(&[dataset], spec)
}

/// Partitions several datasets over one label space with the same plan, so
/// every split of a client follows the same class proportions.
///
/// A draw that leaves any client without samples in any split (or without a
/// class it was assigned) is redrawn with the next sub-seed, up to
/// [`MAX_ATTEMPTS`] times.
pub fn partition_splits(datasets: &[&LabeledDataset], spec: &PartitionSpec) -> Result<Partition> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::usage("nothing to partition"))?;
    let num_classes = first.num_classes();
    if datasets.iter().any(|d| d.num_classes() != num_classes) {
        return Err(Error::config("splits disagree on the number of classes"));
    }
    spec.validate(num_classes)?;
    for attempt in 0..MAX_ATTEMPTS {
        let plan = spec.draw_plan(num_classes, attempt)?;
        let splits: Vec<Vec<Vec<usize>>> = datasets
            .iter()
            .enumerate()
            .map(|(s, d)| apply_plan(d, &plan, spec.seed, attempt, s))
            .collect();
        let degenerate = datasets
            .iter()
            .zip(&splits)
            .any(|(d, clients)| is_degenerate(d, clients, &plan));
        if !degenerate {
            return Ok(Partition {
                splits,
                groups: plan.groups,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::Partition(format!(
        "every one of {MAX_ATTEMPTS} draws left a client with an empty shard"
    )))
}
