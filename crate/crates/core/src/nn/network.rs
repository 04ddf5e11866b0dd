use rand::Rng;
use serde::{Deserialize, Serialize};

use super::alpha::{softmax_backward, AlphaParams};
use super::layer::{combine_branches, MultiBranchDense};
use super::Matrix;
use crate::error::{Error, Result};

/// Which parameter group a gradient computation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Weights,
    Alpha,
    Both,
}

impl Wrt {
    fn weights(self) -> bool {
        matches!(self, Wrt::Weights | Wrt::Both)
    }

    fn alpha(self) -> bool {
        matches!(self, Wrt::Alpha | Wrt::Both)
    }
}

/// Gradients for the branch parameters and for the mixing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// `[layer][branch]`
    pub d_branch_weights: Vec<Vec<Matrix>>,
    /// `[layer][branch]`
    pub d_branch_biases: Vec<Vec<Vec<f64>>>,
    /// Congruent with [`AlphaParams::logits`].
    pub d_alpha_logits: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn zeros(net: &Network, alpha: &AlphaParams) -> Self {
        Self {
            d_branch_weights: net
                .layers
                .iter()
                .map(|l| vec![Matrix::zeros(l.out_dim(), l.in_dim()); l.num_branches()])
                .collect(),
            d_branch_biases: net
                .layers
                .iter()
                .map(|l| vec![vec![0.0; l.out_dim()]; l.num_branches()])
                .collect(),
            d_alpha_logits: alpha.zeros_like(),
        }
    }

    /// Every branch-parameter gradient entry in a fixed traversal order.
    pub fn weight_entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.d_branch_weights
            .iter()
            .zip(&self.d_branch_biases)
            .flat_map(|(ws, bs)| {
                ws.iter()
                    .zip(bs)
                    .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()).copied())
            })
    }
}

/// Intermediate values retained by [`Network::forward`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the batch).
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<Matrix>,
    /// Collapsed weight/bias per layer.
    combined: Vec<(Matrix, Vec<f64>)>,
    alphas: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Matrix {
        self.pre_activations.last().expect("network has at least one layer")
    }
}

/// A stack of multi-branch dense layers with ReLU between layers and
/// identity after the last; trained with softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct Network {
    layers: Vec<MultiBranchDense>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    layers: Vec<MultiBranchDense>,
}

impl TryFrom<NetworkRepr> for Network {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        Network::new(r.layers)
    }
}

impl From<Network> for NetworkRepr {
    fn from(n: Network) -> Self {
        NetworkRepr { layers: n.layers }
    }
}

impl Network {
    pub fn new(layers: Vec<MultiBranchDense>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::config("a network needs at least one layer"))?;
        let b = first.num_branches();
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if let Some(i) = layers.iter().position(|l| l.num_branches() != b) {
            return Err(Error::config(format!(
                "layer {i} has {} branches, layer 0 has {b}",
                layers[i].num_branches()
            )));
        }
        Ok(Self { layers })
    }

    /// Builds a network for the dimension chain `dims[0] → … → dims[L]`
    /// with He-uniform branch weights.
    pub fn he_uniform<R: Rng + ?Sized>(dims: &[usize], num_branches: usize, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("need an input and an output dimension"));
        }
        if num_branches == 0 {
            return Err(Error::config("number of branches must be at least 1"));
        }
        let layers = dims
            .windows(2)
            .map(|w| MultiBranchDense::he_uniform(w[0], w[1], num_branches, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn zeros(dims: &[usize], num_branches: usize) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("need an input and an output dimension"));
        }
        let layers = dims
            .windows(2)
            .map(|w| MultiBranchDense::zeros(w[0], w[1], num_branches))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[MultiBranchDense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [MultiBranchDense] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_branches(&self) -> usize {
        self.layers[0].num_branches()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[input, hidden…, classes]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim()))
            .collect()
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    /// Single-branch network made of branch `b` of every layer.
    pub fn extract_branch(&self, b: usize) -> Network {
        Network {
            layers: self.layers.iter().map(|l| l.extract_branch(b)).collect(),
        }
    }

    fn check_alpha(&self, alpha: &AlphaParams) -> Result<()> {
        if alpha.fits(self.num_layers(), self.num_branches()) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "alpha with {} rows x {} branches does not fit a {}-layer, {}-branch network",
                alpha.logits().len(),
                alpha.num_branches(),
                self.num_layers(),
                self.num_branches()
            )))
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass through the collapsed layers. Returns the class logits
    /// together with the cache needed by [`Network::backward`].
    pub fn forward(&self, alpha: &AlphaParams, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_alpha(alpha)?;
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
            combined: Vec::with_capacity(self.layers.len()),
            alphas: Vec::with_capacity(self.layers.len()),
        };
        let mut input = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = alpha.layer_alpha(l);
            let (w, b) = combine_branches(layer, &a)?;
            let z = w.affine_rows(&input, &b);
            if !z.is_finite() {
                return Err(Error::NonFiniteActivation {
                    layer: l,
                    stage: "forward",
                });
            }
            let next = if l < last { relu(&z) } else { z.clone() };
            cache.inputs.push(std::mem::replace(&mut input, next));
            cache.pre_activations.push(z);
            cache.combined.push((w, b));
            cache.alphas.push(a);
        }
        Ok((input, cache))
    }

    /// Reference forward pass that evaluates every branch separately and
    /// mixes the branch outputs: `Σ_b α_b (W_b x + bias_b)` per layer.
    ///
    /// Mathematically identical to [`Network::forward`]; `B` times slower.
    pub fn forward_branchwise(&self, alpha: &AlphaParams, x: &Matrix) -> Result<Matrix> {
        self.check_alpha(alpha)?;
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut input = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = alpha.layer_alpha(l);
            let mut z = Matrix::zeros(input.rows(), layer.out_dim());
            for ((ab, w), b) in a
                .iter()
                .zip(layer.branch_weights())
                .zip(layer.branch_biases())
            {
                z.add_scaled(*ab, &w.affine_rows(&input, b));
            }
            input = if l < last { relu(&z) } else { z };
        }
        Ok(input)
    }

    /// Class logits only.
    pub fn predict_logits(&self, alpha: &AlphaParams, x: &Matrix) -> Result<Matrix> {
        self.forward(alpha, x).map(|(logits, _)| logits)
    }

    /// Argmax class per row; ties resolve to the lowest class index.
    pub fn predict(&self, alpha: &AlphaParams, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.predict_logits(alpha, x)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Mean softmax cross-entropy of a batch.
    pub fn loss(&self, alpha: &AlphaParams, x: &Matrix, labels: &[usize]) -> Result<f64> {
        self.check_batch(x, labels)?;
        let logits = self.predict_logits(alpha, x)?;
        Ok(cross_entropy(&logits, labels).0)
    }

    fn check_batch(&self, x: &Matrix, labels: &[usize]) -> Result<()> {
        if labels.is_empty() || x.rows() == 0 {
            return Err(Error::usage("empty batch"));
        }
        if labels.len() != x.rows() {
            return Err(Error::usage(format!(
                "{} labels for {} samples",
                labels.len(),
                x.rows()
            )));
        }
        let c = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::usage(format!("label {bad} outside [0, {c})")));
        }
        Ok(())
    }

    /// Mean cross-entropy and exact gradients for the requested group(s).
    /// The other group's gradients are zero-filled. Mixing-weight gradients
    /// are taken with respect to the logits.
    pub fn loss_and_grads(
        &self,
        alpha: &AlphaParams,
        x: &Matrix,
        labels: &[usize],
        wrt: Wrt,
    ) -> Result<(f64, GradientBundle)> {
        self.check_batch(x, labels)?;
        let (logits, cache) = self.forward(alpha, x)?;
        let (loss, d_logits) = cross_entropy(&logits, labels);
        let grads = self.backward(alpha, &cache, d_logits, wrt)?;
        Ok((loss, grads))
    }

    /// Backpropagates `d_logits` (gradient of the loss w.r.t. the logits).
    pub fn backward(
        &self,
        alpha: &AlphaParams,
        cache: &ForwardCache,
        d_logits: Matrix,
        wrt: Wrt,
    ) -> Result<GradientBundle> {
        let mut grads = GradientBundle::zeros(self, alpha);
        let mut dz = d_logits;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let (w, _) = &cache.combined[l];
            let a = &cache.alphas[l];
            // d(collapsed W) = dZᵀ·X, d(collapsed bias) = column sums of dZ
            let dw = dz.t_matmul(input);
            let db = dz.sum_rows();
            if !dw.is_finite() || db.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation {
                    layer: l,
                    stage: "backward",
                });
            }
            if wrt.weights() {
                for (b, ab) in a.iter().enumerate() {
                    grads.d_branch_weights[l][b] = dw.scaled(*ab);
                    grads.d_branch_biases[l][b] = db.iter().map(|v| ab * v).collect();
                }
            }
            if wrt.alpha() {
                let d_alpha: Vec<f64> = layer
                    .branch_weights()
                    .iter()
                    .zip(layer.branch_biases())
                    .map(|(wb, bb)| dw.dot(wb) + super::matrix::dot(&db, bb))
                    .collect();
                let d_rho = softmax_backward(a, &d_alpha);
                let row = alpha.row_for_layer(l);
                for (acc, g) in grads.d_alpha_logits[row].iter_mut().zip(d_rho) {
                    *acc += g;
                }
            }
            if l > 0 {
                let mut d_in = dz.matmul(w);
                let z_prev = &cache.pre_activations[l - 1];
                for (d, z) in d_in.as_mut_slice().iter_mut().zip(z_prev.as_slice()) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
                dz = d_in;
            }
        }
        Ok(grads)
    }

    /// Plain SGD on every branch weight and bias.
    pub fn sgd_step(&mut self, grads: &GradientBundle, learning_rate: f64) -> Result<()> {
        if grads.d_branch_weights.len() != self.layers.len() {
            return Err(Error::config("weight gradient shape mismatch"));
        }
        for ((layer, dws), dbs) in self
            .layers
            .iter_mut()
            .zip(&grads.d_branch_weights)
            .zip(&grads.d_branch_biases)
        {
            if dws.len() != layer.num_branches() || dbs.len() != layer.num_branches() {
                return Err(Error::config("weight gradient shape mismatch"));
            }
            for (w, dw) in layer.branch_weights_mut().iter_mut().zip(dws) {
                if w.shape() != dw.shape() {
                    return Err(Error::config("weight gradient shape mismatch"));
                }
                super::sgd_step(w.as_mut_slice(), dw.as_slice(), learning_rate)?;
            }
            for (b, db) in layer.branch_biases_mut().iter_mut().zip(dbs) {
                super::sgd_step(b, db, learning_rate)?;
            }
        }
        Ok(())
    }
}

fn relu(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for v in out.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        for (c, &z) in row.iter().enumerate() {
            let p = (z - log_z).exp();
            let target = if c == y { 1.0 } else { 0.0 };
            grad.set(r, c, (p - target) / n);
        }
    }
    (total / n, grad)
}
