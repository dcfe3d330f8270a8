//! Fixed dense feed-forward classifiers with reverse-mode gradients.
//!
//! A [`Network`] is an immutable stack of dense and relu layers mapping an
//! input batch (n x m) to logits (n x K). Besides the forward pass it exposes
//! vector-Jacobian products with respect to the inputs (what input
//! calibration needs) and with respect to the weights (what base-model
//! training needs). All arithmetic is 64-bit and reductions run in a fixed
//! order, so results are bit-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::softmax_t;
use crate::tensor::Tensor;

/// One layer of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Affine map `h -> W h + b` with `W` of shape (out x in).
    Dense { weight: Tensor, bias: Vec<f64> },
    /// Element-wise `max(0, h)`. Subgradient at exactly 0 is taken as 0.
    Relu,
}

impl LayerSpec {
    pub fn dense(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Dimension(format!(
                "dense bias length {} != weight rows {}",
                bias.len(),
                weight.rows()
            )));
        }
        if let Some(idx) = bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("bias entry {idx} is not finite")));
        }
        Ok(LayerSpec::Dense { weight, bias })
    }
}

/// Architecture plan consumed by [`train_base_classifier`]: layer kinds and
/// dims only, weights are drawn from the seeded initializer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPlan {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
}

/// A fixed-weight K-way classifier. Weights are immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    class_count: usize,
}

impl Network {
    /// Validates that layer dimensions chain from `input_dim` to a final
    /// output of at least two classes.
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Dimension("input_dim must be >= 1".into()));
        }
        let mut cur = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if let LayerSpec::Dense { weight, .. } = layer {
                if weight.cols() != cur {
                    return Err(Error::Dimension(format!(
                        "layer {}: dense expects input dim {}, previous layer produces {}",
                        i,
                        weight.cols(),
                        cur
                    )));
                }
                cur = weight.rows();
            }
        }
        if cur < 2 {
            return Err(Error::Dimension(format!(
                "final output dim {cur} < 2 classes"
            )));
        }
        Ok(Self {
            layers,
            input_dim,
            class_count: cur,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Logits `z_i = f(x_i)` for every row of `x`. No softmax is applied.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let acts = forward_cached(&self.layers, x);
        Ok(acts.into_iter().last().expect("at least the input"))
    }

    /// Vector-Jacobian product through all layers: given upstream `dz`
    /// (n x K), returns d(sum_ik dz_ik * z_ik)/dx (n x m).
    pub fn backward_input(&self, x: &Tensor, dz: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.check_upstream(x, dz)?;
        let acts = forward_cached(&self.layers, x);
        let (dx, _) = backprop(&self.layers, &acts, dz, false);
        Ok(dx)
    }

    /// Per-layer weight/bias gradients for the same scalar as
    /// [`Network::backward_input`]. Entries are `None` for relu layers.
    pub fn backward_params(&self, x: &Tensor, dz: &Tensor) -> Result<Vec<Option<LayerGrads>>> {
        self.check_input(x)?;
        self.check_upstream(x, dz)?;
        let acts = forward_cached(&self.layers, x);
        let (_, grads) = backprop(&self.layers, &acts, dz, true);
        Ok(grads)
    }

    /// Gradient of the per-row output entropy `H(softmax(f(x)/t))` with
    /// respect to the input; row i is the entropy gradient at `x_i`.
    pub fn entropy_input_grad(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
        }
        self.check_input(x)?;
        let z = self.forward(x)?;
        let mut dz = Tensor::zeros(z.rows(), z.cols());
        for i in 0..z.rows() {
            let p = softmax_t(z.row(i), t)?;
            // H = -sum p ln p; dH/dz_j = -p_j (ln p_j + H) / t, with the
            // p = 0 limit taken as 0.
            let h: f64 = p
                .iter()
                .map(|&pk| if pk > 0.0 { -pk * pk.ln() } else { 0.0 })
                .sum();
            for j in 0..z.cols() {
                let pj = p[j];
                let g = if pj > 0.0 { -pj * (pj.ln() + h) / t } else { 0.0 };
                dz.set(i, j, g);
            }
        }
        self.backward_input(x, &dz)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_upstream(&self, x: &Tensor, dz: &Tensor) -> Result<()> {
        if dz.rows() != x.rows() || dz.cols() != self.class_count {
            return Err(Error::Dimension(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                dz.rows(),
                dz.cols(),
                x.rows(),
                self.class_count
            )));
        }
        Ok(())
    }
}

/// Weight/bias gradients of one dense layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// A labelled feature batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Dimension("batch needs at least one sample".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Copies the given rows into a new batch (used for minibatching).
    pub fn select(&self, rows: &[usize]) -> Batch {
        let cols = self.features.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.features.row(r));
            labels.push(self.labels[r]);
        }
        Batch {
            features: Tensor::new(rows.len(), cols, data).expect("rows are finite"),
            labels,
        }
    }
}

/// Forward pass caching every activation: `acts[0]` is the input, `acts[l+1]`
/// the output of layer `l`.
fn forward_cached(layers: &[LayerSpec], x: &Tensor) -> Vec<Tensor> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.clone());
    for layer in layers {
        let h = acts.last().expect("non-empty");
        let next = match layer {
            LayerSpec::Dense { weight, bias } => {
                let (n, in_dim, out_dim) = (h.rows(), weight.cols(), weight.rows());
                let mut out = Tensor::zeros(n, out_dim);
                for i in 0..n {
                    let hrow = h.row(i);
                    let orow = out.row_mut(i);
                    for (o, ov) in orow.iter_mut().enumerate().take(out_dim) {
                        let wrow = weight.row(o);
                        let mut acc = bias[o];
                        for j in 0..in_dim {
                            acc += wrow[j] * hrow[j];
                        }
                        *ov = acc;
                    }
                }
                out
            }
            LayerSpec::Relu => {
                let mut out = h.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
        };
        acts.push(next);
    }
    acts
}

/// Reverse pass. Returns the input gradient and (optionally) per-layer
/// parameter gradients aligned with `layers`.
fn backprop(
    layers: &[LayerSpec],
    acts: &[Tensor],
    dz: &Tensor,
    want_params: bool,
) -> (Tensor, Vec<Option<LayerGrads>>) {
    let mut grads: Vec<Option<LayerGrads>> = vec![None; layers.len()];
    let mut upstream = dz.clone();
    for (l, layer) in layers.iter().enumerate().rev() {
        let input = &acts[l];
        match layer {
            LayerSpec::Dense { weight, .. } => {
                let (n, in_dim, out_dim) = (input.rows(), weight.cols(), weight.rows());
                if want_params {
                    let mut dw = Tensor::zeros(out_dim, in_dim);
                    let mut db = vec![0.0; out_dim];
                    for i in 0..n {
                        let urow = upstream.row(i);
                        let irow = input.row(i);
                        for o in 0..out_dim {
                            let u = urow[o];
                            db[o] += u;
                            let wrow = dw.row_mut(o);
                            for j in 0..in_dim {
                                wrow[j] += u * irow[j];
                            }
                        }
                    }
                    grads[l] = Some(LayerGrads {
                        weight: dw,
                        bias: db,
                    });
                }
                let mut dx = Tensor::zeros(n, in_dim);
                for i in 0..n {
                    let urow = upstream.row(i);
                    let xrow = dx.row_mut(i);
                    for o in 0..out_dim {
                        let u = urow[o];
                        let wrow = weight.row(o);
                        for j in 0..in_dim {
                            xrow[j] += u * wrow[j];
                        }
                    }
                }
                upstream = dx;
            }
            LayerSpec::Relu => {
                let mut dx = upstream;
                for (dv, &pre) in dx.data_mut().iter_mut().zip(input.data()) {
                    if pre <= 0.0 {
                        *dv = 0.0;
                    }
                }
                upstream = dx;
            }
        }
    }
    (upstream, grads)
}

/// Trains a fresh classifier by full-batch gradient descent on mean cross
/// entropy, starting from seeded Gaussian weights (mean 0, std 1/sqrt(in)).
/// The returned network is frozen; calibration never touches it again.
pub fn train_base_classifier(
    data: &Batch,
    arch: &[LayerPlan],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(arch.len());
    for plan in arch {
        match *plan {
            LayerPlan::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err(Error::Dimension("dense dims must be >= 1".into()));
                }
                let std = 1.0 / (in_dim as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("std is positive");
                let data: Vec<f64> = (0..in_dim * out_dim)
                    .map(|_| normal.sample(&mut rng))
                    .collect();
                layers.push(LayerSpec::Dense {
                    weight: Tensor::new(out_dim, in_dim, data)?,
                    bias: vec![0.0; out_dim],
                });
            }
            LayerPlan::Relu => layers.push(LayerSpec::Relu),
        }
    }
    // Validate chaining once before the loop.
    let net = Network::new(data.features.cols(), layers)?;
    let k = net.class_count();
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= k) {
        return Err(Error::Dimension(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut layers = net.layers.clone();
    let n = data.len() as f64;
    for _ in 0..epochs {
        let acts = forward_cached(&layers, &data.features);
        let z = acts.last().expect("non-empty");
        let mut dz = Tensor::zeros(z.rows(), z.cols());
        for i in 0..z.rows() {
            let p = softmax_t(z.row(i), 1.0)?;
            let row = dz.row_mut(i);
            for (j, pj) in p.iter().enumerate() {
                row[j] = (pj - if data.labels[i] == j { 1.0 } else { 0.0 }) / n;
            }
        }
        let (_, grads) = backprop(&layers, &acts, &dz, true);
        for (layer, grad) in layers.iter_mut().zip(grads) {
            if let (LayerSpec::Dense { weight, bias }, Some(g)) = (layer, grad) {
                for (w, dw) in weight.data_mut().iter_mut().zip(g.weight.data()) {
                    *w -= learning_rate * dw;
                }
                for (b, db) in bias.iter_mut().zip(&g.bias) {
                    *b -= learning_rate * db;
                }
            }
        }
    }
    Network::new(data.features.cols(), layers)
}
