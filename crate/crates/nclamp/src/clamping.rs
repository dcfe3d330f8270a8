//! Joint input-output calibration: a universal additive input perturbation
//! plus an output temperature, fitted together on a calibration set.
//!
//! The objective is the summed focal loss of `softmax(f(x_i + delta)/T)`
//! plus an L2 weight-decay term on `delta` (the perturbation is never
//! clipped to an input box during fitting; the decay term is the only
//! magnitude control). Setting `delta = 0` with `gamma = 0` reduces the
//! objective exactly to the temperature-scaling NLL objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::{ece, mean_entropy, softmax_rows, softmax_t, ProbBatch, PROB_FLOOR};
use crate::network::{Batch, Network};
use crate::tensor::Tensor;

/// The learned calibration product: perturbation and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampParams {
    pub delta: Vec<f64>,
    pub temperature: f64,
}

impl ClampParams {
    pub fn new(delta: Vec<f64>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Domain(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        if let Some(idx) = delta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("delta entry {idx} is not finite")));
        }
        Ok(Self { delta, temperature })
    }

    /// Identity calibration: zero perturbation, unit temperature.
    pub fn identity(m: usize) -> Self {
        Self {
            delta: vec![0.0; m],
            temperature: 1.0,
        }
    }
}

/// How to initialize the perturbation before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaInit {
    /// Seeded Gaussian, mean 0, standard deviation 0.1 (variance 0.01).
    Random { seed: u64 },
    /// First-order entropy-increment maximizer `sign(g) . eta`.
    DataDriven,
}

/// Fitting hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampHyper {
    /// Focal-loss focusing parameter; 0 recovers cross entropy.
    pub gamma: f64,
    /// Weight-decay strength on the perturbation.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Minibatch size, capped at the calibration-set size.
    pub batch_size: usize,
    pub epochs: usize,
    pub init: DeltaInit,
    /// Per-dimension feasible input box (used only by the data-driven init).
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Diagnostic switch: keep delta fixed at its initialization and fit
    /// only the temperature (recovers plain temperature scaling).
    pub freeze_delta: bool,
}

impl ClampHyper {
    /// Defaults for input dimension `m`: gamma 0, lambda 0, lr 0.001,
    /// batch 512, 100 epochs, random init, unit box.
    pub fn new(m: usize) -> Self {
        Self {
            gamma: 0.0,
            lambda: 0.0,
            learning_rate: 0.001,
            batch_size: 512,
            epochs: 100,
            init: DeltaInit::Random { seed: 0 },
            alpha: vec![0.0; m],
            beta: vec![1.0; m],
            freeze_delta: false,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::Domain("gamma must be >= 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Domain("lambda must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be >= 1".into()));
        }
        if self.alpha.len() != m || self.beta.len() != m {
            return Err(Error::Dimension(format!(
                "bounds have dims {}/{}, input dim is {m}",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        if let Some(j) = (0..m).find(|&j| self.alpha[j] > self.beta[j]) {
            return Err(Error::Domain(format!(
                "alpha[{j}] = {} > beta[{j}] = {}",
                self.alpha[j], self.beta[j]
            )));
        }
        Ok(())
    }
}

/// Everything the data-driven initialization computed, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct InitDiagnostics {
    /// Sum of per-sample entropy gradients.
    pub g: Vec<f64>,
    /// Per-dimension data minima.
    pub lower: Vec<f64>,
    /// Per-dimension data maxima.
    pub upper: Vec<f64>,
    /// Per-dimension slack toward the box face the gradient points at.
    pub eta: Vec<f64>,
    pub delta_tilde: Vec<f64>,
}

/// Focal loss of one distribution: `-(1 - p_y)^gamma * ln(p_y)`.
/// `gamma = 0` is exactly cross entropy.
pub fn focal_loss(p: &[f64], y: usize, gamma: f64) -> f64 {
    let py = p[y].max(PROB_FLOOR);
    let miss = (1.0 - py).max(0.0);
    -miss.powf(gamma) * py.ln()
}

/// d(focal)/d(p_y), with the removable singularities at p_y -> 1 taken by
/// their limits (0 for every gamma >= 0).
fn focal_loss_dpy(py: f64, gamma: f64) -> f64 {
    let py = py.max(PROB_FLOOR);
    let miss = 1.0 - py;
    if miss <= 0.0 {
        return if gamma > 0.0 { 0.0 } else { -1.0 / py };
    }
    let mut d = -miss.powf(gamma) / py;
    if gamma > 0.0 {
        d += gamma * miss.powf(gamma - 1.0) * py.ln();
    }
    d
}

/// Summed clamping objective: focal losses of `softmax(f(x_i + delta)/t)`
/// plus `lambda * ||delta||^2`.
pub fn clamp_objective(
    net: &Network,
    batch: &Batch,
    delta: &[f64],
    t: f64,
    gamma: f64,
    lambda: f64,
) -> Result<f64> {
    Ok(objective_with_grad(net, batch, delta, t, gamma, lambda, false)?.value)
}

/// Objective value together with its gradient in `(delta, t)`.
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub d_delta: Vec<f64>,
    pub d_t: f64,
}

/// Computes the summed objective and its exact gradient with respect to the
/// perturbation (through the network) and the temperature (analytic).
pub fn clamp_objective_grad(
    net: &Network,
    batch: &Batch,
    delta: &[f64],
    t: f64,
    gamma: f64,
    lambda: f64,
) -> Result<ObjectiveGrad> {
    objective_with_grad(net, batch, delta, t, gamma, lambda, true)
}

fn objective_with_grad(
    net: &Network,
    batch: &Batch,
    delta: &[f64],
    t: f64,
    gamma: f64,
    lambda: f64,
    want_grad: bool,
) -> Result<ObjectiveGrad> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    let shifted = batch.features.add_row_vector(delta)?;
    let z = net.forward(&shifted)?;
    let mut value = lambda * delta.iter().map(|d| d * d).sum::<f64>();
    let mut dz = Tensor::zeros(z.rows(), z.cols());
    let mut d_t = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        let zrow = z.row(i);
        let p = softmax_t(zrow, t)?;
        value += focal_loss(&p, y, gamma);
        if !want_grad {
            continue;
        }
        // Chain rule through s = z/t: dL/ds_j = dL/dp_y * p_y (1[y=j] - p_j).
        let dpy = focal_loss_dpy(p[y], gamma);
        let py = p[y];
        for j in 0..p.len() {
            let ds = dpy * py * (if j == y { 1.0 } else { 0.0 } - p[j]);
            dz.set(i, j, ds / t);
            d_t += ds * (-zrow[j] / (t * t));
        }
    }
    let mut d_delta = vec![0.0; delta.len()];
    if want_grad {
        let dx = net.backward_input(&shifted, &dz)?;
        d_delta = dx.column_sums();
        for (dd, &d) in d_delta.iter_mut().zip(delta) {
            *dd += 2.0 * lambda * d;
        }
    }
    Ok(ObjectiveGrad {
        value,
        d_delta,
        d_t,
    })
}

/// Seeded Gaussian perturbation, mean 0, std 0.1.
pub fn random_init_delta(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("valid std");
    (0..m).map(|_| normal.sample(&mut rng)).collect()
}

/// Slack and perturbation from a summed entropy gradient and box/data
/// bounds: `eta_j` is the remaining room toward the box face the gradient
/// points at (clamped at 0 if the data already touches it), and
/// `delta_j = sign(g_j) * eta_j`.
pub fn init_from_gradient(
    g: &[f64],
    alpha: &[f64],
    beta: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let m = g.len();
    let mut eta = vec![0.0; m];
    let mut delta = vec![0.0; m];
    for j in 0..m {
        if g[j] < 0.0 {
            eta[j] = (lower[j] - alpha[j]).max(0.0);
            delta[j] = -eta[j];
        } else if g[j] > 0.0 {
            eta[j] = (beta[j] - upper[j]).max(0.0);
            delta[j] = eta[j];
        }
    }
    (eta, delta)
}

/// Data-driven initialization: the perturbation maximizing the first-order
/// entropy increment `delta . g` over the slack left between the data and
/// the feasible box.
pub fn data_driven_init(
    net: &Network,
    calib: &Batch,
    t: f64,
    alpha: &[f64],
    beta: &[f64],
) -> Result<(Vec<f64>, InitDiagnostics)> {
    if calib.is_empty() {
        return Err(Error::Domain("calibration set is empty".into()));
    }
    let grads = net.entropy_input_grad(&calib.features, t)?;
    let g = grads.column_sums();
    let (lower, upper) = calib.features.column_bounds();
    if g.len() != alpha.len() || g.len() != beta.len() {
        return Err(Error::Dimension(format!(
            "bounds have dims {}/{}, input dim is {}",
            alpha.len(),
            beta.len(),
            g.len()
        )));
    }
    let (eta, delta_tilde) = init_from_gradient(&g, alpha, beta, &lower, &upper);
    let diag = InitDiagnostics {
        g,
        lower,
        upper,
        eta,
        delta_tilde: delta_tilde.clone(),
    };
    Ok((delta_tilde, diag))
}

/// The result of a clamping fit: final parameters plus the full-set
/// objective recorded at the end of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampFit {
    pub params: ClampParams,
    pub epoch_loss: Vec<f64>,
}

/// Fits `(delta, T)` by minibatch SGD with a seeded shuffle per epoch.
/// `T` starts at 1 and is optimized through `ln T`; `delta` starts per
/// `hyper.init`. The objective is the sum over the calibration set, but
/// each step uses the batch-mean gradient (the sum rescaled by `1/|B|`),
/// which leaves the minimizer unchanged while keeping learning rates
/// batch-size independent; the weight-decay term enters each minibatch
/// pro-rata (`lambda * |B|/n * ||delta||^2`).
pub fn fit_neural_clamping(
    net: &Network,
    calib: &Batch,
    hyper: &ClampHyper,
    seed: u64,
) -> Result<ClampFit> {
    let m = net.input_dim();
    hyper.validate(m)?;
    if calib.features.cols() != m {
        return Err(Error::Dimension(format!(
            "calibration features have {} dims, network expects {m}",
            calib.features.cols()
        )));
    }
    let n = calib.len();
    let batch_size = hyper.batch_size.min(n);
    let mut delta = match hyper.init {
        DeltaInit::Random { seed } => random_init_delta(m, seed),
        DeltaInit::DataDriven => data_driven_init(net, calib, 1.0, &hyper.alpha, &hyper.beta)?.0,
    };
    let mut u = 0.0f64; // ln T
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let sub = calib.select(chunk);
            let t = u.exp();
            let lambda_eff = hyper.lambda * chunk.len() as f64 / n as f64;
            let grad =
                clamp_objective_grad(net, &sub, &delta, t, hyper.gamma, lambda_eff)?;
            if !grad.value.is_finite() {
                return Err(Error::Numerical(format!(
                    "clamping objective became non-finite at epoch {epoch}"
                )));
            }
            let scale = hyper.learning_rate / chunk.len() as f64;
            if !hyper.freeze_delta {
                for (d, g) in delta.iter_mut().zip(&grad.d_delta) {
                    *d -= scale * g;
                }
            }
            u -= scale * grad.d_t * t;
            if !u.is_finite() || delta.iter().any(|d| !d.is_finite()) {
                return Err(Error::Numerical(format!(
                    "clamping parameters became non-finite at epoch {epoch}"
                )));
            }
        }
        let full = clamp_objective(net, calib, &delta, u.exp(), hyper.gamma, hyper.lambda)?;
        epoch_loss.push(full);
    }
    Ok(ClampFit {
        params: ClampParams::new(delta, u.exp())?,
        epoch_loss,
    })
}

/// Calibrated probabilities `softmax(f(x_i + delta)/T)` for every row.
/// Unlike pure temperature scaling this can change argmax predictions.
pub fn apply_clamping(net: &Network, params: &ClampParams, x: &Tensor) -> Result<Tensor> {
    let shifted = x.add_row_vector(&params.delta)?;
    let z = net.forward(&shifted)?;
    softmax_rows(&z, params.temperature)
}

/// One sweep cell: hyperparameters and the calibration-set quality reached.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub lambda: f64,
    pub ece: f64,
    pub entropy: f64,
    pub final_loss: f64,
}

/// Grid-sweep outcome: the winning cell and the full table in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best_gamma: f64,
    pub best_lambda: f64,
    pub params: ClampParams,
    pub table: Vec<SweepRow>,
}

impl SweepResult {
    /// CSV with header `gamma,lambda,ece,entropy,final_loss`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("gamma,lambda,ece,entropy,final_loss\n");
        for row in &self.table {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.gamma, row.lambda, row.ece, row.entropy, row.final_loss
            ));
        }
        out
    }
}

/// Fits one clamping calibrator per `(gamma, lambda)` grid cell and selects
/// the cell with the lowest calibration-set ECE (ties toward the earlier
/// grid entry, i.e. smaller gamma then smaller lambda for sorted grids).
pub fn sweep_hyper(
    net: &Network,
    calib: &Batch,
    gamma_grid: &[f64],
    lambda_grid: &[f64],
    base: &ClampHyper,
    bins: usize,
    seed: u64,
) -> Result<SweepResult> {
    if gamma_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::Domain("sweep grids must be nonempty".into()));
    }
    let mut table = Vec::with_capacity(gamma_grid.len() * lambda_grid.len());
    let mut best: Option<(f64, f64, f64, ClampParams)> = None;
    for &gamma in gamma_grid {
        for &lambda in lambda_grid {
            let hyper = ClampHyper {
                gamma,
                lambda,
                ..base.clone()
            };
            let fit = fit_neural_clamping(net, calib, &hyper, seed)?;
            let probs = apply_clamping(net, &fit.params, &calib.features)?;
            let p = ProbBatch::new(probs, calib.labels.clone())?;
            let (e, _) = ece(&p, bins)?;
            let entropy = mean_entropy(&p);
            let final_loss = *fit.epoch_loss.last().unwrap_or(&f64::NAN);
            table.push(SweepRow {
                gamma,
                lambda,
                ece: e,
                entropy,
                final_loss,
            });
            if best.as_ref().is_none_or(|(be, ..)| e < *be) {
                best = Some((e, gamma, lambda, fit.params));
            }
        }
    }
    let (_, best_gamma, best_lambda, params) = best.expect("grids are nonempty");
    Ok(SweepResult {
        best_gamma,
        best_lambda,
        params,
        table,
    })
}
