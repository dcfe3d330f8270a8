//! Output-space post-hoc calibrators: temperature scaling (NLL-fit and
//! ECE-grid-fit), vector/matrix scaling, and the ODIR-regularized matrix and
//! Dirichlet variants.
//!
//! All fits are plain full-batch gradient descent over a deterministic loop,
//! so a given `(LogitSet, FitConfig)` always produces the same calibrator.
//! The off-diagonal/intercept penalty uses squared terms; the plain sums
//! sometimes quoted for it are sign-indefinite and cannot act as a penalty.

use crate::error::{Error, Result};
use crate::metrics::{ece, softmax_rows, softmax_t, ProbBatch};
use crate::tensor::Tensor;

/// Cached logits of the fixed classifier on a calibration set.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSet {
    pub logits: Tensor,
    pub labels: Vec<usize>,
}

impl LogitSet {
    pub fn new(logits: Tensor, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != logits.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} logit rows",
                labels.len(),
                logits.rows()
            )));
        }
        let k = logits.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        Ok(Self { logits, labels })
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.rows() == 0
    }

    pub fn class_count(&self) -> usize {
        self.logits.cols()
    }
}

/// A fitted output-space calibrator.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearCalib {
    /// `q = softmax(z / T)`, argmax-preserving.
    Temperature { t: f64 },
    /// `q = softmax(W z + b)` with `W` diagonal.
    Vector { w: Tensor, b: Vec<f64> },
    /// `q = softmax(W z + b)` with dense `W`.
    Matrix { w: Tensor, b: Vec<f64> },
    /// `q = softmax(W ln(softmax(z)) + b)`.
    Dirichlet { w: Tensor, b: Vec<f64> },
}

impl LinearCalib {
    pub fn family(&self) -> &'static str {
        match self {
            LinearCalib::Temperature { .. } => "temperature",
            LinearCalib::Vector { .. } => "vector",
            LinearCalib::Matrix { .. } => "matrix",
            LinearCalib::Dirichlet { .. } => "dirichlet",
        }
    }

    /// Applies the calibrator to a logit matrix, returning probabilities.
    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        match self {
            LinearCalib::Temperature { t } => softmax_rows(z, *t),
            LinearCalib::Vector { w, b } | LinearCalib::Matrix { w, b } => {
                softmax_rows(&affine_rows(z, w, b)?, 1.0)
            }
            LinearCalib::Dirichlet { w, b } => {
                let pseudo = log_softmax_rows(z);
                softmax_rows(&affine_rows(&pseudo, w, b)?, 1.0)
            }
        }
    }
}

/// Settings for the gradient-descent fits.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Regularization weights tried by the ODIR-selected fits.
    pub odir_lambdas: Vec<f64>,
    /// Bin count for ECE-based lambda selection.
    pub selection_bins: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 1000,
            odir_lambdas: vec![1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4],
            selection_bins: 15,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Which linear-scaling family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingFamily {
    Vector,
    Matrix,
}

/// Row-wise `W z + b`.
fn affine_rows(z: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    if w.cols() != z.cols() || w.rows() != b.len() {
        return Err(Error::Dimension(format!(
            "calibrator is {}x{}/{} for {}-class logits",
            w.rows(),
            w.cols(),
            b.len(),
            z.cols()
        )));
    }
    let mut out = Tensor::zeros(z.rows(), w.rows());
    for i in 0..z.rows() {
        let zrow = z.row(i);
        let orow = out.row_mut(i);
        for (o, ov) in orow.iter_mut().enumerate() {
            let wrow = w.row(o);
            let mut acc = b[o];
            for (wv, zv) in wrow.iter().zip(zrow) {
                acc += wv * zv;
            }
            *ov = acc;
        }
    }
    Ok(out)
}

/// Row-wise `ln softmax(z)` (the Dirichlet pseudo-logits), computed with
/// max-subtraction.
pub fn log_softmax_rows(z: &Tensor) -> Tensor {
    let mut out = z.clone();
    for row in out.data_mut().chunks_exact_mut(z.cols()) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Mean NLL of `softmax(z/t)` against the labels.
#[cfg(test)]
fn mean_nll_at_t(l: &LogitSet, t: f64) -> Result<f64> {
    let probs = softmax_rows(&l.logits, t)?;
    let p = ProbBatch::new(probs, l.labels.clone())?;
    Ok(crate::metrics::nll(&p) / l.len() as f64)
}

/// Fits a temperature by full-batch gradient descent on the mean NLL,
/// optimizing `ln T` so positivity never needs clipping. Starts at `T = 1`;
/// a constant objective (e.g. all-constant logit rows) leaves `T = 1`.
pub fn fit_temperature_nll(l: &LogitSet, cfg: &FitConfig) -> Result<LinearCalib> {
    if l.is_empty() {
        return Err(Error::Dimension("empty logit set".into()));
    }
    cfg.validate()?;
    let n = l.len() as f64;
    let mut u = 0.0f64; // ln T
    for _ in 0..cfg.epochs {
        let t = u.exp();
        let mut grad = 0.0;
        for (row, &y) in l.logits.iter_rows().zip(&l.labels) {
            let q = softmax_t(row, t)?;
            let mean_z: f64 = q.iter().zip(row).map(|(qk, zk)| qk * zk).sum();
            // d(-ln q_y)/d(ln T) = (z_y - E_q[z]) / T
            grad += (row[y] - mean_z) / t;
        }
        u -= cfg.learning_rate * grad / n;
        if !u.is_finite() {
            return Err(Error::Numerical("temperature fit diverged".into()));
        }
    }
    Ok(LinearCalib::Temperature { t: u.exp() })
}

/// Grid-searched temperature: evaluates ECE at `m` bins on every grid point
/// `lo + k*step <= hi` (k >= 1, so `T = 0` is excluded) and returns the
/// minimizer, ties toward smaller T.
pub fn fit_temperature_grid(
    l: &LogitSet,
    lo: f64,
    hi: f64,
    step: f64,
    m: usize,
) -> Result<LinearCalib> {
    if !(lo >= 0.0 && lo < hi && step > 0.0) {
        return Err(Error::Domain(format!(
            "bad grid: lo={lo}, hi={hi}, step={step}"
        )));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut k = 1usize;
    loop {
        let t = lo + k as f64 * step;
        if t > hi + 1e-12 {
            break;
        }
        let probs = softmax_rows(&l.logits, t)?;
        let p = ProbBatch::new(probs, l.labels.clone())?;
        let (e, _) = ece(&p, m)?;
        if best.is_none_or(|(be, _)| e < be) {
            best = Some((e, t));
        }
        k += 1;
    }
    match best {
        Some((_, t)) => Ok(LinearCalib::Temperature { t }),
        None => Err(Error::Domain(
            "temperature grid is empty (lo + step > hi)".into(),
        )),
    }
}

/// Squared off-diagonal and intercept penalty:
/// `sum_{j!=k} w_jk^2 / (K(K-1)) + sum_j b_j^2 / K`.
pub fn odir_penalty(w: &Tensor, b: &[f64]) -> Result<f64> {
    if w.rows() != w.cols() {
        return Err(Error::Dimension(format!(
            "penalty needs a square matrix, got {}x{}",
            w.rows(),
            w.cols()
        )));
    }
    let k = w.rows();
    let mut off = 0.0;
    for j in 0..k {
        for c in 0..k {
            if j != c {
                off += w.get(j, c) * w.get(j, c);
            }
        }
    }
    let bias: f64 = b.iter().map(|&v| v * v).sum();
    Ok(off / (k * (k - 1)) as f64 + bias / k as f64)
}

/// Fits `q = softmax(W z + b)` by full-batch gradient descent on the mean
/// NLL, optionally plus `lambda * odir_penalty` for the matrix family.
/// Starts from `W = I`, `b = 0`; the vector family keeps off-diagonals
/// pinned to zero throughout.
pub fn fit_linear_scaling(
    l: &LogitSet,
    family: ScalingFamily,
    odir_lambda: Option<f64>,
    cfg: &FitConfig,
) -> Result<LinearCalib> {
    if l.is_empty() {
        return Err(Error::Dimension("empty logit set".into()));
    }
    cfg.validate()?;
    let k = l.class_count();
    let n = l.len() as f64;
    let mut w = Tensor::identity(k);
    let mut b = vec![0.0; k];
    for _ in 0..cfg.epochs {
        let v = affine_rows(&l.logits, &w, &b)?;
        let mut dw = Tensor::zeros(k, k);
        let mut db = vec![0.0; k];
        for (i, (vrow, &y)) in v.iter_rows().zip(&l.labels).enumerate() {
            let q = softmax_t(vrow, 1.0)?;
            let zrow = l.logits.row(i);
            for (j, &qj) in q.iter().enumerate() {
                let g = (qj - if j == y { 1.0 } else { 0.0 }) / n;
                db[j] += g;
                let wrow = dw.row_mut(j);
                for (c, &zc) in zrow.iter().enumerate() {
                    wrow[c] += g * zc;
                }
            }
        }
        if let (ScalingFamily::Matrix, Some(lambda)) = (family, odir_lambda) {
            let denom = (k * (k - 1)) as f64;
            for j in 0..k {
                for c in 0..k {
                    if j != c {
                        let g = dw.get(j, c) + lambda * 2.0 * w.get(j, c) / denom;
                        dw.set(j, c, g);
                    }
                }
                db[j] += lambda * 2.0 * b[j] / k as f64;
            }
        }
        if family == ScalingFamily::Vector {
            for j in 0..k {
                for c in 0..k {
                    if j != c {
                        dw.set(j, c, 0.0);
                    }
                }
            }
        }
        for (wv, dv) in w.data_mut().iter_mut().zip(dw.data()) {
            *wv -= cfg.learning_rate * dv;
        }
        for (bv, dv) in b.iter_mut().zip(&db) {
            *bv -= cfg.learning_rate * dv;
        }
        if w.data().iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "linear-scaling fit diverged (family {:?}, lambda {:?})",
                family, odir_lambda
            )));
        }
    }
    Ok(match family {
        ScalingFamily::Vector => LinearCalib::Vector { w, b },
        ScalingFamily::Matrix => LinearCalib::Matrix { w, b },
    })
}

/// Matrix scaling with the ODIR term, selecting the regularization weight
/// from `cfg.odir_lambdas` by lowest calibration-set ECE. Diverged fits
/// (large lambda under plain GD) are skipped.
pub fn fit_ms_odir(l: &LogitSet, cfg: &FitConfig) -> Result<LinearCalib> {
    select_by_ece(l, cfg, |lambda| {
        fit_linear_scaling(l, ScalingFamily::Matrix, Some(lambda), cfg)
    })
}

/// Dirichlet calibration: transforms logits to pseudo-logits `ln softmax(z)`
/// once, then fits the matrix family with ODIR, selecting lambda by lowest
/// calibration-set ECE.
pub fn fit_dirichlet(l: &LogitSet, cfg: &FitConfig) -> Result<LinearCalib> {
    let pseudo = LogitSet::new(log_softmax_rows(&l.logits), l.labels.clone())?;
    let fitted = select_by_ece(l, cfg, |lambda| {
        fit_linear_scaling(&pseudo, ScalingFamily::Matrix, Some(lambda), cfg)
    })?;
    match fitted {
        LinearCalib::Matrix { w, b } => Ok(LinearCalib::Dirichlet { w, b }),
        other => Ok(other),
    }
}

/// Runs `fit` once per lambda and keeps the candidate with the lowest ECE on
/// the calibration set itself; ties resolve to the earliest lambda.
fn select_by_ece<F>(l: &LogitSet, cfg: &FitConfig, fit: F) -> Result<LinearCalib>
where
    F: Fn(f64) -> Result<LinearCalib>,
{
    if cfg.odir_lambdas.is_empty() {
        return Err(Error::Domain("odir lambda list is empty".into()));
    }
    let mut best: Option<(f64, LinearCalib)> = None;
    let mut last_err = None;
    for &lambda in &cfg.odir_lambdas {
        let candidate = match fit(lambda) {
            Ok(c) => c,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let probs = candidate.apply(&l.logits)?;
        let p = ProbBatch::new(probs, l.labels.clone())?;
        let (e, _) = ece(&p, cfg.selection_bins)?;
        if best.as_ref().is_none_or(|(be, _)| e < *be) {
            best = Some((e, candidate));
        }
    }
    match best {
        Some((_, c)) => Ok(c),
        None => Err(last_err.unwrap_or_else(|| Error::Numerical("no lambda converged".into()))),
    }
}
