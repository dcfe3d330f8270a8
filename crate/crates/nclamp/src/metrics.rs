//! Calibration and performance metrics.
//!
//! Binning conventions (fixed so independent reference implementations can
//! match bit-exactly):
//! - equal-width bins are left-open right-closed over (0, 1]; a confidence
//!   landing exactly on a boundary belongs to the bin whose *right* edge it
//!   is, and a confidence of exactly 0 goes to the first bin;
//! - adaptive ranges sort ascending, stably by sample index, use
//!   floor(n / R) samples per range and give the remainder to the last
//!   (highest-confidence) range;
//! - argmax ties break toward the lowest class index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities below this floor are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// A batch of per-sample probability distributions with labels.
///
/// Each row must be nonnegative and sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    probs: Tensor,
    labels: Vec<usize>,
}

impl ProbBatch {
    pub fn new(probs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != probs.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                probs.rows()
            )));
        }
        let k = probs.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        for (i, row) in probs.iter_rows().enumerate() {
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::Domain(format!("row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self { probs, labels })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn class_count(&self) -> usize {
        self.probs.cols()
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Temperature softmax of one logit row, computed with max-subtraction.
pub fn softmax_t(z: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    let scaled: Vec<f64> = z.iter().map(|&v| v / t).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Row-wise temperature softmax of a logit matrix.
pub fn softmax_rows(z: &Tensor, t: f64) -> Result<Tensor> {
    let mut out = Tensor::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let p = softmax_t(z.row(i), t)?;
        out.row_mut(i).copy_from_slice(&p);
    }
    Ok(out)
}

/// Entropy of one distribution in nats, with 0 ln 0 := 0.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .map(|&pk| if pk > 0.0 { -pk * pk.ln() } else { 0.0 })
        .sum()
}

/// Mean per-row entropy of the batch.
pub fn mean_entropy(p: &ProbBatch) -> f64 {
    let n = p.len() as f64;
    p.probs.iter_rows().map(entropy).sum::<f64>() / n
}

/// Sum of negative log true-class probabilities.
pub fn nll(p: &ProbBatch) -> f64 {
    p.probs
        .iter_rows()
        .zip(p.labels())
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(p: &ProbBatch) -> f64 {
    let correct = p
        .probs
        .iter_rows()
        .zip(p.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    correct as f64 / p.len() as f64
}

/// Index of the equal-width bin over (0, 1] containing `confidence`:
/// the smallest i with confidence <= (i+1)/m.
fn bin_index(confidence: f64, m: usize) -> usize {
    for i in 0..m {
        if confidence <= (i + 1) as f64 / m as f64 {
            return i;
        }
    }
    m - 1
}

/// One reliability bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// Per-bin reliability detail for the top-1 prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub bins: Vec<BinStats>,
}

impl BinReport {
    /// CSV with header `bin_lower,bin_upper,count,accuracy,confidence`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lower,bin_upper,count,accuracy,confidence\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.lower, b.upper, b.count, b.accuracy, b.confidence
            ));
        }
        out
    }
}

/// Expected calibration error over `m` equal-width top-1 confidence bins,
/// with the bin-level detail used for reliability diagrams.
pub fn ece(p: &ProbBatch, m: usize) -> Result<(f64, BinReport)> {
    if m == 0 {
        return Err(Error::Domain("bin count must be >= 1".into()));
    }
    let n = p.len();
    let mut count = vec![0usize; m];
    let mut conf_sum = vec![0.0; m];
    let mut hits = vec![0usize; m];
    for (row, &y) in p.probs.iter_rows().zip(p.labels()) {
        let pred = argmax(row);
        let conf = row[pred];
        let b = bin_index(conf, m);
        count[b] += 1;
        conf_sum[b] += conf;
        if pred == y {
            hits[b] += 1;
        }
    }
    let mut total = 0.0;
    let mut bins = Vec::with_capacity(m);
    for i in 0..m {
        let (acc, conf) = if count[i] > 0 {
            (
                hits[i] as f64 / count[i] as f64,
                conf_sum[i] / count[i] as f64,
            )
        } else {
            (0.0, 0.0)
        };
        if count[i] > 0 {
            total += count[i] as f64 / n as f64 * (acc - conf).abs();
        }
        bins.push(BinStats {
            index: i,
            lower: i as f64 / m as f64,
            upper: (i + 1) as f64 / m as f64,
            count: count[i],
            accuracy: acc,
            confidence: conf,
        });
    }
    Ok((total, BinReport { bins }))
}

/// Static calibration error: every class probability binned per class.
pub fn sce(p: &ProbBatch, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Domain("bin count must be >= 1".into()));
    }
    let n = p.len();
    let k = p.class_count();
    let mut total = 0.0;
    for class in 0..k {
        let mut count = vec![0usize; m];
        let mut conf_sum = vec![0.0; m];
        let mut hits = vec![0usize; m];
        for (row, &y) in p.probs.iter_rows().zip(p.labels()) {
            let conf = row[class];
            let b = bin_index(conf, m);
            count[b] += 1;
            conf_sum[b] += conf;
            if y == class {
                hits[b] += 1;
            }
        }
        for i in 0..m {
            if count[i] > 0 {
                let acc = hits[i] as f64 / count[i] as f64;
                let conf = conf_sum[i] / count[i] as f64;
                total += count[i] as f64 / n as f64 * (acc - conf).abs();
            }
        }
    }
    Ok(total / k as f64)
}

/// Adaptive calibration error: per class, confidences sorted ascending and
/// split into `r` equal-count ranges (remainder to the last range).
pub fn ace(p: &ProbBatch, r: usize) -> Result<f64> {
    let n = p.len();
    if r == 0 {
        return Err(Error::Domain("range count must be >= 1".into()));
    }
    if r > n {
        return Err(Error::Domain(format!("range count {r} > sample count {n}")));
    }
    let k = p.class_count();
    let base = n / r;
    let mut total = 0.0;
    for class in 0..k {
        let mut order: Vec<usize> = (0..n).collect();
        // Stable sort by confidence; equal confidences keep index order.
        order.sort_by(|&a, &b| {
            p.probs
                .get(a, class)
                .partial_cmp(&p.probs.get(b, class))
                .expect("probabilities are finite")
        });
        let mut start = 0;
        for range in 0..r {
            let size = if range + 1 == r { n - start } else { base };
            let slice = &order[start..start + size];
            let conf: f64 =
                slice.iter().map(|&i| p.probs.get(i, class)).sum::<f64>() / size as f64;
            let acc = slice.iter().filter(|&&i| p.labels[i] == class).count() as f64 / size as f64;
            total += (acc - conf).abs();
            start += size;
        }
    }
    Ok(total / (k as f64 * r as f64))
}

/// Full evaluation product: accuracy, entropy, the three calibration errors,
/// NLL, and the top-1 reliability bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub ece: f64,
    pub ace: f64,
    pub sce: f64,
    pub nll: f64,
    pub bin_count: usize,
    pub range_count: usize,
    pub bins: Vec<BinStats>,
}

/// Computes every metric at once. `m` is the equal-width bin count, `r` the
/// adaptive range count.
pub fn metric_report(p: &ProbBatch, m: usize, r: usize) -> Result<MetricReport> {
    let (ece_value, bin_report) = ece(p, m)?;
    Ok(MetricReport {
        accuracy: accuracy(p),
        mean_entropy: mean_entropy(p),
        ece: ece_value,
        ace: ace(p, r)?,
        sce: sce(p, m)?,
        nll: nll(p),
        bin_count: m,
        range_count: r,
        bins: bin_report.bins,
    })
}
