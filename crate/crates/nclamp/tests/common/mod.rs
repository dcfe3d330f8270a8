//! Shared test infrastructure: brute-force reference implementations of the
//! calibration metrics (kept independent of the library's code paths) and
//! finite-difference helpers for the gradient suite.
//!
//! The references follow the same stated conventions as the library —
//! left-open right-closed equal-width bins over (0, 1] with boundary values
//! in the lower bin, stable ascending sorts for adaptive ranges, argmax ties
//! to the lowest index — but are organized differently: they materialize
//! explicit per-bin membership lists and average over them.

#![allow(dead_code)]

use nclamp::metrics::ProbBatch;
use nclamp::network::{Batch, LayerPlan, Network};
use nclamp::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardUniform};

fn ref_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

/// Membership of a confidence in the equal-width partition of (0, 1]:
/// the first bin whose right edge is >= the value.
fn ref_bin_of(confidence: f64, m: usize) -> usize {
    let mut bin = m - 1;
    for i in 0..m {
        if confidence <= (i + 1) as f64 / m as f64 {
            bin = i;
            break;
        }
    }
    bin
}

pub fn ref_ece(p: &ProbBatch, m: usize) -> f64 {
    let n = p.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, row) in p.probs().iter_rows().enumerate() {
        let pred = ref_argmax(row);
        members[ref_bin_of(row[pred], m)].push(i);
    }
    let mut total = 0.0;
    for bin in &members {
        if bin.is_empty() {
            continue;
        }
        let conf: f64 = bin
            .iter()
            .map(|&i| {
                let row = p.probs().row(i);
                row[ref_argmax(row)]
            })
            .sum::<f64>()
            / bin.len() as f64;
        let acc: f64 = bin
            .iter()
            .filter(|&&i| ref_argmax(p.probs().row(i)) == p.labels()[i])
            .count() as f64
            / bin.len() as f64;
        total += bin.len() as f64 / n as f64 * (acc - conf).abs();
    }
    total
}

pub fn ref_sce(p: &ProbBatch, m: usize) -> f64 {
    let n = p.len();
    let k = p.class_count();
    let mut total = 0.0;
    for class in 0..k {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
        for i in 0..n {
            members[ref_bin_of(p.probs().get(i, class), m)].push(i);
        }
        for bin in &members {
            if bin.is_empty() {
                continue;
            }
            let conf: f64 = bin
                .iter()
                .map(|&i| p.probs().get(i, class))
                .sum::<f64>()
                / bin.len() as f64;
            let acc: f64 = bin.iter().filter(|&&i| p.labels()[i] == class).count() as f64
                / bin.len() as f64;
            total += bin.len() as f64 / n as f64 * (acc - conf).abs();
        }
    }
    total / k as f64
}

pub fn ref_ace(p: &ProbBatch, r: usize) -> f64 {
    let n = p.len();
    let k = p.class_count();
    let size = n / r;
    let mut total = 0.0;
    for class in 0..k {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            p.probs()
                .get(a, class)
                .partial_cmp(&p.probs().get(b, class))
                .unwrap()
                .then(a.cmp(&b))
        });
        for range in 0..r {
            let slice = if range + 1 == r {
                &order[range * size..]
            } else {
                &order[range * size..(range + 1) * size]
            };
            let conf: f64 = slice
                .iter()
                .map(|&i| p.probs().get(i, class))
                .sum::<f64>()
                / slice.len() as f64;
            let acc: f64 = slice.iter().filter(|&&i| p.labels()[i] == class).count() as f64
                / slice.len() as f64;
            total += (acc - conf).abs();
        }
    }
    total / (k * r) as f64
}

pub fn ref_nll(p: &ProbBatch) -> f64 {
    let mut total = 0.0;
    for (i, &y) in p.labels().iter().enumerate() {
        total += -(p.probs().get(i, y).max(1e-300)).ln();
    }
    total
}

pub fn ref_mean_entropy(p: &ProbBatch) -> f64 {
    let mut total = 0.0;
    for row in p.probs().iter_rows() {
        for &v in row {
            if v > 0.0 {
                total -= v * v.ln();
            }
        }
    }
    total / p.len() as f64
}

/// Random probability batch: rows drawn positive then normalized.
pub fn random_prob_batch(rng: &mut ChaCha8Rng, max_n: usize, max_k: usize) -> ProbBatch {
    let n = 1 + rng.random_range(0..max_n);
    let k = 2 + rng.random_range(0..max_k - 1);
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k)
            .map(|_| 0.01 + rng.sample::<f64, _>(StandardUniform))
            .collect();
        let sum: f64 = raw.iter().sum();
        data.extend(raw.into_iter().map(|v| v / sum));
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    ProbBatch::new(Tensor::new(n, k, data).unwrap(), labels).unwrap()
}

/// Small random dense/relu network with the given seed: m, k <= 6, at most
/// 3 layers (dense, relu, dense).
pub fn random_small_net(rng: &mut ChaCha8Rng) -> (Network, usize, usize) {
    let m = 2 + rng.random_range(0..5);
    let k = 2 + rng.random_range(0..5);
    let hidden = 2 + rng.random_range(0..5);
    let normal = Normal::new(0.0, 0.8).unwrap();
    let deep = rng.random_range(0..2) == 1;
    let mut layers = Vec::new();
    if deep {
        let w1: Vec<f64> = (0..hidden * m).map(|_| normal.sample(rng)).collect();
        let b1: Vec<f64> = (0..hidden).map(|_| normal.sample(rng)).collect();
        layers.push(nclamp::network::LayerSpec::Dense {
            weight: Tensor::new(hidden, m, w1).unwrap(),
            bias: b1,
        });
        layers.push(nclamp::network::LayerSpec::Relu);
        let w2: Vec<f64> = (0..k * hidden).map(|_| normal.sample(rng)).collect();
        let b2: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
        layers.push(nclamp::network::LayerSpec::Dense {
            weight: Tensor::new(k, hidden, w2).unwrap(),
            bias: b2,
        });
    } else {
        let w: Vec<f64> = (0..k * m).map(|_| normal.sample(rng)).collect();
        let b: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
        layers.push(nclamp::network::LayerSpec::Dense {
            weight: Tensor::new(k, m, w).unwrap(),
            bias: b,
        });
    }
    (Network::new(m, layers).unwrap(), m, k)
}

pub fn random_batch_for(rng: &mut ChaCha8Rng, m: usize, k: usize, n: usize) -> Batch {
    let normal = Normal::new(0.4, 0.35).unwrap();
    let data: Vec<f64> = (0..n * m).map(|_| normal.sample(rng)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    Batch::new(Tensor::new(n, m, data).unwrap(), labels).unwrap()
}

/// Central finite differences of a scalar function of a flat parameter
/// vector.
pub fn central_diff<F>(f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut work = point.to_vec();
    for i in 0..point.len() {
        work[i] = point[i] + eps;
        let plus = f(&work);
        work[i] = point[i] - eps;
        let minus = f(&work);
        work[i] = point[i];
        grads.push((plus - minus) / (2.0 * eps));
    }
    grads
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Simple training architecture used by a few tests.
pub fn small_arch(m: usize, hidden: usize, k: usize) -> Vec<LayerPlan> {
    vec![
        LayerPlan::Dense {
            in_dim: m,
            out_dim: hidden,
        },
        LayerPlan::Relu,
        LayerPlan::Dense {
            in_dim: hidden,
            out_dim: k,
        },
    ]
}
