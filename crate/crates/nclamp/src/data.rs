//! Synthetic classification data and the on-disk dataset format.
//!
//! Datasets are Gaussian mixtures: one seeded mean per class, isotropic
//! per-class spread, optional label-noise flips, features affinely rescaled
//! into the unit box. The binary format is `NCDS` magic, little-endian u32
//! n/m/K, n*m little-endian f32 features (row-major), then n little-endian
//! u32 labels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardUniform};

use crate::error::{Error, Result};
use crate::network::Batch;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NCDS";

/// Shape and difficulty of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub input_dim: usize,
    pub samples: usize,
    /// Standard deviation of the per-class mean positions.
    pub class_sep: f64,
    /// Isotropic standard deviation of samples around their class mean.
    pub spread: f64,
    /// Probability of relabeling a sample to a uniformly random other class.
    pub label_noise: f64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Domain("need at least 2 classes".into()));
        }
        if self.samples < self.class_count {
            return Err(Error::Domain(format!(
                "need at least {} samples for {} classes",
                self.class_count, self.class_count
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Domain("input dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Domain(format!(
                "label noise {} outside [0, 1)",
                self.label_noise
            )));
        }
        if self.class_sep < 0.0 || self.spread < 0.0 {
            return Err(Error::Domain("scales must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Draws a seeded Gaussian-mixture batch with features rescaled into
/// [0, 1] per dimension.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Batch> {
    gen_synthetic_split_seed(spec, seed, seed)
}

/// Like [`gen_synthetic`] but with the mixture structure (class means) and
/// the sample draws seeded separately: two datasets sharing `struct_seed`
/// come from the same mixture, so one can train a classifier and the other
/// can play the held-out calibration/evaluation role.
pub fn gen_synthetic_split_seed(
    spec: &SyntheticSpec,
    struct_seed: u64,
    sample_seed: u64,
) -> Result<Batch> {
    spec.validate()?;
    let mut struct_rng = ChaCha8Rng::seed_from_u64(struct_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let (k, m, n) = (spec.class_count, spec.input_dim, spec.samples);
    let mean_dist = Normal::new(0.0, spec.class_sep.max(1e-12)).expect("valid std");
    let noise_dist = Normal::new(0.0, spec.spread.max(1e-12)).expect("valid std");
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..m).map(|_| mean_dist.sample(&mut struct_rng)).collect())
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut data = Vec::with_capacity(n * m);
    for &y in &labels {
        for j in 0..m {
            data.push(means[y][j] + noise_dist.sample(&mut rng));
        }
    }
    if spec.label_noise > 0.0 {
        for y in labels.iter_mut() {
            let u: f64 = rng.sample(StandardUniform);
            if u < spec.label_noise {
                let shift = rng.random_range(1..k);
                *y = (*y + shift) % k;
            }
        }
    }
    // Min-max rescale each dimension into [0, 1].
    for j in 0..m {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            lo = lo.min(data[i * m + j]);
            hi = hi.max(data[i * m + j]);
        }
        let range = hi - lo;
        for i in 0..n {
            let v = &mut data[i * m + j];
            *v = if range > 0.0 { (*v - lo) / range } else { 0.5 };
        }
    }
    Batch::new(Tensor::new(n, m, data)?, labels)
}

/// Seeded shuffle then prefix split: the first `fraction` of samples become
/// the calibration half, the rest the held-out test half.
pub fn split_batch(batch: &Batch, fraction: f64, seed: u64) -> Result<(Batch, Batch)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let n = batch.len();
    if n < 2 {
        return Err(Error::Domain("need at least 2 samples to split".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
    Ok((batch.select(&order[..cut]), batch.select(&order[cut..])))
}

/// Writes a batch in the `NCDS` binary format. Features are stored as f32.
pub fn write_dataset(path: &Path, batch: &Batch, class_count: usize) -> Result<()> {
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= class_count) {
        return Err(Error::Schema(format!(
            "label {bad} out of range for {class_count} classes"
        )));
    }
    let (n, m) = (batch.len(), batch.features.cols());
    let mut bytes = Vec::with_capacity(16 + n * m * 4 + n * 4);
    bytes.extend_from_slice(MAGIC);
    for v in [n as u32, m as u32, class_count as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &v in batch.features.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &y in &batch.labels {
        bytes.extend_from_slice(&(y as u32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads an `NCDS` dataset, returning the batch and its class count.
/// Malformed files report the failing byte offset/field.
pub fn read_dataset(path: &Path) -> Result<(Batch, usize)> {
    let bytes = std::fs::read(path)?;
    let mut off = 0usize;
    let take = |off: &mut usize, len: usize, field: &str| -> Result<&[u8]> {
        if *off + len > bytes.len() {
            return Err(Error::Parse(format!(
                "{}: truncated at byte {} reading {field} ({} bytes available)",
                path.display(),
                *off,
                bytes.len()
            )));
        }
        let slice = &bytes[*off..*off + len];
        *off += len;
        Ok(slice)
    };
    let magic = take(&mut off, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad magic at byte 0, expected NCDS",
            path.display()
        )));
    }
    let mut read_u32 = |field: &str| -> Result<u32> {
        let s = take(&mut off, 4, field)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };
    let n = read_u32("sample count")? as usize;
    let m = read_u32("input dim")? as usize;
    let k = read_u32("class count")? as usize;
    if k < 2 {
        return Err(Error::Schema(format!(
            "{}: class count {k} < 2",
            path.display()
        )));
    }
    let mut data = Vec::with_capacity(n * m);
    for i in 0..n * m {
        let s = take(&mut off, 4, "features")?;
        let v = f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64;
        if !v.is_finite() {
            return Err(Error::Schema(format!(
                "{}: non-finite feature at index {i}",
                path.display()
            )));
        }
        data.push(v);
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let s = take(&mut off, 4, "labels")?;
        let y = u32::from_le_bytes([s[0], s[1], s[2], s[3]]) as usize;
        if y >= k {
            return Err(Error::Schema(format!(
                "{}: label {y} at index {i} out of range for {k} classes",
                path.display()
            )));
        }
        labels.push(y);
    }
    if off != bytes.len() {
        return Err(Error::Parse(format!(
            "{}: {} trailing bytes after byte {}",
            path.display(),
            bytes.len() - off,
            off
        )));
    }
    Ok((Batch::new(Tensor::new(n, m, data)?, labels)?, k))
}
