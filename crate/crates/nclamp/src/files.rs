//! JSON schemas for models, calibrators, clamp parameters, and reports.
//!
//! Files are written as pretty JSON with a trailing newline; floats use
//! shortest round-trip formatting, so a save/load/save cycle is
//! byte-identical. Dense weights are row-major flat lists.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrators::LinearCalib;
use crate::clamping::ClampParams;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::network::{LayerSpec, Network};
use crate::tensor::Tensor;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Parse(format!(
            "{}: line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum LayerFile {
    Dense {
        #[serde(rename = "in")]
        in_dim: usize,
        #[serde(rename = "out")]
        out_dim: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Relu,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_dim: usize,
    class_count: usize,
    layers: Vec<LayerFile>,
}

/// Saves a network as `{"input_dim", "class_count", "layers": [...]}`.
pub fn save_model(path: &Path, net: &Network) -> Result<()> {
    let layers = net
        .layers()
        .iter()
        .map(|layer| match layer {
            LayerSpec::Dense { weight, bias } => LayerFile::Dense {
                in_dim: weight.cols(),
                out_dim: weight.rows(),
                w: weight.data().to_vec(),
                b: bias.clone(),
            },
            LayerSpec::Relu => LayerFile::Relu,
        })
        .collect();
    write_json(
        path,
        &ModelFile {
            input_dim: net.input_dim(),
            class_count: net.class_count(),
            layers,
        },
    )
}

pub fn load_model(path: &Path) -> Result<Network> {
    let file: ModelFile = read_json(path)?;
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, layer) in file.layers.into_iter().enumerate() {
        match layer {
            LayerFile::Dense {
                in_dim,
                out_dim,
                w,
                b,
            } => {
                if w.len() != in_dim * out_dim || b.len() != out_dim {
                    return Err(Error::Schema(format!(
                        "{}: layer {i}: dense declares {out_dim}x{in_dim} but carries {} weights / {} biases",
                        path.display(),
                        w.len(),
                        b.len()
                    )));
                }
                let weight = Tensor::new(out_dim, in_dim, w)
                    .map_err(|e| Error::Schema(format!("{}: layer {i}: {e}", path.display())))?;
                layers.push(
                    LayerSpec::dense(weight, b)
                        .map_err(|e| Error::Schema(format!("{}: layer {i}: {e}", path.display())))?,
                );
            }
            LayerFile::Relu => layers.push(LayerSpec::Relu),
        }
    }
    let net = Network::new(file.input_dim, layers)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if net.class_count() != file.class_count {
        return Err(Error::Schema(format!(
            "{}: layers produce {} classes, header says {}",
            path.display(),
            net.class_count(),
            file.class_count
        )));
    }
    Ok(net)
}

#[derive(Serialize, Deserialize)]
struct CalibratorFile {
    family: String,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[serde(rename = "W", skip_serializing_if = "Option::is_none")]
    w: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
}

/// Saves a calibrator as `{"family", "T"}` or `{"family", "W", "b"}`.
pub fn save_calibrator(path: &Path, calib: &LinearCalib) -> Result<()> {
    let file = match calib {
        LinearCalib::Temperature { t } => CalibratorFile {
            family: "temperature".into(),
            t: Some(*t),
            w: None,
            b: None,
        },
        LinearCalib::Vector { w, b }
        | LinearCalib::Matrix { w, b }
        | LinearCalib::Dirichlet { w, b } => CalibratorFile {
            family: calib.family().into(),
            t: None,
            w: Some(w.data().to_vec()),
            b: Some(b.clone()),
        },
    };
    write_json(path, &file)
}

pub fn load_calibrator(path: &Path) -> Result<LinearCalib> {
    let file: CalibratorFile = read_json(path)?;
    let schema = |msg: String| Error::Schema(format!("{}: {msg}", path.display()));
    let square = |w: Vec<f64>, b: Vec<f64>| -> Result<(Tensor, Vec<f64>)> {
        let k = b.len();
        if w.len() != k * k {
            return Err(schema(format!(
                "W has {} entries, expected {k}x{k} to match b",
                w.len()
            )));
        }
        Ok((
            Tensor::new(k, k, w).map_err(|e| schema(e.to_string()))?,
            b,
        ))
    };
    match file.family.as_str() {
        "temperature" => {
            let t = file.t.ok_or_else(|| schema("temperature family needs T".into()))?;
            if !(t > 0.0) {
                return Err(schema(format!("temperature {t} must be > 0")));
            }
            Ok(LinearCalib::Temperature { t })
        }
        fam @ ("vector" | "matrix" | "dirichlet") => {
            let w = file.w.ok_or_else(|| schema(format!("{fam} family needs W")))?;
            let b = file.b.ok_or_else(|| schema(format!("{fam} family needs b")))?;
            let (w, b) = square(w, b)?;
            match fam {
                "vector" => {
                    for j in 0..w.rows() {
                        for c in 0..w.cols() {
                            if j != c && w.get(j, c) != 0.0 {
                                return Err(schema(format!(
                                    "vector family requires zero off-diagonals, found ({j},{c}) = {}",
                                    w.get(j, c)
                                )));
                            }
                        }
                    }
                    Ok(LinearCalib::Vector { w, b })
                }
                "matrix" => Ok(LinearCalib::Matrix { w, b }),
                _ => Ok(LinearCalib::Dirichlet { w, b }),
            }
        }
        other => Err(schema(format!("unknown calibrator family '{other}'"))),
    }
}

#[derive(Serialize, Deserialize)]
struct ClampFile {
    delta: Vec<f64>,
    #[serde(rename = "T")]
    t: f64,
}

/// Saves clamp parameters as `{"delta": [...], "T": ...}`.
pub fn save_clamp_params(path: &Path, params: &ClampParams) -> Result<()> {
    write_json(
        path,
        &ClampFile {
            delta: params.delta.clone(),
            t: params.temperature,
        },
    )
}

pub fn load_clamp_params(path: &Path) -> Result<ClampParams> {
    let file: ClampFile = read_json(path)?;
    ClampParams::new(file.delta, file.t)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn save_metric_report(path: &Path, report: &MetricReport) -> Result<()> {
    write_json(path, report)
}

pub fn load_metric_report(path: &Path) -> Result<MetricReport> {
    read_json(path)
}

/// Writes any serializable report (used by `verify-theory`).
pub fn save_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    write_json(path, report)
}
