//! Versioned JSON checkpoints for [`DeepONet`] models.
//!
//! Schema (version 1):
//!
//! ```json
//! {
//!   "version": 1,
//!   "activation": { "branch": "abs|relu|identity", "trunk": "..." },
//!   "branch": { "layers": [[...row-major...], ...],
//!               "shapes": [[rows, cols], ...],
//!               "biases": null | [[...], ...] },
//!   "trunk":  { ... }
//! }
//! ```
//!
//! Reals are written with 17 significant decimal digits so that
//! `load(save(m))` reproduces every entry bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::{Activation, DeepONet, Mlp, NetworkError};
use crate::iofmt::{atomic_write, format_f64};
use crate::linalg::Matrix;

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u64 },
    #[error("invalid checkpoint: {0}")]
    Invalid(#[from] NetworkError),
}

fn parse_err(e: &serde_json::Error) -> CheckpointError {
    CheckpointError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetFile {
    layers: Vec<Vec<f64>>,
    shapes: Vec<(usize, usize)>,
    biases: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivationFile {
    branch: Activation,
    trunk: Activation,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    #[allow(dead_code)]
    version: u64,
    activation: ActivationFile,
    branch: NetFile,
    trunk: NetFile,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u64,
}

fn write_net(out: &mut String, net: &Mlp) {
    out.push_str("{\"layers\":[");
    for (k, layer) in net.layers().iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push('[');
        for (i, v) in layer.entries().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format_f64(*v));
        }
        out.push(']');
    }
    out.push_str("],\"shapes\":[");
    for (k, layer) in net.layers().iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{},{}]", layer.rows(), layer.cols());
    }
    out.push_str("],\"biases\":");
    match net.biases() {
        None => out.push_str("null"),
        Some(bs) => {
            out.push('[');
            for (k, b) in bs.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push('[');
                for (i, v) in b.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&format_f64(*v));
                }
                out.push(']');
            }
            out.push(']');
        }
    }
    out.push('}');
}

/// Serializes a model to the version-1 JSON checkpoint text.
pub fn to_json_string(model: &DeepONet) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\"version\":{CHECKPOINT_VERSION},\"activation\":{{\"branch\":\"{}\",\"trunk\":\"{}\"}},\"branch\":",
        model.branch().activation().name(),
        model.trunk().activation().name()
    );
    write_net(&mut out, model.branch());
    out.push_str(",\"trunk\":");
    write_net(&mut out, model.trunk());
    out.push_str("}\n");
    out
}

fn net_from_file(file: NetFile, activation: Activation) -> Result<Mlp, CheckpointError> {
    if file.layers.len() != file.shapes.len() {
        return Err(CheckpointError::Invalid(NetworkError::LayerComposition {
            layer: file.shapes.len().min(file.layers.len()),
            expected: file.shapes.len(),
            got: file.layers.len(),
        }));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (entries, (rows, cols)) in file.layers.into_iter().zip(file.shapes) {
        layers.push(
            Matrix::new(rows, cols, entries)
                .map_err(|e| CheckpointError::Invalid(NetworkError::Linalg(e)))?,
        );
    }
    let net = match file.biases {
        None => Mlp::new(layers, activation),
        Some(biases) => Mlp::with_biases(layers, biases, activation),
    };
    net.map_err(CheckpointError::Invalid)
}

/// Parses a version-1 checkpoint.
pub fn from_json_str(text: &str) -> Result<DeepONet, CheckpointError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| parse_err(&e))?;
    if probe.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: probe.version });
    }
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| parse_err(&e))?;
    let branch = net_from_file(file.branch, file.activation.branch)?;
    let trunk = net_from_file(file.trunk, file.activation.trunk)?;
    DeepONet::new(branch, trunk).map_err(CheckpointError::Invalid)
}

pub fn save(model: &DeepONet, path: &Path) -> Result<(), CheckpointError> {
    atomic_write(path, to_json_string(model).as_bytes())
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load(path: &Path) -> Result<DeepONet, CheckpointError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::stream_rng;
    use rand::Rng;

    fn random_model(seed: u64) -> DeepONet {
        let mut rng = stream_rng(seed, "ckpt", 0);
        let widths = [3usize, 5, 2];
        let make = |rng: &mut rand_chacha::ChaCha12Rng| {
            let layers: Vec<Matrix> = widths
                .windows(2)
                .map(|w| {
                    let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    Matrix::new(w[1], w[0], data).unwrap()
                })
                .collect();
            Mlp::new(layers, Activation::Abs).unwrap()
        };
        DeepONet::new(make(&mut rng), make(&mut rng)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = random_model(5);
        let text = to_json_string(&model);
        let back = from_json_str(&text).unwrap();
        assert_eq!(back, model);
        for (a, b) in model.branch().layers().iter().zip(back.branch().layers()) {
            for (x, y) in a.entries().iter().zip(b.entries()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn round_trip_through_file_with_biases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let layers = vec![Matrix::identity(2), Matrix::identity(2)];
        let biases = vec![vec![0.25, -1.5], vec![0.0, 3.0]];
        let branch = Mlp::with_biases(layers.clone(), biases.clone(), Activation::Relu).unwrap();
        let trunk = Mlp::with_biases(layers, biases, Activation::Abs).unwrap();
        let model = DeepONet::new(branch, trunk).unwrap();
        save(&model, &path).unwrap();
        assert_eq!(load(&path).unwrap(), model);
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let text = to_json_string(&random_model(6));
        let cut = &text[..text.len() / 2];
        assert!(matches!(from_json_str(cut), Err(CheckpointError::Parse { .. })));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let text = to_json_string(&random_model(7)).replace("\"version\":1", "\"version\":9");
        assert!(matches!(from_json_str(&text), Err(CheckpointError::Version { found: 9 })));
    }

    #[test]
    fn unknown_activation_is_rejected() {
        let text = to_json_string(&random_model(8)).replace("\"abs\"", "\"tanh\"");
        assert!(matches!(from_json_str(&text), Err(CheckpointError::Parse { .. })));
    }
}
