//! JSON checkpoints.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "widths": [d, 256, 256, 256, 1],
//!   "activation": "relu",
//!   "weights": [[row-major W_0], [row-major W_1], ...],
//!   "biases": [[b_0], [b_1], ...]
//! }
//! ```
//!
//! Numbers are written as the shortest decimal that parses back to the same
//! `f64`, so a save/load round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::neuralnet::{Activation, Layer, MlpConfig, MlpParams, DEFAULT_DROPOUT};
use crate::numerics::Matrix;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model(model: &MlpParams, net: &MlpConfig) -> Result<Self> {
        model.check_widths(net)?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            widths: net.widths.clone(),
            activation: net.activation,
            weights: model.layers.iter().map(|l| l.weight.data().to_vec()).collect(),
            biases: model.layers.iter().map(|l| l.bias.clone()).collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialisation cannot fail")
    }

    /// Parse and validate a checkpoint document.
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| parse_err("<document>", e.to_string()))?;
        let obj = root
            .as_object()
            .ok_or_else(|| parse_err("<document>", "expected a JSON object"))?;
        let field = |name: &str| obj.get(name).ok_or_else(|| parse_err(name, "missing"));

        let format_version = field("format_version")?
            .as_u64()
            .ok_or_else(|| parse_err("format_version", "expected an unsigned integer"))?;
        if format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported format_version {format_version} (expected {FORMAT_VERSION})"
            )));
        }
        let widths = field("widths")?
            .as_array()
            .ok_or_else(|| parse_err("widths", "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_u64()
                    .map(|w| w as usize)
                    .ok_or_else(|| parse_err(&format!("widths[{i}]"), "expected an unsigned integer"))
            })
            .collect::<Result<Vec<_>>>()?;
        let activation: Activation = serde_json::from_value(field("activation")?.clone())
            .map_err(|e| parse_err("activation", e.to_string()))?;
        let weights = real_arrays(field("weights")?, "weights")?;
        let biases = real_arrays(field("biases")?, "biases")?;

        let ckpt = Self {
            format_version,
            widths,
            activation,
            weights,
            biases,
        };
        ckpt.check_consistency()?;
        Ok(ckpt)
    }

    fn check_consistency(&self) -> Result<()> {
        let layers = self.widths.len().saturating_sub(1);
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Schema(format!("invalid widths {:?}", self.widths)));
        }
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::Schema(format!(
                "{layers} layers implied by widths, found {} weight and {} bias blocks",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (l, w) in self.widths.windows(2).enumerate() {
            if self.weights[l].len() != w[0] * w[1] {
                return Err(Error::Schema(format!(
                    "weights[{l}] has {} entries, expected {}x{}",
                    self.weights[l].len(),
                    w[0],
                    w[1]
                )));
            }
            if self.biases[l].len() != w[1] {
                return Err(Error::Schema(format!(
                    "biases[{l}] has {} entries, expected {}",
                    self.biases[l].len(),
                    w[1]
                )));
            }
        }
        Ok(())
    }

    /// Parameters and a network config (default dropout rate).
    pub fn into_model(self) -> Result<(MlpParams, MlpConfig)> {
        let net = MlpConfig {
            widths: self.widths.clone(),
            dropout_rate: DEFAULT_DROPOUT,
            activation: self.activation,
        };
        net.validate().map_err(|e| Error::Schema(e.to_string()))?;
        let layers = self
            .widths
            .windows(2)
            .zip(self.weights)
            .zip(self.biases)
            .map(|((w, weight), bias)| {
                Ok(Layer {
                    weight: Matrix::new(w[0], w[1], weight)?,
                    bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((MlpParams { layers }, net))
    }
}

fn parse_err(field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.to_string(),
        message: message.into(),
    }
}

fn real_arrays(v: &Value, name: &str) -> Result<Vec<Vec<f64>>> {
    let outer = v.as_array().ok_or_else(|| parse_err(name, "expected an array of arrays"))?;
    outer
        .iter()
        .enumerate()
        .map(|(i, inner)| {
            let inner = inner
                .as_array()
                .ok_or_else(|| parse_err(&format!("{name}[{i}]"), "expected an array"))?;
            inner
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    x.as_f64()
                        .ok_or_else(|| parse_err(&format!("{name}[{i}][{j}]"), "expected a number"))
                })
                .collect()
        })
        .collect()
}

pub fn save_checkpoint(model: &MlpParams, net: &MlpConfig, path: impl AsRef<Path>) -> Result<()> {
    let ckpt = Checkpoint::from_model(model, net)?;
    fs::write(path, ckpt.to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MlpParams, MlpConfig)> {
    let text = fs::read_to_string(path)?;
    Checkpoint::from_json(&text)?.into_model()
}

/// Load and require specific widths.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, widths: &[usize]) -> Result<(MlpParams, MlpConfig)> {
    let (params, net) = load_checkpoint(path)?;
    if net.widths != widths {
        return Err(Error::Schema(format!(
            "checkpoint widths {:?} do not match expected {widths:?}",
            net.widths
        )));
    }
    Ok((params, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::he_uniform_init;
    use crate::numerics::RngState;

    fn bits(p: &MlpParams) -> Vec<u64> {
        p.tensors().flat_map(|t| t.iter().map(|x| x.to_bits())).collect()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let net = MlpConfig::new(vec![3, 4, 1], 0.0).unwrap();
        let mut p = he_uniform_init(&net, &mut RngState::new(5)).unwrap();
        p.layers[1].bias[0] = -0.0;
        p.layers[0].bias[2] = 1e-300;
        save_checkpoint(&p, &net, &path).unwrap();
        let (q, net2) = load_checkpoint(&path).unwrap();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(net2.widths, net.widths);
    }

    #[test]
    fn zero_model_decodes_to_zeros() {
        let net = MlpConfig::new(vec![2, 3, 1], 0.0).unwrap();
        let p = MlpParams::zeros(&net.widths);
        let json = Checkpoint::from_model(&p, &net).unwrap().to_json();
        assert!(json.contains("\"activation\":\"relu\""));
        let (q, _) = Checkpoint::from_json(&json).unwrap().into_model().unwrap();
        assert!(q.tensors().all(|t| t.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn width_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let net = MlpConfig::new(vec![3, 4, 1], 0.0).unwrap();
        save_checkpoint(&MlpParams::zeros(&net.widths), &net, &path).unwrap();
        assert!(matches!(
            load_checkpoint_expecting(&path, &[5, 4, 1]),
            Err(Error::Schema(_))
        ));
        assert!(load_checkpoint_expecting(&path, &[3, 4, 1]).is_ok());
    }

    #[test]
    fn malformed_files_name_the_field() {
        let good = Checkpoint::from_model(
            &MlpParams::zeros(&[2, 1]),
            &MlpConfig::new(vec![2, 1], 0.0).unwrap(),
        )
        .unwrap()
        .to_json();
        match Checkpoint::from_json(&good.replace("\"widths\"", "\"widthz\"")) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "widths"),
            other => panic!("{other:?}"),
        }
        match Checkpoint::from_json(&good.replace("[[0.0,0.0]]", "[[0.0,\"x\"]]")) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "weights[0][1]"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Checkpoint::from_json("{not json"), Err(Error::Parse { .. })));
        assert!(matches!(
            Checkpoint::from_json(&good.replace("[[0.0,0.0]]", "[[0.0]]")),
            Err(Error::Schema(_))
        ));
    }
}
