//! JSON model files.
//!
//! Every float is written with 17 significant digits, which is enough for
//! the parsed value to be bit-identical to the one written.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use layerwise::harness::ModelKind;
use layerwise::nn::{Activation, LayerParams, NetworkParams};
use layerwise::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    /// One row per output unit.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub layer_sizes: Vec<usize>,
    /// One entry per weight layer; all but the last are the hidden
    /// activation.
    pub activations: Vec<Activation>,
    pub layers: Vec<LayerRecord>,
}

struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        context: path.display().to_string(),
        msg: msg.into(),
    }
}

impl ModelFile {
    pub fn new(kind: ModelKind, net: &NetworkParams) -> Self {
        let n = net.layers.len();
        ModelFile {
            format_version: FORMAT_VERSION,
            model_kind: kind,
            layer_sizes: net.layer_sizes(),
            activations: (0..n).map(|l| net.activation_of(l)).collect(),
            layers: net
                .layers
                .iter()
                .map(|l| LayerRecord {
                    weights: l.weights.to_rows(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
        self.serialize(&mut ser).expect("model serializes");
        String::from_utf8(out).expect("JSON is UTF-8")
    }

    /// Parses and checks a model file; `source` names it in errors.
    pub fn from_json(json: &str, source: &Path) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(json).map_err(|e| format_err(source, e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(format_err(
                    source,
                    format!("unsupported format_version {v}, expected {FORMAT_VERSION}"),
                ))
            }
            None => return Err(format_err(source, "missing format_version")),
        }
        serde_json::from_value(value).map_err(|e| format_err(source, e.to_string()))
    }

    pub fn to_network(&self, source: &Path) -> Result<NetworkParams> {
        let n = self.layers.len();
        if n == 0 || self.layer_sizes.len() != n + 1 || self.activations.len() != n {
            return Err(format_err(
                source,
                format!(
                    "{} layers, {} layer sizes and {} activations do not fit together",
                    n,
                    self.layer_sizes.len(),
                    self.activations.len()
                ),
            ));
        }
        let hidden = if n > 1 {
            self.activations[0]
        } else {
            Activation::Sigmoid
        };
        if self.activations[..n - 1].iter().any(|&a| a != hidden) {
            return Err(format_err(
                source,
                "hidden layers must share one activation",
            ));
        }
        let mut layers = Vec::with_capacity(n);
        for (l, rec) in self.layers.iter().enumerate() {
            let (inputs, outputs) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if rec.weights.len() != outputs || rec.weights.iter().any(|r| r.len() != inputs) {
                return Err(format_err(
                    source,
                    format!("layer {l} weights are not {outputs}x{inputs}"),
                ));
            }
            let weights = Matrix::from_rows(&rec.weights)?;
            layers.push(
                LayerParams::new(weights, rec.bias.clone())
                    .map_err(|e| format_err(source, e.to_string()))?,
            );
        }
        NetworkParams::new(layers, hidden, self.activations[n - 1])
            .map_err(|e| format_err(source, e.to_string()))
    }
}

pub fn save_model(path: impl AsRef<Path>, kind: ModelKind, net: &NetworkParams) -> Result<()> {
    let path = path.as_ref();
    if !net.is_finite() {
        return Err(Error::Numeric(
            "refusing to save non-finite parameters".into(),
        ));
    }
    fs::write(path, ModelFile::new(kind, net).to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelKind, NetworkParams)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = ModelFile::from_json(&text, path)?;
    Ok((file.model_kind, file.to_network(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use layerwise::nn::{init_network, InitScheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = init_network(
            &[5, 4, 3],
            Activation::Relu,
            Activation::Softmax,
            InitScheme::Gaussian { sigma: 1.0 },
            &mut rng,
        )
        .unwrap();
        net.layers[0].bias = vec![0.1, -1.0 / 3.0, 1e-300, f64::MIN_POSITIVE / 4.0];
        net.layers[1].weights.as_mut_slice()[0] = std::f64::consts::PI * 1e200;
        net
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let n = net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, ModelKind::Sdae, &n).unwrap();
        let (kind, back) = load_model(&path).unwrap();
        assert_eq!(kind, ModelKind::Sdae);
        let bits = |n: &NetworkParams| -> Vec<u64> {
            n.layers
                .iter()
                .flat_map(|l| {
                    l.weights
                        .as_slice()
                        .iter()
                        .chain(&l.bias)
                        .map(|v| v.to_bits())
                })
                .collect()
        };
        assert_eq!(bits(&back), bits(&n));
        assert_eq!(back, n);
    }

    #[test]
    fn schema_fields() {
        let v: serde_json::Value =
            serde_json::from_str(&ModelFile::new(ModelKind::Dbn, &net()).to_json()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["model_kind"], "dbn");
        assert_eq!(v["layer_sizes"], serde_json::json!([5, 4, 3]));
        assert_eq!(v["activations"], serde_json::json!(["relu", "softmax"]));
        assert_eq!(v["layers"][0]["weights"].as_array().unwrap().len(), 4);
        assert_eq!(v["layers"][0]["weights"][0].as_array().unwrap().len(), 5);
    }

    #[test]
    fn rejects_other_versions() {
        let mut v: serde_json::Value =
            serde_json::from_str(&ModelFile::new(ModelKind::Mlp, &net()).to_json()).unwrap();
        v["format_version"] = 2.into();
        let err = ModelFile::from_json(&v.to_string(), Path::new("m.json")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("format_version 2"));
    }

    #[test]
    fn rejects_inconsistent_sizes() {
        let mut f = ModelFile::new(ModelKind::Mlp, &net());
        f.layer_sizes[1] = 7;
        assert!(matches!(
            f.to_network(Path::new("m")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn refuses_non_finite() {
        let mut n = net();
        n.layers[0].bias[0] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_model(dir.path().join("m.json"), ModelKind::Mlp, &n),
            Err(Error::Numeric(_))
        ));
    }
}
