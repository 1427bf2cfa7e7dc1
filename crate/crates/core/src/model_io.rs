//! Versioned JSON model format.
//!
//! Parameter blocks are flat row-major arrays. Floats are written in
//! shortest round-trip form, so save/load is bit-exact.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::Tensor;
use crate::layers::{Activation, DenseLayer, KanLayer, Layer, LayerError, Network, NetworkKind, PowerMlpLayer};
use crate::spline::{KnotGrid, SplineError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("malformed model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format_version {0} (this build reads {FORMAT_VERSION})")]
    Version(u32),
    #[error("field `{field}` in layer {layer}: {reason}")]
    Field { layer: usize, field: &'static str, reason: String },
    #[error("non-finite value in `{field}` of layer {layer}")]
    NonFinite { layer: usize, field: &'static str },
    #[error("invalid network: {0}")]
    Layer(#[from] LayerError),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    kind: NetworkKind,
    k: u32,
    input_dim: usize,
    #[serde(default)]
    name: String,
    #[serde(default)]
    seed: u64,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum LayerFile {
    Kan { n_in: usize, n_out: usize, grid_count: usize, knots: Vec<f64>, u: Vec<f64>, v: Vec<f64>, coeffs: Vec<f64> },
    #[serde(rename = "powermlp")]
    PowerMlp { n_in: usize, n_out: usize, omega: Vec<f64>, gamma: Vec<f64>, alpha: Option<Vec<f64>>, is_final: bool },
    Dense { n_in: usize, n_out: usize, weight: Vec<f64>, bias: Vec<f64>, activation: Activation },
}

fn tensor(layer: usize, field: &'static str, rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, ModelIoError> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(ModelIoError::NonFinite { layer, field });
    }
    let got = data.len();
    Tensor::new(rows, cols, data).map_err(|_| ModelIoError::Field { layer, field, reason: format!("expected {} values, got {got}", rows * cols) })
}

fn check_finite(layer: usize, field: &'static str, t: &Tensor) -> Result<Vec<f64>, ModelIoError> {
    if t.is_finite() {
        Ok(t.data().to_vec())
    } else {
        Err(ModelIoError::NonFinite { layer, field })
    }
}

pub fn to_json(net: &Network) -> Result<String, ModelIoError> {
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(match l {
                Layer::Kan(kl) => LayerFile::Kan {
                    n_in: kl.n_in(),
                    n_out: kl.n_out(),
                    grid_count: kl.grid.grid_count(),
                    knots: kl.grid.knots().to_vec(),
                    u: check_finite(i, "u", &kl.u)?,
                    v: check_finite(i, "v", &kl.v)?,
                    coeffs: check_finite(i, "coeffs", &kl.coeffs)?,
                },
                Layer::PowerMlp(pl) => LayerFile::PowerMlp {
                    n_in: pl.n_in(),
                    n_out: pl.n_out(),
                    omega: check_finite(i, "omega", &pl.omega)?,
                    gamma: check_finite(i, "gamma", &pl.gamma)?,
                    alpha: pl.alpha.as_ref().map(|a| check_finite(i, "alpha", a)).transpose()?,
                    is_final: pl.is_final,
                },
                Layer::Dense(dl) => LayerFile::Dense {
                    n_in: dl.n_in(),
                    n_out: dl.n_out(),
                    weight: check_finite(i, "weight", &dl.weight)?,
                    bias: check_finite(i, "bias", &dl.bias)?,
                    activation: dl.activation,
                },
            })
        })
        .collect::<Result<_, ModelIoError>>()?;
    let file = ModelFile { format_version: FORMAT_VERSION, kind: net.kind, k: net.k, input_dim: net.input_dim, name: net.name.clone(), seed: net.seed, layers };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn from_json(s: &str) -> Result<Network, ModelIoError> {
    #[derive(Deserialize)]
    struct Probe {
        format_version: u32,
    }
    let probe: Probe = serde_json::from_str(s)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(ModelIoError::Version(probe.format_version));
    }
    let file: ModelFile = serde_json::from_str(s)?;
    let layers = file
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(match l {
                LayerFile::Kan { n_in, n_out, grid_count, knots, u, v, coeffs } => {
                    let grid = KnotGrid::new(file.k as usize, grid_count, knots).map_err(|e: SplineError| ModelIoError::Field { layer: i, field: "knots", reason: e.to_string() })?;
                    let nb = grid.num_basis();
                    Layer::Kan(KanLayer {
                        grid: Arc::new(grid),
                        u: tensor(i, "u", n_out, n_in, u)?,
                        v: tensor(i, "v", n_out, n_in, v)?,
                        coeffs: tensor(i, "coeffs", n_out * n_in, nb, coeffs)?,
                    })
                }
                LayerFile::PowerMlp { n_in, n_out, omega, gamma, alpha, is_final } => Layer::PowerMlp(PowerMlpLayer {
                    k: file.k,
                    omega: tensor(i, "omega", n_out, n_in, omega)?,
                    gamma: tensor(i, "gamma", 1, n_out, gamma)?,
                    alpha: alpha.map(|a| tensor(i, "alpha", n_out, n_in, a)).transpose()?,
                    is_final,
                }),
                LayerFile::Dense { n_in, n_out, weight, bias, activation } => Layer::Dense(DenseLayer {
                    weight: tensor(i, "weight", n_out, n_in, weight)?,
                    bias: tensor(i, "bias", 1, n_out, bias)?,
                    activation,
                }),
            })
        })
        .collect::<Result<_, ModelIoError>>()?;
    Ok(Network::from_layers(file.kind, file.k, file.input_dim, layers, file.name, file.seed)?)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("model spec {spec:?}: {reason}")]
    Syntax { spec: String, reason: String },
    #[error(transparent)]
    Layer(#[from] LayerError),
}

/// Build a fresh network from shorthand such as `powermlp:[2,4,1]:k=3`,
/// `kan:[2,1,1]:k=3:G=3` or `mlp:[2,6,1]`. PowerMLP also accepts `nobasis`.
pub fn parse_model_spec(spec: &str, seed: u64) -> Result<Network, SpecError> {
    let err = |reason: &str| SpecError::Syntax { spec: spec.to_string(), reason: reason.to_string() };
    let mut parts = spec.split(':');
    let kind = match parts.next().unwrap_or("") {
        "kan" => NetworkKind::Kan,
        "powermlp" => NetworkKind::PowerMlp,
        "mlp" => NetworkKind::Mlp,
        _ => return Err(err("kind must be kan, powermlp or mlp")),
    };
    let dims_str = parts.next().ok_or_else(|| err("missing [dims]"))?;
    let inner = dims_str.strip_prefix('[').and_then(|d| d.strip_suffix(']')).ok_or_else(|| err("dims must look like [2,4,1]"))?;
    let dims = inner.split(',').map(|d| d.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| err("dims must be positive integers"))?;
    let (mut k, mut g, mut basis) = (None, None, true);
    for opt in parts {
        match opt.split_once('=') {
            Some(("k", v)) => k = Some(v.parse::<u32>().map_err(|_| err("k must be an integer"))?),
            Some(("G", v)) => g = Some(v.parse::<usize>().map_err(|_| err("G must be an integer"))?),
            None if opt == "nobasis" && kind == NetworkKind::PowerMlp => basis = false,
            _ => return Err(err(&format!("unknown option {opt:?}"))),
        }
    }
    Ok(match kind {
        NetworkKind::Kan => Network::kan(&dims, k.unwrap_or(3), g.unwrap_or(3), seed)?,
        NetworkKind::PowerMlp => {
            if g.is_some() {
                return Err(err("G applies to kan only"));
            }
            Network::powermlp_variant(&dims, k.unwrap_or(3), basis, seed)?
        }
        NetworkKind::Mlp => {
            if k.is_some() || g.is_some() {
                return Err(err("mlp takes no k or G"));
            }
            Network::mlp(&dims, seed)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for net in [
            Network::kan(&[2, 3, 1], 3, 5, 1).unwrap(),
            Network::powermlp(&[2, 4, 1], 3, 2).unwrap(),
            Network::powermlp_variant(&[3, 2, 2], 2, false, 3).unwrap(),
            Network::mlp(&[2, 6, 1], 4).unwrap(),
        ] {
            let back = from_json(&to_json(&net).unwrap()).unwrap();
            assert_eq!(back, net);
        }
    }

    #[test]
    fn rejects_bad_files() {
        let net = Network::mlp(&[2, 2, 1], 0).unwrap();
        let s = to_json(&net).unwrap();
        assert!(matches!(from_json(&s.replace("\"format_version\": 1", "\"format_version\": 2")), Err(ModelIoError::Version(2))));
        assert!(matches!(from_json("{"), Err(ModelIoError::Json(_))));
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["layers"][0]["weight"].as_array_mut().unwrap().pop();
        let err = from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("weight"), "{err}");

        let mut bad = net.clone();
        if let Layer::Dense(d) = &mut bad.layers[0] {
            d.bias.data_mut()[0] = f64::NAN;
        }
        assert!(matches!(to_json(&bad), Err(ModelIoError::NonFinite { layer: 0, field: "bias" })));
    }

    #[test]
    fn model_specs() {
        assert_eq!(parse_model_spec("powermlp:[2,4,1]:k=3", 0).unwrap().param_count(), 25);
        assert_eq!(parse_model_spec("kan:[2,1,1]:k=3:G=3", 0).unwrap().param_count(), 24);
        assert_eq!(parse_model_spec("mlp:[2,6,1]", 0).unwrap().param_count(), 25);
        let nb = parse_model_spec("powermlp:[2,4,4,1]:k=2:nobasis", 0).unwrap();
        assert_eq!(nb.k, 2);
        assert!(nb.name.ends_with("nobasis"));
        for bad in ["cnn:[2,1]", "mlp:2,1", "mlp:[2,x]", "mlp:[2,1]:k=3", "powermlp:[2,1]:G=3", "kan:[2,1]:q=1", "mlp:[2]"] {
            assert!(parse_model_spec(bad, 0).is_err(), "{bad}");
        }
    }
}
