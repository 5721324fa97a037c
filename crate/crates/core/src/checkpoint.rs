//! Versioned plain-text checkpoints.
//!
//! ```text
//! # aelab checkpoint
//! format_version = 1
//! model = mlp
//! arch = 50-100-1-100-50
//! input_dim = 2
//! latent_index = 2
//! activation = tanh
//! seed = 7
//! param_count = 10853
//! params =
//! -4.1393353557983315e-1
//! ...
//! ```
//!
//! Parameters are written with 17 significant digits, which round-trips
//! every `f64` exactly. A `circle-projection` model stores only its radius
//! as the single parameter.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::network::{parse_arch, Autoencoder, CircleProjection, LatentRule, Model, Net};

pub const FORMAT_VERSION: u32 = 1;
const HEADER: &str = "# aelab checkpoint";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("unsupported format_version {0}")]
    Version(u32),
    #[error("invalid value for `{key}`: {msg}")]
    Value { key: &'static str, msg: String },
}

/// Formats with 17 significant digits (exact round-trip).
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_string(model: &Model) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&format!("format_version = {FORMAT_VERSION}\n"));
    match model {
        Model::Mlp(net) => {
            let a = net.arch();
            out.push_str("model = mlp\n");
            out.push_str(&format!("arch = {}\n", a.spec_string()));
            out.push_str(&format!("input_dim = {}\n", a.input_dim));
            out.push_str(&format!("latent_index = {}\n", a.latent_index));
            out.push_str(&format!("activation = {}\n", a.activation.name()));
            out.push_str(&format!("seed = {}\n", net.seed()));
        }
        Model::Circle(_) => out.push_str("model = circle-projection\n"),
    }
    let params = model.params();
    out.push_str(&format!("param_count = {}\n", params.len()));
    out.push_str("params =\n");
    for p in params {
        out.push_str(&format_f64(*p));
        out.push('\n');
    }
    out
}

pub fn from_str(text: &str) -> Result<Model, CheckpointError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == HEADER => {}
        _ => {
            return Err(CheckpointError::Syntax {
                line: 1,
                msg: format!("expected `{HEADER}`"),
            })
        }
    }
    let mut keys = BTreeMap::new();
    let mut params = Vec::new();
    let mut in_params = false;
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if in_params {
            let v = line.parse::<f64>().map_err(|e| CheckpointError::Syntax {
                line: i + 1,
                msg: format!("bad parameter {line:?}: {e}"),
            })?;
            params.push(v);
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CheckpointError::Syntax {
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k == "params" {
            in_params = true;
            continue;
        }
        if keys.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CheckpointError::Syntax {
                line: i + 1,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    let get = |k: &'static str| keys.get(k).map(String::as_str).ok_or(CheckpointError::Missing(k));
    let num = |k: &'static str| -> Result<u64, CheckpointError> {
        get(k)?.parse::<u64>().map_err(|e| CheckpointError::Value {
            key: k,
            msg: e.to_string(),
        })
    };
    let version = num("format_version")? as u32;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    if !in_params {
        return Err(CheckpointError::Missing("params"));
    }
    let count = num("param_count")? as usize;
    if count != params.len() {
        return Err(CheckpointError::Value {
            key: "param_count",
            msg: format!("declares {count} but {} values follow", params.len()),
        });
    }
    match get("model")? {
        "mlp" => {
            let latent = num("latent_index")? as usize;
            let arch = parse_arch(get("arch")?, num("input_dim")? as usize, LatentRule::Explicit(latent))
                .map_err(|e| CheckpointError::Value {
                    key: "arch",
                    msg: e.to_string(),
                })?;
            let act = get("activation")?.parse().map_err(|e: crate::network::ParseError| {
                CheckpointError::Value {
                    key: "activation",
                    msg: e.to_string(),
                }
            })?;
            let net = Net::from_params(arch.with_activation(act), params, num("seed")?).map_err(|e| {
                CheckpointError::Value {
                    key: "params",
                    msg: e.to_string(),
                }
            })?;
            Ok(Model::Mlp(net))
        }
        "circle-projection" => {
            if params.len() != 1 {
                return Err(CheckpointError::Value {
                    key: "params",
                    msg: "circle-projection takes exactly one parameter (the radius)".into(),
                });
            }
            Ok(Model::Circle(CircleProjection::new(params[0])))
        }
        other => Err(CheckpointError::Value {
            key: "model",
            msg: format!("unknown model kind {other:?}"),
        }),
    }
}
