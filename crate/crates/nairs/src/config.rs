//! `key = value` training configuration, also used for snapshot headers.
//!
//! Keys are the [`Hyperparams`] field names. Blank lines and lines starting
//! with `#` are ignored. Floats are written in Rust's shortest round-trip
//! form, so formatting and parsing back gives identical values.

use std::fs;
use std::path::Path;

use nairs_core::model::{Activation, Hyperparams, ModelKind};
use nairs_core::training::Optimizer;

use crate::error::{Error, Result};

/// Parses `key = value` lines into ordered pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", idx + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

/// Sets one hyperparameter. Returns `false` for keys that are not
/// hyperparameters so callers can decide whether that is an error.
pub fn apply(hp: &mut Hyperparams, key: &str, v: &str) -> Result<bool> {
    match key {
        "dim" => hp.dim = value(key, v)?,
        "attention_dim" => hp.attention_dim = value(key, v)?,
        "beta" => hp.beta = value(key, v)?,
        "fism_alpha" => hp.fism_alpha = value(key, v)?,
        "lambda" => hp.lambda = value(key, v)?,
        "learning_rate" => hp.learning_rate = value(key, v)?,
        "neg_ratio" => hp.neg_ratio = value(key, v)?,
        "epochs" => hp.epochs = value(key, v)?,
        "batch_size" => hp.batch_size = value(key, v)?,
        "seed" => hp.seed = value(key, v)?,
        "init_std" => hp.init_std = value(key, v)?,
        "activation" => {
            hp.activation = Activation::parse(v).ok_or_else(|| Error::Config(format!("unknown activation `{v}`")))?
        }
        "optimizer" => {
            hp.optimizer = Optimizer::parse(v).ok_or_else(|| Error::Config(format!("unknown optimizer `{v}`")))?
        }
        "kind" => hp.kind = ModelKind::parse(v).ok_or_else(|| Error::Config(format!("unknown model kind `{v}`")))?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Hyperparameters from `key = value` text, starting from the defaults.
pub fn parse_hyperparams(text: &str) -> Result<Hyperparams> {
    let mut hp = Hyperparams::default();
    for (k, v) in parse_pairs(text)? {
        if !apply(&mut hp, &k, &v)? {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
    }
    Ok(hp)
}

pub fn load_hyperparams(path: &Path) -> Result<Hyperparams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hyperparams(&text)
}

/// Every hyperparameter as `(key, value)` in a fixed order.
pub fn hyperparam_pairs(hp: &Hyperparams) -> Vec<(&'static str, String)> {
    vec![
        ("kind", hp.kind.name().to_string()),
        ("dim", hp.dim.to_string()),
        ("attention_dim", hp.attention_dim.to_string()),
        ("beta", format!("{:?}", hp.beta)),
        ("fism_alpha", format!("{:?}", hp.fism_alpha)),
        ("activation", hp.activation.name().to_string()),
        ("lambda", format!("{:?}", hp.lambda)),
        ("learning_rate", format!("{:?}", hp.learning_rate)),
        ("neg_ratio", hp.neg_ratio.to_string()),
        ("epochs", hp.epochs.to_string()),
        ("batch_size", hp.batch_size.to_string()),
        ("seed", hp.seed.to_string()),
        ("optimizer", hp.optimizer.name().to_string()),
        ("init_std", format!("{:?}", hp.init_std)),
    ]
}

pub fn format_hyperparams(hp: &Hyperparams) -> String {
    hyperparam_pairs(hp)
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
