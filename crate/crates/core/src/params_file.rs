//! Flat `key = number` text format for [`PaParams`].
//!
//! ```text
//! # comments and blank lines are ignored
//! g0 = 31.62
//! kv = 0.38
//! ripple.10M = -0.7
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::band::Band;
use crate::pamodel::{PaError, PaParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Invalid(#[from] PaError),
}

pub fn parse(text: &str) -> Result<PaParams, ParamsFileError> {
    let mut p = PaParams::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let syntax = |msg: String| ParamsFileError::Syntax { line, msg };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = number`, got `{content}`")))?;
        let key = key.trim();
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| syntax(format!("`{}` is not a number", value.trim())))?;
        match key {
            "g0" => p.g0 = value,
            "kv" => p.kv = value,
            "ki" => p.ki = value,
            "rload" => p.rload = value,
            "vknee" => p.vknee = value,
            "smoothness" => p.smoothness = value,
            "load_exp" => p.load_exp = value,
            _ => {
                let band = key
                    .strip_prefix("ripple.")
                    .ok_or_else(|| syntax(format!("unknown key `{key}`")))?;
                let band: Band = band.parse().map_err(|e| syntax(format!("{e}")))?;
                p.ripple.insert(band, value);
            }
        }
    }
    p.validate()?;
    Ok(p)
}

/// Serialize with shortest round-trip float formatting, fixed key order.
pub fn format(p: &PaParams) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("g0", p.g0),
        ("kv", p.kv),
        ("ki", p.ki),
        ("rload", p.rload),
        ("vknee", p.vknee),
        ("smoothness", p.smoothness),
        ("load_exp", p.load_exp),
    ] {
        let _ = writeln!(s, "{k} = {v:?}");
    }
    for (b, v) in &p.ripple {
        let _ = writeln!(s, "ripple.{b} = {v:?}");
    }
    s
}
