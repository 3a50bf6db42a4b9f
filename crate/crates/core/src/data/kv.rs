//! Flat `key = value` text, used for dataset meta files and run configs.

use crate::error::{Error, Result};

/// Parse `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys are trimmed and may not repeat.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::contract(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::contract(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(existing, _)| *existing == key) {
            return Err(Error::contract(format!(
                "line {}: duplicate key `{key}`",
                lineno + 1
            )));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn render<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    }
    s
}
