//! Line-oriented helpers for the comma-separated file formats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Non-blank lines with their 1-based line numbers.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect())
}

pub(crate) fn parse_real(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("malformed number `{}`", tok.trim())))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value `{}`", tok.trim())));
    }
    Ok(v)
}

pub(crate) fn parse_reals(path: &Path, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split(',').map(|t| parse_real(path, line, t)).collect()
}
