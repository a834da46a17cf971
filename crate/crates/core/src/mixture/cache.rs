//! Plain-text persistence of fitted mixtures.
//!
//! ```text
//! # auxmix mixture cache v1
//! [mixture]
//! nu = 1.0000000000000000e0
//! k = 10
//! fit_hash = 3f1c0a9b5d2e7741
//! central_error = ...
//! kl = ...
//! xi_lower = ...
//! lower_open = false
//! xi_upper = ...
//! upper_open = false
//! component = <weight> <mean> <variance>
//! ...
//! [end]
//! ```
//!
//! Reals are written with 17 significant digits so they round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FitReport, GaussianMixture, ShapeLaw, TailThresholds};
use crate::error::{Error, Result};
use crate::mixture::Component;
use crate::nlg::NlgShape;

const HEADER: &str = "# auxmix mixture cache v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub nu: f64,
    pub fit_hash: String,
    pub central_error: f64,
    pub kl: f64,
    pub thresholds: TailThresholds,
    pub components: Vec<Component>,
}

impl CacheEntry {
    pub fn from_law(law: &ShapeLaw, fit_hash: &str) -> Self {
        Self {
            nu: law.shape.nu(),
            fit_hash: fit_hash.to_string(),
            central_error: law.report.central_error,
            kl: law.report.kl,
            thresholds: law.thresholds,
            components: law.mixture.components().to_vec(),
        }
    }

    pub fn into_law(self) -> Result<ShapeLaw> {
        let shape = NlgShape::new(self.nu)?;
        let mixture = GaussianMixture::new(self.components, shape)?;
        let report = FitReport {
            kl: self.kl,
            objective: f64::NAN,
            central_error: self.central_error,
            iterations: 0,
            converged: true,
            start: 0,
        };
        let law = ShapeLaw::new(mixture, report)?;
        if law.thresholds != self.thresholds {
            log::debug!("{shape}: recomputed cut-offs differ from cached ones; using recomputed");
        }
        Ok(law)
    }
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_cache_file(path: &Path, entries: &[CacheEntry]) -> Result<()> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for e in entries {
        let t = &e.thresholds;
        out.push_str("[mixture]\n");
        out.push_str(&format!("nu = {}\n", real(e.nu)));
        out.push_str(&format!("k = {}\n", e.components.len()));
        out.push_str(&format!("fit_hash = {}\n", e.fit_hash));
        out.push_str(&format!("central_error = {}\n", real(e.central_error)));
        out.push_str(&format!("kl = {}\n", real(e.kl)));
        out.push_str(&format!("xi_lower = {}\n", real(t.xi_lower)));
        out.push_str(&format!("lower_open = {}\n", t.lower_open));
        out.push_str(&format!("xi_upper = {}\n", real(t.xi_upper)));
        out.push_str(&format!("upper_open = {}\n", t.upper_open));
        for c in &e.components {
            out.push_str(&format!("component = {} {} {}\n", real(c.weight), real(c.mean), real(c.variance)));
        }
        out.push_str("[end]\n");
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(out.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Default)]
struct Partial {
    nu: Option<f64>,
    k: Option<usize>,
    fit_hash: Option<String>,
    central_error: Option<f64>,
    kl: Option<f64>,
    xi_lower: Option<f64>,
    lower_open: Option<bool>,
    xi_upper: Option<f64>,
    upper_open: Option<bool>,
    components: Vec<Component>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Cache(format!("line {line}: {msg}"))
}

fn parse_real(line: usize, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| bad(line, format!("invalid number {s:?}: {e}")))
}

fn parse_bool(line: usize, s: &str) -> Result<bool> {
    s.trim().parse::<bool>().map_err(|e| bad(line, format!("invalid flag {s:?}: {e}")))
}

fn need<T>(line: usize, v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| bad(line, format!("entry is missing {key}")))
}

pub fn read_cache_file(path: &Path) -> Result<Vec<CacheEntry>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, HEADER)) => {}
        _ => return Err(Error::Cache(format!("{} lacks the cache header", path.display()))),
    }
    let mut entries = Vec::new();
    let mut current: Option<Partial> = None;
    for (n, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "[mixture]" {
            if current.is_some() {
                return Err(bad(n, "nested [mixture]"));
            }
            current = Some(Partial::default());
            continue;
        }
        let Some(p) = current.as_mut() else {
            return Err(bad(n, "content outside a [mixture] block"));
        };
        if line == "[end]" {
            let p = current.take().expect("open entry");
            let k = need(n, p.k, "k")?;
            if k != p.components.len() {
                return Err(bad(n, format!("k = {k} but {} components listed", p.components.len())));
            }
            let nu = need(n, p.nu, "nu")?;
            let shape = NlgShape::new(nu).map_err(|e| bad(n, e))?;
            entries.push(CacheEntry {
                nu,
                fit_hash: need(n, p.fit_hash, "fit_hash")?,
                central_error: need(n, p.central_error, "central_error")?,
                kl: need(n, p.kl, "kl")?,
                thresholds: TailThresholds {
                    xi_lower: need(n, p.xi_lower, "xi_lower")?,
                    xi_upper: need(n, p.xi_upper, "xi_upper")?,
                    lower_open: need(n, p.lower_open, "lower_open")?,
                    upper_open: need(n, p.upper_open, "upper_open")?,
                    shape,
                },
                components: p.components,
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| bad(n, "expected key = value"))?;
        let value = value.trim();
        match key.trim() {
            "nu" => p.nu = Some(parse_real(n, value)?),
            "k" => p.k = Some(value.parse().map_err(|e| bad(n, format!("invalid k: {e}")))?),
            "fit_hash" => p.fit_hash = Some(value.to_string()),
            "central_error" => p.central_error = Some(parse_real(n, value)?),
            "kl" => p.kl = Some(parse_real(n, value)?),
            "xi_lower" => p.xi_lower = Some(parse_real(n, value)?),
            "lower_open" => p.lower_open = Some(parse_bool(n, value)?),
            "xi_upper" => p.xi_upper = Some(parse_real(n, value)?),
            "upper_open" => p.upper_open = Some(parse_bool(n, value)?),
            "component" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(n, "component needs weight, mean and variance"));
                }
                p.components.push(Component::new(
                    parse_real(n, parts[0])?,
                    parse_real(n, parts[1])?,
                    parse_real(n, parts[2])?,
                ));
            }
            other => return Err(bad(n, format!("unknown key {other:?}"))),
        }
    }
    if current.is_some() {
        return Err(Error::Cache("unterminated [mixture] block".into()));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry() -> CacheEntry {
        let shape = NlgShape::new(3.0).unwrap();
        CacheEntry {
            nu: 3.0,
            fit_hash: "0123456789abcdef".into(),
            central_error: 0.012345678901234567,
            kl: 1.0 / 3.0e5,
            thresholds: TailThresholds { xi_lower: -3.1, xi_upper: 7.0 / 3.0, lower_open: false, upper_open: true, shape },
            components: vec![Component::new(0.1, -1.0, 0.7), Component::new(0.9, 1.0 / 7.0, 0.25)],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mix.cache");
        let entries = vec![entry(), entry()];
        write_cache_file(&path, &entries).unwrap();
        let back = read_cache_file(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cache");
        fs::write(&path, "nonsense\n").unwrap();
        assert!(matches!(read_cache_file(&path), Err(Error::Cache(_))));
        fs::write(&path, format!("{HEADER}\n[mixture]\nnu = 1\nk = 2\ncomponent = 1 0 1\n[end]\n")).unwrap();
        assert!(matches!(read_cache_file(&path), Err(Error::Cache(_))));
    }
}
