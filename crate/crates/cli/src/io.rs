//! On-disk formats: JSON-lines configurations and CSV tables.  All
//! writers emit deterministic bytes for a given input.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use funiform_core::config::{Ambient, Configuration, Mode};
use funiform_core::sieve::primes_in;

/// Header record of the configuration format: ambient octave start Y,
/// prime scale P, and strength numerator H (strength = H/P).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfigHeader {
    #[serde(rename = "Y")]
    pub y: f64,
    #[serde(rename = "P")]
    pub p: u64,
    #[serde(rename = "H")]
    pub h: f64,
}

/// One point record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub x: u64,
    pub alpha: f64,
}

/// Writes a configuration as JSON lines: one header record, then one
/// record per point in increasing order.
pub fn write_config_jsonl(path: &Path, cfg: &Configuration) -> Result<()> {
    let header = ConfigHeader {
        y: cfg.ambient.y,
        p: cfg.ambient.scale,
        h: cfg.strength * cfg.ambient.scale as f64,
    };
    let mut lines = Vec::with_capacity(cfg.len() + 1);
    lines.push(serde_json::to_string(&header)?);
    for (&x, &alpha) in cfg.points.iter().zip(&cfg.freqs) {
        lines.push(serde_json::to_string(&ConfigPoint { x, alpha })?);
    }
    write_lines(path, &lines)
}

/// Reads the JSON-lines configuration format back into a validated
/// [`Configuration`].
pub fn read_config_jsonl(path: &Path, mode: Mode) -> Result<Configuration> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading configuration {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().context("configuration file is empty")?;
    let header: ConfigHeader = serde_json::from_str(first)
        .with_context(|| format!("{}: header record", path.display()))?;
    if header.p < 2 || !(header.h.is_finite() && header.h > 0.0) {
        bail!("{}: bad header P = {} H = {}", path.display(), header.p, header.h);
    }
    let mut points = Vec::new();
    let mut freqs = Vec::new();
    for (lineno, line) in lines {
        let rec: ConfigPoint = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        points.push(rec.x);
        freqs.push(rec.alpha);
    }
    let ambient = Ambient { y: header.y, scale: header.p, primes: primes_in(header.p)? };
    Ok(Configuration::new(points, freqs, header.h / header.p as f64, ambient, mode)?)
}

/// Writes lines with trailing newline; parent directories must exist.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes a CSV table with a header row.  Fields are produced by the
/// caller; numeric formatting uses the shortest round-trip representation.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut lines = Vec::with_capacity(rows.len() + 1);
    lines.push(header.to_string());
    lines.extend_from_slice(rows);
    write_lines(path, &lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use funiform_core::numutil::frac;

    #[test]
    fn config_jsonl_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.jsonl");
        let points: Vec<u64> = (1000..1060).collect();
        let freqs: Vec<f64> = points.iter().map(|&x| frac(0.37 + 1.0 / x as f64)).collect();
        let cfg = Configuration::new(
            points.clone(),
            freqs.clone(),
            50.0,
            Ambient { y: 1000.0, scale: 30, primes: primes_in(30).unwrap() },
            Mode::Test,
        )
        .unwrap();
        write_config_jsonl(&path, &cfg).unwrap();
        let back = read_config_jsonl(&path, Mode::Test).unwrap();
        assert_eq!(back.points, points);
        // float_roundtrip: every α must come back bit-identical.
        for (a, b) in back.freqs.iter().zip(&freqs) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.strength, 50.0);
        assert_eq!(back.ambient.scale, 30);
    }

    #[test]
    fn read_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"Y\":1.0,\"P\":1,\"H\":10.0}\n").unwrap();
        assert!(read_config_jsonl(&path, Mode::Test).is_err());
        std::fs::write(&path, "").unwrap();
        assert!(read_config_jsonl(&path, Mode::Test).is_err());
    }
}
