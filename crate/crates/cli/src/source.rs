//! Function-value providers behind the manifest's function spec: the
//! sieved Liouville function (optionally window-cached on disk), a planted
//! pretentious phase, and file-backed replay values.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use funiform_core::expsum::{ExpsumError, ValueSource};
use funiform_core::numutil::{frac, mix64};
use funiform_core::sieve::{read_window_cache, sieve_liouville, write_window_cache};

use crate::manifest::FunctionSpec;

/// λ(n) from the segmented sieve; with a cache directory set, windows are
/// read from and written to the binary cache format.
#[derive(Debug, Clone)]
pub struct LiouvilleSource {
    pub cache_dir: Option<PathBuf>,
}

fn lambda_values(lambda: &[i8]) -> Vec<Complex64> {
    lambda.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect()
}

impl ValueSource for LiouvilleSource {
    fn window(&self, x: u64, h: u64) -> Result<Vec<Complex64>, ExpsumError> {
        if let Some(dir) = &self.cache_dir {
            if let Some(lambda) = read_window_cache(dir, x, x + h)? {
                return Ok(lambda_values(&lambda));
            }
            let w = sieve_liouville(x, x + h)?;
            write_window_cache(dir, &w)?;
            return Ok(lambda_values(&w.lambda));
        }
        Ok(lambda_values(&sieve_liouville(x, x + h)?.lambda))
    }
}

/// The planted pretentious phase f(n) = e(−a₀n/q₀ − T₀·ln n − noise·u_n)
/// with u_n deterministic uniform in [−1/2, 1/2).  The conjugate sign
/// matches the analyzer's e(h·θ) correlation, so the window at x peaks at
/// θ ≈ a₀/q₀ + T₀/x with sup coefficient ≈ H.
#[derive(Debug, Clone, Copy)]
pub struct PlantedSource {
    pub q0: u64,
    pub a0: u64,
    pub t0: f64,
    pub noise: f64,
    pub seed: u64,
}

impl ValueSource for PlantedSource {
    fn window(&self, x: u64, h: u64) -> Result<Vec<Complex64>, ExpsumError> {
        let values = (x..x + h)
            .map(|n| {
                // Exact rational part: a₀n/q₀ ≡ (a₀·(n mod q₀))/q₀ (mod 1).
                let rational = (self.a0 * (n % self.q0)) % self.q0;
                let mut phase = rational as f64 / self.q0 as f64 + self.t0 * (n as f64).ln();
                if self.noise > 0.0 {
                    let u = (mix64(self.seed ^ mix64(n)) >> 11) as f64 / (1u64 << 53) as f64;
                    phase += self.noise * (u - 0.5);
                }
                Complex64::from_polar(1.0, -TAU * frac(phase))
            })
            .collect();
        Ok(values)
    }
}

/// One replay record: the value f(n).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValueRecord {
    pub n: u64,
    pub re: f64,
    pub im: f64,
}

/// Values loaded from a JSON-lines file, served by absolute index.
#[derive(Debug, Clone)]
pub struct FileSource {
    path: PathBuf,
    values: BTreeMap<u64, Complex64>,
}

impl FileSource {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading value file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ValueRecord = serde_json::from_str(line)
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
            values.insert(rec.n, Complex64::new(rec.re, rec.im));
        }
        Ok(FileSource { path: path.to_path_buf(), values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl ValueSource for FileSource {
    fn window(&self, x: u64, h: u64) -> Result<Vec<Complex64>, ExpsumError> {
        (x..x + h)
            .map(|n| {
                self.values.get(&n).copied().ok_or_else(|| {
                    ExpsumError::Source(format!(
                        "no value for n = {n} in {}",
                        self.path.display()
                    ))
                })
            })
            .collect()
    }
}

/// The manifest-selected source.
#[derive(Debug, Clone)]
pub enum Source {
    Liouville(LiouvilleSource),
    Planted(PlantedSource),
    File(FileSource),
}

impl Source {
    /// Builds the source for a function spec; `seed` feeds the planted
    /// noise stream and `cache_dir` enables the λ window cache.
    pub fn from_spec(spec: &FunctionSpec, seed: u64, cache_dir: Option<&Path>) -> Result<Self> {
        Ok(match spec {
            FunctionSpec::Liouville => Source::Liouville(LiouvilleSource {
                cache_dir: cache_dir.map(Path::to_path_buf),
            }),
            FunctionSpec::Planted { q0, a0, t0, noise } => Source::Planted(PlantedSource {
                q0: *q0,
                a0: *a0,
                t0: *t0,
                noise: *noise,
                seed,
            }),
            FunctionSpec::File(path) => Source::File(FileSource::load(path)?),
        })
    }
}

impl ValueSource for Source {
    fn window(&self, x: u64, h: u64) -> Result<Vec<Complex64>, ExpsumError> {
        match self {
            Source::Liouville(s) => s.window(x, h),
            Source::Planted(s) => s.window(x, h),
            Source::File(s) => s.window(x, h),
        }
    }
}
