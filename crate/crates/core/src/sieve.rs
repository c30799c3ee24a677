//! Segmented sieve for the Liouville function and prime ranges.
//!
//! Windows are half-open `[lo, hi)` and capped at 2^26 entries so a window
//! always fits comfortably in memory; scanning a long range is the caller's
//! loop over windows. For every `n` in the window we compute the number of
//! prime factors with multiplicity `Ω(n)` and `λ(n) = (−1)^Ω(n)` exactly:
//! base primes up to `√(hi−1)` are divided out with multiplicity, and any
//! leftover cofactor `> 1` is a single prime factor above the root.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Hard cap on window length (entries), ~67M.
pub const WINDOW_CAP: u64 = 1 << 26;

/// Magic bytes of the binary λ-window cache format.
pub const CACHE_MAGIC: &[u8; 4] = b"LUL1";

#[derive(Debug, Error)]
pub enum SieveError {
    #[error("window start must be ≥ 1 (got {0})")]
    StartTooSmall(u64),
    #[error("empty window [{lo}, {hi})")]
    EmptyWindow { lo: u64, hi: u64 },
    #[error("window length {len} exceeds cap {cap}")]
    WindowTooLarge { len: u64, cap: u64 },
    #[error("prime range scale must be ≥ 2 (got {0})")]
    ScaleTooSmall(u64),
    #[error("cache file corrupt: {0}")]
    BadCache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// λ and Ω over a half-open window `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SieveWindow {
    pub lo: u64,
    pub hi: u64,
    /// `λ(n) ∈ {−1, +1}` for `n = lo + i`.
    pub lambda: Vec<i8>,
    /// `Ω(n)` (prime factors with multiplicity) for `n = lo + i`.
    pub omega: Vec<u32>,
}

impl SieveWindow {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// λ(n) for `n` inside the window.
    pub fn lambda_at(&self, n: u64) -> Option<i8> {
        if n < self.lo || n >= self.hi {
            return None;
        }
        Some(self.lambda[(n - self.lo) as usize])
    }

    pub fn omega_at(&self, n: u64) -> Option<u32> {
        if n < self.lo || n >= self.hi {
            return None;
        }
        Some(self.omega[(n - self.lo) as usize])
    }
}

/// All primes in the closed dyadic range `[P, 2P]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimeRange {
    /// The scale `P`.
    pub scale: u64,
    /// Primes in `[P, 2P]`, ascending.
    pub primes: Vec<u64>,
}

impl PrimeRange {
    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }

    pub fn contains(&self, p: u64) -> bool {
        self.primes.binary_search(&p).is_ok()
    }
}

/// Simple sieve of Eratosthenes: all primes ≤ `n`.
pub fn primes_up_to(n: u64) -> Vec<u64> {
    if n < 2 {
        return Vec::new();
    }
    let n = n as usize;
    let mut composite = vec![false; n + 1];
    let mut out = Vec::new();
    for p in 2..=n {
        if !composite[p] {
            out.push(p as u64);
            let mut m = p * p;
            while m <= n {
                composite[m] = true;
                m += p;
            }
        }
    }
    out
}

/// Primes in the closed range `[P, 2P]`. Requires `P ≥ 2`.
pub fn primes_in(p: u64) -> Result<PrimeRange, SieveError> {
    if p < 2 {
        return Err(SieveError::ScaleTooSmall(p));
    }
    let all = primes_up_to(2 * p);
    let primes = all.into_iter().filter(|&q| q >= p).collect();
    Ok(PrimeRange { scale: p, primes })
}

/// Exact λ and Ω over `[lo, hi)` by segmented sieving.
///
/// `lo ≥ 1`, `lo < hi`, `hi − lo ≤ 2^26`. `Ω(1) = 0`, so `λ(1) = +1`.
pub fn sieve_liouville(lo: u64, hi: u64) -> Result<SieveWindow, SieveError> {
    if lo < 1 {
        return Err(SieveError::StartTooSmall(lo));
    }
    if hi <= lo {
        return Err(SieveError::EmptyWindow { lo, hi });
    }
    let len = hi - lo;
    if len > WINDOW_CAP {
        return Err(SieveError::WindowTooLarge {
            len,
            cap: WINDOW_CAP,
        });
    }
    let len = len as usize;
    let root = (hi - 1).isqrt();
    let base = primes_up_to(root);

    let mut omega = vec![0u32; len];
    let mut rem: Vec<u64> = (0..len as u64).map(|i| lo + i).collect();

    for &p in &base {
        // first multiple of p in [lo, hi)
        let mut m = lo.div_ceil(p) * p;
        while m < hi {
            let idx = (m - lo) as usize;
            while rem[idx] % p == 0 {
                rem[idx] /= p;
                omega[idx] += 1;
            }
            m += p;
        }
    }
    for i in 0..len {
        if rem[i] > 1 {
            omega[i] += 1; // leftover cofactor is prime (> √(hi−1))
        }
    }
    let lambda = omega
        .iter()
        .map(|&w| if w % 2 == 0 { 1i8 } else { -1i8 })
        .collect();
    Ok(SieveWindow {
        lo,
        hi,
        lambda,
        omega,
    })
}

/// Canonical cache filename for a window.
pub fn cache_file_name(lo: u64, hi: u64) -> String {
    format!("{lo}-{hi}.lul")
}

/// Write the λ values of a window in the binary cache format:
/// magic `LUL1`, then `lo` and `hi` as 8-byte little-endian unsigned,
/// then one signed byte per `n`.
pub fn write_window_cache(dir: &Path, window: &SieveWindow) -> Result<PathBuf, SieveError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(cache_file_name(window.lo, window.hi));
    let mut buf = Vec::with_capacity(20 + window.lambda.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&window.lo.to_le_bytes());
    buf.extend_from_slice(&window.hi.to_le_bytes());
    buf.extend(window.lambda.iter().map(|&v| v as u8));
    let mut f = fs::File::create(&path)?;
    f.write_all(&buf)?;
    Ok(path)
}

/// Read a λ window from a cache file. Validates magic, header, and length.
pub fn read_window_cache_file(path: &Path) -> Result<(u64, u64, Vec<i8>), SieveError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 20 || &buf[0..4] != CACHE_MAGIC {
        return Err(SieveError::BadCache(format!(
            "{}: missing LUL1 header",
            path.display()
        )));
    }
    let lo = u64::from_le_bytes(buf[4..12].try_into().unwrap());
    let hi = u64::from_le_bytes(buf[12..20].try_into().unwrap());
    if hi <= lo || (hi - lo) as usize != buf.len() - 20 {
        return Err(SieveError::BadCache(format!(
            "{}: header range [{lo}, {hi}) disagrees with payload length {}",
            path.display(),
            buf.len() - 20
        )));
    }
    let lambda: Vec<i8> = buf[20..].iter().map(|&b| b as i8).collect();
    for (i, &v) in lambda.iter().enumerate() {
        if v != 1 && v != -1 {
            return Err(SieveError::BadCache(format!(
                "{}: byte {i} is {v}, expected ±1",
                path.display()
            )));
        }
    }
    Ok((lo, hi, lambda))
}

/// Cache lookup by `(lo, hi)` under a directory; `None` when absent.
pub fn read_window_cache(dir: &Path, lo: u64, hi: u64) -> Result<Option<Vec<i8>>, SieveError> {
    let path = dir.join(cache_file_name(lo, hi));
    if !path.exists() {
        return Ok(None);
    }
    let (clo, chi, lambda) = read_window_cache_file(&path)?;
    if clo != lo || chi != hi {
        return Err(SieveError::BadCache(format!(
            "{}: header range [{clo}, {chi}) does not match requested [{lo}, {hi})",
            path.display()
        )));
    }
    Ok(Some(lambda))
}
