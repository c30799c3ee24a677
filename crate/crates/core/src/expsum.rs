//! Short-interval exponential sums: window spectra, maximizing frequencies,
//! Elliott and Parseval diagnostics, and the scale scan that turns a hit
//! list into configuration seed data.
//!
//! Sign convention, fixed once for the whole crate: the magnitude reported
//! for a window `values` at frequency `theta` is |Σ_h values[h]·e(h·theta)|
//! with e(t) = exp(2πi·t).  Window starts contribute only a global phase,
//! which cancels in the modulus.

use std::cell::RefCell;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::config::{Ambient, ConfigError, Configuration, Mode};
use crate::numutil::{frac, norm1};
use crate::sieve::{primes_in, primes_up_to, SieveError};

/// Hard cap on the FFT transform length K·H.
pub const TRANSFORM_CAP: usize = 1 << 24;

/// Oversampling factor of the coarse grid used by [`sup_frequency`] and
/// [`separated_large_frequencies`].
pub const COARSE_OVERSAMPLE: usize = 4;

/// Modulus slack accepted on window values.
pub const VALUE_TOLERANCE: f64 = 1e-12;

// Refinement bookkeeping: every grid-local maximum within this ratio of the
// global grid maximum is refined, so a near-tie side lobe cannot beat the
// refined winner. At most MAX_REFINED_LOBES lobes are refined; golden-section
// converges to ~1e-10 of a cell width in GOLDEN_ITERS steps.
const LOBE_TIE_RATIO: f64 = 0.95;
const MAX_REFINED_LOBES: usize = 8;
const GOLDEN_ITERS: usize = 48;

/// Errors from window construction, spectra, and the scale scan.
#[derive(Debug, Error)]
pub enum ExpsumError {
    #[error("window at {x} has no values")]
    EmptyValues { x: u64 },
    #[error("window value at offset {h} has modulus {modulus} > 1")]
    ValueOutOfBounds { h: usize, modulus: f64 },
    #[error("window length {h} below minimum 2")]
    WindowTooShort { h: usize },
    #[error("oversample factor {k} below minimum 2")]
    OversampleTooSmall { k: usize },
    #[error("transform size {size} exceeds cap {cap}")]
    TransformTooLarge { size: usize, cap: usize },
    #[error("delta {0} outside (0, 1)")]
    BadDelta(f64),
    #[error("tau {tau} outside ({lo}, {hi}{brace}", brace = if *inclusive { "]" } else { ")" })]
    BadTau { tau: f64, lo: f64, hi: f64, inclusive: bool },
    #[error("scan range [{start}, {end}) shorter than 2·H = {double_h}")]
    RangeTooShort { start: u64, end: u64, double_h: u64 },
    #[error("hits not H-separated at index {idx} (gap {gap} < {h})")]
    HitsNotSeparated { idx: usize, gap: u64, h: u64 },
    #[error("value source: {0}")]
    Source(String),
    #[error(transparent)]
    Sieve(#[from] SieveError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// A short interval of 1-bounded complex function values
/// f(x), f(x+1), …, f(x+H−1).
#[derive(Debug, Clone)]
pub struct Window {
    pub x: u64,
    pub values: Vec<Complex64>,
}

impl Window {
    /// Validates moduli ≤ 1 + 10⁻¹² and non-emptiness.
    pub fn new(x: u64, values: Vec<Complex64>) -> Result<Self, ExpsumError> {
        if values.is_empty() {
            return Err(ExpsumError::EmptyValues { x });
        }
        for (h, v) in values.iter().enumerate() {
            let modulus = v.norm();
            if !(modulus <= 1.0 + VALUE_TOLERANCE) {
                return Err(ExpsumError::ValueOutOfBounds { h, modulus });
            }
        }
        Ok(Window { x, values })
    }

    /// Window length H.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A window start with its maximizing frequency and magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyHit {
    pub x: u64,
    pub theta: f64,
    pub magnitude: f64,
}

/// Exceptional primes of the Elliott deviation inequality on one window.
#[derive(Debug, Clone)]
pub struct ElliottReport {
    pub tau: f64,
    pub exceptional_primes: Vec<u64>,
    pub harmonic_mass: f64,
}

/// Provider of function values for window scans.  Implementations must be
/// callable from multiple worker threads.
pub trait ValueSource: Sync {
    /// Values f(x), f(x+1), …, f(x+h−1), each of modulus ≤ 1.
    fn window(&self, x: u64, h: u64) -> Result<Vec<Complex64>, ExpsumError>;
}

impl<S: ValueSource + ?Sized> ValueSource for &S {
    fn window(&self, x: u64, h: u64) -> Result<Vec<Complex64>, ExpsumError> {
        (**self).window(x, h)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Magnitudes |Σ_h values[h]·e(h·j/n)| for 0 ≤ j < n via one forward FFT of
/// the conjugated, zero-padded values (conj swaps the transform sign).
fn grid_magnitudes(values: &[Complex64], n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = Vec::with_capacity(n);
    buf.extend(values.iter().map(|v| v.conj()));
    buf.resize(n, Complex64::new(0.0, 0.0));
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);
    buf.into_iter().map(|z| z.norm()).collect()
}

/// |Σ_h values[h]·e(h·theta)| by direct evaluation (used for off-grid
/// refinement and as the re-verification path).
pub fn direct_magnitude(values: &[Complex64], theta: f64) -> f64 {
    let mut sum = Complex64::new(0.0, 0.0);
    for (h, v) in values.iter().enumerate() {
        let phase = std::f64::consts::TAU * frac(h as f64 * theta);
        let (s, c) = phase.sin_cos();
        sum += v * Complex64::new(c, s);
    }
    sum.norm()
}

/// The grid spectrum (α_j, |Σ_h values[h]·e(h·α_j)|) at α_j = j/(K·H).
pub fn window_spectrum(w: &Window, oversample: usize) -> Result<Vec<(f64, f64)>, ExpsumError> {
    if oversample < 2 {
        return Err(ExpsumError::OversampleTooSmall { k: oversample });
    }
    let n = oversample
        .checked_mul(w.len())
        .filter(|&n| n <= TRANSFORM_CAP)
        .ok_or(ExpsumError::TransformTooLarge {
            size: oversample.saturating_mul(w.len()),
            cap: TRANSFORM_CAP,
        })?;
    let mags = grid_magnitudes(&w.values, n);
    Ok(mags.into_iter().enumerate().map(|(j, m)| (j as f64 / n as f64, m)).collect())
}

// Golden-section maximization of the direct magnitude on [lo, hi].
fn golden_max(values: &[Complex64], mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut a = hi - INVPHI * (hi - lo);
    let mut b = lo + INVPHI * (hi - lo);
    let mut fa = direct_magnitude(values, a);
    let mut fb = direct_magnitude(values, b);
    for _ in 0..GOLDEN_ITERS {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INVPHI * (hi - lo);
            fb = direct_magnitude(values, b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INVPHI * (hi - lo);
            fa = direct_magnitude(values, a);
        }
    }
    if fa >= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// Maximizing frequency of a window: K=4 grid argmax followed by
/// golden-section refinement of every near-tie grid lobe.  The returned
/// magnitude is never below the grid maximum.
pub fn sup_frequency(w: &Window) -> Result<FrequencyHit, ExpsumError> {
    if w.len() < 2 {
        return Err(ExpsumError::WindowTooShort { h: w.len() });
    }
    let n = COARSE_OVERSAMPLE
        .checked_mul(w.len())
        .filter(|&n| n <= TRANSFORM_CAP)
        .ok_or(ExpsumError::TransformTooLarge {
            size: COARSE_OVERSAMPLE.saturating_mul(w.len()),
            cap: TRANSFORM_CAP,
        })?;
    let mags = grid_magnitudes(&w.values, n);
    let (jmax, &gmax) = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("window is non-empty");
    let mut lobes: Vec<(usize, f64)> = (0..n)
        .filter(|&j| {
            let prev = mags[(j + n - 1) % n];
            let next = mags[(j + 1) % n];
            mags[j] >= prev && mags[j] >= next
        })
        .map(|j| (j, mags[j]))
        .collect();
    lobes.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    lobes.truncate(MAX_REFINED_LOBES);

    let mut best_theta = jmax as f64 / n as f64;
    let mut best_mag = gmax;
    for &(j, m) in &lobes {
        if m < LOBE_TIE_RATIO * gmax {
            break;
        }
        let lo = (j as f64 - 1.0) / n as f64;
        let hi = (j as f64 + 1.0) / n as f64;
        let (theta, mag) = golden_max(&w.values, lo, hi);
        if mag > best_mag {
            best_mag = mag;
            best_theta = theta;
        }
    }
    Ok(FrequencyHit { x: w.x, theta: frac(best_theta), magnitude: best_mag })
}

/// Scans `[range_start, range_end)` at stride `h` (starts aligned to
/// multiples of `h`, so the pipeline's x/H rescaling is exact) and returns
/// the windows whose sup magnitude reaches `delta·h`.  The result is
/// H-separated by construction.
pub fn extract_hits<S: ValueSource + ?Sized>(
    source: &S,
    range_start: u64,
    range_end: u64,
    h: u64,
    delta: f64,
) -> Result<Vec<FrequencyHit>, ExpsumError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ExpsumError::BadDelta(delta));
    }
    if h < 2 {
        return Err(ExpsumError::WindowTooShort { h: h as usize });
    }
    if range_end < range_start || range_end - range_start < 2 * h {
        return Err(ExpsumError::RangeTooShort {
            start: range_start,
            end: range_end,
            double_h: 2 * h,
        });
    }
    let first = range_start.div_ceil(h) * h;
    let mut starts = Vec::new();
    let mut x = first;
    while x + h <= range_end {
        starts.push(x);
        x += h;
    }
    let threshold = delta * h as f64;
    let per_window: Vec<Option<FrequencyHit>> = starts
        .par_iter()
        .map(|&x| -> Result<Option<FrequencyHit>, ExpsumError> {
            let w = Window::new(x, source.window(x, h)?)?;
            let hit = sup_frequency(&w)?;
            Ok((hit.magnitude >= threshold).then_some(hit))
        })
        .collect::<Result<_, _>>()?;
    Ok(per_window.into_iter().flatten().collect())
}

/// Elliott deviation scan: for each prime p ≤ H computes
/// D_p = |(1/H)·Σ_{n∈I} g(n) − (p/H)·Σ_{pn∈I} g(pn)| with g the window
/// values indexed by absolute n, and reports the primes with D_p > tau
/// together with their harmonic mass Σ 1/p.
pub fn elliott_exceptional_primes(w: &Window, tau: f64) -> Result<ElliottReport, ExpsumError> {
    if !(tau > 0.0 && tau < 2.0) {
        return Err(ExpsumError::BadTau { tau, lo: 0.0, hi: 2.0, inclusive: false });
    }
    let h = w.values.len() as u64;
    let mean = w.values.iter().sum::<Complex64>() / h as f64;
    let mut exceptional = Vec::new();
    let mut mass = 0.0f64;
    for p in primes_up_to(h) {
        let m_lo = w.x.div_ceil(p);
        let m_hi = (w.x + h - 1) / p;
        let mut sub = Complex64::new(0.0, 0.0);
        for m in m_lo..=m_hi {
            sub += w.values[(p * m - w.x) as usize];
        }
        let d = (mean - sub * (p as f64 / h as f64)).norm();
        if d > tau {
            exceptional.push(p);
            mass += 1.0 / p as f64;
        }
    }
    Ok(ElliottReport { tau, exceptional_primes: exceptional, harmonic_mass: mass })
}

/// The greedily-built maximal 1/H-separated set of K=4 grid frequencies
/// whose normalized magnitude reaches tau, largest magnitudes kept first.
/// Members are re-verified pointwise by direct evaluation.
pub fn separated_large_frequencies(
    w: &Window,
    tau: f64,
) -> Result<Vec<(f64, f64)>, ExpsumError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(ExpsumError::BadTau { tau, lo: 0.0, hi: 1.0, inclusive: true });
    }
    let spec = window_spectrum(w, COARSE_OVERSAMPLE)?;
    let h = w.len() as f64;
    let floor = tau * h;
    let mut cands: Vec<(f64, f64)> =
        spec.into_iter().filter(|&(_, m)| m >= floor).collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let sep = 1.0 / h;
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for (alpha, m) in cands {
        if kept.iter().all(|&(a, _)| norm1(alpha - a) >= sep) {
            // Grid values come from the FFT; re-verify against the direct sum.
            debug_assert!((direct_magnitude(&w.values, alpha) - m).abs() <= 1e-6 * h);
            kept.push((alpha, m));
        }
    }
    Ok(kept)
}

/// Size of the separated large-frequency set.
pub fn separated_large_freq_count(w: &Window, tau: f64) -> Result<usize, ExpsumError> {
    Ok(separated_large_frequencies(w, tau)?.len())
}

/// One scanned scale with its quadruple count and normalized density
/// count / (|hits|·|𝒫|²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleCandidate {
    pub scale: u64,
    pub quadruples: u64,
    pub density: f64,
}

/// Data sufficient to build a [`Configuration`] from a hit list: rescaled
/// points x/H, frequencies θ_x, strength H/P, and the rounding radius of
/// the rescaling (0 when starts are stride-aligned).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSeed {
    pub points: Vec<u64>,
    pub freqs: Vec<f64>,
    pub strength: f64,
    pub y: f64,
    pub scale: u64,
    pub rounding_radius: f64,
}

impl ConfigSeed {
    /// Builds the configuration A := (x/H, θ_•, H/P) over primes_in(P).
    pub fn build(&self, mode: Mode) -> Result<Configuration, ExpsumError> {
        let primes = primes_in(self.scale)?;
        Ok(Configuration::new(
            self.points.clone(),
            self.freqs.clone(),
            self.strength,
            Ambient { y: self.y, scale: self.scale, primes },
            mode,
        )?)
    }
}

/// Result of the scale scan.
#[derive(Debug, Clone)]
pub struct ScaleChoice {
    pub delta: f64,
    pub candidates: Vec<ScaleCandidate>,
    pub chosen: ScaleCandidate,
    pub seed: Option<ConfigSeed>,
}

/// Geometric candidate grid (ratio 2) for P over [H^0.05, H^0.1], clamped
/// to a minimum of 2.  Degenerates to {2} at desk-scale H.
pub fn scale_grid(h: u64) -> Vec<u64> {
    let hf = h as f64;
    let lo = hf.powf(0.05).ceil().max(2.0) as u64;
    let hi = hf.powf(0.1).floor().max(2.0) as u64;
    let mut grid = Vec::new();
    let mut p = lo;
    while p <= hi {
        grid.push(p);
        p *= 2;
    }
    if grid.is_empty() {
        grid.push(lo.min(hi));
    }
    grid
}

/// Counts quadruples (x, y, p, q) ∈ hits²×𝒫² with |q·x − p·y| ≤ P·H/10 and
/// ‖p·θ_x − q·θ_y‖ ≤ P/(10·H) at one scale.  O(|hits|·|𝒫|²·log|hits|) by
/// binary search on the position condition.
pub fn evaluate_scale(
    hits: &[FrequencyHit],
    h: u64,
    scale: u64,
) -> Result<ScaleCandidate, ExpsumError> {
    let primes = primes_in(scale)?;
    let xs: Vec<u64> = hits.iter().map(|t| t.x).collect();
    let pos_slack = scale as f64 * h as f64 / 10.0;
    let freq_slack = scale as f64 / (10.0 * h as f64);
    let mut count = 0u64;
    for hit in hits {
        for &p in &primes.primes {
            for &q in &primes.primes {
                // |q·x − p·y| ≤ PH/10 ⇒ y ∈ q·x/p ± PH/(10p); hits are
                // H-separated so only a handful of candidates survive.
                let center = (q as f64 * hit.x as f64) / p as f64;
                let lo = ((center - pos_slack / p as f64).max(0.0) as u64).saturating_sub(1);
                let start = xs.partition_point(|&v| v < lo);
                for (&y, other) in xs[start..].iter().zip(&hits[start..]) {
                    let gap = q as i128 * hit.x as i128 - p as i128 * y as i128;
                    if (-gap) as f64 > pos_slack + p as f64 {
                        break;
                    }
                    if gap.unsigned_abs() as f64 <= pos_slack
                        && norm1(p as f64 * hit.theta - q as f64 * other.theta) <= freq_slack
                    {
                        count += 1;
                    }
                }
            }
        }
    }
    let denom = hits.len() as f64 * (primes.len() as f64).powi(2);
    let density = if denom > 0.0 { count as f64 / denom } else { 0.0 };
    Ok(ScaleCandidate { scale, quadruples: count, density })
}

/// Scans candidate scales and picks the density maximizer (ties to the
/// smaller P).  `scale_override` restricts the grid to one value (manifest
/// P override).  Empty hit lists yield count 0 and no seed — a result, not
/// an error.
pub fn choose_scale(
    hits: &[FrequencyHit],
    h: u64,
    delta: f64,
    scale_override: Option<u64>,
) -> Result<ScaleChoice, ExpsumError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ExpsumError::BadDelta(delta));
    }
    for (idx, pair) in hits.windows(2).enumerate() {
        let gap = pair[1].x.saturating_sub(pair[0].x);
        if gap < h {
            return Err(ExpsumError::HitsNotSeparated { idx: idx + 1, gap, h });
        }
    }
    let grid = match scale_override {
        Some(p) => vec![p],
        None => scale_grid(h),
    };
    let mut candidates = Vec::with_capacity(grid.len());
    for p in grid {
        candidates.push(evaluate_scale(hits, h, p)?);
    }
    let chosen = candidates
        .iter()
        .copied()
        .max_by(|a, b| a.density.total_cmp(&b.density).then(b.scale.cmp(&a.scale)))
        .expect("scale grid is non-empty");
    let seed = if hits.is_empty() {
        None
    } else {
        let points: Vec<u64> = hits.iter().map(|t| (t.x + h / 2) / h).collect();
        let rounding_radius = hits
            .iter()
            .zip(&points)
            .map(|(t, &r)| (t.x as f64 / h as f64 - r as f64).abs())
            .fold(0.0f64, f64::max);
        Some(ConfigSeed {
            y: points[0] as f64,
            points,
            freqs: hits.iter().map(|t| t.theta).collect(),
            strength: h as f64 / chosen.scale as f64,
            scale: chosen.scale,
            rounding_radius,
        })
    };
    Ok(ScaleChoice { delta, candidates, chosen, seed })
}
