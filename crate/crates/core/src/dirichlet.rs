//! Dirichlet characters, prime Dirichlet polynomials and their large-value
//! scan, rational approximation, and the global structure-formula fit.
//!
//! Characters are stored structurally: the unit group mod q splits by CRT
//! into cyclic prime-power components, and each character is a tuple of
//! exponents against those components.  Values are exact roots of unity
//! e(k/L) materialised to complex only at evaluation, so orthogonality
//! degrades with float rounding alone, never with the representation.

use std::collections::BTreeMap;

use num_complex::Complex64;
use num_integer::Integer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Configuration;
use crate::numutil::{frac_centered, norm1, Kahan};
use crate::sieve::PrimeRange;

/// Largest supported character modulus.
pub const MODULUS_CAP: u64 = 1_000_000;
/// Grid spacing of the large-value scan and the mean-value quadrature; the
/// polynomial's t-derivative is at most Σ ln p ≤ |𝒫|·ln 2P, so quarter-unit
/// steps resolve unit-width features at desk scales.
pub const SCAN_SPACING: f64 = 0.25;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error)]
pub enum DirichletError {
    #[error("modulus {0} outside [1, {MODULUS_CAP}]")]
    BadModulus(u64),
    #[error("character index {index} out of range for φ = {phi}")]
    BadIndex { index: usize, phi: u64 },
    #[error("horizon {0} must be finite and ≥ 1")]
    BadHorizon(f64),
    #[error("threshold {0} must be positive and finite")]
    BadThreshold(f64),
    #[error("tolerance {0} must be positive and finite")]
    BadTolerance(f64),
    #[error("Qmax must be ≥ 1")]
    BadQmax,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("large value (χ index {chi_index}, t = {t}) re-verified at {magnitude}, below {threshold}")]
    BelowThreshold { chi_index: usize, t: f64, magnitude: f64, threshold: f64 },
    #[error("large values for χ index {chi_index} at t = {t1} and {t2} are closer than 1")]
    SeparationViolated { chi_index: usize, t1: f64, t2: f64 },
}

/// One cyclic component of (ℤ/qℤ)×: discrete logs against a fixed
/// generator, `u32::MAX` marking non-units of the component modulus.
#[derive(Debug, Clone)]
struct Component {
    modulus: u64,
    order: u64,
    dlog: Vec<u32>,
}

/// All φ(q) Dirichlet characters mod q, indexed 0..φ(q) with 0 principal.
#[derive(Debug, Clone)]
pub struct CharacterGroup {
    pub q: u64,
    phi: u64,
    /// lcm of component orders; all values are e(k / order_lcm).
    order_lcm: u64,
    components: Vec<Component>,
}

/// A borrowed character: the group plus an index.
#[derive(Debug, Clone, Copy)]
pub struct Character<'g> {
    group: &'g CharacterGroup,
    pub index: usize,
}

fn modpow(mut base: u64, mut exp: u64, modulus: u64) -> u64 {
    let mut acc: u64 = 1 % modulus;
    base %= modulus;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = ((acc as u128 * base as u128) % modulus as u128) as u64;
        }
        base = ((base as u128 * base as u128) % modulus as u128) as u64;
        exp >>= 1;
    }
    acc
}

fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            let mut e = 0u32;
            while n % d == 0 {
                n /= d;
                e += 1;
            }
            out.push((d, e));
        }
        d += if d == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

/// Smallest primitive root mod an odd prime p.
fn primitive_root(p: u64) -> u64 {
    let phi = p - 1;
    let factors = factorize(phi);
    'g: for g in 2..p {
        for &(f, _) in &factors {
            if modpow(g, phi / f, p) == 1 {
                continue 'g;
            }
        }
        return g;
    }
    unreachable!("every odd prime has a primitive root");
}

/// Dlog table of the cyclic group generated by `g` mod `modulus`.
fn dlog_table(modulus: u64, g: u64, order: u64) -> Vec<u32> {
    let mut table = vec![u32::MAX; modulus as usize];
    let mut acc = 1u64 % modulus;
    for k in 0..order {
        table[acc as usize] = k as u32;
        acc = ((acc as u128 * g as u128) % modulus as u128) as u64;
    }
    table
}

/// Builds the full character group mod q via CRT on prime powers: odd p^e
/// is cyclic under a lifted primitive root; 2^e (e ≥ 3) splits as
/// ⟨−1⟩ × ⟨5⟩.
pub fn characters_mod(q: u64) -> Result<CharacterGroup, DirichletError> {
    if q == 0 || q > MODULUS_CAP {
        return Err(DirichletError::BadModulus(q));
    }
    let mut components = Vec::new();
    for (p, e) in factorize(q) {
        let pe = p.pow(e);
        if p == 2 {
            match e {
                1 => {} // (ℤ/2)× trivial: no component
                2 => components.push(Component {
                    modulus: 4,
                    order: 2,
                    dlog: dlog_table(4, 3, 2),
                }),
                _ => {
                    // ⟨−1⟩ × ⟨5⟩: enumerate (−1)^a·5^b once, split tables.
                    let half = pe / 4; // order of 5
                    let mut sign = vec![u32::MAX; pe as usize];
                    let mut five = vec![u32::MAX; pe as usize];
                    let mut pow5 = 1u64;
                    for b in 0..half {
                        sign[pow5 as usize] = 0;
                        five[pow5 as usize] = b as u32;
                        let neg = pe - pow5;
                        sign[neg as usize] = 1;
                        five[neg as usize] = b as u32;
                        pow5 = ((pow5 as u128 * 5) % pe as u128) as u64;
                    }
                    components.push(Component { modulus: pe, order: 2, dlog: sign });
                    components.push(Component { modulus: pe, order: half, dlog: five });
                }
            }
        } else {
            let phi = pe / p * (p - 1);
            let mut g = primitive_root(p);
            // Lift: g must stay primitive mod p²; otherwise g + p does.
            if e > 1 && modpow(g, p - 1, p * p) == 1 {
                g += p;
            }
            components.push(Component { modulus: pe, order: phi, dlog: dlog_table(pe, g, phi) });
        }
    }
    let phi: u64 = components.iter().map(|c| c.order).product();
    let order_lcm = components.iter().fold(1u64, |l, c| l.lcm(&c.order));
    Ok(CharacterGroup { q, phi, order_lcm, components })
}

impl CharacterGroup {
    /// Number of characters φ(q).
    pub fn count(&self) -> usize {
        self.phi as usize
    }

    pub fn phi(&self) -> u64 {
        self.phi
    }

    /// Index of the principal character (all component exponents zero).
    pub fn principal(&self) -> usize {
        0
    }

    pub fn character(&self, index: usize) -> Result<Character<'_>, DirichletError> {
        if index >= self.count() {
            return Err(DirichletError::BadIndex { index, phi: self.phi });
        }
        Ok(Character { group: self, index })
    }

}

impl Character<'_> {
    /// χ(n): 0 off the units, otherwise the exact root of unity
    /// e(Σ jᵢ·dᵢ / ordᵢ) evaluated in double precision.
    pub fn eval(&self, n: u64) -> Complex64 {
        let g = self.group;
        if num_integer::gcd(n, g.q) != 1 {
            return Complex64::new(0.0, 0.0);
        }
        let mut idx = self.index as u64;
        let mut num: u128 = 0; // phase numerator against the common order
        for c in &g.components {
            let j = idx % c.order;
            idx /= c.order;
            let d = c.dlog[(n % c.modulus) as usize];
            debug_assert_ne!(d, u32::MAX, "unit of q is a unit of each component");
            num += (j as u128 * d as u128 % c.order as u128) * (g.order_lcm / c.order) as u128;
        }
        let phase = (num % g.order_lcm as u128) as f64 / g.order_lcm as f64;
        Complex64::from_polar(1.0, TAU * phase)
    }

    /// True for the principal character.
    pub fn is_principal(&self) -> bool {
        self.index == 0
    }
}

/// Σ_{p ∈ 𝒫} χ(p)·c_p·p^{it} with p^{it} = e^{i·t·ln p}, compensated
/// summation in both coordinates.  Coefficients default to 1 and are
/// expected 1-bounded.
pub fn prime_poly(
    primes: &PrimeRange,
    chi: &Character<'_>,
    t: f64,
    coeffs: Option<&BTreeMap<u64, Complex64>>,
) -> Complex64 {
    let mut re = Kahan::default();
    let mut im = Kahan::default();
    for &p in &primes.primes {
        let c = match coeffs.and_then(|m| m.get(&p)) {
            Some(&c) => c,
            None => Complex64::new(1.0, 0.0),
        };
        debug_assert!(c.norm_sqr() <= 1.0 + 1e-9, "coefficients must be 1-bounded");
        let (sin, cos) = (t * (p as f64).ln()).sin_cos();
        let v = chi.eval(p) * c * Complex64::new(cos, sin);
        re.add(v.re);
        im.add(v.im);
    }
    Complex64::new(re.value(), im.value())
}

/// One retained large value of a prime polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeValue {
    pub chi_index: usize,
    pub t: f64,
    pub magnitude: f64,
}

/// The set 𝒯 of (character, t) pairs whose polynomial magnitude clears the
/// threshold, thinned to unit separation per character.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LargeValueSet {
    pub q: u64,
    pub threshold: f64,
    pub t_horizon: f64,
    pub pairs: Vec<LargeValue>,
}

/// Scans t over a quarter-unit grid in [−T, T] for every character mod q,
/// keeps grid hits with |poly| ≥ threshold, and greedily thins them to
/// 1-separation keeping the largest magnitude per unit cell.  A threshold
/// above |𝒫| simply yields the empty set.
pub fn large_value_scan(
    primes: &PrimeRange,
    q: u64,
    t_horizon: f64,
    threshold: f64,
) -> Result<LargeValueSet, DirichletError> {
    if !(t_horizon.is_finite() && t_horizon >= 1.0) {
        return Err(DirichletError::BadHorizon(t_horizon));
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(DirichletError::BadThreshold(threshold));
    }
    let group = characters_mod(q)?;
    let steps = (2.0 * t_horizon / SCAN_SPACING).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|j| -t_horizon + j as f64 * SCAN_SPACING).collect();
    let mut pairs = Vec::new();
    for chi_index in 0..group.count() {
        let chi = group.character(chi_index).expect("index in range");
        let mags: Vec<Vec<(f64, f64)>> = grid
            .par_chunks(4096)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&t| (t, prime_poly(primes, &chi, t, None).norm()))
                    .filter(|&(_, m)| m >= threshold)
                    .collect()
            })
            .collect();
        // Largest magnitude per unit cell ⌊t⌋ (first grid point wins ties).
        let mut cells: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        for (t, m) in mags.into_iter().flatten() {
            let cell = t.floor() as i64;
            match cells.get(&cell) {
                Some(&(_, best)) if best >= m => {}
                _ => {
                    cells.insert(cell, (t, m));
                }
            }
        }
        // Greedy 1-separation across cell winners, strongest first.
        let mut winners: Vec<(f64, f64)> = cells.into_values().collect();
        winners.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.partial_cmp(&b.0).unwrap()));
        let mut kept: Vec<(f64, f64)> = Vec::new();
        for (t, m) in winners {
            if kept.iter().all(|&(t2, _)| (t - t2).abs() >= 1.0) {
                kept.push((t, m));
            }
        }
        kept.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        pairs.extend(kept.into_iter().map(|(t, magnitude)| LargeValue {
            chi_index,
            t,
            magnitude,
        }));
    }
    Ok(LargeValueSet { q, threshold, t_horizon, pairs })
}

/// Re-verifies a large-value set: every pair's magnitude recomputed at or
/// above the threshold, and per-character t-values pairwise ≥ 1 apart.
pub fn verify_large_values(
    set: &LargeValueSet,
    primes: &PrimeRange,
) -> Result<(), DirichletError> {
    let group = characters_mod(set.q)?;
    let mut by_chi: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for lv in &set.pairs {
        let chi = group.character(lv.chi_index)?;
        let magnitude = prime_poly(primes, &chi, lv.t, None).norm();
        if magnitude < set.threshold - 1e-9 {
            return Err(DirichletError::BelowThreshold {
                chi_index: lv.chi_index,
                t: lv.t,
                magnitude,
                threshold: set.threshold,
            });
        }
        by_chi.entry(lv.chi_index).or_default().push(lv.t);
    }
    for (&chi_index, ts) in &by_chi {
        let mut sorted = ts.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in sorted.windows(2) {
            if w[1] - w[0] < 1.0 - 1e-12 {
                return Err(DirichletError::SeparationViolated {
                    chi_index,
                    t1: w[0],
                    t2: w[1],
                });
            }
        }
    }
    Ok(())
}

/// Trapezoid estimate of (1/2T)·∫_{−T}^{T} |Σ_x c_x·x^{it}|² dt, the
/// diagonal benchmark of the mean-value theorem (coefficients default 1).
pub fn mean_value_diag(
    points: &[u64],
    chi_coeffs: Option<&BTreeMap<u64, Complex64>>,
    t_horizon: f64,
) -> Result<f64, DirichletError> {
    if points.is_empty() {
        return Err(DirichletError::TooFewPoints { got: 0, need: 1 });
    }
    if !(t_horizon.is_finite() && t_horizon >= 1.0) {
        return Err(DirichletError::BadHorizon(t_horizon));
    }
    let steps = ((2.0 * t_horizon / SCAN_SPACING).ceil() as usize).max(1);
    let dt = 2.0 * t_horizon / steps as f64;
    let logs: Vec<(f64, Complex64)> = points
        .iter()
        .map(|&x| {
            let c = match chi_coeffs.and_then(|m| m.get(&x)) {
                Some(&c) => c,
                None => Complex64::new(1.0, 0.0),
            };
            ((x as f64).ln(), c)
        })
        .collect();
    let integrand = |t: f64| -> f64 {
        let mut re = Kahan::default();
        let mut im = Kahan::default();
        for &(lx, c) in &logs {
            let (sin, cos) = (t * lx).sin_cos();
            let v = c * Complex64::new(cos, sin);
            re.add(v.re);
            im.add(v.im);
        }
        Complex64::new(re.value(), im.value()).norm_sqr()
    };
    let partial: Vec<f64> = (0..=steps)
        .into_par_iter()
        .map(|j| {
            let t = -t_horizon + j as f64 * dt;
            let w = if j == 0 || j == steps { 0.5 } else { 1.0 };
            w * integrand(t)
        })
        .collect();
    let mut acc = Kahan::default();
    for v in partial {
        acc.add(v);
    }
    Ok(acc.value() * dt / (2.0 * t_horizon))
}

/// Best rational approximation a/q with q ≤ qmax in the ‖qα − a‖ sense,
/// chosen among continued-fraction convergents and their intermediate
/// fractions (always reduced); ties prefer the smaller denominator.
pub fn rational_approx(alpha: f64, qmax: u64) -> (i64, u64) {
    if !alpha.is_finite() {
        return (0, 1);
    }
    let qmax = qmax.max(1) as i128;
    let mut cands: Vec<(i128, i128)> = vec![(alpha.round() as i128, 1)];
    // Convergents h/k with intermediates (h₋₂ + j·h₋₁)/(k₋₂ + j·k₋₁).
    let (mut h2, mut k2): (i128, i128) = (1, 0);
    let (mut h1, mut k1): (i128, i128) = (alpha.floor() as i128, 1);
    let mut x = alpha - alpha.floor();
    cands.push((h1, k1));
    for _ in 0..64 {
        if x.abs() < 1e-15 || k1 > qmax {
            break;
        }
        x = 1.0 / x;
        let a = x.floor();
        if !(a.is_finite() && a < 1e18) {
            break;
        }
        let a = a as i128;
        x -= a as f64;
        for j in 1..=a {
            let (h, k) = (h2 + j * h1, k2 + j * k1);
            if k > qmax {
                break;
            }
            cands.push((h, k));
        }
        let (h, k) = (h2 + a * h1, k2 + a * k1);
        h2 = h1;
        k2 = k1;
        h1 = h;
        k1 = k;
    }
    let mut best: Option<(f64, i128, i128)> = None;
    for (h, k) in cands {
        if k < 1 || k > qmax {
            continue;
        }
        let err = (k as f64 * alpha - h as f64).abs();
        let better = match best {
            None => true,
            Some((e, _, bk)) => err < e - 0.0 || (err == e && k < bk),
        };
        if better {
            best = Some((err, h, k));
        }
    }
    let (_, h, k) = best.expect("the integer candidate always qualifies");
    let g = (h.unsigned_abs()).gcd(&(k as u128)).max(1);
    ((h / g as i128) as i64, (k as u128 / g) as u64)
}

/// A fitted global frequency law α_x ≈ a₀/q₀ + T₀/x (mod 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalFit {
    pub a0: u64,
    pub q0: u64,
    pub t0: f64,
    /// Sup of ‖α_x − a₀/q₀ − T₀/x‖ over all points.
    pub residual_sup: f64,
    /// Fraction of points within the fit tolerance.
    pub coverage: f64,
    /// Set when no candidate reaches coverage ≥ 1/2.
    pub low_confidence: bool,
}

struct CandidateFit {
    coverage: f64,
    q0: u64,
    a0: u64,
    t0: f64,
    residual_sup: f64,
}

/// Evaluates one (a₀, q₀) candidate: strips the rational part, unwraps the
/// remainder against the 1/x template outward from the median point, and
/// fits x·v = T₀ − m·x by least squares with weights 1/x² (the intercept
/// is T₀; an integral slope m absorbs the unknown unwrap branch, which the
/// mod-1 residual is insensitive to).
fn fit_candidate(cfg: &Configuration, a0: u64, q0: u64, tol: f64) -> CandidateFit {
    let n = cfg.len();
    let base = a0 as f64 / q0 as f64;
    let r: Vec<f64> = cfg.freqs.iter().map(|&a| frac_centered(a - base)).collect();
    let mut v = r.clone();
    let mid = n / 2;
    for i in mid + 1..n {
        v[i] = r[i] + (v[i - 1] - r[i]).round();
    }
    for i in (0..mid).rev() {
        v[i] = r[i] + (v[i + 1] - r[i]).round();
    }
    // Weighted normal equations for y = b + s·x, y = x·v, w = 1/x².
    let (mut sw, mut swx, mut swxx, mut swy, mut swxy) =
        (Kahan::default(), Kahan::default(), Kahan::default(), Kahan::default(), Kahan::default());
    for (i, &xi) in cfg.points.iter().enumerate() {
        let x = xi as f64;
        let w = 1.0 / (x * x);
        let y = x * v[i];
        sw.add(w);
        swx.add(w * x);
        swxx.add(w * x * x);
        swy.add(w * y);
        swxy.add(w * x * y);
    }
    let det = sw.value() * swxx.value() - swx.value() * swx.value();
    let t0 = if det.abs() > 0.0 {
        (swxx.value() * swy.value() - swx.value() * swxy.value()) / det
    } else {
        0.0
    };
    let mut covered = 0usize;
    let mut residual_sup = 0.0f64;
    for (i, &xi) in cfg.points.iter().enumerate() {
        let g = norm1(cfg.freqs[i] - base - t0 / xi as f64);
        residual_sup = residual_sup.max(g);
        if g <= tol {
            covered += 1;
        }
    }
    CandidateFit { coverage: covered as f64 / n as f64, q0, a0, t0, residual_sup }
}

/// Fits the global structure formula over all moduli q₀ ≤ qmax and coprime
/// residues a₀, selecting maximal coverage at tolerance `tol`; ties prefer
/// smaller q₀, then smaller |T₀|.  Coverage below 1/2 is returned
/// best-effort with `low_confidence` set.
pub fn fit_global(
    cfg: &Configuration,
    qmax: u64,
    tol: f64,
) -> Result<GlobalFit, DirichletError> {
    if cfg.len() < 3 {
        return Err(DirichletError::TooFewPoints { got: cfg.len(), need: 3 });
    }
    if qmax < 1 {
        return Err(DirichletError::BadQmax);
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(DirichletError::BadTolerance(tol));
    }
    let candidates: Vec<(u64, u64)> = (1..=qmax)
        .flat_map(|q0| (0..q0).filter(move |&a0| num_integer::gcd(a0, q0) == 1).map(move |a0| (a0, q0)))
        .collect();
    let mut fits: Vec<CandidateFit> = candidates
        .par_iter()
        .map(|&(a0, q0)| fit_candidate(cfg, a0, q0, tol))
        .collect();
    // Deterministic selection: coverage desc, then q0, |T0|, a0 asc.
    fits.sort_by(|a, b| {
        b.coverage
            .partial_cmp(&a.coverage)
            .unwrap()
            .then(a.q0.cmp(&b.q0))
            .then(a.t0.abs().partial_cmp(&b.t0.abs()).unwrap())
            .then(a.a0.cmp(&b.a0))
    });
    let best = &fits[0];
    Ok(GlobalFit {
        a0: best.a0,
        q0: best.q0,
        t0: best.t0,
        residual_sup: best.residual_sup,
        coverage: best.coverage,
        low_confidence: best.coverage < 0.5,
    })
}
