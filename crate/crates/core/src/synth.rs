//! Constructed instances with planted structure: multiplicative point
//! constellations whose relation hypotheses hold exactly, modular and
//! drifting frequency laws, and a planted pretentious value source.
//!
//! Every generator is deterministic in its seed, and every instance is
//! built so that the relevant hypotheses can be re-verified computationally
//! by the caller before conclusions are asserted.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::{Ambient, Configuration, Mode};
use crate::expsum::{ExpsumError, ValueSource};
use crate::numutil::{frac, unit_from_hash};
use crate::sieve::primes_in;

const TAU: f64 = std::f64::consts::TAU;

fn pick_distinct(rng: &mut ChaCha8Rng, pool: &[u64], n: usize) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    let mut out: Vec<u64> = idx[..n].iter().map(|&i| pool[i]).collect();
    out.sort_unstable();
    out
}

fn build_cfg(mut pts: Vec<(u64, f64)>, scale: u64, strength: f64) -> Configuration {
    pts.sort_unstable_by_key(|e| e.0);
    pts.dedup_by_key(|e| e.0);
    let y = pts[0].0 as f64;
    let primes = primes_in(scale).expect("scale is valid");
    Configuration::new(
        pts.iter().map(|e| e.0).collect(),
        pts.iter().map(|e| e.1).collect(),
        strength,
        Ambient { y, scale, primes },
        Mode::Test,
    )
    .expect("constructed instance is valid")
}

/// A triangle-composition instance: four points x = q₁q₂rm, yᵢ = pq_{3−i}rm,
/// z = pq₁q₂m whose six position products cancel exactly, with T/w-law
/// frequencies plus jitter below the admissibility budget, so that
/// dist(p, qᵢ; x, yᵢ) ≤ C and dist(qᵢ, r; yᵢ, z) ≤ C hold by construction.
#[derive(Debug, Clone)]
pub struct TriangleInstance {
    pub cfg: Configuration,
    pub c: f64,
    pub x: u64,
    pub y1: u64,
    pub y2: u64,
    pub z: u64,
    pub p: u64,
    pub q1: u64,
    pub q2: u64,
    pub r: u64,
}

pub fn triangle_instance(seed: u64) -> TriangleInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 2000u64;
    let strength = 2.0e8;
    let c = 0.2 + 0.8 * rng.gen::<f64>();
    // Narrow prime band keeps all four points inside one octave.
    let band: Vec<u64> = primes_in(scale)
        .unwrap()
        .primes
        .into_iter()
        .filter(|&p| p <= 2800)
        .collect();
    let ps = pick_distinct(&mut rng, &band, 4);
    let (p, q1, q2, r) = (ps[0], ps[1], ps[2], ps[3]);
    let m = rng.gen_range(1..=8u64);
    let x = q1 * q2 * r * m;
    let y1 = p * q2 * r * m;
    let y2 = p * q1 * r * m;
    let z = p * q1 * q2 * m;
    let t = rng.gen::<f64>() * 2.0 * x as f64;
    let jitter = c / (8.0 * scale as f64 * strength);
    let mut pts = Vec::new();
    for &w in &[x, y1, y2, z] {
        let eta = jitter * (2.0 * rng.gen::<f64>() - 1.0);
        pts.push((w, frac(t / w as f64 + eta)));
    }
    let cfg = build_cfg(pts, scale, strength);
    TriangleInstance { cfg, c, x, y1, y2, z, p, q1, q2, r }
}

/// A parallelogram instance: y = p₁p₂sm, xᵢ = qᵢp_{3−i}sm and their exact
/// (r,s)-translates y′, xᵢ′, with T/w-law frequencies plus jitter, so the
/// six side relations hold at strength ≤ C by construction.
#[derive(Debug, Clone)]
pub struct ParallelogramInstance {
    pub cfg: Configuration,
    pub c: f64,
    pub y: u64,
    pub y_prime: u64,
    pub x: [u64; 2],
    pub x_prime: [u64; 2],
    pub p: [u64; 2],
    pub q: [u64; 2],
    pub r: u64,
    pub s: u64,
}

pub fn parallelogram_instance(seed: u64) -> ParallelogramInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 2000u64;
    let strength = 2.0e8;
    let c = 0.2 + 0.8 * rng.gen::<f64>();
    // Products of three primes from [P, 1.125P] stay within a factor 1.43.
    let band: Vec<u64> = primes_in(scale)
        .unwrap()
        .primes
        .into_iter()
        .filter(|&p| p <= 2250)
        .collect();
    let ps = pick_distinct(&mut rng, &band, 6);
    let (p1, p2, q1, q2, r, s) = (ps[0], ps[1], ps[2], ps[3], ps[4], ps[5]);
    let m = rng.gen_range(1..=8u64);
    let y = p1 * p2 * s * m;
    let x1 = q1 * p2 * s * m;
    let x2 = q2 * p1 * s * m;
    let y_prime = p1 * p2 * r * m;
    let x1_prime = q1 * p2 * r * m;
    let x2_prime = q2 * p1 * r * m;
    let t = rng.gen::<f64>() * 2.0 * y as f64;
    let jitter = c / (8.0 * scale as f64 * strength);
    let mut pts = Vec::new();
    for &w in &[y, x1, x2, y_prime, x1_prime, x2_prime] {
        let eta = jitter * (2.0 * rng.gen::<f64>() - 1.0);
        pts.push((w, frac(t / w as f64 + eta)));
    }
    let cfg = build_cfg(pts, scale, strength);
    ParallelogramInstance {
        cfg,
        c,
        y,
        y_prime,
        x: [x1, x2],
        x_prime: [x1_prime, x2_prime],
        p: [p1, p2],
        q: [q1, q2],
        r,
        s,
    }
}

/// A planted cluster: points z/pᵢ for z = m·Πpᵢ with frequencies
/// frac(pᵢ·β) plus jitter ≤ C/(8PH), so the members form a cluster of
/// diameter ≤ C and the exact lift recovers β.
#[derive(Debug, Clone)]
pub struct ConstellationInstance {
    pub cfg: Configuration,
    pub members: Vec<(u64, u64)>,
    pub beta: f64,
    pub z: f64,
    pub c: f64,
}

pub fn constellation_instance(seed: u64) -> ConstellationInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 100u64;
    let strength = 5.0e5;
    let c = 0.05 + 0.95 * rng.gen::<f64>();
    let pool = primes_in(scale).unwrap().primes;
    let k = rng.gen_range(4..=5usize);
    let member_primes = pick_distinct(&mut rng, &pool, k);
    let m = rng.gen_range(1..=40u64);
    let z: u64 = m * member_primes.iter().product::<u64>();
    let beta = rng.gen::<f64>();
    let jitter = c / (8.0 * scale as f64 * strength);
    let mut pts: Vec<(u64, f64)> = member_primes
        .iter()
        .map(|&p| {
            let eta = jitter * (2.0 * rng.gen::<f64>() - 1.0);
            (z / p, frac(p as f64 * beta + eta))
        })
        .collect();
    // A few unrelated points keep the instance from being pure signal.
    let lo = pts.iter().map(|e| e.0).min().unwrap();
    for _ in 0..3 {
        let extra = rng.gen_range(lo..2 * lo);
        if member_primes.iter().all(|&p| z / p != extra) {
            pts.push((extra, rng.gen::<f64>()));
        }
    }
    let cfg = build_cfg(pts, scale, strength);
    let mut members: Vec<(u64, u64)> = member_primes.iter().map(|&p| (z / p, p)).collect();
    members.sort_unstable();
    ConstellationInstance { cfg, members, beta, z: z as f64, c }
}

/// A dense instance with exact modular structure: points p·k₀ for all
/// p ∈ 𝒫 coprime to q₀, residues a_x = a₀·x⁻¹ mod q₀ and frequencies
/// α_x = a_x/q₀.  Every pair (x, y) = (a·k₀, b·k₀) is exactly related via
/// (p, q) = (b, a), and the congruence q·a_x ≡ p·a_y (mod q₀) holds.
#[derive(Debug, Clone)]
pub struct ModularInstance {
    pub cfg: Configuration,
    pub q0: u64,
    pub a0: u64,
    /// Planted residues (x, a_x).
    pub residues: Vec<(u64, u64)>,
}

pub fn modular_instance(seed: u64, q0: u64) -> ModularInstance {
    assert!(q0 >= 2, "modulus must be at least 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 100u64;
    let strength = 1.0e6;
    let mut k0 = rng.gen_range(21..=40u64);
    while k0 % q0 == 0 {
        k0 += 1;
    }
    let units: Vec<u64> = (1..q0).filter(|&a| num_integer::gcd(a, q0) == 1).collect();
    let a0 = units[rng.gen_range(0..units.len())];
    let primes: Vec<u64> = primes_in(scale)
        .unwrap()
        .primes
        .into_iter()
        .filter(|&p| p % q0 != 0)
        .collect();
    let mut pts = Vec::new();
    let mut residues = Vec::new();
    for &p in &primes {
        let x = p * k0;
        let inv = crate::numutil::mod_inverse(x % q0, q0).expect("x coprime to q0");
        let ax = a0 * inv % q0;
        pts.push((x, ax as f64 / q0 as f64));
        residues.push((x, ax));
    }
    residues.sort_unstable();
    let cfg = build_cfg(pts, scale, strength);
    ModularInstance { cfg, q0, a0, residues }
}

/// A configuration with the smooth drifting law α_x = frac(a₀/q₀ + T₀/x)
/// plus bounded noise, for exercising the global fit.
#[derive(Debug, Clone)]
pub struct DriftInstance {
    pub cfg: Configuration,
    pub q0: u64,
    pub a0: u64,
    pub t0: f64,
    pub noise: f64,
}

pub fn drift_instance(seed: u64, q0: u64, a0: u64, t0: f64, noise: f64) -> DriftInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 100u64;
    let strength = 1.0e4;
    let y = 220_000u64;
    let mut points = std::collections::BTreeSet::new();
    while points.len() < 60 {
        points.insert(rng.gen_range(y..2 * y));
    }
    let pts: Vec<(u64, f64)> = points
        .iter()
        .map(|&x| {
            let jit = noise * (rng.gen::<f64>() - 0.5);
            (x, frac(a0 as f64 / q0 as f64 + t0 / x as f64 + jit))
        })
        .collect();
    let cfg = build_cfg(pts, scale, strength);
    DriftInstance { cfg, q0, a0, t0, noise }
}

/// A Θ-shaped instance: two label-distinct three-step routes between a hub
/// and an endpoint, five exact edges plus one edge with position defect
/// D ≠ 0, q₀ | D, |D| ≤ P/10, and the modular-plus-drift frequency law
/// α_x = frac(a_x/q₀ + T₀/x) with a_x = a₀·x⁻¹ mod q₀.  The defect's
/// divisibility keeps every designed relation consistent with the law, so
/// closed-path certificates through the hub expose the planted modulus.
#[derive(Debug, Clone)]
pub struct ThetaDriftInstance {
    pub cfg: Configuration,
    pub q0: u64,
    pub a0: u64,
    pub t0: f64,
    /// The hub x = q₁q₂q₃ from which both routes depart.
    pub hub: u64,
    /// The common endpoint e = p₁p₂p₃ of the two routes.
    pub endpoint: u64,
    /// All six vertices: hub, v₁, v₂, endpoint, w₁, w₂.
    pub vertices: [u64; 6],
    /// The defect r₃·w₂ − s₃·e of the single inexact edge.
    pub defect: i64,
    /// Planted residues (x, a_x) (all zero when q₀ = 1).
    pub residues: Vec<(u64, u64)>,
}

/// Count of prime labels (m, n) with |m·u − n·v| ≤ slack.
fn label_count(primes: &[u64], u: u64, v: u64, slack: u64) -> usize {
    let mut count = 0;
    for &m in primes {
        let mu = m as i128 * u as i128;
        let lo = ((mu - slack as i128).max(0) + v as i128 - 1) / v as i128;
        let hi = (mu + slack as i128) / v as i128;
        for n in lo..=hi {
            if n > 0 && primes.binary_search(&(n as u64)).is_ok() {
                count += 1;
            }
        }
    }
    count
}

pub fn theta_drift_instance(q0: u64, a0: u64, t0: f64) -> ThetaDriftInstance {
    assert!((1..=300).contains(&q0), "modulus must sit below the prime scale");
    assert!(
        (q0 == 1 && a0 == 0) || (a0 > 0 && a0 < q0 && num_integer::gcd(a0, q0) == 1),
        "a0 must be a unit mod q0"
    );
    assert!(t0.is_finite() && t0.abs() <= 4.0, "drift exceeds the defect budget");
    let scale = 300u64;
    let strength = 1.0e6;
    let pr = primes_in(scale).unwrap().primes;
    let slack = scale / 10;

    // All products of four distinct primes, sorted: two disjoint supports
    // with product gap 0 < |D| ≤ P/10 and q₀ | D feed the defect edge.
    let mut prods: Vec<(u64, [u64; 4])> = Vec::new();
    for i in 0..pr.len() {
        for j in (i + 1)..pr.len() {
            for k in (j + 1)..pr.len() {
                for l in (k + 1)..pr.len() {
                    prods.push((pr[i] * pr[j] * pr[k] * pr[l], [pr[i], pr[j], pr[k], pr[l]]));
                }
            }
        }
    }
    prods.sort_unstable();
    for i in 0..prods.len() {
        for j in (i + 1)..prods.len() {
            if prods[j].0 - prods[i].0 > slack {
                break;
            }
            let (pa, sa) = prods[i];
            let (pb, sb) = prods[j];
            if (pb - pa) % q0 != 0 || sa.iter().any(|t| sb.contains(t)) {
                continue;
            }
            for (lhs, rhs) in [(sa, sb), (sb, sa)] {
                if let Some(inst) = theta_assignment(&pr, lhs, rhs, q0, a0, t0, scale, strength) {
                    return inst;
                }
            }
        }
    }
    unreachable!("the prime pool admits a defect tuple for every q0 ≤ 300");
}

/// Tries every role assignment (q₃, r₃ ∈ lhs; s₃ ∈ rhs; hub primes q₁ < q₂)
/// for one support pair, demanding an octave point set whose relation graph
/// is exactly the six designed edges plus the forced {v₁, w₁} chord, each
/// with a unique label.
fn theta_assignment(
    pr: &[u64],
    lhs: [u64; 4],
    rhs: [u64; 4],
    q0: u64,
    a0: u64,
    t0: f64,
    scale: u64,
    strength: f64,
) -> Option<ThetaDriftInstance> {
    let slack = scale / 10;
    let free: Vec<u64> =
        pr.iter().copied().filter(|t| !lhs.contains(t) && !rhs.contains(t)).collect();
    for &q3 in &lhs {
        let rest: Vec<u64> = lhs.iter().copied().filter(|&t| t != q3).collect();
        for &r3 in &rest {
            let rr: Vec<u64> = rest.iter().copied().filter(|&t| t != r3).collect();
            let (r1, r2) = (rr[0], rr[1]);
            for &s3 in &rhs {
                let ps: Vec<u64> = rhs.iter().copied().filter(|&t| t != s3).collect();
                let (p1, p2, p3) = (ps[0], ps[1], ps[2]);
                for (a, &q1) in free.iter().enumerate() {
                    for &q2 in &free[(a + 1)..] {
                        let x = q1 * q2 * q3;
                        let v1 = p1 * q2 * q3;
                        let v2 = p1 * p2 * q3;
                        let e = p1 * p2 * p3;
                        let w1 = r1 * q2 * q3;
                        let w2 = r1 * r2 * q3;
                        let vs = [x, v1, v2, e, w1, w2];
                        let lo = *vs.iter().min().unwrap();
                        let hi = *vs.iter().max().unwrap();
                        let mut sorted = vs;
                        sorted.sort_unstable();
                        if sorted.windows(2).any(|w| w[0] == w[1]) || hi >= 2 * lo {
                            continue;
                        }
                        // The designed edge set, with multiplicity demanded 1.
                        let designed = [
                            (x, v1),
                            (v1, v2),
                            (v2, e),
                            (x, w1),
                            (w1, w2),
                            (w2, e),
                            (v1, w1),
                        ];
                        let ok = (0..6).all(|i| {
                            ((i + 1)..6).all(|j| {
                                let (u, v) = (sorted[i], sorted[j]);
                                let want = designed
                                    .iter()
                                    .filter(|&&(a, b)| (a.min(b), a.max(b)) == (u, v))
                                    .count();
                                label_count(pr, u, v, slack) == want
                            })
                        });
                        if !ok {
                            continue;
                        }
                        let defect = (r3 as i128 * w2 as i128 - s3 as i128 * e as i128) as i64;
                        debug_assert!(defect != 0 && defect.unsigned_abs() <= slack);
                        debug_assert_eq!(defect.unsigned_abs() % q0, 0);
                        let mut residues = Vec::new();
                        let pts: Vec<(u64, f64)> = sorted
                            .iter()
                            .map(|&v| {
                                let ax = if q0 == 1 {
                                    0
                                } else {
                                    a0 * crate::numutil::mod_inverse(v % q0, q0)
                                        .expect("vertices are coprime to q0")
                                        % q0
                                };
                                residues.push((v, ax));
                                (v, frac(ax as f64 / q0 as f64 + t0 / v as f64))
                            })
                            .collect();
                        let cfg = build_cfg(pts, scale, strength);
                        let labels = [
                            (x, v1, p1, q1),
                            (v1, v2, p2, q2),
                            (v2, e, p3, q3),
                            (x, w1, r1, q1),
                            (w1, w2, r2, q2),
                            (w2, e, r3, s3),
                            (v1, w1, r1, p1),
                        ];
                        for (u, v, m, n) in labels {
                            let d = cfg.rel_strength(u, v, m, n).expect("designed label");
                            assert!(d <= 0.1, "designed edge must be a relation: {d}");
                        }
                        return Some(ThetaDriftInstance {
                            cfg,
                            q0,
                            a0,
                            t0,
                            hub: x,
                            endpoint: e,
                            vertices: vs,
                            defect,
                            residues,
                        });
                    }
                }
            }
        }
    }
    None
}

/// A planted pretentious function: f(n) = χ(n)·e(−(a₀/q₀)·n − T₀·ln n)
/// times a bounded deterministic phase jitter.  With `chi` set and q₀ an
/// odd prime, χ is the quadratic character mod q₀; otherwise χ ≡ 1.
#[derive(Debug, Clone)]
pub struct PlantedPhaseSource {
    pub q0: u64,
    pub a0: u64,
    pub t0: f64,
    pub noise: f64,
    pub chi: bool,
    seed: u64,
}

impl PlantedPhaseSource {
    pub fn new(q0: u64, a0: u64, t0: f64, noise: f64, chi: bool, seed: u64) -> Self {
        assert!(q0 >= 1, "modulus must be positive");
        PlantedPhaseSource { q0, a0, t0, noise, chi, seed }
    }

    fn character(&self, n: u64) -> f64 {
        if !self.chi || self.q0 < 3 || self.q0 % 2 == 0 {
            return 1.0;
        }
        let r = n % self.q0;
        if r == 0 {
            return 0.0;
        }
        // Quadratic character via Euler's criterion (q₀ an odd prime).
        let e = (self.q0 - 1) / 2;
        let mut acc = 1u64;
        let mut base = r;
        let mut exp = e;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base % self.q0;
            }
            base = base * base % self.q0;
            exp >>= 1;
        }
        if acc == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

impl ValueSource for PlantedPhaseSource {
    fn window(&self, x: u64, h: u64) -> Result<Vec<Complex64>, ExpsumError> {
        let mut out = Vec::with_capacity(h as usize);
        for n in x..x + h {
            if n == 0 {
                out.push(Complex64::new(0.0, 0.0));
                continue;
            }
            // Rational part of the phase computed exactly in integers.
            let rat = (self.a0 % self.q0 * (n % self.q0)) % self.q0;
            let mut phase = rat as f64 / self.q0 as f64 + frac(self.t0 * (n as f64).ln());
            if self.noise > 0.0 {
                phase += self.noise * (unit_from_hash(self.seed, n) - 0.5);
            }
            out.push(self.character(n) * Complex64::from_polar(1.0, -TAU * frac(phase)));
        }
        Ok(out)
    }
}
