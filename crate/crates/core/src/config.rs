//! Configurations: the ambient bracket, the relation-strength functional,
//! the strong-relation set Q(𝒜), sub-configurations, lifts, and towers.
//!
//! Points are exact integers.  The pipeline produces them by rescaling
//! window starts x → x/H with starts aligned to multiples of H, so the
//! division is exact and 1-separation reduces to distinctness.  The
//! exactness gate 4·P·Y < 2^53 keeps every product p·x (p ≤ 2P, x < 2Y)
//! exactly representable in f64, so position terms carry no rounding.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::numutil::norm1;
use crate::sieve::{primes_in, PrimeRange, SieveError};

/// Validation regime for [`Configuration::new`].
///
/// Strict mode enforces the magnitude floors P ≥ 10³, Y ≥ P³, H ≥ P³ used
/// by pipeline runs; test mode drops the floors so hand-sized instances can
/// exercise the same code paths.  Both modes enforce sortedness,
/// distinctness, frequency ranges, and the f64 exactness gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Strict,
    Test,
}

/// Congruence tolerance accepted by [`verify_lift`].
pub const LIFT_TOLERANCE: f64 = 1e-12;

/// Default relation threshold: a quadruple is a strong relation when its
/// strength is at most 1/10.
pub const RELATION_THRESHOLD: f64 = 0.1;

/// Errors from configuration construction and queries.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration has no points")]
    Empty,
    #[error("points not strictly increasing at index {idx}")]
    Unsorted { idx: usize },
    #[error("{points} points but {freqs} frequencies")]
    FreqCount { points: usize, freqs: usize },
    #[error("frequency {value} at index {idx} is not finite")]
    BadFrequency { idx: usize, value: f64 },
    #[error("strength {0} must be positive and finite")]
    BadStrength(f64),
    #[error("ambient lower edge {0} must be positive and finite")]
    BadAmbient(f64),
    #[error("point {x} outside the ambient bracket [{y}, {two_y})")]
    OutsideAmbient { x: u64, y: f64, two_y: f64 },
    #[error("prime range scale {range} does not match ambient scale {ambient}")]
    ScaleMismatch { range: u64, ambient: u64 },
    #[error("empty prime range at scale {0}")]
    NoPrimes(u64),
    #[error("exactness budget exceeded: 4·P·Y = {product:.3e} ≥ 2^53")]
    ExactnessBudget { product: f64 },
    #[error("strict mode: scale {0} below 10^3")]
    StrictScale(u64),
    #[error("strict mode: ambient {y:.3e} below P^3 = {need:.3e}")]
    StrictAmbient { y: f64, need: f64 },
    #[error("strict mode: strength {strength:.3e} below P^3 = {need:.3e}")]
    StrictStrength { strength: f64, need: f64 },
    #[error("point {0} not in the configuration")]
    UnknownPoint(u64),
    #[error("prime {0} not in the prime range")]
    UnknownPrime(u64),
    #[error("threshold {0} outside (0, 1/2]")]
    BadThreshold(f64),
    #[error("diameter bound {0} must be positive and finite")]
    BadDiameter(f64),
    #[error("restriction subset is empty")]
    EmptyRestriction,
    #[error("restriction point {0} not in the base configuration")]
    NotASubset(u64),
    #[error("lift point {0} not in the base configuration")]
    LiftNotSubset(u64),
    #[error("lift strength {got:.6e} differs from base strength × p = {want:.6e}")]
    LiftStrength { got: f64, want: f64 },
    #[error(
        "lift congruence p·β ≡ α (mod 1) fails at {} point(s) {offending:?} (max error {max_error:.3e})",
        offending.len()
    )]
    LiftCongruence { offending: Vec<u64>, max_error: f64 },
    #[error("tower level {level} base does not match level {} lifted configuration", level - 1)]
    TowerChain { level: usize },
    #[error(transparent)]
    Sieve(#[from] SieveError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config file: {0}")]
    Parse(String),
}

/// Ambient data shared by all points of a configuration: the bracket
/// [Y, 2Y), the prime scale P, and the primes 𝒫 ⊆ [P, 2P].
#[derive(Debug, Clone, PartialEq)]
pub struct Ambient {
    pub y: f64,
    pub scale: u64,
    pub primes: PrimeRange,
}

/// A 1-separated point set A ⊂ [Y, 2Y) with frequencies α_x ∈ [0, 1) and a
/// strength parameter H.  `freqs[i]` belongs to `points[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub points: Vec<u64>,
    pub freqs: Vec<f64>,
    pub strength: f64,
    pub ambient: Ambient,
    pub mode: Mode,
}

/// A strong local relation (x, y, p, q) together with its strength value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadruple {
    pub x: u64,
    pub y: u64,
    pub p: u64,
    pub q: u64,
    pub strength_value: f64,
}

/// A lift ℬ of a base configuration: same points (a subset), frequencies β
/// with p·β_x ≡ α_x (mod 1), and strength multiplied by the lifting prime.
#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    pub base: Configuration,
    pub lifted: Configuration,
    pub lifting_prime: u64,
}

/// An iterated sequence of lifts; level i's base is level i−1's lifted
/// configuration.
#[derive(Debug, Clone, Default)]
pub struct Tower {
    pub levels: Vec<Lift>,
}

/// Outcome of [`verify_lift`] on a valid lift.
#[derive(Debug, Clone, Copy)]
pub struct LiftReport {
    pub lifting_prime: u64,
    pub checked_points: usize,
    pub max_congruence_error: f64,
}

impl Configuration {
    /// Validates and builds a configuration.
    ///
    /// Checks, in both modes: non-empty strictly increasing points, one
    /// finite frequency per point (reduced mod 1 on the way in), positive
    /// finite strength, points inside [Y, 2Y), prime range matching the
    /// ambient scale, and 4·P·Y < 2^53.  Strict mode additionally enforces
    /// P ≥ 10³, Y ≥ P³, H ≥ P³.
    pub fn new(
        points: Vec<u64>,
        freqs: Vec<f64>,
        strength: f64,
        ambient: Ambient,
        mode: Mode,
    ) -> Result<Self, ConfigError> {
        if points.is_empty() {
            return Err(ConfigError::Empty);
        }
        if points.len() != freqs.len() {
            return Err(ConfigError::FreqCount { points: points.len(), freqs: freqs.len() });
        }
        for idx in 1..points.len() {
            if points[idx] <= points[idx - 1] {
                return Err(ConfigError::Unsorted { idx });
            }
        }
        let mut freqs = freqs;
        for (idx, a) in freqs.iter_mut().enumerate() {
            if !a.is_finite() {
                return Err(ConfigError::BadFrequency { idx, value: *a });
            }
            *a = crate::numutil::frac(*a);
        }
        if !(strength.is_finite() && strength > 0.0) {
            return Err(ConfigError::BadStrength(strength));
        }
        if !(ambient.y.is_finite() && ambient.y > 0.0) {
            return Err(ConfigError::BadAmbient(ambient.y));
        }
        let two_y = 2.0 * ambient.y;
        for &x in &points {
            if (x as f64) < ambient.y || (x as f64) >= two_y {
                return Err(ConfigError::OutsideAmbient { x, y: ambient.y, two_y });
            }
        }
        if ambient.primes.scale != ambient.scale {
            return Err(ConfigError::ScaleMismatch {
                range: ambient.primes.scale,
                ambient: ambient.scale,
            });
        }
        if ambient.primes.is_empty() {
            return Err(ConfigError::NoPrimes(ambient.scale));
        }
        let product = 4.0 * ambient.scale as f64 * ambient.y;
        if product >= (1u64 << 53) as f64 {
            return Err(ConfigError::ExactnessBudget { product });
        }
        if mode == Mode::Strict {
            if ambient.scale < 1_000 {
                return Err(ConfigError::StrictScale(ambient.scale));
            }
            let need = (ambient.scale as f64).powi(3);
            if ambient.y < need {
                return Err(ConfigError::StrictAmbient { y: ambient.y, need });
            }
            if strength < need {
                return Err(ConfigError::StrictStrength { strength, need });
            }
        }
        Ok(Configuration { points, freqs, strength, ambient, mode })
    }

    /// Number of points |A|.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of `x` in the sorted point list.
    pub fn index_of(&self, x: u64) -> Option<usize> {
        self.points.binary_search(&x).ok()
    }

    /// Frequency α_x, if x is a point.
    pub fn freq(&self, x: u64) -> Option<f64> {
        self.index_of(x).map(|i| self.freqs[i])
    }

    /// dist(p, q; x, y) = max(|px − qy|/P, H·‖q·α_x − p·α_y‖).
    ///
    /// Unknown points or primes are lookup errors.
    pub fn rel_strength(&self, x: u64, y: u64, p: u64, q: u64) -> Result<f64, ConfigError> {
        let ax = self.freq(x).ok_or(ConfigError::UnknownPoint(x))?;
        let ay = self.freq(y).ok_or(ConfigError::UnknownPoint(y))?;
        if !self.ambient.primes.contains(p) {
            return Err(ConfigError::UnknownPrime(p));
        }
        if !self.ambient.primes.contains(q) {
            return Err(ConfigError::UnknownPrime(q));
        }
        Ok(self.dist_raw(x, ax, y, ay, p, q))
    }

    /// Strength functional on raw data; callers guarantee membership.
    pub(crate) fn dist_raw(&self, x: u64, ax: f64, y: u64, ay: f64, p: u64, q: u64) -> f64 {
        // p·x − q·y is exact in i128; |·| < 4PY < 2^53 so the cast is exact.
        let pos = (p as i128 * x as i128 - q as i128 * y as i128).unsigned_abs() as f64
            / self.ambient.scale as f64;
        let frq = self.strength * norm1(q as f64 * ax - p as f64 * ay);
        pos.max(frq)
    }

    /// All quadruples of strength ≤ `threshold`, threshold ∈ (0, 1/2].
    ///
    /// Runs in O(|A|·|𝒫|²·log|A|): for fixed (x, p, q) the position
    /// condition |px − qy| ≤ t·P confines y to an interval of length
    /// 2tP/q < 1, which holds at most one point by 1-separation.
    pub fn relations(&self, threshold: f64) -> Result<Vec<Quadruple>, ConfigError> {
        if !(threshold.is_finite() && threshold > 0.0 && threshold <= 0.5) {
            return Err(ConfigError::BadThreshold(threshold));
        }
        Ok(self.relations_at(threshold))
    }

    /// Like [`Configuration::relations`] but for enlarged thresholds C > 1/2
    /// as used by cluster machinery (4C, 6C, 16C, …).  Candidate counts per
    /// (x, p, q) grow like 2C+1.
    pub fn relations_enlarged(&self, c: f64) -> Result<Vec<Quadruple>, ConfigError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(ConfigError::BadDiameter(c));
        }
        Ok(self.relations_at(c))
    }

    fn relations_at(&self, threshold: f64) -> Vec<Quadruple> {
        let pr = &self.ambient.primes.primes;
        let scale = self.ambient.scale as f64;
        let per_x: Vec<Vec<Quadruple>> = self
            .points
            .par_iter()
            .enumerate()
            .map(|(i, &x)| {
                let ax = self.freqs[i];
                let mut local = Vec::new();
                for &p in pr {
                    let center = p as f64 * x as f64; // exact: p·x < 4PY < 2^53
                    for &q in pr {
                        let slack = threshold * scale;
                        let lo = (((center - slack) / q as f64).floor().max(0.0) as u64)
                            .saturating_sub(1);
                        let hi = ((center + slack) / q as f64).ceil() as u64 + 1;
                        let start = self.points.partition_point(|&v| v < lo);
                        for j in start..self.points.len() {
                            let y = self.points[j];
                            if y > hi {
                                break;
                            }
                            let d = self.dist_raw(x, ax, y, self.freqs[j], p, q);
                            if d <= threshold {
                                local.push(Quadruple { x, y, p, q, strength_value: d });
                            }
                        }
                    }
                }
                local
            })
            .collect();
        per_x.into_iter().flatten().collect()
    }

    /// Relation density δ = |Q(𝒜)| / (|A|·|𝒫|²) at the standard threshold.
    pub fn density(&self) -> f64 {
        let q = self.relations_at(RELATION_THRESHOLD).len();
        q as f64 / (self.len() as f64 * (self.ambient.primes.len() as f64).powi(2))
    }

    /// Sub-configuration on a non-empty subset B of the points.
    pub fn restrict(&self, b: &[u64]) -> Result<Configuration, ConfigError> {
        if b.is_empty() {
            return Err(ConfigError::EmptyRestriction);
        }
        let wanted: BTreeSet<u64> = b.iter().copied().collect();
        let mut points = Vec::with_capacity(wanted.len());
        let mut freqs = Vec::with_capacity(wanted.len());
        for &x in &wanted {
            match self.index_of(x) {
                Some(i) => {
                    points.push(x);
                    freqs.push(self.freqs[i]);
                }
                None => return Err(ConfigError::NotASubset(x)),
            }
        }
        Ok(Configuration {
            points,
            freqs,
            strength: self.strength,
            ambient: self.ambient.clone(),
            mode: self.mode,
        })
    }
}

/// Checks a lift: point subset, strength multiplication, and the congruence
/// p·β_x ≡ α_x (mod 1) within [`LIFT_TOLERANCE`].  Violations are structured
/// errors listing the offending points.
pub fn verify_lift(l: &Lift) -> Result<LiftReport, ConfigError> {
    let p = l.lifting_prime as f64;
    for &x in &l.lifted.points {
        if l.base.index_of(x).is_none() {
            return Err(ConfigError::LiftNotSubset(x));
        }
    }
    let want = l.base.strength * p;
    if (l.lifted.strength - want).abs() > 1e-9 * want {
        return Err(ConfigError::LiftStrength { got: l.lifted.strength, want });
    }
    let mut max_err = 0.0f64;
    let mut offending = Vec::new();
    for (i, &x) in l.lifted.points.iter().enumerate() {
        let alpha = l.base.freq(x).expect("subset checked above");
        let err = norm1(p * l.lifted.freqs[i] - alpha);
        max_err = max_err.max(err);
        if err > LIFT_TOLERANCE {
            offending.push(x);
        }
    }
    if !offending.is_empty() {
        return Err(ConfigError::LiftCongruence { offending, max_error: max_err });
    }
    Ok(LiftReport {
        lifting_prime: l.lifting_prime,
        checked_points: l.lifted.len(),
        max_congruence_error: max_err,
    })
}

impl Tower {
    pub fn height(&self) -> usize {
        self.levels.len()
    }

    /// Verifies every level and the base-of-level-i = lifted-of-level-i−1
    /// chain condition.
    pub fn verify(&self) -> Result<Vec<LiftReport>, ConfigError> {
        let mut reports = Vec::with_capacity(self.levels.len());
        for (level, lift) in self.levels.iter().enumerate() {
            if level > 0 && self.levels[level - 1].lifted != lift.base {
                return Err(ConfigError::TowerChain { level });
            }
            reports.push(verify_lift(lift)?);
        }
        Ok(reports)
    }

    /// Cumulative strength multiplier Π p*_i.
    pub fn strength_multiplier(&self) -> f64 {
        self.levels.iter().map(|l| l.lifting_prime as f64).product()
    }
}

/// Writes a configuration in JSON-lines form: a header record
/// {"H":…, "P":…, "Y":…} followed by one {"alpha":…, "x":…} record per
/// point.  Output is byte-deterministic.
pub fn write_config_jsonl(cfg: &Configuration, path: &Path) -> Result<(), ConfigError> {
    let mut out = String::new();
    out.push_str(
        &serde_json::json!({"Y": cfg.ambient.y, "P": cfg.ambient.scale, "H": cfg.strength})
            .to_string(),
    );
    out.push('\n');
    for (i, &x) in cfg.points.iter().enumerate() {
        out.push_str(&serde_json::json!({"x": x, "alpha": cfg.freqs[i]}).to_string());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a JSON-lines configuration written by [`write_config_jsonl`].
/// Points are sorted on the way in; the prime range is rebuilt from P.
pub fn read_config_jsonl(path: &Path, mode: Mode) -> Result<Configuration, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: serde_json::Value = serde_json::from_str(
        lines.next().ok_or_else(|| ConfigError::Parse("empty file".into()))?,
    )
    .map_err(|e| ConfigError::Parse(e.to_string()))?;
    let y = header["Y"].as_f64().ok_or_else(|| ConfigError::Parse("header missing Y".into()))?;
    let p = header["P"].as_u64().ok_or_else(|| ConfigError::Parse("header missing P".into()))?;
    let h = header["H"].as_f64().ok_or_else(|| ConfigError::Parse("header missing H".into()))?;
    let mut recs: Vec<(u64, f64)> = Vec::new();
    for line in lines {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let x = v["x"].as_u64().ok_or_else(|| ConfigError::Parse("record missing x".into()))?;
        let alpha = v["alpha"]
            .as_f64()
            .ok_or_else(|| ConfigError::Parse("record missing alpha".into()))?;
        recs.push((x, alpha));
    }
    recs.sort_unstable_by_key(|r| r.0);
    let points: Vec<u64> = recs.iter().map(|r| r.0).collect();
    let freqs: Vec<f64> = recs.iter().map(|r| r.1).collect();
    let primes = primes_in(p)?;
    Configuration::new(points, freqs, h, Ambient { y, scale: p, primes }, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numutil::frac;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_ambient() -> Ambient {
        Ambient { y: 70.0, scale: 10, primes: PrimeRange { scale: 10, primes: vec![7, 13] } }
    }

    fn toy_cfg() -> Configuration {
        Configuration::new(
            vec![70, 130],
            vec![0.135, 0.25],
            1000.0,
            toy_ambient(),
            Mode::Test,
        )
        .unwrap()
    }

    #[test]
    fn strength_hand_example() {
        let cfg = toy_cfg();
        // |7·130 − 13·70| = 0; ‖13·0.25 − 7·0.135‖ = ‖2.305‖ = 0.305.
        let d = cfg.rel_strength(130, 70, 7, 13).unwrap();
        assert!((d - 305.0).abs() < 1e-9, "d = {d}");
        // Choosing α_y so the frequency term vanishes drops the strength to 0.
        let cfg2 = Configuration::new(
            vec![70, 130],
            vec![frac(13.0 * 0.25 / 7.0), 0.25],
            1000.0,
            toy_ambient(),
            Mode::Test,
        )
        .unwrap();
        let d2 = cfg2.rel_strength(130, 70, 7, 13).unwrap();
        assert!(d2 < 1e-9, "d2 = {d2}");
        assert!(cfg.rel_strength(130, 130, 7, 7).unwrap() == 0.0);
    }

    #[test]
    fn lookup_errors() {
        let cfg = toy_cfg();
        assert!(matches!(cfg.rel_strength(71, 70, 7, 13), Err(ConfigError::UnknownPoint(71))));
        assert!(matches!(cfg.rel_strength(70, 70, 5, 13), Err(ConfigError::UnknownPrime(5))));
    }

    #[test]
    fn exact_pair_relations() {
        // y = px/q with the frequency chosen exactly: both orientations in Q.
        let ambient =
            Ambient { y: 700.0, scale: 10, primes: PrimeRange { scale: 10, primes: vec![7, 13] } };
        let cfg = Configuration::new(
            vec![700, 1300],
            vec![frac(13.0 * 0.25 / 7.0), 0.25],
            1000.0,
            ambient,
            Mode::Test,
        )
        .unwrap();
        let q = cfg.relations(RELATION_THRESHOLD).unwrap();
        let tuples: Vec<(u64, u64, u64, u64)> = q.iter().map(|r| (r.x, r.y, r.p, r.q)).collect();
        assert!(tuples.contains(&(1300, 700, 7, 13)));
        assert!(tuples.contains(&(700, 1300, 13, 7)));
        // 4 diagonal quadruples + the planted pair in both orientations.
        assert_eq!(q.len(), 6);
        assert!((cfg.density() - 6.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_only_density() {
        let ambient =
            Ambient { y: 700.0, scale: 10, primes: PrimeRange { scale: 10, primes: vec![7, 13] } };
        let cfg = Configuration::new(
            vec![700, 1300],
            vec![0.6180339887, 0.25],
            1000.0,
            ambient,
            Mode::Test,
        )
        .unwrap();
        // Positions still admit (1300, 700, 7, 13) but the frequency term is
        // now ~381 ≫ 1/10, so only the |A|·|𝒫| diagonal remains.
        assert!((cfg.density() - 0.5).abs() < 1e-12);
    }

    fn random_cfg(seed: u64, n: usize, scale: u64, y: u64) -> Configuration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: BTreeSet<u64> = BTreeSet::new();
        while pts.len() < n {
            pts.insert(rng.gen_range(y..2 * y));
        }
        let points: Vec<u64> = pts.into_iter().collect();
        let freqs: Vec<f64> = points.iter().map(|_| rng.gen::<f64>()).collect();
        let primes = primes_in(scale).unwrap();
        Configuration::new(
            points,
            freqs,
            (scale * scale) as f64,
            Ambient { y: y as f64, scale, primes },
            Mode::Test,
        )
        .unwrap()
    }

    fn brute_relations(cfg: &Configuration, threshold: f64) -> Vec<Quadruple> {
        let mut out = Vec::new();
        for (i, &x) in cfg.points.iter().enumerate() {
            for &p in &cfg.ambient.primes.primes {
                for &q in &cfg.ambient.primes.primes {
                    for (j, &y) in cfg.points.iter().enumerate() {
                        let d = cfg.dist_raw(x, cfg.freqs[i], y, cfg.freqs[j], p, q);
                        if d <= threshold {
                            out.push(Quadruple { x, y, p, q, strength_value: d });
                        }
                    }
                }
            }
        }
        out
    }

    fn same_quadruples(a: &[Quadruple], b: &[Quadruple]) -> bool {
        let key = |r: &Quadruple| (r.x, r.y, r.p, r.q);
        let mut ka: Vec<_> = a.iter().map(key).collect();
        let mut kb: Vec<_> = b.iter().map(key).collect();
        ka.sort_unstable();
        kb.sort_unstable();
        ka == kb
    }

    #[test]
    fn relations_match_brute_force() {
        for seed in 0..10u64 {
            let cfg = random_cfg(seed, 60, 20, 8_000);
            let fast = cfg.relations(RELATION_THRESHOLD).unwrap();
            let brute = brute_relations(&cfg, RELATION_THRESHOLD);
            assert!(same_quadruples(&fast, &brute), "seed {seed}");
            // Symmetry: (x,y,p,q) ∈ Q ⇔ (y,x,q,p) ∈ Q.
            let set: BTreeSet<(u64, u64, u64, u64)> =
                fast.iter().map(|r| (r.x, r.y, r.p, r.q)).collect();
            for r in &fast {
                assert!(set.contains(&(r.y, r.x, r.q, r.p)));
            }
        }
    }

    #[test]
    fn enlarged_threshold_candidate_cap() {
        // At most ⌈2C⌉+1 matching y per (x, p, q) slice.
        for seed in 0..5u64 {
            let cfg = random_cfg(seed, 80, 20, 8_000);
            for &c in &[0.5, 2.0, 5.0] {
                let rels = cfg.relations_enlarged(c).unwrap();
                let mut counts = std::collections::BTreeMap::new();
                for r in &rels {
                    *counts.entry((r.x, r.p, r.q)).or_insert(0usize) += 1;
                }
                let cap = (2.0 * c).ceil() as usize + 1;
                for (&k, &n) in &counts {
                    assert!(n <= cap, "seed {seed} C {c} slice {k:?} has {n} > {cap}");
                }
            }
        }
    }

    #[test]
    fn restrict_is_intersection() {
        let cfg = random_cfg(3, 50, 20, 8_000);
        let b: Vec<u64> = cfg.points.iter().copied().step_by(3).collect();
        let sub = cfg.restrict(&b).unwrap();
        assert_eq!(sub.len(), b.len());
        let inner = sub.relations(RELATION_THRESHOLD).unwrap();
        let keep: BTreeSet<u64> = b.iter().copied().collect();
        let outer: Vec<Quadruple> = cfg
            .relations(RELATION_THRESHOLD)
            .unwrap()
            .into_iter()
            .filter(|r| keep.contains(&r.x) && keep.contains(&r.y))
            .collect();
        assert!(same_quadruples(&inner, &outer));
        assert!(matches!(cfg.restrict(&[]), Err(ConfigError::EmptyRestriction)));
        assert!(matches!(cfg.restrict(&[1]), Err(ConfigError::NotASubset(1))));
    }

    #[test]
    fn lift_verification() {
        let cfg = random_cfg(4, 40, 20, 8_000);
        let p_star = cfg.ambient.primes.primes[0];
        let betas: Vec<f64> = cfg.freqs.iter().map(|&a| frac(a / p_star as f64)).collect();
        let lifted = Configuration::new(
            cfg.points.clone(),
            betas.clone(),
            cfg.strength * p_star as f64,
            cfg.ambient.clone(),
            Mode::Test,
        )
        .unwrap();
        let lift = Lift { base: cfg.clone(), lifted, lifting_prime: p_star };
        let report = verify_lift(&lift).unwrap();
        assert!(report.max_congruence_error <= LIFT_TOLERANCE);

        // Perturbing one β must be flagged with error ≈ p*·10⁻³.
        let mut bad = betas;
        bad[7] = frac(bad[7] + 1e-3);
        let lifted_bad = Configuration::new(
            cfg.points.clone(),
            bad,
            cfg.strength * p_star as f64,
            cfg.ambient.clone(),
            Mode::Test,
        )
        .unwrap();
        let offender = cfg.points[7];
        match verify_lift(&Lift { base: cfg, lifted: lifted_bad, lifting_prime: p_star }) {
            Err(ConfigError::LiftCongruence { offending, max_error }) => {
                assert_eq!(offending, vec![offender]);
                assert!((max_error - p_star as f64 * 1e-3).abs() < 1e-6);
            }
            other => panic!("expected congruence violation, got {other:?}"),
        }
    }

    #[test]
    fn lift_relation_inheritance() {
        // Pushing a lift back down (point-wise p·β mod 1) reproduces the
        // restricted relation set exactly.
        let cfg = random_cfg(5, 60, 20, 8_000);
        let b: Vec<u64> = cfg.points.iter().copied().step_by(2).collect();
        let sub = cfg.restrict(&b).unwrap();
        let p_star = cfg.ambient.primes.primes[1];
        let betas: Vec<f64> = sub.freqs.iter().map(|&a| frac(a / p_star as f64)).collect();
        let pushed: Vec<f64> = betas.iter().map(|&bta| frac(p_star as f64 * bta)).collect();
        let down = Configuration::new(
            sub.points.clone(),
            pushed,
            sub.strength,
            sub.ambient.clone(),
            Mode::Test,
        )
        .unwrap();
        assert!(same_quadruples(
            &down.relations(RELATION_THRESHOLD).unwrap(),
            &sub.relations(RELATION_THRESHOLD).unwrap(),
        ));
    }

    #[test]
    fn strict_mode_floors() {
        let primes = primes_in(1000).unwrap();
        let ambient = Ambient { y: 1e9, scale: 1000, primes };
        let cfg = Configuration::new(
            vec![1_000_000_000, 1_500_000_000],
            vec![0.1, 0.2],
            1e9,
            ambient.clone(),
            Mode::Strict,
        );
        assert!(cfg.is_ok());
        assert!(matches!(
            Configuration::new(vec![1_000_000_000], vec![0.1], 1e8, ambient, Mode::Strict),
            Err(ConfigError::StrictStrength { .. })
        ));
        let small = Ambient {
            y: 100.0,
            scale: 10,
            primes: PrimeRange { scale: 10, primes: vec![11, 13] },
        };
        assert!(matches!(
            Configuration::new(vec![100], vec![0.0], 1e9, small, Mode::Strict),
            Err(ConfigError::StrictScale(10))
        ));
    }

    #[test]
    fn exactness_gate() {
        let primes = primes_in(1000).unwrap();
        let y = 3e12; // 4·10³·3·10¹² = 1.2·10¹⁶ > 2^53 ≈ 9.007·10¹⁵
        let ambient = Ambient { y, scale: 1000, primes };
        assert!(matches!(
            Configuration::new(vec![3_000_000_000_000], vec![0.1], 1e12, ambient, Mode::Strict),
            Err(ConfigError::ExactnessBudget { .. })
        ));
    }

    #[test]
    fn jsonl_roundtrip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = random_cfg(6, 30, 20, 8_000);
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        write_config_jsonl(&cfg, &p1).unwrap();
        let back = read_config_jsonl(&p1, Mode::Test).unwrap();
        assert_eq!(back, cfg);
        write_config_jsonl(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn tower_chain_checked() {
        let cfg = random_cfg(7, 20, 20, 8_000);
        let p1 = cfg.ambient.primes.primes[0];
        let b1: Vec<f64> = cfg.freqs.iter().map(|&a| frac(a / p1 as f64)).collect();
        let l1 = Configuration::new(
            cfg.points.clone(),
            b1,
            cfg.strength * p1 as f64,
            cfg.ambient.clone(),
            Mode::Test,
        )
        .unwrap();
        let p2 = cfg.ambient.primes.primes[2];
        let b2: Vec<f64> = l1.freqs.iter().map(|&a| frac(a / p2 as f64)).collect();
        let l2 = Configuration::new(
            l1.points.clone(),
            b2,
            l1.strength * p2 as f64,
            l1.ambient.clone(),
            Mode::Test,
        )
        .unwrap();
        let tower = Tower {
            levels: vec![
                Lift { base: cfg.clone(), lifted: l1.clone(), lifting_prime: p1 },
                Lift { base: l1.clone(), lifted: l2.clone(), lifting_prime: p2 },
            ],
        };
        let reports = tower.verify().unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(tower.strength_multiplier(), (p1 * p2) as f64);
        let broken = Tower {
            levels: vec![
                Lift { base: cfg.clone(), lifted: l1, lifting_prime: p1 },
                Lift { base: cfg, lifted: l2, lifting_prime: p2 },
            ],
        };
        assert!(matches!(broken.verify(), Err(ConfigError::TowerChain { level: 1 })));
    }
}
