//! Clusters of local relations: diameter checks, center constructions, the
//! exact frequency-lift construction, greedy almost-disjoint families,
//! efficient covering, regularity classification, cluster replication, and
//! pattern counts.
//!
//! All diameter claims are re-verified after construction rather than
//! trusted.  The verification tolerance [`strength_epsilon`] absorbs the f64
//! rounding of frequency products, which grows with the configuration's
//! strength; at test scales it is far below every margin of interest.

use std::collections::{BTreeMap, BTreeSet};

use num_integer::Integer;
use thiserror::Error;

use crate::config::{ConfigError, Configuration, Quadruple, RELATION_THRESHOLD};
use crate::numutil::{frac, norm1};

/// Diameter growth factors from the cluster lemmas, collected in one table.
pub mod factors {
    /// Center construction and triangle composition: diameter ≤ 4C.
    pub const TRIANGLE: f64 = 4.0;
    /// Parallelogram composition: conclusion ≤ 6C.
    pub const PARALLELOGRAM: f64 = 6.0;
    /// Covering clusters K_i: diameter ≤ 16C.
    pub const COVERING: f64 = 16.0;
    /// Replicated cluster S′: diameter ≤ 24C.
    pub const REPLICATION: f64 = 24.0;
    /// Regularity union test: diameter ≤ 64C.
    pub const REGULARITY: f64 = 64.0;
    /// Merge chains grow by a factor 4 per strong intersection.
    pub const MERGE_BASE: f64 = 4.0;
}

// Candidate-pool construction caps (heuristic budget, not lemma constants).
const POOL_ANCHOR_CAP: usize = 4096;

/// Errors from cluster construction and verification.
#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("pair ({x}, {p}) is not a member of A×𝒫")]
    PairNotInConfig { x: u64, p: u64 },
    #[error("anchor ({x}, {p}) not in the cluster")]
    AnchorNotInCluster { x: u64, p: u64 },
    #[error("cluster lies in a single prime slice A×{{{p}}}")]
    SinglePrime { p: u64 },
    #[error("diameter bound {c} exceeds the budget {limit} (strength/scale)")]
    OverBudget { c: f64, limit: f64 },
    #[error("center {z} outside the strict range [{lo}, {hi}]")]
    CenterOutOfRange { z: f64, lo: f64, hi: f64 },
    #[error("chain link {idx} is almost disjoint from its predecessor")]
    AlmostDisjointLink { idx: usize },
    #[error("cluster violates its diameter bound {bound}: measured {measured}")]
    DiameterViolated { bound: f64, measured: f64 },
    #[error("lift postcondition fails at ({x}, {r}): error {err:.3e} > allowed {allowed:.3e}")]
    LiftPostcondition { x: u64, r: u64, err: f64, allowed: f64 },
    #[error("member ({x}, {r}) has no (p,q)-partner")]
    PartnerMissing { x: u64, r: u64 },
    #[error("quadruple ({x}, {y}, {p}, {q}) is not a strong relation (dist {dist})")]
    NotARelation { x: u64, y: u64, p: u64, q: u64, dist: f64 },
    #[error("eta {0} outside (0, 1]")]
    BadEta(f64),
    #[error("diameter parameter {0} must be positive and finite")]
    BadDiameter(f64),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// A set of (point, prime) pairs with all pairwise relation strengths at
/// most `diameter_bound`.  Members are kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<(u64, u64)>,
    pub diameter_bound: f64,
}

impl Cluster {
    pub fn new(mut members: Vec<(u64, u64)>, diameter_bound: f64) -> Self {
        members.sort_unstable();
        members.dedup();
        Cluster { members, diameter_bound }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, pair: (u64, u64)) -> bool {
        self.members.binary_search(&pair).is_ok()
    }

    /// Distinct primes appearing among the members.
    pub fn primes(&self) -> BTreeSet<u64> {
        self.members.iter().map(|&(_, p)| p).collect()
    }
}

/// The covering family (K_i) produced by [`covering`].
#[derive(Debug, Clone)]
pub struct CoveringFamily {
    pub clusters: Vec<Cluster>,
    pub c: f64,
    pub eta: f64,
    /// Σ|K_i|, reported against `size_bound` = |A||𝒫| + C⁹η⁻⁵|A|.
    pub total_size: usize,
    pub size_bound: f64,
}

/// Regular/irregular classification of all pairs in A×𝒫.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub regular: Vec<(u64, u64)>,
    pub irregular: Vec<(u64, u64)>,
    pub c: f64,
    pub eta: f64,
    /// The lemma-shaped budget C⁹η⁻⁵|A| the irregular count is compared to.
    pub irregular_bound: f64,
}

/// Outcome of [`lift_frequency`].
#[derive(Debug, Clone, Copy)]
pub struct ClusterLift {
    pub beta: f64,
    pub anchor: (u64, u64),
    pub witness: (u64, u64),
    /// max over members (x′,r) of ‖r·β − α_{x′}‖ (bounded by C/(Hp)).
    pub max_member_error: f64,
}

/// Pattern counts attached to one quadruple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternCounts {
    pub n_par: u64,
    pub n_double: u64,
    /// True when a cap stopped the enumeration early (capped variant only).
    pub truncated: bool,
}

/// Construction statistics of the candidate pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoolStats {
    pub generated: usize,
    pub kept: usize,
    pub dropped_diameter: usize,
}

/// Absolute slack for re-verifying proven strength bounds: rounding of the
/// frequency products q·α is amplified by the strength, so the honest f64
/// uncertainty of a dist value is ~8·H·P²·ε.
pub fn strength_epsilon(cfg: &Configuration) -> f64 {
    8.0 * cfg.strength * (cfg.ambient.scale as f64).powi(2) * f64::EPSILON
}

fn freq_of(cfg: &Configuration, x: u64) -> Result<f64, ClusterError> {
    cfg.freq(x).ok_or(ConfigError::UnknownPoint(x)).map_err(ClusterError::from)
}

fn check_member(cfg: &Configuration, pair: (u64, u64)) -> Result<f64, ClusterError> {
    let (x, p) = pair;
    if !cfg.ambient.primes.contains(p) {
        return Err(ClusterError::PairNotInConfig { x, p });
    }
    cfg.freq(x).ok_or(ClusterError::PairNotInConfig { x, p })
}

/// Largest pairwise relation strength among `members` (0 for ≤ 1 member).
pub fn diameter(cfg: &Configuration, members: &[(u64, u64)]) -> Result<f64, ClusterError> {
    let mut cached = Vec::with_capacity(members.len());
    for &pair in members {
        cached.push((pair.0, check_member(cfg, pair)?, pair.1));
    }
    let mut worst = 0.0f64;
    for i in 0..cached.len() {
        for j in (i + 1)..cached.len() {
            let (x, ax, r) = cached[i];
            let (y, ay, s) = cached[j];
            worst = worst.max(cfg.dist_raw(x, ax, y, ay, r, s));
        }
    }
    Ok(worst)
}

/// True iff all pairwise strengths are at most `c`.
pub fn diameter_ok(cfg: &Configuration, members: &[(u64, u64)], c: f64) -> Result<bool, ClusterError> {
    Ok(diameter(cfg, members)? <= c)
}

fn verify_diameter(cfg: &Configuration, members: &[(u64, u64)], bound: f64) -> Result<(), ClusterError> {
    let measured = diameter(cfg, members)?;
    if measured > bound + strength_epsilon(cfg) {
        return Err(ClusterError::DiameterViolated { bound, measured });
    }
    Ok(())
}

/// The center construction: all (x,p) with |p·x − z| ≤ C·P and
/// ‖p·β − α_x‖ ≤ C/(P·H), a cluster of diameter ≤ 4C (verified).
pub fn cluster_from_center(
    cfg: &Configuration,
    z: f64,
    beta: f64,
    c: f64,
) -> Result<Cluster, ClusterError> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(ClusterError::BadDiameter(c));
    }
    if cfg.mode == crate::config::Mode::Strict {
        let p = cfg.ambient.scale as f64;
        let y = cfg.ambient.y;
        if !(p * y <= z && z <= 4.0 * p * y) {
            return Err(ClusterError::CenterOutOfRange { z, lo: p * y, hi: 4.0 * p * y });
        }
    }
    let scale = cfg.ambient.scale as f64;
    let pos_slack = c * scale;
    let freq_slack = c / (scale * cfg.strength);
    let mut members = Vec::new();
    for &p in &cfg.ambient.primes.primes {
        let lo = (((z - pos_slack) / p as f64).floor().max(0.0) as u64).saturating_sub(1);
        let hi = ((z + pos_slack) / p as f64).ceil() as u64 + 1;
        let start = cfg.points.partition_point(|&v| v < lo);
        for j in start..cfg.points.len() {
            let x = cfg.points[j];
            if x > hi {
                break;
            }
            if ((p * x) as f64 - z).abs() <= pos_slack
                && norm1(p as f64 * beta - cfg.freqs[j]) <= freq_slack
            {
                members.push((x, p));
            }
        }
    }
    let cluster = Cluster::new(members, factors::TRIANGLE * c);
    verify_diameter(cfg, &cluster.members, cluster.diameter_bound)?;
    Ok(cluster)
}

/// True iff S1 ∩ S2 is confined to a single prime slice A×{p}.
pub fn almost_disjoint(s1: &Cluster, s2: &Cluster) -> bool {
    let mut seen: Option<u64> = None;
    for &pair in &s1.members {
        if s2.contains(pair) {
            match seen {
                None => seen = Some(pair.1),
                Some(p) if p != pair.1 => return false,
                _ => {}
            }
        }
    }
    true
}

/// Merges a chain of clusters where consecutive links strongly intersect.
/// The union is a cluster of diameter ≤ 4^{k−1}·C (re-verified).
pub fn merge_chain(
    cfg: &Configuration,
    clusters: &[Cluster],
    c: f64,
) -> Result<Cluster, ClusterError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(ClusterError::BadDiameter(c));
    }
    let k = clusters.len().max(1);
    let budget = factors::MERGE_BASE.powi(-(k as i32)) * cfg.strength
        / (30.0 * (cfg.ambient.scale as f64).powi(2));
    if c > budget {
        return Err(ClusterError::OverBudget { c, limit: budget });
    }
    let mut union: Vec<(u64, u64)> = Vec::new();
    for (idx, cl) in clusters.iter().enumerate() {
        verify_diameter(cfg, &cl.members, c)?;
        if idx > 0 && almost_disjoint(&clusters[idx - 1], cl) {
            return Err(ClusterError::AlmostDisjointLink { idx });
        }
        union.extend_from_slice(&cl.members);
    }
    let bound = factors::MERGE_BASE.powi(k as i32 - 1) * c;
    let merged = Cluster::new(union, bound);
    verify_diameter(cfg, &merged.members, bound)?;
    Ok(merged)
}

/// The exact frequency lift of a cluster at an anchor (x, p): picks a
/// witness (y, q), q ≠ p, minimizing ‖q·α_x − p·α_y‖, rounds it to the
/// integer k, solves q·m ≡ −k (mod p), and returns β = frac((α_x + m)/p).
///
/// Postconditions (verified): ‖p·β − α_x‖ = 0 up to f64 representation
/// (≤ [`crate::config::LIFT_TOLERANCE`]) and ‖r·β − α_{x′}‖ ≤ C/(H·p) for
/// every member (x′, r), with C the cluster's diameter bound.
pub fn lift_frequency(
    cfg: &Configuration,
    s: &Cluster,
    anchor: (u64, u64),
) -> Result<ClusterLift, ClusterError> {
    let (x, p) = anchor;
    if !s.contains(anchor) {
        return Err(ClusterError::AnchorNotInCluster { x, p });
    }
    let c = s.diameter_bound;
    let budget = cfg.strength / (30.0 * cfg.ambient.scale as f64);
    if c > budget {
        return Err(ClusterError::OverBudget { c, limit: budget });
    }
    if s.primes().len() < 2 {
        return Err(ClusterError::SinglePrime { p });
    }
    let ax = check_member(cfg, anchor)?;
    let mut witness: Option<((u64, u64), f64)> = None;
    for &(y, q) in &s.members {
        if q == p {
            continue;
        }
        let ay = freq_of(cfg, y)?;
        let gap = norm1(q as f64 * ax - p as f64 * ay);
        if witness.map_or(true, |(_, g)| gap < g) {
            witness = Some(((y, q), gap));
        }
    }
    let ((wy, wq), _) = witness.expect("two primes present");
    let ay = freq_of(cfg, wy)?;
    let k = (wq as f64 * ax - p as f64 * ay).round() as i128;
    // q·m ≡ −k (mod p): m = (−k)·q⁻¹ mod p (p, q distinct primes).
    let e = (wq as i128).extended_gcd(&(p as i128));
    debug_assert_eq!(e.gcd, 1);
    let inv = e.x.rem_euclid(p as i128);
    let m = ((-k).rem_euclid(p as i128) * inv).rem_euclid(p as i128) as f64;
    let beta = frac((ax + m) / p as f64);

    let anchor_err = norm1(p as f64 * beta - ax);
    if anchor_err > crate::config::LIFT_TOLERANCE {
        return Err(ClusterError::LiftPostcondition {
            x,
            r: p,
            err: anchor_err,
            allowed: crate::config::LIFT_TOLERANCE,
        });
    }
    let allowed = c / (cfg.strength * p as f64) + 32.0 * cfg.ambient.scale as f64 * f64::EPSILON;
    let mut max_err = anchor_err;
    for &(xp, r) in &s.members {
        let axp = freq_of(cfg, xp)?;
        let err = norm1(r as f64 * beta - axp);
        if err > allowed {
            return Err(ClusterError::LiftPostcondition { x: xp, r, err, allowed });
        }
        max_err = max_err.max(err);
    }
    Ok(ClusterLift { beta, anchor, witness: (wy, wq), max_member_error: max_err })
}

/// The candidate pool standing in for "all clusters of diameter ≤ C and
/// size ≥ η|𝒫|": common-neighbour clusters of anchor pairs with distinct
/// primes in the C/4 relation graph (triangle composition bounds them by C)
/// plus center seeds (p·x, α_x/p) at radius C/4.  Every candidate is
/// re-verified at C; failures (possible only beyond the triangle budget)
/// are dropped and counted.
pub fn candidate_pool(
    cfg: &Configuration,
    c: f64,
    eta: f64,
) -> Result<(Vec<Cluster>, PoolStats), ClusterError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(ClusterError::BadDiameter(c));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(ClusterError::BadEta(eta));
    }
    let min_size = (eta * cfg.ambient.primes.len() as f64).max(1.0);
    let quarter = c / 4.0;
    let mut stats = PoolStats::default();
    let mut seen: BTreeSet<Vec<(u64, u64)>> = BTreeSet::new();
    let mut pool: Vec<Cluster> = Vec::new();
    let mut admit = |members: Vec<(u64, u64)>,
                     pool: &mut Vec<Cluster>,
                     stats: &mut PoolStats|
     -> Result<(), ClusterError> {
        if (members.len() as f64) < min_size {
            return Ok(());
        }
        let cluster = Cluster::new(members, c);
        if seen.contains(&cluster.members) {
            return Ok(());
        }
        stats.generated += 1;
        let measured = diameter(cfg, &cluster.members)?;
        if measured > c + strength_epsilon(cfg) {
            stats.dropped_diameter += 1;
            return Ok(());
        }
        seen.insert(cluster.members.clone());
        pool.push(cluster);
        stats.kept += 1;
        Ok(())
    };

    // Source 1: common neighbourhoods.  Adjacency at threshold C/4; for an
    // anchor pair (v₁, v₂) with distinct primes every two common
    // neighbours are within 4·(C/4) = C by the triangle lemma.
    let quads = cfg.relations_enlarged(quarter)?;
    let mut adj: BTreeMap<(u64, u64), Vec<(u64, u64)>> = BTreeMap::new();
    for q in &quads {
        let a = (q.x, q.p);
        let b = (q.y, q.q);
        if a != b {
            adj.entry(a).or_default().push(b);
        }
    }
    for list in adj.values_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let mut cooccur: BTreeMap<((u64, u64), (u64, u64)), usize> = BTreeMap::new();
    for nbrs in adj.values() {
        for i in 0..nbrs.len() {
            for j in (i + 1)..nbrs.len() {
                let (v, w) = (nbrs[i], nbrs[j]);
                if v.1 != w.1 {
                    *cooccur.entry((v, w)).or_insert(0) += 1;
                }
            }
        }
    }
    // The final cluster may gain the two anchors, so prefilter on n + 2.
    let mut anchors: Vec<(((u64, u64), (u64, u64)), usize)> = cooccur
        .into_iter()
        .filter(|&(_, n)| (n + 2) as f64 >= min_size)
        .collect();
    anchors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    anchors.truncate(POOL_ANCHOR_CAP);
    let empty: Vec<(u64, u64)> = Vec::new();
    for ((v, w), _) in anchors {
        let nv = adj.get(&v).unwrap_or(&empty);
        let nw = adj.get(&w).unwrap_or(&empty);
        let mut common = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < nv.len() && j < nw.len() {
            match nv[i].cmp(&nw[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    common.push(nv[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        // Mutually adjacent anchors join their own cluster: they sit
        // within C/4 of each other and of every common neighbour.
        if nv.binary_search(&w).is_ok() {
            common.push(v);
            common.push(w);
        }
        admit(common, &mut pool, &mut stats)?;
    }

    // Source 2: center seeds z = p·x, β = α_x/p at radius C/4 (diameter
    // ≤ C by the center construction).  Wrapped frequencies (α_x = p·β − k,
    // k ≠ 0) are not re-found from this seed; the common-neighbour source
    // covers those.
    for (i, &x) in cfg.points.iter().enumerate() {
        for &p in &cfg.ambient.primes.primes {
            let z = (p * x) as f64;
            let beta = frac(cfg.freqs[i] / p as f64);
            let seeded = cluster_from_center(cfg, z, beta, quarter)?;
            admit(seeded.members, &mut pool, &mut stats)?;
        }
    }

    pool.sort_by(|a, b| b.len().cmp(&a.len()).then(a.members.cmp(&b.members)));
    Ok((pool, stats))
}

fn family_indices(pool: &[Cluster]) -> Vec<usize> {
    let mut family: Vec<usize> = Vec::new();
    for (i, cand) in pool.iter().enumerate() {
        if family.iter().all(|&j| almost_disjoint(&pool[j], cand)) {
            family.push(i);
        }
    }
    family
}

/// Pairwise almost-disjoint clusters of diameter ≤ C and size ≥ η|𝒫|,
/// selected greedily by size from the candidate pool.
pub fn greedy_maximal_family(
    cfg: &Configuration,
    c: f64,
    eta: f64,
) -> Result<Vec<Cluster>, ClusterError> {
    let (pool, _) = candidate_pool(cfg, c, eta)?;
    Ok(family_indices(&pool).into_iter().map(|i| pool[i].clone()).collect())
}

/// The efficient covering: greedy family F_i expanded by the pairs whose
/// largest pool cluster strongly intersects it (first-intersection
/// assignment).  Every K_i is re-verified at 16C; property (i) — each
/// covered pair lies in a K_i of size ≥ its largest pool cluster — holds
/// relative to the pool by greedy maximality.
pub fn covering(cfg: &Configuration, c: f64, eta: f64) -> Result<CoveringFamily, ClusterError> {
    let (pool, _) = candidate_pool(cfg, c, eta)?;
    let family = family_indices(&pool);
    let mut extra: Vec<BTreeSet<(u64, u64)>> = vec![BTreeSet::new(); family.len()];
    let covered: BTreeSet<(u64, u64)> =
        pool.iter().flat_map(|cl| cl.members.iter().copied()).collect();
    for &pair in &covered {
        // Pool is sorted by size descending: the first container is S_(x,p).
        let s_idx = pool
            .iter()
            .position(|cl| cl.contains(pair))
            .expect("pair came from the pool");
        let target = match family.iter().position(|&j| j == s_idx) {
            Some(fi) => fi,
            None => family
                .iter()
                .position(|&j| !almost_disjoint(&pool[j], &pool[s_idx]))
                .expect("greedy maximality: rejected clusters strongly intersect the family"),
        };
        extra[target].insert(pair);
    }
    let bound = factors::COVERING * c;
    let mut clusters = Vec::with_capacity(family.len());
    let mut total_size = 0usize;
    for (fi, &j) in family.iter().enumerate() {
        let mut members = pool[j].members.clone();
        members.extend(extra[fi].iter().copied());
        let k_i = Cluster::new(members, bound);
        verify_diameter(cfg, &k_i.members, bound)?;
        total_size += k_i.len();
        clusters.push(k_i);
    }
    let n = cfg.len() as f64;
    let size_bound = n * cfg.ambient.primes.len() as f64 + c.powi(9) * eta.powi(-5) * n;
    Ok(CoveringFamily { clusters, c, eta, total_size, size_bound })
}

/// Classifies every pair (x,p) ∈ A×𝒫: regular iff the union of all pool
/// clusters containing it is empty or has diameter ≤ 64C.
pub fn regularity(cfg: &Configuration, c: f64, eta: f64) -> Result<RegularityReport, ClusterError> {
    let (pool, _) = candidate_pool(cfg, c, eta)?;
    let mut unions: BTreeMap<(u64, u64), BTreeSet<(u64, u64)>> = BTreeMap::new();
    for cl in &pool {
        for &pair in &cl.members {
            unions.entry(pair).or_default().extend(cl.members.iter().copied());
        }
    }
    let bound = factors::REGULARITY * c + strength_epsilon(cfg);
    let mut regular = Vec::new();
    let mut irregular = Vec::new();
    for &x in &cfg.points {
        for &p in &cfg.ambient.primes.primes {
            let pair = (x, p);
            let ok = match unions.get(&pair) {
                None => true,
                Some(u) => {
                    let members: Vec<(u64, u64)> = u.iter().copied().collect();
                    diameter(cfg, &members)? <= bound
                }
            };
            if ok {
                regular.push(pair);
            } else {
                irregular.push(pair);
            }
        }
    }
    let irregular_bound = c.powi(9) * eta.powi(-5) * cfg.len() as f64;
    Ok(RegularityReport { regular, irregular, c, eta, irregular_bound })
}

/// The unique (p,q)-partner of x′: the point y′ with |p·x′ − q·y′| ≤ P/10
/// and ‖q·α_{x′} − p·α_{y′}‖ ≤ 1/(10H), if any (unique by 1-separation).
fn partner(cfg: &Configuration, xp: u64, axp: f64, p: u64, q: u64) -> Option<(u64, f64)> {
    let scale = cfg.ambient.scale as f64;
    let center = (p * xp) as f64;
    let slack = RELATION_THRESHOLD * scale;
    let lo = (((center - slack) / q as f64).floor().max(0.0) as u64).saturating_sub(1);
    let hi = ((center + slack) / q as f64).ceil() as u64 + 1;
    let start = cfg.points.partition_point(|&v| v < lo);
    for j in start..cfg.points.len() {
        let y = cfg.points[j];
        if y > hi {
            break;
        }
        if cfg.dist_raw(xp, axp, y, cfg.freqs[j], p, q) <= RELATION_THRESHOLD {
            return Some((y, cfg.freqs[j]));
        }
    }
    None
}

/// Replicates a cluster along a strong relation (x, y, p, q) with
/// (x, p*) ∈ S: every member (x′, r) is translated to its (p,q)-partner
/// y′, the triples are filtered by the 6C-agreement graph (degree counted
/// inclusively, threshold (3/4)|V|), and the projection (y′, r) is
/// returned, verified at diameter 24C.
pub fn replicate_cluster(
    cfg: &Configuration,
    s: &Cluster,
    quad: &Quadruple,
    p_star: u64,
) -> Result<Cluster, ClusterError> {
    if !s.contains((quad.x, p_star)) {
        return Err(ClusterError::AnchorNotInCluster { x: quad.x, p: p_star });
    }
    let d = cfg.rel_strength(quad.x, quad.y, quad.p, quad.q)?;
    if d > RELATION_THRESHOLD + strength_epsilon(cfg) {
        return Err(ClusterError::NotARelation {
            x: quad.x,
            y: quad.y,
            p: quad.p,
            q: quad.q,
            dist: d,
        });
    }
    let c = s.diameter_bound;
    let bound = factors::REPLICATION * c;
    if s.len() < 2 {
        return Ok(Cluster::new(vec![(quad.y, p_star)], bound));
    }
    // V: translated triples (x′, y′, r).
    let mut v: Vec<(u64, u64, u64, f64)> = Vec::new();
    for &(xp, r) in &s.members {
        let axp = freq_of(cfg, xp)?;
        match partner(cfg, xp, axp, quad.p, quad.q) {
            Some((yp, ayp)) => v.push((xp, yp, r, ayp)),
            None => return Err(ClusterError::PartnerMissing { x: xp, r }),
        }
    }
    // Agreement graph: edges when dist(r₁, r₂; y₁, y₂) ≤ 6C.
    let edge_bound = factors::PARALLELOGRAM * c + strength_epsilon(cfg);
    let n = v.len();
    let mut keep = Vec::new();
    for i in 0..n {
        let mut deg = 0usize;
        for item in &v {
            let (_, y1, r1, ay1) = v[i];
            let &(_, y2, r2, ay2) = item;
            if cfg.dist_raw(y1, ay1, y2, ay2, r1, r2) <= edge_bound {
                deg += 1;
            }
        }
        if deg as f64 >= 0.75 * n as f64 {
            keep.push((v[i].1, v[i].2));
        }
    }
    let replicated = Cluster::new(keep, bound);
    verify_diameter(cfg, &replicated.members, bound)?;
    Ok(replicated)
}

fn pattern_counts_impl(
    cfg: &Configuration,
    quad: &Quadruple,
    p_star: u64,
    c: f64,
    cap_par: u64,
    cap_double: u64,
) -> Result<PatternCounts, ClusterError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(ClusterError::BadDiameter(c));
    }
    if !cfg.ambient.primes.contains(p_star) {
        return Err(ClusterError::PairNotInConfig { x: quad.x, p: p_star });
    }
    let d = cfg.rel_strength(quad.x, quad.y, quad.p, quad.q)?;
    if d > RELATION_THRESHOLD + strength_epsilon(cfg) {
        return Err(ClusterError::NotARelation {
            x: quad.x,
            y: quad.y,
            p: quad.p,
            q: quad.q,
            dist: d,
        });
    }
    let ax = freq_of(cfg, quad.x)?;
    let ay = freq_of(cfg, quad.y)?;
    let scale = cfg.ambient.scale as f64;
    let viol_bound = factors::PARALLELOGRAM * c;

    // Triples (x′, y′, s): (x′, s) within C of (x, p*) and y′ the
    // (p,q)-partner of x′.  The position window per prime s keeps the
    // candidate set ≤ 2C+1.
    let mut triples: Vec<(u64, u64, u64, f64)> = Vec::new();
    for &sprime in &cfg.ambient.primes.primes {
        let center = (p_star * quad.x) as f64;
        let slack = c * scale;
        let lo = (((center - slack) / sprime as f64).floor().max(0.0) as u64).saturating_sub(1);
        let hi = ((center + slack) / sprime as f64).ceil() as u64 + 1;
        let start = cfg.points.partition_point(|&v| v < lo);
        for j in start..cfg.points.len() {
            let xp = cfg.points[j];
            if xp > hi {
                break;
            }
            if cfg.dist_raw(quad.x, ax, xp, cfg.freqs[j], p_star, sprime) <= c {
                if let Some((yp, ayp)) = partner(cfg, xp, cfg.freqs[j], quad.p, quad.q) {
                    triples.push((xp, yp, sprime, ayp));
                }
            }
        }
    }

    let mut truncated = false;
    let mut n_par = 0u64;
    for &(_, yp, sprime, ayp) in &triples {
        if cfg.dist_raw(quad.y, ay, yp, ayp, p_star, sprime) > viol_bound {
            n_par += 1;
            if n_par >= cap_par {
                truncated = true;
                break;
            }
        }
    }
    let mut n_double = 0u64;
    'outer: for i in 0..triples.len() {
        for t in triples.iter().skip(i + 1) {
            let (_, y1, s1, ay1) = triples[i];
            let &(_, y2, s2, ay2) = t;
            if cfg.dist_raw(y1, ay1, y2, ay2, s1, s2) > viol_bound {
                n_double += 1;
                if n_double >= cap_double {
                    truncated = true;
                    break 'outer;
                }
            }
        }
    }
    Ok(PatternCounts { n_par, n_double, truncated })
}

/// Exact counts of the two incomplete-pattern shapes attached to a strong
/// relation (x, y, p, q) and a prime p*: N_par counts triples (x′, y′, s)
/// with (x′, s) within C of (x, p*) and y′ the (p,q)-partner of x′ whose
/// downstairs relation fails (dist(p*, s; y, y′) > 6C); N_double counts
/// unordered pairs of such triples that separate downstairs
/// (dist(s₁, s₂; y₁′, y₂′) > 6C).
pub fn pattern_counts(
    cfg: &Configuration,
    quad: &Quadruple,
    p_star: u64,
    c: f64,
) -> Result<PatternCounts, ClusterError> {
    pattern_counts_impl(cfg, quad, p_star, c, u64::MAX, u64::MAX)
}

/// Like [`pattern_counts`] but stops as soon as either count reaches its
/// cap, setting `truncated`.
pub fn pattern_counts_capped(
    cfg: &Configuration,
    quad: &Quadruple,
    p_star: u64,
    c: f64,
    cap_par: u64,
    cap_double: u64,
) -> Result<PatternCounts, ClusterError> {
    pattern_counts_impl(cfg, quad, p_star, c, cap_par.max(1), cap_double.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Ambient, Configuration, Mode};
    use crate::sieve::PrimeRange;

    fn toy_cfg(freqs: Vec<f64>) -> Configuration {
        Configuration::new(
            vec![70, 130],
            freqs,
            1000.0,
            Ambient { y: 70.0, scale: 10, primes: PrimeRange { scale: 10, primes: vec![7, 13] } },
            Mode::Test,
        )
        .unwrap()
    }

    #[test]
    fn diameter_basics() {
        let cfg = toy_cfg(vec![0.26, 0.14]);
        // Singleton and duplicate members are always fine.
        assert!(diameter_ok(&cfg, &[(130, 7)], 0.0).unwrap());
        assert!(diameter_ok(&cfg, &[(130, 7), (130, 7)], 0.0).unwrap());
        // 13·0.14 = 7·0.26 exactly: the planted pair has strength ~0.
        let d = diameter(&cfg, &[(130, 7), (70, 13)]).unwrap();
        assert!(d < 1e-9, "d = {d}");
        assert!(matches!(
            diameter(&cfg, &[(130, 11)]),
            Err(ClusterError::PairNotInConfig { x: 130, p: 11 })
        ));
    }

    #[test]
    fn diameter_threshold_boundary() {
        // Perturb α_y by δ = 2C/(13·H): the pair sits at strength exactly 2C.
        let c = 0.05;
        let delta = 2.0 * c / (13.0 * 1000.0);
        let cfg = toy_cfg(vec![0.26 + delta, 0.14]);
        let members = [(130, 7), (70, 13)];
        assert!(!diameter_ok(&cfg, &members, c).unwrap());
        assert!(diameter_ok(&cfg, &members, 2.0 * c + 1e-9).unwrap());
    }

    /// A planted constellation: z = m·Πpᵢ, points z/pᵢ with α = frac(pᵢ·β)
    /// exactly, so all pairwise strengths vanish.
    fn constellation(beta: f64, extra: &[(u64, f64)]) -> (Configuration, Vec<(u64, u64)>, f64) {
        let primes: Vec<u64> = vec![101, 103, 107, 109, 113];
        let m = 7u64;
        let z: u64 = m * primes.iter().product::<u64>();
        let mut pts: Vec<(u64, f64)> = primes
            .iter()
            .map(|&p| (z / p, frac(p as f64 * beta)))
            .collect();
        pts.extend_from_slice(extra);
        pts.sort_unstable_by_key(|e| e.0);
        let points: Vec<u64> = pts.iter().map(|e| e.0).collect();
        let freqs: Vec<f64> = pts.iter().map(|e| e.1).collect();
        let y = points[0] as f64;
        let cfg = Configuration::new(
            points,
            freqs,
            5.0e5,
            Ambient {
                y,
                scale: 100,
                primes: PrimeRange { scale: 100, primes: crate::sieve::primes_in(100).unwrap().primes },
            },
            Mode::Test,
        )
        .unwrap();
        let members: Vec<(u64, u64)> = primes.iter().map(|&p| (z / p, p)).collect();
        (cfg, members, z as f64)
    }

    #[test]
    fn center_construction_recovers_slice() {
        let beta = 0.437_108_23;
        let (cfg, members, z) = constellation(beta, &[(1_212_121_212, 0.5)]);
        let cluster = cluster_from_center(&cfg, z, beta, 0.01).unwrap();
        let want = Cluster::new(members, 0.0);
        assert_eq!(cluster.members, want.members);
        assert_eq!(cluster.diameter_bound, 0.04);
        // A β with no matches yields an empty cluster.
        let none = cluster_from_center(&cfg, z, frac(beta + 0.31), 0.01).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn almost_disjoint_cases() {
        let a = Cluster::new(vec![(10, 7), (20, 13)], 1.0);
        let b = Cluster::new(vec![(30, 7), (40, 13)], 1.0);
        assert!(almost_disjoint(&a, &b));
        let c = Cluster::new(vec![(10, 7), (30, 7)], 1.0);
        assert!(almost_disjoint(&a, &c));
        let d = Cluster::new(vec![(10, 7), (20, 13), (99, 101)], 1.0);
        assert!(!almost_disjoint(&a, &d));
    }

    #[test]
    fn merge_chain_cases() {
        let beta = 0.291_817_21;
        let (cfg, members, _) = constellation(beta, &[]);
        let c = 0.001;
        let s1 = Cluster::new(members[0..4].to_vec(), c);
        let s2 = Cluster::new(members[2..5].to_vec(), c);
        // k=1: identity up to the recorded bound.
        let single = merge_chain(&cfg, std::slice::from_ref(&s1), c).unwrap();
        assert_eq!(single.members, s1.members);
        // k=2 with a strong intersection (two shared pairs, distinct primes).
        let merged = merge_chain(&cfg, &[s1.clone(), s2.clone()], c).unwrap();
        assert_eq!(merged.len(), 5);
        assert_eq!(merged.diameter_bound, 4.0 * c);
        // An almost-disjoint link is rejected.
        let far = Cluster::new(members[4..5].to_vec(), c);
        assert!(matches!(
            merge_chain(&cfg, &[s1, far], c),
            Err(ClusterError::AlmostDisjointLink { idx: 1 })
        ));
    }

    #[test]
    fn lift_hand_example() {
        // S = {(130, 7), (70, 13)}, α_x = 0.14, α_y = 0.26:
        // 13·0.14 = 7·0.26 = 1.82 so k = 0 and β = 0.14/7 = 0.02.
        let cfg = toy_cfg(vec![0.26, 0.14]);
        let s = Cluster::new(vec![(130, 7), (70, 13)], 0.01);
        let lift = lift_frequency(&cfg, &s, (130, 7)).unwrap();
        assert!((lift.beta - 0.02).abs() < 1e-12);
        assert_eq!(lift.witness, (70, 13));
        assert!(norm1(7.0 * lift.beta - 0.14) <= crate::config::LIFT_TOLERANCE);
        assert!(norm1(13.0 * lift.beta - 0.26) <= 0.01 / (1000.0 * 7.0) + 1e-12);
    }

    #[test]
    fn lift_rejects_single_prime() {
        let cfg = toy_cfg(vec![0.26, 0.14]);
        let s = Cluster::new(vec![(130, 7), (70, 7)], 0.01);
        assert!(matches!(
            lift_frequency(&cfg, &s, (130, 7)),
            Err(ClusterError::SinglePrime { p: 7 })
        ));
    }

    #[test]
    fn lift_handles_wrapped_frequencies() {
        // β large enough that p·β wraps several times: the extended-gcd
        // branch recovers β exactly for every member.
        for &beta in &[0.437_108_23, 0.891_273_51, 0.993_213_77] {
            let (cfg, members, _) = constellation(beta, &[]);
            let s = Cluster::new(members.clone(), 0.01);
            for &anchor in &members {
                let lift = lift_frequency(&cfg, &s, anchor).unwrap();
                assert!(lift.max_member_error < 1e-11, "beta {beta} anchor {anchor:?}");
                // β ≡ β₀ (mod 1/p): lifting the anchor reproduces α exactly.
                assert!(norm1(anchor.1 as f64 * lift.beta - cfg.freq(anchor.0).unwrap()) < 1e-11);
            }
        }
    }

    /// Two constellations sharing the pair (x, p₀) through different lift
    /// branches β and β + 1/p₀ — the shared pair is irregular, the rest
    /// regular.  All eight member primes divide the common center z₀, so
    /// every position term vanishes exactly.
    fn two_branch_instance() -> (Configuration, (u64, u64), Vec<(u64, u64)>) {
        let primes_all = crate::sieve::primes_in(50).unwrap().primes;
        let p0 = 53u64;
        let s1_primes = [59u64, 61, 67, 71];
        let s2_primes = [73u64, 79, 83];
        let z0: u64 =
            p0 * s1_primes.iter().product::<u64>() * s2_primes.iter().product::<u64>();
        let beta1 = 0.322_187_119_2;
        let beta2 = frac(beta1 + 1.0 / p0 as f64);
        let x = z0 / p0;
        let mut pts: Vec<(u64, f64)> = vec![(x, frac(p0 as f64 * beta1))];
        for &p in &s1_primes {
            pts.push((z0 / p, frac(p as f64 * beta1)));
        }
        // Second constellation around the same center but on the β₂ branch:
        // α_x = frac(p₀β₁) = frac(p₀β₂), so (x, p₀) joins both exactly,
        // while cross-branch strengths are ≥ H·‖pᵢpⱼ/p₀‖, huge.
        for &p in &s2_primes {
            pts.push((z0 / p, frac(p as f64 * beta2)));
        }
        pts.sort_unstable_by_key(|e| e.0);
        pts.dedup_by_key(|e| e.0);
        let y = pts[0].0 as f64;
        let cfg = Configuration::new(
            pts.iter().map(|e| e.0).collect(),
            pts.iter().map(|e| e.1).collect(),
            5.0e5,
            Ambient { y, scale: 50, primes: PrimeRange { scale: 50, primes: primes_all } },
            Mode::Test,
        )
        .unwrap();
        let s1_members: Vec<(u64, u64)> =
            s1_primes.iter().map(|&p| (z0 / p, p)).chain([(x, p0)]).collect();
        (cfg, (x, p0), s1_members)
    }

    #[test]
    fn pool_family_covering_and_regularity() {
        let (cfg, shared, _) = two_branch_instance();
        let c = 0.002;
        let eta = 0.25; // η·|𝒫| = 0.25·10 = 2.5: both branch clusters qualify
        let (pool, stats) = candidate_pool(&cfg, c, eta).unwrap();
        assert_eq!(stats.dropped_diameter, 0);
        assert!(!pool.is_empty());
        // Both branch clusters appear and both contain the shared pair.
        let containing: Vec<&Cluster> =
            pool.iter().filter(|cl| cl.contains(shared)).collect();
        assert!(containing.len() >= 2, "pool misses a branch: {}", containing.len());

        let family = greedy_maximal_family(&cfg, c, eta).unwrap();
        assert!(!family.is_empty());
        for i in 0..family.len() {
            for j in (i + 1)..family.len() {
                assert!(almost_disjoint(&family[i], &family[j]));
            }
        }

        let cov = covering(&cfg, c, eta).unwrap();
        assert_eq!(cov.clusters.len(), family.len());
        // Property (i) relative to the pool.
        for cl in &pool {
            for &pair in &cl.members {
                let k = cov
                    .clusters
                    .iter()
                    .find(|k| k.contains(pair))
                    .unwrap_or_else(|| panic!("pair {pair:?} uncovered"));
                assert!(k.len() >= cl.len());
            }
        }
        assert!(cov.total_size >= cov.clusters.iter().map(Cluster::len).sum::<usize>());

        let reg = regularity(&cfg, c, eta).unwrap();
        assert!(reg.irregular.contains(&shared), "shared pair should be irregular");
        for pair in &reg.irregular {
            assert_eq!(*pair, shared, "only the shared pair is irregular");
        }
    }

    /// A parallelogram-planted instance: constellation around z (q-side)
    /// plus its exact (p,q)-translate, with frequencies making every
    /// relation exact.
    fn replication_instance() -> (Configuration, Cluster, Quadruple, u64) {
        let r_primes = [101u64, 103, 107, 109, 113];
        let p = 127u64;
        let q = 131u64;
        let m = 2u64;
        let beta = 0.218_731_997;
        let z: u64 = m * q * r_primes.iter().product::<u64>();
        let mut pts: Vec<(u64, f64)> = Vec::new();
        let mut s_members = Vec::new();
        for &r in &r_primes {
            let xr = z / r;
            // q | xr, so the (p,q)-partner y_r = p·xr/q is an integer.
            let yr = (p as u128 * xr as u128 / q as u128) as u64;
            debug_assert_eq!(p as u128 * xr as u128 % q as u128, 0);
            pts.push((xr, frac(r as f64 * beta)));
            // Global law frac(q·r·β/p): keeps q·α_x − p·α_y integral AND
            // all cross-member strengths in the translate exactly zero.
            pts.push((yr, frac(q as f64 * r as f64 * beta / p as f64)));
            s_members.push((xr, r));
        }
        pts.sort_unstable_by_key(|e| e.0);
        pts.dedup_by_key(|e| e.0);
        let y0 = pts[0].0 as f64;
        let cfg = Configuration::new(
            pts.iter().map(|e| e.0).collect(),
            pts.iter().map(|e| e.1).collect(),
            5.0e5,
            Ambient {
                y: y0,
                scale: 100,
                primes: PrimeRange { scale: 100, primes: crate::sieve::primes_in(100).unwrap().primes },
            },
            Mode::Test,
        )
        .unwrap();
        let p_star = r_primes[0];
        let x = z / p_star;
        let y = (p as u128 * x as u128 / q as u128) as u64;
        let d = cfg.rel_strength(x, y, p, q).unwrap();
        let quad = Quadruple { x, y, p, q, strength_value: d };
        (cfg, Cluster::new(s_members, 0.01), quad, p_star)
    }

    #[test]
    fn replication_translates_planted_cluster() {
        let (cfg, s, quad, p_star) = replication_instance();
        assert!(quad.strength_value <= RELATION_THRESHOLD);
        let s_prime = replicate_cluster(&cfg, &s, &quad, p_star).unwrap();
        assert_eq!(s_prime.len(), s.len());
        assert_eq!(s_prime.diameter_bound, factors::REPLICATION * s.diameter_bound);
        // Projected primes coincide with the original's.
        assert_eq!(s_prime.primes(), s.primes());
        // Degenerate input: single member yields {(y, p*)}.
        let tiny = Cluster::new(vec![(quad.x, p_star)], 0.01);
        let deg = replicate_cluster(&cfg, &tiny, &quad, p_star).unwrap();
        assert_eq!(deg.members, vec![(quad.y, p_star)]);
    }

    #[test]
    fn pattern_counts_planted_violation() {
        let (cfg, s, quad, p_star) = replication_instance();
        let c = 0.008;
        // Clean instance: every triple completes its parallelogram.
        let clean = pattern_counts(&cfg, &quad, p_star, c).unwrap();
        assert_eq!(clean, PatternCounts { n_par: 0, n_double: 0, truncated: false });

        // Corrupt one partner frequency by ε = 1/(15·H·p): the (p,q)-partner
        // relation survives (p·ε·H = 1/15 ≤ 1/10) but the downstairs
        // relation fails (p*·ε·H ≈ 1/15 > 6C = 0.048).
        let eps = 1.0 / (15.0 * cfg.strength * quad.p as f64);
        let mut cfg2 = cfg.clone();
        let victim = s.members[2]; // (x′, r) with r ≠ p*
        let (vx, _) = victim;
        let vaxp = cfg2.freq(vx).unwrap();
        let (vy, _) = super::partner(&cfg2, vx, vaxp, quad.p, quad.q).unwrap();
        let idx = cfg2.index_of(vy).unwrap();
        cfg2.freqs[idx] = frac(cfg2.freqs[idx] + eps);
        let counts = pattern_counts(&cfg2, &quad, p_star, c).unwrap();
        assert_eq!(counts.n_par, 1, "exactly the corrupted triple violates");
        assert_eq!(counts.n_double, (s.len() - 1) as u64);
        // The capped variant stops early and flags truncation.
        let capped = pattern_counts_capped(&cfg2, &quad, p_star, c, 1, 2).unwrap();
        assert!(capped.truncated);
        assert_eq!(capped.n_par, 1);
        assert_eq!(capped.n_double, 2);
    }

    #[test]
    fn size_bound_invariant() {
        // Any cluster from our constructions obeys |S| ≤ (2C+1)|𝒫| with at
        // most 2C+1 members per prime.
        let beta = 0.437_108_23;
        let (cfg, _, z) = constellation(beta, &[]);
        for &c in &[0.01, 0.5, 2.0] {
            let cl = cluster_from_center(&cfg, z, beta, c).unwrap();
            let cap = (2.0 * c).ceil() as usize + 1;
            assert!(cl.len() <= cap * cfg.ambient.primes.len());
            let mut per_prime: BTreeMap<u64, usize> = BTreeMap::new();
            for &(_, p) in &cl.members {
                *per_prime.entry(p).or_insert(0) += 1;
            }
            for (&p, &n) in &per_prime {
                assert!(n <= cap, "prime {p} has {n} members at C = {c}");
            }
        }
    }
}
