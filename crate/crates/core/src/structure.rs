//! Decomposition machinery: window slices and seed clusters, the layered
//! local decomposition with its frequency lift, the lift-or-split dichotomy
//! iterated into towers, decay-profile checks, and the extraction of
//! modular and smooth frequency structure from closed-path certificates.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cluster::{self, Cluster, ClusterError};
use crate::config::{
    verify_lift, ConfigError, Configuration, Lift, Quadruple, Tower, RELATION_THRESHOLD,
};
use crate::dirichlet::rational_approx;
use crate::graph::{
    ball_growth, build_graph, find_unbalanced_closed_path, prune_min_degree, verify_path_bounds,
    GraphError, RelationGraph,
};
use crate::numutil::{frac, mix64, norm1};
use crate::sieve::PrimeRange;

/// Default layer count L for the lift-or-split dichotomy.
const DEFAULT_LAYERS: usize = 4;
/// Default exceptional-fraction budget ε selecting the lift branch.
const DEFAULT_EPSILON: f64 = 0.1;
/// A lift retaining at least this density fraction counts as lossless.
const LOSSLESS_RATIO: f64 = 0.99;
/// Denominator cap for the closed-path rational snap.
const MODULUS_SNAP_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("density must lie in (0, 1]: got {0}")]
    BadDensity(f64),
    #[error("layer count must be at least 1")]
    BadLayers,
    #[error("violation budget must lie in (0, 1]: got {0}")]
    BadEpsilon(f64),
    #[error("tower height budget must be at least 1")]
    BadHeight,
    #[error("modulus must be positive")]
    BadModulus,
    #[error("local structure failed: {0}")]
    StructuralFailure(String),
    #[error("point {0} has no residue")]
    MissingResidue(u64),
    #[error("residue {a} of point {x} is not a unit mod {q0}")]
    ResidueNotUnit { x: u64, a: u64, q0: u64 },
    #[error("expansion slack {eps} outside [1/Y, 1] for Y = {y}")]
    BadSlack { eps: f64, y: f64 },
    #[error("decomposition covers no points")]
    EmptyCover,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Tunable desk-scale constants of the decomposition pipeline.  The
/// asymptotic thresholds they stand in for (|𝒫|^{19/20}-style counts, the
/// scale set {500^ℓ}) degenerate at experiment size, so every knob is an
/// absolute cap with the intended scaling noted.
#[derive(Debug, Clone)]
pub struct StructureParams {
    /// Gate constant c in the slice acceptance test |Q_z| ≥ c·δ²·|𝒫|².
    pub seed_gate: f64,
    /// Window centers sampled per seeding pass.
    pub seed_samples: usize,
    /// Base of the regularity scale set {base^ℓ}; 500 matches the proof,
    /// smaller bases are desk-scale deviations.
    pub reg_scale_base: f64,
    /// Number of scales base⁰, …, base^{count−1} the regularity filter
    /// intersects; 0 disables the filter.
    pub reg_scale_count: usize,
    /// Density parameter η of the regularity filter.
    pub reg_eta: f64,
    /// Cap on the incomplete-pattern counts a seed cluster may carry.
    pub pattern_cap: u64,
    /// Lifted-strength threshold for counting cross violations.
    pub cross_bound: f64,
    /// Retry budget for the sampled lifting prime p*.
    pub retries: usize,
    /// Minimum degree kept when pruning before the closed-path search.
    pub prune_threshold: usize,
}

impl Default for StructureParams {
    fn default() -> Self {
        StructureParams {
            seed_gate: 1.0 / 16.0,
            seed_samples: 128,
            reg_scale_base: 500.0,
            reg_scale_count: 1,
            reg_eta: 0.25,
            pattern_cap: 1024,
            cross_bound: RELATION_THRESHOLD,
            retries: 8,
            prune_threshold: 1,
        }
    }
}

/// The window slice V_z: pairs (x, p) with |p·x − z| ≤ P/4, together with
/// the related ordered pairs Q_z among them.  1-separation admits at most
/// one point per prime in the window, so |members| ≤ |𝒫|.
#[derive(Debug, Clone)]
pub struct WindowSlice {
    pub z: f64,
    pub members: Vec<(u64, u64)>,
    pub relation_pairs: Vec<((u64, u64), (u64, u64))>,
}

/// Builds the slice at center z, each member labelled by its own prime.
pub fn window_slice(cfg: &Configuration, z: f64) -> WindowSlice {
    let slack = cfg.ambient.scale as f64 / 4.0;
    let mut members = Vec::new();
    for &p in &cfg.ambient.primes.primes {
        let lo = (((z - slack) / p as f64).floor().max(0.0) as u64).saturating_sub(1);
        let hi = ((z + slack) / p as f64).ceil() as u64 + 1;
        let start = cfg.points.partition_point(|&v| v < lo);
        for &x in &cfg.points[start..] {
            if x > hi {
                break;
            }
            if ((p * x) as f64 - z).abs() <= slack {
                members.push((x, p));
            }
        }
    }
    members.sort_unstable();
    debug_assert!(members.len() <= cfg.ambient.primes.len());
    let mut relation_pairs = Vec::new();
    for (i, &(x, p)) in members.iter().enumerate() {
        for (j, &(y, q)) in members.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = cfg.rel_strength(x, y, p, q).expect("members are in the configuration");
            if d <= RELATION_THRESHOLD {
                relation_pairs.push(((x, p), (y, q)));
            }
        }
    }
    WindowSlice { z, members, relation_pairs }
}

/// The common-neighbour cluster of the slice's best anchor pair with
/// distinct primes: all members related to both anchors (the anchors join
/// when mutually related).  Triangle composition through the two witnesses
/// bounds its diameter by 4·(1/10) < 1/2.
fn best_pair_cluster(slice: &WindowSlice) -> Option<Vec<(u64, u64)>> {
    let ms = &slice.members;
    let rel: BTreeSet<((u64, u64), (u64, u64))> = slice.relation_pairs.iter().copied().collect();
    let related = |a: (u64, u64), b: (u64, u64)| a == b || rel.contains(&(a, b));
    let mut best: Option<Vec<(u64, u64)>> = None;
    for i in 0..ms.len() {
        for j in (i + 1)..ms.len() {
            if ms[i].1 == ms[j].1 {
                continue;
            }
            let common: Vec<(u64, u64)> = ms
                .iter()
                .copied()
                .filter(|&c| related(c, ms[i]) && related(c, ms[j]))
                .collect();
            if common.len() >= 2 && best.as_ref().map_or(true, |b| common.len() > b.len()) {
                best = Some(common);
            }
        }
    }
    best
}

/// Samples window centers and extracts pairwise-disjoint seed clusters of
/// verified diameter ≤ 1/2 from every slice passing the density gate
/// |Q_z| ≥ c·δ²·|𝒫|².
///
/// A uniform z ∈ [PY, 4PY] almost surely misses every point at desk scale
/// (the carrier has measure ≈ |A|·|𝒫|·P/2 out of 3PY), so z is drawn from
/// the carrier instead: a uniform pair (x, p) jittered by U(−P/8, P/8)
/// around p·x — the same random variable conditioned on V_z ≠ ∅.
pub fn seed_clusters(
    cfg: &Configuration,
    delta: f64,
    seed: u64,
) -> Result<Vec<Cluster>, StructureError> {
    seed_clusters_with(cfg, delta, seed, &StructureParams::default())
}

pub fn seed_clusters_with(
    cfg: &Configuration,
    delta: f64,
    seed: u64,
    params: &StructureParams,
) -> Result<Vec<Cluster>, StructureError> {
    if !(delta.is_finite() && delta > 0.0 && delta <= 1.0) {
        return Err(StructureError::BadDensity(delta));
    }
    let scale = cfg.ambient.scale as f64;
    let m = cfg.ambient.primes.len();
    let gate = params.seed_gate * delta * delta * (m * m) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    let mut slices: Vec<WindowSlice> = Vec::new();
    for _ in 0..params.seed_samples {
        let x = cfg.points[rng.gen_range(0..cfg.len())];
        let p = cfg.ambient.primes.primes[rng.gen_range(0..m)];
        let z = (p * x) as f64 + (rng.gen::<f64>() - 0.5) * scale / 4.0;
        let slice = window_slice(cfg, z);
        if (slice.relation_pairs.len() as f64) >= gate {
            slices.push(slice);
        }
    }
    // Strongest slices claim their members first.
    slices.sort_by(|a, b| {
        b.relation_pairs.len().cmp(&a.relation_pairs.len()).then(a.z.total_cmp(&b.z))
    });
    let eps = cluster::strength_epsilon(cfg);
    let mut used: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut out = Vec::new();
    for slice in &slices {
        let Some(members) = best_pair_cluster(slice) else { continue };
        if members.iter().any(|pr| used.contains(pr)) {
            continue;
        }
        // Triangle composition promises ≤ 0.4; re-verify at the 1/2 budget.
        if cluster::diameter(cfg, &members)? > 0.5 + eps {
            debug_assert!(false, "common-neighbour cluster beyond the triangle bound");
            continue;
        }
        used.extend(members.iter().copied());
        out.push(Cluster::new(members, 0.5));
    }
    Ok(out)
}

/// The layered decomposition A = A₀ ∪ … ∪ A_L ∪ A_{L+1} with its frequency
/// lift by p* over the covered part ⋃ A_ℓ.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Layers A₀ … A_ℓ (fewer than L+1 when growth stops early).
    pub parts: Vec<Vec<u64>>,
    /// The exceptional part A_{L+1}.
    pub exceptional: Vec<u64>,
    /// Frequency lift over the covered points; passes `verify_lift`.
    pub lift: Lift,
    pub p_star: u64,
    /// Relations leaving a layer for a part two or more indices away.
    pub violations_adjacency: u64,
    /// Covered relations whose lifted strength exceeds the cross bound.
    pub violations_cross: u64,
    /// True when adjacency violations stay within ε·|A|·|𝒫|².
    pub within_budget: bool,
    /// (p*, adjacency, cross) for every sampled attempt, best kept.
    pub attempts: Vec<(u64, u64, u64)>,
}

impl Decomposition {
    pub fn violation_count(&self) -> u64 {
        self.violations_adjacency + self.violations_cross
    }

    /// The covered points ⋃ A_ℓ, sorted.
    pub fn covered(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.parts.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }
}

/// The strongest internal relation of a cluster with distinct labels.
fn anchor_quad(cfg: &Configuration, s: &Cluster) -> Option<Quadruple> {
    let mut best: Option<Quadruple> = None;
    for (i, &(x, p)) in s.members.iter().enumerate() {
        for &(y, q) in s.members.iter().skip(i + 1) {
            if p == q {
                continue;
            }
            let d = cfg.rel_strength(x, y, p, q).ok()?;
            if d <= RELATION_THRESHOLD
                && best.as_ref().map_or(true, |b| d < b.strength_value)
            {
                best = Some(Quadruple { x, y, p, q, strength_value: d });
            }
        }
    }
    best
}

struct Attempt {
    parts: Vec<Vec<u64>>,
    exceptional: Vec<u64>,
    lift: Lift,
    p_star: u64,
    va: u64,
    vb: u64,
}

/// One decomposition attempt for a fixed lifting prime p*.
fn decompose_attempt(
    cfg: &Configuration,
    l: usize,
    p_star: u64,
    seeds: &[Cluster],
    reg: Option<&BTreeSet<(u64, u64)>>,
    quads: &[Quadruple],
    adj: &BTreeMap<u64, BTreeSet<u64>>,
    params: &StructureParams,
) -> Result<Option<Attempt>, StructureError> {
    let is_regular = |pair: (u64, u64)| reg.map_or(true, |s| s.contains(&pair));
    // Accepted seeds: carry p* and stay below the pattern caps.
    let mut accepted: Vec<&Cluster> = Vec::new();
    for s in seeds {
        if !s.primes().contains(&p_star) {
            continue;
        }
        let Some(quad) = anchor_quad(cfg, s) else { continue };
        let pc = cluster::pattern_counts_capped(
            cfg,
            &quad,
            p_star,
            s.diameter_bound,
            params.pattern_cap,
            params.pattern_cap,
        )?;
        if pc.truncated {
            continue;
        }
        accepted.push(s);
    }
    // A₀: regular points carried by the accepted seeds.
    let mut a0: BTreeSet<u64> = BTreeSet::new();
    for s in &accepted {
        for &(x, _) in &s.members {
            if is_regular((x, p_star)) {
                a0.insert(x);
            }
        }
    }
    if a0.is_empty() {
        return Ok(None);
    }
    // A_ℓ: fresh regular points related to the previous layer.
    let mut layer_of: BTreeMap<u64, usize> = a0.iter().map(|&x| (x, 0)).collect();
    let mut parts: Vec<Vec<u64>> = vec![a0.into_iter().collect()];
    for li in 1..=l {
        let mut next: BTreeSet<u64> = BTreeSet::new();
        for x in parts[li - 1].iter() {
            let Some(nb) = adj.get(x) else { continue };
            for &y in nb {
                if !layer_of.contains_key(&y) && is_regular((y, p_star)) {
                    next.insert(y);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        for &y in &next {
            layer_of.insert(y, li);
        }
        parts.push(next.into_iter().collect());
    }
    let covered: Vec<u64> =
        cfg.points.iter().copied().filter(|x| layer_of.contains_key(x)).collect();
    let exceptional: Vec<u64> =
        cfg.points.iter().copied().filter(|x| !layer_of.contains_key(x)).collect();

    // β_x = (α_x + m_x)/p*: the congruence p*·β ≡ α (mod 1) is exact for
    // any integer branch m_x; carried points take the coherent branch from
    // their cluster's lifted frequency, the rest take m = 0.
    let ps = p_star as f64;
    let cluster_beta: Vec<Option<f64>> = accepted
        .iter()
        .map(|s| cluster::lift_frequency(cfg, s, s.members[0]).ok().map(|c| c.beta))
        .collect();
    let mut betas = Vec::with_capacity(covered.len());
    for &x in &covered {
        let ax = cfg.freq(x).expect("covered point");
        let mut m = 0.0f64;
        'found: for (ci, s) in accepted.iter().enumerate() {
            let Some(bc) = cluster_beta[ci] else { continue };
            for &(xx, r) in &s.members {
                if xx == x {
                    let g = frac(r as f64 * bc / ps);
                    m = (ps * g - ax).round().rem_euclid(ps);
                    break 'found;
                }
            }
        }
        betas.push(frac((ax + m) / ps));
    }
    let lifted = Configuration::new(
        covered,
        betas,
        cfg.strength * ps,
        cfg.ambient.clone(),
        cfg.mode,
    )?;
    let lift = Lift { base: cfg.clone(), lifted, lifting_prime: p_star };
    verify_lift(&lift)?;

    // Violations are counted, never dropped.
    let n_parts = parts.len();
    let cross_eps = cluster::strength_epsilon(&lift.lifted);
    let mut va = 0u64;
    let mut vb = 0u64;
    for quad in quads {
        if quad.x == quad.y {
            continue;
        }
        let ix = layer_of.get(&quad.x).copied();
        let iy = layer_of.get(&quad.y).copied();
        if let Some(ix) = ix {
            // The exceptional part acts as the layer after the last.
            if ix.abs_diff(iy.unwrap_or(n_parts)) >= 2 {
                va += 1;
            }
        }
        if ix.is_some() && iy.is_some() {
            let d = lift.lifted.rel_strength(quad.x, quad.y, quad.p, quad.q)?;
            if d > params.cross_bound + cross_eps {
                vb += 1;
            }
        }
    }
    Ok(Some(Attempt { parts, exceptional, lift, p_star, va, vb }))
}

/// Runs the decomposition proof skeleton: seed clusters at the measured
/// density, the prime pool 𝒫* and a sampled p*, the regular core A₀, layer
/// growth A₁ … A_L, the exceptional remainder, and the frequency lift over
/// the covered part.  Each retry logs its violation counts; the attempt
/// with the fewest violations is returned.
pub fn local_structure(
    cfg: &Configuration,
    l: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Decomposition, StructureError> {
    local_structure_with(cfg, l, epsilon, seed, &StructureParams::default())
}

pub fn local_structure_with(
    cfg: &Configuration,
    l: usize,
    epsilon: f64,
    seed: u64,
    params: &StructureParams,
) -> Result<Decomposition, StructureError> {
    if l == 0 {
        return Err(StructureError::BadLayers);
    }
    if !(epsilon.is_finite() && epsilon > 0.0 && epsilon <= 1.0) {
        return Err(StructureError::BadEpsilon(epsilon));
    }
    let delta = cfg.density();
    let seeds = seed_clusters_with(cfg, delta, seed, params)?;
    if seeds.is_empty() {
        return Err(StructureError::StructuralFailure(
            "no seed clusters at the measured density".into(),
        ));
    }
    // 𝒫*: primes carried by at least half as many seeds as the best prime.
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for s in &seeds {
        for p in s.primes() {
            *counts.entry(p).or_default() += 1;
        }
    }
    let max_count = counts.values().copied().max().unwrap_or(0);
    let mut pool: Vec<u64> =
        counts.iter().filter(|&(_, &c)| 2 * c >= max_count).map(|(&p, _)| p).collect();

    // Pair-level regularity intersected over the scale set (p*-free).
    let mut reg: Option<BTreeSet<(u64, u64)>> = None;
    for li in 0..params.reg_scale_count {
        let c = params.reg_scale_base.powi(li as i32);
        let set: BTreeSet<(u64, u64)> =
            cluster::regularity(cfg, c, params.reg_eta)?.regular.into_iter().collect();
        reg = Some(match reg {
            None => set,
            Some(acc) => acc.intersection(&set).copied().collect(),
        });
    }

    let quads = cfg.relations(RELATION_THRESHOLD)?;
    let mut adj: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for q in &quads {
        if q.x != q.y {
            adj.entry(q.x).or_default().insert(q.y);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x517e));
    pool.shuffle(&mut rng);
    let tries = pool.len().min(params.retries.max(1));
    let mut attempts = Vec::new();
    let mut best: Option<Attempt> = None;
    for &p_star in &pool[..tries] {
        let Some(att) =
            decompose_attempt(cfg, l, p_star, &seeds, reg.as_ref(), &quads, &adj, params)?
        else {
            continue;
        };
        attempts.push((att.p_star, att.va, att.vb));
        if best.as_ref().map_or(true, |b| att.va + att.vb < b.va + b.vb) {
            best = Some(att);
        }
    }
    let Some(att) = best else {
        return Err(StructureError::StructuralFailure(
            "no sampled p* carries a regular core".into(),
        ));
    };
    let budget = epsilon * cfg.len() as f64 * (cfg.ambient.primes.len() as f64).powi(2);
    Ok(Decomposition {
        parts: att.parts,
        exceptional: att.exceptional,
        lift: att.lift,
        p_star: att.p_star,
        violations_adjacency: att.va,
        violations_cross: att.vb,
        within_budget: (att.va as f64) <= budget,
        attempts,
    })
}

/// Outcome of the lift-or-split dichotomy.
#[derive(Debug, Clone)]
pub enum LiftOrSplit {
    /// The exceptional part was small: the decomposition's lift, with the
    /// density fraction the lifted configuration retains.
    Lift { lift: Lift, retained_density: f64 },
    /// The exceptional part was large: the denser side of the cut, with
    /// the exact relation count of Q(𝒜|_B).
    Split { subset: Vec<u64>, relations_kept: usize },
}

/// Decides between lifting (exceptional part ≤ ε|A|) and splitting at the
/// thinnest layer (degenerate cuts fall back to covered vs. exceptional),
/// returning the denser side with its exact restricted relation count.
pub fn lift_or_split(cfg: &Configuration, seed: u64) -> Result<LiftOrSplit, StructureError> {
    lift_or_split_with(cfg, seed, DEFAULT_LAYERS, DEFAULT_EPSILON, &StructureParams::default())
}

pub fn lift_or_split_with(
    cfg: &Configuration,
    seed: u64,
    l: usize,
    epsilon: f64,
    params: &StructureParams,
) -> Result<LiftOrSplit, StructureError> {
    let d = local_structure_with(cfg, l, epsilon, seed, params)?;
    if (d.exceptional.len() as f64) <= epsilon * cfg.len() as f64 {
        let retained = d.lift.lifted.density() / cfg.density();
        return Ok(LiftOrSplit::Lift { lift: d.lift, retained_density: retained });
    }
    let covered = d.covered();
    let mut b1: Vec<u64> = Vec::new();
    let mut b2: Vec<u64> = Vec::new();
    if d.parts.len() >= 3 {
        let cut = (0..d.parts.len()).min_by_key(|&i| (d.parts[i].len(), i)).expect("parts");
        b1 = d.parts[..cut].iter().flatten().copied().collect();
        b2 = d.parts[cut + 1..].iter().flatten().copied().collect();
        b2.extend(d.exceptional.iter().copied());
    }
    if b1.is_empty() || b2.is_empty() {
        b1 = covered;
        b2 = d.exceptional.clone();
    }
    b1.sort_unstable();
    b2.sort_unstable();
    let r1 = cfg.restrict(&b1)?;
    let r2 = cfg.restrict(&b2)?;
    let (subset, chosen) = if r1.density() >= r2.density() { (b1, r1) } else { (b2, r2) };
    let kept = chosen.relations(RELATION_THRESHOLD)?.len();
    Ok(LiftOrSplit::Split { subset, relations_kept: kept })
}

/// Kind of one tower step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Lifting,
    Lossless,
    Halving,
}

/// Why tower iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxHeight,
    DensityFloor,
    Exhausted,
}

/// A recorded tower run: the lift levels, the configuration chain with its
/// densities δ_i, one step kind per transition, and the stop reason.
///
/// `tower.verify()`'s chain-equality test is meaningful on pure-lift
/// traces; a halving step re-bases the next lift, which is still verified
/// individually when it is built.
#[derive(Debug, Clone)]
pub struct TowerTrace {
    pub tower: Tower,
    pub configs: Vec<Configuration>,
    pub densities: Vec<f64>,
    pub step_kinds: Vec<StepKind>,
    pub stop: StopReason,
}

/// Iterates lift-or-split: lifting multiplies the strength by p*, halving
/// restricts to the denser side, and iteration stops at `max_height`
/// lifts, at a relation-free configuration, or when points are exhausted.
pub fn build_tower(
    cfg: &Configuration,
    max_height: usize,
    seed: u64,
) -> Result<TowerTrace, StructureError> {
    build_tower_with(cfg, max_height, seed, DEFAULT_LAYERS, DEFAULT_EPSILON, &StructureParams::default())
}

pub fn build_tower_with(
    cfg: &Configuration,
    max_height: usize,
    seed: u64,
    l: usize,
    epsilon: f64,
    params: &StructureParams,
) -> Result<TowerTrace, StructureError> {
    if max_height == 0 {
        return Err(StructureError::BadHeight);
    }
    let mut configs = vec![cfg.clone()];
    let mut densities = vec![cfg.density()];
    let mut step_kinds = Vec::new();
    let mut tower = Tower::default();
    let stop = loop {
        if tower.height() >= max_height {
            break StopReason::MaxHeight;
        }
        let cur = configs.last().expect("chain is non-empty").clone();
        if cur.len() < 2 {
            break StopReason::Exhausted;
        }
        if cur.relations(RELATION_THRESHOLD)?.iter().all(|q| q.x == q.y) {
            break StopReason::DensityFloor;
        }
        let step_seed = mix64(seed ^ configs.len() as u64);
        match lift_or_split_with(&cur, step_seed, l, epsilon, params) {
            Ok(LiftOrSplit::Lift { lift, retained_density }) => {
                step_kinds.push(if retained_density >= LOSSLESS_RATIO {
                    StepKind::Lossless
                } else {
                    StepKind::Lifting
                });
                let next = lift.lifted.clone();
                tower.levels.push(lift);
                densities.push(next.density());
                configs.push(next);
            }
            Ok(LiftOrSplit::Split { subset, .. }) => {
                step_kinds.push(StepKind::Halving);
                let next = cur.restrict(&subset)?;
                densities.push(next.density());
                configs.push(next);
            }
            Err(StructureError::StructuralFailure(_)) => break StopReason::DensityFloor,
            Err(e) => return Err(e),
        }
    };
    Ok(TowerTrace { tower, configs, densities, step_kinds, stop })
}

/// Checks the decay hypothesis a_i ≥ (C/L)·Σ_{j>i} a_j on a density profile
/// and measures its distance to the floor conclusion: the least
/// a_i / ((e^{−C/3}/L)·Σ a).  Empty profiles hold vacuously.
pub fn decay_profile_check(a: &[f64], c: f64) -> (bool, f64) {
    let l = a.len();
    if l == 0 {
        return (true, f64::INFINITY);
    }
    let total: f64 = a.iter().sum();
    let mut tail = 0.0;
    let mut holds = true;
    for &ai in a.iter().rev() {
        if ai + 1e-12 * total.abs() < (c / l as f64) * tail {
            holds = false;
        }
        tail += ai;
    }
    let floor = (-c / 3.0).exp() / l as f64 * total;
    let min = a.iter().copied().fold(f64::INFINITY, f64::min);
    (holds, min / floor)
}

/// Modular structure extracted from closed-path certificates: a common
/// modulus q₀, unit residues a_x, and the smooth remainders β_x with
/// frac(a_x/q₀ + β_x) = α_x.
#[derive(Debug, Clone)]
pub struct ModularDecomposition {
    pub q0: u64,
    pub residues: BTreeMap<u64, u64>,
    pub smooth: BTreeMap<u64, f64>,
    /// (vertex, certificate length 2k, local modulus q_x) per certificate.
    pub witnesses: Vec<(u64, usize, u64)>,
    /// Points of components without any certificate, and points outside
    /// the pruned graph; reported rather than treated as errors.
    pub omitted: Vec<u64>,
}

/// Connected components of the graph, each sorted.
fn components(g: &RelationGraph) -> Vec<Vec<u64>> {
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    let mut out = Vec::new();
    for &v in &g.vertices {
        if seen.contains(&v) {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = vec![v];
        seen.insert(v);
        while let Some(u) = queue.pop() {
            comp.push(u);
            for &(w, _, _) in g.neighbors(u) {
                if seen.insert(w) {
                    queue.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// The unit residue a mod q₀ minimizing ‖α − a/q₀‖; gcd(0, 1) = 1 covers
/// q₀ = 1.
fn nearest_unit_residue(alpha: f64, q0: u64) -> u64 {
    let mut best = 0u64;
    let mut best_err = f64::INFINITY;
    for a in 0..q0.max(1) {
        if num_integer::gcd(a, q0) != 1 {
            continue;
        }
        let err = norm1(alpha - a as f64 / q0 as f64);
        if err < best_err {
            best = a;
            best_err = err;
        }
    }
    best
}

/// Prunes the relation graph, searches every component for unbalanced
/// closed paths, snaps each certified vertex's frequency to a rational
/// with denominator at most min(|R − S|, 10⁶), and propagates the maximal
/// modulus over certified components.  Components without a certificate
/// are omitted (reported, not an error); an empty cover is an error.
pub fn derive_modular_structure(
    cfg: &Configuration,
    seed: u64,
) -> Result<ModularDecomposition, StructureError> {
    derive_modular_structure_with(cfg, seed, &StructureParams::default())
}

pub fn derive_modular_structure_with(
    cfg: &Configuration,
    seed: u64,
    params: &StructureParams,
) -> Result<ModularDecomposition, StructureError> {
    let pruned = prune_min_degree(&build_graph(cfg)?, params.prune_threshold);
    if pruned.edge_count() == 0 {
        return Err(StructureError::StructuralFailure(
            "no relation edges survive pruning".into(),
        ));
    }
    let comps = components(&pruned);
    let budget = pruned.default_path_budget();
    let mut covered: Vec<u64> = Vec::new();
    let mut omitted: Vec<u64> = Vec::new();
    let mut witnesses: Vec<(u64, usize, u64)> = Vec::new();
    let mut q0 = 0u64;
    for comp in &comps {
        let mut q_comp: Option<u64> = None;
        for &x in comp {
            let Some(rec) = find_unbalanced_closed_path(&pruned, x, budget, seed) else {
                continue;
            };
            verify_path_bounds(cfg, &rec)?;
            let d_big =
                if rec.r >= rec.s { &rec.r - &rec.s } else { &rec.s - &rec.r };
            let cap = d_big
                .min(BigUint::from(MODULUS_SNAP_CAP))
                .to_u64()
                .expect("capped at 10^6");
            let alpha = cfg.freq(x).expect("graph vertex is a point");
            let (_, qx) = rational_approx(alpha, cap);
            witnesses.push((x, rec.k(), qx));
            q_comp = Some(q_comp.map_or(qx, |c: u64| c.max(qx)));
        }
        match q_comp {
            Some(qc) => {
                covered.extend(comp.iter().copied());
                q0 = q0.max(qc);
            }
            None => omitted.extend(comp.iter().copied()),
        }
    }
    let in_graph: BTreeSet<u64> = comps.iter().flatten().copied().collect();
    omitted.extend(cfg.points.iter().copied().filter(|x| !in_graph.contains(x)));
    omitted.sort_unstable();
    if covered.is_empty() {
        return Err(StructureError::StructuralFailure(
            "no unbalanced closed path in any component".into(),
        ));
    }
    covered.sort_unstable();
    let mut residues = BTreeMap::new();
    let mut smooth = BTreeMap::new();
    for &x in &covered {
        let alpha = cfg.freq(x).expect("covered point");
        let a = nearest_unit_residue(alpha, q0);
        residues.insert(x, a);
        smooth.insert(x, alpha - a as f64 / q0 as f64);
    }
    Ok(ModularDecomposition { q0, residues, smooth, witnesses, omitted })
}

/// The smooth-law fit β_x ≈ x₀·β_{x₀}/x over a decomposition's covered
/// points, with the rescaled path ratios (S_x/R_x)·Y.
#[derive(Debug, Clone)]
pub struct SmoothLawFit {
    pub x0: u64,
    pub beta0: f64,
    /// (x, β_x − x₀β₀/x), sorted by x.
    pub residuals: Vec<(u64, f64)>,
    pub max_abs_residual: f64,
    /// Rescaled ratios (S_x/R_x)·Y of reachable points, inside [Y/3, 6Y].
    pub rescaled: Vec<f64>,
    /// Reachable points whose rescaled ratio left [Y/3, 6Y].
    pub rescale_violations: usize,
}

/// Picks the base point x₀ by earliest-stabilizing ball growth, measures
/// the residuals of the smooth law against the decomposition's β, and
/// rescales the BFS path ratios S/R by Y, checking them against [Y/3, 6Y].
pub fn smooth_law_fit(
    cfg: &Configuration,
    md: &ModularDecomposition,
) -> Result<SmoothLawFit, StructureError> {
    if md.smooth.is_empty() {
        return Err(StructureError::EmptyCover);
    }
    let g = prune_min_degree(&build_graph(cfg)?, 1);
    let mut seed_vertex: Option<(usize, u64)> = None;
    for &x in md.smooth.keys() {
        if !g.contains_vertex(x) {
            continue;
        }
        let (r, _) = ball_growth(&g, x);
        if seed_vertex.map_or(true, |(rb, _)| r < rb) {
            seed_vertex = Some((r, x));
        }
    }
    let Some((_, x0)) = seed_vertex else {
        return Err(StructureError::EmptyCover);
    };
    let beta0 = md.smooth[&x0];
    let mut residuals = Vec::new();
    let mut max_abs = 0.0f64;
    for (&x, &bx) in &md.smooth {
        let r = bx - x0 as f64 * beta0 / x as f64;
        max_abs = max_abs.max(r.abs());
        residuals.push((x, r));
    }
    // BFS ratio tree: step u → w via p·u ≈ q·w multiplies R by p, S by q.
    let mut ratio: BTreeMap<u64, f64> = BTreeMap::new();
    ratio.insert(x0, 1.0);
    let mut queue = VecDeque::from([x0]);
    while let Some(u) = queue.pop_front() {
        let ru = ratio[&u];
        for &(w, p, q) in g.neighbors(u) {
            if !ratio.contains_key(&w) {
                ratio.insert(w, ru * q as f64 / p as f64);
                queue.push_back(w);
            }
        }
    }
    let y = cfg.ambient.y;
    let mut rescaled = Vec::new();
    let mut rescale_violations = 0usize;
    for &x in md.smooth.keys() {
        let Some(&sr) = ratio.get(&x) else { continue };
        let v = sr * y;
        if v >= y / 3.0 && v <= 6.0 * y {
            rescaled.push(v);
        } else {
            rescale_violations += 1;
        }
    }
    Ok(SmoothLawFit { x0, beta0, residuals, max_abs_residual: max_abs, rescaled, rescale_violations })
}

/// An exact expansion count with its comparison scale.
#[derive(Debug, Clone, Copy)]
pub struct ExpansionCount {
    pub count: u64,
    /// ε⁻¹·q₀·Y/|A|, with Y inferred as the least point.
    pub diagnostic: f64,
}

/// Counts quadruples (x, y, p, q) over the multiset with |p·x − q·y| ≤ ε·P,
/// labels coprime to q₀, and the congruence q·a_x ≡ p·a_y (mod q₀);
/// ordered, diagonal included.  Positions are tested in exact integers.
pub fn expansion_count(
    points: &[u64],
    q0: u64,
    residues: &BTreeMap<u64, u64>,
    epsilon: f64,
    primes: &PrimeRange,
) -> Result<ExpansionCount, StructureError> {
    if q0 == 0 {
        return Err(StructureError::BadModulus);
    }
    if points.is_empty() {
        return Err(StructureError::EmptyCover);
    }
    let mut pts = points.to_vec();
    pts.sort_unstable();
    let y = pts[0] as f64;
    if !(epsilon.is_finite() && epsilon >= 1.0 / y && epsilon <= 1.0) {
        return Err(StructureError::BadSlack { eps: epsilon, y });
    }
    for &x in &pts {
        let Some(&a) = residues.get(&x) else {
            return Err(StructureError::MissingResidue(x));
        };
        if num_integer::gcd(a, q0) != 1 {
            return Err(StructureError::ResidueNotUnit { x, a, q0 });
        }
    }
    let units: Vec<u64> =
        primes.primes.iter().copied().filter(|&p| num_integer::gcd(p, q0) == 1).collect();
    let slack = epsilon * primes.scale as f64;
    let mut count = 0u64;
    for &x in &pts {
        let ax = residues[&x] as u128;
        for &p in &units {
            let center = p as f64 * x as f64;
            for &q in &units {
                let lo =
                    (((center - slack) / q as f64).floor().max(0.0) as u64).saturating_sub(1);
                let hi = ((center + slack) / q as f64).ceil() as u64 + 1;
                let start = pts.partition_point(|&v| v < lo);
                for &yv in &pts[start..] {
                    if yv > hi {
                        break;
                    }
                    let pos = (p as i128 * x as i128 - q as i128 * yv as i128).unsigned_abs();
                    if pos as f64 <= slack
                        && (q as u128 * ax) % q0 as u128
                            == (p as u128 * residues[&yv] as u128) % q0 as u128
                    {
                        count += 1;
                    }
                }
            }
        }
    }
    let diagnostic = q0 as f64 * y / (epsilon * pts.len() as f64);
    Ok(ExpansionCount { count, diagnostic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Ambient, Mode};
    use crate::sieve::primes_in;
    use crate::synth::{modular_instance, theta_drift_instance};

    /// An exact star: points z/r for r in `support`, z = mult·Π support,
    /// frequencies frac(r·β).  Every pair relates exactly through its own
    /// primes and through nothing else.
    fn star_cfg(support: &[u64], beta: f64, mult: u64, strength: f64) -> Configuration {
        let z: u64 = support.iter().product::<u64>() * mult;
        let mut pts: Vec<(u64, f64)> =
            support.iter().map(|&r| (z / r, frac(r as f64 * beta))).collect();
        pts.sort_unstable_by_key(|e| e.0);
        let scale = 100u64;
        Configuration::new(
            pts.iter().map(|e| e.0).collect(),
            pts.iter().map(|e| e.1).collect(),
            strength,
            Ambient { y: pts[0].0 as f64, scale, primes: primes_in(scale).unwrap() },
            Mode::Test,
        )
        .unwrap()
    }

    const STAR: [u64; 5] = [101, 103, 107, 109, 113];
    const STAR_B: [u64; 5] = [127, 131, 137, 139, 149];

    /// A relation-free spread: distinct positions far apart with scattered
    /// frequencies.
    fn spread_cfg() -> Configuration {
        let points: Vec<u64> = (0..12).map(|i| 3_000_000 + 17_041 * i).collect();
        let freqs: Vec<f64> = (0..12).map(|i| frac(0.318_309_886 * (i * i + 1) as f64)).collect();
        let scale = 100u64;
        Configuration::new(
            points.clone(),
            freqs,
            1.0e4,
            Ambient { y: points[0] as f64, scale, primes: primes_in(scale).unwrap() },
            Mode::Test,
        )
        .unwrap()
    }

    #[test]
    fn window_slice_finds_planted_members() {
        let cfg = star_cfg(&STAR, 0.377, 1, 1.0e4);
        let z: u64 = STAR.iter().product();
        let slice = window_slice(&cfg, z as f64);
        assert_eq!(slice.members.len(), 5);
        for &(x, p) in &slice.members {
            assert_eq!(p * x, z);
            assert!(STAR.contains(&p));
        }
        assert!(slice.members.len() <= cfg.ambient.primes.len());
        // All ordered distinct pairs relate exactly.
        assert_eq!(slice.relation_pairs.len(), 20);
        // A center away from the carrier sees nothing.
        let empty = window_slice(&cfg, z as f64 + 12_345.0);
        assert!(empty.members.is_empty() && empty.relation_pairs.is_empty());
    }

    #[test]
    fn seed_clusters_recover_planted_star() {
        let cfg = star_cfg(&STAR, 0.377, 1, 1.0e4);
        let seeds = seed_clusters(&cfg, cfg.density(), 5).unwrap();
        assert_eq!(seeds.len(), 1, "one disjoint planted cluster");
        let s = &seeds[0];
        assert_eq!(s.len(), 5);
        assert!(cluster::diameter(&cfg, &s.members).unwrap() <= 0.5);
        let z: u64 = STAR.iter().product();
        for &(x, p) in &s.members {
            assert_eq!(p * x, z);
        }
        // Determinism in the seed.
        let again = seed_clusters(&cfg, cfg.density(), 5).unwrap();
        assert_eq!(again.len(), 1);
        assert_eq!(again[0].members, s.members);
        // A relation-free configuration yields no seeds.
        let none = seed_clusters(&spread_cfg(), 0.5, 5).unwrap();
        assert!(none.is_empty());
        // Degenerate density rejected.
        assert!(matches!(
            seed_clusters(&cfg, 0.0, 1),
            Err(StructureError::BadDensity(_))
        ));
    }

    #[test]
    fn local_structure_on_exact_star_is_perfect() {
        let cfg = star_cfg(&STAR, 0.377, 1, 1.0e4);
        let d = local_structure(&cfg, 3, 0.1, 5).unwrap();
        // A₀ = A, nothing exceptional, no violations.
        assert_eq!(d.parts.len(), 1);
        assert_eq!(d.parts[0], cfg.points);
        assert!(d.exceptional.is_empty());
        assert_eq!(d.violations_adjacency, 0);
        assert_eq!(d.violations_cross, 0);
        assert!(d.within_budget);
        assert!(!d.attempts.is_empty());
        assert!(STAR.contains(&d.p_star));
        // Parts plus the exceptional set partition the points.
        let mut all = d.covered();
        all.extend(d.exceptional.iter().copied());
        all.sort_unstable();
        assert_eq!(all, cfg.points);
        // The lift covers A and passes verification with β exact.
        assert_eq!(d.lift.lifted.points, cfg.points);
        assert_eq!(d.lift.lifting_prime, d.p_star);
        let report = verify_lift(&d.lift).unwrap();
        assert_eq!(report.checked_points, 5);
        assert!(report.max_congruence_error <= crate::config::LIFT_TOLERANCE);
        // Layer count validation.
        assert!(matches!(local_structure(&cfg, 0, 0.1, 5), Err(StructureError::BadLayers)));
        assert!(matches!(
            local_structure(&cfg, 3, 0.0, 5),
            Err(StructureError::BadEpsilon(_))
        ));
    }

    #[test]
    fn local_structure_fails_without_relations() {
        let err = local_structure(&spread_cfg(), 3, 0.1, 5).unwrap_err();
        assert!(matches!(err, StructureError::StructuralFailure(_)));
    }

    #[test]
    fn lift_or_split_takes_both_branches() {
        // One exact star: everything is covered, so the lift branch fires
        // and retains the full density.
        let cfg = star_cfg(&STAR, 0.377, 1, 1.0e4);
        match lift_or_split(&cfg, 5).unwrap() {
            LiftOrSplit::Lift { lift, retained_density } => {
                assert_eq!(lift.lifted.points, cfg.points);
                assert!(retained_density >= 0.999, "retained {retained_density}");
            }
            other => panic!("expected the lift branch, got {other:?}"),
        }
        // Two stars on disjoint primes, far apart: the sampled p* carries
        // one of them, the other is exceptional, and the split returns one
        // whole component.
        let za: u64 = STAR.iter().product::<u64>() * 24;
        let zb: u64 = STAR_B.iter().product::<u64>() * 7;
        let mut pts: Vec<(u64, f64)> = STAR
            .iter()
            .map(|&r| (za / r, frac(r as f64 * 0.377)))
            .chain(STAR_B.iter().map(|&r| (zb / r, frac(r as f64 * 0.611))))
            .collect();
        pts.sort_unstable_by_key(|e| e.0);
        let two = Configuration::new(
            pts.iter().map(|e| e.0).collect(),
            pts.iter().map(|e| e.1).collect(),
            1.0e4,
            Ambient { y: pts[0].0 as f64, scale: 100, primes: primes_in(100).unwrap() },
            Mode::Test,
        )
        .unwrap();
        // Sanity: the components do not interact.
        let off_diag =
            two.relations(RELATION_THRESHOLD).unwrap().iter().filter(|q| q.x != q.y).count();
        assert_eq!(off_diag, 40);
        let side_a: Vec<u64> = {
            let mut v: Vec<u64> = STAR.iter().map(|&r| za / r).collect();
            v.sort_unstable();
            v
        };
        let side_b: Vec<u64> = {
            let mut v: Vec<u64> = STAR_B.iter().map(|&r| zb / r).collect();
            v.sort_unstable();
            v
        };
        match lift_or_split(&two, 5).unwrap() {
            LiftOrSplit::Split { subset, relations_kept } => {
                assert!(
                    subset == side_a || subset == side_b,
                    "split must return one whole star, got {subset:?}"
                );
                // 20 designed ordered relations plus the diagonal.
                assert_eq!(relations_kept, 20 + 5 * two.ambient.primes.len());
            }
            other => panic!("expected the split branch, got {other:?}"),
        }
    }

    #[test]
    fn build_tower_iterates_lossless_lifts() {
        let cfg = star_cfg(&STAR, 0.377, 1, 1.0e4);
        let trace = build_tower(&cfg, 3, 5).unwrap();
        assert_eq!(trace.tower.height(), 3);
        assert_eq!(trace.stop, StopReason::MaxHeight);
        assert_eq!(trace.configs.len(), 4);
        assert_eq!(trace.step_kinds, vec![StepKind::Lossless; 3]);
        // δ_i stays constant across exact lifts, and the stored densities
        // match recomputation from the configurations.
        for (cfg_i, &d_i) in trace.configs.iter().zip(&trace.densities) {
            assert_eq!(cfg_i.density(), d_i);
        }
        assert!(trace.densities.iter().all(|&d| d == trace.densities[0]));
        // Chain condition and strength law: every level passes, and the
        // final strength is H·Πp*.
        let reports = trace.tower.verify().unwrap();
        assert_eq!(reports.len(), 3);
        let multiplier = trace.tower.strength_multiplier();
        let expect: f64 =
            trace.tower.levels.iter().map(|l| l.lifting_prime as f64).product();
        assert_eq!(multiplier, expect);
        assert_eq!(trace.configs.last().unwrap().strength, cfg.strength * multiplier);
        // Height budget is validated.
        assert!(matches!(build_tower(&cfg, 0, 5), Err(StructureError::BadHeight)));
    }

    #[test]
    fn build_tower_stops_at_density_floor() {
        let trace = build_tower(&spread_cfg(), 3, 5).unwrap();
        assert_eq!(trace.tower.height(), 0);
        assert_eq!(trace.stop, StopReason::DensityFloor);
        assert!(trace.step_kinds.is_empty());
        assert_eq!(trace.densities.len(), 1);
    }

    #[test]
    fn decay_profile_check_cases() {
        // L = 1: the hypothesis is vacuous and the ratio is e^{C/3}.
        let (holds, ratio) = decay_profile_check(&[0.7], 1.0);
        assert!(holds);
        assert!((ratio - (1.0f64 / 3.0).exp()).abs() < 1e-12);
        // Constant profiles satisfy the hypothesis at C = 1.
        let (holds, ratio) = decay_profile_check(&[1.0, 1.0, 1.0], 1.0);
        assert!(holds);
        assert!((ratio - (1.0f64 / 3.0).exp()).abs() < 1e-12);
        // Geometric decay passes for small C; the worst index is the last.
        let geo: Vec<f64> = (0..6).map(|i| 0.5f64.powi(i)).collect();
        let (holds, _) = decay_profile_check(&geo, 1.0);
        assert!(holds);
        // An increasing profile violates the hypothesis.
        let (holds, _) = decay_profile_check(&[1.0, 10.0], 2.0);
        assert!(!holds);
        // Empty profiles hold vacuously.
        let (holds, ratio) = decay_profile_check(&[], 1.0);
        assert!(holds && ratio.is_infinite());
    }

    #[test]
    fn derive_modular_structure_recovers_planted_modulus() {
        let inst = theta_drift_instance(5, 2, 2.5);
        let md = derive_modular_structure(&inst.cfg, 7).unwrap();
        assert_eq!(md.q0, 5);
        assert!(md.omitted.is_empty());
        assert!(!md.witnesses.is_empty());
        for &(_, k, qx) in &md.witnesses {
            assert!(k >= 2);
            assert_eq!(qx, 5);
        }
        let planted: BTreeMap<u64, u64> = inst.residues.iter().copied().collect();
        assert_eq!(md.residues, planted);
        // Reconstruction and drift: frac(a/q₀ + β) = α and β ≈ T₀/x.
        for (&x, &a) in &md.residues {
            let alpha = inst.cfg.freq(x).unwrap();
            let beta = md.smooth[&x];
            assert!(norm1(frac(a as f64 / 5.0 + beta) - alpha) <= 1e-9);
            assert!((beta - inst.t0 / x as f64).abs() <= 1e-9, "drift at {x}");
        }
    }

    #[test]
    fn derive_modular_structure_pure_drift_gives_trivial_modulus() {
        let inst = theta_drift_instance(1, 0, 2.5);
        let md = derive_modular_structure(&inst.cfg, 7).unwrap();
        assert_eq!(md.q0, 1);
        assert!(md.residues.values().all(|&a| a == 0));
        for (&x, &b) in &md.smooth {
            assert!((b - inst.cfg.freq(x).unwrap()).abs() <= 1e-15);
        }
    }

    #[test]
    fn derive_modular_structure_needs_unbalanced_paths() {
        // Exact positions force R/S = x_k/x₀ on every closed path, so the
        // complete modular instance has no certificate anywhere.
        let inst = modular_instance(3, 11);
        let err = derive_modular_structure(&inst.cfg, 7).unwrap_err();
        assert!(matches!(err, StructureError::StructuralFailure(_)));
        // A relation-free configuration fails at the pruning stage.
        let err = derive_modular_structure(&spread_cfg(), 7).unwrap_err();
        assert!(matches!(err, StructureError::StructuralFailure(_)));
    }

    #[test]
    fn smooth_law_fit_matches_planted_drift() {
        for (q0, a0) in [(1u64, 0u64), (5, 2)] {
            let inst = theta_drift_instance(q0, a0, 2.5);
            let md = derive_modular_structure(&inst.cfg, 7).unwrap();
            let fit = smooth_law_fit(&inst.cfg, &md).unwrap();
            assert!(md.smooth.contains_key(&fit.x0));
            // β₀ = T₀/x₀ makes the predicted law exactly T₀/x.
            assert!(fit.max_abs_residual <= 1e-9, "residual {}", fit.max_abs_residual);
            assert_eq!(fit.residuals.len(), 6);
            // All six vertices are reachable and rescale into [Y/3, 6Y].
            assert_eq!(fit.rescaled.len(), 6);
            assert_eq!(fit.rescale_violations, 0);
            let y = inst.cfg.ambient.y;
            for &v in &fit.rescaled {
                assert!(v >= y / 3.0 && v <= 6.0 * y);
            }
        }
    }

    #[test]
    fn expansion_count_matches_brute_force() {
        let inst = modular_instance(7, 5);
        let residues: BTreeMap<u64, u64> = inst.residues.iter().copied().collect();
        let pr = &inst.cfg.ambient.primes;
        let eps = 0.05;
        let fast = expansion_count(&inst.cfg.points, 5, &residues, eps, pr).unwrap();
        let units: Vec<u64> = pr.primes.iter().copied().filter(|&p| p % 5 != 0).collect();
        let mut brute = 0u64;
        for &x in &inst.cfg.points {
            for &y in &inst.cfg.points {
                for &p in &units {
                    for &q in &units {
                        let pos = (p as i128 * x as i128 - q as i128 * y as i128).unsigned_abs();
                        if pos as f64 <= eps * pr.scale as f64
                            && (q * residues[&x]) % 5 == (p * residues[&y]) % 5
                        {
                            brute += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(fast.count, brute);
        assert!(fast.count > 0);
        let y0 = inst.cfg.points[0] as f64;
        assert!((fast.diagnostic - 5.0 * y0 / (eps * inst.cfg.len() as f64)).abs() < 1e-9);
    }

    #[test]
    fn expansion_count_diagonal_and_errors() {
        // Distinct large primes never satisfy p·x = q·y off the diagonal,
        // and a sub-unit slack admits only exact position matches.
        let points = vec![10_007u64, 10_009, 10_037];
        let residues: BTreeMap<u64, u64> = points.iter().map(|&x| (x, 0)).collect();
        let pr = primes_in(100).unwrap();
        let eps = 2.0e-4;
        let out = expansion_count(&points, 1, &residues, eps, &pr).unwrap();
        assert_eq!(out.count, (points.len() * pr.len()) as u64);
        assert!((out.diagnostic - 10_007.0 / (eps * 3.0)).abs() < 1e-6);

        assert!(matches!(
            expansion_count(&points, 0, &residues, eps, &pr),
            Err(StructureError::BadModulus)
        ));
        assert!(matches!(
            expansion_count(&points, 1, &residues, 2.0, &pr),
            Err(StructureError::BadSlack { .. })
        ));
        assert!(matches!(
            expansion_count(&points, 1, &residues, 1.0e-9, &pr),
            Err(StructureError::BadSlack { .. })
        ));
        let missing: BTreeMap<u64, u64> = BTreeMap::new();
        assert!(matches!(
            expansion_count(&points, 1, &missing, eps, &pr),
            Err(StructureError::MissingResidue(_))
        ));
        let shared: BTreeMap<u64, u64> = points.iter().map(|&x| (x, 2)).collect();
        assert!(matches!(
            expansion_count(&points, 4, &shared, eps, &pr),
            Err(StructureError::ResidueNotUnit { .. })
        ));
    }
}
