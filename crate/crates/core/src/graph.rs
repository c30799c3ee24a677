//! The relation graph G(𝒜): vertices are the points, edges the related
//! pairs with their unique prime labels, plus the path machinery built on
//! top — prime products, two-sided path bounds, unbalanced closed-path
//! search, and BFS ball growth.
//!
//! An edge {x, y} labelled (p, q) witnesses p·x ≈ q·y, so a path of length
//! k scales its start by R/S = Πpᵢ/Πqᵢ up to an additive error of k, while
//! frequencies obey ‖S·α_{x₀} − R·α_{x_k}‖ ≤ k·R/(H·P).  Both bounds are
//! re-verified in exact big-integer arithmetic by [`verify_path_bounds`].

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cluster::strength_epsilon;
use crate::config::{ConfigError, Configuration, Mode, RELATION_THRESHOLD};
use crate::numutil::{mix64, norm1_big_combo};

/// Random extensions tried per path length before ramping up.
const WALK_ATTEMPTS: usize = 64;

#[derive(Debug, Error)]
pub enum GraphError {
    /// Two distinct labels on one pair contradict |p/q − p′/q′| ≥ 1/(qq′) >
    /// 1/(5Y); reaching this means the distance threshold was misused
    /// (e.g. points far below the supported ambient range).
    #[error(
        "conflicting labels ({}, {}) and ({}, {}) on pair {{{x}, {y}}}: \
         relation threshold too coarse for this ambient range",
        first.0, first.1, second.0, second.1
    )]
    LabelConflict { x: u64, y: u64, first: (u64, u64), second: (u64, u64) },
    #[error("path must contain at least one edge")]
    EmptyPath,
    #[error("path shape mismatch: {vertices} vertices with {labels} label pairs")]
    LengthMismatch { vertices: usize, labels: usize },
    #[error("recorded products disagree with the label sequences")]
    ProductMismatch,
    #[error("path length {k} exceeds the strict-mode cap {cap}")]
    PathTooLong { k: usize, cap: usize },
    #[error("consecutive pair ({x}, {y}) under ({p}, {q}) has strength {strength}, not a relation")]
    NotAnEdge { x: u64, y: u64, p: u64, q: u64, strength: f64 },
    #[error("position gap {gap} exceeds the path bound {bound}")]
    PositionBound { gap: f64, bound: f64 },
    #[error("frequency gap {gap} exceeds the path bound {bound}")]
    FrequencyBound { gap: f64, bound: f64 },
    #[error("prime ratio R/S = {ratio} outside [1/3, 3] on a path of length {k}")]
    RatioOutOfRange { ratio: f64, k: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// The relation graph: one vertex per point, one edge per unordered related
/// pair, labelled by its unique prime pair (p, q) oriented low → high.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    /// All points of the configuration, sorted (isolated vertices included).
    pub vertices: Vec<u64>,
    /// {x, y} with x < y, mapped to the label (p, q) of the quadruple
    /// (x, y, p, q); the reverse orientation is labelled (q, p).
    pub edges: BTreeMap<(u64, u64), (u64, u64)>,
    /// Oriented adjacency: vertex → sorted (neighbour, p, q).
    adj: BTreeMap<u64, Vec<(u64, u64, u64)>>,
    /// Ambient Y, retained for path-length heuristics.
    y: f64,
    /// |𝒫|, retained for path-length heuristics.
    primes_len: usize,
}

impl RelationGraph {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_vertex(&self, x: u64) -> bool {
        self.adj.contains_key(&x)
    }

    /// Oriented neighbours of `x` as (neighbour, p, q) triples.
    pub fn neighbors(&self, x: u64) -> &[(u64, u64, u64)] {
        self.adj.get(&x).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, x: u64) -> usize {
        self.neighbors(x).len()
    }

    pub fn min_degree(&self) -> usize {
        self.adj.values().map(Vec::len).min().unwrap_or(0)
    }

    pub fn max_degree(&self) -> usize {
        self.adj.values().map(Vec::len).max().unwrap_or(0)
    }

    /// Edge list (x, y, p, q) with x < y, sorted, for export.
    pub fn edge_list(&self) -> Vec<(u64, u64, u64, u64)> {
        self.edges.iter().map(|(&(x, y), &(p, q))| (x, y, p, q)).collect()
    }

    /// Path-length budget 2·⌈log Y / log |𝒫|⌉ + 8 used by the closed-path
    /// search when the caller has no better estimate.
    pub fn default_path_budget(&self) -> usize {
        let d = (self.primes_len as f64).ln();
        if !(d > 0.0) {
            return 8;
        }
        2 * (self.y.ln() / d).ceil().max(1.0) as usize + 8
    }

    fn rebuild_from_edges(
        vertices: Vec<u64>,
        edges: BTreeMap<(u64, u64), (u64, u64)>,
        y: f64,
        primes_len: usize,
    ) -> Self {
        let mut adj: BTreeMap<u64, Vec<(u64, u64, u64)>> =
            vertices.iter().map(|&v| (v, Vec::new())).collect();
        for (&(x, yv), &(p, q)) in &edges {
            adj.get_mut(&x).expect("edge endpoint is a vertex").push((yv, p, q));
            adj.get_mut(&yv).expect("edge endpoint is a vertex").push((x, q, p));
        }
        for nb in adj.values_mut() {
            nb.sort_unstable();
        }
        RelationGraph { vertices, edges, adj, y, primes_len }
    }
}

/// A walk x₀ → x₁ → … → x_k whose i-th step uses the edge labelled
/// (pᵢ, qᵢ), together with the prime products R = Πpᵢ and S = Πqᵢ.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub vertices: Vec<u64>,
    pub prime_seq_p: Vec<u64>,
    pub prime_seq_q: Vec<u64>,
    pub r: BigUint,
    pub s: BigUint,
}

impl PathRecord {
    /// Builds and shape-checks a record, computing the products.
    pub fn new(
        vertices: Vec<u64>,
        prime_seq_p: Vec<u64>,
        prime_seq_q: Vec<u64>,
    ) -> Result<Self, GraphError> {
        if prime_seq_p.is_empty() {
            return Err(GraphError::EmptyPath);
        }
        if vertices.len() != prime_seq_p.len() + 1 || prime_seq_p.len() != prime_seq_q.len() {
            return Err(GraphError::LengthMismatch {
                vertices: vertices.len(),
                labels: prime_seq_p.len().min(prime_seq_q.len()),
            });
        }
        let r = prime_seq_p.iter().map(|&p| BigUint::from(p)).product();
        let s = prime_seq_q.iter().map(|&q| BigUint::from(q)).product();
        Ok(PathRecord { vertices, prime_seq_p, prime_seq_q, r, s })
    }

    /// Number of edges k.
    pub fn k(&self) -> usize {
        self.prime_seq_p.len()
    }

    pub fn start(&self) -> u64 {
        self.vertices[0]
    }

    pub fn end(&self) -> u64 {
        *self.vertices.last().expect("non-empty path")
    }

    /// True when the walk returns to its start.
    pub fn is_closed(&self) -> bool {
        self.start() == self.end()
    }

    /// R/S as a float (exact rational reduced at the end).
    pub fn ratio(&self) -> f64 {
        BigRational::new(BigInt::from(self.r.clone()), BigInt::from(self.s.clone()))
            .to_f64()
            .unwrap_or(f64::NAN)
    }
}

/// Measured path-bound data from [`verify_path_bounds`].
#[derive(Debug, Clone, Copy)]
pub struct PathReport {
    pub k: usize,
    /// R/S, inside [1/3, 3] for short paths.
    pub ratio: f64,
    /// |（R/S)·x₀ − x_k|, exact rational reduced to f64.
    pub position_gap: f64,
    /// The lemma bound k.
    pub position_bound: f64,
    /// ‖S·α_{x₀} − R·α_{x_k}‖, exact rational reduced to f64.
    pub frequency_gap: f64,
    /// The lemma bound k·R/(H·P).
    pub frequency_bound: f64,
}

impl PathReport {
    pub fn position_slack(&self) -> f64 {
        self.position_bound - self.position_gap
    }

    pub fn frequency_slack(&self) -> f64 {
        self.frequency_bound - self.frequency_gap
    }
}

/// Builds G(𝒜) from the relation set at the standard threshold.
///
/// Every off-diagonal quadruple contributes its unordered pair; the label
/// is unique per pair, so a conflict is an invariant violation rather than
/// data (it cannot occur when points sit in a genuine dyadic range).
pub fn build_graph(cfg: &Configuration) -> Result<RelationGraph, GraphError> {
    let quads = cfg.relations(RELATION_THRESHOLD)?;
    let mut edges: BTreeMap<(u64, u64), (u64, u64)> = BTreeMap::new();
    for quad in &quads {
        if quad.x == quad.y {
            continue;
        }
        let (a, b, label) = if quad.x < quad.y {
            (quad.x, quad.y, (quad.p, quad.q))
        } else {
            (quad.y, quad.x, (quad.q, quad.p))
        };
        match edges.get(&(a, b)) {
            Some(&existing) if existing != label => {
                return Err(GraphError::LabelConflict {
                    x: a,
                    y: b,
                    first: existing,
                    second: label,
                });
            }
            _ => {
                edges.insert((a, b), label);
            }
        }
    }
    Ok(RelationGraph::rebuild_from_edges(
        cfg.points.clone(),
        edges,
        cfg.ambient.y,
        cfg.ambient.primes.len(),
    ))
}

/// Iteratively removes vertices of degree < `threshold` until the minimum
/// degree of the remainder is ≥ `threshold` (possibly the empty graph).
///
/// When the input has e ≥ 2·threshold·n edges the remainder keeps more
/// than threshold·n of them: each removal deletes fewer than `threshold`
/// edges, so the loss is under threshold·n total.  That retention is
/// re-checked whenever the premise holds.
pub fn prune_min_degree(g: &RelationGraph, threshold: usize) -> RelationGraph {
    let n_in = g.vertex_count();
    let e_in = g.edge_count();
    let mut alive: BTreeSet<u64> = g.vertices.iter().copied().collect();
    let mut degree: BTreeMap<u64, usize> =
        g.vertices.iter().map(|&v| (v, g.degree(v))).collect();
    let mut queue: Vec<u64> =
        g.vertices.iter().copied().filter(|&v| degree[&v] < threshold).collect();
    while let Some(v) = queue.pop() {
        if !alive.remove(&v) {
            continue;
        }
        for &(w, _, _) in g.neighbors(v) {
            if alive.contains(&w) {
                let d = degree.get_mut(&w).expect("live vertex has a degree entry");
                *d -= 1;
                if *d < threshold {
                    queue.push(w);
                }
            }
        }
    }
    let vertices: Vec<u64> = alive.iter().copied().collect();
    let edges: BTreeMap<(u64, u64), (u64, u64)> = g
        .edges
        .iter()
        .filter(|((x, y), _)| alive.contains(x) && alive.contains(y))
        .map(|(&k, &v)| (k, v))
        .collect();
    let out = RelationGraph::rebuild_from_edges(vertices, edges, g.y, g.primes_len);
    // Retention invariant: provable whenever the premise e ≥ 2tn holds.
    if threshold > 0 && e_in >= 2 * threshold * n_in {
        assert!(
            out.edge_count() >= threshold * n_in,
            "degree pruning must keep over half the edges of a dense graph"
        );
    }
    debug_assert!(out.min_degree() >= threshold || out.vertex_count() == 0);
    out
}

/// Re-verifies both path bounds for a walk against a configuration.
///
/// Checks each step is a genuine relation, recomputes R and S, then tests
/// |（R/S)·x₀ − x_k| ≤ k and ‖S·α_{x₀} − R·α_{x_k}‖ ≤ k·R/(H·P) in exact
/// arithmetic, plus R/S ∈ [1/3, 3] on paths of length ≤ log Y.  Violations
/// are errors; success returns the measured gaps.
pub fn verify_path_bounds(
    cfg: &Configuration,
    path: &PathRecord,
) -> Result<PathReport, GraphError> {
    let k = path.k();
    if k == 0 {
        return Err(GraphError::EmptyPath);
    }
    if path.vertices.len() != k + 1 || path.prime_seq_q.len() != k {
        return Err(GraphError::LengthMismatch {
            vertices: path.vertices.len(),
            labels: path.prime_seq_p.len().min(path.prime_seq_q.len()),
        });
    }
    let log_y = cfg.ambient.y.ln();
    if cfg.mode == Mode::Strict && k as f64 > log_y {
        return Err(GraphError::PathTooLong { k, cap: log_y.floor() as usize });
    }
    let mut r = BigUint::one();
    let mut s = BigUint::one();
    let slack = strength_epsilon(cfg);
    for i in 0..k {
        let (x, y) = (path.vertices[i], path.vertices[i + 1]);
        let (p, q) = (path.prime_seq_p[i], path.prime_seq_q[i]);
        let strength = cfg.rel_strength(x, y, p, q)?;
        if strength > RELATION_THRESHOLD + slack {
            return Err(GraphError::NotAnEdge { x, y, p, q, strength });
        }
        r *= p;
        s *= q;
    }
    if r != path.r || s != path.s {
        return Err(GraphError::ProductMismatch);
    }

    let x0 = path.start();
    let xk = path.end();
    let r_int = BigInt::from(r);
    let s_int = BigInt::from(s);
    // |（R/S)x₀ − x_k| = |R·x₀ − S·x_k| / S, exactly.
    let num = (&r_int * BigInt::from(x0) - &s_int * BigInt::from(xk)).abs();
    let position_gap = BigRational::new(num, s_int.clone()).to_f64().unwrap_or(f64::INFINITY);
    let position_bound = k as f64;
    if position_gap > position_bound {
        return Err(GraphError::PositionBound { gap: position_gap, bound: position_bound });
    }

    let a0 = cfg.freq(x0).ok_or(ConfigError::UnknownPoint(x0))?;
    let ak = cfg.freq(xk).ok_or(ConfigError::UnknownPoint(xk))?;
    let frequency_gap = norm1_big_combo(&s_int, a0, &r_int, ak);
    let r_f64 = r_int.to_f64().unwrap_or(f64::INFINITY);
    let frequency_bound = k as f64 * r_f64 / (cfg.strength * cfg.ambient.scale as f64);
    if frequency_gap > frequency_bound {
        return Err(GraphError::FrequencyBound { gap: frequency_gap, bound: frequency_bound });
    }

    let ratio = path.ratio();
    if k as f64 <= log_y && !(1.0 / 3.0..=3.0).contains(&ratio) {
        return Err(GraphError::RatioOutOfRange { ratio, k });
    }
    Ok(PathReport { k, ratio, position_gap, position_bound, frequency_gap, frequency_bound })
}

/// One random typical walk of exactly `k` steps from `start`, or None at a
/// dead end.  Typicality forbids reusing any earlier qᵢ as a new p (and
/// vice versa), which keeps gcd(R, S) = 1 and rules out backtracking; the
/// running ratio is kept inside [1/3, 3].
fn typical_walk(
    g: &RelationGraph,
    start: u64,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<u64>, Vec<u64>, Vec<u64>)> {
    let mut vertices = vec![start];
    let mut ps: Vec<u64> = Vec::with_capacity(k);
    let mut qs: Vec<u64> = Vec::with_capacity(k);
    let mut used_p: BTreeSet<u64> = BTreeSet::new();
    let mut used_q: BTreeSet<u64> = BTreeSet::new();
    let mut ratio = 1.0f64;
    let mut cur = start;
    for _ in 0..k {
        let cands: Vec<&(u64, u64, u64)> = g
            .neighbors(cur)
            .iter()
            .filter(|(_, p, q)| {
                let stepped = ratio * *p as f64 / *q as f64;
                !used_q.contains(p) && !used_p.contains(q) && (1.0 / 3.0..=3.0).contains(&stepped)
            })
            .collect();
        if cands.is_empty() {
            return None;
        }
        let &(next, p, q) = cands[rng.gen_range(0..cands.len())];
        ratio *= p as f64 / q as f64;
        vertices.push(next);
        ps.push(p);
        qs.push(q);
        used_p.insert(p);
        used_q.insert(q);
        cur = next;
    }
    Some((vertices, ps, qs))
}

/// Searches for two typical paths of equal length k from `x` to a common
/// endpoint whose products differ, returning their concatenation: a closed
/// walk of length 2k whose total products R = R₁S₂ and S = S₁R₂ are
/// distinct.  k ramps from ⌈log Y / (2 log |𝒫|)⌉ up to `budget`; the
/// search is randomized but deterministic in `seed`.  Exhausting the
/// budget yields None — absence of a certificate, not an error.
pub fn find_unbalanced_closed_path(
    g: &RelationGraph,
    x: u64,
    budget: usize,
    seed: u64,
) -> Option<PathRecord> {
    if !g.contains_vertex(x) {
        return None;
    }
    let d = (g.primes_len as f64).ln();
    let k_min = if d > 0.0 { (g.y.ln() / (2.0 * d)).ceil().max(1.0) as usize } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(x)));
    for k in k_min..=budget {
        // endpoint → walks that reached it, with their products.
        let mut reached: BTreeMap<u64, Vec<(BigUint, BigUint, Vec<u64>, Vec<u64>, Vec<u64>)>> =
            BTreeMap::new();
        for _ in 0..WALK_ATTEMPTS {
            let Some((vertices, ps, qs)) = typical_walk(g, x, k, &mut rng) else {
                continue;
            };
            let r1: BigUint = ps.iter().map(|&p| BigUint::from(p)).product();
            let s1: BigUint = qs.iter().map(|&q| BigUint::from(q)).product();
            let end = *vertices.last().expect("walk has vertices");
            let hits = reached.entry(end).or_default();
            if let Some((r2, s2, v2, p2, q2)) =
                hits.iter().find(|(r2, s2, ..)| &r1 * s2 != r2 * &s1)
            {
                // Concatenate: out along walk 1, back along walk 2 reversed,
                // each reversed edge swapping its label to (q, p).
                let mut vertices = vertices;
                vertices.extend(v2.iter().rev().skip(1));
                let mut ps = ps;
                ps.extend(q2.iter().rev());
                let mut qs = qs;
                qs.extend(p2.iter().rev());
                let record = PathRecord {
                    vertices,
                    prime_seq_p: ps,
                    prime_seq_q: qs,
                    r: r1 * s2,
                    s: s1 * r2.clone(),
                };
                debug_assert!(record.is_closed() && record.r != record.s);
                return Some(record);
            }
            if hits.iter().all(|(r2, s2, ..)| (r2, s2) != (&r1, &s1)) {
                hits.push((r1, s1, vertices, ps, qs));
            }
        }
    }
    None
}

/// Runs the closed-path search from every vertex in parallel with
/// per-vertex seeds derived from `seed`; only successes are returned.
pub fn find_unbalanced_closed_paths(
    g: &RelationGraph,
    budget: usize,
    seed: u64,
) -> BTreeMap<u64, PathRecord> {
    g.vertices
        .par_iter()
        .filter_map(|&x| find_unbalanced_closed_path(g, x, budget, seed).map(|rec| (x, rec)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// BFS balls around `x0` until the first r ≥ 1 with |B_r| ≤ 3·|B_{r−1}|;
/// returns that r together with all balls B₀ … B_r (sorted vertex lists).
/// Such an r exists within ⌈log₃ |V|⌉ + 1 steps since the sizes are capped
/// by |V|.
pub fn ball_growth(g: &RelationGraph, x0: u64) -> (usize, Vec<Vec<u64>>) {
    let mut ball: BTreeSet<u64> = BTreeSet::new();
    ball.insert(x0);
    let mut balls: Vec<Vec<u64>> = vec![ball.iter().copied().collect()];
    let mut r = 0usize;
    loop {
        r += 1;
        let mut next = ball.clone();
        for &v in &ball {
            for &(w, _, _) in g.neighbors(v) {
                next.insert(w);
            }
        }
        balls.push(next.iter().copied().collect());
        if next.len() <= 3 * ball.len() {
            return (r, balls);
        }
        ball = next;
    }
}
