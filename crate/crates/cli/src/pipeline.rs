//! The end-to-end pipeline: hit extraction → scale choice → configuration
//! → enabled analysis stages, each writing CSV/JSON artifacts under the
//! output directory, plus the two-manifest contrast report.  Stage
//! failures are recorded in the bundle as results; only I/O and invariant
//! violations abort.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use funiform_core::cluster::{candidate_pool, covering, Cluster, CoveringFamily};
use funiform_core::config::{Configuration, Mode, Quadruple};
use funiform_core::dirichlet::fit_global;
use funiform_core::expsum::{
    choose_scale, extract_hits, sup_frequency, FrequencyHit, ScaleChoice, ValueSource, Window,
};
use funiform_core::graph::{build_graph, RelationGraph};
use funiform_core::structure::{
    build_tower, local_structure, Decomposition, StepKind, StopReason, TowerTrace,
};

use crate::io::{write_config_jsonl, write_csv};
use crate::manifest::{ExperimentManifest, Stage};
use crate::source::Source;

/// Result of one pipeline stage: ok, skipped, or failed, with a short
/// deterministic detail string.
#[derive(Debug, Clone, Serialize)]
pub struct StageOutcome {
    pub stage: String,
    pub status: String,
    pub detail: String,
}

/// Fit artifact written to fit.json; T0 is reported in original n-units
/// (the fit itself runs on points rescaled by 1/H).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitSummary {
    pub a0: u64,
    pub q0: u64,
    #[serde(rename = "T0")]
    pub t0: f64,
    pub residual_sup: f64,
    pub coverage: f64,
}

/// The run summary written to summary.json.  Every numeric here is
/// recomputable from the stage CSVs.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub function: String,
    pub x: u64,
    pub h: u64,
    pub delta: f64,
    pub seed: u64,
    pub windows_scanned: usize,
    pub hit_count: usize,
    pub hit_density: f64,
    pub mean_sup_norm: f64,
    pub sigma_sup_norm: f64,
    pub chosen_scale: u64,
    pub scale_density: f64,
    pub relation_density: Option<f64>,
    pub tower_height: Option<usize>,
    pub tower_stop: Option<String>,
    pub fit: Option<FitSummary>,
    pub flag: String,
    pub stages: Vec<StageOutcome>,
}

/// Everything a run produced, with the artifacts already on disk.
#[derive(Debug)]
pub struct RunBundle {
    pub out_dir: PathBuf,
    /// Per-window sup statistics for every scanned window (windows.csv).
    pub window_stats: Vec<FrequencyHit>,
    /// The δ-thresholded H-separated hit set (hits.csv).
    pub hits: Vec<FrequencyHit>,
    pub choice: ScaleChoice,
    pub config: Option<Configuration>,
    pub summary: Summary,
}

/// Sup statistics for every stride-H window in the manifest range, using
/// the same aligned starts as hit extraction.
pub fn scan_windows(src: &Source, m: &ExperimentManifest) -> Result<Vec<FrequencyHit>> {
    let mut stats = Vec::with_capacity(m.windows as usize);
    let mut x = m.x.div_ceil(m.h) * m.h;
    while x + m.h <= m.range_end() {
        let values = src.window(x, m.h)?;
        let w = Window::new(x, values)?;
        stats.push(sup_frequency(&w)?);
        x += m.h;
    }
    Ok(stats)
}

fn tagged_cluster_rows(rows: &mut Vec<String>, clusters: &[Cluster], tag: &str) {
    for (id, cl) in clusters.iter().enumerate() {
        for &(x, p) in &cl.members {
            rows.push(format!("{x},{p},{id},{tag}"));
        }
    }
}

/// Rows of the relations table: x,y,p,q,strength.
pub fn relation_rows(rels: &[Quadruple]) -> Vec<String> {
    rels.iter()
        .map(|r| format!("{},{},{},{},{}", r.x, r.y, r.p, r.q, r.strength_value))
        .collect()
}

/// Rows of the clusters table: x,p,cluster_id,family_tag.
pub fn clusters_rows(pool: &[Cluster], family: &CoveringFamily) -> Vec<String> {
    let mut rows = Vec::new();
    tagged_cluster_rows(&mut rows, pool, "pool");
    tagged_cluster_rows(&mut rows, &family.clusters, "cover");
    rows
}

/// Rows of the graph export: x,y,p,q.
pub fn edge_rows(g: &RelationGraph) -> Vec<String> {
    g.edge_list().iter().map(|&(x, y, p, q)| format!("{x},{y},{p},{q}")).collect()
}

/// Rows of the decomposition table: x,part_index, with the exceptional
/// set at index `parts.len()`.
pub fn decomposition_rows(dec: &Decomposition) -> Vec<String> {
    let mut rows = Vec::new();
    for (idx, part) in dec.parts.iter().enumerate() {
        for &x in part {
            rows.push(format!("{x},{idx}"));
        }
    }
    for &x in &dec.exceptional {
        rows.push(format!("{x},{}", dec.parts.len()));
    }
    rows
}

/// Rows of the tower trace: level,step_kind,delta,p_star,size.  Level 0 is
/// the start configuration; the lifting prime column is empty for start
/// and halving rows.
pub fn trace_rows(trace: &TowerTrace) -> Vec<String> {
    let mut rows = Vec::new();
    let mut lift_idx = 0usize;
    for (i, level) in trace.configs.iter().enumerate() {
        let (kind, p_star) = if i == 0 {
            ("start".to_string(), String::new())
        } else {
            let kind = trace.step_kinds[i - 1];
            let p = match kind {
                StepKind::Lifting | StepKind::Lossless => {
                    let p = trace.tower.levels[lift_idx].lifting_prime;
                    lift_idx += 1;
                    p.to_string()
                }
                StepKind::Halving => String::new(),
            };
            (step_kind_name(kind).to_string(), p)
        };
        rows.push(format!("{i},{kind},{},{p_star},{}", trace.densities[i], level.len()));
    }
    rows
}

fn step_kind_name(kind: StepKind) -> &'static str {
    match kind {
        StepKind::Lifting => "lifting",
        StepKind::Lossless => "lossless",
        StepKind::Halving => "halving",
    }
}

/// Human name of a tower stop reason, as written in stage details.
pub fn stop_reason_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::MaxHeight => "max height",
        StopReason::DensityFloor => "density floor",
        StopReason::Exhausted => "exhausted",
    }
}

/// Runs the full pipeline for one manifest into `out_dir`.  `mode` is the
/// configuration validation mode and `cache_dir` an optional λ window
/// cache; neither changes output bytes.
pub fn run_pipeline(
    m: &ExperimentManifest,
    out_dir: &Path,
    mode: Mode,
    cache_dir: Option<&Path>,
) -> Result<RunBundle> {
    m.validate()?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let src = Source::from_spec(&m.function, m.seed, cache_dir)?;

    // Spine: window statistics, hit extraction, scale choice, configuration.
    let stats = scan_windows(&src, m)?;
    write_csv(
        &out_dir.join("windows.csv"),
        "x,theta,magnitude",
        &stats.iter().map(|s| format!("{},{},{}", s.x, s.theta, s.magnitude)).collect::<Vec<_>>(),
    )?;
    let hits = extract_hits(&src, m.x, m.range_end(), m.h, m.delta)?;
    write_csv(
        &out_dir.join("hits.csv"),
        "x,theta,magnitude,delta",
        &hits
            .iter()
            .map(|s| format!("{},{},{},{}", s.x, s.theta, s.magnitude, m.delta))
            .collect::<Vec<_>>(),
    )?;
    let choice = choose_scale(&hits, m.h, m.delta, m.scale)?;
    write_csv(
        &out_dir.join("scale.csv"),
        "scale,quadruples,density,chosen",
        &choice
            .candidates
            .iter()
            .map(|c| {
                let chosen = (c.scale == choice.chosen.scale) as u8;
                format!("{},{},{},{}", c.scale, c.quadruples, c.density, chosen)
            })
            .collect::<Vec<_>>(),
    )?;
    let config = match &choice.seed {
        Some(seed) => {
            let cfg = seed.build(mode)?;
            write_config_jsonl(&out_dir.join("config.jsonl"), &cfg)?;
            Some(cfg)
        }
        None => None,
    };

    // Analysis stages: failures are results, recorded and skipped past.
    let mut outcomes: Vec<StageOutcome> = Vec::new();
    let mut relation_density = None;
    let mut tower_height = None;
    let mut tower_stop = None;
    let mut fit = None;
    for stage in Stage::ALL {
        if !m.stages.contains(&stage) {
            outcomes.push(StageOutcome {
                stage: stage.name().into(),
                status: "skipped".into(),
                detail: "disabled by manifest".into(),
            });
            continue;
        }
        let Some(cfg) = &config else {
            outcomes.push(StageOutcome {
                stage: stage.name().into(),
                status: "skipped".into(),
                detail: "no configuration (empty hit set)".into(),
            });
            continue;
        };
        let result: Result<String> = match stage {
            Stage::Relations => cfg
                .relations(m.threshold)
                .map_err(anyhow::Error::from)
                .and_then(|rels| {
                    write_csv(
                        &out_dir.join("relations.csv"),
                        "x,y,p,q,strength",
                        &relation_rows(&rels),
                    )?;
                    let denom = cfg.len() as f64 * (cfg.ambient.primes.len() as f64).powi(2);
                    let density = rels.len() as f64 / denom;
                    relation_density = Some(density);
                    Ok(format!("{} quadruples, density {density}", rels.len()))
                }),
            Stage::Clusters => candidate_pool(cfg, m.c, m.eta)
                .and_then(|(pool, _)| Ok((pool, covering(cfg, m.c, m.eta)?)))
                .map_err(anyhow::Error::from)
                .and_then(|(pool, family)| {
                    write_csv(
                        &out_dir.join("clusters.csv"),
                        "x,p,cluster_id,family_tag",
                        &clusters_rows(&pool, &family),
                    )?;
                    Ok(format!(
                        "{} pool clusters, {} covering clusters",
                        pool.len(),
                        family.clusters.len()
                    ))
                }),
            Stage::Graph => build_graph(cfg).map_err(anyhow::Error::from).and_then(|g| {
                write_csv(&out_dir.join("graph.csv"), "x,y,p,q", &edge_rows(&g))?;
                Ok(format!("{} vertices, {} edges", g.vertex_count(), g.edge_count()))
            }),
            Stage::Structure => local_structure(cfg, m.layers, m.epsilon, m.seed)
                .map_err(anyhow::Error::from)
                .and_then(|dec| {
                    write_csv(
                        &out_dir.join("decomposition.csv"),
                        "x,part_index",
                        &decomposition_rows(&dec),
                    )?;
                    Ok(format!(
                        "{} layers via p* = {}, {} exceptional, {} violations",
                        dec.parts.len(),
                        dec.p_star,
                        dec.exceptional.len(),
                        dec.violation_count()
                    ))
                }),
            Stage::Tower => build_tower(cfg, m.max_height, m.seed)
                .map_err(anyhow::Error::from)
                .and_then(|trace| {
                    write_csv(
                        &out_dir.join("trace.csv"),
                        "level,step_kind,delta,p_star,size",
                        &trace_rows(&trace),
                    )?;
                    tower_height = Some(trace.tower.levels.len());
                    tower_stop = Some(stop_reason_name(trace.stop).to_string());
                    Ok(format!(
                        "{} lifts over {} levels, stopped at {}",
                        trace.tower.levels.len(),
                        trace.configs.len(),
                        stop_reason_name(trace.stop)
                    ))
                }),
            Stage::Fit => fit_global(cfg, m.qmax, m.tol)
                .map_err(anyhow::Error::from)
                .and_then(|g| {
                    let summary = FitSummary {
                        a0: g.a0,
                        q0: g.q0,
                        t0: g.t0 * m.h as f64,
                        residual_sup: g.residual_sup,
                        coverage: g.coverage,
                    };
                    let mut text = serde_json::to_string_pretty(&summary)?;
                    text.push('\n');
                    fs::write(out_dir.join("fit.json"), text)?;
                    fit = Some(summary);
                    Ok(format!(
                        "a0/q0 = {}/{}, T0 = {}, coverage {}{}",
                        g.a0,
                        g.q0,
                        g.t0 * m.h as f64,
                        g.coverage,
                        if g.low_confidence { " (low confidence)" } else { "" }
                    ))
                }),
        };
        outcomes.push(match result {
            Ok(detail) => {
                StageOutcome { stage: stage.name().into(), status: "ok".into(), detail }
            }
            Err(e) => StageOutcome {
                stage: stage.name().into(),
                status: "failed".into(),
                detail: format!("{e:#}"),
            },
        });
    }

    let n = stats.len() as f64;
    let mean_sup_norm =
        stats.iter().map(|s| s.magnitude / m.h as f64).sum::<f64>() / n.max(1.0);
    let sigma_sup_norm = (stats
        .iter()
        .map(|s| (s.magnitude / m.h as f64 - mean_sup_norm).powi(2))
        .sum::<f64>()
        / n.max(1.0))
    .sqrt();
    let flag = if hits.is_empty() {
        "uniform at threshold"
    } else if fit.map_or(false, |f| f.coverage >= 0.9) {
        "structured"
    } else {
        "inconclusive"
    };
    let summary = Summary {
        function: m.function.to_string(),
        x: m.x,
        h: m.h,
        delta: m.delta,
        seed: m.seed,
        windows_scanned: stats.len(),
        hit_count: hits.len(),
        hit_density: hits.len() as f64 / n.max(1.0),
        mean_sup_norm,
        sigma_sup_norm,
        chosen_scale: choice.chosen.scale,
        scale_density: choice.chosen.density,
        relation_density,
        tower_height,
        tower_stop,
        fit,
        flag: flag.into(),
        stages: outcomes,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(out_dir.join("summary.json"), text)?;
    Ok(RunBundle { out_dir: out_dir.to_path_buf(), window_stats: stats, hits, choice, config, summary })
}

/// One row of the contrast table.
#[derive(Debug, Clone, Serialize)]
pub struct ContrastRow {
    pub metric: String,
    pub left: f64,
    pub right: f64,
}

/// Side-by-side metrics of two runs sharing (X, H).
#[derive(Debug, Clone)]
pub struct ContrastTable {
    pub left_label: String,
    pub right_label: String,
    pub rows: Vec<ContrastRow>,
}

impl ContrastTable {
    pub fn get(&self, metric: &str) -> Option<(f64, f64)> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| (r.left, r.right))
    }
}

/// Runs both manifests (into the `left/` and `right/` subdirectories of
/// `out_dir`) and writes the side-by-side table to contrast.csv.  The
/// manifests must share X and H.
pub fn contrast_report(
    a: &ExperimentManifest,
    b: &ExperimentManifest,
    out_dir: &Path,
    mode: Mode,
    cache_dir: Option<&Path>,
) -> Result<(ContrastTable, RunBundle, RunBundle)> {
    if a.x != b.x || a.h != b.h {
        bail!(
            "contrast manifests must share X and H (got X {} vs {}, H {} vs {})",
            a.x,
            b.x,
            a.h,
            b.h
        );
    }
    let left = run_pipeline(a, &out_dir.join("left"), mode, cache_dir)?;
    let right = run_pipeline(b, &out_dir.join("right"), mode, cache_dir)?;
    let metric = |name: &str, f: fn(&Summary) -> f64| ContrastRow {
        metric: name.to_string(),
        left: f(&left.summary),
        right: f(&right.summary),
    };
    let rows = vec![
        metric("mean_sup_norm", |s| s.mean_sup_norm),
        metric("sigma_sup_norm", |s| s.sigma_sup_norm),
        metric("hit_density", |s| s.hit_density),
        metric("relation_density", |s| s.relation_density.unwrap_or(0.0)),
        metric("fit_coverage", |s| s.fit.map_or(0.0, |f| f.coverage)),
    ];
    write_csv(
        &out_dir.join("contrast.csv"),
        "metric,left,right",
        &rows
            .iter()
            .map(|r| format!("{},{},{}", r.metric, r.left, r.right))
            .collect::<Vec<_>>(),
    )?;
    let table = ContrastTable {
        left_label: a.function.to_string(),
        right_label: b.function.to_string(),
        rows,
    };
    Ok((table, left, right))
}
