//! funiform: scan short intervals of multiplicative (and planted) data,
//! extract large Fourier coefficients, and drive the configuration,
//! cluster, graph, structure, and Dirichlet machinery from the command
//! line.  Negative analysis outcomes (no hits, no unbalanced path, empty
//! large-value set) are results and exit 0; only I/O and invariant
//! violations are errors.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use funiform_core::cluster::{candidate_pool, covering};
use funiform_core::config::Mode;
use funiform_core::dirichlet::{fit_global, large_value_scan};
use funiform_core::expsum::extract_hits;
use funiform_core::graph::{build_graph, find_unbalanced_closed_path};
use funiform_core::sieve::primes_in;
use funiform_core::structure::{build_tower, local_structure};

use funiform_cli::io::{read_config_jsonl, write_csv};
use funiform_cli::pipeline::{
    clusters_rows, contrast_report, decomposition_rows, edge_rows, relation_rows, run_pipeline,
    stop_reason_name, trace_rows,
};
use funiform_cli::{ExperimentManifest, FunctionSpec, Source};

#[derive(Parser)]
#[command(name = "funiform", version, about = "Fourier-uniformity experiments on short intervals")]
struct Cli {
    /// Experiment manifest (key=value lines), required by `run`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory; overrides the manifest's out_dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for parallel subroutines (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for randomized subroutines (path search, structure sampling).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Enforce full-scale preconditions when building configurations.
    #[arg(long, global = true, conflicts_with = "test_mode")]
    strict: bool,
    /// Accept desk-scale parameters (the default).
    #[arg(long, global = true)]
    test_mode: bool,
    /// Cache directory for sieved Liouville windows.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan [start, end) in stride-H windows and write the δ-hit table.
    Scan {
        #[arg(long)]
        start: u64,
        #[arg(long)]
        end: u64,
        #[arg(long = "H")]
        h: u64,
        #[arg(long)]
        delta: f64,
        /// liouville | planted:q0,a0,T0,noise | file:path
        #[arg(long, default_value = "liouville")]
        function: FunctionSpec,
        #[arg(long, default_value = "hits.csv")]
        out: PathBuf,
    },
    /// List the strong relations of a configuration.
    Relations {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
        #[arg(long, default_value = "relations.csv")]
        out: PathBuf,
    },
    /// Candidate pool and covering family of a configuration.
    Clusters {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "C", default_value_t = 0.4)]
        c: f64,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value = "clusters.csv")]
        out: PathBuf,
    },
    /// Export the relation graph edge list.
    Graph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "graph.csv")]
        export: PathBuf,
    },
    /// Search for an unbalanced closed path through a vertex.
    ClosedPath {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vertex: u64,
    },
    /// Layered decomposition of a configuration.
    Structure {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "L", default_value_t = 4)]
        l: usize,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value = "decomposition.csv")]
        out: PathBuf,
    },
    /// Lift-or-split tower trace of a configuration.
    Tower {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_height: usize,
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Large values of prime Dirichlet polynomials mod q.
    LvScan {
        #[arg(long = "P")]
        p: u64,
        #[arg(long)]
        q: u64,
        #[arg(long = "T", default_value_t = 10.0)]
        t_horizon: f64,
        #[arg(long)]
        threshold: f64,
        #[arg(long, default_value = "lv.csv")]
        out: PathBuf,
    },
    /// Fit a global pretentious frequency a0/q0 + T0/x to a configuration.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "Qmax", default_value_t = 20)]
        qmax: u64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Run the full pipeline described by --manifest.
    Run,
    /// Run two manifests sharing (X, H) and write the contrast table.
    Contrast { a: PathBuf, b: PathBuf },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().ok();
    }
    let mode = if cli.strict { Mode::Strict } else { Mode::Test };
    let cache_dir = cli.cache_dir.as_deref();

    match cli.command {
        Command::Scan { start, end, h, delta, function, out } => {
            let src = Source::from_spec(&function, cli.seed, cache_dir)?;
            let hits = extract_hits(&src, start, end, h, delta)?;
            let windows = (end - start) / h;
            write_csv(
                &out,
                "x,theta,magnitude,delta",
                &hits
                    .iter()
                    .map(|s| format!("{},{},{},{delta}", s.x, s.theta, s.magnitude))
                    .collect::<Vec<_>>(),
            )?;
            if hits.is_empty() {
                println!("0 hits in {windows} windows: uniform at threshold delta = {delta}");
            } else {
                println!("{} hits in {windows} windows -> {}", hits.len(), out.display());
            }
        }
        Command::Relations { config, threshold, out } => {
            let cfg = read_config_jsonl(&config, mode)?;
            let rels = cfg.relations(threshold)?;
            write_csv(&out, "x,y,p,q,strength", &relation_rows(&rels))?;
            let denom = cfg.len() as f64 * (cfg.ambient.primes.len() as f64).powi(2);
            println!(
                "{} strong relations at threshold {threshold}, density {} -> {}",
                rels.len(),
                rels.len() as f64 / denom,
                out.display()
            );
        }
        Command::Clusters { config, c, eta, out } => {
            let cfg = read_config_jsonl(&config, mode)?;
            let (pool, stats) = candidate_pool(&cfg, c, eta)?;
            let family = covering(&cfg, c, eta)?;
            write_csv(&out, "x,p,cluster_id,family_tag", &clusters_rows(&pool, &family))?;
            println!(
                "{} pool clusters ({} of {} kept), {} covering clusters (total size {} <= bound {}) -> {}",
                pool.len(),
                stats.kept,
                stats.generated,
                family.clusters.len(),
                family.total_size,
                family.size_bound,
                out.display()
            );
        }
        Command::Graph { config, export } => {
            let cfg = read_config_jsonl(&config, mode)?;
            let g = build_graph(&cfg)?;
            write_csv(&export, "x,y,p,q", &edge_rows(&g))?;
            println!(
                "{} vertices, {} edges -> {}",
                g.vertex_count(),
                g.edge_count(),
                export.display()
            );
        }
        Command::ClosedPath { config, vertex } => {
            let cfg = read_config_jsonl(&config, mode)?;
            let g = build_graph(&cfg)?;
            let budget = g.default_path_budget();
            match find_unbalanced_closed_path(&g, vertex, budget, cli.seed) {
                Some(path) => {
                    let verts: Vec<String> =
                        path.vertices.iter().map(|v| v.to_string()).collect();
                    println!(
                        "unbalanced closed path through {vertex} (length {}): {}",
                        path.prime_seq_p.len(),
                        verts.join(" -> ")
                    );
                    println!("R = {}, S = {}, R/S = {}", path.r, path.s, path.ratio());
                }
                None => println!(
                    "no unbalanced closed path through {vertex} within budget {budget}"
                ),
            }
        }
        Command::Structure { config, l, epsilon, out } => {
            let cfg = read_config_jsonl(&config, mode)?;
            let dec = local_structure(&cfg, l, epsilon, cli.seed)?;
            write_csv(&out, "x,part_index", &decomposition_rows(&dec))?;
            println!(
                "{} layers via p* = {}, {} of {} points exceptional, {} violations (within budget: {}) -> {}",
                dec.parts.len(),
                dec.p_star,
                dec.exceptional.len(),
                cfg.len(),
                dec.violation_count(),
                dec.within_budget,
                out.display()
            );
        }
        Command::Tower { config, max_height, out } => {
            let cfg = read_config_jsonl(&config, mode)?;
            let trace = build_tower(&cfg, max_height, cli.seed)?;
            write_csv(&out, "level,step_kind,delta,p_star,size", &trace_rows(&trace))?;
            println!(
                "{} lifts over {} levels, stopped at {} -> {}",
                trace.tower.levels.len(),
                trace.configs.len(),
                stop_reason_name(trace.stop),
                out.display()
            );
        }
        Command::LvScan { p, q, t_horizon, threshold, out } => {
            let primes = primes_in(p)?;
            let set = large_value_scan(&primes, q, t_horizon, threshold)?;
            write_csv(
                &out,
                "q,chi_index,t,magnitude",
                &set.pairs
                    .iter()
                    .map(|lv| format!("{q},{},{},{}", lv.chi_index, lv.t, lv.magnitude))
                    .collect::<Vec<_>>(),
            )?;
            if set.pairs.is_empty() {
                println!(
                    "empty large-value set mod {q} at threshold {threshold} over |t| <= {t_horizon}"
                );
            } else {
                println!(
                    "{} large values mod {q} at threshold {threshold} -> {}",
                    set.pairs.len(),
                    out.display()
                );
            }
        }
        Command::Fit { config, qmax, tol } => {
            let cfg = read_config_jsonl(&config, mode)?;
            let fit = fit_global(&cfg, qmax, tol)?;
            // Standalone fits report T0 in configuration units (the file
            // carries no window length to rescale by).
            let json = serde_json::json!({
                "a0": fit.a0,
                "q0": fit.q0,
                "T0": fit.t0,
                "residual_sup": fit.residual_sup,
                "coverage": fit.coverage,
            });
            println!("{}", serde_json::to_string_pretty(&json)?);
            if fit.low_confidence {
                eprintln!("warning: low-confidence fit (coverage {})", fit.coverage);
            }
        }
        Command::Run => {
            let path = cli.manifest.context("--manifest is required for `run`")?;
            let m = ExperimentManifest::load(&path)?;
            let out_dir = cli
                .out_dir
                .or_else(|| m.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("funiform-out"));
            let bundle = run_pipeline(&m, &out_dir, mode, cache_dir)?;
            println!(
                "{}: {} hits in {} windows, mean sup/H = {}",
                bundle.summary.flag,
                bundle.summary.hit_count,
                bundle.summary.windows_scanned,
                bundle.summary.mean_sup_norm
            );
            for o in &bundle.summary.stages {
                println!("  {:<10} {:<8} {}", o.stage, o.status, o.detail);
            }
            println!("artifacts in {}", out_dir.display());
        }
        Command::Contrast { a, b } => {
            let ma = ExperimentManifest::load(&a)?;
            let mb = ExperimentManifest::load(&b)?;
            let out_dir = cli.out_dir.unwrap_or_else(|| PathBuf::from("funiform-contrast"));
            let (table, _, _) = contrast_report(&ma, &mb, &out_dir, mode, cache_dir)?;
            println!("{:<18} {:>14} {:>14}", "metric", "left", "right");
            for row in &table.rows {
                println!("{:<18} {:>14.6} {:>14.6}", row.metric, row.left, row.right);
            }
            println!("left = {}, right = {}", table.left_label, table.right_label);
            println!("artifacts in {}", out_dir.display());
        }
    }
    Ok(())
}
