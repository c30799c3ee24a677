//! Experiment manifests: plain-text key=value files with # comments that
//! fully determine a run byte-for-byte given the same build.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// The scanned function: Liouville λ, a planted pretentious phase, or a
/// file of precomputed values.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionSpec {
    Liouville,
    /// f(n) = e(a₀·n/q₀ + T₀·ln n + noise·u_n) with u_n seeded uniform in
    /// [−1/2, 1/2): the window at x concentrates at θ ≈ a₀/q₀ + T₀/x.
    Planted { q0: u64, a0: u64, t0: f64, noise: f64 },
    /// JSON-lines records {"n":…, "re":…, "im":…}, one per integer.
    File(PathBuf),
}

impl FromStr for FunctionSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "liouville" {
            return Ok(FunctionSpec::Liouville);
        }
        if let Some(rest) = s.strip_prefix("planted:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 4 {
                bail!("planted spec needs q0,a0,T0,noise; got {rest:?}");
            }
            let q0: u64 = parts[0].trim().parse().context("planted q0")?;
            let a0: u64 = parts[1].trim().parse().context("planted a0")?;
            let t0: f64 = parts[2].trim().parse().context("planted T0")?;
            let noise: f64 = parts[3].trim().parse().context("planted noise")?;
            if q0 == 0 {
                bail!("planted q0 must be positive");
            }
            if a0 >= q0 && q0 > 1 || num_integer::gcd(a0, q0) != 1 {
                bail!("planted a0 = {a0} is not a unit mod {q0}");
            }
            if !t0.is_finite() || !(noise.is_finite() && noise >= 0.0) {
                bail!("planted T0 and noise must be finite, noise ≥ 0");
            }
            return Ok(FunctionSpec::Planted { q0, a0, t0, noise });
        }
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                bail!("file spec needs a path");
            }
            return Ok(FunctionSpec::File(PathBuf::from(path)));
        }
        bail!("unknown function spec {s:?} (expected liouville | planted:q0,a0,T0,noise | file:path)")
    }
}

impl fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionSpec::Liouville => write!(f, "liouville"),
            FunctionSpec::Planted { q0, a0, t0, noise } => {
                write!(f, "planted:{q0},{a0},{t0},{noise}")
            }
            FunctionSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Optional analysis stages of the pipeline; the spine (extraction, scale
/// choice, configuration) always runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Relations,
    Clusters,
    Graph,
    Structure,
    Tower,
    Fit,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Relations,
        Stage::Clusters,
        Stage::Graph,
        Stage::Structure,
        Stage::Tower,
        Stage::Fit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Relations => "relations",
            Stage::Clusters => "clusters",
            Stage::Graph => "graph",
            Stage::Structure => "structure",
            Stage::Tower => "tower",
            Stage::Fit => "fit",
        }
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .with_context(|| format!("unknown stage {s:?}"))
    }
}

/// A fully-specified experiment: function, window geometry, thresholds,
/// stage list, and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub function: FunctionSpec,
    /// Range start X; windows are scanned at stride H from here.
    pub x: u64,
    pub h: u64,
    pub delta: f64,
    /// Number of stride-H windows; the scan range is [X, X + windows·H).
    pub windows: u64,
    /// Scale override restricting choose_scale's grid to one P.
    pub scale: Option<u64>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub stages: Vec<Stage>,
    /// Relation threshold for the relations/graph stages.
    pub threshold: f64,
    /// Covering parameters.
    pub c: f64,
    pub eta: f64,
    /// Decomposition parameters.
    pub layers: usize,
    pub epsilon: f64,
    pub max_height: usize,
    /// Global-fit parameters.
    pub qmax: u64,
    pub tol: f64,
}

impl ExperimentManifest {
    /// A manifest with defaults for everything but the function and the
    /// window geometry.
    pub fn new(function: FunctionSpec, x: u64, h: u64, delta: f64, windows: u64) -> Self {
        ExperimentManifest {
            function,
            x,
            h,
            delta,
            windows,
            scale: None,
            seed: 0,
            out_dir: None,
            stages: Stage::ALL.to_vec(),
            threshold: 0.1,
            c: 0.4,
            eta: 0.1,
            layers: 4,
            epsilon: 0.1,
            max_height: 8,
            qmax: 20,
            tol: 1e-3,
        }
    }

    /// End of the scanned range, X + windows·H.
    pub fn range_end(&self) -> u64 {
        self.x + self.windows * self.h
    }

    pub fn validate(&self) -> Result<()> {
        if self.x < 1 {
            bail!("x must be positive");
        }
        if self.h < 2 {
            bail!("h must be at least 2");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bail!("delta {} outside (0, 1)", self.delta);
        }
        if self.windows < 2 {
            bail!("windows must be at least 2 (scan range must cover 2H)");
        }
        if !(self.threshold > 0.0 && self.threshold <= 0.5) {
            bail!("threshold {} outside (0, 0.5]", self.threshold);
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            bail!("tol must be positive");
        }
        Ok(())
    }

    /// Parses the plain-text key=value format; # starts a comment and
    /// blank lines are skipped.  Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut function = None;
        let mut x = None;
        let mut h = None;
        let mut delta = None;
        let mut windows = None;
        let mut draft = ExperimentManifest::new(FunctionSpec::Liouville, 1, 2, 0.5, 2);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("line {}: key {key}", lineno + 1);
            match key {
                "function" => function = Some(value.parse().with_context(ctx)?),
                "x" | "X" => x = Some(value.parse().with_context(ctx)?),
                "h" | "H" => h = Some(value.parse().with_context(ctx)?),
                "delta" => delta = Some(value.parse().with_context(ctx)?),
                "windows" => windows = Some(value.parse().with_context(ctx)?),
                "scale" => draft.scale = Some(value.parse().with_context(ctx)?),
                "seed" => draft.seed = value.parse().with_context(ctx)?,
                "out_dir" => draft.out_dir = Some(PathBuf::from(value)),
                "stages" => {
                    draft.stages = value
                        .split(',')
                        .map(|s| s.trim().parse())
                        .collect::<Result<Vec<Stage>>>()
                        .with_context(ctx)?;
                }
                "threshold" => draft.threshold = value.parse().with_context(ctx)?,
                "c" | "C" => draft.c = value.parse().with_context(ctx)?,
                "eta" => draft.eta = value.parse().with_context(ctx)?,
                "layers" => draft.layers = value.parse().with_context(ctx)?,
                "epsilon" => draft.epsilon = value.parse().with_context(ctx)?,
                "max_height" => draft.max_height = value.parse().with_context(ctx)?,
                "qmax" => draft.qmax = value.parse().with_context(ctx)?,
                "tol" => draft.tol = value.parse().with_context(ctx)?,
                other => bail!("line {}: unknown key {other:?}", lineno + 1),
            }
        }
        draft.function = function.context("manifest is missing `function`")?;
        draft.x = x.context("manifest is missing `x`")?;
        draft.h = h.context("manifest is missing `h`")?;
        draft.delta = delta.context("manifest is missing `delta`")?;
        // Default: scan the full octave [X, 2X).
        draft.windows = windows.unwrap_or(draft.x / draft.h.max(1));
        draft.validate()?;
        Ok(draft)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
