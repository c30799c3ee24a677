//! Pipeline orchestration for the funiform toolkit: experiment manifests,
//! function-value sources, the end-to-end run from sieve to global fit,
//! and tabular outputs.  Identical manifest and seed produce byte-identical
//! output files.

pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod source;

pub use manifest::{ExperimentManifest, FunctionSpec, Stage};
pub use pipeline::{contrast_report, run_pipeline, ContrastTable, RunBundle, Summary};
pub use source::Source;
