//! End-to-end runs over a single JSON config.
//!
//! A run directory holds:
//!
//! ```text
//! config.json            resolved config
//! manifest.json          sample ids, sources, splits, content hashes
//! samples/<id>.a3dc      cached encoder points, queries and oracle grid
//! stage1.a3dc            autoencoder, rewritten every epoch, with val IoU
//! sequences.json         codebook indices per sample
//! stage2.a3dc            prior, rewritten every epoch
//! generated/<id>.obj     sampled meshes plus <id>.json sidecars
//! reconstructions/       reconstructed meshes and iou.csv
//! evaluation/            report.json and report.txt
//! ```

mod config;
mod manifest;
mod project;

pub use config::{
    Conditioning, DatasetConfig, DatasetSource, EvaluationConfig, PriorConfig, ProjectConfig, SamplingConfig,
};
pub use manifest::{
    cache_file_name, CachedSample, DatasetManifest, ManifestEntry, PrepareReport, SampleFailure, SampleSource, Split,
    MAX_FAILURE_FRACTION,
};
pub use project::{
    ConditionSpec, EvaluateRequest, LatentSequence, LatentSequences, Project, ReconstructReport, ReconstructRequest,
    ReconstructionRow, RunSummary, SampleRecord, IOU_GATE, METRIC_NAMES,
};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_GATE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Environment variable capping every worker pool.
pub const THREADS_ENV: &str = "ARGUS3D_THREADS";

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Gate { .. } => EXIT_GATE,
        Error::Numeric { .. } | Error::Diverged { .. } => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

/// Sizes the global rayon pool from [`THREADS_ENV`] when it is set. Returns
/// the pool size.
pub fn init_threads() -> Result<usize> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(rayon::current_num_threads());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    Ok(n)
}
