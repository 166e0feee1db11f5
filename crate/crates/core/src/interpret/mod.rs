//! Signed Shapley attributions over gene-aligned input groups, gene
//! rankings and pre-ranked gene set enrichment.

mod gsea;
mod report;
mod shapley;

pub use gsea::{
    aggregate_signed, enrichment_score, gsea_preranked, parse_gmt, read_gmt, running_sum, Direction, GeneRanking,
    GeneSet, GseaConfig, GseaOutput, GseaResult, SkippedSet, ES_TIE_TOL,
};
pub use report::{
    cap_per_cell, explain_report, stratified_background, write_report, EstimatorChoice, ExplainConfig, ExplainReport,
    Target,
};
pub use shapley::{
    exact_shapley, sampled_shapley, Background, BackgroundSpec, EstimatorInfo, Explainer, Sample, ShapAttribution,
    MAX_EXACT_GROUPS,
};

use crate::error::{Error, Result};

/// Runs `f` on a dedicated pool of `workers` threads.
fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?
        .install(f)
}
