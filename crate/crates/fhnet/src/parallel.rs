//! Rayon-backed versions of the embarrassingly parallel steps. Results are
//! collected in input order, so output never depends on scheduling.

use fhnet_core::cv::{run_fold, FoldModel, FoldReport, Item};
use fhnet_core::hrv::{compute_features, HrvFeatures};
use fhnet_core::rr::{FoldAssignment, RrSegment};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

pub fn features_for(segments: &[&RrSegment]) -> Result<Vec<HrvFeatures>> {
    segments
        .par_iter()
        .map(|s| {
            compute_features(&s.intervals).map_err(|e| {
                Error::Model(fhnet_core::Error::Validation {
                    segment: s.segment_id.clone(),
                    msg: e.to_string(),
                })
            })
        })
        .collect()
}

/// Folds run concurrently; the report lists them by index.
pub fn cross_validate(
    items: &[Item<'_>],
    folds: &FoldAssignment,
    model: &dyn FoldModel,
    threshold: f64,
) -> Result<FoldReport> {
    let outcomes = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let out = run_fold(items, folds, f, model, threshold);
            if let Ok(o) = &out {
                log::info!("fold {f}: auc {:?}", o.segment.auc);
            }
            out
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(FoldReport::assemble(outcomes, threshold))
}
