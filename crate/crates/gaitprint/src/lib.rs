//! Gait identification from high-resolution wrist accelerometry.
//!
//! The pipeline turns raw (x, y, z) samples into second-level vector-magnitude
//! frames, expands each frame into its empirical autocorrelation lag map,
//! summarizes lag maps either as grid-cell counts or as functional covariates
//! over a tensor-product B-spline basis, fits one-vs-rest logistic models per
//! subject, and identifies the subject of unlabeled seconds by averaged
//! posterior probabilities. Interval estimates over the grid cells use a
//! correlation-and-multiplicity adjustment so that the significant cells can
//! be read as a visual fingerprint of a subject's walking style.
//!
//! All randomized steps (splits, Monte Carlo quantiles, cross-validation
//! folds) are driven by explicit seeds and are deterministic for a given seed
//! regardless of thread count.

pub mod cma;
pub mod error;
pub mod funreg;
pub mod glm;
pub mod gridcells;
pub mod identify;
pub mod ingest;
pub mod lagmap;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod stats;
pub mod store;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};

/// Parallel iteration shim: with the `parallel` feature this maps a slice
/// through rayon, otherwise it falls back to a sequential loop. Output order
/// matches input order in both cases.
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(|t| f(t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(|t| f(t)).collect()
    }
}
