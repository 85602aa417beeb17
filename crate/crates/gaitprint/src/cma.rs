//! Correlation and multiplicity adjustment for grid-cell coefficients.
//!
//! Simultaneous confidence intervals beta_g +/- q * se_g use the
//! equicoordinate quantile q of a mean-zero multivariate normal with the
//! coefficients' correlation matrix: the smallest q with
//! P(max_g |Z_g| <= q) = 1 - alpha. The quantile is estimated by Monte Carlo
//! with a chunked, substreamed generator, so results are identical for any
//! thread count. Cells whose adjusted interval excludes zero form the
//! subject's fingerprint.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::LogisticFit;
use crate::gridcells::{CellIndex, GridSpec};
use crate::linalg::sqrt_psd;
use crate::rng::stream_rng;
use crate::stats::{empirical_quantile, normal_quantile};

/// Monte Carlo settings for the equicoordinate quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McSettings {
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            n_mc: 2_000_000,
            seed: 0,
        }
    }
}

/// An estimated quantile with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub q: f64,
    pub mc_se: f64,
}

/// Correlation matrix of a covariance matrix. Diagonal entries must be
/// strictly positive; off-diagonal results are clamped into [-1, 1] to absorb
/// rounding at perfect correlation.
pub fn correlation_from_cov(cov: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (r, c) = cov.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square, got {r}x{c}"
        )));
    }
    let mut sd = Array1::<f64>::zeros(r);
    for i in 0..r {
        let v = cov[[i, i]];
        if !(v > 0.0) {
            return Err(Error::Numerical(format!(
                "covariance diagonal entry {i} is {v}; needs positive variance"
            )));
        }
        sd[i] = v.sqrt();
    }
    let mut corr = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        for j in 0..r {
            let val = 0.5 * (cov[[i, j]] + cov[[j, i]]) / (sd[i] * sd[j]);
            corr[[i, j]] = val.clamp(-1.0, 1.0);
        }
        corr[[i, i]] = 1.0;
    }
    Ok(corr)
}

const MC_CHUNK: usize = 4096;

/// Equicoordinate two-sided quantile of N(0, C) at level 1 - alpha, by Monte
/// Carlo. `corr` must be a correlation matrix; indefinite inputs have
/// negative eigenvalues clipped to zero with a warning.
pub fn equicoordinate_quantile(
    corr: ArrayView2<f64>,
    alpha: f64,
    mc: &McSettings,
) -> Result<QuantileEstimate> {
    let g = corr.nrows();
    if corr.ncols() != g || g == 0 {
        return Err(Error::DimensionMismatch(format!(
            "correlation must be square and non-empty, got {:?}",
            corr.dim()
        )));
    }
    for i in 0..g {
        if (corr[[i, i]] - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!(
                "correlation diagonal entry {i} is {}, expected 1",
                corr[[i, i]]
            )));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    if mc.n_mc < 1000 {
        return Err(Error::Config(format!(
            "n_mc {} is too small for a stable quantile",
            mc.n_mc
        )));
    }
    let (root, clipped) = sqrt_psd(corr)?;
    if clipped > 0 {
        log::warn!("correlation matrix had {clipped} negative eigenvalues clipped to zero");
    }

    let n_chunks = mc.n_mc.div_ceil(MC_CHUNK);
    let chunk_ids: Vec<usize> = (0..n_chunks).collect();
    let seed = mc.seed;
    let chunks: Vec<Vec<f64>> = crate::par_map(&chunk_ids, |&k| {
        let size = if k + 1 == n_chunks && mc.n_mc % MC_CHUNK != 0 {
            mc.n_mc % MC_CHUNK
        } else {
            MC_CHUNK
        };
        let mut rng = stream_rng(seed, k as u64);
        // Draws are columns so each draw consumes g consecutive normals.
        let eps = Array2::from_shape_fn((size, g), |_| rng.sample::<f64, _>(StandardNormal));
        let z = eps.dot(&root);
        (0..size)
            .map(|d| z.row(d).iter().fold(0.0f64, |m, &v| m.max(v.abs())))
            .collect()
    });
    let mut maxima: Vec<f64> = chunks.into_iter().flatten().collect();
    maxima.sort_unstable_by(f64::total_cmp);

    let p = 1.0 - alpha;
    let n = maxima.len() as f64;
    let q = empirical_quantile(&maxima, p);
    // Order-statistic interval for the p-quantile, converted to a standard
    // error: half-width of a 95% CI over z_0.975.
    let z975 = normal_quantile(0.975).expect("0.975 is in range");
    let half = z975 * (p * (1.0 - p) / n).sqrt();
    let lo = empirical_quantile(&maxima, (p - half).max(1.0 / n));
    let hi = empirical_quantile(&maxima, (p + half).min(1.0 - 1.0 / n));
    Ok(QuantileEstimate {
        q,
        mc_se: (hi - lo) / (2.0 * z975),
    })
}

/// One coefficient's adjusted and unadjusted intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellInterval {
    pub cell: CellIndex,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub lo_unadjusted: f64,
    pub hi_unadjusted: f64,
    pub significant: bool,
    pub significant_unadjusted: bool,
}

/// Simultaneous intervals for one subject's grid-cell coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmaResult {
    pub subject_id: String,
    pub alpha: f64,
    /// Equicoordinate quantile actually applied; never below `z`.
    pub q: f64,
    pub mc_se: f64,
    /// Unadjusted two-sided normal quantile at the same level.
    pub z: f64,
    pub n_mc: usize,
    pub intervals: Vec<CellInterval>,
    pub n_significant: usize,
    pub n_significant_unadjusted: usize,
}

/// Builds simultaneous confidence intervals for the non-intercept
/// coefficients of a fitted one-vs-rest model. `cells` names the coefficient
/// columns in design order. The quantile uses the correlation of the
/// coefficient covariance with the intercept excluded.
pub fn cma_intervals(
    subject_id: &str,
    fit: &LogisticFit,
    cells: &[CellIndex],
    alpha: f64,
    mc: &McSettings,
) -> Result<CmaResult> {
    let p = fit.n_coef();
    if cells.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} cells for {p} model coefficients",
            cells.len()
        )));
    }
    if p == 0 {
        return Err(Error::Data("model has no grid-cell coefficients".to_string()));
    }
    if !fit.converged {
        log::warn!("subject '{subject_id}': fit had not converged; intervals may be off");
    }
    let sub = fit.cov.slice(ndarray::s![1.., 1..]);
    let corr = correlation_from_cov(sub)?;
    let est = equicoordinate_quantile(corr.view(), alpha, mc)?;
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    // The equicoordinate quantile of any correlation matrix is at least the
    // single-coordinate quantile; Monte Carlo noise must not undercut it.
    let q = est.q.max(z);

    let mut intervals = Vec::with_capacity(p);
    let mut n_sig = 0;
    let mut n_sig_un = 0;
    for g_idx in 0..p {
        let se = fit.cov[[g_idx + 1, g_idx + 1]].sqrt();
        let b = fit.beta[g_idx + 1];
        let (lo, hi) = (b - q * se, b + q * se);
        let (lo_u, hi_u) = (b - z * se, b + z * se);
        let significant = lo > 0.0 || hi < 0.0;
        let significant_unadjusted = lo_u > 0.0 || hi_u < 0.0;
        n_sig += significant as usize;
        n_sig_un += significant_unadjusted as usize;
        intervals.push(CellInterval {
            cell: cells[g_idx],
            estimate: b,
            se,
            lo,
            hi,
            lo_unadjusted: lo_u,
            hi_unadjusted: hi_u,
            significant,
            significant_unadjusted,
        });
    }
    Ok(CmaResult {
        subject_id: subject_id.to_string(),
        alpha,
        q,
        mc_se: est.mc_se,
        z,
        n_mc: mc.n_mc,
        intervals,
        n_significant: n_sig,
        n_significant_unadjusted: n_sig_un,
    })
}

/// Fingerprint data for rendering: per subject, the screened-in cells with
/// their estimates and significance flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerprintReport {
    pub grid: GridSpec,
    pub alpha: f64,
    pub subjects: Vec<CmaResult>,
}

/// Bundles per-subject interval results for export, sorted by subject id.
pub fn fingerprint_report(mut results: Vec<CmaResult>, grid: &GridSpec) -> FingerprintReport {
    results.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let alpha = results.first().map_or(0.05, |r| r.alpha);
    FingerprintReport {
        grid: grid.clone(),
        alpha,
        subjects: results,
    }
}
