//! One-vs-rest logistic regression via penalized iteratively reweighted
//! least squares.
//!
//! The IRLS core solves (X'WX + 2Q) beta = X'Wz with step-halving on the
//! penalized deviance, for an arbitrary positive semidefinite penalty Q that
//! never touches the intercept. The grid-cell pipeline uses Q = ridge * I on
//! standardized predictors; the functional pipeline passes its smoothing
//! penalty through the same core.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, inverse_spd};
use crate::stats::{expit, log1pexp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative change in penalized deviance that counts as converged.
    pub tol: f64,
    /// Ridge weight on non-intercept coefficients (standardized scale when
    /// `standardize` is on). Keeps separable one-vs-rest problems finite.
    pub ridge: f64,
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 100,
            tol: 1e-9,
            ridge: 1e-6,
            standardize: true,
        }
    }
}

/// A fitted logistic model on the original predictor scale. `beta[0]` is the
/// intercept; `beta[1..]` aligns with `column_names`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticFit {
    pub column_names: Vec<String>,
    pub beta: Array1<f64>,
    /// Inverse penalized information at the optimum, mapped to the original
    /// scale, (p+1) x (p+1) including the intercept.
    pub cov: Array2<f64>,
    /// Unpenalized residual deviance.
    pub deviance: f64,
    pub converged: bool,
    pub n_iter: usize,
    /// Penalized deviance after each accepted IRLS step, starting at the
    /// initial iterate. Non-increasing up to step-halving exhaustion.
    pub deviance_trace: Vec<f64>,
    pub n_obs: usize,
}

impl LogisticFit {
    pub fn n_coef(&self) -> usize {
        self.beta.len() - 1
    }
}

pub(crate) struct IrlsOutcome {
    pub beta: Array1<f64>,
    pub cov: Array2<f64>,
    pub deviance: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
}

/// Deviance of labels `y` against linear predictors `eta`, computed from eta
/// directly so extreme predictors cannot produce log(0).
pub(crate) fn deviance_from_eta(y: ArrayView1<f64>, eta: &Array1<f64>) -> f64 {
    let mut dev = 0.0;
    for (&yi, &e) in y.iter().zip(eta.iter()) {
        // -2 [y log p + (1-y) log(1-p)] with log p = -log1pexp(-eta).
        dev += 2.0 * (log1pexp(e) - yi * e);
    }
    dev
}

/// Penalized IRLS on a design that already contains its intercept column.
/// `penalty` is Q in the objective l(beta) - beta' Q beta; its intercept row
/// and column must be zero.
pub(crate) fn penalized_irls(
    x: &Array2<f64>,
    y: ArrayView1<f64>,
    penalty: &Array2<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<IrlsOutcome> {
    let (n, p1) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but y has {}",
            y.len()
        )));
    }
    if penalty.dim() != (p1, p1) {
        return Err(Error::DimensionMismatch(format!(
            "penalty is {:?}, expected ({p1}, {p1})",
            penalty.dim()
        )));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleClass {
            class: if ones == 0 { 0 } else { 1 },
        });
    }

    let pen_dev = |beta: &Array1<f64>, eta: &Array1<f64>| -> f64 {
        deviance_from_eta(y, eta) + 2.0 * beta.dot(&penalty.dot(beta))
    };

    let ybar = ones as f64 / n as f64;
    let mut beta = Array1::<f64>::zeros(p1);
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut eta = x.dot(&beta);
    let mut pd = pen_dev(&beta, &eta);
    let mut trace = vec![pd];
    let mut converged = false;
    let mut n_iter = 0;

    let mut w = Array1::<f64>::zeros(n);
    let mut z = Array1::<f64>::zeros(n);
    for iter in 1..=max_iter {
        n_iter = iter;
        for i in 0..n {
            let p = expit(eta[i]);
            let wi = (p * (1.0 - p)).max(1e-10);
            w[i] = wi;
            z[i] = eta[i] + (y[i] - p) / wi;
        }
        // A = X'WX + 2Q, rhs = X'Wz.
        let xw = {
            let mut xw = x.clone();
            for (mut row, &wi) in xw.axis_iter_mut(Axis(0)).zip(w.iter()) {
                row.mapv_inplace(|v| v * wi);
            }
            xw
        };
        let mut a = x.t().dot(&xw);
        a.scaled_add(2.0, penalty);
        let rhs = xw.t().dot(&z);
        let l = cholesky(a.view()).map_err(|e| {
            Error::Numerical(format!("IRLS normal equations not solvable: {e}"))
        })?;
        let mut proposal = cholesky_solve(&l, &rhs);
        let mut eta_new = x.dot(&proposal);
        let mut pd_new = pen_dev(&proposal, &eta_new);
        // Step-halving keeps the penalized deviance from increasing.
        let mut halvings = 0;
        while pd_new > pd + 1e-12 * (1.0 + pd.abs()) && halvings < 30 {
            proposal = 0.5 * (&proposal + &beta);
            eta_new = x.dot(&proposal);
            pd_new = pen_dev(&proposal, &eta_new);
            halvings += 1;
        }
        beta = proposal;
        eta = eta_new;
        let rel = (pd - pd_new).abs() / (0.1 + pd_new.abs());
        pd = pd_new;
        trace.push(pd);
        if rel < tol {
            converged = true;
            break;
        }
    }

    // Covariance from the penalized information at the final iterate.
    for i in 0..n {
        let p = expit(eta[i]);
        w[i] = (p * (1.0 - p)).max(1e-10);
    }
    let xw = {
        let mut xw = x.clone();
        for (mut row, &wi) in xw.axis_iter_mut(Axis(0)).zip(w.iter()) {
            row.mapv_inplace(|v| v * wi);
        }
        xw
    };
    let mut a = x.t().dot(&xw);
    a.scaled_add(2.0, penalty);
    let cov = inverse_spd(a.view())
        .map_err(|e| Error::Numerical(format!("information matrix not invertible: {e}")))?;

    Ok(IrlsOutcome {
        deviance: deviance_from_eta(y, &eta),
        beta,
        cov,
        trace,
        converged,
        n_iter,
    })
}

/// Fits a ridge-penalized logistic regression of `y` on `x` (no intercept
/// column; one is added internally). `column_names` must match the columns
/// of `x`.
pub fn fit_logistic_irls(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    column_names: &[String],
    cfg: &FitConfig,
) -> Result<LogisticFit> {
    let (n, p) = x.dim();
    if column_names.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{p} design columns but {} names",
            column_names.len()
        )));
    }
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 rows to fit, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("design matrix contains non-finite values".to_string()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data("response must be coded 0/1".to_string()));
    }
    if !(cfg.ridge >= 0.0) || !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::Config(
            "fit config needs ridge >= 0, tol > 0, max_iter >= 1".to_string(),
        ));
    }

    let (mean, std) = if cfg.standardize {
        let mean = x.mean_axis(Axis(0)).expect("n >= 2");
        let mut std = Array1::<f64>::zeros(p);
        for k in 0..p {
            let col = x.column(k);
            let m = mean[k];
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0);
            let s = var.sqrt();
            // Constant columns get scale 1; the ridge keeps them identified.
            std[k] = if s > 0.0 { s } else { 1.0 };
        }
        (mean, std)
    } else {
        (Array1::zeros(p), Array1::ones(p))
    };

    let mut xa = Array2::<f64>::ones((n, p + 1));
    for i in 0..n {
        for k in 0..p {
            xa[[i, k + 1]] = (x[[i, k]] - mean[k]) / std[k];
        }
    }
    let mut q = Array2::<f64>::zeros((p + 1, p + 1));
    for k in 1..=p {
        q[[k, k]] = cfg.ridge;
    }

    let out = penalized_irls(&xa, y, &q, cfg.max_iter, cfg.tol)?;
    if !out.converged {
        log::warn!(
            "logistic fit did not converge in {} iterations (relative tol {})",
            cfg.max_iter,
            cfg.tol
        );
    }

    // Map coefficients and covariance back to the original predictor scale:
    // beta_k = b_k / s_k, beta_0 = b_0 - sum_k b_k m_k / s_k.
    let mut jac = Array2::<f64>::zeros((p + 1, p + 1));
    jac[[0, 0]] = 1.0;
    for k in 1..=p {
        jac[[0, k]] = -mean[k - 1] / std[k - 1];
        jac[[k, k]] = 1.0 / std[k - 1];
    }
    let beta = jac.dot(&out.beta);
    let cov = jac.dot(&out.cov).dot(&jac.t());

    Ok(LogisticFit {
        column_names: column_names.to_vec(),
        beta,
        cov,
        deviance: out.deviance,
        converged: out.converged,
        n_iter: out.n_iter,
        deviance_trace: out.trace,
        n_obs: n,
    })
}

/// Positive-class probability for each row of `x_new`.
pub fn predict_prob(fit: &LogisticFit, x_new: ArrayView2<f64>) -> Result<Array1<f64>> {
    let (n, p) = x_new.dim();
    if p != fit.n_coef() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} predictors, new data has {p}",
            fit.n_coef()
        )));
    }
    let mut probs = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut eta = fit.beta[0];
        for k in 0..p {
            eta += fit.beta[k + 1] * x_new[[i, k]];
        }
        probs[i] = expit(eta);
    }
    Ok(probs)
}

/// One logistic fit per subject, each against the rest of the training rows.
/// Fits run in parallel; results are keyed by subject id, so the outcome does
/// not depend on scheduling.
pub fn one_vs_rest_fit(
    x: &Array2<f64>,
    index: &[(String, u32)],
    column_names: &[String],
    cfg: &FitConfig,
) -> Result<BTreeMap<String, LogisticFit>> {
    if index.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} index entries for {} design rows",
            index.len(),
            x.nrows()
        )));
    }
    let mut subjects: Vec<String> = index.iter().map(|(s, _)| s.clone()).collect();
    subjects.sort();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::Data(
            "one-vs-rest needs at least two subjects".to_string(),
        ));
    }
    let results = crate::par_map(&subjects, |subject| {
        let y = Array1::from_iter(
            index
                .iter()
                .map(|(s, _)| if s == subject { 1.0 } else { 0.0 }),
        );
        fit_logistic_irls(x.view(), y.view(), column_names, cfg)
            .map_err(|e| Error::Subject {
                subject: subject.clone(),
                message: e.to_string(),
            })
    });
    let mut fits = BTreeMap::new();
    for (subject, result) in subjects.into_iter().zip(results) {
        fits.insert(subject, result?);
    }
    Ok(fits)
}
