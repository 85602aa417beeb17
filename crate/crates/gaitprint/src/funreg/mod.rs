//! Smooth-surface identification: a penalized logistic regression whose
//! covariates are lag-map pairs collapsed onto a tensor-product B-spline
//! basis, one one-vs-rest fit per subject.
//!
//! The coefficient vector beta indexes basis triples (kd, kv, ku) kd-major;
//! the roughness penalty is the Kronecker sum
//! lambda_d (P_d x I x I) + lambda_v (I x P_v x I) + lambda_u (I x I x P_u)
//! with P the curvature Gram matrix of each marginal basis. Smoothing
//! weights are chosen by stratified K-fold cross-validation on held-out
//! Bernoulli deviance, a shared grid value per axis. Fold membership is
//! seeded per subject, so one subject's folds never depend on which other
//! subjects are present.

pub mod bspline;
pub mod design;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm;
use crate::linalg::kron;
use crate::rng::{stable_hash, stream_rng};
use crate::stats::{expit, log1pexp};

pub use bspline::BSplineBasis;
pub use design::{TensorBases, TensorDesign};

/// Settings for the tensor-product fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FunregConfig {
    /// Spline degree per axis; curvature penalties need at least 2.
    pub degree: usize,
    /// Basis functions on the lagged-value axis.
    pub basis_d: usize,
    /// Basis functions on the current-value axis.
    pub basis_v: usize,
    /// Basis functions on the lag axis.
    pub basis_u: usize,
    /// Magnitude domain shared by the two value axes, in g.
    pub domain_lo: f64,
    pub domain_hi: f64,
    /// Keep every `lag_stride`-th lag starting at 1.
    pub lag_stride: usize,
    /// Candidate smoothing weights, each applied to all three axes.
    pub lambda_grid: Vec<f64>,
    /// Cross-validation folds for choosing the smoothing weight.
    pub cv_folds: usize,
    /// Ridge added to the smooth coefficients. The tensor covariates sum to
    /// one per row, duplicating the intercept, and constants sit in the
    /// curvature penalty's nullspace; the ridge keeps the system definite.
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Seed for fold assignment; folded with the subject id.
    pub seed: u64,
}

impl Default for FunregConfig {
    fn default() -> Self {
        FunregConfig {
            degree: 3,
            basis_d: 5,
            basis_v: 5,
            basis_u: 5,
            domain_lo: 0.0,
            domain_hi: 3.0,
            lag_stride: 1,
            lambda_grid: vec![0.1, 1.0, 10.0],
            cv_folds: 5,
            ridge: 1e-6,
            max_iter: 50,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl FunregConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 2 {
            return Err(Error::Config(format!(
                "degree must be at least 2 for a curvature penalty, got {}",
                self.degree
            )));
        }
        if !(self.domain_lo.is_finite()
            && self.domain_hi.is_finite()
            && self.domain_lo < self.domain_hi)
        {
            return Err(Error::Config(format!(
                "magnitude domain [{}, {}] is not a proper interval",
                self.domain_lo, self.domain_hi
            )));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("lambda_grid must not be empty".to_string()));
        }
        if self
            .lambda_grid
            .iter()
            .any(|&l| !(l.is_finite() && l >= 0.0))
        {
            return Err(Error::Config(
                "lambda_grid entries must be finite and non-negative".to_string(),
            ));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config(format!(
                "cv_folds must be at least 2, got {}",
                self.cv_folds
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!(
                "ridge must be finite and non-negative, got {}",
                self.ridge
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".to_string()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.lag_stride == 0 {
            return Err(Error::Config("lag_stride must be at least 1".to_string()));
        }
        Ok(())
    }

    /// The marginal bases for frames of `s` samples.
    pub fn bases(&self, s: usize) -> Result<TensorBases> {
        self.validate()?;
        TensorBases::with_degree(
            self.degree,
            self.basis_d,
            self.basis_v,
            self.basis_u,
            (self.domain_lo, self.domain_hi),
            s,
        )
    }

    /// Shared-value smoothing candidates as per-axis triples.
    pub fn lambda_triples(&self) -> Vec<(f64, f64, f64)> {
        self.lambda_grid.iter().map(|&l| (l, l, l)).collect()
    }
}

/// Marginal curvature penalties, assembled on demand for a given weight
/// triple.
#[derive(Debug, Clone)]
pub struct PenaltyBlocks {
    pub p_d: Array2<f64>,
    pub p_v: Array2<f64>,
    pub p_u: Array2<f64>,
}

impl PenaltyBlocks {
    pub fn new(bases: &TensorBases) -> Result<Self> {
        Ok(PenaltyBlocks {
            p_d: bspline::penalty_matrix(&bases.d)?,
            p_v: bspline::penalty_matrix(&bases.v)?,
            p_u: bspline::penalty_matrix(&bases.u)?,
        })
    }

    /// S_lambda over the tensor coefficients, kd-major ordering.
    pub fn assemble(&self, lambda: (f64, f64, f64)) -> Array2<f64> {
        let (kd, kv, ku) = (self.p_d.nrows(), self.p_v.nrows(), self.p_u.nrows());
        let eye = |n: usize| Array2::<f64>::eye(n);
        let dk = kron(self.p_d.view(), eye(kv).view());
        let vk = kron(eye(kd).view(), self.p_v.view());
        let dvk = kron(eye(kd).view(), eye(kv).view());
        let mut s = kron(dk.view(), eye(ku).view());
        s *= lambda.0;
        s.scaled_add(lambda.1, &kron(vk.view(), eye(ku).view()));
        s.scaled_add(lambda.2, &kron(dvk.view(), self.p_u.view()));
        s
    }

    /// S_lambda padded with a zero intercept row and column.
    pub fn padded(&self, lambda: (f64, f64, f64)) -> Array2<f64> {
        self.padded_ridged(lambda, 0.0)
    }

    /// Padded S_lambda with `ridge` added to the smooth coefficients'
    /// diagonal. The intercept stays unpenalized.
    pub fn padded_ridged(&self, lambda: (f64, f64, f64), ridge: f64) -> Array2<f64> {
        let s = self.assemble(lambda);
        let p = s.nrows();
        let mut q = Array2::<f64>::zeros((p + 1, p + 1));
        q.slice_mut(ndarray::s![1.., 1..]).assign(&s);
        for i in 1..=p {
            q[[i, i]] += ridge;
        }
        q
    }
}

/// Penalized Bernoulli log-likelihood and its gradient at `beta`.
/// `x` carries its intercept column; `penalty` is the padded S_lambda.
pub fn penalized_loglik_and_grad(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    penalty: ArrayView2<f64>,
    beta: ArrayView1<f64>,
) -> Result<(f64, Array1<f64>)> {
    let (n, p1) = x.dim();
    if y.len() != n || beta.len() != p1 || penalty.dim() != (p1, p1) {
        return Err(Error::DimensionMismatch(format!(
            "x is {n}x{p1}, y has {}, beta has {}, penalty is {:?}",
            y.len(),
            beta.len(),
            penalty.dim()
        )));
    }
    let eta = x.dot(&beta);
    let qb = penalty.dot(&beta);
    let mut ll = -beta.dot(&qb);
    for (&yi, &e) in y.iter().zip(eta.iter()) {
        ll += yi * e - log1pexp(e);
    }
    let resid = Array1::from_iter(y.iter().zip(eta.iter()).map(|(&yi, &e)| yi - expit(e)));
    let grad = x.t().dot(&resid) - 2.0 * &qb;
    Ok((ll, grad))
}

/// One cross-validation candidate and its held-out score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvEntry {
    pub lambda: (f64, f64, f64),
    /// Mean held-out Bernoulli deviance per observation.
    pub mean_deviance: f64,
    pub folds_used: usize,
}

/// A fitted tensor-product surface for one subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunFit {
    pub subject_id: String,
    /// Intercept first, then tensor coefficients kd-major.
    pub beta: Array1<f64>,
    pub lambda: (f64, f64, f64),
    /// Unpenalized deviance at the final iterate.
    pub deviance: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub n_obs: usize,
    pub cv_table: Vec<CvEntry>,
}

/// Stratified fold labels: each class is shuffled on its own stream and
/// dealt round-robin, so every fold gets its share of the rare class.
fn stratified_folds(y: ArrayView1<f64>, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut assignment = vec![0usize; y.len()];
    for class in 0..2u64 {
        let mut idx: Vec<usize> = y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == class as f64)
            .map(|(i, _)| i)
            .collect();
        let mut rng = stream_rng(seed, class);
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    assignment
}

/// Picks the smoothing weight by K-fold held-out deviance. Folds whose
/// training half loses a class are skipped with a warning; ties go to the
/// larger weight sum, then to the earlier candidate. A single candidate is
/// returned without cross-validating.
pub fn select_lambda(
    x1: &Array2<f64>,
    y: ArrayView1<f64>,
    penalties: &[Array2<f64>],
    triples: &[(f64, f64, f64)],
    folds: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(usize, Vec<CvEntry>)> {
    if triples.is_empty() || penalties.len() != triples.len() {
        return Err(Error::Config(
            "need one assembled penalty per candidate".to_string(),
        ));
    }
    if triples.len() == 1 {
        return Ok((0, Vec::new()));
    }
    if folds < 2 || folds > x1.nrows() {
        return Err(Error::Config(format!(
            "cv_folds {} out of range for {} rows",
            folds,
            x1.nrows()
        )));
    }
    let assignment = stratified_folds(y, folds, seed);
    let mut table = Vec::with_capacity(triples.len());
    for (q, &lambda) in penalties.iter().zip(triples) {
        let mut dev_sum = 0.0;
        let mut n_heldout = 0usize;
        let mut folds_used = 0usize;
        for fold in 0..folds {
            let train_rows: Vec<usize> = (0..x1.nrows())
                .filter(|&i| assignment[i] != fold)
                .collect();
            let test_rows: Vec<usize> = (0..x1.nrows())
                .filter(|&i| assignment[i] == fold)
                .collect();
            if test_rows.is_empty() {
                continue;
            }
            let x_train = x1.select(Axis(0), &train_rows);
            let y_train = y.select(Axis(0), &train_rows);
            let outcome = match glm::penalized_irls(&x_train, y_train.view(), q, max_iter, tol) {
                Ok(o) => o,
                Err(Error::SingleClass { .. }) => {
                    log::warn!(
                        "fold {fold} training half is single-class, skipped for lambda {lambda:?}"
                    );
                    continue;
                }
                Err(e) => return Err(e),
            };
            let x_test = x1.select(Axis(0), &test_rows);
            let y_test = y.select(Axis(0), &test_rows);
            let eta = x_test.dot(&outcome.beta);
            dev_sum += glm::deviance_from_eta(y_test.view(), &eta);
            n_heldout += test_rows.len();
            folds_used += 1;
        }
        if folds_used == 0 {
            return Err(Error::Data(
                "every cross-validation fold was skipped; too few observations per class"
                    .to_string(),
            ));
        }
        table.push(CvEntry {
            lambda,
            mean_deviance: dev_sum / n_heldout as f64,
            folds_used,
        });
    }
    let mut best = 0usize;
    for (i, entry) in table.iter().enumerate().skip(1) {
        let cur = &table[best];
        let sum = |l: (f64, f64, f64)| l.0 + l.1 + l.2;
        if entry.mean_deviance < cur.mean_deviance
            || (entry.mean_deviance == cur.mean_deviance && sum(entry.lambda) > sum(cur.lambda))
        {
            best = i;
        }
    }
    Ok((best, table))
}

/// Fits the surface for one subject at a fixed smoothing weight.
pub fn fit_fun_logistic(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    subject_id: &str,
    penalty_padded: &Array2<f64>,
    lambda: (f64, f64, f64),
    max_iter: usize,
    tol: f64,
) -> Result<FunFit> {
    let (n, p) = x.dim();
    let mut x1 = Array2::<f64>::ones((n, p + 1));
    x1.slice_mut(ndarray::s![.., 1..]).assign(&x);
    let outcome = glm::penalized_irls(&x1, y, penalty_padded, max_iter, tol)?;
    if !outcome.converged {
        log::warn!(
            "surface fit for '{subject_id}' stopped at {} iterations without meeting tolerance",
            outcome.n_iter
        );
    }
    Ok(FunFit {
        subject_id: subject_id.to_string(),
        beta: outcome.beta,
        lambda,
        deviance: outcome.deviance,
        converged: outcome.converged,
        n_iter: outcome.n_iter,
        n_obs: n,
        cv_table: Vec::new(),
    })
}

/// Fits one surface per subject in the design, each against all others.
/// Smoothing is cross-validated per subject on its own fold seed.
pub fn funreg_one_vs_rest(
    design: &TensorDesign,
    blocks: &PenaltyBlocks,
    cfg: &FunregConfig,
) -> Result<BTreeMap<String, FunFit>> {
    cfg.validate()?;
    let n = design.x.nrows();
    if design.index.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but {} index entries",
            design.index.len()
        )));
    }
    let mut subjects: Vec<String> = design.index.iter().map(|(s, _)| s.clone()).collect();
    subjects.sort();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::Data(format!(
            "one-vs-rest needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let triples = cfg.lambda_triples();
    let penalties: Vec<Array2<f64>> = triples
        .iter()
        .map(|&l| blocks.padded_ridged(l, cfg.ridge))
        .collect();
    let mut x1 = Array2::<f64>::ones((n, design.x.ncols() + 1));
    x1.slice_mut(ndarray::s![.., 1..]).assign(&design.x);

    let fits: Vec<Result<FunFit>> = crate::par_map(&subjects, |subject| {
        let y = Array1::from_iter(
            design
                .index
                .iter()
                .map(|(s, _)| if s == subject { 1.0 } else { 0.0 }),
        );
        let fold_seed = cfg.seed ^ stable_hash(subject.as_bytes());
        let (best, table) = select_lambda(
            &x1,
            y.view(),
            &penalties,
            &triples,
            cfg.cv_folds,
            fold_seed,
            cfg.max_iter,
            cfg.tol,
        )
        .map_err(|e| Error::Subject {
            subject: subject.clone(),
            message: e.to_string(),
        })?;
        let mut fit = fit_fun_logistic(
            design.x.view(),
            y.view(),
            subject,
            &penalties[best],
            triples[best],
            cfg.max_iter,
            cfg.tol,
        )
        .map_err(|e| Error::Subject {
            subject: subject.clone(),
            message: e.to_string(),
        })?;
        fit.cv_table = table;
        Ok(fit)
    });
    let mut out = BTreeMap::new();
    for (subject, fit) in subjects.into_iter().zip(fits) {
        out.insert(subject, fit?);
    }
    Ok(out)
}

/// Per-row probabilities under a fitted surface. `x` has no intercept
/// column.
pub fn predict_fun(fit: &FunFit, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x.ncols() + 1 != fit.beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} coefficients but design provides {} columns",
            fit.beta.len(),
            x.ncols()
        )));
    }
    let coef = fit.beta.slice(ndarray::s![1..]);
    Ok(x.dot(&coef).mapv(|e| expit(e + fit.beta[0])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funreg::design::{tensor_design_streaming, TensorBuilder};
    use crate::ingest::{SecondFrame, SubjectSeries};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_bases() -> TensorBases {
        TensorBases::with_degree(2, 3, 3, 3, (0.0, 3.0), 10).unwrap()
    }

    #[test]
    fn assembled_penalty_matches_elementwise_kronecker_rule() {
        let bases = tiny_bases();
        let blocks = PenaltyBlocks::new(&bases).unwrap();
        let s = blocks.assemble((2.0, 0.5, 3.0));
        let (kd, kv, ku) = (3, 3, 3);
        // Entry ((i,j,k),(i',j',k')) is the sum of one marginal penalty per
        // axis, active only where the other two indices agree.
        for i in 0..kd {
            for j in 0..kv {
                for k in 0..ku {
                    for i2 in 0..kd {
                        for j2 in 0..kv {
                            for k2 in 0..ku {
                                let row = (i * kv + j) * ku + k;
                                let col = (i2 * kv + j2) * ku + k2;
                                let mut want = 0.0;
                                if j == j2 && k == k2 {
                                    want += 2.0 * blocks.p_d[[i, i2]];
                                }
                                if i == i2 && k == k2 {
                                    want += 0.5 * blocks.p_v[[j, j2]];
                                }
                                if i == i2 && j == j2 {
                                    want += 3.0 * blocks.p_u[[k, k2]];
                                }
                                assert_abs_diff_eq!(s[[row, col]], want, epsilon = 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn quadratic_form_decomposes_over_axes() {
        // beta' S beta must equal the sum over fibers of the marginal forms.
        let bases = tiny_bases();
        let blocks = PenaltyBlocks::new(&bases).unwrap();
        let lambda = (1.3, 0.7, 2.1);
        let s = blocks.assemble(lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let beta = Array1::from_iter((0..27).map(|_| rng.random_range(-1.0..1.0)));
        let direct = beta.dot(&s.dot(&beta));
        let idx = |i: usize, j: usize, k: usize| (i * 3 + j) * 3 + k;
        let mut fiber_sum = 0.0;
        for j in 0..3 {
            for k in 0..3 {
                let fiber = Array1::from_iter((0..3).map(|i| beta[idx(i, j, k)]));
                fiber_sum += lambda.0 * fiber.dot(&blocks.p_d.dot(&fiber));
            }
        }
        for i in 0..3 {
            for k in 0..3 {
                let fiber = Array1::from_iter((0..3).map(|j| beta[idx(i, j, k)]));
                fiber_sum += lambda.1 * fiber.dot(&blocks.p_v.dot(&fiber));
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let fiber = Array1::from_iter((0..3).map(|k| beta[idx(i, j, k)]));
                fiber_sum += lambda.2 * fiber.dot(&blocks.p_u.dot(&fiber));
            }
        }
        assert_abs_diff_eq!(direct, fiber_sum, epsilon = 1e-10);
    }

    #[test]
    fn padded_penalty_leaves_intercept_free() {
        let bases = tiny_bases();
        let blocks = PenaltyBlocks::new(&bases).unwrap();
        let q = blocks.padded((1.0, 1.0, 1.0));
        assert_eq!(q.nrows(), 28);
        assert!(q.row(0).iter().all(|&v| v == 0.0));
        assert!(q.column(0).iter().all(|&v| v == 0.0));
    }

    fn synth_series(id: &str, s: usize, frames: usize, level: f64, amp: f64, freq: f64, seed: u64) -> SubjectSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..frames)
            .map(|i| SecondFrame {
                j: i as u32 + 1,
                v: (0..s)
                    .map(|t| {
                        let phase = 2.0 * std::f64::consts::PI * freq * t as f64 / s as f64;
                        (level + amp * phase.sin() + rng.random_range(-0.05..0.05)).clamp(0.0, 3.0)
                    })
                    .collect(),
                session: None,
            })
            .collect();
        SubjectSeries {
            subject_id: id.to_string(),
            s,
            frames,
        }
    }

    fn two_subject_design(s: usize, frames: usize) -> (TensorDesign, TensorBases) {
        let a = synth_series("a", s, frames, 1.0, 0.6, 1.0, 11);
        let b = synth_series("b", s, frames, 1.9, 0.3, 2.0, 12);
        let bases = TensorBases::with_degree(2, 3, 3, 3, (0.0, 3.0), s).unwrap();
        let mut split = std::collections::BTreeMap::new();
        split.insert("a".to_string(), (1..=frames as u32).collect::<Vec<_>>());
        split.insert("b".to_string(), (1..=frames as u32).collect::<Vec<_>>());
        let design = tensor_design_streaming(&[a, b], &split, &bases, 1).unwrap();
        (design, bases)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (design, bases) = two_subject_design(10, 6);
        let blocks = PenaltyBlocks::new(&bases).unwrap();
        let q = blocks.padded((0.8, 1.2, 0.5));
        let n = design.x.nrows();
        let mut x1 = Array2::<f64>::ones((n, design.x.ncols() + 1));
        x1.slice_mut(ndarray::s![.., 1..]).assign(&design.x);
        let y = Array1::from_iter(
            design
                .index
                .iter()
                .map(|(s, _)| if s == "a" { 1.0 } else { 0.0 }),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let beta = Array1::from_iter((0..x1.ncols()).map(|_| rng.random_range(-0.5..0.5)));
        let (_, grad) =
            penalized_loglik_and_grad(x1.view(), y.view(), q.view(), beta.view()).unwrap();
        let h = 1e-6;
        for k in (0..x1.ncols()).step_by(5) {
            let mut up = beta.clone();
            up[k] += h;
            let mut dn = beta.clone();
            dn[k] -= h;
            let (lu, _) =
                penalized_loglik_and_grad(x1.view(), y.view(), q.view(), up.view()).unwrap();
            let (ld, _) =
                penalized_loglik_and_grad(x1.view(), y.view(), q.view(), dn.view()).unwrap();
            assert_abs_diff_eq!(grad[k], (lu - ld) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn heavy_smoothing_flattens_curvature() {
        let (design, bases) = two_subject_design(10, 8);
        let blocks = PenaltyBlocks::new(&bases).unwrap();
        let y = Array1::from_iter(
            design
                .index
                .iter()
                .map(|(s, _)| if s == "a" { 1.0 } else { 0.0 }),
        );
        let loose = fit_fun_logistic(
            design.x.view(),
            y.view(),
            "a",
            &blocks.padded_ridged((1e-4, 1e-4, 1e-4), 1e-6),
            (1e-4, 1e-4, 1e-4),
            100,
            1e-9,
        )
        .unwrap();
        let stiff = fit_fun_logistic(
            design.x.view(),
            y.view(),
            "a",
            &blocks.padded_ridged((1e8, 1e8, 1e8), 1e-6),
            (1e8, 1e8, 1e8),
            100,
            1e-9,
        )
        .unwrap();
        // The heavy fit is pushed into the penalty's nullspace (surfaces
        // linear along every axis); its curvature form collapses while the
        // loose fit keeps real curvature.
        let s_unit = blocks.assemble((1.0, 1.0, 1.0));
        let curv = |fit: &FunFit| {
            let b = fit.beta.slice(ndarray::s![1..]).to_owned();
            b.dot(&s_unit.dot(&b))
        };
        assert!(curv(&stiff) < 1e-6 * curv(&loose).max(1e-30));
        assert!(stiff.deviance.is_finite() && loose.deviance.is_finite());
    }

    #[test]
    fn select_lambda_prefers_lower_heldout_deviance() {
        // Ridge-only candidates make the outcome unambiguous: the huge
        // ridge collapses every fold fit to its intercept, so the gentle
        // candidate must score the lower held-out deviance and win.
        let (design, _bases) = two_subject_design(10, 10);
        let y = Array1::from_iter(
            design
                .index
                .iter()
                .map(|(s, _)| if s == "a" { 1.0 } else { 0.0 }),
        );
        let n = design.x.nrows();
        let p1 = design.x.ncols() + 1;
        let mut x1 = Array2::<f64>::ones((n, p1));
        x1.slice_mut(ndarray::s![.., 1..]).assign(&design.x);
        let penalty_of = |scale: f64| {
            let mut q = Array2::<f64>::eye(p1);
            q *= scale;
            q[[0, 0]] = 0.0;
            q
        };
        let triples = vec![(1e-4, 1e-4, 1e-4), (1e8, 1e8, 1e8)];
        let penalties = vec![penalty_of(1e-4), penalty_of(1e8)];
        let (best, table) =
            select_lambda(&x1, y.view(), &penalties, &triples, 4, 3, 100, 1e-9).unwrap();
        assert_eq!(best, 0);
        assert_eq!(table.len(), 2);
        assert!(table[0].mean_deviance < table[1].mean_deviance);
        assert!(table.iter().all(|e| e.folds_used == 4));
    }

    #[test]
    fn select_lambda_breaks_exact_ties_toward_heavier_smoothing() {
        // Identical penalty matrices make every candidate fit identically,
        // so the held-out deviances tie exactly and the larger weight sum
        // wins; identical weight triples keep the first index.
        let (design, _bases) = two_subject_design(8, 6);
        let p1 = design.x.ncols() + 1;
        let mut ridge_only = Array2::<f64>::eye(p1);
        ridge_only *= 1e-4;
        ridge_only[[0, 0]] = 0.0;
        let y = Array1::from_iter(
            design
                .index
                .iter()
                .map(|(s, _)| if s == "a" { 1.0 } else { 0.0 }),
        );
        let n = design.x.nrows();
        let mut x1 = Array2::<f64>::ones((n, p1));
        x1.slice_mut(ndarray::s![.., 1..]).assign(&design.x);
        let triples = vec![(1.0, 1.0, 1.0), (2.0, 2.0, 2.0)];
        let penalties = vec![ridge_only.clone(), ridge_only.clone()];
        let (best, table) =
            select_lambda(&x1, y.view(), &penalties, &triples, 3, 0, 60, 1e-8).unwrap();
        assert_eq!(best, 1);
        assert_eq!(table[0].mean_deviance, table[1].mean_deviance);

        let same = vec![(1.0, 1.0, 1.0), (1.0, 1.0, 1.0)];
        let pens = vec![ridge_only.clone(), ridge_only];
        let (first, _) = select_lambda(&x1, y.view(), &pens, &same, 3, 0, 60, 1e-8).unwrap();
        assert_eq!(first, 0);
    }

    #[test]
    fn select_lambda_skips_single_class_folds() {
        // One positive among fourteen rows: the fold holding it out leaves a
        // single-class training half.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((14, 2), |_| rng.random_range(-1.0..1.0));
        let mut x1 = Array2::<f64>::ones((14, 3));
        x1.slice_mut(ndarray::s![.., 1..]).assign(&x);
        let mut y = Array1::<f64>::zeros(14);
        y[3] = 1.0;
        let triples = vec![(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)];
        let q0 = Array2::<f64>::zeros((3, 3));
        let mut q1 = Array2::<f64>::eye(3);
        q1[[0, 0]] = 0.0;
        let (_, table) =
            select_lambda(&x1, y.view(), &[q0, q1], &triples, 2, 9, 50, 1e-8).unwrap();
        assert!(table.iter().all(|e| e.folds_used == 1));
    }

    #[test]
    fn single_candidate_skips_cross_validation() {
        let (design, bases) = two_subject_design(8, 4);
        let blocks = PenaltyBlocks::new(&bases).unwrap();
        let cfg = FunregConfig {
            degree: 2,
            basis_d: 3,
            basis_v: 3,
            basis_u: 3,
            lambda_grid: vec![1.0],
            cv_folds: 5,
            ..FunregConfig::default()
        };
        let fits = funreg_one_vs_rest(&design, &blocks, &cfg).unwrap();
        assert_eq!(fits.len(), 2);
        assert!(fits.values().all(|f| f.cv_table.is_empty()));
        assert!(fits.values().all(|f| f.lambda == (1.0, 1.0, 1.0)));
    }

    #[test]
    fn one_vs_rest_identifies_training_subjects() {
        let (design, bases) = two_subject_design(10, 8);
        let blocks = PenaltyBlocks::new(&bases).unwrap();
        let cfg = FunregConfig {
            degree: 2,
            basis_d: 3,
            basis_v: 3,
            basis_u: 3,
            lambda_grid: vec![0.01, 1.0],
            cv_folds: 4,
            max_iter: 100,
            tol: 1e-9,
            ..FunregConfig::default()
        };
        let fits = funreg_one_vs_rest(&design, &blocks, &cfg).unwrap();
        let pa = predict_fun(&fits["a"], design.x.view()).unwrap();
        let pb = predict_fun(&fits["b"], design.x.view()).unwrap();
        for (i, (sub, _)) in design.index.iter().enumerate() {
            if sub == "a" {
                assert!(pa[i] > pb[i], "row {i}: {} vs {}", pa[i], pb[i]);
            } else {
                assert!(pb[i] > pa[i], "row {i}: {} vs {}", pa[i], pb[i]);
            }
        }
        // Repeat runs are bitwise identical.
        let again = funreg_one_vs_rest(&design, &blocks, &cfg).unwrap();
        assert_eq!(fits["a"].beta, again["a"].beta);
        assert_eq!(fits["a"].lambda, again["a"].lambda);
    }

    #[test]
    fn predict_requires_matching_width() {
        let (design, bases) = two_subject_design(8, 4);
        let blocks = PenaltyBlocks::new(&bases).unwrap();
        let y = Array1::from_iter(
            design
                .index
                .iter()
                .map(|(s, _)| if s == "a" { 1.0 } else { 0.0 }),
        );
        let fit = fit_fun_logistic(
            design.x.view(),
            y.view(),
            "a",
            &blocks.padded_ridged((1.0, 1.0, 1.0), 1e-6),
            (1.0, 1.0, 1.0),
            50,
            1e-8,
        )
        .unwrap();
        let narrow = design.x.slice(ndarray::s![.., ..5]);
        assert!(matches!(
            predict_fun(&fit, narrow),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let ok = FunregConfig::default();
        assert!(ok.validate().is_ok());
        assert!(FunregConfig { degree: 1, ..ok.clone() }.validate().is_err());
        assert!(FunregConfig { lambda_grid: vec![], ..ok.clone() }.validate().is_err());
        assert!(FunregConfig { lambda_grid: vec![-1.0], ..ok.clone() }.validate().is_err());
        assert!(FunregConfig { cv_folds: 1, ..ok.clone() }.validate().is_err());
        assert!(FunregConfig { domain_lo: 3.0, domain_hi: 0.0, ..ok.clone() }
            .validate()
            .is_err());
        assert!(FunregConfig { lag_stride: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn builder_and_config_share_lag_interpretation() {
        let cfg = FunregConfig {
            degree: 2,
            basis_d: 3,
            basis_v: 3,
            basis_u: 3,
            lag_stride: 4,
            ..FunregConfig::default()
        };
        let bases = cfg.bases(10).unwrap();
        let builder = TensorBuilder::new(&bases, 10, cfg.lag_stride).unwrap();
        assert_eq!(builder.included_lags(), &[1, 5, 9]);
    }
}
