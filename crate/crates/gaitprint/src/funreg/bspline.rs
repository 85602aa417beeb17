//! Open-uniform B-spline bases with exact curvature penalties.
//!
//! Evaluation uses the de Boor triangular scheme over half-open knot spans,
//! closed at the top of the domain so the boundary value belongs to the last
//! span. The curvature penalty integrates products of second derivatives
//! exactly: each basis function's second derivative is expressed in the
//! degree-reduced basis via knot-difference coefficients, and the reduced
//! Gram matrix is computed span by span with Gauss-Legendre quadrature of
//! sufficient order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A B-spline basis of `num_basis` functions on a closed domain, with
/// degree+1 coincident knots at each end and uniform interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub degree: usize,
    pub num_basis: usize,
    pub domain: (f64, f64),
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn open_uniform(degree: usize, num_basis: usize, domain: (f64, f64)) -> Result<Self> {
        if degree == 0 {
            return Err(Error::Config("B-spline degree must be at least 1".to_string()));
        }
        if num_basis < degree + 1 {
            return Err(Error::Config(format!(
                "need at least degree + 1 = {} basis functions, got {num_basis}",
                degree + 1
            )));
        }
        let (lo, hi) = domain;
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "invalid B-spline domain [{lo}, {hi}]"
            )));
        }
        let n_spans = num_basis - degree;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(std::iter::repeat(lo).take(degree + 1));
        for i in 1..n_spans {
            knots.push(lo + (hi - lo) * i as f64 / n_spans as f64);
        }
        knots.extend(std::iter::repeat(hi).take(degree + 1));
        Ok(BSplineBasis {
            degree,
            num_basis,
            domain,
            knots,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Clamps a point into the domain, reporting whether it was outside.
    pub fn clamp(&self, t: f64) -> (f64, bool) {
        let (lo, hi) = self.domain;
        if t < lo {
            (lo, true)
        } else if t > hi {
            (hi, true)
        } else {
            (t, false)
        }
    }

    /// Index of the knot span containing `t` (clamped), such that
    /// knots[span] <= t < knots[span + 1], with the final span closed above.
    fn span_of(&self, t: f64) -> usize {
        let (t, _) = self.clamp(t);
        // Valid spans for degree d run from d to num_basis - 1.
        let mut span = self.degree;
        while span + 1 < self.num_basis && t >= self.knots[span + 1] {
            span += 1;
        }
        span
    }

    /// The degree+1 basis values that are non-zero at `t` (clamped into the
    /// domain): returns (first basis index, values).
    pub fn eval_nonzero(&self, t: f64) -> (usize, Vec<f64>) {
        self.eval_nonzero_degree(t, self.degree)
    }

    /// Non-zero values of the degree `d` basis over this knot vector, d <=
    /// degree. Used directly for d = degree and by the penalty for reduced
    /// degrees.
    fn eval_nonzero_degree(&self, t: f64, d: usize) -> (usize, Vec<f64>) {
        let (t, _) = self.clamp(t);
        let span = self.span_of(t);
        let mut values = vec![0.0; d + 1];
        values[0] = 1.0;
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        for j in 1..=d {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let den = right[r + 1] + left[j - r];
                let temp = if den != 0.0 { values[r] / den } else { 0.0 };
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (span - d, values)
    }

    /// All `num_basis` basis values at `t` (clamped into the domain).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_basis];
        let (first, vals) = self.eval_nonzero(t);
        for (k, v) in vals.into_iter().enumerate() {
            out[first + k] = v;
        }
        out
    }

    /// Number of degree `d` functions over the same knot vector.
    fn reduced_count(&self, d: usize) -> usize {
        self.knots.len() - d - 1
    }

    /// Coefficients expressing each degree `d` function's derivative in the
    /// degree d-1 basis over the same knots: rows index the degree-d basis,
    /// columns the degree-(d-1) basis.
    fn derivative_coeffs(&self, d: usize) -> Array2<f64> {
        let n = self.reduced_count(d);
        let m = self.reduced_count(d - 1);
        let mut c = Array2::<f64>::zeros((n, m));
        for k in 0..n {
            let den0 = self.knots[k + d] - self.knots[k];
            if den0 > 0.0 {
                c[[k, k]] += d as f64 / den0;
            }
            let den1 = self.knots[k + d + 1] - self.knots[k + 1];
            if den1 > 0.0 {
                c[[k, k + 1]] -= d as f64 / den1;
            }
        }
        c
    }
}

/// All basis values at `t`; values outside the domain are evaluated at the
/// nearest endpoint.
pub fn bspline_eval(basis: &BSplineBasis, t: f64) -> Vec<f64> {
    basis.eval(t)
}

/// Gauss-Legendre nodes and weights on [-1, 1], exact for polynomials up to
/// degree 2n - 1. Nodes are found by Newton iteration on the Legendre
/// recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature needs at least one node");
    let mut out = Vec::with_capacity(n);
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre P_n and its derivative by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let mut p0 = 1.0;
        let mut p1 = x;
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        if n - 1 - i == i {
            // Center node of an odd rule is exactly zero.
            out.push((0.0, w));
        } else {
            out.push((-x, w));
            out.push((x, w));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Exact curvature penalty: P[k, l] = integral of B_k'' B_l'' over the
/// domain. Requires degree >= 2 so second derivatives exist.
pub fn penalty_matrix(basis: &BSplineBasis) -> Result<Array2<f64>> {
    let d = basis.degree;
    if d < 2 {
        return Err(Error::Config(format!(
            "curvature penalty needs degree >= 2, got {d}"
        )));
    }
    // Second-derivative coefficients in the degree d-2 basis.
    let d2 = basis.derivative_coeffs(d).dot(&basis.derivative_coeffs(d - 1));
    let reduced = basis.reduced_count(d - 2);

    // Gram matrix of the degree d-2 basis, exact with (d - 1) nodes per span
    // (the integrand has degree 2(d-2) <= 2(d-1) - 1).
    let quad = gauss_legendre(d - 1);
    let mut gram = Array2::<f64>::zeros((reduced, reduced));
    let knots = basis.knots();
    for span in 0..knots.len() - 1 {
        let (a, b) = (knots[span], knots[span + 1]);
        if !(b > a) {
            continue;
        }
        for &(node, weight) in &quad {
            let t = 0.5 * (a + b) + 0.5 * (b - a) * node;
            let w = 0.5 * (b - a) * weight;
            let (first, vals) = basis.eval_nonzero_degree(t, d - 2);
            for (i, &vi) in vals.iter().enumerate() {
                for (j, &vj) in vals.iter().enumerate() {
                    gram[[first + i, first + j]] += w * vi * vj;
                }
            }
        }
    }
    let mut p = d2.dot(&gram).dot(&d2.t());
    // Symmetrize away accumulation order effects.
    for i in 0..p.nrows() {
        for j in 0..i {
            let v = 0.5 * (p[[i, j]] + p[[j, i]]);
            p[[i, j]] = v;
            p[[j, i]] = v;
        }
    }
    Ok(p)
}
