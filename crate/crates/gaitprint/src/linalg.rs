//! Dense linear algebra for symmetric systems: Cholesky solves, a cyclic
//! Jacobi eigendecomposition, and Kronecker products.
//!
//! The matrices handled here are small (hundreds of rows for penalized fits,
//! a few hundred for correlation matrices), so simple O(n^3) routines with
//! predictable numerics beat pulling in a LAPACK binding. Everything is pure
//! Rust and runs unchanged on wasm targets.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Cholesky factor L (lower triangular) of a symmetric positive definite
/// matrix, A = L L^T. Fails if a pivot is not strictly positive.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = check_square(a)?;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "matrix is not positive definite (pivot {d:.3e} at index {j})"
            )));
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Ok(l)
}

/// Solves A x = b for symmetric positive definite A via Cholesky.
pub fn solve_spd(a: ArrayView2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, b))
}

/// Solves L L^T x = b given the Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
/// The result is symmetrized to remove rounding drift.
pub fn inverse_spd(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = check_square(a)?;
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(&l, &e);
        inv.column_mut(j).assign(&col);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = m;
            inv[[j, i]] = m;
        }
    }
    Ok(inv)
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns (eigenvalues, eigenvectors) with eigenvalues ascending and
/// eigenvectors in the corresponding columns, A = V diag(w) V^T.
pub fn eigh(a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = check_square(a)?;
    for i in 0..n {
        for j in 0..i {
            let d = (a[[i, j]] - a[[j, i]]).abs();
            let scale = a[[i, j]].abs().max(a[[j, i]].abs()).max(1.0);
            if d > 1e-8 * scale {
                return Err(Error::Numerical(format!(
                    "eigh requires a symmetric matrix; entries ({i},{j}) and ({j},{i}) differ by {d:.3e}"
                )));
            }
        }
    }
    let mut m = a.to_owned();
    // Work on the symmetrized copy so the sweep sees exact symmetry.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
    let w = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vs = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vs.column_mut(dst).assign(&v.column(src));
    }
    Ok((w, vs))
}

/// Symmetric square root of a positive semidefinite matrix. Eigenvalues below
/// zero are clipped; `clipped` reports how many were.
pub fn sqrt_psd(a: ArrayView2<f64>) -> Result<(Array2<f64>, usize)> {
    let (w, v) = eigh(a)?;
    let n = w.len();
    let tol = 1e-12 * w.iter().fold(1.0f64, |m, &x| m.max(x.abs()));
    let mut clipped = 0;
    let mut sq = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        let lam = if w[k] < 0.0 {
            if w[k] < -tol {
                clipped += 1;
            }
            0.0
        } else {
            w[k]
        };
        let s = lam.sqrt();
        for i in 0..n {
            for j in 0..n {
                sq[[i, j]] += s * v[[i, k]] * v[[j, k]];
            }
        }
    }
    Ok((sq, clipped))
}

/// Kronecker product a (m x n) with b (p x q), giving (mp x nq).
pub fn kron(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, n) = a.dim();
    let (p, q) = b.dim();
    let mut out = Array2::<f64>::zeros((m * p, n * q));
    for i in 0..m {
        for j in 0..n {
            let aij = a[[i, j]];
            if aij == 0.0 {
                continue;
            }
            for k in 0..p {
                for l in 0..q {
                    out[[i * p + k, j * q + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_square(a: ArrayView2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {r}x{c}"
        )));
    }
    Ok(r)
}
