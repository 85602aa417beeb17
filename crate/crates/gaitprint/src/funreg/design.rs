//! Functional covariates: the per-subject D/S/U/weight matrices that lay out
//! every (lagged value, current value, lag) pair of every second, and their
//! collapse onto a tensor-product B-spline basis.
//!
//! Column layout of the pair matrices follows the lagged position: for
//! t = 1..S-1 the block of columns with D = v(t) holds lags u = 1..S-t, so a
//! row reads (v(1)... repeated, v(2)..., ...). The integral weight matrix is
//! constant at 1 over the number of included pairs, renormalized when
//! `lag_stride` subsamples the lags. The tensor design entry for basis
//! triple (kd, kv, ku) is the weighted sum over pairs of
//! Bd(v(s-u)) * Bv(v(s)) * Bu(u), with column order kd-major, then kv,
//! then ku.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ingest::SubjectSeries;

use super::bspline::BSplineBasis;

/// Pair matrices for one subject: rows are seconds, columns the included
/// (lagged position, lag) pairs.
#[derive(Debug, Clone)]
pub struct DsuMatrices {
    pub subject_id: String,
    /// Frame index per row.
    pub frames: Vec<u32>,
    /// Lagged magnitudes v(s - u).
    pub d: Array2<f64>,
    /// Current magnitudes v(s).
    pub s: Array2<f64>,
    /// Lags u.
    pub u: Array2<f64>,
    /// Constant integration weights, 1 / number of included pairs.
    pub lmat: Array2<f64>,
    /// Lags included after striding, ascending.
    pub included_lags: Vec<u16>,
}

/// Lags 1, 1+stride, 1+2*stride, ... up to s-1.
pub fn strided_lags(s: usize, lag_stride: usize) -> Result<Vec<u16>> {
    if lag_stride == 0 {
        return Err(Error::Config("lag_stride must be at least 1".to_string()));
    }
    if s < 2 {
        return Err(Error::Config(format!(
            "frame length {s} cannot form any lag"
        )));
    }
    Ok((1..s as u16).step_by(lag_stride).collect())
}

/// Builds the D/S/U/weight matrices for the given frames of one subject
/// (`frames` = None takes all), including every lag congruent to 1 modulo
/// `lag_stride`.
pub fn build_dsu_matrices(
    series: &SubjectSeries,
    frames: Option<&[u32]>,
    lag_stride: usize,
) -> Result<DsuMatrices> {
    let s = series.s;
    let included = strided_lags(s, lag_stride)?;
    let keep: Vec<u32> = match frames {
        Some(f) => f.to_vec(),
        None => series.frames.iter().map(|f| f.j).collect(),
    };
    // Column count: for each lagged position t, the lags u <= s - t.
    let n_cols: usize = (1..s)
        .map(|t| included.iter().filter(|&&u| (u as usize) <= s - t).count())
        .sum();
    if n_cols == 0 {
        return Err(Error::Config(format!(
            "lag_stride {lag_stride} leaves no pairs for frame length {s}"
        )));
    }
    let n = keep.len();
    let mut d = Array2::<f64>::zeros((n, n_cols));
    let mut s_mat = Array2::<f64>::zeros((n, n_cols));
    let mut u_mat = Array2::<f64>::zeros((n, n_cols));
    for (row, &j) in keep.iter().enumerate() {
        let frame = series.frame(j).ok_or_else(|| Error::Subject {
            subject: series.subject_id.clone(),
            message: format!("frame {j} not present"),
        })?;
        if frame.v.len() != s {
            return Err(Error::Subject {
                subject: series.subject_id.clone(),
                message: format!("frame {j} has {} samples, series says {s}", frame.v.len()),
            });
        }
        let mut col = 0;
        for t in 1..s {
            for &u in included.iter().filter(|&&u| (u as usize) <= s - t) {
                d[[row, col]] = frame.v[t - 1];
                s_mat[[row, col]] = frame.v[t - 1 + u as usize];
                u_mat[[row, col]] = u as f64;
                col += 1;
            }
        }
        debug_assert_eq!(col, n_cols);
    }
    let lmat = Array2::<f64>::from_elem((n, n_cols), 1.0 / n_cols as f64);
    Ok(DsuMatrices {
        subject_id: series.subject_id.clone(),
        frames: keep,
        d,
        s: s_mat,
        u: u_mat,
        lmat,
        included_lags: included,
    })
}

/// The three marginal bases of the tensor product, in argument order
/// (lagged value, current value, lag).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TensorBases {
    pub d: BSplineBasis,
    pub v: BSplineBasis,
    pub u: BSplineBasis,
}

impl TensorBases {
    /// Cubic bases with `k` functions per axis: magnitude axes on the given
    /// domain, the lag axis on [1, s-1].
    pub fn cubic(k_d: usize, k_v: usize, k_u: usize, domain: (f64, f64), s: usize) -> Result<Self> {
        Self::with_degree(3, k_d, k_v, k_u, domain, s)
    }

    pub fn with_degree(
        degree: usize,
        k_d: usize,
        k_v: usize,
        k_u: usize,
        domain: (f64, f64),
        s: usize,
    ) -> Result<Self> {
        if s < 3 {
            return Err(Error::Config(format!(
                "frame length {s} leaves no lag interval for the basis"
            )));
        }
        Ok(TensorBases {
            d: BSplineBasis::open_uniform(degree, k_d, domain)?,
            v: BSplineBasis::open_uniform(degree, k_v, domain)?,
            u: BSplineBasis::open_uniform(degree, k_u, (1.0, (s - 1) as f64))?,
        })
    }

    /// Total number of tensor covariates.
    pub fn total(&self) -> usize {
        self.d.num_basis * self.v.num_basis * self.u.num_basis
    }

    /// Column index of basis triple (kd, kv, ku): kd-major, then kv, then ku.
    pub fn column(&self, kd: usize, kv: usize, ku: usize) -> usize {
        (kd * self.v.num_basis + kv) * self.u.num_basis + ku
    }
}

/// Tensor-product covariates with their row index.
#[derive(Debug, Clone)]
pub struct TensorDesign {
    pub x: Array2<f64>,
    /// (subject, frame) per row.
    pub index: Vec<(String, u32)>,
    /// Lag-map values that fell outside a magnitude basis domain and were
    /// evaluated at the boundary.
    pub clamped: usize,
}

/// Collapses pair matrices onto the tensor basis by direct summation over
/// columns. Kept deliberately literal; `TensorBuilder` is the fast path and
/// the two must agree to within rounding.
pub fn tensor_design(blocks: &[DsuMatrices], bases: &TensorBases) -> Result<TensorDesign> {
    let p = bases.total();
    let n: usize = blocks.iter().map(|b| b.frames.len()).sum();
    let mut x = Array2::<f64>::zeros((n, p));
    let mut index = Vec::with_capacity(n);
    let mut clamped = 0usize;
    let mut row = 0;
    for block in blocks {
        let (rows, cols) = block.d.dim();
        for r in 0..rows {
            for c in 0..cols {
                let w = block.lmat[[r, c]];
                let (dv, d_out) = bases.d.clamp(block.d[[r, c]]);
                let (vv, v_out) = bases.v.clamp(block.s[[r, c]]);
                clamped += d_out as usize + v_out as usize;
                let bd = bases.d.eval(dv);
                let bv = bases.v.eval(vv);
                let bu = bases.u.eval(block.u[[r, c]]);
                for (kd, &bdk) in bd.iter().enumerate() {
                    if bdk == 0.0 {
                        continue;
                    }
                    for (kv, &bvk) in bv.iter().enumerate() {
                        if bvk == 0.0 {
                            continue;
                        }
                        for (ku, &buk) in bu.iter().enumerate() {
                            x[[row, bases.column(kd, kv, ku)]] += w * bdk * bvk * buk;
                        }
                    }
                }
            }
            index.push((block.subject_id.clone(), block.frames[r]));
            row += 1;
        }
    }
    Ok(TensorDesign { x, index, clamped })
}

/// Streaming covariate builder that skips the explicit pair matrices: per
/// lag it accumulates the outer product of the magnitude bases over pair
/// positions, then distributes it across the lag basis. One frame costs
/// O(pairs * (degree+1)^2) plus O(lags * Kd * Kv * (degree+1)).
pub struct TensorBuilder {
    bases: TensorBases,
    included_lags: Vec<u16>,
    /// Non-zero lag-basis values per included lag.
    bu_cache: Vec<(usize, Vec<f64>)>,
    weight: f64,
    s: usize,
    clamped: usize,
}

impl TensorBuilder {
    pub fn new(bases: &TensorBases, s: usize, lag_stride: usize) -> Result<Self> {
        let included = strided_lags(s, lag_stride)?;
        let n_pairs: usize = included.iter().map(|&u| s - u as usize).sum();
        let bu_cache = included
            .iter()
            .map(|&u| bases.u.eval_nonzero(u as f64))
            .collect();
        Ok(TensorBuilder {
            bases: bases.clone(),
            included_lags: included,
            bu_cache,
            weight: 1.0 / n_pairs as f64,
            s,
            clamped: 0,
        })
    }

    pub fn included_lags(&self) -> &[u16] {
        &self.included_lags
    }

    /// Values clamped into a magnitude domain since construction.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// The tensor covariate row of one frame's magnitudes.
    pub fn row(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.s {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} samples, builder expects {}",
                v.len(),
                self.s
            )));
        }
        let kd = self.bases.d.num_basis;
        let kv = self.bases.v.num_basis;
        let ku = self.bases.u.num_basis;
        let bd: Vec<(usize, Vec<f64>)> = v
            .iter()
            .map(|&x| {
                let (c, out) = self.bases.d.clamp(x);
                self.clamped += out as usize;
                self.bases.d.eval_nonzero(c)
            })
            .collect();
        let bv: Vec<(usize, Vec<f64>)> = v
            .iter()
            .map(|&x| {
                let (c, _) = self.bases.v.clamp(x);
                self.bases.v.eval_nonzero(c)
            })
            .collect();
        let mut row = vec![0.0; kd * kv * ku];
        let mut m = vec![0.0; kd * kv];
        for (li, &u) in self.included_lags.iter().enumerate() {
            m.iter_mut().for_each(|x| *x = 0.0);
            let ui = u as usize;
            for t in 0..self.s - ui {
                let (d0, dvals) = &bd[t];
                let (v0, vvals) = &bv[t + ui];
                for (a, &da) in dvals.iter().enumerate() {
                    let base = (d0 + a) * kv + v0;
                    for (b, &vb) in vvals.iter().enumerate() {
                        m[base + b] += da * vb;
                    }
                }
            }
            let (u0, uvals) = &self.bu_cache[li];
            for (cell, &mval) in m.iter().enumerate() {
                if mval == 0.0 {
                    continue;
                }
                let out_base = cell * ku + u0;
                for (c, &uc) in uvals.iter().enumerate() {
                    row[out_base + c] += mval * uc;
                }
            }
        }
        for x in row.iter_mut() {
            *x *= self.weight;
        }
        Ok(row)
    }
}

/// Builds the tensor design for a set of subject series via the streaming
/// builder, rows ordered by (subject, frame index) over the given split.
pub fn tensor_design_streaming(
    series: &[SubjectSeries],
    frames_per_subject: &std::collections::BTreeMap<String, Vec<u32>>,
    bases: &TensorBases,
    lag_stride: usize,
) -> Result<TensorDesign> {
    let s = series
        .first()
        .map(|x| x.s)
        .ok_or_else(|| Error::Data("no subjects to design".to_string()))?;
    struct Job<'a> {
        series: &'a SubjectSeries,
        frames: &'a [u32],
    }
    let mut jobs = Vec::new();
    for sub in series {
        if sub.s != s {
            return Err(Error::Data(format!(
                "subject '{}' has frame length {}, expected {s}",
                sub.subject_id, sub.s
            )));
        }
        if let Some(frames) = frames_per_subject.get(&sub.subject_id) {
            jobs.push(Job {
                series: sub,
                frames,
            });
        }
    }
    jobs.sort_by(|a, b| a.series.subject_id.cmp(&b.series.subject_id));
    let results: Vec<Result<(Vec<Vec<f64>>, usize)>> = crate::par_map(&jobs, |job| {
        let mut builder = TensorBuilder::new(bases, s, lag_stride)?;
        let mut rows = Vec::with_capacity(job.frames.len());
        for &j in job.frames {
            let frame = job.series.frame(j).ok_or_else(|| Error::Subject {
                subject: job.series.subject_id.clone(),
                message: format!("frame {j} not present"),
            })?;
            rows.push(builder.row(&frame.v)?);
        }
        Ok((rows, builder.clamped()))
    });
    let p = bases.total();
    let n: usize = jobs.iter().map(|j| j.frames.len()).sum();
    let mut x = Array2::<f64>::zeros((n, p));
    let mut index = Vec::with_capacity(n);
    let mut clamped = 0;
    let mut row = 0;
    for (job, result) in jobs.iter().zip(results) {
        let (rows, c) = result?;
        clamped += c;
        for (j, values) in job.frames.iter().zip(rows) {
            x.row_mut(row).assign(&ndarray::ArrayView1::from(&values));
            index.push((job.series.subject_id.clone(), *j));
            row += 1;
        }
    }
    if clamped > 0 {
        log::info!("{clamped} lag-map values fell outside the basis domain and were clamped");
    }
    Ok(TensorDesign { x, index, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{SecondFrame, SubjectSeries};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series(id: &str, frames: Vec<Vec<f64>>) -> SubjectSeries {
        let s = frames[0].len();
        SubjectSeries {
            subject_id: id.to_string(),
            s,
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(i, v)| SecondFrame {
                    j: i as u32 + 1,
                    v,
                    session: None,
                })
                .collect(),
        }
    }

    #[test]
    fn four_sample_frame_matches_hand_layout() {
        // v = (1, 2, 3, 4): D repeats each lagged position along its block,
        // S walks the later positions, U the lag.
        let sub = series("a", vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let dsu = build_dsu_matrices(&sub, None, 1).unwrap();
        assert_eq!(dsu.d.row(0).to_vec(), vec![1.0, 1.0, 1.0, 2.0, 2.0, 3.0]);
        assert_eq!(dsu.s.row(0).to_vec(), vec![2.0, 3.0, 4.0, 3.0, 4.0, 4.0]);
        assert_eq!(dsu.u.row(0).to_vec(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 1.0]);
        let w = 1.0 / 6.0;
        assert!(dsu.lmat.iter().all(|&x| x == w));
        assert_eq!(dsu.included_lags, vec![1, 2, 3]);
    }

    #[test]
    fn two_frames_stack_as_rows() {
        let sub = series("a", vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]);
        let dsu = build_dsu_matrices(&sub, None, 1).unwrap();
        assert_eq!(dsu.d.dim(), (2, 6));
        assert_eq!(dsu.d.row(1).to_vec(), vec![5.0, 5.0, 5.0, 6.0, 6.0, 7.0]);
        assert_eq!(dsu.s.row(1).to_vec(), vec![6.0, 7.0, 8.0, 7.0, 8.0, 8.0]);
        assert_eq!(dsu.frames, vec![1, 2]);
        let only_second = build_dsu_matrices(&sub, Some(&[2]), 1).unwrap();
        assert_eq!(only_second.d.row(0).to_vec(), dsu.d.row(1).to_vec());
    }

    #[test]
    fn stride_subsamples_lags_and_renormalizes_weights() {
        let sub = series("a", vec![(1..=5).map(f64::from).collect()]);
        let dsu = build_dsu_matrices(&sub, None, 2).unwrap();
        // s=5, stride 2: lags {1, 3}; per position t: t=1 -> {1,3}, t=2 ->
        // {1,3}, t=3 -> {1}, t=4 -> {1}: six columns.
        assert_eq!(dsu.included_lags, vec![1, 3]);
        assert_eq!(dsu.u.row(0).to_vec(), vec![1.0, 3.0, 1.0, 3.0, 1.0, 1.0]);
        assert!(dsu.lmat.iter().all(|&x| x == 1.0 / 6.0));
        assert!(build_dsu_matrices(&sub, None, 0).is_err());
    }

    #[test]
    fn full_pair_count_is_s_choose_two() {
        let v: Vec<f64> = (0..100).map(|i| 1.0 + (i as f64 * 0.1).sin()).collect();
        let sub = series("a", vec![v]);
        let dsu = build_dsu_matrices(&sub, None, 1).unwrap();
        assert_eq!(dsu.d.ncols(), 100 * 99 / 2);
        assert_abs_diff_eq!(dsu.lmat[[0, 0]], 1.0 / 4950.0, epsilon = 1e-18);
    }

    fn bases_small(s: usize) -> TensorBases {
        TensorBases::with_degree(2, 4, 3, 3, (0.0, 3.0), s).unwrap()
    }

    #[test]
    fn streaming_rows_match_direct_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = 20;
        let frames: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..s).map(|_| rng.random_range(0.0..3.0)).collect())
            .collect();
        let sub = series("a", frames);
        let bases = bases_small(s);
        for stride in [1usize, 3] {
            let dsu = build_dsu_matrices(&sub, None, stride).unwrap();
            let direct = tensor_design(&[dsu], &bases).unwrap();
            let mut builder = TensorBuilder::new(&bases, s, stride).unwrap();
            for (r, frame) in sub.frames.iter().enumerate() {
                let fast = builder.row(&frame.v).unwrap();
                for (c, &want) in direct.x.row(r).iter().enumerate() {
                    assert_abs_diff_eq!(fast[c], want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariate_row_sums_to_one_by_partition_of_unity() {
        // Sum over all (kd, kv, ku) of the covariates equals the weighted
        // count of pairs, which the constant weight normalizes to 1.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = 15;
        let v: Vec<f64> = (0..s).map(|_| rng.random_range(0.0..3.0)).collect();
        let bases = bases_small(s);
        let mut builder = TensorBuilder::new(&bases, s, 1).unwrap();
        let row = builder.row(&v).unwrap();
        assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(builder.clamped(), 0);
    }

    #[test]
    fn out_of_domain_magnitudes_are_clamped_and_counted() {
        let s = 10;
        let mut v = vec![1.0; s];
        v[3] = 3.7;
        let bases = bases_small(s);
        let mut builder = TensorBuilder::new(&bases, s, 1).unwrap();
        builder.row(&v).unwrap();
        // Sample 4 appears once per pair involving it on the d axis.
        assert!(builder.clamped() > 0);
    }

    #[test]
    fn streaming_design_orders_rows_by_subject_then_frame() {
        let a = series("a", vec![vec![1.0; 6], vec![2.0; 6]]);
        let b = series("b", vec![vec![1.5; 6]]);
        let bases = bases_small(6);
        let mut split = std::collections::BTreeMap::new();
        split.insert("b".to_string(), vec![1]);
        split.insert("a".to_string(), vec![2, 1]);
        let design = tensor_design_streaming(&[b, a], &split, &bases, 1).unwrap();
        assert_eq!(
            design.index,
            vec![
                ("a".to_string(), 2),
                ("a".to_string(), 1),
                ("b".to_string(), 1)
            ]
        );
        assert_eq!(design.x.nrows(), 3);
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..12).map(|_| rng.random_range(0.0..3.0)).collect())
            .collect();
        let sub = vec![series("a", frames)];
        let bases = bases_small(12);
        let mut split = std::collections::BTreeMap::new();
        split.insert("a".to_string(), vec![1, 2, 3]);
        let d1 = tensor_design_streaming(&sub, &split, &bases, 1).unwrap();
        let d2 = tensor_design_streaming(&sub, &split, &bases, 1).unwrap();
        assert_eq!(d1.x, d2.x);
    }
}
