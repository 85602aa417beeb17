//! Turning per-subject model scores into identification decisions: a score
//! matrix over test seconds, per-second normalization, optional averaging
//! over windows of consecutive seconds, rank-k accuracy, and a permuted
//! baseline.
//!
//! Ranks break probability ties toward the lexicographically smaller
//! subject id, so accuracy never depends on hash order or scheduling.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::funreg::{predict_fun, FunFit};
use crate::glm::{predict_prob, LogisticFit};
use crate::rng::stream_rng;

/// Per-subject probabilities for a set of test seconds. Columns follow
/// `subjects`; each row is labeled with its true subject and first frame.
#[derive(Debug, Clone)]
pub struct ProbMatrix {
    pub subjects: Vec<String>,
    /// (true subject, first frame index of the row's window).
    pub rows: Vec<(String, u32)>,
    pub probs: Array2<f64>,
}

impl ProbMatrix {
    /// Scores every test row under every subject's one-vs-rest logistic
    /// model. `x` must carry the same screened columns the models were
    /// trained on.
    pub fn from_logistic_fits(
        fits: &BTreeMap<String, LogisticFit>,
        x: ArrayView2<f64>,
        index: &[(String, u32)],
    ) -> Result<Self> {
        let columns: Vec<Result<_>> = fits
            .values()
            .map(|fit| predict_prob(fit, x))
            .collect();
        Self::assemble(fits.keys().cloned().collect(), columns, index, x.nrows())
    }

    /// Scores every test row under every subject's tensor-product surface.
    pub fn from_fun_fits(
        fits: &BTreeMap<String, FunFit>,
        x: ArrayView2<f64>,
        index: &[(String, u32)],
    ) -> Result<Self> {
        let columns: Vec<Result<_>> = fits
            .values()
            .map(|fit| predict_fun(fit, x))
            .collect();
        Self::assemble(fits.keys().cloned().collect(), columns, index, x.nrows())
    }

    fn assemble(
        subjects: Vec<String>,
        columns: Vec<Result<ndarray::Array1<f64>>>,
        index: &[(String, u32)],
        n: usize,
    ) -> Result<Self> {
        if index.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} index entries for {n} rows",
                index.len()
            )));
        }
        if subjects.is_empty() {
            return Err(Error::Data("no fitted subjects to score with".to_string()));
        }
        let mut probs = Array2::<f64>::zeros((n, subjects.len()));
        for (c, column) in columns.into_iter().enumerate() {
            probs.column_mut(c).assign(&column?);
        }
        Ok(ProbMatrix {
            subjects,
            rows: index.to_vec(),
            probs,
        })
    }

    /// Rescales each row to sum to one. A row of zeros carries no evidence
    /// and becomes uniform.
    pub fn normalized(&self) -> ProbMatrix {
        let mut probs = self.probs.clone();
        let n_sub = self.subjects.len();
        let mut flat_rows = 0usize;
        for mut row in probs.rows_mut() {
            let total: f64 = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|v| v / total);
            } else {
                row.fill(1.0 / n_sub as f64);
                flat_rows += 1;
            }
        }
        if flat_rows > 0 {
            log::warn!("{flat_rows} test seconds scored zero under every model; treated as uniform");
        }
        ProbMatrix {
            subjects: self.subjects.clone(),
            rows: self.rows.clone(),
            probs,
        }
    }

    fn column_of(&self, subject: &str) -> Result<usize> {
        self.subjects
            .iter()
            .position(|s| s == subject)
            .ok_or_else(|| Error::Data(format!("subject '{subject}' has no fitted model")))
    }
}

/// How many consecutive test seconds back one identification decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Window {
    /// Every test second of a subject forms a single decision.
    All,
    /// Non-overlapping runs of this many seconds; a trailing shorter run
    /// still counts.
    Size(u32),
}

/// Averages probabilities over non-overlapping windows of consecutive rows
/// of the same true subject. Row order inside the matrix decides adjacency.
pub fn average_windows(matrix: &ProbMatrix, window: Window) -> Result<ProbMatrix> {
    if matrix.rows.is_empty() {
        return Err(Error::Data("no test rows to average".to_string()));
    }
    let size = match window {
        Window::All => usize::MAX,
        Window::Size(0) => {
            return Err(Error::Config("window size must be at least 1".to_string()))
        }
        Window::Size(w) => w as usize,
    };
    let n_sub = matrix.subjects.len();
    let mut rows = Vec::new();
    let mut probs_rows: Vec<Vec<f64>> = Vec::new();
    let mut start = 0usize;
    while start < matrix.rows.len() {
        let subject = &matrix.rows[start].0;
        let mut run_end = start;
        while run_end < matrix.rows.len() && &matrix.rows[run_end].0 == subject {
            run_end += 1;
        }
        let mut chunk_start = start;
        while chunk_start < run_end {
            let chunk_end = run_end.min(chunk_start.saturating_add(size));
            let mut acc = vec![0.0; n_sub];
            for r in chunk_start..chunk_end {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += matrix.probs[[r, c]];
                }
            }
            let len = (chunk_end - chunk_start) as f64;
            acc.iter_mut().for_each(|a| *a /= len);
            rows.push((subject.clone(), matrix.rows[chunk_start].1));
            probs_rows.push(acc);
            chunk_start = chunk_end;
        }
        start = run_end;
    }
    let mut probs = Array2::<f64>::zeros((probs_rows.len(), n_sub));
    for (r, row) in probs_rows.iter().enumerate() {
        probs.row_mut(r).assign(&ndarray::ArrayView1::from(row));
    }
    Ok(ProbMatrix {
        subjects: matrix.subjects.clone(),
        rows,
        probs,
    })
}

/// 1-based rank of the true subject in one row, ties resolved toward the
/// smaller id.
fn rank_of_true(matrix: &ProbMatrix, row: usize, true_col: usize) -> usize {
    let p_true = matrix.probs[[row, true_col]];
    let mut rank = 1;
    for c in 0..matrix.subjects.len() {
        if c == true_col {
            continue;
        }
        let p = matrix.probs[[row, c]];
        if p > p_true || (p == p_true && matrix.subjects[c] < matrix.subjects[true_col]) {
            rank += 1;
        }
    }
    rank
}

/// Fraction of rows whose true subject ranks within the top `k`.
pub fn rank_k_accuracy(matrix: &ProbMatrix, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("rank must be at least 1".to_string()));
    }
    if matrix.rows.is_empty() {
        return Err(Error::Data("no rows to rank".to_string()));
    }
    let mut hits = 0usize;
    for (r, (subject, _)) in matrix.rows.iter().enumerate() {
        let col = matrix.column_of(subject)?;
        if rank_of_true(matrix, r, col) <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / matrix.rows.len() as f64)
}

/// Accuracy of one window size.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SensitivityPoint {
    pub window: u32,
    pub n_windows: usize,
    pub rank1: f64,
    pub rank5: f64,
}

/// Rank-1 and rank-5 accuracy across window sizes, shortest first.
pub fn seconds_sensitivity(matrix: &ProbMatrix, windows: &[u32]) -> Result<Vec<SensitivityPoint>> {
    let mut sizes: Vec<u32> = windows.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(Error::Config("no window sizes requested".to_string()));
    }
    let mut out = Vec::with_capacity(sizes.len());
    for w in sizes {
        let averaged = average_windows(matrix, Window::Size(w))?;
        out.push(SensitivityPoint {
            window: w,
            n_windows: averaged.rows.len(),
            rank1: rank_k_accuracy(&averaged, 1)?,
            rank5: rank_k_accuracy(&averaged, 5)?,
        });
    }
    Ok(out)
}

/// Rank-k accuracy when true labels are shuffled across rows. The mean over
/// permutations estimates the no-information floor.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PermutationBaseline {
    pub k: usize,
    pub n_permutations: usize,
    pub mean_accuracy: f64,
    pub accuracies: Vec<f64>,
}

pub fn permutation_baseline(
    matrix: &ProbMatrix,
    k: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<PermutationBaseline> {
    use rand::seq::SliceRandom;
    if n_permutations == 0 {
        return Err(Error::Config(
            "need at least one permutation".to_string(),
        ));
    }
    if matrix.rows.is_empty() {
        return Err(Error::Data("no rows to permute".to_string()));
    }
    let true_cols: Vec<usize> = matrix
        .rows
        .iter()
        .map(|(s, _)| matrix.column_of(s))
        .collect::<Result<_>>()?;
    let mut accuracies = Vec::with_capacity(n_permutations);
    for p in 0..n_permutations {
        let mut shuffled = true_cols.clone();
        let mut rng = stream_rng(seed, p as u64);
        shuffled.shuffle(&mut rng);
        let hits = shuffled
            .iter()
            .enumerate()
            .filter(|&(r, &col)| rank_of_true(matrix, r, col) <= k)
            .count();
        accuracies.push(hits as f64 / shuffled.len() as f64);
    }
    let mean_accuracy = accuracies.iter().sum::<f64>() / n_permutations as f64;
    Ok(PermutationBaseline {
        k,
        n_permutations,
        mean_accuracy,
        accuracies,
    })
}
