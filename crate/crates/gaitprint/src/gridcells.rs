//! Grid-cell predictors: lag-map points binned into a fixed square grid per
//! lag, one count column per (lag, row, column) cell, plus the near-constant
//! column screen applied before model fitting.
//!
//! Cells are left-closed right-open except at the top edge of the range,
//! which is closed so the boundary value lands in the last cell instead of
//! being discarded. Points outside the range on either axis are discarded
//! and counted. Column order is lag-major, then row-major with the row index
//! running along the current-value axis and the column index along the
//! lagged-value axis.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagmap::LagMap;

/// Grid geometry and the lags it covers. The same range applies to both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub range_lo: f64,
    pub range_hi: f64,
    pub cell_size: f64,
    pub lags: Vec<u16>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            range_lo: 0.0,
            range_hi: 3.0,
            cell_size: 0.25,
            lags: vec![15, 30, 45],
        }
    }
}

impl GridSpec {
    /// Number of cells along one axis. Errors unless the range is an integer
    /// number of cells.
    pub fn cells_per_side(&self) -> Result<usize> {
        if !(self.cell_size > 0.0) || !(self.range_hi > self.range_lo) {
            return Err(Error::Config(format!(
                "grid needs range_lo < range_hi and positive cell_size, got [{}, {}] / {}",
                self.range_lo, self.range_hi, self.cell_size
            )));
        }
        let span = self.range_hi - self.range_lo;
        let side = (span / self.cell_size).round();
        if side < 1.0 || (side * self.cell_size - span).abs() > 1e-9 * span {
            return Err(Error::Config(format!(
                "cell_size {} does not tile the range [{}, {}]",
                self.cell_size, self.range_lo, self.range_hi
            )));
        }
        Ok(side as usize)
    }

    /// Sorted, deduplicated lags.
    pub fn sorted_lags(&self) -> Result<Vec<u16>> {
        if self.lags.is_empty() {
            return Err(Error::Config("grid spec has no lags".to_string()));
        }
        let mut lags = self.lags.clone();
        lags.sort_unstable();
        lags.dedup();
        Ok(lags)
    }

    /// Total number of predictor columns: lags * side^2.
    pub fn total_cells(&self) -> Result<usize> {
        let side = self.cells_per_side()?;
        Ok(self.sorted_lags()?.len() * side * side)
    }

    /// Bin index of a value along one axis, or None when out of range.
    fn bin(&self, x: f64, side: usize) -> Option<usize> {
        if !(x >= self.range_lo && x <= self.range_hi) {
            return None;
        }
        let k = ((x - self.range_lo) / self.cell_size).floor() as usize;
        // x == range_hi (or a rounding artifact at the edge) closes the top cell.
        Some(k.min(side - 1))
    }

    /// Cell of a (lagged, current) pair, or None if it falls outside the grid.
    pub fn cell_of(&self, d: f64, v: f64) -> Result<Option<(u16, u16)>> {
        let side = self.cells_per_side()?;
        Ok(match (self.bin(v, side), self.bin(d, side)) {
            (Some(r), Some(c)) => Some((r as u16, c as u16)),
            _ => None,
        })
    }
}

/// Identifies one predictor column: lag, row (current-value axis), column
/// (lagged-value axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub u: u16,
    pub r: u16,
    pub c: u16,
}

impl CellIndex {
    pub fn column_name(&self) -> String {
        format!("u{}_r{}_c{}", self.u, self.r, self.c)
    }
}

/// The canonical column order for a grid spec.
pub fn cell_order(spec: &GridSpec) -> Result<Vec<CellIndex>> {
    let side = spec.cells_per_side()? as u16;
    let lags = spec.sorted_lags()?;
    let mut order = Vec::with_capacity(lags.len() * side as usize * side as usize);
    for &u in &lags {
        for r in 0..side {
            for c in 0..side {
                order.push(CellIndex { u, r, c });
            }
        }
    }
    Ok(order)
}

/// Cell counts of one frame's lag map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub counts: Vec<u32>,
    /// Lag-map points outside the grid range on either axis.
    pub discarded: u32,
}

/// Bins one lag map into grid-cell counts. Every lag in the spec must be
/// present in the map.
pub fn count_cells(map: &LagMap, spec: &GridSpec) -> Result<CellCounts> {
    let side = spec.cells_per_side()?;
    let lags = spec.sorted_lags()?;
    let mut counts = vec![0u32; lags.len() * side * side];
    let mut discarded = 0u32;
    for (li, &u) in lags.iter().enumerate() {
        let base = li * side * side;
        for t in map.lag_slice(u)? {
            match (spec.bin(t.v, side), spec.bin(t.d, side)) {
                (Some(r), Some(c)) => counts[base + r * side + c] += 1,
                _ => discarded += 1,
            }
        }
    }
    Ok(CellCounts { counts, discarded })
}

/// One design-matrix row: the cell counts of one (subject, frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorRow {
    pub subject_id: String,
    pub j: u32,
    pub counts: Vec<u32>,
    pub discarded: u32,
}

/// A dense design matrix with its row index and column names.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: Array2<f64>,
    /// (subject, frame) per row, ascending by subject then frame.
    pub index: Vec<(String, u32)>,
    pub cells: Vec<CellIndex>,
}

impl Design {
    pub fn column_names(&self) -> Vec<String> {
        self.cells.iter().map(CellIndex::column_name).collect()
    }
}

/// Stacks predictor rows into a design matrix, sorting rows by subject then
/// frame index. All rows must have the spec's column count.
pub fn build_design(rows: &[PredictorRow], spec: &GridSpec) -> Result<Design> {
    let cells = cell_order(spec)?;
    let p = cells.len();
    let mut sorted: Vec<&PredictorRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.subject_id, a.j).cmp(&(&b.subject_id, b.j)));
    let mut x = Array2::<f64>::zeros((sorted.len(), p));
    let mut index = Vec::with_capacity(sorted.len());
    for (i, row) in sorted.iter().enumerate() {
        if row.counts.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "row for subject '{}' frame {} has {} cells, spec has {p}",
                row.subject_id,
                row.j,
                row.counts.len()
            )));
        }
        for (k, &c) in row.counts.iter().enumerate() {
            x[[i, k]] = c as f64;
        }
        index.push((row.subject_id.clone(), row.j));
    }
    Ok(Design { x, index, cells })
}

/// Why a column was screened out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedColumn {
    pub index: usize,
    pub cell: CellIndex,
    pub unique_fraction: f64,
    /// Mode count over runner-up count. None for constant columns, which
    /// have no runner-up and are removed unconditionally.
    pub mode_ratio: Option<f64>,
}

/// Outcome of the near-constant column screen, fit on training data only and
/// reapplied verbatim to test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub n_rows: usize,
    pub unique_fraction_threshold: f64,
    pub mode_ratio_threshold: f64,
    /// Kept column indices into the unscreened design, ascending.
    pub kept: Vec<usize>,
    pub removed: Vec<RemovedColumn>,
}

impl ScreenReport {
    pub fn kept_cells(&self, cells: &[CellIndex]) -> Vec<CellIndex> {
        self.kept.iter().map(|&i| cells[i]).collect()
    }
}

/// Flags near-constant columns: a column is removed when its fraction of
/// distinct values is below `unique_fraction_threshold` and the ratio of its
/// most common value count to the runner-up exceeds `mode_ratio_threshold`.
/// Constant columns are always removed.
pub fn screen_predictors(
    design: &Design,
    unique_fraction_threshold: f64,
    mode_ratio_threshold: f64,
) -> Result<ScreenReport> {
    let (n, p) = design.x.dim();
    if n == 0 {
        return Err(Error::Data("cannot screen an empty design".to_string()));
    }
    let mut kept = Vec::with_capacity(p);
    let mut removed = Vec::new();
    for k in 0..p {
        let mut freq: BTreeMap<u64, usize> = BTreeMap::new();
        for i in 0..n {
            *freq.entry(design.x[[i, k]].to_bits()).or_insert(0) += 1;
        }
        let unique_fraction = freq.len() as f64 / n as f64;
        let mut counts: Vec<usize> = freq.values().copied().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let mode_ratio = if counts.len() < 2 {
            None
        } else {
            Some(counts[0] as f64 / counts[1] as f64)
        };
        let constant = freq.len() == 1;
        if constant
            || (unique_fraction < unique_fraction_threshold
                && mode_ratio.is_some_and(|r| r > mode_ratio_threshold))
        {
            removed.push(RemovedColumn {
                index: k,
                cell: design.cells[k],
                unique_fraction,
                mode_ratio,
            });
        } else {
            kept.push(k);
        }
    }
    if kept.is_empty() {
        return Err(Error::Data(
            "screening removed every predictor column".to_string(),
        ));
    }
    Ok(ScreenReport {
        n_rows: n,
        unique_fraction_threshold,
        mode_ratio_threshold,
        kept,
        removed,
    })
}

/// Selects the screened-in columns of a design matrix.
pub fn apply_screen(x: &Array2<f64>, report: &ScreenReport) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::<f64>::zeros((n, report.kept.len()));
    for (dst, &src) in report.kept.iter().enumerate() {
        out.column_mut(dst).assign(&x.column(src));
    }
    out
}
