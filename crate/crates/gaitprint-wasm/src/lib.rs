//! Browser bindings for an interactive walkthrough of the identification
//! pipeline. One exported handle wraps a synthetic cohort with trained
//! grid-cell models; its methods return JSON strings so the page needs no
//! generated accessor types beyond the handle itself.
//!
//! Everything here is deterministic in (n_subjects, seconds, seed), and all
//! heavy lifting stays in the core crate. `DemoCore` is plain Rust so the
//! logic tests on the host; the `#[wasm_bindgen]` layer only converts
//! errors.
//!
//! Build for the web with `wasm-pack build --target web crates/gaitprint-wasm`
//! (the target `wasm32-unknown-unknown` must be installed via rustup).

use std::collections::BTreeMap;

use serde_json::json;
use wasm_bindgen::prelude::*;

use gaitprint::cma::{cma_intervals, McSettings};
use gaitprint::gridcells::{cell_order, count_cells, CellIndex, GridSpec};
use gaitprint::identify::{average_windows, rank_k_accuracy, ProbMatrix, Window};
use gaitprint::ingest::{
    segment_seconds, stratified_split, SegmentOptions, SplitAssignment, SplitMode, SplitSpec,
    SubjectSeries,
};
use gaitprint::lagmap::{build_lagmap, LagSelection};
use gaitprint::pipeline::{score_gridcell, train_gridcell, GridcellConfig, GridcellModels};
use gaitprint::synth::{generate_streams, SynthConfig};
use gaitprint::Error;

/// Synthetic cohort with trained one-vs-rest models and scored test frames.
pub struct DemoCore {
    series: Vec<SubjectSeries>,
    split: SplitAssignment,
    models: GridcellModels,
    grid: GridSpec,
    /// Full design-order cells, then the post-screen subset in coefficient
    /// order.
    cells: Vec<CellIndex>,
    kept: Vec<CellIndex>,
    /// Normalized per-second probabilities over all test frames.
    matrix: ProbMatrix,
}

impl DemoCore {
    pub fn new(n_subjects: usize, seconds: usize, seed: u64) -> Result<DemoCore, Error> {
        if !(2..=9).contains(&n_subjects) {
            return Err(Error::Config(format!(
                "demo cohorts take 2 to 9 subjects, got {n_subjects}"
            )));
        }
        if !(10..=120).contains(&seconds) {
            return Err(Error::Config(format!(
                "demo recordings take 10 to 120 seconds per subject, got {seconds}"
            )));
        }
        let synth = SynthConfig {
            n_subjects,
            seconds_per_subject: seconds,
            seed,
            ..SynthConfig::default()
        };
        let opts = SegmentOptions {
            s: 100,
            rate_hz: synth.rate_hz,
            trim_secs: 0.0,
        };
        let series: Vec<SubjectSeries> = generate_streams(&synth)?
            .iter()
            .map(|stream| segment_seconds(stream, &opts))
            .collect::<gaitprint::Result<_>>()?;
        let split = stratified_split(
            &series,
            &SplitSpec {
                mode: SplitMode::WithinSession {
                    train_fraction: 0.75,
                },
                seed,
            },
        )?;
        let cfg = GridcellConfig::default();
        let models = train_gridcell(&series, &split.train, &cfg)?;
        let cells = cell_order(&cfg.grid)?;
        let kept = models.screen.kept_cells(&cells);
        let matrix = score_gridcell(&models, &series, &split.test, &cfg.grid)?.normalized();
        Ok(DemoCore {
            series,
            split,
            models,
            grid: cfg.grid,
            cells,
            kept,
            matrix,
        })
    }

    fn subject(&self, id: &str) -> Result<&SubjectSeries, Error> {
        self.series
            .iter()
            .find(|s| s.subject_id == id)
            .ok_or_else(|| Error::Subject {
                subject: id.to_string(),
                message: "not in the demo cohort".to_string(),
            })
    }

    fn grid_dims(&self) -> (usize, usize) {
        let n = ((self.grid.range_hi - self.grid.range_lo) / self.grid.cell_size).round() as usize;
        (n, n)
    }

    /// Cohort metadata, split sizes, and held-out accuracy in one blob.
    pub fn overview(&self) -> Result<String, Error> {
        let (rows, cols) = self.grid_dims();
        let frames: BTreeMap<&str, usize> = self
            .series
            .iter()
            .map(|s| (s.subject_id.as_str(), s.frames.len()))
            .collect();
        let count = |m: &BTreeMap<String, Vec<u32>>| -> BTreeMap<String, usize> {
            m.iter().map(|(k, v)| (k.clone(), v.len())).collect()
        };
        let full = average_windows(&self.matrix, Window::All)?;
        let overview = json!({
            "subjects": self.series.iter().map(|s| s.subject_id.clone()).collect::<Vec<_>>(),
            "s": self.series.first().map_or(0, |s| s.s),
            "frames": frames,
            "train": count(&self.split.train),
            "test": count(&self.split.test),
            "grid": {
                "lags": self.grid.lags,
                "rows": rows,
                "cols": cols,
                "cell_size": self.grid.cell_size,
                "range": [self.grid.range_lo, self.grid.range_hi],
            },
            "kept_cells": self.kept.len(),
            "removed_cells": self.cells.len() - self.kept.len(),
            "accuracy": {
                "rank1_per_second": rank_k_accuracy(&self.matrix, 1)?,
                "rank1_all_seconds": rank_k_accuracy(&full, 1)?,
                "rank5_all_seconds": rank_k_accuracy(&full, 5)?,
            },
        });
        Ok(overview.to_string())
    }

    /// One frame's signal, its lag-map points, and binned counts per lag.
    pub fn lag_view(&self, subject: &str, j: u32) -> Result<String, Error> {
        let series = self.subject(subject)?;
        let frame = series.frame(j).ok_or_else(|| Error::Subject {
            subject: subject.to_string(),
            message: format!("frame {j} not present (frames run 1..={})", series.frames.len()),
        })?;
        let lags = self.grid.sorted_lags()?;
        let map = build_lagmap(frame, &LagSelection::Lags(lags.clone()))?;
        let counts = count_cells(&map, &self.grid)?;
        let (rows, cols) = self.grid_dims();
        let mut grids: BTreeMap<String, Vec<Vec<u32>>> = lags
            .iter()
            .map(|u| (u.to_string(), vec![vec![0u32; cols]; rows]))
            .collect();
        for (cell, &n) in self.cells.iter().zip(&counts.counts) {
            grids.get_mut(&cell.u.to_string()).expect("lag present")[cell.r as usize]
                [cell.c as usize] = n;
        }
        let view = json!({
            "subject": subject,
            "j": j,
            "v": frame.v,
            "lags": lags,
            "triples": map.triples.iter()
                .map(|t| json!([t.d, t.v, t.u]))
                .collect::<Vec<_>>(),
            "grids": grids,
            "discarded": counts.discarded,
        });
        Ok(view.to_string())
    }

    /// Simultaneous and pointwise intervals for one subject's cells.
    pub fn fingerprint(&self, subject: &str, n_mc: u32) -> Result<String, Error> {
        let fit = self.models.fits.get(subject).ok_or_else(|| Error::Subject {
            subject: subject.to_string(),
            message: "no fitted model".to_string(),
        })?;
        let mc = McSettings {
            n_mc: (n_mc as usize).clamp(2_000, 500_000),
            seed: 77,
        };
        let result = cma_intervals(subject, fit, &self.kept, 0.05, &mc)?;
        let report = json!({
            "subject": result.subject_id,
            "alpha": result.alpha,
            "q": result.q,
            "z": result.z,
            "mc_se": result.mc_se,
            "n_mc": result.n_mc,
            "n_significant": result.n_significant,
            "n_significant_unadjusted": result.n_significant_unadjusted,
            "cells": result.intervals.iter().map(|c| json!({
                "u": c.cell.u, "r": c.cell.r, "c": c.cell.c,
                "estimate": c.estimate,
                "lo": c.lo, "hi": c.hi,
                "significant": c.significant,
                "significant_unadjusted": c.significant_unadjusted,
            })).collect::<Vec<_>>(),
        });
        Ok(report.to_string())
    }

    /// Averages the scored probabilities over `window` consecutive held-out
    /// seconds of `subject`, starting `offset` rows into its test block.
    pub fn identify(&self, subject: &str, offset: usize, window: usize) -> Result<String, Error> {
        self.subject(subject)?;
        if window == 0 {
            return Err(Error::Config("window must be at least 1 second".to_string()));
        }
        let rows: Vec<usize> = self
            .matrix
            .rows
            .iter()
            .enumerate()
            .filter(|(_, (id, _))| id == subject)
            .map(|(i, _)| i)
            .collect();
        if offset + window > rows.len() {
            return Err(Error::Config(format!(
                "offset {offset} + window {window} exceeds the {} test seconds of '{subject}'",
                rows.len()
            )));
        }
        let picked = &rows[offset..offset + window];
        let n_subjects = self.matrix.subjects.len();
        let mut probs = vec![0.0f64; n_subjects];
        for &i in picked {
            for (k, p) in probs.iter_mut().enumerate() {
                *p += self.matrix.probs[[i, k]];
            }
        }
        for p in probs.iter_mut() {
            *p /= picked.len() as f64;
        }
        let best = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .expect("cohort is non-empty");
        let predicted = self.matrix.subjects[best].clone();
        let verdict = json!({
            "truth": subject,
            "offset": offset,
            "window": window,
            "n_test_seconds": rows.len(),
            "seconds": picked.iter().map(|&i| self.matrix.rows[i].1).collect::<Vec<_>>(),
            "subjects": self.matrix.subjects,
            "probs": probs,
            "predicted": predicted,
            "correct": predicted == subject,
        });
        Ok(verdict.to_string())
    }
}

/// JS-facing handle. Methods mirror `DemoCore` and map errors to exceptions.
#[wasm_bindgen]
pub struct Demo {
    core: DemoCore,
}

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// Generates a cohort, trains the models, and scores the held-out
    /// seconds. Runs for a few seconds at the larger cohort sizes.
    #[wasm_bindgen(constructor)]
    pub fn new(n_subjects: u32, seconds: u32, seed: u32) -> Result<Demo, JsError> {
        let core =
            DemoCore::new(n_subjects as usize, seconds as usize, seed as u64).map_err(js_err)?;
        Ok(Demo { core })
    }

    pub fn overview(&self) -> Result<String, JsError> {
        self.core.overview().map_err(js_err)
    }

    pub fn lag_view(&self, subject: &str, j: u32) -> Result<String, JsError> {
        self.core.lag_view(subject, j).map_err(js_err)
    }

    pub fn fingerprint(&self, subject: &str, n_mc: u32) -> Result<String, JsError> {
        self.core.fingerprint(subject, n_mc).map_err(js_err)
    }

    pub fn identify(&self, subject: &str, offset: u32, window: u32) -> Result<String, JsError> {
        self.core
            .identify(subject, offset as usize, window as usize)
            .map_err(js_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn demo() -> DemoCore {
        DemoCore::new(3, 20, 7).expect("demo cohort")
    }

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).expect("valid JSON")
    }

    #[test]
    fn overview_reports_cohort_and_grid() {
        let core = demo();
        let v = parse(&core.overview().unwrap());
        let subjects: Vec<&str> = v["subjects"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap())
            .collect();
        assert_eq!(subjects, ["synth01", "synth02", "synth03"]);
        assert_eq!(v["s"], 100);
        assert_eq!(v["grid"]["rows"], 12);
        assert_eq!(
            v["kept_cells"].as_u64().unwrap() + v["removed_cells"].as_u64().unwrap(),
            432
        );
        for id in subjects {
            assert_eq!(
                v["train"][id].as_u64().unwrap() + v["test"][id].as_u64().unwrap(),
                v["frames"][id].as_u64().unwrap()
            );
        }
        let r1 = v["accuracy"]["rank1_all_seconds"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&r1));
    }

    #[test]
    fn lag_view_conserves_counts() {
        let core = demo();
        let v = parse(&core.lag_view("synth01", 3).unwrap());
        let triples = v["triples"].as_array().unwrap();
        assert_eq!(triples.len(), 85 + 70 + 55);
        let mut binned = 0u64;
        for (_, grid) in v["grids"].as_object().unwrap() {
            for row in grid.as_array().unwrap() {
                for n in row.as_array().unwrap() {
                    binned += n.as_u64().unwrap();
                }
            }
        }
        assert_eq!(
            binned + v["discarded"].as_u64().unwrap(),
            triples.len() as u64
        );
        assert!(core.lag_view("synth01", 0).is_err());
        assert!(core.lag_view("ghost", 1).is_err());
    }

    #[test]
    fn fingerprint_keeps_adjusted_inside_unadjusted() {
        let core = demo();
        let v = parse(&core.fingerprint("synth02", 5_000).unwrap());
        assert!(v["q"].as_f64().unwrap() >= v["z"].as_f64().unwrap());
        let mut n_sig = 0;
        let mut n_unadj = 0;
        for cell in v["cells"].as_array().unwrap() {
            let sig = cell["significant"].as_bool().unwrap();
            let unadj = cell["significant_unadjusted"].as_bool().unwrap();
            assert!(!sig || unadj);
            n_sig += sig as usize;
            n_unadj += unadj as usize;
        }
        assert_eq!(n_sig, v["n_significant"].as_u64().unwrap() as usize);
        assert_eq!(n_unadj, v["n_significant_unadjusted"].as_u64().unwrap() as usize);
        assert!(core.fingerprint("ghost", 5_000).is_err());
    }

    #[test]
    fn identify_averages_normalized_probabilities() {
        let core = demo();
        let v = parse(&core.identify("synth03", 0, 3).unwrap());
        let probs: Vec<f64> = v["probs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p.as_f64().unwrap())
            .collect();
        assert_eq!(probs.len(), 3);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let subjects: Vec<&str> = v["subjects"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap())
            .collect();
        let best = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(v["predicted"].as_str().unwrap(), subjects[best]);
        assert_eq!(
            v["correct"].as_bool().unwrap(),
            v["predicted"] == v["truth"]
        );
        assert!(core.identify("synth03", 900, 3).is_err());
        assert!(core.identify("synth03", 0, 0).is_err());
    }

    #[test]
    fn same_seed_gives_identical_json() {
        let a = DemoCore::new(2, 12, 5).unwrap();
        let b = DemoCore::new(2, 12, 5).unwrap();
        assert_eq!(a.overview().unwrap(), b.overview().unwrap());
        assert_eq!(
            a.lag_view("synth01", 2).unwrap(),
            b.lag_view("synth01", 2).unwrap()
        );
        assert_eq!(
            a.fingerprint("synth01", 3_000).unwrap(),
            b.fingerprint("synth01", 3_000).unwrap()
        );
    }

    #[test]
    fn cohort_bounds_are_enforced() {
        assert!(DemoCore::new(1, 20, 1).is_err());
        assert!(DemoCore::new(10, 20, 1).is_err());
        assert!(DemoCore::new(3, 5, 1).is_err());
        assert!(DemoCore::new(3, 200, 1).is_err());
    }
}
