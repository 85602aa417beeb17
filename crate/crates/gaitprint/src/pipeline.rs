//! End-to-end drivers that wire segmentation, lag maps, designs, fits, and
//! scoring together for both identification methods. The command-line tool,
//! the browser demo, and the test suites all run through these functions, so
//! they behave identically everywhere.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::funreg::design::tensor_design_streaming;
use crate::funreg::{funreg_one_vs_rest, FunFit, FunregConfig, PenaltyBlocks, TensorBases};
use crate::glm::{one_vs_rest_fit, FitConfig, LogisticFit};
use crate::gridcells::{
    apply_screen, build_design, count_cells, screen_predictors, Design, GridSpec, PredictorRow,
    ScreenReport,
};
use crate::identify::ProbMatrix;
use crate::ingest::SubjectSeries;
use crate::lagmap::{build_lagmap, LagSelection};

/// Settings for the grid-cell method.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GridcellConfig {
    pub grid: GridSpec,
    pub fit: FitConfig,
    /// Columns with a distinct-value fraction below this are screening
    /// candidates.
    pub unique_fraction_threshold: f64,
    /// Candidates whose mode-to-runner-up ratio exceeds this are removed.
    pub mode_ratio_threshold: f64,
}

impl Default for GridcellConfig {
    fn default() -> Self {
        GridcellConfig {
            grid: GridSpec::default(),
            fit: FitConfig::default(),
            unique_fraction_threshold: 0.10,
            mode_ratio_threshold: 19.0,
        }
    }
}

/// Builds the grid-cell count design for the chosen frames of each subject.
/// Rows come out sorted by subject then frame index.
pub fn gridcell_design(
    series: &[SubjectSeries],
    frames_per_subject: &BTreeMap<String, Vec<u32>>,
    spec: &GridSpec,
) -> Result<Design> {
    let selection = LagSelection::Lags(spec.sorted_lags()?);
    struct Job<'a> {
        series: &'a SubjectSeries,
        frames: &'a [u32],
    }
    let mut jobs = Vec::new();
    for sub in series {
        if let Some(frames) = frames_per_subject.get(&sub.subject_id) {
            jobs.push(Job {
                series: sub,
                frames,
            });
        }
    }
    let results: Vec<Result<Vec<PredictorRow>>> = crate::par_map(&jobs, |job| {
        let mut rows = Vec::with_capacity(job.frames.len());
        for &j in job.frames {
            let frame = job.series.frame(j).ok_or_else(|| Error::Subject {
                subject: job.series.subject_id.clone(),
                message: format!("frame {j} not present"),
            })?;
            let map = build_lagmap(frame, &selection)?;
            let counts = count_cells(&map, spec)?;
            rows.push(PredictorRow {
                subject_id: job.series.subject_id.clone(),
                j,
                counts: counts.counts,
                discarded: counts.discarded,
            });
        }
        Ok(rows)
    });
    let mut all_rows = Vec::new();
    for rows in results {
        all_rows.extend(rows?);
    }
    if all_rows.is_empty() {
        return Err(Error::Data("no frames selected for the design".to_string()));
    }
    build_design(&all_rows, spec)
}

/// Trained grid-cell models plus everything needed to score new frames.
#[derive(Debug, Clone)]
pub struct GridcellModels {
    pub screen: ScreenReport,
    pub fits: BTreeMap<String, LogisticFit>,
}

/// Fits one-vs-rest grid-cell models on the training frames. The screen is
/// learned here and must be reapplied verbatim at scoring time.
pub fn train_gridcell(
    series: &[SubjectSeries],
    train_frames: &BTreeMap<String, Vec<u32>>,
    cfg: &GridcellConfig,
) -> Result<GridcellModels> {
    let design = gridcell_design(series, train_frames, &cfg.grid)?;
    let screen = screen_predictors(
        &design,
        cfg.unique_fraction_threshold,
        cfg.mode_ratio_threshold,
    )?;
    let x = apply_screen(&design.x, &screen);
    let names: Vec<String> = screen
        .kept_cells(&design.cells)
        .iter()
        .map(|c| c.column_name())
        .collect();
    let fits = one_vs_rest_fit(&x, &design.index, &names, &cfg.fit)?;
    Ok(GridcellModels { screen, fits })
}

/// Scores the chosen frames under every trained grid-cell model.
pub fn score_gridcell(
    models: &GridcellModels,
    series: &[SubjectSeries],
    frames_per_subject: &BTreeMap<String, Vec<u32>>,
    spec: &GridSpec,
) -> Result<ProbMatrix> {
    let design = gridcell_design(series, frames_per_subject, spec)?;
    let x = apply_screen(&design.x, &models.screen);
    ProbMatrix::from_logistic_fits(&models.fits, x.view(), &design.index)
}

/// Trained surface models with their bases.
#[derive(Debug, Clone)]
pub struct SurfaceModels {
    pub bases: TensorBases,
    pub lag_stride: usize,
    pub fits: BTreeMap<String, FunFit>,
}

/// Fits one-vs-rest tensor-product surfaces on the training frames.
pub fn train_surface(
    series: &[SubjectSeries],
    train_frames: &BTreeMap<String, Vec<u32>>,
    cfg: &FunregConfig,
) -> Result<SurfaceModels> {
    let s = series
        .first()
        .map(|x| x.s)
        .ok_or_else(|| Error::Data("no subjects to train on".to_string()))?;
    let bases = cfg.bases(s)?;
    let design = tensor_design_streaming(series, train_frames, &bases, cfg.lag_stride)?;
    let blocks = PenaltyBlocks::new(&bases)?;
    let fits = funreg_one_vs_rest(&design, &blocks, cfg)?;
    Ok(SurfaceModels {
        bases,
        lag_stride: cfg.lag_stride,
        fits,
    })
}

/// Scores the chosen frames under every trained surface model.
pub fn score_surface(
    models: &SurfaceModels,
    series: &[SubjectSeries],
    frames_per_subject: &BTreeMap<String, Vec<u32>>,
) -> Result<ProbMatrix> {
    let design =
        tensor_design_streaming(series, frames_per_subject, &models.bases, models.lag_stride)?;
    ProbMatrix::from_fun_fits(&models.fits, design.x.view(), &design.index)
}
