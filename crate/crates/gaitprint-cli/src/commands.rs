//! Subcommand bodies. Every command loads the resolved configuration, does
//! its work through the library pipeline, and writes artifacts that embed
//! the configuration hash. Commands that consume a model file first compare
//! its embedded hash against the current configuration and refuse on
//! mismatch, so trained models can never be scored under settings other than
//! the ones that produced them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use gaitprint::cma::{cma_intervals, fingerprint_report, CmaResult, FingerprintReport};
use gaitprint::gridcells::cell_order;
use gaitprint::identify::{
    average_windows, permutation_baseline, rank_k_accuracy, seconds_sensitivity,
    PermutationBaseline, ProbMatrix, SensitivityPoint, Window,
};
use gaitprint::ingest::{load_accelerometry, segment_seconds, SubjectSeries};
use gaitprint::model::{load_models, save_models, ModelArtifact, ModelPayload};
use gaitprint::pipeline::{
    score_gridcell, score_surface, train_gridcell, train_surface, GridcellModels, SurfaceModels,
};
use gaitprint::report::{
    accuracy_curve_svg, heatmap_svg, write_intervals_csv, write_json, write_predictions_csv,
    write_sensitivity_csv, write_svg,
};
use gaitprint::store::{read_frames_binary, read_frames_csv, write_frames_binary, write_frames_csv};
use gaitprint::synth::{generate_streams, write_accelerometry_csv};
use gaitprint::{Error, Result};

use crate::config::{config_hash, stage_seed, ExperimentConfig, Method, STAGE_PERMUTATION};

fn io_config_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Frames files are CSV when the extension says so, binary otherwise.
fn frames_is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

fn read_frames(path: &Path) -> Result<Vec<SubjectSeries>> {
    if frames_is_csv(path) {
        read_frames_csv(path)
    } else {
        read_frames_binary(path)
    }
}

fn write_frames(series: &[SubjectSeries], path: &Path) -> Result<()> {
    if frames_is_csv(path) {
        write_frames_csv(series, path)
    } else {
        write_frames_binary(series, path)
    }
}

fn check_hash(artifact: &ModelArtifact, cfg: &ExperimentConfig, models_path: &Path) -> Result<String> {
    let hash = config_hash(cfg)?;
    if artifact.config_hash != hash {
        return Err(Error::Config(format!(
            "models in {} were trained under configuration {} but the current configuration is {}; \
             rerun with the training configuration (including --method and --seed)",
            models_path.display(),
            &artifact.config_hash[..12.min(artifact.config_hash.len())],
            &hash[..12],
        )));
    }
    Ok(hash)
}

/// Writes a synthetic cohort as one CSV per subject.
pub fn run_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let streams = generate_streams(&cfg.synth)?;
    write_accelerometry_csv(&streams, out)?;
    log::info!(
        "wrote {} subjects x {} s at {} Hz to {}",
        streams.len(),
        cfg.synth.seconds_per_subject,
        cfg.synth.rate_hz,
        out.display()
    );
    println!("synth: {} subjects -> {}", streams.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    files: Vec<String>,
    rows_read: usize,
    rows_rejected: usize,
    rows_filtered: usize,
    subjects: usize,
    frames_per_subject: BTreeMap<String, usize>,
}

/// Loads raw accelerometry, segments it into second frames, writes a frames
/// file (binary unless the output extension is .csv).
pub fn run_ingest(
    cfg: &ExperimentConfig,
    input: &Path,
    out: &Path,
    report_path: Option<&Path>,
) -> Result<()> {
    let (streams, report) = load_accelerometry(input, &cfg.ingest, cfg.segment.rate_hz)?;
    let mut series = Vec::with_capacity(streams.len());
    for stream in &streams {
        series.push(segment_seconds(stream, &cfg.segment)?);
    }
    series.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    write_frames(&series, out)?;

    let summary = IngestSummary {
        files: report.files.clone(),
        rows_read: report.rows_read,
        rows_rejected: report.rows_rejected,
        rows_filtered: report.rows_filtered,
        subjects: series.len(),
        frames_per_subject: series
            .iter()
            .map(|s| (s.subject_id.clone(), s.frames.len()))
            .collect(),
    };
    if let Some(path) = report_path {
        write_json(&summary, &config_hash(cfg)?, path)?;
    }
    let total_frames: usize = summary.frames_per_subject.values().sum();
    log::info!(
        "read {} rows from {} files, rejected {}, filtered {}",
        report.rows_read,
        report.files.len(),
        report.rows_rejected,
        report.rows_filtered
    );
    println!(
        "ingest: {} subjects, {} frames of {} samples -> {}",
        series.len(),
        total_frames,
        cfg.segment.s,
        out.display()
    );
    Ok(())
}

/// Trains one-vs-rest models on the training side of the configured split.
pub fn run_train(
    cfg: &ExperimentConfig,
    frames: &Path,
    out: &Path,
    split_out: Option<&Path>,
) -> Result<()> {
    let series = read_frames(frames)?;
    let split = gaitprint::ingest::stratified_split(&series, &cfg.split_spec()?)?;
    let hash = config_hash(cfg)?;

    let artifact = match cfg.method {
        Method::Gridcell => {
            let models = train_gridcell(&series, &split.train, &cfg.gridcell)?;
            log_convergence(models.fits.iter().map(|(id, f)| (id.as_str(), f.converged)));
            ModelArtifact::gridcell(
                hash.clone(),
                cfg.gridcell.grid.clone(),
                models.screen,
                &models.fits,
            )
        }
        Method::Surface => {
            let s = series
                .first()
                .map(|x| x.s)
                .ok_or_else(|| Error::Data("no subjects to train on".to_string()))?;
            let models = train_surface(&series, &split.train, &cfg.surface)?;
            log_convergence(models.fits.iter().map(|(id, f)| (id.as_str(), f.converged)));
            ModelArtifact::surface(hash.clone(), models.bases, models.lag_stride, s, &models.fits)
        }
    };
    save_models(&artifact, out)?;
    if let Some(path) = split_out {
        write_json(&split, &hash, path)?;
    }

    let n_train: usize = split.train.values().map(Vec::len).sum();
    let n_test: usize = split.test.values().map(Vec::len).sum();
    println!(
        "train: {} {} models on {} frames ({} held out) -> {}",
        split.train.len(),
        cfg.method.name(),
        n_train,
        n_test,
        out.display()
    );
    Ok(())
}

fn log_convergence<'a>(fits: impl Iterator<Item = (&'a str, bool)>) {
    let mut total = 0usize;
    let mut stuck = Vec::new();
    for (id, converged) in fits {
        total += 1;
        if !converged {
            stuck.push(id.to_string());
        }
    }
    if stuck.is_empty() {
        log::info!("all {total} fits converged");
    } else {
        log::warn!("{} of {total} fits hit the iteration cap: {}", stuck.len(), stuck.join(", "));
    }
}

#[derive(Serialize)]
struct EvaluationSummary {
    method: String,
    n_subjects: usize,
    n_test_seconds: usize,
    rank1_per_second: f64,
    rank5_per_second: f64,
    rank1_all_seconds: f64,
    rank5_all_seconds: f64,
    sensitivity: Vec<SensitivityPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permutation_baseline: Option<PermutationBaseline>,
}

fn score_artifact(
    artifact: &ModelArtifact,
    models_path: &Path,
    series: &[SubjectSeries],
    frames: &BTreeMap<String, Vec<u32>>,
) -> Result<ProbMatrix> {
    match &artifact.payload {
        ModelPayload::Gridcell(model) => {
            let fits = model.logistic_fits(models_path)?;
            let models = GridcellModels {
                screen: model.screen.clone(),
                fits,
            };
            score_gridcell(&models, series, frames, &model.grid)
        }
        ModelPayload::Surface(model) => {
            let models = SurfaceModels {
                bases: model.bases.clone(),
                lag_stride: model.lag_stride,
                fits: model.fun_fits(),
            };
            score_surface(&models, series, frames)
        }
    }
}

/// Scores the held-out frames, then writes predictions, the window
/// sensitivity table, the accuracy curve, and a JSON summary.
pub fn run_evaluate(
    cfg: &ExperimentConfig,
    frames: &Path,
    models_path: &Path,
    out: &Path,
) -> Result<()> {
    let series = read_frames(frames)?;
    let artifact = load_models(models_path)?;
    let hash = check_hash(&artifact, cfg, models_path)?;
    let split = gaitprint::ingest::stratified_split(&series, &cfg.split_spec()?)?;

    let matrix = score_artifact(&artifact, models_path, &series, &split.test)?.normalized();
    fs::create_dir_all(out).map_err(|e| io_config_err(out, e))?;
    write_predictions_csv(&matrix, &hash, &out.join("predictions.csv"))?;

    let points = seconds_sensitivity(&matrix, &cfg.evaluate.windows)?;
    write_sensitivity_csv(&points, &hash, &out.join("sensitivity.csv"))?;
    write_svg(&accuracy_curve_svg(&points)?, &out.join("accuracy.svg"))?;

    let whole = average_windows(&matrix, Window::All)?;
    let baseline = if cfg.evaluate.permutations > 0 {
        Some(permutation_baseline(
            &matrix,
            1,
            cfg.evaluate.permutations,
            stage_seed(cfg.seed, STAGE_PERMUTATION),
        )?)
    } else {
        None
    };
    let summary = EvaluationSummary {
        method: match artifact.payload {
            ModelPayload::Gridcell(_) => "gridcell".to_string(),
            ModelPayload::Surface(_) => "surface".to_string(),
        },
        n_subjects: matrix.subjects.len(),
        n_test_seconds: matrix.rows.len(),
        rank1_per_second: rank_k_accuracy(&matrix, 1)?,
        rank5_per_second: rank_k_accuracy(&matrix, 5)?,
        rank1_all_seconds: rank_k_accuracy(&whole, 1)?,
        rank5_all_seconds: rank_k_accuracy(&whole, 5)?,
        sensitivity: points,
        permutation_baseline: baseline,
    };
    write_json(&summary, &hash, &out.join("summary.json"))?;

    println!(
        "evaluate: {} subjects, {} test seconds; rank-1 {:.4} per second, {:.4} over all seconds -> {}",
        summary.n_subjects,
        summary.n_test_seconds,
        summary.rank1_per_second,
        summary.rank1_all_seconds,
        out.display()
    );
    if let Some(b) = &summary.permutation_baseline {
        println!(
            "evaluate: permutation baseline rank-1 {:.4} over {} permutations",
            b.mean_accuracy, b.n_permutations
        );
    }
    Ok(())
}

/// Builds simultaneous confidence intervals per subject and renders the
/// significant cells as fingerprint heatmaps. Defined for gridcell models.
pub fn run_cma(
    cfg: &ExperimentConfig,
    models_path: &Path,
    out: &Path,
    subject: Option<&str>,
) -> Result<()> {
    let artifact = load_models(models_path)?;
    let hash = check_hash(&artifact, cfg, models_path)?;
    let ModelPayload::Gridcell(model) = &artifact.payload else {
        return Err(Error::Config(
            "interval estimates are defined for gridcell models; retrain with --method gridcell"
                .to_string(),
        ));
    };
    let fits = model.logistic_fits(models_path)?;
    let cells = cell_order(&model.grid)?;
    let kept = model.screen.kept_cells(&cells);
    let mc = cfg.mc_settings();

    let targets: Vec<String> = match subject {
        Some(id) => {
            if !fits.contains_key(id) {
                return Err(Error::Subject {
                    subject: id.to_string(),
                    message: "no fitted model in the models file".to_string(),
                });
            }
            vec![id.to_string()]
        }
        None => fits.keys().cloned().collect(),
    };

    use rayon::prelude::*;
    let results: Vec<CmaResult> = targets
        .par_iter()
        .map(|id| cma_intervals(id, &fits[id], &kept, cfg.cma.alpha, &mc))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out).map_err(|e| io_config_err(out, e))?;
    for result in &results {
        let id = &result.subject_id;
        write_intervals_csv(result, &hash, &out.join(format!("intervals_{id}.csv")))?;
        write_svg(
            &heatmap_svg(result, &model.grid)?,
            &out.join(format!("fingerprint_{id}.svg")),
        )?;
        println!(
            "cma: {id}: {} significant cells adjusted, {} unadjusted (q = {:.4})",
            result.n_significant, result.n_significant_unadjusted, result.q
        );
    }
    let report = fingerprint_report(results, &model.grid);
    write_json(&report, &hash, &out.join("fingerprints.json"))?;
    println!("cma: {} subjects -> {}", report.subjects.len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// Accuracy-versus-window curve from a sensitivity CSV.
    Curve,
    /// Fingerprint heatmap for one subject from a fingerprints JSON file.
    Heatmap,
}

#[derive(Deserialize)]
struct FingerprintEnvelope {
    #[allow(dead_code)]
    config_hash: String,
    report: FingerprintReport,
}

fn parse_sensitivity_csv(path: &Path) -> Result<Vec<SensitivityPoint>> {
    let bad = |message: String| Error::Artifact {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| io_config_err(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| bad("empty file".to_string()))?;
    if header != "window_seconds,n_windows,rank1_accuracy,rank5_accuracy" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut points = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        }
        let parse_err = |what: &str| bad(format!("cannot parse {what} in line {line:?}"));
        points.push(SensitivityPoint {
            window: fields[0].parse().map_err(|_| parse_err("window"))?,
            n_windows: fields[1].parse().map_err(|_| parse_err("n_windows"))?,
            rank1: fields[2].parse().map_err(|_| parse_err("rank1"))?,
            rank5: fields[3].parse().map_err(|_| parse_err("rank5"))?,
        });
    }
    Ok(points)
}

/// Rebuilds an SVG plot from an existing report artifact.
pub fn run_plot(kind: PlotKind, input: &Path, out: &Path, subject: Option<&str>) -> Result<()> {
    let svg = match kind {
        PlotKind::Curve => accuracy_curve_svg(&parse_sensitivity_csv(input)?)?,
        PlotKind::Heatmap => {
            let text = fs::read_to_string(input).map_err(|e| io_config_err(input, e))?;
            let envelope: FingerprintEnvelope =
                serde_json::from_str(&text).map_err(|e| Error::Artifact {
                    path: input.display().to_string(),
                    message: e.to_string(),
                })?;
            let report = envelope.report;
            let result = match subject {
                Some(id) => report
                    .subjects
                    .iter()
                    .find(|r| r.subject_id == id)
                    .ok_or_else(|| Error::Subject {
                        subject: id.to_string(),
                        message: "not present in the fingerprint report".to_string(),
                    })?,
                None if report.subjects.len() == 1 => &report.subjects[0],
                None => {
                    return Err(Error::Config(format!(
                        "the report holds {} subjects; pick one with --subject",
                        report.subjects.len()
                    )))
                }
            };
            heatmap_svg(result, &report.grid)?
        }
    };
    write_svg(&svg, out)?;
    println!("plot: {} -> {}", input.display(), out.display());
    Ok(())
}
