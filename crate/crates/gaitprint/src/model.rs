//! Persisted model sets: every subject's fitted classifier plus whatever is
//! needed to score new data, in one versioned JSON document.
//!
//! Coefficient vectors are stored as plain JSON arrays. Covariance matrices
//! are large and only meaningful at full precision, so they travel as
//! base64-encoded little-endian doubles in row-major order. Subjects are
//! keyed in sorted maps and floats print deterministically, so saving the
//! same models twice yields byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::funreg::{CvEntry, FunFit, TensorBases};
use crate::glm::LogisticFit;
use crate::gridcells::{GridSpec, ScreenReport};

const FORMAT: &str = "gaitprint-models";
const VERSION: u32 = 1;

fn artifact_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Artifact {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// A complete, loadable model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    /// Hash of the experiment configuration that produced the models;
    /// consumers compare it before mixing artifacts.
    pub config_hash: String,
    pub payload: ModelPayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ModelPayload {
    Gridcell(GridModel),
    Surface(SurfaceModel),
}

/// Grid-cell logistic models with the grid and screen that shaped their
/// columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridModel {
    pub grid: GridSpec,
    pub screen: ScreenReport,
    pub fits: BTreeMap<String, StoredLogistic>,
}

/// Tensor-product surface models with their bases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub bases: TensorBases,
    pub lag_stride: usize,
    /// Samples per second frame the bases were built for.
    pub s: usize,
    pub fits: BTreeMap<String, StoredSurface>,
}

/// Storage form of a logistic fit. The per-iteration deviance trace is a
/// fitting diagnostic and is not persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredLogistic {
    pub column_names: Vec<String>,
    pub beta: Vec<f64>,
    pub cov_rows: usize,
    pub cov_b64: String,
    pub deviance: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub n_obs: usize,
}

impl From<&LogisticFit> for StoredLogistic {
    fn from(fit: &LogisticFit) -> Self {
        StoredLogistic {
            column_names: fit.column_names.clone(),
            beta: fit.beta.to_vec(),
            cov_rows: fit.cov.nrows(),
            cov_b64: encode_matrix(&fit.cov),
            deviance: fit.deviance,
            converged: fit.converged,
            n_iter: fit.n_iter,
            n_obs: fit.n_obs,
        }
    }
}

impl StoredLogistic {
    pub fn to_fit(&self, path: &Path) -> Result<LogisticFit> {
        if self.beta.len() != self.column_names.len() + 1 {
            return Err(artifact_err(
                path,
                format!(
                    "{} coefficients for {} columns",
                    self.beta.len(),
                    self.column_names.len()
                ),
            ));
        }
        let cov = decode_matrix(&self.cov_b64, self.cov_rows, path)?;
        if cov.nrows() != self.beta.len() {
            return Err(artifact_err(
                path,
                format!(
                    "covariance is {}x{} for {} coefficients",
                    cov.nrows(),
                    cov.ncols(),
                    self.beta.len()
                ),
            ));
        }
        Ok(LogisticFit {
            column_names: self.column_names.clone(),
            beta: Array1::from_vec(self.beta.clone()),
            cov,
            deviance: self.deviance,
            converged: self.converged,
            n_iter: self.n_iter,
            deviance_trace: Vec::new(),
            n_obs: self.n_obs,
        })
    }
}

/// Storage form of a surface fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredSurface {
    pub beta: Vec<f64>,
    pub lambda: (f64, f64, f64),
    pub deviance: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub n_obs: usize,
    pub cv_table: Vec<CvEntry>,
}

impl StoredSurface {
    fn from_fit(fit: &FunFit) -> Self {
        StoredSurface {
            beta: fit.beta.to_vec(),
            lambda: fit.lambda,
            deviance: fit.deviance,
            converged: fit.converged,
            n_iter: fit.n_iter,
            n_obs: fit.n_obs,
            cv_table: fit.cv_table.clone(),
        }
    }

    fn to_fit(&self, subject_id: &str) -> FunFit {
        FunFit {
            subject_id: subject_id.to_string(),
            beta: Array1::from_vec(self.beta.clone()),
            lambda: self.lambda,
            deviance: self.deviance,
            converged: self.converged,
            n_iter: self.n_iter,
            n_obs: self.n_obs,
            cv_table: self.cv_table.clone(),
        }
    }
}

impl ModelArtifact {
    pub fn gridcell(
        config_hash: String,
        grid: GridSpec,
        screen: ScreenReport,
        fits: &BTreeMap<String, LogisticFit>,
    ) -> Self {
        ModelArtifact {
            format: FORMAT.to_string(),
            version: VERSION,
            config_hash,
            payload: ModelPayload::Gridcell(GridModel {
                grid,
                screen,
                fits: fits
                    .iter()
                    .map(|(id, fit)| (id.clone(), StoredLogistic::from(fit)))
                    .collect(),
            }),
        }
    }

    pub fn surface(
        config_hash: String,
        bases: TensorBases,
        lag_stride: usize,
        s: usize,
        fits: &BTreeMap<String, FunFit>,
    ) -> Self {
        ModelArtifact {
            format: FORMAT.to_string(),
            version: VERSION,
            config_hash,
            payload: ModelPayload::Surface(SurfaceModel {
                bases,
                lag_stride,
                s,
                fits: fits
                    .iter()
                    .map(|(id, fit)| (id.clone(), StoredSurface::from_fit(fit)))
                    .collect(),
            }),
        }
    }
}

impl GridModel {
    pub fn logistic_fits(&self, path: &Path) -> Result<BTreeMap<String, LogisticFit>> {
        self.fits
            .iter()
            .map(|(id, stored)| Ok((id.clone(), stored.to_fit(path)?)))
            .collect()
    }
}

impl SurfaceModel {
    pub fn fun_fits(&self) -> BTreeMap<String, FunFit> {
        self.fits
            .iter()
            .map(|(id, stored)| (id.clone(), stored.to_fit(id)))
            .collect()
    }
}

/// Serializes the artifact as pretty JSON. Key order and float formatting
/// are deterministic, so equal inputs give byte-equal files.
pub fn save_models(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, artifact)
        .map_err(|e| artifact_err(path, e.to_string()))?;
    use std::io::Write;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_models(path: &Path) -> Result<ModelArtifact> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let artifact: ModelArtifact = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| artifact_err(path, e.to_string()))?;
    if artifact.format != FORMAT {
        return Err(artifact_err(
            path,
            format!("not a model file (format '{}')", artifact.format),
        ));
    }
    if artifact.version != VERSION {
        return Err(artifact_err(
            path,
            format!("unsupported model version {}", artifact.version),
        ));
    }
    Ok(artifact)
}

fn encode_matrix(m: &Array2<f64>) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for &v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_matrix(b64: &str, rows: usize, path: &Path) -> Result<Array2<f64>> {
    let bytes = BASE64
        .decode(b64)
        .map_err(|e| artifact_err(path, format!("covariance is not valid base64: {e}")))?;
    if rows == 0 || bytes.len() != rows * rows * 8 {
        return Err(artifact_err(
            path,
            format!("covariance blob is {} bytes, expected {}", bytes.len(), rows * rows * 8),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk size checked")))
        .collect();
    Array2::from_shape_vec((rows, rows), values)
        .map_err(|e| artifact_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{fit_logistic_irls, FitConfig};
    use ndarray::array;

    fn tiny_logistic() -> BTreeMap<String, LogisticFit> {
        let x = array![[0.1], [0.4], [0.9], [1.4], [1.8], [2.2]];
        let y = array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let fit = fit_logistic_irls(
            x.view(),
            y.view(),
            &["u15_r0_c0".to_string()],
            &FitConfig::default(),
        )
        .unwrap();
        let mut fits = BTreeMap::new();
        fits.insert("ann".to_string(), fit.clone());
        fits.insert("bob".to_string(), fit);
        fits
    }

    fn tiny_screen() -> ScreenReport {
        ScreenReport {
            n_rows: 6,
            unique_fraction_threshold: 0.1,
            mode_ratio_threshold: 19.0,
            kept: vec![0],
            removed: vec![crate::gridcells::RemovedColumn {
                index: 1,
                cell: crate::gridcells::CellIndex { u: 15, r: 0, c: 1 },
                unique_fraction: 1.0 / 6.0,
                mode_ratio: None,
            }],
        }
    }

    #[test]
    fn gridcell_artifact_round_trips_exactly() {
        let fits = tiny_logistic();
        let artifact = ModelArtifact::gridcell(
            "abc123".to_string(),
            GridSpec {
                lags: vec![15],
                ..GridSpec::default()
            },
            tiny_screen(),
            &fits,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.json");
        save_models(&artifact, &path).unwrap();
        let loaded = load_models(&path).unwrap();
        assert_eq!(loaded.config_hash, "abc123");
        let ModelPayload::Gridcell(grid) = &loaded.payload else {
            panic!("wrong payload kind");
        };
        let back = grid.logistic_fits(&path).unwrap();
        let orig = &fits["ann"];
        let re = &back["ann"];
        assert_eq!(orig.beta, re.beta);
        for (a, b) in orig.cov.iter().zip(re.cov.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(orig.column_names, re.column_names);
        assert_eq!(orig.n_obs, re.n_obs);
    }

    #[test]
    fn surface_artifact_round_trips_exactly() {
        let bases = TensorBases::with_degree(2, 3, 3, 3, (0.0, 3.0), 10).unwrap();
        let mut fits = BTreeMap::new();
        fits.insert(
            "ann".to_string(),
            FunFit {
                subject_id: "ann".to_string(),
                beta: Array1::from_vec((0..28).map(|i| i as f64 * 0.01).collect()),
                lambda: (1.0, 2.0, 3.0),
                deviance: 4.5,
                converged: true,
                n_iter: 7,
                n_obs: 16,
                cv_table: vec![CvEntry {
                    lambda: (1.0, 2.0, 3.0),
                    mean_deviance: 0.8,
                    folds_used: 5,
                }],
            },
        );
        let artifact =
            ModelArtifact::surface("hash".to_string(), bases.clone(), 1, 10, &fits);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.json");
        save_models(&artifact, &path).unwrap();
        let loaded = load_models(&path).unwrap();
        let ModelPayload::Surface(surface) = &loaded.payload else {
            panic!("wrong payload kind");
        };
        assert_eq!(surface.bases, bases);
        let back = surface.fun_fits();
        assert_eq!(back["ann"].beta, fits["ann"].beta);
        assert_eq!(back["ann"].lambda, (1.0, 2.0, 3.0));
        assert_eq!(back["ann"].cv_table.len(), 1);
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let artifact = ModelArtifact::gridcell(
            "h".to_string(),
            GridSpec::default(),
            tiny_screen(),
            &tiny_logistic(),
        );
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save_models(&artifact, &p1).unwrap();
        save_models(&artifact, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn foreign_and_future_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.json");

        std::fs::write(&path, "{\"format\":\"other\",\"version\":1}").unwrap();
        assert!(load_models(&path).is_err());

        let artifact = ModelArtifact {
            format: FORMAT.to_string(),
            version: 999,
            config_hash: String::new(),
            payload: ModelPayload::Gridcell(GridModel {
                grid: GridSpec::default(),
                screen: tiny_screen(),
                fits: BTreeMap::new(),
            }),
        };
        save_models(&artifact, &path).unwrap();
        assert!(matches!(load_models(&path), Err(Error::Artifact { .. })));
    }

    #[test]
    fn corrupt_covariance_blobs_are_rejected() {
        let stored = StoredLogistic {
            column_names: vec!["c".to_string()],
            beta: vec![0.0, 1.0],
            cov_rows: 2,
            cov_b64: "not base64!!!".to_string(),
            deviance: 0.0,
            converged: true,
            n_iter: 1,
            n_obs: 4,
        };
        assert!(stored.to_fit(Path::new("x.json")).is_err());

        let short = StoredLogistic {
            cov_b64: BASE64.encode([0u8; 8]),
            ..stored
        };
        assert!(short.to_fit(Path::new("x.json")).is_err());
    }

    #[test]
    fn matrix_codec_is_bit_exact() {
        let m = array![[0.1f64 + 0.2, -0.0], [f64::MIN_POSITIVE, 1e300]];
        let decoded = decode_matrix(&encode_matrix(&m), 2, Path::new("x")).unwrap();
        for (a, b) in m.iter().zip(decoded.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
