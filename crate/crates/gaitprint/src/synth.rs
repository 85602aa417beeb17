//! Deterministic synthetic accelerometry: per-subject quasi-periodic
//! magnitude signals decomposed onto a drifting 3-axis orientation. Useful
//! for pipeline tests and demos when no recordings are at hand.
//!
//! Subject parameters are drawn from a generator seeded by the run seed and
//! the subject id alone, so adding or removing subjects never changes the
//! others' signals.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::{RawSample, SubjectStream};
use crate::rng::subject_rng;

/// Shape of one synthetic cohort.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Walking seconds per subject and session.
    pub seconds_per_subject: usize,
    /// Samples per second.
    pub rate_hz: u32,
    /// 1 for a single recording, 2 to add a revisit.
    pub sessions: u8,
    /// Added to the base level in the second session, in g.
    pub session_drift: f64,
    /// Standard deviation of per-sample magnitude noise, in g.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 8,
            seconds_per_subject: 60,
            rate_hz: 100,
            sessions: 1,
            session_drift: 0.05,
            noise: 0.03,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Config("n_subjects must be at least 1".to_string()));
        }
        if self.seconds_per_subject == 0 {
            return Err(Error::Config(
                "seconds_per_subject must be at least 1".to_string(),
            ));
        }
        if self.rate_hz < 2 {
            return Err(Error::Config(format!(
                "rate_hz must be at least 2, got {}",
                self.rate_hz
            )));
        }
        if !(1..=2).contains(&self.sessions) {
            return Err(Error::Config(format!(
                "sessions must be 1 or 2, got {}",
                self.sessions
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be finite and non-negative, got {}",
                self.noise
            )));
        }
        if !self.session_drift.is_finite() {
            return Err(Error::Config("session_drift must be finite".to_string()));
        }
        Ok(())
    }
}

/// The walking style of one synthetic subject.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitParams {
    /// Resting magnitude level, in g.
    pub base: f64,
    /// Stride oscillation amplitude, in g.
    pub amp: f64,
    /// Stride frequency, in Hz.
    pub freq: f64,
    /// Stride phase, in radians.
    pub phase: f64,
    /// Second-harmonic amplitude, in g.
    pub harmonic: f64,
}

/// Draws the gait parameters of `subject` under `seed`.
pub fn gait_params(seed: u64, subject: &str) -> GaitParams {
    let mut rng = subject_rng(seed, subject);
    GaitParams {
        base: rng.random_range(0.9..1.4),
        amp: rng.random_range(0.25..0.55),
        freq: rng.random_range(1.4..2.3),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
        harmonic: rng.random_range(0.05..0.20),
    }
}

/// Magnitude at `t` seconds into a session, before noise.
fn clean_magnitude(p: &GaitParams, t: f64, session_shift: f64) -> f64 {
    let w = std::f64::consts::TAU * p.freq;
    p.base + session_shift + p.amp * (w * t + p.phase).sin() + p.harmonic * (2.0 * w * t).sin()
}

/// Generates the cohort as in-memory subject streams, sorted by id. Sample
/// indices run continuously across sessions; bouts follow sessions.
pub fn generate_streams(cfg: &SynthConfig) -> Result<Vec<SubjectStream>> {
    cfg.validate()?;
    let width = if cfg.n_subjects >= 100 { 3 } else { 2 };
    let subjects: Vec<String> = (1..=cfg.n_subjects)
        .map(|i| format!("synth{i:0w$}", w = width))
        .collect();
    let streams = crate::par_map(&subjects, |subject| {
        let params = gait_params(cfg.seed, subject);
        let mut rng = subject_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, subject);
        let n_per_session = cfg.seconds_per_subject * cfg.rate_hz as usize;
        let mut samples = Vec::with_capacity(n_per_session * cfg.sessions as usize);
        // Orientation angles take a small random walk so all three axes
        // carry signal without changing the magnitude.
        let mut theta: f64 = rng.random_range(0.4..1.2);
        let mut phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for session in 1..=cfg.sessions {
            let shift = if session == 2 { cfg.session_drift } else { 0.0 };
            for i in 0..n_per_session {
                let t = i as f64 / cfg.rate_hz as f64;
                let noise = if cfg.noise > 0.0 {
                    cfg.noise * rng.sample::<f64, _>(rand_distr::StandardNormal)
                } else {
                    0.0
                };
                let v = (clean_magnitude(&params, t, shift) + noise).max(0.02);
                theta += rng.random_range(-0.01..0.01);
                phi += rng.random_range(-0.02..0.02);
                let (st, ct) = theta.sin_cos();
                let (sp, cp) = phi.sin_cos();
                samples.push(RawSample {
                    t: ((session as i64 - 1) * n_per_session as i64) + i as i64,
                    x: v * st * cp,
                    y: v * st * sp,
                    z: v * ct,
                    session: if cfg.sessions > 1 { Some(session as u16) } else { None },
                    bout: session as u32,
                });
            }
        }
        SubjectStream {
            subject_id: subject.clone(),
            samples,
        }
    });
    Ok(streams)
}

/// Writes one ingestible CSV per subject under `dir`, with columns
/// subject, time, x, y, z and, when two sessions were generated, session.
/// Column names match the default ingest schema.
pub fn write_accelerometry_csv(streams: &[SubjectStream], dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
    for stream in streams {
        let path = dir.join(format!("{}.csv", stream.subject_id));
        let has_session = stream.samples.iter().any(|s| s.session.is_some());
        let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut header = vec!["subject", "time", "x", "y", "z"];
        if has_session {
            header.push("session");
        }
        writer.write_record(&header).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for s in &stream.samples {
            let mut record = vec![
                stream.subject_id.clone(),
                s.t.to_string(),
                format!("{:?}", s.x),
                format!("{:?}", s.y),
                format!("{:?}", s.z),
            ];
            if has_session {
                record.push(s.session.map(|v| v.to_string()).unwrap_or_default());
            }
            writer.write_record(&record).map_err(|e| Error::Artifact {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        writer.flush().map_err(|e| crate::error::io_err(&path, e))?;
    }
    Ok(())
}
