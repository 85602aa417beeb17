//! Raw accelerometry ingestion: delimited-file parsing with a configurable
//! column mapping, vector magnitude, fixed-length second frames, and
//! train/test splits.
//!
//! Design notes. Subject streams are keyed by subject id; samples inside a
//! stream do not repeat the id. Bout boundaries (session, activity, or an
//! explicit bout label changing between consecutive samples) are resolved at
//! load time into an integer bout id per sample, and segmentation never lets
//! a frame straddle a bout boundary. There is no resampling or gap filling:
//! recordings are assumed contiguous within a bout at the nominal rate.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::rng::subject_rng;

/// One accelerometer sample inside a subject stream. `t` is the sample index
/// at the nominal rate; `bout` groups maximal runs of samples that may be
/// framed together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub t: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub session: Option<u16>,
    pub bout: u32,
}

/// All samples for one subject, strictly increasing in `t`.
#[derive(Debug, Clone)]
pub struct SubjectStream {
    pub subject_id: String,
    pub samples: Vec<RawSample>,
}

/// How sample timestamps are encoded in the time column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    /// Integer sample index.
    Index,
    /// Seconds since recording start; converted to an index at the nominal rate.
    Seconds,
}

/// Column mapping for delimited input files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSchema {
    /// Column holding the subject id; when absent the file stem is the id.
    pub subject_column: Option<String>,
    pub time_column: String,
    pub time_unit: TimeUnit,
    pub x_column: String,
    pub y_column: String,
    pub z_column: String,
    /// Optional session column (small integer labels, e.g. 1 and 2).
    pub session_column: Option<String>,
    /// Optional activity column; when `activity_keep` is non-empty only rows
    /// whose activity is listed are retained.
    pub activity_column: Option<String>,
    pub activity_keep: Vec<String>,
    /// Optional explicit bout label column; a change starts a new bout.
    pub bout_column: Option<String>,
    /// Field delimiter override; by default `.tsv` and `.txt` files use tabs
    /// and everything else uses commas.
    pub delimiter: Option<char>,
}

impl Default for IngestSchema {
    fn default() -> Self {
        IngestSchema {
            subject_column: Some("subject".to_string()),
            time_column: "time".to_string(),
            time_unit: TimeUnit::Index,
            x_column: "x".to_string(),
            y_column: "y".to_string(),
            z_column: "z".to_string(),
            session_column: None,
            activity_column: None,
            activity_keep: Vec::new(),
            bout_column: None,
            delimiter: None,
        }
    }
}

/// Row accounting from one `load_accelerometry` call.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub files: Vec<String>,
    pub rows_read: usize,
    /// Rows dropped because a required field failed to parse or was non-finite.
    pub rows_rejected: usize,
    /// Rows dropped by the activity filter.
    pub rows_filtered: usize,
    pub samples_per_subject: BTreeMap<String, usize>,
}

/// Parses one file or every `*.csv`/`*.tsv`/`*.txt` file in a directory into
/// per-subject streams sorted by subject id. Rows with unparseable or
/// non-finite required fields are rejected and counted, never silently fixed.
/// Two samples with the same `t` for one subject are an error.
pub fn load_accelerometry(
    path: &Path,
    schema: &IngestSchema,
    rate_hz: u32,
) -> Result<(Vec<SubjectStream>, IngestReport)> {
    if rate_hz == 0 {
        return Err(Error::Config("rate_hz must be positive".to_string()));
    }
    let files = input_files(path)?;
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no input files found under {}",
            path.display()
        )));
    }
    let mut report = IngestReport::default();
    let mut unmapped_session = false;
    // Per subject: (t, x, y, z, session, bout discriminator).
    type Row = (i64, f64, f64, f64, Option<u16>, (u32, u32, u32));
    let mut by_subject: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut labels: HashMap<String, u32> = HashMap::new();
    let intern = |s: &str, labels: &mut HashMap<String, u32>| -> u32 {
        let next = labels.len() as u32;
        *labels.entry(s.to_string()).or_insert(next)
    };

    for file in &files {
        report.files.push(file.display().to_string());
        let delim = delimiter_for(file, schema);
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delim)
            .trim(csv::Trim::All)
            .from_path(file)
            .map_err(|e| Error::Parse {
                path: file.display().to_string(),
                message: e.to_string(),
            })?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse {
                path: file.display().to_string(),
                message: e.to_string(),
            })?
            .clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    column: name.to_string(),
                    path: file.display().to_string(),
                })
        };
        let subject_idx = schema.subject_column.as_deref().map(&col).transpose()?;
        let time_idx = col(&schema.time_column)?;
        let x_idx = col(&schema.x_column)?;
        let y_idx = col(&schema.y_column)?;
        let z_idx = col(&schema.z_column)?;
        let session_idx = schema.session_column.as_deref().map(&col).transpose()?;
        if session_idx.is_none() && headers.iter().any(|h| h == "session") {
            unmapped_session = true;
        }
        let activity_idx = schema.activity_column.as_deref().map(&col).transpose()?;
        let bout_idx = schema.bout_column.as_deref().map(&col).transpose()?;
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();

        for record in rdr.records() {
            let record = record.map_err(|e| Error::Parse {
                path: file.display().to_string(),
                message: e.to_string(),
            })?;
            report.rows_read += 1;
            let field = |i: usize| record.get(i).unwrap_or("");

            if let Some(ai) = activity_idx {
                if !schema.activity_keep.is_empty()
                    && !schema.activity_keep.iter().any(|k| k == field(ai))
                {
                    report.rows_filtered += 1;
                    continue;
                }
            }

            let parse_f = |i: usize| field(i).parse::<f64>().ok().filter(|v| v.is_finite());
            let (x, y, z) = match (parse_f(x_idx), parse_f(y_idx), parse_f(z_idx)) {
                (Some(x), Some(y), Some(z)) => (x, y, z),
                _ => {
                    report.rows_rejected += 1;
                    continue;
                }
            };
            let t = match schema.time_unit {
                TimeUnit::Index => field(time_idx).parse::<i64>().ok(),
                TimeUnit::Seconds => parse_f(time_idx).map(|s| (s * rate_hz as f64).round() as i64),
            };
            let Some(t) = t else {
                report.rows_rejected += 1;
                continue;
            };
            let session = match session_idx {
                None => None,
                Some(si) => match field(si).parse::<u16>() {
                    Ok(s) => Some(s),
                    Err(_) => {
                        report.rows_rejected += 1;
                        continue;
                    }
                },
            };
            let subject = match subject_idx {
                Some(si) => {
                    let s = field(si);
                    if s.is_empty() {
                        report.rows_rejected += 1;
                        continue;
                    }
                    s.to_string()
                }
                None => stem.clone(),
            };
            let act_id = activity_idx.map_or(0, |ai| intern(field(ai), &mut labels));
            let bout_id = bout_idx.map_or(0, |bi| intern(field(bi), &mut labels));
            let sess_id = session.map_or(0, |s| s as u32 + 1);
            by_subject
                .entry(subject)
                .or_default()
                .push((t, x, y, z, session, (sess_id, act_id, bout_id)));
        }
    }
    if unmapped_session {
        log::warn!(
            "input has a 'session' column but session_column is unset; \
             session labels are being dropped and a cross-session split \
             will not be possible"
        );
    }

    let mut streams = Vec::with_capacity(by_subject.len());
    for (subject_id, mut rows) in by_subject {
        rows.sort_by_key(|r| r.0);
        let mut samples = Vec::with_capacity(rows.len());
        let mut bout: u32 = 0;
        let mut last: Option<(i64, (u32, u32, u32))> = None;
        for (t, x, y, z, session, disc) in rows {
            if let Some((lt, ldisc)) = last {
                if t == lt {
                    return Err(Error::DuplicateSample {
                        subject: subject_id,
                        t,
                    });
                }
                if ldisc != disc {
                    bout += 1;
                }
            }
            last = Some((t, disc));
            samples.push(RawSample {
                t,
                x,
                y,
                z,
                session,
                bout,
            });
        }
        report
            .samples_per_subject
            .insert(subject_id.clone(), samples.len());
        streams.push(SubjectStream {
            subject_id,
            samples,
        });
    }
    Ok((streams, report))
}

fn input_files(path: &Path) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(path).map_err(|e| io_err(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| io_err(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e, "csv" | "tsv" | "txt"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn delimiter_for(file: &Path, schema: &IngestSchema) -> u8 {
    if let Some(d) = schema.delimiter {
        return d as u8;
    }
    match file.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("txt") => b'\t',
        _ => b',',
    }
}

/// Euclidean norm of one acceleration sample.
pub fn vector_magnitude(x: f64, y: f64, z: f64) -> f64 {
    (x * x + y * y + z * z).sqrt()
}

/// One second of magnitudes: exactly `s` samples, indexed `j` within its
/// subject starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondFrame {
    pub j: u32,
    pub v: Vec<f64>,
    pub session: Option<u16>,
}

/// All second frames for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub subject_id: String,
    /// Samples per frame.
    pub s: usize,
    pub frames: Vec<SecondFrame>,
}

impl SubjectSeries {
    pub fn frame(&self, j: u32) -> Option<&SecondFrame> {
        // Frames are numbered 1..=J in order.
        self.frames.get(j.checked_sub(1)? as usize)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentOptions {
    /// Samples per second frame.
    pub s: usize,
    pub rate_hz: u32,
    /// Seconds trimmed from each end of every bout before framing, to drop
    /// activity transitions. Zero keeps everything.
    pub trim_secs: f64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            s: 100,
            rate_hz: 100,
            trim_secs: 0.0,
        }
    }
}

/// Cuts a stream into consecutive non-overlapping frames of `s` samples.
/// Frames never straddle bout boundaries; the tail of each bout that does not
/// fill a frame is dropped. An empty stream yields an empty series.
pub fn segment_seconds(stream: &SubjectStream, opts: &SegmentOptions) -> Result<SubjectSeries> {
    if opts.s < 2 {
        return Err(Error::Config(format!(
            "frame length s must be at least 2, got {}",
            opts.s
        )));
    }
    if !(opts.trim_secs >= 0.0) {
        return Err(Error::Config("trim_secs must be non-negative".to_string()));
    }
    let trim = (opts.trim_secs * opts.rate_hz as f64).round() as usize;
    let mut frames = Vec::new();
    let mut j: u32 = 0;
    let mut start = 0;
    let samples = &stream.samples;
    while start < samples.len() {
        let bout = samples[start].bout;
        let mut end = start;
        while end < samples.len() && samples[end].bout == bout {
            end += 1;
        }
        let kept = &samples[start..end];
        let kept = if kept.len() > 2 * trim {
            &kept[trim..kept.len() - trim]
        } else {
            &kept[0..0]
        };
        for chunk in kept.chunks_exact(opts.s) {
            j += 1;
            let v: Vec<f64> = chunk
                .iter()
                .map(|r| vector_magnitude(r.x, r.y, r.z))
                .collect();
            frames.push(SecondFrame {
                j,
                v,
                session: chunk[0].session,
            });
        }
        start = end;
    }
    Ok(SubjectSeries {
        subject_id: stream.subject_id.clone(),
        s: opts.s,
        frames,
    })
}

/// Train/test assignment policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitMode {
    /// Per subject, floor(train_fraction * J) frames (at least one) are drawn
    /// at random into train, the rest into test.
    WithinSession { train_fraction: f64 },
    /// Session 1 frames train, session 2 frames test.
    CrossSession,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
}

/// Frame indices per subject on each side of a split, sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeMap<String, Vec<u32>>,
    pub test: BTreeMap<String, Vec<u32>>,
}

/// Splits every subject's frames into train and test. Within-session draws
/// are seeded per subject (run seed xor a stable hash of the id), so one
/// subject's assignment never depends on which other subjects are present.
pub fn stratified_split(series: &[SubjectSeries], spec: &SplitSpec) -> Result<SplitAssignment> {
    let mut out = SplitAssignment::default();
    match spec.mode {
        SplitMode::WithinSession { train_fraction } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "train_fraction must be in (0,1), got {train_fraction}"
                )));
            }
            for s in series {
                let j = s.frames.len();
                if j < 2 {
                    return Err(Error::Subject {
                        subject: s.subject_id.clone(),
                        message: format!("needs at least 2 frames to split, has {j}"),
                    });
                }
                let n_train = ((train_fraction * j as f64).floor() as usize).max(1);
                let mut idx: Vec<u32> = s.frames.iter().map(|f| f.j).collect();
                let mut rng = subject_rng(spec.seed, &s.subject_id);
                // Fisher-Yates; membership is random, order is then discarded.
                use rand::seq::SliceRandom;
                idx.shuffle(&mut rng);
                let (train, test) = idx.split_at(n_train);
                let mut train = train.to_vec();
                let mut test = test.to_vec();
                train.sort_unstable();
                test.sort_unstable();
                out.train.insert(s.subject_id.clone(), train);
                out.test.insert(s.subject_id.clone(), test);
            }
        }
        SplitMode::CrossSession => {
            for s in series {
                let mut train = Vec::new();
                let mut test = Vec::new();
                for f in &s.frames {
                    match f.session {
                        Some(1) => train.push(f.j),
                        Some(2) => test.push(f.j),
                        Some(other) => {
                            return Err(Error::Subject {
                                subject: s.subject_id.clone(),
                                message: format!(
                                    "cross-session split expects sessions 1 and 2, found {other}"
                                ),
                            })
                        }
                        None => {
                            return Err(Error::Subject {
                                subject: s.subject_id.clone(),
                                message: "cross-session split needs session labels".to_string(),
                            })
                        }
                    }
                }
                if train.is_empty() || test.is_empty() {
                    return Err(Error::Subject {
                        subject: s.subject_id.clone(),
                        message: "cross-session split needs frames in both sessions".to_string(),
                    });
                }
                out.train.insert(s.subject_id.clone(), train);
                out.test.insert(s.subject_id.clone(), test);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn stream_of(subject: &str, v: &[(i64, f64)]) -> SubjectStream {
        SubjectStream {
            subject_id: subject.to_string(),
            samples: v
                .iter()
                .map(|&(t, x)| RawSample {
                    t,
                    x,
                    y: 0.0,
                    z: 0.0,
                    session: None,
                    bout: 0,
                })
                .collect(),
        }
    }

    fn series_of(subject: &str, j: usize) -> SubjectSeries {
        SubjectSeries {
            subject_id: subject.to_string(),
            s: 4,
            frames: (1..=j as u32)
                .map(|j| SecondFrame {
                    j,
                    v: vec![1.0; 4],
                    session: None,
                })
                .collect(),
        }
    }

    #[test]
    fn loads_basic_csv_keyed_by_subject() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "walk.csv",
            "subject,time,x,y,z\nb,0,1,0,0\na,0,0,1,0\na,1,0,0,1\n",
        );
        let schema = IngestSchema::default();
        let (streams, report) = load_accelerometry(&path, &schema, 100).unwrap();
        assert_eq!(streams.len(), 2);
        assert_eq!(streams[0].subject_id, "a");
        assert_eq!(streams[0].samples.len(), 2);
        assert_eq!(streams[1].subject_id, "b");
        assert_eq!(report.rows_read, 3);
        assert_eq!(report.rows_rejected, 0);
    }

    #[test]
    fn rejects_bad_rows_and_counts_them() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "walk.csv",
            "subject,time,x,y,z\na,0,1,0,0\na,1,oops,0,0\na,2,inf,0,0\na,x,1,0,0\na,3,1,0,0\n",
        );
        let (streams, report) =
            load_accelerometry(&path, &IngestSchema::default(), 100).unwrap();
        assert_eq!(report.rows_rejected, 3);
        assert_eq!(streams[0].samples.len(), 2);
    }

    #[test]
    fn duplicate_timestamp_is_an_error_naming_the_subject() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "walk.csv",
            "subject,time,x,y,z\na,7,1,0,0\na,7,0,1,0\n",
        );
        let err = load_accelerometry(&path, &IngestSchema::default(), 100).unwrap_err();
        match err {
            Error::DuplicateSample { subject, t } => {
                assert_eq!(subject, "a");
                assert_eq!(t, 7);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_an_error_naming_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "walk.csv", "subject,time,x,y\na,0,1,0\n");
        let err = load_accelerometry(&path, &IngestSchema::default(), 100).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { column, .. } if column == "z"));
    }

    #[test]
    fn subject_from_file_stem_and_seconds_time() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "id3.csv", "time,x,y,z\n0.00,1,0,0\n0.01,0,1,0\n");
        let schema = IngestSchema {
            subject_column: None,
            time_unit: TimeUnit::Seconds,
            ..IngestSchema::default()
        };
        let (streams, _) = load_accelerometry(dir.path(), &schema, 100).unwrap();
        assert_eq!(streams[0].subject_id, "id3");
        assert_eq!(streams[0].samples[1].t, 1);
    }

    #[test]
    fn activity_filter_counts_filtered_rows_and_splits_bouts() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "walk.csv",
            "subject,time,x,y,z,act\n\
             a,0,1,0,0,walk\na,1,1,0,0,walk\na,2,1,0,0,rest\na,3,1,0,0,walk\na,4,1,0,0,walk\n",
        );
        let schema = IngestSchema {
            activity_column: Some("act".to_string()),
            activity_keep: vec!["walk".to_string()],
            ..IngestSchema::default()
        };
        let (streams, report) = load_accelerometry(&path, &schema, 100).unwrap();
        assert_eq!(report.rows_filtered, 1);
        let bouts: Vec<u32> = streams[0].samples.iter().map(|s| s.bout).collect();
        // The rest row is gone but its neighbors still share an activity
        // label; the bout id only changes when a kept discriminator changes.
        assert_eq!(bouts, vec![0, 0, 0, 0]);
    }

    #[test]
    fn session_change_starts_a_new_bout() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "walk.csv",
            "subject,time,x,y,z,sess\na,0,1,0,0,1\na,1,1,0,0,1\na,2,1,0,0,2\n",
        );
        let schema = IngestSchema {
            session_column: Some("sess".to_string()),
            ..IngestSchema::default()
        };
        let (streams, _) = load_accelerometry(&path, &schema, 100).unwrap();
        let bouts: Vec<u32> = streams[0].samples.iter().map(|s| s.bout).collect();
        assert_eq!(bouts, vec![0, 0, 1]);
        assert_eq!(streams[0].samples[2].session, Some(2));
    }

    #[test]
    fn magnitude_matches_hand_values() {
        assert_eq!(vector_magnitude(3.0, 4.0, 0.0), 5.0);
        assert_eq!(vector_magnitude(0.0, 0.0, 0.0), 0.0);
        assert_eq!(vector_magnitude(1.0, 2.0, 2.0), 3.0);
    }

    proptest! {
        #[test]
        fn magnitude_invariant_under_sign_and_permutation(
            x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0
        ) {
            let m = vector_magnitude(x, y, z);
            prop_assert!(m >= 0.0);
            let flipped = vector_magnitude(-x, y, -z);
            let permuted = vector_magnitude(z, x, y);
            prop_assert!((m - flipped).abs() <= 1e-12 * (1.0 + m));
            prop_assert!((m - permuted).abs() <= 1e-12 * (1.0 + m));
        }
    }

    #[test]
    fn segmentation_drops_partial_frames_and_numbers_from_one() {
        let rows: Vec<(i64, f64)> = (0..10).map(|t| (t, t as f64)).collect();
        let stream = stream_of("a", &rows);
        let opts = SegmentOptions {
            s: 4,
            ..SegmentOptions::default()
        };
        let series = segment_seconds(&stream, &opts).unwrap();
        assert_eq!(series.frames.len(), 2);
        assert_eq!(series.frames[0].j, 1);
        assert_eq!(series.frames[1].j, 2);
        assert_eq!(series.frames[0].v, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(series.frame(2).unwrap().v, vec![4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn segmentation_respects_bout_boundaries() {
        let mut stream = stream_of("a", &(0..12).map(|t| (t, 1.0)).collect::<Vec<_>>());
        for s in stream.samples.iter_mut().skip(5) {
            s.bout = 1;
        }
        let opts = SegmentOptions {
            s: 4,
            ..SegmentOptions::default()
        };
        // Bouts of 5 and 7 samples yield 1 + 1 frames, not the 3 a contiguous
        // stream of 12 would give.
        let series = segment_seconds(&stream, &opts).unwrap();
        assert_eq!(series.frames.len(), 2);
    }

    #[test]
    fn segmentation_trims_bout_edges() {
        let stream = stream_of("a", &(0..300).map(|t| (t, 1.0)).collect::<Vec<_>>());
        let opts = SegmentOptions {
            s: 100,
            rate_hz: 100,
            trim_secs: 0.5,
        };
        // 300 samples minus 50 on each end leaves 200: two frames.
        let series = segment_seconds(&stream, &opts).unwrap();
        assert_eq!(series.frames.len(), 2);
        let untrimmed = segment_seconds(&stream, &SegmentOptions::default()).unwrap();
        assert_eq!(untrimmed.frames.len(), 3);
    }

    #[test]
    fn empty_stream_gives_empty_series_and_tiny_s_errors() {
        let stream = stream_of("a", &[]);
        let series = segment_seconds(&stream, &SegmentOptions::default()).unwrap();
        assert_eq!(series.frames.len(), 0);
        let bad = SegmentOptions {
            s: 1,
            ..SegmentOptions::default()
        };
        assert!(segment_seconds(&stream, &bad).is_err());
    }

    #[test]
    fn within_split_partitions_with_floor_fraction() {
        let series = vec![series_of("a", 100), series_of("b", 3)];
        let spec = SplitSpec {
            mode: SplitMode::WithinSession {
                train_fraction: 0.75,
            },
            seed: 9,
        };
        let split = stratified_split(&series, &spec).unwrap();
        assert_eq!(split.train["a"].len(), 75);
        assert_eq!(split.test["a"].len(), 25);
        assert_eq!(split.train["b"].len(), 2);
        assert_eq!(split.test["b"].len(), 1);
        // Partition: union covers 1..=J exactly once.
        let mut all: Vec<u32> = split.train["a"]
            .iter()
            .chain(split.test["a"].iter())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (1..=100).collect::<Vec<u32>>());
    }

    #[test]
    fn within_split_is_deterministic_and_per_subject_stable() {
        let spec = SplitSpec {
            mode: SplitMode::WithinSession {
                train_fraction: 0.5,
            },
            seed: 4,
        };
        let both = vec![series_of("a", 40), series_of("b", 40)];
        let only_a = vec![series_of("a", 40)];
        let s1 = stratified_split(&both, &spec).unwrap();
        let s2 = stratified_split(&both, &spec).unwrap();
        let s3 = stratified_split(&only_a, &spec).unwrap();
        assert_eq!(s1, s2);
        // Removing subject b must not change subject a's draw.
        assert_eq!(s1.train["a"], s3.train["a"]);
        let other_seed = stratified_split(
            &both,
            &SplitSpec {
                seed: 5,
                ..spec
            },
        )
        .unwrap();
        assert_ne!(s1.train["a"], other_seed.train["a"]);
    }

    #[test]
    fn within_split_needs_two_frames_and_valid_fraction() {
        let spec = SplitSpec {
            mode: SplitMode::WithinSession {
                train_fraction: 0.75,
            },
            seed: 1,
        };
        let err = stratified_split(&[series_of("tiny", 1)], &spec).unwrap_err();
        assert!(matches!(err, Error::Subject { subject, .. } if subject == "tiny"));
        let bad = SplitSpec {
            mode: SplitMode::WithinSession {
                train_fraction: 1.0,
            },
            seed: 1,
        };
        assert!(stratified_split(&[series_of("a", 10)], &bad).is_err());
    }

    #[test]
    fn cross_session_split_routes_by_session() {
        let mut s = series_of("a", 6);
        for f in s.frames.iter_mut() {
            f.session = Some(if f.j <= 4 { 1 } else { 2 });
        }
        let spec = SplitSpec {
            mode: SplitMode::CrossSession,
            seed: 0,
        };
        let split = stratified_split(&[s.clone()], &spec).unwrap();
        assert_eq!(split.train["a"], vec![1, 2, 3, 4]);
        assert_eq!(split.test["a"], vec![5, 6]);

        s.frames[5].session = None;
        assert!(stratified_split(&[s.clone()], &spec).is_err());
        s.frames[5].session = Some(3);
        assert!(stratified_split(&[s], &spec).is_err());
    }

    proptest! {
        #[test]
        fn split_is_always_a_partition(j in 2usize..60, frac in 0.01f64..0.99, seed in 0u64..1000) {
            let series = vec![series_of("s", j)];
            let spec = SplitSpec { mode: SplitMode::WithinSession { train_fraction: frac }, seed };
            let split = stratified_split(&series, &spec).unwrap();
            let train = &split.train["s"];
            let test = &split.test["s"];
            prop_assert!(!train.is_empty());
            prop_assert!(!test.is_empty());
            let mut all: Vec<u32> = train.iter().chain(test.iter()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (1..=j as u32).collect::<Vec<u32>>());
        }
    }
}
