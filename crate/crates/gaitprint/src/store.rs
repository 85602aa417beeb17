//! Persisted second frames: a plain CSV table and a compact binary format,
//! either of which reproduces the segmented series exactly.
//!
//! Binary layout (everything little-endian):
//!   magic "GPRT", version u8, frame length u32, record count u32, then per
//!   record: id length u16, id bytes, frame index u32, session u16 with 0
//!   for none, and frame-length f64 magnitudes.
//! Text layout: header subject,j,session,s1..sS with session left empty
//! when absent. Values print as shortest round-trip decimals, so both
//! formats are bit-exact under a read back.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::ingest::{SecondFrame, SubjectSeries};

const MAGIC: &[u8; 4] = b"GPRT";
const VERSION: u8 = 1;

fn artifact_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Artifact {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn common_frame_length(series: &[SubjectSeries]) -> Result<usize> {
    let first = series
        .first()
        .ok_or_else(|| Error::Data("no series to write".to_string()))?;
    for s in series {
        if s.s != first.s {
            return Err(Error::Data(format!(
                "subject '{}' has frame length {}, subject '{}' has {}",
                s.subject_id, s.s, first.subject_id, first.s
            )));
        }
    }
    Ok(first.s)
}

/// Writes all frames as one CSV table.
pub fn write_frames_csv(series: &[SubjectSeries], path: &Path) -> Result<()> {
    let s = common_frame_length(series)?;
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("subject,j,session");
    for k in 1..=s {
        header.push_str(&format!(",s{k}"));
    }
    header.push('\n');
    w.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;
    for sub in series {
        for frame in &sub.frames {
            let mut line = format!(
                "{},{},{}",
                sub.subject_id,
                frame.j,
                frame.session.map(|v| v.to_string()).unwrap_or_default()
            );
            for &v in &frame.v {
                line.push_str(&format!(",{v:?}"));
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a frames CSV back into per-subject series, subjects sorted by id.
pub fn read_frames_csv(path: &Path) -> Result<Vec<SubjectSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| artifact_err(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| artifact_err(path, e.to_string()))?
        .clone();
    let fixed = ["subject", "j", "session"];
    if headers.len() < 4 || headers.iter().take(3).ne(fixed) {
        return Err(artifact_err(
            path,
            "expected header subject,j,session,s1..",
        ));
    }
    let s = headers.len() - 3;
    for (k, name) in headers.iter().skip(3).enumerate() {
        if name != format!("s{}", k + 1) {
            return Err(artifact_err(
                path,
                format!("magnitude column {} is named '{name}'", k + 1),
            ));
        }
    }
    let mut grouped: Vec<(String, Vec<SecondFrame>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| artifact_err(path, e.to_string()))?;
        if record.len() != s + 3 {
            return Err(artifact_err(
                path,
                format!("row {} has {} fields, expected {}", line + 2, record.len(), s + 3),
            ));
        }
        let subject = record[0].to_string();
        let j: u32 = record[1]
            .parse()
            .map_err(|_| artifact_err(path, format!("row {}: bad frame index", line + 2)))?;
        let session = if record[2].is_empty() {
            None
        } else {
            Some(record[2].parse::<u16>().map_err(|_| {
                artifact_err(path, format!("row {}: bad session", line + 2))
            })?)
        };
        let mut v = Vec::with_capacity(s);
        for field in record.iter().skip(3) {
            let value: f64 = field
                .parse()
                .map_err(|_| artifact_err(path, format!("row {}: bad magnitude", line + 2)))?;
            v.push(value);
        }
        match grouped.last_mut() {
            Some((id, frames)) if *id == subject => frames.push(SecondFrame { j, v, session }),
            _ => grouped.push((subject, vec![SecondFrame { j, v, session }])),
        }
    }
    finish_series(grouped, s, path)
}

/// Writes all frames in the binary layout.
pub fn write_frames_binary(series: &[SubjectSeries], path: &Path) -> Result<()> {
    let s = common_frame_length(series)?;
    let n_records: usize = series.iter().map(|x| x.frames.len()).sum();
    let n_records = u32::try_from(n_records)
        .map_err(|_| Error::Data("too many frames for the binary format".to_string()))?;
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    out(MAGIC)?;
    out(&[VERSION])?;
    out(&(s as u32).to_le_bytes())?;
    out(&n_records.to_le_bytes())?;
    for sub in series {
        let id = sub.subject_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| {
            Error::Data(format!("subject id '{}' is too long", sub.subject_id))
        })?;
        for frame in &sub.frames {
            out(&id_len.to_le_bytes())?;
            out(id)?;
            out(&frame.j.to_le_bytes())?;
            out(&frame.session.unwrap_or(0).to_le_bytes())?;
            for &v in &frame.v {
                out(&v.to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads the binary layout back, subjects sorted by id.
pub fn read_frames_binary(path: &Path) -> Result<Vec<SubjectSeries>> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(artifact_err(path, "not a frames file (bad magic)"));
    }
    let mut version = [0u8; 1];
    read_exact(&mut r, &mut version, path)?;
    if version[0] != VERSION {
        return Err(artifact_err(
            path,
            format!("unsupported version {}", version[0]),
        ));
    }
    let s = read_u32(&mut r, path)? as usize;
    if s < 2 {
        return Err(artifact_err(path, format!("frame length {s} is invalid")));
    }
    let n_records = read_u32(&mut r, path)?;
    let mut grouped: Vec<(String, Vec<SecondFrame>)> = Vec::new();
    for _ in 0..n_records {
        let id_len = read_u16(&mut r, path)? as usize;
        let mut id = vec![0u8; id_len];
        read_exact(&mut r, &mut id, path)?;
        let id = String::from_utf8(id)
            .map_err(|_| artifact_err(path, "subject id is not valid UTF-8"))?;
        let j = read_u32(&mut r, path)?;
        let session = match read_u16(&mut r, path)? {
            0 => None,
            v => Some(v),
        };
        let mut v = Vec::with_capacity(s);
        for _ in 0..s {
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf, path)?;
            v.push(f64::from_le_bytes(buf));
        }
        match grouped.last_mut() {
            Some((gid, frames)) if *gid == id => frames.push(SecondFrame { j, v, session }),
            _ => grouped.push((id, vec![SecondFrame { j, v, session }])),
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| io_err(path, e))? != 0 {
        return Err(artifact_err(path, "trailing bytes after final record"));
    }
    finish_series(grouped, s, path)
}

fn finish_series(
    grouped: Vec<(String, Vec<SecondFrame>)>,
    s: usize,
    path: &Path,
) -> Result<Vec<SubjectSeries>> {
    let mut out: Vec<SubjectSeries> = Vec::with_capacity(grouped.len());
    for (subject_id, frames) in grouped {
        if out.iter().any(|x| x.subject_id == subject_id) {
            return Err(artifact_err(
                path,
                format!("subject '{subject_id}' appears in two separate blocks"),
            ));
        }
        for pair in frames.windows(2) {
            if pair[1].j <= pair[0].j {
                return Err(artifact_err(
                    path,
                    format!("subject '{subject_id}' frames are not strictly increasing"),
                ));
            }
        }
        out.push(SubjectSeries {
            subject_id,
            s,
            frames,
        });
    }
    out.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(out)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            artifact_err(path, "file ends before the final record")
        } else {
            io_err(path, e)
        }
    })
}

fn read_u16<R: Read>(r: &mut R, path: &Path) -> Result<u16> {
    let mut buf = [0u8; 2];
    read_exact(r, &mut buf, path)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_series() -> Vec<SubjectSeries> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        ["ann", "bob"]
            .iter()
            .map(|id| SubjectSeries {
                subject_id: id.to_string(),
                s: 5,
                frames: (1..=3)
                    .map(|j| SecondFrame {
                        j,
                        v: (0..5).map(|_| rng.random_range(0.0..3.0)).collect(),
                        session: if *id == "bob" { Some(2) } else { None },
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let series = sample_series();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.csv");
        write_frames_csv(&series, &path).unwrap();
        let back = read_frames_csv(&path).unwrap();
        assert_eq!(series, back);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let series = sample_series();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.bin");
        write_frames_binary(&series, &path).unwrap();
        let back = read_frames_binary(&path).unwrap();
        assert_eq!(series, back);
    }

    #[test]
    fn formats_agree_with_each_other() {
        let series = sample_series();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("frames.csv");
        let bin_path = dir.path().join("frames.bin");
        write_frames_csv(&series, &csv_path).unwrap();
        write_frames_binary(&series, &bin_path).unwrap();
        assert_eq!(
            read_frames_csv(&csv_path).unwrap(),
            read_frames_binary(&bin_path).unwrap()
        );
    }

    #[test]
    fn binary_survives_special_values() {
        let awkward = 0.1f64 + 0.2;
        let series = vec![SubjectSeries {
            subject_id: "x".to_string(),
            s: 3,
            frames: vec![SecondFrame {
                j: 1,
                v: vec![awkward, f64::MIN_POSITIVE, 2.999999999999999],
                session: Some(65535),
            }],
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.bin");
        write_frames_binary(&series, &path).unwrap();
        let back = read_frames_binary(&path).unwrap();
        assert_eq!(back[0].frames[0].v[0].to_bits(), awkward.to_bits());
        assert_eq!(back[0].frames[0].session, Some(65535));
    }

    #[test]
    fn bad_magic_version_and_truncation_are_rejected() {
        let series = sample_series();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.bin");
        write_frames_binary(&series, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = dir.path().join("magic.bin");
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        std::fs::write(&bad_magic, &corrupt).unwrap();
        assert!(matches!(
            read_frames_binary(&bad_magic),
            Err(Error::Artifact { .. })
        ));

        let bad_version = dir.path().join("version.bin");
        let mut corrupt = bytes.clone();
        corrupt[4] = 99;
        std::fs::write(&bad_version, &corrupt).unwrap();
        assert!(matches!(
            read_frames_binary(&bad_version),
            Err(Error::Artifact { .. })
        ));

        let truncated = dir.path().join("short.bin");
        std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            read_frames_binary(&truncated),
            Err(Error::Artifact { .. })
        ));

        let padded = dir.path().join("padded.bin");
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&padded, &extra).unwrap();
        assert!(matches!(
            read_frames_binary(&padded),
            Err(Error::Artifact { .. })
        ));
    }

    #[test]
    fn csv_rejects_mangled_tables() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.csv");

        std::fs::write(&path, "subject,frame,session,s1,s2\na,1,,0.5,0.6\n").unwrap();
        assert!(read_frames_csv(&path).is_err());

        std::fs::write(&path, "subject,j,session,s1,s3\na,1,,0.5,0.6\n").unwrap();
        assert!(read_frames_csv(&path).is_err());

        std::fs::write(&path, "subject,j,session,s1,s2\na,1,,0.5,oops\n").unwrap();
        assert!(read_frames_csv(&path).is_err());
    }

    #[test]
    fn split_subject_blocks_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.csv");
        std::fs::write(
            &path,
            "subject,j,session,s1,s2\na,1,,0.5,0.6\nb,1,,0.1,0.2\na,2,,0.7,0.8\n",
        )
        .unwrap();
        assert!(matches!(
            read_frames_csv(&path),
            Err(Error::Artifact { .. })
        ));
    }

    #[test]
    fn mismatched_frame_lengths_cannot_be_written() {
        let mut series = sample_series();
        series[1].s = 4;
        let dir = tempfile::tempdir().unwrap();
        assert!(write_frames_csv(&series, &dir.path().join("x.csv")).is_err());
        assert!(write_frames_binary(&series, &dir.path().join("x.bin")).is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_frames_csv(&[], &dir.path().join("x.csv")).is_err());
    }
}
