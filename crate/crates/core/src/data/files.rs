//! Recording CSV and stride boundary file formats.
//!
//! Recording CSV: the header line [`CSV_HEADER`] followed by one sample per
//! row, `t_us` an unsigned integer in microseconds and the six axes as
//! decimal numbers (accelerometer in g, gyroscope in °/s).
//!
//! Boundary file: one stride per line, `start_index,end_index` with an
//! optional `,length_cm,class` suffix where class is `walk` or `run`.
//! Indices are 0-based and `end_index` is exclusive. Blank lines are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, GaitClass, RawRecording, Sample, StrideLabel, StrideSpan, RECORDING_RATE_HZ};

pub const CSV_HEADER: &str = "t_us,ax_g,ay_g,az_g,gx_dps,gy_dps,gz_dps";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses recording CSV text. The sample rate is inferred from the median
/// timestamp gap (1000 Hz when fewer than two samples are present).
pub fn read_csv(text: &str, subject_id: &str) -> Result<RawRecording, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(DataError::Malformed {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`, found `{h}`"),
            })
        }
        None => {
            return Err(DataError::Malformed {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(DataError::Malformed {
                line: line_no,
                msg: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let t_us = fields[0].trim().parse::<u64>().map_err(|e| DataError::Malformed {
            line: line_no,
            msg: format!("t_us: {e}"),
        })?;
        let mut v = [0.0f32; 6];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.trim().parse::<f32>().map_err(|e| DataError::Malformed {
                line: line_no,
                msg: format!("{}: {e}", super::ROW_NAMES[k]),
            })?;
        }
        samples.push(Sample {
            t_us,
            acc: [v[0], v[1], v[2]],
            gyr: [v[3], v[4], v[5]],
        });
    }
    let rec = RawRecording {
        sample_rate: infer_rate(&samples),
        samples,
        subject_id: subject_id.to_string(),
        surface: None,
    };
    rec.validate()?;
    Ok(rec)
}

fn infer_rate(samples: &[Sample]) -> f64 {
    if samples.len() < 2 {
        return RECORDING_RATE_HZ;
    }
    let mut gaps: Vec<u64> = samples.windows(2).map(|w| w[1].t_us.saturating_sub(w[0].t_us)).collect();
    gaps.sort_unstable();
    let n = gaps.len();
    let median = if n % 2 == 1 {
        gaps[n / 2] as f64
    } else {
        (gaps[n / 2 - 1] + gaps[n / 2]) as f64 / 2.0
    };
    if median > 0.0 {
        1e6 / median
    } else {
        RECORDING_RATE_HZ
    }
}

/// Reads a recording CSV; the subject id is the file stem.
pub fn ingest_csv(path: &Path) -> Result<RawRecording, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let subject = path.file_stem().and_then(|s| s.to_str()).unwrap_or("unknown");
    read_csv(&text, subject)
}

pub fn write_csv(rec: &RawRecording, path: &Path) -> Result<(), DataError> {
    let mut out = String::with_capacity(rec.samples.len() * 48);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in &rec.samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.t_us, s.acc[0], s.acc[1], s.acc[2], s.gyr[0], s.gyr[1], s.gyr[2]
        );
    }
    fs::write(path, out).map_err(io_err(path))
}

/// One parsed boundary line; `line` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryRow {
    pub line: usize,
    pub span: StrideSpan,
}

pub fn parse_boundaries(text: &str) -> Result<Vec<BoundaryRow>, DataError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| DataError::Malformed { line: line_no, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let idx = |k: usize| fields[k].parse::<usize>().map_err(|e| bad(format!("index: {e}")));
        let (start, end) = match fields.len() {
            2 | 4 => (idx(0)?, idx(1)?),
            n => return Err(bad(format!("expected 2 or 4 fields, found {n}"))),
        };
        let label = if fields.len() == 4 {
            let length_cm = fields[2].parse::<f32>().map_err(|e| bad(format!("length_cm: {e}")))?;
            if length_cm.is_nan() || length_cm <= 0.0 {
                return Err(bad(format!("length_cm must be positive, got {length_cm}")));
            }
            let class = GaitClass::parse(fields[3]).ok_or_else(|| bad(format!("unknown class `{}`", fields[3])))?;
            Some(StrideLabel { length_cm, class })
        } else {
            None
        };
        rows.push(BoundaryRow {
            line: line_no,
            span: StrideSpan { start, end, label },
        });
    }
    Ok(rows)
}

pub fn read_boundary_file(path: &Path) -> Result<Vec<BoundaryRow>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_boundaries(&text)
}

pub fn format_boundaries(spans: &[StrideSpan]) -> String {
    let mut out = String::new();
    for s in spans {
        match s.label {
            Some(l) => {
                let _ = writeln!(out, "{},{},{},{}", s.start, s.end, l.length_cm, l.class);
            }
            None => {
                let _ = writeln!(out, "{},{}", s.start, s.end);
            }
        }
    }
    out
}

pub fn write_boundary_file(path: &Path, spans: &[StrideSpan]) -> Result<(), DataError> {
    fs::write(path, format_boundaries(spans)).map_err(io_err(path))
}
