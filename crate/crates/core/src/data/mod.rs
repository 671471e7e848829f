//! IMU recordings, stride tensors and the synthetic gait generator.
//!
//! Sensor rows are always ordered `[ax, ay, az, gx, gy, gz]`. Accelerometer
//! values are in g, gyroscope values in degrees per second.

mod files;
pub mod synth;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Tensor;

pub use files::{
    format_boundaries, ingest_csv, parse_boundaries, read_boundary_file, read_csv, write_boundary_file, write_csv, BoundaryRow, CSV_HEADER,
};

/// Accelerometer full scale in g.
pub const ACC_FULL_SCALE: f32 = 16.0;
/// Gyroscope full scale in degrees per second.
pub const GYR_FULL_SCALE: f32 = 2000.0;
/// Time samples per stride tensor.
pub const SEGMENT_LEN: usize = 600;
pub const SENSOR_ROWS: usize = 6;
pub const RECORDING_RATE_HZ: f64 = 1000.0;
/// Factor taking 1000 Hz recordings to the 500 Hz segment rate.
pub const WORKING_DOWNSAMPLE: usize = 2;
pub const WORKING_RATE_HZ: f64 = 500.0;

pub const ROW_NAMES: [&str; SENSOR_ROWS] = ["ax", "ay", "az", "gx", "gy", "gz"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("sample {index}: {axis} = {value} outside dynamic range ±{limit}")]
    OutOfRange {
        index: usize,
        axis: &'static str,
        value: f32,
        limit: f32,
    },
    #[error("sample {index}: timestamp {t_us} does not increase")]
    NonMonotonic { index: usize, t_us: u64 },
    #[error("stride {index} spans {len} samples, more than {SEGMENT_LEN}")]
    StrideTooLong { index: usize, len: usize },
    #[error("boundary line {line}: [{start}, {end}) is outside a recording of {len} samples")]
    BoundaryRange { line: usize, start: usize, end: usize, len: usize },
    #[error("boundary lines {first} and {second} overlap or are out of order")]
    BoundaryOverlap { first: usize, second: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Surface {
    Treadmill,
    Playground,
    Asphalt,
    Synthetic,
}

impl Surface {
    pub fn as_str(self) -> &'static str {
        match self {
            Surface::Treadmill => "treadmill",
            Surface::Playground => "playground",
            Surface::Asphalt => "asphalt",
            Surface::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GaitClass {
    Walk,
    Run,
}

impl GaitClass {
    pub const ALL: [GaitClass; 2] = [GaitClass::Walk, GaitClass::Run];

    /// Class index used by the classifier head.
    pub fn index(self) -> usize {
        match self {
            GaitClass::Walk => 0,
            GaitClass::Run => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GaitClass::Walk => "walk",
            GaitClass::Run => "run",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "walk" => Some(GaitClass::Walk),
            "run" => Some(GaitClass::Run),
            _ => None,
        }
    }

    /// Walking below 8 km/h, running at or above.
    pub fn for_speed(speed_kmh: f32) -> Self {
        if speed_kmh < 8.0 {
            GaitClass::Walk
        } else {
            GaitClass::Run
        }
    }
}

impl fmt::Display for GaitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrideLabel {
    pub length_cm: f32,
    pub class: GaitClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_us: u64,
    pub acc: [f32; 3],
    pub gyr: [f32; 3],
}

impl Sample {
    pub fn rows(&self) -> [f32; SENSOR_ROWS] {
        [self.acc[0], self.acc[1], self.acc[2], self.gyr[0], self.gyr[1], self.gyr[2]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub sample_rate: f64,
    pub samples: Vec<Sample>,
    pub subject_id: String,
    /// `None` when the recording was ingested without a surface tag.
    pub surface: Option<Surface>,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Checks dynamic ranges and strictly increasing timestamps.
    pub fn validate(&self) -> Result<(), DataError> {
        for (i, s) in self.samples.iter().enumerate() {
            check_range(i, s)?;
            if i > 0 && s.t_us <= self.samples[i - 1].t_us {
                return Err(DataError::NonMonotonic { index: i, t_us: s.t_us });
            }
        }
        Ok(())
    }

    /// Concatenates recordings, re-timing `other` to follow `self`.
    pub fn concat(&self, other: &RawRecording) -> RawRecording {
        let step = (1e6 / self.sample_rate).round() as u64;
        let base = self.samples.last().map_or(0, |s| s.t_us + step);
        let t0 = other.samples.first().map_or(0, |s| s.t_us);
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().map(|s| Sample {
            t_us: base + (s.t_us - t0),
            ..*s
        }));
        RawRecording { samples, ..self.clone() }
    }
}

fn check_range(index: usize, s: &Sample) -> Result<(), DataError> {
    for (axis, (&v, limit)) in ROW_NAMES.iter().zip(s.rows().iter().zip([
        ACC_FULL_SCALE,
        ACC_FULL_SCALE,
        ACC_FULL_SCALE,
        GYR_FULL_SCALE,
        GYR_FULL_SCALE,
        GYR_FULL_SCALE,
    ])) {
        if v.is_nan() || v.abs() > limit {
            return Err(DataError::OutOfRange {
                index,
                axis,
                value: v,
                limit,
            });
        }
    }
    Ok(())
}

/// Six per-axis streams scaled into [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedStreams {
    pub sample_rate: f64,
    pub rows: [Vec<f32>; SENSOR_ROWS],
}

impl NormalizedStreams {
    pub fn len(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows[0].is_empty()
    }
}

pub fn full_scale(row: usize) -> f32 {
    if row < 3 {
        ACC_FULL_SCALE
    } else {
        GYR_FULL_SCALE
    }
}

/// Divides accelerometer axes by 16 g and gyroscope axes by 2000 °/s.
pub fn normalize(rec: &RawRecording) -> Result<NormalizedStreams, DataError> {
    let mut rows: [Vec<f32>; SENSOR_ROWS] = Default::default();
    for r in rows.iter_mut() {
        r.reserve(rec.samples.len());
    }
    for (i, s) in rec.samples.iter().enumerate() {
        check_range(i, s)?;
        for (r, v) in s.rows().into_iter().enumerate() {
            rows[r].push(v / full_scale(r));
        }
    }
    Ok(NormalizedStreams {
        sample_rate: rec.sample_rate,
        rows,
    })
}

/// Inverse of [`normalize`]; timestamps are regenerated from the rate.
pub fn denormalize(streams: &NormalizedStreams, subject_id: &str) -> RawRecording {
    let step = 1e6 / streams.sample_rate;
    let samples = (0..streams.len())
        .map(|i| {
            let v = |r: usize| streams.rows[r][i] * full_scale(r);
            Sample {
                t_us: (i as f64 * step).round() as u64,
                acc: [v(0), v(1), v(2)],
                gyr: [v(3), v(4), v(5)],
            }
        })
        .collect();
    RawRecording {
        sample_rate: streams.sample_rate,
        samples,
        subject_id: subject_id.to_string(),
        surface: None,
    }
}

/// Keeps every `factor`-th sample.
pub fn downsample(rec: &RawRecording, factor: usize) -> RawRecording {
    let factor = factor.max(1);
    RawRecording {
        sample_rate: rec.sample_rate / factor as f64,
        samples: rec.samples.iter().step_by(factor).copied().collect(),
        subject_id: rec.subject_id.clone(),
        surface: rec.surface,
    }
}

/// A stride window `[start, end)` in sample indices, optionally labeled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrideSpan {
    pub start: usize,
    pub end: usize,
    pub label: Option<StrideLabel>,
}

impl StrideSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Index mapping under [`downsample`] by `factor`.
    pub fn downsampled(&self, factor: usize) -> StrideSpan {
        StrideSpan {
            start: self.start.div_ceil(factor),
            end: self.end.div_ceil(factor),
            label: self.label,
        }
    }
}

/// One stride as a `[1, 6, 600]` spatial-first tensor, zero padded on the
/// right after `valid_len` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StrideSegment {
    pub tensor: Tensor,
    pub valid_len: usize,
    pub label: Option<StrideLabel>,
    pub subject_id: String,
}

impl StrideSegment {
    /// Builds a segment from up to [`SEGMENT_LEN`] samples per row.
    pub fn from_rows(rows: [&[f32]; SENSOR_ROWS], label: Option<StrideLabel>, subject_id: &str) -> Result<Self, DataError> {
        let len = rows[0].len();
        if len > SEGMENT_LEN {
            return Err(DataError::StrideTooLong { index: 0, len });
        }
        let mut data = vec![0.0f32; SENSOR_ROWS * SEGMENT_LEN];
        for (r, row) in rows.iter().enumerate() {
            debug_assert_eq!(row.len(), len);
            data[r * SEGMENT_LEN..r * SEGMENT_LEN + len].copy_from_slice(row);
        }
        Ok(Self {
            tensor: Tensor::from_parts(vec![1, SENSOR_ROWS, SEGMENT_LEN], data),
            valid_len: len,
            label,
            subject_id: subject_id.to_string(),
        })
    }

    /// Row `r` (in sensor order) over all 600 samples.
    pub fn row(&self, r: usize) -> &[f32] {
        &self.tensor.data()[r * SEGMENT_LEN..(r + 1) * SEGMENT_LEN]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.tensor.data_mut()[r * SEGMENT_LEN..(r + 1) * SEGMENT_LEN]
    }

    /// True when values lie in [-1, 1] and the padding is exactly zero.
    pub fn is_well_formed(&self) -> bool {
        self.tensor.shape() == [1, SENSOR_ROWS, SEGMENT_LEN]
            && self.valid_len <= SEGMENT_LEN
            && self.tensor.data().iter().all(|v| (-1.0..=1.0).contains(v))
            && (0..SENSOR_ROWS).all(|r| self.row(r)[self.valid_len..].iter().all(|&v| v == 0.0))
    }
}

/// Cuts normalized streams into one spatial-first tensor per stride.
pub fn to_spatial_first(streams: &NormalizedStreams, strides: &[StrideSpan], subject_id: &str) -> Result<Vec<StrideSegment>, DataError> {
    strides
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.end > streams.len() || s.start >= s.end {
                return Err(DataError::BoundaryRange {
                    line: i + 1,
                    start: s.start,
                    end: s.end,
                    len: streams.len(),
                });
            }
            if s.len() > SEGMENT_LEN {
                return Err(DataError::StrideTooLong { index: i, len: s.len() });
            }
            let rows: [&[f32]; SENSOR_ROWS] = std::array::from_fn(|r| &streams.rows[r][s.start..s.end]);
            StrideSegment::from_rows(rows, s.label, subject_id)
        })
        .collect()
}

/// Downsamples a recording to the working rate, normalizes it, and cuts
/// `spans` (given at the recording's own rate) into stride tensors.
pub fn prepare_strides(rec: &RawRecording, spans: &[StrideSpan]) -> Result<Vec<StrideSegment>, DataError> {
    let factor = (rec.sample_rate / WORKING_RATE_HZ).round().max(1.0) as usize;
    let low = downsample(rec, factor);
    let spans: Vec<StrideSpan> = spans.iter().map(|s| s.downsampled(factor)).collect();
    to_spatial_first(&normalize(&low)?, &spans, &rec.subject_id)
}
