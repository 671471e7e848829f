//! Stride segmentation: a rule-based heel-strike detector on gyroscope
//! magnitude, and import of externally produced boundary files.

use std::path::Path;

use thiserror::Error;

use crate::data::{read_boundary_file, BoundaryRow, DataError, RawRecording, StrideSpan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrideBoundary {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub confidence: f32,
}

impl StrideBoundary {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn span(&self) -> StrideSpan {
        StrideSpan {
            start: self.start,
            end: self.end,
            label: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("recording lasts {seconds:.2} s, at least {min_s} s are needed")]
    TooShort { seconds: f64, min_s: f64 },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterConfig {
    /// Moving-average window; 51 samples at 500 Hz.
    pub smooth_window_s: f64,
    /// Window of the light smoothing used to place the boundary.
    pub refine_window_s: f64,
    /// Swing threshold as a fraction of the `percentile` of smoothed magnitude.
    pub threshold_fraction: f32,
    pub percentile: f32,
    pub min_stride_s: f64,
    pub max_stride_s: f64,
    pub min_recording_s: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            smooth_window_s: 0.102,
            refine_window_s: 0.010,
            threshold_fraction: 0.3,
            percentile: 0.95,
            min_stride_s: 0.4,
            max_stride_s: 2.0,
            min_recording_s: 2.0,
        }
    }
}

fn odd_window(seconds: f64, rate: f64) -> usize {
    let n = (seconds * rate).round().max(1.0) as usize;
    n | 1
}

/// Centered moving average; edges average over the samples available.
pub fn moving_average(x: &[f32], window: usize) -> Vec<f32> {
    let half = window / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0f64);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v as f64);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64) as f32
        })
        .collect()
}

fn percentile(x: &[f32], q: f32) -> f32 {
    let mut v = x.to_vec();
    v.sort_by(f32::total_cmp);
    let idx = ((v.len() - 1) as f32 * q).round() as usize;
    v[idx]
}

fn argmin(x: &[f32], lo: usize, hi: usize) -> usize {
    let mut best = lo;
    for i in lo..hi {
        if x[i] < x[best] {
            best = i;
        }
    }
    best
}

/// Detects heel strikes as minima of gyroscope magnitude between swing peaks
/// and returns the strides between consecutive heel strikes.
pub fn detect_strides(rec: &RawRecording) -> Result<Vec<StrideBoundary>, SegmentError> {
    detect_strides_with(rec, &SegmenterConfig::default())
}

pub fn detect_strides_with(rec: &RawRecording, cfg: &SegmenterConfig) -> Result<Vec<StrideBoundary>, SegmentError> {
    if rec.duration_s() < cfg.min_recording_s {
        return Err(SegmentError::TooShort {
            seconds: rec.duration_s(),
            min_s: cfg.min_recording_s,
        });
    }
    let rate = rec.sample_rate;
    let mag: Vec<f32> = rec
        .samples
        .iter()
        .map(|s| (s.gyr[0] * s.gyr[0] + s.gyr[1] * s.gyr[1] + s.gyr[2] * s.gyr[2]).sqrt())
        .collect();
    let smooth = moving_average(&mag, odd_window(cfg.smooth_window_s, rate));
    let light = moving_average(&mag, odd_window(cfg.refine_window_s, rate));
    let threshold = cfg.threshold_fraction * percentile(&smooth, cfg.percentile);
    if threshold.is_nan() || threshold <= 0.0 {
        return Ok(Vec::new());
    }

    // one peak per supra-threshold region
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < smooth.len() {
        if smooth[i] > threshold {
            let start = i;
            while i < smooth.len() && smooth[i] > threshold {
                i += 1;
            }
            let mut best = start;
            for j in start..i {
                if smooth[j] > smooth[best] {
                    best = j;
                }
            }
            peaks.push(best);
        } else {
            i += 1;
        }
    }
    // swings of consecutive strides are at least a short stride apart
    let min_gap = (0.75 * cfg.min_stride_s * rate) as usize;
    let mut merged: Vec<usize> = Vec::with_capacity(peaks.len());
    for p in peaks {
        match merged.last_mut() {
            Some(last) if p - *last < min_gap => {
                if smooth[p] > smooth[*last] {
                    *last = p;
                }
            }
            _ => merged.push(p),
        }
    }

    let half = odd_window(cfg.smooth_window_s, rate) / 2;
    let strikes: Vec<(usize, f32)> = merged
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0] + 1, w[1]);
            let coarse = argmin(&smooth, a, b);
            let lo = coarse.saturating_sub(half).max(a);
            let hi = (coarse + half + 1).min(b);
            let fine = argmin(&light, lo, hi);
            let confidence = (1.0 - light[fine] / threshold).clamp(0.0, 1.0);
            (fine, confidence)
        })
        .collect();

    let (min_len, max_len) = (cfg.min_stride_s * rate, cfg.max_stride_s * rate);
    Ok(strikes
        .windows(2)
        .filter_map(|w| {
            let len = (w[1].0 - w[0].0) as f64;
            (len >= min_len && len <= max_len).then(|| StrideBoundary {
                start: w[0].0,
                end: w[1].0,
                confidence: w[0].1.min(w[1].1),
            })
        })
        .collect())
}

/// Validates parsed boundary rows against a recording of `len` samples:
/// every row in range and rows ordered without overlap.
pub fn validate_rows(rows: &[BoundaryRow], len: usize) -> Result<(), DataError> {
    for r in rows {
        if r.span.start >= r.span.end || r.span.end > len {
            return Err(DataError::BoundaryRange {
                line: r.line,
                start: r.span.start,
                end: r.span.end,
                len,
            });
        }
    }
    for w in rows.windows(2) {
        if w[1].span.start < w[0].span.end {
            return Err(DataError::BoundaryOverlap {
                first: w[0].line,
                second: w[1].line,
            });
        }
    }
    Ok(())
}

/// Reads an external boundary file and validates it against `rec`.
pub fn import_boundaries(rec: &RawRecording, path: &Path) -> Result<Vec<StrideBoundary>, DataError> {
    Ok(import_spans(rec.len(), path)?
        .into_iter()
        .map(|s| StrideBoundary {
            start: s.start,
            end: s.end,
            confidence: 1.0,
        })
        .collect())
}

/// Like [`import_boundaries`] but keeps the optional labels.
pub fn import_spans(len: usize, path: &Path) -> Result<Vec<StrideSpan>, DataError> {
    let rows = read_boundary_file(path)?;
    validate_rows(&rows, len)?;
    Ok(rows.into_iter().map(|r| r.span).collect())
}
