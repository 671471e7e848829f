//! Training-pair generation for the reconstruction pretext task and noise
//! expansion of labeled strides.
//!
//! Noise is drawn in physical units (0.16 g on accelerometer rows, 20 °/s on
//! gyroscope rows, one percent of full scale) and the result re-normalized,
//! which is σ = 0.01 in normalized units. Zero padding is never touched.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::data::{
    downsample, full_scale, normalize, DataError, NormalizedStreams, RawRecording, StrideSegment, SEGMENT_LEN, SENSOR_ROWS, WORKING_RATE_HZ,
};
use crate::rng::{derive_seed, derived_rng, rng};
use crate::tensor::Tensor;

pub const CUTOUT_LEN: usize = 120;
pub const ACC_NOISE_SIGMA: f32 = 0.16;
pub const GYR_NOISE_SIGMA: f32 = 20.0;
/// How many times the source duration random segmentation emits by default.
pub const SEGMENT_EXPANSION: f64 = 3.0;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("recording has {len} samples, random segmentation needs at least {SEGMENT_LEN}")]
    TooShort { len: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augmentation {
    None,
    Cutout,
    Noise,
    CutoutNoise,
}

/// A corrupted input and the clean segment it should reconstruct.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub input: Tensor,
    pub target: Tensor,
    pub augmentation: Augmentation,
}

pub fn noise_sigma(row: usize) -> f32 {
    if row < 3 {
        ACC_NOISE_SIGMA
    } else {
        GYR_NOISE_SIGMA
    }
}

/// Window count giving [`SEGMENT_EXPANSION`] times the source duration.
pub fn default_segment_count(len: usize) -> usize {
    ((SEGMENT_EXPANSION * len as f64) / SEGMENT_LEN as f64).round().max(1.0) as usize
}

/// `count` full-length windows at uniform random offsets (overlap allowed).
pub fn random_segments(streams: &NormalizedStreams, count: usize, seed: u64, subject_id: &str) -> Result<Vec<StrideSegment>, AugmentError> {
    let len = streams.len();
    if len < SEGMENT_LEN {
        return Err(AugmentError::TooShort { len });
    }
    let mut r = rng(seed);
    Ok((0..count)
        .map(|_| {
            let start = r.random_range(0..=len - SEGMENT_LEN);
            window_at(streams, start, subject_id)
        })
        .collect())
}

/// `total` random windows spread evenly over `recordings`, each recording
/// first taken to the working rate and normalized.
pub fn windows_from_recordings(recordings: &[RawRecording], total: usize, seed: u64) -> Result<Vec<StrideSegment>, AugmentError> {
    let mut out = Vec::with_capacity(total);
    for (i, rec) in recordings.iter().enumerate() {
        let count = total / recordings.len() + usize::from(i < total % recordings.len());
        let factor = (rec.sample_rate / WORKING_RATE_HZ).round().max(1.0) as usize;
        let streams = normalize(&downsample(rec, factor))?;
        out.extend(random_segments(&streams, count, derive_seed(seed, i as u64), &rec.subject_id)?);
    }
    Ok(out)
}

fn window_at(streams: &NormalizedStreams, start: usize, subject_id: &str) -> StrideSegment {
    let rows: [&[f32]; SENSOR_ROWS] = std::array::from_fn(|r| &streams.rows[r][start..start + SEGMENT_LEN]);
    StrideSegment::from_rows(rows, None, subject_id).expect("window is exactly one segment long")
}

/// Uniform cut start in `[0, 600 - 120]`.
pub fn cutout_start(seed: u64) -> usize {
    rng(seed).random_range(0..=SEGMENT_LEN - CUTOUT_LEN)
}

/// Zeros one 120-sample window across all six rows.
pub fn cutout(segment: &StrideSegment, seed: u64) -> StrideSegment {
    let mut out = segment.clone();
    let start = cutout_start(seed);
    for r in 0..SENSOR_ROWS {
        out.row_mut(r)[start..start + CUTOUT_LEN].fill(0.0);
    }
    out
}

/// Adds i.i.d. Gaussian noise to a `[1, 6, W]` tensor in physical units,
/// σ = 0.16 g on rows 0..3 and 20 °/s on rows 3..6, over the first
/// `valid_len` samples of each row.
pub fn add_noise_raw(raw: &Tensor, valid_len: usize, seed: u64) -> Tensor {
    let w = raw.shape()[raw.shape().len() - 1];
    let mut out = raw.clone();
    let mut r = derived_rng(seed, 0x9015e);
    for (row, data) in out.data_mut().chunks_exact_mut(w).enumerate() {
        let dist = Normal::new(0.0, noise_sigma(row % SENSOR_ROWS)).expect("positive sigma");
        for v in &mut data[..valid_len.min(w)] {
            *v += dist.sample(&mut r);
        }
    }
    out
}

/// Noise augmentation of a normalized segment: denormalize, add physical
/// noise, normalize, clip to [-1, 1].
pub fn add_noise(segment: &StrideSegment, seed: u64) -> StrideSegment {
    let mut raw = segment.tensor.clone();
    for (row, data) in raw.data_mut().chunks_exact_mut(SEGMENT_LEN).enumerate() {
        let fs = full_scale(row);
        data.iter_mut().for_each(|v| *v *= fs);
    }
    let mut noisy = add_noise_raw(&raw, segment.valid_len, seed);
    for (row, data) in noisy.data_mut().chunks_exact_mut(SEGMENT_LEN).enumerate() {
        let fs = full_scale(row);
        data.iter_mut().for_each(|v| *v = (*v / fs).clamp(-1.0, 1.0));
    }
    StrideSegment {
        tensor: noisy,
        ..segment.clone()
    }
}

/// Three pairs per segment: cutout, noise, and noise followed by cutout, all
/// targeting the clean segment.
pub fn make_pretext_set(segments: &[StrideSegment], seed: u64) -> Vec<AugmentedPair> {
    let mut pairs = Vec::with_capacity(3 * segments.len());
    for (i, seg) in segments.iter().enumerate() {
        let s = |k: u64| derive_seed(seed, 4 * i as u64 + k);
        let cut = cutout(seg, s(0));
        let noisy = add_noise(seg, s(1));
        let both = cutout(&add_noise(seg, s(2)), s(3));
        for (input, augmentation) in [
            (cut, Augmentation::Cutout),
            (noisy, Augmentation::Noise),
            (both, Augmentation::CutoutNoise),
        ] {
            pairs.push(AugmentedPair {
                input: input.tensor,
                target: seg.tensor.clone(),
                augmentation,
            });
        }
    }
    pairs
}

/// Originals followed by `copies` noisy replicas of each, labels unchanged.
pub fn augment_labeled(segments: &[StrideSegment], copies: usize, seed: u64) -> Vec<StrideSegment> {
    let mut out = segments.to_vec();
    for c in 0..copies {
        for (i, seg) in segments.iter().enumerate() {
            out.push(add_noise(seg, derive_seed(seed, (c * segments.len() + i) as u64)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GaitClass, StrideLabel};

    fn streams(len: usize) -> NormalizedStreams {
        NormalizedStreams {
            sample_rate: 500.0,
            rows: std::array::from_fn(|r| (0..len).map(|i| (((i + 1) * (r + 3)) % 97) as f32 / 200.0 + 0.01).collect()),
        }
    }

    fn segment(valid: usize) -> StrideSegment {
        let s = streams(valid);
        let rows: [&[f32]; SENSOR_ROWS] = std::array::from_fn(|r| &s.rows[r][..]);
        StrideSegment::from_rows(
            rows,
            Some(StrideLabel {
                length_cm: 123.0,
                class: GaitClass::Walk,
            }),
            "s",
        )
        .unwrap()
    }

    #[test]
    fn exact_length_recording_yields_identical_windows() {
        let s = streams(600);
        let w = random_segments(&s, 5, 1, "a").unwrap();
        assert!(w.iter().all(|x| x.row(2) == &s.rows[2][..] && x.valid_len == 600));
        assert!(matches!(
            random_segments(&streams(599), 1, 1, "a"),
            Err(AugmentError::TooShort { len: 599 })
        ));
    }

    #[test]
    fn default_count_triples_duration() {
        let len = 60_000;
        let n = default_segment_count(len);
        assert_eq!(n * SEGMENT_LEN, 3 * len);
    }

    #[test]
    fn random_segments_deterministic() {
        let s = streams(5000);
        assert_eq!(random_segments(&s, 8, 9, "a").unwrap(), random_segments(&s, 8, 9, "a").unwrap());
    }

    #[test]
    fn cutout_zeroes_exactly_one_window() {
        let seg = segment(600);
        for seed in 0..50 {
            let out = cutout(&seg, seed);
            let start = cutout_start(seed);
            for r in 0..SENSOR_ROWS {
                for t in 0..SEGMENT_LEN {
                    if (start..start + CUTOUT_LEN).contains(&t) {
                        assert_eq!(out.row(r)[t], 0.0);
                    } else {
                        assert_eq!(out.row(r)[t].to_bits(), seg.row(r)[t].to_bits());
                    }
                }
            }
            assert_eq!(out.label, seg.label);
        }
    }

    #[test]
    fn noise_keeps_padding_and_range() {
        let seg = segment(450);
        let out = add_noise(&seg, 3);
        assert!(out.is_well_formed());
        assert_ne!(out.tensor, seg.tensor);
        assert_eq!(add_noise(&seg, 3), out);
    }

    #[test]
    fn pretext_set_shape() {
        let segs = vec![segment(600), segment(500)];
        let pairs = make_pretext_set(&segs, 1);
        assert_eq!(pairs.len(), 6);
        for (k, p) in pairs.iter().enumerate() {
            assert_eq!(p.target, segs[k / 3].tensor);
        }
        assert_eq!(pairs[0].augmentation, Augmentation::Cutout);
        assert_eq!(pairs[1].augmentation, Augmentation::Noise);
        assert_eq!(pairs[2].augmentation, Augmentation::CutoutNoise);
    }

    #[test]
    fn labeled_expansion() {
        let segs: Vec<_> = (0..10).map(|_| segment(500)).collect();
        assert_eq!(augment_labeled(&segs, 0, 1), segs);
        let out = augment_labeled(&segs, 2, 1);
        assert_eq!(out.len(), 30);
        assert!(out.iter().all(|s| s.label == segs[0].label));
    }
}
