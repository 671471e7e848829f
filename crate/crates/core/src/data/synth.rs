//! Synthetic foot-mounted IMU gait with known stride boundaries and lengths.
//!
//! Each stride starts at heel strike. The sagittal gyroscope axis (`gy`)
//! carries a short negative stance lobe followed by a large positive swing
//! lobe whose amplitude grows with stride length. `gx` has a bump at toe-off
//! and `gz` a lateral swing wobble, so the gyro magnitude is lowest at heel
//! strike. The accelerometer carries gravity on `az`, the swing kinematics of
//! a foot travelling one stride length, and a decaying heel-strike impulse.
//!
//! A recording holds one lead-in stride, the `n` labeled strides and one
//! lead-out stride, so every labeled heel strike sits between two swings.

use std::f32::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    prepare_strides, DataError, GaitClass, RawRecording, Sample, StrideLabel, StrideSegment, StrideSpan, Surface, ACC_FULL_SCALE,
    GYR_FULL_SCALE, RECORDING_RATE_HZ,
};
use crate::augment::{windows_from_recordings, AugmentError};
use crate::rng::{derive_seed, derived_rng, tag};

/// Treadmill speeds of the labeled protocol, km/h.
pub const LABELED_SPEEDS_KMH: [f32; 8] = [5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0, 19.0];

const MAX_JITTER: f32 = 0.02;
const G: f32 = 9.81;

pub fn class_range_cm(class: GaitClass) -> (f32, f32) {
    match class {
        GaitClass::Walk => (80.0, 140.0),
        GaitClass::Run => (140.0, 300.0),
    }
}

/// Nominal stride length: linear in speed per class, clamped to the class
/// range. 5 km/h gives 100 cm and 19 km/h gives 270 cm.
pub fn nominal_stride_length_cm(speed_kmh: f32) -> f32 {
    let class = GaitClass::for_speed(speed_kmh);
    let raw = match class {
        GaitClass::Walk => 10.0 * speed_kmh + 50.0,
        GaitClass::Run => 12.5 * speed_kmh + 32.5,
    };
    let (lo, hi) = class_range_cm(class);
    raw.clamp(lo, hi)
}

/// Nominal stride duration: 1.1 s at 5 km/h walking down to 0.64 s at
/// 19 km/h running.
pub fn nominal_stride_duration_s(speed_kmh: f32) -> f32 {
    match GaitClass::for_speed(speed_kmh) {
        GaitClass::Walk => 1.1 - 0.05 * (speed_kmh - 5.0),
        GaitClass::Run => 0.80 - 0.016 * (speed_kmh - 9.0),
    }
}

fn surface_impact_gain(surface: Surface) -> f32 {
    match surface {
        Surface::Treadmill => 1.3,
        Surface::Playground => 1.0,
        Surface::Asphalt => 0.9,
        Surface::Synthetic => 1.0,
    }
}

/// Per-person gait traits.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub id: String,
    /// Multiplies cadence; > 1 means quicker strides.
    pub cadence_scale: f32,
    /// Added to the stance fraction.
    pub stance_shift: f32,
    pub impact_gain: f32,
    pub lateral_gain: f32,
}

impl SubjectProfile {
    pub fn neutral(id: &str) -> Self {
        Self {
            id: id.to_string(),
            cadence_scale: 1.0,
            stance_shift: 0.0,
            impact_gain: 1.0,
            lateral_gain: 1.0,
        }
    }

    pub fn generate(id: &str, seed: u64) -> Self {
        let mut rng = derived_rng(seed, tag(id));
        Self {
            id: id.to_string(),
            cadence_scale: rng.random_range(0.96..1.04),
            stance_shift: rng.random_range(-0.02..0.02),
            impact_gain: rng.random_range(0.85..1.15),
            lateral_gain: rng.random_range(0.5..1.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitScenario {
    pub speed_kmh: f32,
    /// Strides per second.
    pub cadence_hz: f32,
    /// Nominal length before per-stride jitter.
    pub stride_length_cm: f32,
    pub gait_class: GaitClass,
    /// Multiplies the default sensor noise (0.02 g, 2 °/s).
    pub noise_level: f32,
    pub surface: Surface,
    pub stance_fraction: f32,
    pub subject: SubjectProfile,
}

impl GaitScenario {
    pub fn new(speed_kmh: f32) -> Self {
        Self::for_subject(speed_kmh, &SubjectProfile::neutral("synthetic"))
    }

    pub fn for_subject(speed_kmh: f32, subject: &SubjectProfile) -> Self {
        let gait_class = GaitClass::for_speed(speed_kmh);
        let stance = match gait_class {
            GaitClass::Walk => 0.60,
            GaitClass::Run => 0.45 - 0.01 * (speed_kmh - 9.0).max(0.0),
        };
        Self {
            speed_kmh,
            cadence_hz: subject.cadence_scale / nominal_stride_duration_s(speed_kmh),
            stride_length_cm: nominal_stride_length_cm(speed_kmh),
            gait_class,
            noise_level: 1.0,
            surface: Surface::Synthetic,
            stance_fraction: (stance + subject.stance_shift).clamp(0.3, 0.7),
            subject: subject.clone(),
        }
    }

    pub fn with_surface(mut self, surface: Surface) -> Self {
        self.surface = surface;
        self
    }

    pub fn with_noise(mut self, level: f32) -> Self {
        self.noise_level = level;
        self
    }

    /// Overrides the cadence so one stride lasts `seconds`.
    pub fn with_stride_duration(mut self, seconds: f32) -> Self {
        self.cadence_hz = 1.0 / seconds;
        self
    }

    pub fn stride_samples(&self) -> usize {
        (RECORDING_RATE_HZ as f32 / self.cadence_hz).round() as usize
    }
}

/// Six-axis sample at stride phase `phase` in [0, 1).
fn waveform(sc: &GaitScenario, length_cm: f32, phase: f32, stride_s: f32) -> [f32; 6] {
    let s = sc.stance_fraction;
    let a_swing = 40.0 + 3.2 * length_cm;
    let a_stance = 0.18 * a_swing;
    let a_toe = 0.15 * a_swing;
    let t_swing = (1.0 - s) * stride_s;
    let len_m = length_cm / 100.0;
    let a_fwd = 2.0 * PI * len_m / (t_swing * t_swing) / G;
    let clearance = 0.10 + 0.0005 * length_cm;
    let a_up = 2.0 * PI * PI * clearance / (t_swing * t_swing) / G;
    let impact = (1.0 + 0.02 * length_cm) * surface_impact_gain(sc.surface) * sc.subject.impact_gain;

    let (mut ax, mut ay, mut az) = (0.0, 0.25 * sc.subject.lateral_gain * (2.0 * PI * phase).sin(), 1.0);
    let mut gz = 0.0;
    let gy;
    if phase < s {
        gy = -a_stance * (PI * phase / s).sin().max(0.0).sqrt();
    } else {
        let tau = (phase - s) / (1.0 - s);
        gy = a_swing * (PI * tau).sin();
        gz = 0.08 * a_swing * sc.subject.lateral_gain * (2.0 * PI * tau).sin();
        ax = a_fwd * (2.0 * PI * tau).sin();
        az += a_up * (2.0 * PI * tau).sin();
    }
    let gx = a_toe * (-((phase - s) / 0.05).powi(2)).exp();

    let t = phase * stride_s;
    let ring = impact * (-t / 0.015).exp() * (2.0 * PI * 30.0 * t).cos();
    az += ring;
    ax -= 0.5 * ring;
    ay += 0.3 * ring;
    [ax, ay, az, gx, gy, gz]
}

/// A generated recording at 1000 Hz with ground-truth strides.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub recording: RawRecording,
    /// Labeled strides in 1000 Hz sample indices.
    pub strides: Vec<StrideSpan>,
}

impl SynthOutput {
    /// Strides cut at the 500 Hz working rate.
    pub fn segments(&self) -> Result<Vec<StrideSegment>, DataError> {
        prepare_strides(&self.recording, &self.strides)
    }

    pub fn total_length_m(&self) -> f64 {
        self.strides
            .iter()
            .filter_map(|s| s.label)
            .map(|l| l.length_cm as f64 / 100.0)
            .sum()
    }
}

/// Generates `n_strides` labeled strides plus lead-in and lead-out strides.
pub fn synth_gait(sc: &GaitScenario, n_strides: usize, seed: u64) -> SynthOutput {
    synth_legs(&[(sc.clone(), n_strides.max(1))], seed)
}

/// One continuous recording made of consecutive legs, each `(scenario,
/// strides)`. Only the recording as a whole gets a lead-in and a lead-out
/// stride, so every stride between them is labeled.
pub fn synth_legs(legs: &[(GaitScenario, usize)], seed: u64) -> SynthOutput {
    assert!(!legs.is_empty(), "at least one leg");
    let mut rng = derived_rng(seed, 1);
    let mut plan: Vec<(&GaitScenario, bool)> = vec![(&legs[0].0, false)];
    for (sc, n) in legs {
        plan.extend(std::iter::repeat_n((sc, true), *n));
    }
    plan.push((&legs[legs.len() - 1].0, false));

    let mut rows: Vec<[f32; 6]> = Vec::new();
    let mut levels: Vec<f32> = Vec::new();
    let mut strides = Vec::new();
    for (sc, labeled) in plan {
        let per = sc.stride_samples();
        let stride_s = per as f32 / RECORDING_RATE_HZ as f32;
        let (lo, hi) = class_range_cm(sc.gait_class);
        let jitter = rng.random_range(-MAX_JITTER..=MAX_JITTER);
        let length = (sc.stride_length_cm * (1.0 + jitter)).clamp(lo, hi);
        let start = rows.len();
        rows.extend((0..per).map(|i| waveform(sc, length, i as f32 / per as f32, stride_s)));
        levels.extend(std::iter::repeat_n(sc.noise_level.max(0.0), per));
        if labeled {
            strides.push(StrideSpan {
                start,
                end: start + per,
                label: Some(StrideLabel {
                    length_cm: length,
                    class: sc.gait_class,
                }),
            });
        }
    }

    let mut noise_rng = derived_rng(seed, 2);
    let unit = Normal::new(0.0f32, 1.0).expect("unit normal");
    let step_us = (1e6 / RECORDING_RATE_HZ) as u64;
    let samples = rows
        .into_iter()
        .zip(levels)
        .enumerate()
        .map(|(i, (r, level))| {
            let mut acc = [0.0; 3];
            let mut gyr = [0.0; 3];
            for a in 0..3 {
                acc[a] = (r[a] + 0.02 * level * unit.sample(&mut noise_rng)).clamp(-ACC_FULL_SCALE, ACC_FULL_SCALE);
            }
            for a in 0..3 {
                gyr[a] = (r[3 + a] + 2.0 * level * unit.sample(&mut noise_rng)).clamp(-GYR_FULL_SCALE, GYR_FULL_SCALE);
            }
            Sample {
                t_us: i as u64 * step_us,
                acc,
                gyr,
            }
        })
        .collect();

    SynthOutput {
        recording: RawRecording {
            sample_rate: RECORDING_RATE_HZ,
            samples,
            subject_id: legs[0].0.subject.id.clone(),
            surface: Some(legs[0].0.surface),
        },
        strides,
    }
}

/// A track session of about `distance_m` split evenly over one leg per
/// speed.
pub fn synth_track(subject: &SubjectProfile, distance_m: f64, speeds_kmh: &[f32], seed: u64) -> SynthOutput {
    let leg_m = distance_m / speeds_kmh.len() as f64;
    let legs: Vec<(GaitScenario, usize)> = speeds_kmh
        .iter()
        .map(|&v| {
            let sc = GaitScenario::for_subject(v, subject).with_surface(Surface::Playground);
            let n = (100.0 * leg_m / sc.stride_length_cm as f64).round().max(1.0) as usize;
            (sc, n)
        })
        .collect();
    synth_legs(&legs, seed)
}

/// One recording per speed for a subject on the treadmill protocol.
pub fn labeled_sessions(subject: &SubjectProfile, speeds: &[f32], strides_per_speed: usize, seed: u64) -> Vec<SynthOutput> {
    speeds
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let sc = GaitScenario::for_subject(v, subject).with_surface(Surface::Treadmill);
            synth_gait(&sc, strides_per_speed, derive_seed(seed, tag(&subject.id) ^ (i as u64 + 1)))
        })
        .collect()
}

/// Free-running sessions at random speeds in [4.5, 19.5] km/h on random
/// surfaces, with varied noise.
pub fn unlabeled_sessions(subject: &SubjectProfile, sessions: usize, strides_per_session: usize, seed: u64) -> Vec<SynthOutput> {
    let mut rng = derived_rng(seed, tag(&subject.id) ^ 0x5eed);
    (0..sessions)
        .map(|i| {
            let speed = rng.random_range(4.5..19.5);
            let surface = [Surface::Treadmill, Surface::Playground, Surface::Asphalt][rng.random_range(0..3)];
            let noise = rng.random_range(0.5..2.0);
            let sc = GaitScenario::for_subject(speed, subject).with_surface(surface).with_noise(noise);
            synth_gait(
                &sc,
                strides_per_session,
                derive_seed(seed, tag(&subject.id) ^ ((i as u64 + 1) << 20)),
            )
        })
        .collect()
}

/// Shape of a generated study: labeled treadmill subjects and free-running
/// unlabeled subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub labeled_subjects: usize,
    pub unlabeled_subjects: usize,
    pub speeds_kmh: Vec<f32>,
    pub strides_per_speed: usize,
    pub unlabeled_sessions: usize,
    pub unlabeled_strides: usize,
    pub seed: u64,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            labeled_subjects: 3,
            unlabeled_subjects: 11,
            speeds_kmh: LABELED_SPEEDS_KMH.to_vec(),
            strides_per_speed: 25,
            unlabeled_sessions: 2,
            unlabeled_strides: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub profile: SubjectProfile,
    pub sessions: Vec<SynthOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStudy {
    pub labeled: Vec<SubjectData>,
    pub unlabeled: Vec<SubjectData>,
}

pub fn labeled_id(i: usize) -> String {
    format!("L{:02}", i + 1)
}

pub fn unlabeled_id(i: usize) -> String {
    format!("U{:02}", i + 1)
}

impl SyntheticStudy {
    pub fn generate(spec: &StudySpec) -> Self {
        let labeled = (0..spec.labeled_subjects)
            .map(|i| {
                let profile = SubjectProfile::generate(&labeled_id(i), spec.seed);
                let sessions = labeled_sessions(&profile, &spec.speeds_kmh, spec.strides_per_speed, spec.seed);
                SubjectData { profile, sessions }
            })
            .collect();
        let unlabeled = (0..spec.unlabeled_subjects)
            .map(|i| {
                let profile = SubjectProfile::generate(&unlabeled_id(i), spec.seed);
                let sessions = unlabeled_sessions(&profile, spec.unlabeled_sessions, spec.unlabeled_strides, spec.seed);
                SubjectData { profile, sessions }
            })
            .collect();
        Self { labeled, unlabeled }
    }

    /// Every labeled stride as a tensor, subjects in order.
    pub fn labeled_segments(&self) -> Result<Vec<StrideSegment>, DataError> {
        let mut out = Vec::new();
        for subject in &self.labeled {
            for session in &subject.sessions {
                out.extend(session.segments()?);
            }
        }
        Ok(out)
    }

    /// `total` random full-length windows spread evenly over the unlabeled
    /// sessions.
    pub fn unlabeled_windows(&self, total: usize, seed: u64) -> Result<Vec<StrideSegment>, AugmentError> {
        let recordings: Vec<RawRecording> = self
            .unlabeled
            .iter()
            .flat_map(|s| &s.sessions)
            .map(|s| s.recording.clone())
            .collect();
        windows_from_recordings(&recordings, total, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_follow_cadence() {
        let sc = GaitScenario::new(5.0).with_stride_duration(1.1);
        let out = synth_gait(&sc, 10, 1);
        assert_eq!(out.strides.len(), 10);
        for w in out.strides.windows(2) {
            assert_eq!(w[1].start - w[0].start, 1100);
            assert_eq!(w[0].end, w[1].start);
        }
        assert_eq!(out.recording.len(), 12 * 1100);
        out.recording.validate().unwrap();
    }

    #[test]
    fn track_covers_requested_distance() {
        let out = synth_track(&SubjectProfile::neutral("t"), 400.0, &[6.0, 10.0, 14.0, 18.0], 3);
        assert!((out.total_length_m() - 400.0).abs() < 8.0, "{}", out.total_length_m());
        assert!(out.strides.windows(2).all(|w| w[0].end == w[1].start));
        assert_eq!(out.strides[0].start, GaitScenario::new(6.0).stride_samples());
        assert_eq!(
            out.recording.len(),
            out.strides.last().unwrap().end + GaitScenario::new(18.0).stride_samples()
        );
    }

    #[test]
    fn same_seed_same_recording() {
        let sc = GaitScenario::new(11.0);
        assert_eq!(synth_gait(&sc, 5, 42), synth_gait(&sc, 5, 42));
        assert_ne!(synth_gait(&sc, 5, 42), synth_gait(&sc, 5, 43));
    }

    #[test]
    fn nominal_lengths() {
        assert_eq!(nominal_stride_length_cm(5.0), 100.0);
        assert_eq!(nominal_stride_length_cm(19.0), 270.0);
        assert_eq!(nominal_stride_length_cm(8.0), 140.0);
    }

    #[test]
    fn fast_run_lengths_stay_in_run_range() {
        // 270 cm ± 2% is [264.6, 275.4], inside [140, 300]
        let out = synth_gait(&GaitScenario::new(19.0), 200, 7);
        for s in &out.strides {
            let l = s.label.unwrap();
            assert_eq!(l.class, GaitClass::Run);
            assert!((140.0..=300.0).contains(&l.length_cm));
            assert!((l.length_cm / 270.0 - 1.0).abs() <= 0.02 + 1e-6);
        }
    }

    fn peak_gyro(out: &SynthOutput) -> f32 {
        out.recording.samples.iter().map(|s| s.gyr[1].abs()).fold(0.0, f32::max)
    }

    #[test]
    fn running_is_faster_and_stronger_than_walking() {
        let walk = synth_gait(&GaitScenario::new(7.0), 5, 3);
        let run = synth_gait(&GaitScenario::new(9.0), 5, 3);
        assert!(peak_gyro(&run) > peak_gyro(&walk));
        assert!(run.strides[0].len() < walk.strides[0].len());
    }

    #[test]
    fn working_rate_strides_fit_segment_budget() {
        let subject = SubjectProfile {
            cadence_scale: 0.96,
            ..SubjectProfile::neutral("slow")
        };
        let out = synth_gait(&GaitScenario::for_subject(4.5, &subject), 3, 1);
        let segs = out.segments().unwrap();
        assert!(segs.iter().all(|s| s.valid_len <= 600 && s.is_well_formed()));
    }
}
