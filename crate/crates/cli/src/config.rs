//! Run configuration: a built-in profile plus optional TOML overrides.

use std::fs;
use std::path::{Path, PathBuf};

use imu_stride::data::synth::StudySpec;
use imu_stride::train::{LrSchedule, RegressionLoss, TrainConfig};
use serde::Deserialize;

use crate::error::CliError;

/// Config file contents. Every field is optional; missing values come from
/// the profile.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretext: PretextSection,
    #[serde(default)]
    pub downstream: DownstreamSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub labeled_subjects: Option<usize>,
    pub unlabeled_subjects: Option<usize>,
    pub speeds_kmh: Option<Vec<f32>>,
    pub strides_per_speed: Option<usize>,
    pub unlabeled_sessions: Option<usize>,
    pub unlabeled_strides: Option<usize>,
    pub pretext_windows: Option<usize>,
    pub track_m: Option<f64>,
    pub track_speeds_kmh: Option<Vec<f32>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub channels: Option<Vec<usize>>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretextSection {
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamSection {
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub max_lr: Option<f32>,
    pub val_fraction: Option<f64>,
    pub loss: Option<String>,
    pub noise_copies: Option<usize>,
}

/// Synthetic data to generate, on top of the study shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub study: StudySpec,
    /// Random windows cut from the unlabeled sessions for the pretext task.
    pub pretext_windows: usize,
    pub track_m: f64,
    pub track_speeds_kmh: Vec<f32>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub train: TrainConfig,
    pub scenario: Scenario,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

pub const PROFILES: [&str; 3] = ["tiny", "desk", "full"];

fn scenario_for(profile: &str) -> Scenario {
    let study = StudySpec::default();
    let track_speeds_kmh = vec![6.0, 10.0, 14.0, 18.0];
    match profile {
        "tiny" => Scenario {
            study: StudySpec {
                unlabeled_subjects: 4,
                strides_per_speed: 5,
                unlabeled_sessions: 1,
                unlabeled_strides: 30,
                ..study
            },
            pretext_windows: 120,
            track_m: 100.0,
            track_speeds_kmh,
        },
        "desk" => Scenario {
            study,
            pretext_windows: 1000,
            track_m: 400.0,
            track_speeds_kmh,
        },
        _ => Scenario {
            study,
            pretext_windows: 2000,
            track_m: 400.0,
            track_speeds_kmh,
        },
    }
}

impl RunConfig {
    pub fn for_profile(name: &str) -> Result<Self, CliError> {
        let train = TrainConfig::profile(name)
            .ok_or_else(|| CliError::Config(format!("unknown profile `{name}`, expected one of {PROFILES:?}")))?;
        let root = PathBuf::from("imu-stride-run");
        Ok(Self {
            profile: name.to_string(),
            train,
            scenario: scenario_for(name),
            data_dir: root.join("data"),
            checkpoint_dir: root.join("checkpoints"),
            report_dir: root.join("reports"),
        })
    }

    /// Resolves a config: the profile named by `profile_flag`, else by the
    /// file, else `tiny`; then the file's overrides.
    pub fn load(path: Option<&Path>, profile_flag: Option<&str>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                parse_file(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let name = profile_flag.or(file.profile.as_deref()).unwrap_or("tiny");
        let mut cfg = Self::for_profile(name)?;
        cfg.apply(file)?;
        cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn apply(&mut self, f: FileConfig) -> Result<(), CliError> {
        let t = &mut self.train;
        set(&mut t.seed, f.seed);
        set(&mut t.folds, f.folds);
        set(&mut self.data_dir, f.paths.data_dir);
        set(&mut self.checkpoint_dir, f.paths.checkpoint_dir);
        set(&mut self.report_dir, f.paths.report_dir);

        let g = f.generator;
        let s = &mut self.scenario;
        set(&mut s.study.labeled_subjects, g.labeled_subjects);
        set(&mut s.study.unlabeled_subjects, g.unlabeled_subjects);
        set(&mut s.study.speeds_kmh, g.speeds_kmh);
        set(&mut s.study.strides_per_speed, g.strides_per_speed);
        set(&mut s.study.unlabeled_sessions, g.unlabeled_sessions);
        set(&mut s.study.unlabeled_strides, g.unlabeled_strides);
        set(&mut s.pretext_windows, g.pretext_windows);
        set(&mut s.track_m, g.track_m);
        set(&mut s.track_speeds_kmh, g.track_speeds_kmh);
        if s.study.speeds_kmh.is_empty() || s.track_speeds_kmh.is_empty() {
            return Err(CliError::Config("speed lists must not be empty".into()));
        }
        if s.track_m.is_nan() || s.track_m <= 0.0 {
            return Err(CliError::Config(format!("track_m must be positive, got {}", s.track_m)));
        }

        set(&mut t.model.channels, f.model.channels);
        set(&mut t.model.hidden, f.model.hidden);
        set(&mut t.pretext.epochs, f.pretext.epochs);
        set(&mut t.pretext.batch, f.pretext.batch);
        if let Some(lr) = f.pretext.lr {
            t.pretext.schedule = LrSchedule::Constant(lr);
        }
        let d = f.downstream;
        set(&mut t.downstream.epochs, d.epochs);
        set(&mut t.downstream.batch, d.batch);
        set(&mut t.downstream.max_lr, d.max_lr);
        set(&mut t.downstream.val_fraction, d.val_fraction);
        set(&mut t.downstream.noise_copies, d.noise_copies);
        if let Some(name) = d.loss {
            t.downstream.loss = RegressionLoss::parse(&name)
                .ok_or_else(|| CliError::Config(format!("unknown loss `{name}`, expected pew_rmse or rmse")))?;
        }
        Ok(())
    }

    /// Human-readable dump in the config file syntax.
    pub fn to_toml(&self) -> String {
        let t = &self.train;
        let s = &self.scenario;
        let lr = match t.pretext.schedule {
            LrSchedule::Constant(v) => v,
            other => other.peak(),
        };
        format!(
            "profile = {:?}\nseed = {}\nfolds = {}\n\n[paths]\ndata_dir = {:?}\ncheckpoint_dir = {:?}\nreport_dir = {:?}\n\n\
             [generator]\nlabeled_subjects = {}\nunlabeled_subjects = {}\nspeeds_kmh = {:?}\nstrides_per_speed = {}\n\
             unlabeled_sessions = {}\nunlabeled_strides = {}\npretext_windows = {}\ntrack_m = {:?}\ntrack_speeds_kmh = {:?}\n\n\
             [model]\nchannels = {:?}\nhidden = {}\n\n[pretext]\nepochs = {}\nbatch = {}\nlr = {:?}\n\n\
             [downstream]\nepochs = {}\nbatch = {}\nmax_lr = {:?}\nval_fraction = {:?}\nloss = {:?}\nnoise_copies = {}\n",
            self.profile,
            t.seed,
            t.folds,
            self.data_dir.display().to_string(),
            self.checkpoint_dir.display().to_string(),
            self.report_dir.display().to_string(),
            s.study.labeled_subjects,
            s.study.unlabeled_subjects,
            s.study.speeds_kmh,
            s.study.strides_per_speed,
            s.study.unlabeled_sessions,
            s.study.unlabeled_strides,
            s.pretext_windows,
            s.track_m,
            s.track_speeds_kmh,
            t.model.channels,
            t.model.hidden,
            t.pretext.epochs,
            t.pretext.batch,
            lr,
            t.downstream.epochs,
            t.downstream.batch,
            t.downstream.max_lr,
            t.downstream.val_fraction,
            t.downstream.loss.as_str(),
            t.downstream.noise_copies,
        )
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn parse_file(text: &str) -> Result<FileConfig, String> {
    toml::from_str(text).map_err(|e| e.message().to_string())
}
