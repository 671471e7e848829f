//! On-disk layout of a generated dataset.
//!
//! ```text
//! <data_dir>/labeled/L01_05kmh.csv     + L01_05kmh.strides (with labels)
//! <data_dir>/unlabeled/U01_s1.csv      + U01_s1.strides (spans only)
//! <data_dir>/track/track.csv           + track.strides (with labels)
//! <data_dir>/summary.txt
//! <data_dir>/config.toml               resolved settings used
//! ```
//!
//! The subject id of a recording is its file stem up to the first `_`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use imu_stride::data::synth::{synth_track, StudySpec, SubjectProfile, SynthOutput, SyntheticStudy};
use imu_stride::data::{ingest_csv, prepare_strides, write_boundary_file, write_csv, RawRecording, StrideSegment, StrideSpan};
use imu_stride::segment::import_spans;

use crate::config::RunConfig;
use crate::error::CliError;

pub const TRACK_SUBJECT: &str = "T01";

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn labeled(&self) -> PathBuf {
        self.root.join("labeled")
    }

    pub fn unlabeled(&self) -> PathBuf {
        self.root.join("unlabeled")
    }

    pub fn track(&self) -> PathBuf {
        self.root.join("track").join("track.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }
}

pub fn strides_path(csv: &Path) -> PathBuf {
    csv.with_extension("strides")
}

/// Per-file counts shown in the dataset summary.
struct FileRow {
    name: String,
    samples: usize,
    strides: usize,
}

fn write_session(dir: &Path, name: &str, out: &SynthOutput, keep_labels: bool) -> Result<FileRow, CliError> {
    let csv = dir.join(format!("{name}.csv"));
    write_csv(&out.recording, &csv)?;
    let spans: Vec<StrideSpan> = if keep_labels {
        out.strides.clone()
    } else {
        out.strides.iter().map(|s| StrideSpan { label: None, ..*s }).collect()
    };
    write_boundary_file(&strides_path(&csv), &spans)?;
    Ok(FileRow {
        name: name.to_string(),
        samples: out.recording.len(),
        strides: spans.len(),
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::unwritable(dir))
}

fn table(title: &str, rows: &[FileRow], extra: &str) -> String {
    let mut s = format!("{title}\n{:<16}{:>12}{:>10}\n", "file", "samples", "strides");
    for r in rows {
        let _ = writeln!(s, "{:<16}{:>12}{:>10}", r.name, r.samples, r.strides);
    }
    let samples: usize = rows.iter().map(|r| r.samples).sum();
    let strides: usize = rows.iter().map(|r| r.strides).sum();
    let _ = writeln!(s, "{:<16}{:>12}{:>10}", "total", samples, strides);
    s + extra
}

/// Writes the synthetic study and the track recording. Returns the summary.
pub fn generate(cfg: &RunConfig) -> Result<String, CliError> {
    let layout = Layout::new(&cfg.data_dir);
    let sc = &cfg.scenario;
    let spec = StudySpec {
        seed: cfg.train.seed,
        ..sc.study.clone()
    };
    let study = SyntheticStudy::generate(&spec);
    for dir in [layout.labeled(), layout.unlabeled(), layout.track().parent().unwrap().to_path_buf()] {
        create_dir(&dir)?;
    }

    let mut labeled = Vec::new();
    for subject in &study.labeled {
        for (session, &v) in subject.sessions.iter().zip(&spec.speeds_kmh) {
            let name = format!("{}_{:02}kmh", subject.profile.id, v.round() as u32);
            labeled.push(write_session(&layout.labeled(), &name, session, true)?);
        }
    }
    let mut unlabeled = Vec::new();
    for subject in &study.unlabeled {
        for (i, session) in subject.sessions.iter().enumerate() {
            let name = format!("{}_s{}", subject.profile.id, i + 1);
            unlabeled.push(write_session(&layout.unlabeled(), &name, session, false)?);
        }
    }
    let track = synth_track(
        &SubjectProfile::generate(TRACK_SUBJECT, spec.seed ^ 0x7ac4),
        sc.track_m,
        &sc.track_speeds_kmh,
        spec.seed ^ 0x7ac4,
    );
    let track_row = write_session(layout.track().parent().unwrap(), "track", &track, true)?;
    let track_m = track.total_length_m();

    let speeds: Vec<String> = spec.speeds_kmh.iter().map(|v| v.to_string()).collect();
    let mut summary = format!("seed {}\n\n", spec.seed);
    summary += &table(
        "Labeled dataset",
        &labeled,
        &format!(
            "subjects {}, surface treadmill, speeds {} km/h, {} strides per speed\n\n",
            study.labeled.len(),
            speeds.join("/"),
            spec.strides_per_speed
        ),
    );
    summary += &table(
        "Unlabeled dataset",
        &unlabeled,
        &format!(
            "subjects {}, surfaces treadmill/playground/asphalt, {} sessions each\n\n",
            study.unlabeled.len(),
            spec.unlabeled_sessions
        ),
    );
    summary += &table("Track", &[track_row], &format!("distance {track_m:.2} m\n"));
    fs::write(layout.summary(), &summary).map_err(CliError::unwritable(layout.summary()))?;
    let dump = layout.root.join("config.toml");
    fs::write(&dump, cfg.to_toml()).map_err(CliError::unwritable(dump))?;
    Ok(summary)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let missing = || CliError::Missing {
        what: "recordings",
        path: dir.to_path_buf(),
        hint: "run `imu-stride generate` first",
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|_| missing())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    if files.is_empty() {
        return Err(missing());
    }
    files.sort();
    Ok(files)
}

pub fn subject_of(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("unknown");
    stem.split('_').next().unwrap_or(stem).to_string()
}

pub fn load_recording(path: &Path) -> Result<RawRecording, CliError> {
    if !path.exists() {
        return Err(CliError::Missing {
            what: "recording",
            path: path.to_path_buf(),
            hint: "check the path or run `imu-stride generate`",
        });
    }
    let mut rec = ingest_csv(path)?;
    rec.subject_id = subject_of(path);
    Ok(rec)
}

/// Every labeled stride under `<data_dir>/labeled`, files in name order.
pub fn load_labeled(data_dir: &Path) -> Result<Vec<StrideSegment>, CliError> {
    let mut out = Vec::new();
    for csv in csv_files(&Layout::new(data_dir).labeled())? {
        let rec = load_recording(&csv)?;
        let spans = import_spans(rec.len(), &strides_path(&csv))?;
        out.extend(prepare_strides(&rec, &spans)?);
    }
    Ok(out)
}

pub fn load_unlabeled(data_dir: &Path) -> Result<Vec<RawRecording>, CliError> {
    csv_files(&Layout::new(data_dir).unlabeled())?
        .iter()
        .map(|p| load_recording(p))
        .collect()
}
