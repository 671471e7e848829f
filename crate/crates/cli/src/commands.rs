use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use imu_stride::augment::{make_pretext_set, windows_from_recordings};
use imu_stride::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, InitMode};
use imu_stride::data::{format_boundaries, read_boundary_file};
use imu_stride::model::ImuNet;
use imu_stride::rng::{derive_seed, tag};
use imu_stride::segment::detect_strides;
use imu_stride::train::metrics::HIST_BIN_WIDTH;
use imu_stride::train::{kfold_with_encoder, total_distance, train_downstream, train_pretext, FoldReport};

use crate::config::RunConfig;
use crate::dataset::{self, load_labeled, load_recording, load_unlabeled, strides_path, Layout};
use crate::error::CliError;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::unwritable(dir))?;
    }
    fs::write(path, contents).map_err(CliError::unwritable(path))?;
    Ok(path.to_path_buf())
}

/// Creates the output directories and probes them, so a bad path fails
/// before any training starts.
pub fn check_outputs(dirs: &[&Path]) -> Result<(), CliError> {
    for dir in dirs {
        fs::create_dir_all(dir).map_err(CliError::unwritable(*dir))?;
        let probe = dir.join(".imu-stride-probe");
        fs::write(&probe, b"").map_err(CliError::unwritable(*dir))?;
        let _ = fs::remove_file(probe);
    }
    Ok(())
}

fn mode(pretrained: bool) -> InitMode {
    if pretrained {
        InitMode::Pretrained
    } else {
        InitMode::Random
    }
}

pub fn pretext_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint_dir.join("pretext.bin")
}

pub fn model_path(cfg: &RunConfig, init: InitMode) -> PathBuf {
    cfg.checkpoint_dir.join(format!("model-{init}.bin"))
}

fn load_encoder(cfg: &RunConfig) -> Result<ImuNet, CliError> {
    let path = pretext_path(cfg);
    if !path.exists() {
        return Err(CliError::Missing {
            what: "checkpoint",
            path,
            hint: "run `imu-stride pretrain` first or pass --no-pretrain",
        });
    }
    Ok(load_checkpoint(&path, Some(&cfg.train.model))?.0)
}

pub fn generate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let summary = dataset::generate(cfg)?;
    print!("{summary}");
    Ok(vec![cfg.data_dir.clone(), Layout::new(&cfg.data_dir).summary()])
}

pub fn segment(input: &Path, truth: Option<&Path>, output: Option<&Path>, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let rec = load_recording(input)?;
    let output = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("recording");
            cfg.report_dir.join("segments").join(format!("{stem}.strides"))
        }
    };
    check_outputs(&[output.parent().unwrap_or(Path::new("."))])?;
    let found = detect_strides(&rec)?;
    let spans: Vec<_> = found.iter().map(|b| b.span()).collect();
    println!("{} strides detected in {:.1} s of data", spans.len(), rec.duration_s());
    if let Some(truth) = truth {
        // Matching window: 20 ms at the recording rate.
        let tol = (0.02 * rec.sample_rate).round() as usize;
        let rows = read_boundary_file(truth)?;
        let hits = rows
            .iter()
            .filter(|r| {
                spans
                    .iter()
                    .any(|s| s.start.abs_diff(r.span.start) <= tol && s.end.abs_diff(r.span.end) <= tol)
            })
            .count();
        println!(
            "recall {:.2}% ({hits}/{} reference strides within {tol} samples)",
            100.0 * hits as f64 / rows.len().max(1) as f64,
            rows.len()
        );
    }
    Ok(vec![write(&output, format_boundaries(&spans))?])
}

pub fn pretrain(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    check_outputs(&[&cfg.checkpoint_dir, &cfg.report_dir])?;
    let recordings = load_unlabeled(&cfg.data_dir)?;
    let seed = derive_seed(cfg.train.seed, tag("pretext"));
    let windows = windows_from_recordings(&recordings, cfg.scenario.pretext_windows, seed)?;
    let pairs = make_pretext_set(&windows, seed);
    println!(
        "pretext: {} windows from {} recordings, {} pairs",
        windows.len(),
        recordings.len(),
        pairs.len()
    );
    let mut net = ImuNet::new(cfg.train.model.clone(), seed)?;
    let curve = train_pretext(&mut net, &pairs, &cfg.train.pretext, seed)?;
    let mut meta = CheckpointMeta::new(cfg.train.seed, InitMode::Random);
    meta.epoch = curve.epochs.len().saturating_sub(1);
    if let Some(last) = curve.epochs.last() {
        meta.metrics.insert("pretext_loss".into(), last.train_loss.to_string());
        println!("final reconstruction loss {}", last.train_loss);
    }
    let ckpt = pretext_path(cfg);
    save_checkpoint(&net, &meta, &ckpt)?;
    Ok(vec![ckpt, write(&cfg.report_dir.join("pretext_loss.csv"), curve.to_csv())?])
}

pub fn train(cfg: &RunConfig, pretrained: bool) -> Result<Vec<PathBuf>, CliError> {
    check_outputs(&[&cfg.checkpoint_dir, &cfg.report_dir])?;
    let encoder = pretrained.then(|| load_encoder(cfg)).transpose()?;
    let labeled = load_labeled(&cfg.data_dir)?;
    let init = mode(pretrained);
    let seed = derive_seed(cfg.train.seed, tag("train"));
    let mut net = ImuNet::new(cfg.train.model.clone(), seed)?;
    if let Some(enc) = &encoder {
        net.load_encoder_from(enc)?;
    }
    println!("training on {} labeled strides, {init} init", labeled.len());
    let out = train_downstream(&mut net, &labeled, &cfg.train.downstream, seed)?;
    let mut meta = CheckpointMeta::new(cfg.train.seed, init);
    meta.epoch = out.best_epoch;
    meta.val_loss = Some(out.best_val_loss);
    meta.metrics.insert("val_accuracy".into(), out.best_val_accuracy.to_string());
    println!(
        "best epoch {}, val loss {}, val accuracy {:.2}%",
        out.best_epoch,
        out.best_val_loss,
        100.0 * out.best_val_accuracy
    );
    let ckpt = model_path(cfg, init);
    save_checkpoint(&net, &meta, &ckpt)?;
    Ok(vec![
        ckpt,
        write(&cfg.report_dir.join(format!("train_loss_{init}.csv")), out.curve.to_csv())?,
    ])
}

fn histogram_csv(report: &FoldReport) -> String {
    let h = report.histogram();
    let mut s = String::from("pe_from_pct,pe_to_pct,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let lo = i as f64 * HIST_BIN_WIDTH;
        let _ = writeln!(s, "{lo},{},{c}", lo + HIST_BIN_WIDTH);
    }
    let _ = writeln!(s, "{},inf,{}", h.counts.len() as f64 * HIST_BIN_WIDTH, h.overflow);
    s
}

pub fn eval(cfg: &RunConfig, pretrained: bool) -> Result<Vec<PathBuf>, CliError> {
    check_outputs(&[&cfg.report_dir])?;
    let encoder = pretrained.then(|| load_encoder(cfg)).transpose()?;
    let labeled = load_labeled(&cfg.data_dir)?;
    let report = kfold_with_encoder(&labeled, encoder.as_ref(), &cfg.train)?;
    let text = report.to_text();
    print!("{text}");
    let init = mode(pretrained);
    let dir = &cfg.report_dir;
    Ok(vec![
        write(&dir.join(format!("eval_{init}.txt")), text)?,
        write(&dir.join(format!("eval_{init}.kv")), report.to_kv())?,
        write(&dir.join(format!("pe_histogram_{init}.csv")), histogram_csv(&report))?,
    ])
}

pub fn distance(cfg: &RunConfig, input: Option<&Path>, pretrained: bool) -> Result<Vec<PathBuf>, CliError> {
    check_outputs(&[&cfg.report_dir])?;
    let ckpt = model_path(cfg, mode(pretrained));
    if !ckpt.exists() {
        return Err(CliError::Missing {
            what: "checkpoint",
            path: ckpt,
            hint: "run `imu-stride train` first (with the same --no-pretrain setting)",
        });
    }
    let (net, _) = load_checkpoint(&ckpt, Some(&cfg.train.model))?;
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| Layout::new(&cfg.data_dir).track());
    let rec = load_recording(&input)?;
    let truth_file = strides_path(&input);
    let truth_m = if truth_file.exists() {
        let rows = read_boundary_file(&truth_file)?;
        let cm: f64 = rows.iter().filter_map(|r| r.span.label).map(|l| l.length_cm as f64).sum();
        (cm > 0.0).then_some(cm / 100.0)
    } else {
        None
    };
    let report = total_distance(&rec, &net, truth_m)?;
    print!("{}", report.to_kv());
    let mut per_stride = String::from("stride,length_cm\n");
    for (i, l) in report.per_stride_cm.iter().enumerate() {
        let _ = writeln!(per_stride, "{i},{l}");
    }
    let dir = &cfg.report_dir;
    Ok(vec![
        write(&dir.join("distance.kv"), report.to_kv())?,
        write(&dir.join("distance_strides.csv"), per_stride)?,
    ])
}
