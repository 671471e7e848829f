use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{evaluate, train_downstream, train_pretext, Histogram, LossCurve, Metrics, RegressionLoss, TrainConfig, TrainError};
use crate::augment::make_pretext_set;
use crate::data::StrideSegment;
use crate::model::ImuNet;
use crate::rng::{derive_seed, tag};

/// Sorted distinct subjects dealt round-robin into `folds` groups.
pub fn partition_subjects(subjects: &[String], folds: usize) -> Result<Vec<Vec<String>>, TrainError> {
    let distinct: BTreeSet<&String> = subjects.iter().collect();
    if folds == 0 || distinct.len() < folds {
        return Err(TrainError::TooFewSubjects {
            subjects: distinct.len(),
            folds,
        });
    }
    let mut out = vec![Vec::new(); folds];
    for (i, s) in distinct.into_iter().enumerate() {
        out[i % folds].push(s.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub best_val_loss: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub pretrained: bool,
    pub loss: RegressionLoss,
    pub folds: Vec<FoldResult>,
}

type Getter = fn(&Metrics) -> Option<f64>;

const ROWS: [(&str, Getter); 7] = [
    ("mae_run_cm", |m| m.mae_cm.run),
    ("mae_walk_cm", |m| m.mae_cm.walk),
    ("mae_avg_cm", |m| Some(m.mae_cm.avg)),
    ("pe_run_pct", |m| m.pe.run),
    ("pe_walk_pct", |m| m.pe.walk),
    ("pe_avg_pct", |m| Some(m.pe.avg)),
    ("accuracy_pct", |m| Some(100.0 * m.accuracy.avg)),
];

impl FoldReport {
    /// Mean and spread over folds of one metric; folds lacking it are skipped.
    pub fn stat(&self, f: impl Fn(&Metrics) -> Option<f64>) -> MeanStd {
        let v: Vec<f64> = self.folds.iter().filter_map(|r| f(&r.metrics)).collect();
        MeanStd::of(&v)
    }

    pub fn summary(&self) -> Vec<(&'static str, MeanStd)> {
        ROWS.iter().map(|&(name, f)| (name, self.stat(f))).collect()
    }

    pub fn mean_pe(&self) -> f64 {
        self.stat(|m| Some(m.pe.avg)).mean
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.stat(|m| Some(m.accuracy.avg)).mean
    }

    /// `|PE_run - PE_walk|` of the fold-averaged class errors.
    pub fn class_gap(&self) -> f64 {
        (self.stat(|m| m.pe.run).mean - self.stat(|m| m.pe.walk).mean).abs()
    }

    pub fn histogram(&self) -> Histogram {
        let mut h = Histogram::new();
        self.folds.iter().for_each(|f| h.merge(&f.metrics.histogram));
        h
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let init = if self.pretrained { "pretrained encoder" } else { "random encoder" };
        writeln!(
            s,
            "{}-fold subject-independent evaluation ({init}, {} loss)",
            self.folds.len(),
            self.loss.as_str()
        )
        .unwrap();
        writeln!(
            s,
            "{:<8}{:>14}{:>14}{:>14}{:>14}{:>14}{:>14}{:>14}",
            "fold", "MAE run", "MAE walk", "MAE avg", "PE run", "PE walk", "PE avg", "acc %"
        )
        .unwrap();
        let cell = |v: Option<f64>, w: usize| match v {
            Some(v) => format!("{v:>w$.2}"),
            None => format!("{:>w$}", "-"),
        };
        for f in &self.folds {
            let m = &f.metrics;
            writeln!(
                s,
                "{:<8}{}{}{}{}{}{}{}",
                f.fold,
                cell(m.mae_cm.run, 14),
                cell(m.mae_cm.walk, 14),
                cell(Some(m.mae_cm.avg), 14),
                cell(m.pe.run, 14),
                cell(m.pe.walk, 14),
                cell(Some(m.pe.avg), 14),
                cell(Some(100.0 * m.accuracy.avg), 14)
            )
            .unwrap();
        }
        let sum = self.summary();
        let pm = |i: usize| format!("{:>14}", format!("{:.2}±{:.2}", sum[i].1.mean, sum[i].1.std));
        writeln!(s, "{:<8}{}{}{}{}{}{}{}", "mean", pm(0), pm(1), pm(2), pm(3), pm(4), pm(5), pm(6)).unwrap();
        s
    }

    /// `key=value` lines: summary statistics, per-fold values and the
    /// pooled percentage-error histogram.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "folds={}", self.folds.len()).unwrap();
        writeln!(s, "pretrained={}", self.pretrained).unwrap();
        writeln!(s, "loss={}", self.loss.as_str()).unwrap();
        for (name, st) in self.summary() {
            writeln!(s, "{name}.mean={}", st.mean).unwrap();
            writeln!(s, "{name}.std={}", st.std).unwrap();
        }
        for f in &self.folds {
            writeln!(s, "fold.{}.test_subjects={}", f.fold, f.test_subjects.join(",")).unwrap();
            writeln!(s, "fold.{}.best_epoch={}", f.fold, f.best_epoch).unwrap();
            writeln!(s, "fold.{}.best_val_loss={}", f.fold, f.best_val_loss).unwrap();
            for (name, get) in ROWS {
                if let Some(v) = get(&f.metrics) {
                    writeln!(s, "fold.{}.{name}={v}", f.fold).unwrap();
                }
            }
        }
        let h = self.histogram();
        let counts: Vec<String> = h.counts.iter().map(u64::to_string).collect();
        writeln!(s, "histogram.bin_width_pct=1").unwrap();
        writeln!(s, "histogram.counts={}", counts.join(",")).unwrap();
        writeln!(s, "histogram.overflow={}", h.overflow).unwrap();
        s
    }
}

/// Subject-independent k-fold evaluation. Each fold starts from a fresh
/// network whose encoder is copied from `encoder` when given.
pub fn kfold_with_encoder(labeled: &[StrideSegment], encoder: Option<&ImuNet>, cfg: &TrainConfig) -> Result<FoldReport, TrainError> {
    cfg.validate()?;
    let subjects: Vec<String> = labeled.iter().map(|s| s.subject_id.clone()).collect();
    let groups = partition_subjects(&subjects, cfg.folds)?;
    let mut folds = Vec::with_capacity(groups.len());
    for (k, test_subjects) in groups.iter().enumerate() {
        let train_subjects: Vec<String> = groups
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .flat_map(|(_, g)| g.iter().cloned())
            .collect();
        assert!(
            train_subjects.iter().all(|s| !test_subjects.contains(s)),
            "subject leak in fold {k}"
        );
        let (train, test): (Vec<StrideSegment>, Vec<StrideSegment>) =
            labeled.iter().cloned().partition(|s| !test_subjects.contains(&s.subject_id));
        let seed = derive_seed(cfg.seed, tag("fold") + k as u64);
        let mut net = ImuNet::new(cfg.model.clone(), seed)?;
        if let Some(enc) = encoder {
            net.load_encoder_from(enc)?;
        }
        let outcome = train_downstream(&mut net, &train, &cfg.downstream, seed)?;
        folds.push(FoldResult {
            fold: k,
            train_subjects,
            test_subjects: test_subjects.clone(),
            metrics: evaluate(&net, &test)?,
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
        });
    }
    Ok(FoldReport {
        pretrained: encoder.is_some(),
        loss: cfg.downstream.loss,
        folds,
    })
}

/// Trains the pretext task once on `unlabeled` (when `pretrain`), then runs
/// [`kfold_with_encoder`]. Returns the report and the pretext loss curve.
pub fn kfold_evaluate(
    labeled: &[StrideSegment],
    unlabeled: &[StrideSegment],
    cfg: &TrainConfig,
    pretrain: bool,
) -> Result<(FoldReport, Option<LossCurve>), TrainError> {
    cfg.validate()?;
    if !pretrain {
        return Ok((kfold_with_encoder(labeled, None, cfg)?, None));
    }
    let seed = derive_seed(cfg.seed, tag("pretext"));
    let pairs = make_pretext_set(unlabeled, seed);
    let mut net = ImuNet::new(cfg.model.clone(), seed)?;
    let curve = train_pretext(&mut net, &pairs, &cfg.pretext, seed)?;
    Ok((kfold_with_encoder(labeled, Some(&net), cfg)?, Some(curve)))
}
