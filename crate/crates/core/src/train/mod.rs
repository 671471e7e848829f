//! Pretext and downstream training, evaluation and reporting.

mod distance;
mod kfold;
pub mod loss;
pub mod metrics;
pub mod schedule;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::augment::{augment_labeled, AugmentedPair};
use crate::data::{GaitClass, StrideSegment};
use crate::model::{length_to_target, target_to_length, ImuNet, ImuNetConfig, ModelError, Prediction};
use crate::rng::{derive_seed, derived_rng, tag};
use crate::tensor::{ops, EngineError, Graph, NodeId, ParamStore};

pub use distance::{total_distance, DistanceReport};
pub use kfold::{kfold_evaluate, kfold_with_encoder, partition_subjects, FoldReport, FoldResult, MeanStd};
pub use loss::{pew_rmse, rmse, LossError, RegressionLoss};
pub use metrics::{metrics, ClassSplit, Histogram, Metrics, MetricsError};
pub use schedule::LrSchedule;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{phase}: non-finite loss at epoch {epoch}, batch {batch}, lr {lr:e}: {detail}")]
    NonFinite {
        phase: &'static str,
        epoch: usize,
        batch: usize,
        lr: f32,
        detail: String,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training split has no {0} strides")]
    EmptyClass(GaitClass),
    #[error("segment {0} has no label")]
    Unlabeled(usize),
    #[error("nothing to train on")]
    NoData,
    #[error("{subjects} subjects cannot fill {folds} folds")]
    TooFewSubjects { subjects: usize, folds: usize },
    #[error("no strides detected")]
    NoStrides,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Segment(#[from] crate::segment::SegmentError),
}

impl From<EngineError> for TrainError {
    fn from(e: EngineError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextConfig {
    pub epochs: usize,
    pub batch: usize,
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamConfig {
    pub epochs: usize,
    pub batch: usize,
    pub max_lr: f32,
    pub val_fraction: f64,
    pub loss: RegressionLoss,
    /// Noisy replicas added per training stride.
    pub noise_copies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ImuNetConfig,
    pub pretext: PretextConfig,
    pub downstream: DownstreamConfig,
    pub folds: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-length schedule: 100 pretext and 150 downstream epochs at batch 30.
    pub fn full() -> Self {
        Self {
            model: ImuNetConfig::default(),
            pretext: PretextConfig {
                epochs: 100,
                batch: 30,
                schedule: LrSchedule::Constant(1e-3),
            },
            downstream: DownstreamConfig {
                epochs: 150,
                batch: 30,
                max_lr: 3e-3,
                val_fraction: 0.1,
                loss: RegressionLoss::PewRmse,
                noise_copies: 2,
            },
            folds: 3,
            seed: 0,
        }
    }

    /// Full synthetic study on a single CPU core in minutes.
    pub fn desk() -> Self {
        let mut c = Self::full();
        c.model.channels = vec![8, 16, 32];
        c.pretext.epochs = 3;
        c.downstream.epochs = 30;
        c.downstream.noise_copies = 1;
        c
    }

    /// Smoke-test scale.
    pub fn tiny() -> Self {
        let mut c = Self::desk();
        c.model.channels = vec![4, 8, 16];
        c.model.hidden = 32;
        c.pretext.epochs = 1;
        c.downstream.epochs = 8;
        c.downstream.noise_copies = 0;
        c
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.pretext.batch == 0 || self.downstream.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.downstream.val_fraction > 0.0 && self.downstream.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.pretext.schedule.peak() > 0.0 && self.downstream.max_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f32,
    pub val_loss: Option<f32>,
    /// Learning rate of the epoch's last step.
    pub lr: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub epochs: Vec<EpochRecord>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{}", e.epoch, e.train_loss, val, e.lr).unwrap();
        }
        s
    }

    pub fn train_losses(&self) -> Vec<f32> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

fn non_finite(phase: &'static str, epoch: usize, batch: usize, lr: f32) -> impl Fn(String) -> TrainError {
    move |detail| TrainError::NonFinite {
        phase,
        epoch,
        batch,
        lr,
        detail,
    }
}

fn engine_err(e: EngineError, wrap: impl Fn(String) -> TrainError) -> TrainError {
    match e {
        EngineError::NonFinite { .. } => wrap(e.to_string()),
        other => TrainError::Model(other.into()),
    }
}

fn retag(e: TrainError, wrap: impl Fn(String) -> TrainError) -> TrainError {
    match e {
        TrainError::Model(m) => model_err(m, wrap),
        other => other,
    }
}

fn model_err(e: ModelError, wrap: impl Fn(String) -> TrainError) -> TrainError {
    match e {
        ModelError::Engine(inner) => engine_err(inner, wrap),
        other => TrainError::Model(other),
    }
}

fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, epoch as u64));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Trains encoder and decoder to reconstruct clean targets from corrupted
/// inputs with batch-mean MSE and Adam. Returns the per-epoch loss curve.
pub fn train_pretext(net: &mut ImuNet, pairs: &[AugmentedPair], cfg: &PretextConfig, seed: u64) -> Result<LossCurve, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::NoData);
    }
    if cfg.batch == 0 {
        return Err(TrainError::Config("batch must be at least 1".into()));
    }
    net.params.reset_optimizer();
    let per_epoch = pairs.len().div_ceil(cfg.batch);
    let total = cfg.epochs * per_epoch;
    let mut curve = LossCurve::default();
    let shuffle_seed = derive_seed(seed, tag("pretext-shuffle"));
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0f64;
        let mut lr = 0.0;
        for (b, idx) in batches(pairs.len(), cfg.batch, shuffle_seed, epoch).iter().enumerate() {
            lr = cfg.schedule.lr(step, total);
            let wrap = non_finite("pretext", epoch, b, lr);
            let grads = {
                let mut g = Graph::new(&net.params);
                let mut losses = Vec::with_capacity(idx.len());
                for &i in idx {
                    let x = g.input(pairs[i].input.clone());
                    let y = net.reconstruct(&mut g, x).map_err(|e| model_err(e, &wrap))?;
                    let t = g.input(pairs[i].target.clone());
                    losses.push(g.mse(y, t).map_err(|e| engine_err(e, &wrap))?);
                }
                let loss = g.mean(&losses).map_err(|e| engine_err(e, &wrap))?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(wrap(format!("loss {value}")));
                }
                sum += value as f64;
                g.backward(loss).map_err(|e| engine_err(e, &wrap))?
            };
            net.params.adam_step(&grads, lr).map_err(|e| engine_err(e, &wrap))?;
            step += 1;
        }
        curve.epochs.push(EpochRecord {
            epoch,
            train_loss: (sum / per_epoch as f64) as f32,
            val_loss: None,
            lr,
        });
    }
    Ok(curve)
}

/// Mean reconstruction MSE of `net` over pairs, and of predicting zeros.
pub fn reconstruction_mse(net: &ImuNet, pairs: &[AugmentedPair]) -> Result<(f64, f64), TrainError> {
    let (mut model, mut zero) = (0.0f64, 0.0f64);
    for p in pairs {
        let y = net.reconstruct_segment(&p.input)?;
        let n = p.target.len() as f64;
        model += y
            .data()
            .iter()
            .zip(p.target.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / n;
        zero += p.target.data().iter().map(|&b| (b as f64).powi(2)).sum::<f64>() / n;
    }
    let n = pairs.len().max(1) as f64;
    Ok((model / n, zero / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamOutcome {
    pub curve: LossCurve,
    pub best_epoch: usize,
    pub best_val_loss: f32,
    pub best_val_accuracy: f64,
    pub train_size: usize,
    pub val_size: usize,
}

/// Stratified split: per class, the last `round(fraction * n)` strides of a
/// seeded shuffle go to validation. Returns `(train, val)` indices.
pub fn stratified_split(classes: &[GaitClass], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (k, class) in [GaitClass::Walk, GaitClass::Run].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == class).collect();
        idx.shuffle(&mut derived_rng(seed, k as u64));
        let n_val = (fraction * idx.len() as f64).round() as usize;
        let cut = idx.len() - n_val.min(idx.len());
        train.extend_from_slice(&idx[..cut]);
        val.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn labels_of(segments: &[StrideSegment]) -> Result<Vec<(f32, GaitClass)>, TrainError> {
    segments
        .iter()
        .enumerate()
        .map(|(i, s)| s.label.map(|l| (l.length_cm, l.class)).ok_or(TrainError::Unlabeled(i)))
        .collect()
}

/// Batch loss: mean cross-entropy plus the regression loss over targets in
/// model units, from logits and length outputs.
fn batch_loss_value(logits: &[[f32; 2]], lengths: &[f32], labels: &[(f32, GaitClass)], loss: RegressionLoss) -> Result<f32, TrainError> {
    let mut ce = 0.0f64;
    for (l, &(_, c)) in logits.iter().zip(labels) {
        let (v, _) = ops::softmax_xent(&crate::tensor::Tensor::from_vec(l.to_vec()), c.index()).map_err(ModelError::from)?;
        ce += v as f64;
    }
    let targets: Vec<f32> = labels.iter().map(|&(cm, _)| length_to_target(cm)).collect();
    Ok((ce / logits.len() as f64) as f32 + loss.value(lengths, &targets)?)
}

/// Forward pass over segments returning raw logits and length outputs.
fn forward_all(net: &ImuNet, segments: &[StrideSegment]) -> Result<(Vec<[f32; 2]>, Vec<f32>), TrainError> {
    let mut logits = Vec::with_capacity(segments.len());
    let mut lengths = Vec::with_capacity(segments.len());
    for s in segments {
        let mut g = Graph::new(&net.params);
        let x = g.input(s.tensor.clone());
        let (lo, le) = net.forward_downstream(&mut g, x)?;
        let v = g.value(lo).data();
        logits.push([v[0], v[1]]);
        lengths.push(g.value(le).item());
    }
    Ok((logits, lengths))
}

/// Graph node for the downstream training loss of one batch: mean
/// cross-entropy plus the regression loss on lengths in model units.
pub fn batch_loss(net: &ImuNet, g: &mut Graph<'_>, batch: &[&StrideSegment], loss: RegressionLoss) -> Result<NodeId, TrainError> {
    let mut ces = Vec::with_capacity(batch.len());
    let mut outs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for (i, seg) in batch.iter().enumerate() {
        let label = seg.label.ok_or(TrainError::Unlabeled(i))?;
        let x = g.input(seg.tensor.clone());
        let (logits, length) = net.forward_downstream(g, x)?;
        ces.push(g.softmax_xent(logits, label.class.index())?);
        outs.push(length);
        targets.push(length_to_target(label.length_cm));
    }
    let ce = g.mean(&ces)?;
    let stacked = g.stack(&outs)?;
    let mut loss_err = None;
    let reg = g.custom_scalar(stacked, loss.as_str(), |p| match loss.value_and_grad(p, &targets) {
        Ok(r) => r,
        Err(e) => {
            loss_err = Some(e);
            (0.0, vec![0.0; p.len()])
        }
    })?;
    if let Some(e) = loss_err {
        return Err(e.into());
    }
    Ok(g.add(ce, reg)?)
}

/// Downstream loss of `net` on a labeled set, evaluated as one batch.
pub fn downstream_loss(net: &ImuNet, segments: &[StrideSegment], loss: RegressionLoss) -> Result<f32, TrainError> {
    let labels = labels_of(segments)?;
    let (logits, lengths) = forward_all(net, segments)?;
    batch_loss_value(&logits, &lengths, &labels, loss)
}

/// Trains the multi-task head (and encoder) with the one-cycle schedule and
/// leaves `net` holding the parameters of the epoch with the lowest
/// validation loss. When the validation split comes out empty, the epoch
/// training loss is used for model selection instead.
pub fn train_downstream(
    net: &mut ImuNet,
    labeled: &[StrideSegment],
    cfg: &DownstreamConfig,
    seed: u64,
) -> Result<DownstreamOutcome, TrainError> {
    if labeled.is_empty() {
        return Err(TrainError::NoData);
    }
    if cfg.batch == 0 || !(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0) {
        return Err(TrainError::Config("batch must be at least 1 and val_fraction in [0, 1)".into()));
    }
    let labels = labels_of(labeled)?;
    let classes: Vec<GaitClass> = labels.iter().map(|l| l.1).collect();
    let (train_idx, val_idx) = stratified_split(&classes, cfg.val_fraction, derive_seed(seed, tag("val-split")));
    for class in [GaitClass::Walk, GaitClass::Run] {
        if !train_idx.iter().any(|&i| classes[i] == class) {
            return Err(TrainError::EmptyClass(class));
        }
    }
    let train_src: Vec<StrideSegment> = train_idx.iter().map(|&i| labeled[i].clone()).collect();
    let train = augment_labeled(&train_src, cfg.noise_copies, derive_seed(seed, tag("label-noise")));
    let val: Vec<StrideSegment> = val_idx.iter().map(|&i| labeled[i].clone()).collect();

    net.params.reset_optimizer();
    let schedule = LrSchedule::OneCycle { max_lr: cfg.max_lr };
    let per_epoch = train.len().div_ceil(cfg.batch);
    let total = cfg.epochs * per_epoch;
    let shuffle_seed = derive_seed(seed, tag("downstream-shuffle"));
    let mut curve = LossCurve::default();
    let mut best: Option<(usize, f32, f64, ParamStore)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0f64;
        let mut lr = 0.0;
        for (b, idx) in batches(train.len(), cfg.batch, shuffle_seed, epoch).iter().enumerate() {
            lr = schedule.lr(step, total);
            let wrap = non_finite("downstream", epoch, b, lr);
            let grads = {
                let mut g = Graph::new(&net.params);
                let batch: Vec<&StrideSegment> = idx.iter().map(|&i| &train[i]).collect();
                let total_loss = batch_loss(net, &mut g, &batch, cfg.loss).map_err(|e| retag(e, &wrap))?;
                let value = g.value(total_loss).item();
                if !value.is_finite() {
                    return Err(wrap(format!("loss {value}")));
                }
                sum += value as f64;
                g.backward(total_loss).map_err(|e| engine_err(e, &wrap))?
            };
            net.params.adam_step(&grads, lr).map_err(|e| engine_err(e, &wrap))?;
            step += 1;
        }
        let train_loss = (sum / per_epoch as f64) as f32;
        let (val_loss, val_acc) = if val.is_empty() {
            (None, f64::NAN)
        } else {
            let (logits, lengths) = forward_all(net, &val)?;
            let vl: Vec<(f32, GaitClass)> = val_idx.iter().map(|&i| labels[i]).collect();
            let v = batch_loss_value(&logits, &lengths, &vl, cfg.loss)?;
            if !v.is_finite() {
                return Err(non_finite("validation", epoch, 0, lr)(format!("loss {v}")));
            }
            let correct = logits.iter().zip(&vl).filter(|(l, &(_, c))| argmax_class(l) == c).count();
            (Some(v), correct as f64 / vl.len() as f64)
        };
        curve.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|b| score < b.1) {
            best = Some((epoch, score, val_acc, net.params.clone()));
        }
    }
    let (best_epoch, best_val_loss, best_val_accuracy) = match best {
        Some((e, l, a, params)) => {
            net.params = params;
            (e, l, a)
        }
        None => (0, f32::NAN, f64::NAN),
    };
    Ok(DownstreamOutcome {
        curve,
        best_epoch,
        best_val_loss,
        best_val_accuracy,
        train_size: train.len(),
        val_size: val.len(),
    })
}

fn argmax_class(logits: &[f32; 2]) -> GaitClass {
    if logits[1] > logits[0] {
        GaitClass::Run
    } else {
        GaitClass::Walk
    }
}

pub fn predict_all(net: &ImuNet, segments: &[StrideSegment]) -> Result<Vec<Prediction>, TrainError> {
    segments.iter().map(|s| net.predict(s).map_err(TrainError::from)).collect()
}

/// Metrics of `net` on a labeled set.
pub fn evaluate(net: &ImuNet, segments: &[StrideSegment]) -> Result<Metrics, TrainError> {
    let labels = labels_of(segments)?;
    let preds = predict_all(net, segments)?;
    let pred_cm: Vec<f64> = preds.iter().map(|p| target_to_length(p.length_target) as f64).collect();
    let truth_cm: Vec<f64> = labels.iter().map(|l| l.0 as f64).collect();
    let pred_class: Vec<GaitClass> = preds.iter().map(|p| p.class).collect();
    let true_class: Vec<GaitClass> = labels.iter().map(|l| l.1).collect();
    Ok(metrics(&pred_cm, &truth_cm, &pred_class, &true_class)?)
}
