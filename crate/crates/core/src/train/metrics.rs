//! Stride-level error metrics.

use thiserror::Error;

use crate::data::GaitClass;

/// Percentage-error histogram: 1% bins over `[0, 30)`, plus an overflow
/// count for larger errors.
pub const HIST_BINS: usize = 30;
pub const HIST_BIN_WIDTH: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("no strides to score")]
    Empty,
    #[error("ground truth must be positive, got {0}")]
    NonPositiveTruth(f64),
}

/// A value per true class and over all strides. Class entries are `None`
/// when the class has no strides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSplit {
    pub run: Option<f64>,
    pub walk: Option<f64>,
    pub avg: f64,
}

impl ClassSplit {
    pub fn get(&self, class: GaitClass) -> Option<f64> {
        match class {
            GaitClass::Run => self.run,
            GaitClass::Walk => self.walk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl Histogram {
    pub fn new() -> Self {
        Self {
            counts: vec![0; HIST_BINS],
            overflow: 0,
        }
    }

    pub fn add(&mut self, pe: f64) {
        let bin = (pe / HIST_BIN_WIDTH).floor();
        if bin >= 0.0 && (bin as usize) < self.counts.len() {
            self.counts[bin as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.overflow += other.overflow;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub n_run: usize,
    pub n_walk: usize,
    pub mae_cm: ClassSplit,
    /// Percent.
    pub pe: ClassSplit,
    /// Fraction correct.
    pub accuracy: ClassSplit,
    pub histogram: Histogram,
}

impl Metrics {
    pub fn len(&self) -> usize {
        self.n_run + self.n_walk
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `|PE_run - PE_walk|`, when both classes are present.
    pub fn class_gap(&self) -> Option<f64> {
        Some((self.pe.run? - self.pe.walk?).abs())
    }
}

fn split(values: &[f64], classes: &[GaitClass]) -> ClassSplit {
    let mean_of = |c: Option<GaitClass>| {
        let (s, n) = values
            .iter()
            .zip(classes)
            .filter(|(_, &k)| c.is_none_or(|c| c == k))
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    };
    ClassSplit {
        run: mean_of(Some(GaitClass::Run)),
        walk: mean_of(Some(GaitClass::Walk)),
        avg: mean_of(None).unwrap_or(f64::NAN),
    }
}

/// Scores predicted lengths and classes against the truth. Per-class
/// values are grouped by the true class.
pub fn metrics(pred_cm: &[f64], truth_cm: &[f64], pred_class: &[GaitClass], true_class: &[GaitClass]) -> Result<Metrics, MetricsError> {
    let n = truth_cm.len();
    if pred_cm.len() != n || pred_class.len() != n || true_class.len() != n {
        return Err(MetricsError::Length(format!(
            "{} predictions, {} truths, {} predicted classes, {} true classes",
            pred_cm.len(),
            n,
            pred_class.len(),
            true_class.len()
        )));
    }
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    if let Some(&g) = truth_cm.iter().find(|&&g| g.is_nan() || g <= 0.0) {
        return Err(MetricsError::NonPositiveTruth(g));
    }
    let abs: Vec<f64> = pred_cm.iter().zip(truth_cm).map(|(p, g)| (p - g).abs()).collect();
    let pe: Vec<f64> = abs.iter().zip(truth_cm).map(|(a, g)| 100.0 * a / g).collect();
    let correct: Vec<f64> = pred_class.iter().zip(true_class).map(|(p, t)| (p == t) as u8 as f64).collect();
    let mut histogram = Histogram::new();
    pe.iter().for_each(|&v| histogram.add(v));
    let n_run = true_class.iter().filter(|&&c| c == GaitClass::Run).count();
    Ok(Metrics {
        n_run,
        n_walk: n - n_run,
        mae_cm: split(&abs, true_class),
        pe: split(&pe, true_class),
        accuracy: split(&correct, true_class),
        histogram,
    })
}
