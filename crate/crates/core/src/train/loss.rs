//! Regression losses over a batch of predicted and true lengths, with
//! analytic gradients so they can be attached to a graph as custom nodes.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("ground truth must be positive, got {value} at index {index}")]
    NonPositiveTruth { index: usize, value: f32 },
    #[error("{pred} predictions for {truth} targets")]
    Length { pred: usize, truth: usize },
    #[error("empty batch")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegressionLoss {
    /// Squared errors weighted by `exp(|p - g| / g)`.
    PewRmse,
    Rmse,
}

impl RegressionLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            RegressionLoss::PewRmse => "pew_rmse",
            RegressionLoss::Rmse => "rmse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pew_rmse" => Some(RegressionLoss::PewRmse),
            "rmse" => Some(RegressionLoss::Rmse),
            _ => None,
        }
    }

    pub fn value(self, pred: &[f32], truth: &[f32]) -> Result<f32, LossError> {
        self.value_and_grad(pred, truth).map(|(v, _)| v)
    }

    pub fn value_and_grad(self, pred: &[f32], truth: &[f32]) -> Result<(f32, Vec<f32>), LossError> {
        match self {
            RegressionLoss::PewRmse => pew_rmse_grad(pred, truth),
            RegressionLoss::Rmse => rmse_grad(pred, truth),
        }
    }
}

fn check(pred: &[f32], truth: &[f32]) -> Result<(), LossError> {
    if pred.len() != truth.len() {
        return Err(LossError::Length {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(())
}

pub fn pew_rmse(pred: &[f32], truth: &[f32]) -> Result<f32, LossError> {
    pew_rmse_grad(pred, truth).map(|(v, _)| v)
}

pub fn rmse(pred: &[f32], truth: &[f32]) -> Result<f32, LossError> {
    rmse_grad(pred, truth).map(|(v, _)| v)
}

/// `sqrt(mean(beta * (p - g)^2))`, `beta = exp(|p - g| / g)`.
///
/// The gradient is taken to be zero when the loss is exactly zero.
pub fn pew_rmse_grad(pred: &[f32], truth: &[f32]) -> Result<(f32, Vec<f32>), LossError> {
    check(pred, truth)?;
    if let Some((index, &value)) = truth.iter().enumerate().find(|(_, &g)| g.is_nan() || g <= 0.0) {
        return Err(LossError::NonPositiveTruth { index, value });
    }
    let m = pred.len() as f64;
    let terms: Vec<(f64, f64, f64)> = pred
        .iter()
        .zip(truth)
        .map(|(&p, &g)| {
            let (p, g) = (p as f64, g as f64);
            let d = p - g;
            (d, g, (d.abs() / g).exp())
        })
        .collect();
    let mean: f64 = terms.iter().map(|(d, _, b)| b * d * d).sum::<f64>() / m;
    let loss = mean.sqrt();
    if loss == 0.0 {
        return Ok((0.0, vec![0.0; pred.len()]));
    }
    let grad = terms
        .iter()
        .map(|&(d, g, b)| (b * (2.0 * d + d * d.abs() / g) / (2.0 * m * loss)) as f32)
        .collect();
    Ok((loss as f32, grad))
}

pub fn rmse_grad(pred: &[f32], truth: &[f32]) -> Result<(f32, Vec<f32>), LossError> {
    check(pred, truth)?;
    let m = pred.len() as f64;
    let diffs: Vec<f64> = pred.iter().zip(truth).map(|(&p, &g)| p as f64 - g as f64).collect();
    let loss = (diffs.iter().map(|d| d * d).sum::<f64>() / m).sqrt();
    if loss == 0.0 {
        return Ok((0.0, vec![0.0; pred.len()]));
    }
    Ok((loss as f32, diffs.iter().map(|d| (d / (m * loss)) as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_value() {
        let v = pew_rmse(&[110.0], &[100.0]).unwrap();
        assert!((v - 10.513).abs() < 1e-3, "{v}");
        assert_eq!(rmse(&[110.0], &[100.0]).unwrap(), 10.0);
    }

    #[test]
    fn exact_prediction_is_zero() {
        let g = [0.4, 0.7, 0.9];
        assert_eq!(pew_rmse_grad(&g, &g).unwrap(), (0.0, vec![0.0; 3]));
        assert_eq!(rmse(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_truth() {
        assert_eq!(pew_rmse(&[1.0], &[0.0]), Err(LossError::NonPositiveTruth { index: 0, value: 0.0 }));
        assert_eq!(pew_rmse(&[1.0, 2.0], &[1.0]), Err(LossError::Length { pred: 2, truth: 1 }));
        assert_eq!(rmse(&[], &[]), Err(LossError::Empty));
    }

    #[test]
    fn gradient_matches_central_difference() {
        let p = [0.31f32, 0.62, 0.95, 0.18];
        let g = [0.35f32, 0.50, 0.80, 0.30];
        for loss in [RegressionLoss::PewRmse, RegressionLoss::Rmse] {
            let (_, grad) = loss.value_and_grad(&p, &g).unwrap();
            for i in 0..p.len() {
                let f = |d: f64| {
                    let mut q: Vec<f64> = p.iter().map(|&v| v as f64).collect();
                    q[i] += d;
                    let m = q.len() as f64;
                    let s: f64 = q
                        .iter()
                        .zip(&g)
                        .map(|(&a, &b)| {
                            let b = b as f64;
                            let w = if loss == RegressionLoss::PewRmse {
                                ((a - b).abs() / b).exp()
                            } else {
                                1.0
                            };
                            w * (a - b) * (a - b)
                        })
                        .sum();
                    (s / m).sqrt()
                };
                let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
                assert!(
                    (grad[i] as f64 - fd).abs() <= 1e-3 * fd.abs().max(1e-3),
                    "{loss:?} {i}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }
}
