use super::{predict_all, TrainError};
use crate::data::{prepare_strides, RawRecording, SEGMENT_LEN, WORKING_RATE_HZ};
use crate::model::ImuNet;
use crate::segment::detect_strides;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub per_stride_cm: Vec<f32>,
    pub distance_m: f64,
    /// Detected strides too long for one stride tensor, left out of the sum.
    pub skipped: usize,
    pub truth_m: Option<f64>,
    /// `100 * |predicted - truth| / truth`, when the truth is known.
    pub error_pct: Option<f64>,
}

impl DistanceReport {
    pub fn from_lengths(per_stride_cm: Vec<f32>, truth_m: Option<f64>) -> Self {
        let distance_m = per_stride_cm.iter().map(|&l| l as f64).sum::<f64>() / 100.0;
        Self {
            error_pct: truth_m.map(|t| 100.0 * (distance_m - t).abs() / t),
            per_stride_cm,
            distance_m,
            skipped: 0,
            truth_m,
        }
    }

    pub fn strides(&self) -> usize {
        self.per_stride_cm.len()
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "strides={}\nskipped={}\ndistance_m={}\n",
            self.strides(),
            self.skipped,
            self.distance_m
        );
        if let (Some(t), Some(e)) = (self.truth_m, self.error_pct) {
            s += &format!("truth_m={t}\nerror_pct={e}\n");
        }
        s
    }
}

/// Segments the recording, predicts every stride and sums the lengths.
pub fn total_distance(rec: &RawRecording, net: &ImuNet, truth_m: Option<f64>) -> Result<DistanceReport, TrainError> {
    let detected = detect_strides(rec)?;
    if detected.is_empty() {
        return Err(TrainError::NoStrides);
    }
    let max_len = (SEGMENT_LEN as f64 * rec.sample_rate / WORKING_RATE_HZ) as usize;
    let spans: Vec<_> = detected.iter().filter(|b| b.len() <= max_len).map(|b| b.span()).collect();
    let segments = prepare_strides(rec, &spans)?;
    let preds = predict_all(net, &segments)?;
    let mut report = DistanceReport::from_lengths(preds.iter().map(|p| p.length_cm()).collect(), truth_m);
    report.skipped = detected.len() - spans.len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summation() {
        let r = DistanceReport::from_lengths(vec![200.0; 10], Some(20.0));
        assert!((r.distance_m - 20.0).abs() < 1e-12);
        assert_eq!(r.error_pct, Some(0.0));
        assert_eq!(r.strides(), 10);
    }
}
