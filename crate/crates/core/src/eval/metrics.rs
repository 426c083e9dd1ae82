//! Binary classification metrics with bots as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BOT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// Set when `tp + fp = 0`; precision is then reported as 0.
    pub precision_undefined: bool,
    /// Set when `tp + fn = 0`; recall is then reported as 0.
    pub recall_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let (f1, _) = ratio(2 * tp, 2 * tp + fp + fn_);
        let (accuracy, _) = ratio(tp + tn, tp + fp + fn_ + tn);
        Self {
            accuracy,
            f1,
            precision,
            recall,
            tp,
            fp,
            fn_,
            tn,
            precision_undefined,
            recall_undefined,
        }
    }
}

/// Scores hard predictions against binary labels.
pub fn metrics(predictions: &[i8], labels: &[i8]) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("metrics", labels.len(), predictions.len()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (i, (&p, &y)) in predictions.iter().zip(labels).enumerate() {
        if !(0..=1).contains(&p) || !(0..=1).contains(&y) {
            return Err(Error::InvalidArgument(format!(
                "entry {i}: prediction {p} and label {y} must both be 0 or 1"
            )));
        }
        match (p == BOT, y == BOT) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

/// Thresholds probabilities at 0.5.
pub fn decide(probabilities: &[f64]) -> Vec<i8> {
    probabilities.iter().map(|&p| i8::from(p >= 0.5)).collect()
}

/// Metrics of thresholded probabilities on the given node subset.
pub fn metrics_on(probabilities: &[f64], labels: &[i8], nodes: &[usize]) -> Result<MetricsReport> {
    let preds: Vec<i8> = nodes.iter().map(|&i| i8::from(probabilities[i] >= 0.5)).collect();
    let ys: Vec<i8> = nodes.iter().map(|&i| labels[i]).collect();
    metrics(&preds, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_classifier() {
        let y = [0, 1, 1, 0, 1];
        let m = metrics(&y, &y).unwrap();
        assert_eq!((m.accuracy, m.f1, m.precision, m.recall), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn confusion_count_case() {
        // TP=2, FP=1, FN=1, TN=1
        let pred = [1, 1, 1, 0, 0];
        let y = [1, 1, 0, 1, 0];
        let m = metrics(&pred, &y).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 1, 1));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 0.6).abs() < 1e-12);
    }

    #[test]
    fn all_negative_predictor_flags_precision() {
        let m = metrics(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((m.recall, m.precision, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined);
        assert!(!m.recall_undefined);
    }

    #[test]
    fn length_mismatch_and_bad_labels() {
        assert!(metrics(&[0, 1], &[0]).is_err());
        assert!(metrics(&[0], &[-1]).is_err());
    }

    #[test]
    fn report_is_recomputable_from_counts() {
        let m = metrics(&[1, 0, 1, 1, 0, 0, 1], &[1, 1, 0, 1, 0, 1, 1]).unwrap();
        assert_eq!(MetricsReport::from_counts(m.tp, m.fp, m.fn_, m.tn), m);
    }

    proptest::proptest! {
        #[test]
        fn metrics_agree_with_their_counts(
            pairs in proptest::collection::vec((0i8..=1, 0i8..=1), 1..60),
        ) {
            let (pred, y): (Vec<i8>, Vec<i8>) = pairs.into_iter().unzip();
            let m = metrics(&pred, &y).unwrap();
            proptest::prop_assert_eq!(m.tp + m.fp + m.fn_ + m.tn, y.len());
            proptest::prop_assert_eq!(MetricsReport::from_counts(m.tp, m.fp, m.fn_, m.tn), m);
            let correct = pred.iter().zip(&y).filter(|(p, t)| p == t).count();
            proptest::prop_assert!((m.accuracy - correct as f64 / y.len() as f64).abs() < 1e-12);
            if m.tp > 0 {
                let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                proptest::prop_assert!((m.f1 - f1).abs() < 1e-12);
            }
        }
    }
}
