//! Classification metrics, confidence intervals and two-sample tests.

mod students_t;
mod ttest;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub use students_t::{ln_beta, regularized_incomplete_beta, t_cdf, t_quantile};
pub use ttest::{paired_test, pairwise_table, welch_test, PairwiseRow, SampleSummary, TTestReport};

/// Binary confusion counts with abnormal (label 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        bail!(Contract, "{} labels but {} predictions", labels.len(), predictions.len());
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fp += 1,
            (1, 0) => cm.fn_ += 1,
            _ => bail!(Contract, "labels and predictions must be 0 or 1, got ({y}, {p})"),
        }
    }
    Ok(cm)
}

/// Accuracy, precision, recall and F1 as fractions.
///
/// A ratio whose denominator is zero is reported as 0 and `degenerate` is set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default)]
    pub degenerate: bool,
}

/// Metric names in report column order.
pub const METRIC_KEYS: [&str; 4] = ["precision", "recall", "f1", "accuracy"];

impl MetricSet {
    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "accuracy" => Some(self.accuracy),
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            _ => None,
        }
    }

    /// Element-wise mean, e.g. over the folds of one cross-validation run.
    pub fn mean_of(sets: &[MetricSet]) -> Option<MetricSet> {
        if sets.is_empty() {
            return None;
        }
        let n = sets.len() as f64;
        let avg = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
        Some(MetricSet {
            accuracy: avg(|m| m.accuracy),
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
            degenerate: sets.iter().any(|m| m.degenerate),
        })
    }
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricSet {
    let mut degenerate = false;
    let accuracy = ratio(cm.tp + cm.tn, cm.total(), &mut degenerate);
    let precision = ratio(cm.tp, cm.tp + cm.fp, &mut degenerate);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, &mut degenerate);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    MetricSet { accuracy, precision, recall, f1, degenerate }
}

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryCI {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const Z_95: f64 = 1.96;

pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        bail!(InsufficientData, "need at least 2 values, got {}", values.len());
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, libm::sqrt(var)))
}

/// `mean ± 1.96 · s / √n` with `s` the sample standard deviation.
pub fn mean_ci(values: &[f64]) -> Result<SummaryCI> {
    let (mean, std) = mean_std(values)?;
    Ok(ci_from_summary(mean, std, values.len()))
}

pub fn ci_from_summary(mean: f64, std: f64, n: usize) -> SummaryCI {
    let half = Z_95 * std / libm::sqrt(n as f64);
    SummaryCI { mean, std, n, ci_low: mean - half, ci_high: mean + half }
}

/// Collect one metric across a list of metric sets.
pub fn column(sets: &[MetricSet], key: &str) -> Vec<f64> {
    sets.iter().filter_map(|m| m.get(key)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn confusion_examples() {
        let mut labels = vec![1u8; 675];
        labels.extend(vec![0u8; 242]);
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 675, tn: 242, fp: 0, fn_: 0 });
        let all_abnormal = vec![1u8; labels.len()];
        let cm = confusion(&labels, &all_abnormal).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 675, tn: 0, fp: 242, fn_: 0 });
        assert!(confusion(&[1, 0], &[1]).is_err());
        assert!(confusion(&[2], &[1]).is_err());
    }

    #[test]
    fn metrics_hand_example() {
        let m = metrics(&ConfusionMatrix { tp: 63, tn: 25, fp: 7, fn_: 5 });
        assert!((m.precision - 0.9).abs() < 1e-15);
        assert!((m.recall - 63.0 / 68.0).abs() < 1e-15);
        assert!((m.recall - 0.9265).abs() < 1e-4);
        assert!((m.f1 - 0.9130).abs() < 1e-4);
        assert!((m.accuracy - 0.88).abs() < 1e-15);
        assert!(!m.degenerate);
    }

    #[test]
    fn metrics_degenerate_conventions() {
        let perfect = metrics(&ConfusionMatrix { tp: 4, tn: 3, fp: 0, fn_: 0 });
        assert_eq!((perfect.accuracy, perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0, 1.0));
        let never_positive = metrics(&ConfusionMatrix { tp: 0, tn: 5, fp: 0, fn_: 3 });
        assert_eq!(never_positive.precision, 0.0);
        assert_eq!(never_positive.f1, 0.0);
        assert!(never_positive.degenerate);
        let no_positives = metrics(&ConfusionMatrix { tp: 0, tn: 5, fp: 2, fn_: 0 });
        assert_eq!(no_positives.recall, 0.0);
        assert!(no_positives.degenerate);
    }

    #[test]
    fn mean_ci_examples() {
        let ci = mean_ci(&[3.5, 3.5, 3.5]).unwrap();
        assert_eq!((ci.ci_low, ci.ci_high), (3.5, 3.5));
        let ci = mean_ci(&[1.0, 2.0, 3.0]).unwrap();
        assert!((ci.mean - 2.0).abs() < 1e-15 && (ci.std - 1.0).abs() < 1e-15);
        assert!((ci.ci_high - (2.0 + 1.96 / libm::sqrt(3.0))).abs() < 1e-12);
        let ci = ci_from_summary(95.15, 0.57, 10);
        assert!((ci.ci_high - ci.mean - 0.353_300).abs() < 1e-4);
        assert!((ci.ci_low - 94.797).abs() < 5e-4 && (ci.ci_high - 95.503).abs() < 5e-4);
        assert!(mean_ci(&[1.0]).is_err());
    }
}
