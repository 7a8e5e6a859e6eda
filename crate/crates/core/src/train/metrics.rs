use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary classification summary at threshold 0.5 (label 1 = positive).
/// Rates whose denominator is empty are `None`, as is balanced accuracy
/// when only one class is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Result<Self> {
        let n = tp + tn + fp + fn_;
        if n == 0 {
            return Err(Error::invalid("evaluate", "empty split"));
        }
        let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let sensitivity = rate(tp, tp + fn_);
        let specificity = rate(tn, tn + fp);
        let balanced_accuracy = match (sensitivity, specificity) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        };
        Ok(Self {
            n,
            tp,
            tn,
            fp,
            fn_,
            accuracy: (tp + tn) as f64 / n as f64,
            sensitivity,
            specificity,
            balanced_accuracy,
            mean_reward: None,
        })
    }

    pub fn from_predictions(probs: &[f64], labels: &[u8]) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::invalid("evaluate", "one prediction per label required"));
        }
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= 0.5, y == 1) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, tn, fp, fn_)
    }

    /// Model-selection score: balanced accuracy, else raw accuracy.
    pub fn score(&self) -> f64 {
        self.balanced_accuracy.unwrap_or(self.accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_confusion() {
        let m = MetricsReport::from_counts(3, 2, 2, 1).unwrap();
        assert_eq!(m.sensitivity, Some(0.75));
        assert_eq!(m.specificity, Some(0.5));
        assert_eq!(m.balanced_accuracy, Some(0.625));
        assert_eq!(m.n, 8);
    }

    #[test]
    fn constant_half_predictor_is_chance_on_balanced_split() {
        let m = MetricsReport::from_predictions(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(m.balanced_accuracy, Some(0.5));
    }

    #[test]
    fn single_class_has_undefined_balanced_accuracy() {
        let m = MetricsReport::from_predictions(&[0.9, 0.2], &[1, 1]).unwrap();
        assert_eq!(m.balanced_accuracy, None);
        assert_eq!(m.specificity, None);
        let json = serde_json::to_value(&m).unwrap();
        assert!(json["balanced_accuracy"].is_null());
    }

    #[test]
    fn empty_split_rejected() {
        assert!(MetricsReport::from_predictions(&[], &[]).is_err());
    }
}
