//! Macro-averaged classification metrics, reported in percents.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    /// Accuracy above the supplied random baseline, in percentage points.
    pub delta: f64,
}

/// Macro F1/precision/recall over the classes present in the labels or
/// predictions, plus accuracy and Δ over `random_baseline` (a percent).
pub fn metrics(predictions: &[usize], labels: &[usize], random_baseline: f64) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} predictions against {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Usage("cannot score zero predictions".into()));
    }

    let classes: BTreeSet<usize> = labels.iter().chain(predictions).copied().collect();
    let mut f1_sum = 0.0;
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for &class in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&pred, &label) in predictions.iter().zip(labels) {
            match (pred == class, label == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        p_sum += precision;
        r_sum += recall;
        f1_sum += f1;
    }
    let k = classes.len() as f64;
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = 100.0 * correct as f64 / labels.len() as f64;
    Ok(Metrics {
        accuracy,
        f1_macro: 100.0 * f1_sum / k,
        precision_macro: 100.0 * p_sum / k,
        recall_macro: 100.0 * r_sum / k,
        delta: accuracy - random_baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_100_with_delta_50() {
        let labels = vec![0, 1, 0, 1, 1, 0];
        let m = metrics(&labels, &labels, 50.0).unwrap();
        assert_eq!(m.f1_macro, 100.0);
        assert_eq!(m.accuracy, 100.0);
        assert_eq!(m.delta, 50.0);
    }

    #[test]
    fn delta_matches_accuracy_above_baseline() {
        // 812 of 1000 correct on a balanced binary task.
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for i in 0..1000 {
            let l = i % 2;
            labels.push(l);
            preds.push(if i < 812 { l } else { 1 - l });
        }
        let m = metrics(&preds, &labels, 50.0).unwrap();
        assert!((m.accuracy - 81.2).abs() < 1e-9);
        assert!((m.delta - 31.2).abs() < 1e-9);
    }

    #[test]
    fn all_one_class_predictor_on_balanced_binary_labels() {
        // Closed form: predicted class has P=0.5, R=1, F1=2/3; the silent
        // class has P=R=F1=0. Macro F1 = 1/3.
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let preds = vec![0usize; 100];
        let m = metrics(&preds, &labels, 50.0).unwrap();
        assert!((m.accuracy - 50.0).abs() < 1e-9);
        assert!((m.delta - 0.0).abs() < 1e-9);
        assert!((m.f1_macro - 100.0 / 3.0).abs() < 1e-9);
        assert!((m.precision_macro - 25.0).abs() < 1e-9);
        assert!((m.recall_macro - 50.0).abs() < 1e-9);
    }

    #[test]
    fn empty_input_is_a_usage_error() {
        assert!(matches!(metrics(&[], &[], 50.0), Err(Error::Usage(_))));
        assert!(matches!(metrics(&[0], &[], 50.0), Err(Error::Usage(_))));
    }
}
