//! Confusion matrix and per-class recall.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numfmt::percent;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(
    true_labels: &[usize],
    predicted_labels: &[usize],
    class_labels: &[String],
) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::LengthMismatch {
            expected: true_labels.len(),
            found: predicted_labels.len(),
        });
    }
    let k = class_labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in true_labels.iter().zip(predicted_labels) {
        for label in [t, p] {
            if label >= k {
                return Err(Error::LabelRange { label, classes: k });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        class_labels: class_labels.to_vec(),
        counts,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub support: u64,
    pub recall: f64,
    /// `None` when nothing was predicted as this class.
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

/// Per-class metrics; classes with zero support are left out.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
    pub total: u64,
    pub accuracy: Option<f64>,
}

impl EvalReport {
    pub fn recall(&self, label: &str) -> Option<f64> {
        self.classes
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.recall)
    }

    pub fn min_recall(&self) -> Option<f64> {
        self.classes.iter().map(|c| c.recall).reduce(f64::min)
    }
}

pub fn recall_report(cm: &ConfusionMatrix) -> EvalReport {
    let classes = cm
        .class_labels
        .iter()
        .enumerate()
        .filter_map(|(c, label)| {
            let support = cm.row_sum(c);
            if support == 0 {
                return None;
            }
            let tp = cm.counts[c][c] as f64;
            let recall = tp / support as f64;
            let predicted = cm.col_sum(c);
            let precision = (predicted > 0).then(|| tp / predicted as f64);
            let f1 = precision.map(|p| {
                if p + recall == 0.0 {
                    0.0
                } else {
                    2.0 * p * recall / (p + recall)
                }
            });
            Some(ClassMetrics {
                label: label.clone(),
                support,
                recall,
                precision,
                f1,
            })
        })
        .collect();
    let total = cm.total();
    EvalReport {
        classes,
        total,
        accuracy: (total > 0).then(|| cm.trace() as f64 / total as f64),
    }
}

pub fn report_to_text(r: &EvalReport) -> String {
    let width = r
        .classes
        .iter()
        .map(|c| c.label.len())
        .chain([5])
        .max()
        .unwrap_or(5);
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), percent);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>10}  {:>8}  {:>9}  {:>8}",
        "class", "support", "recall", "precision", "f1"
    )
    .unwrap();
    for c in &r.classes {
        writeln!(
            out,
            "{:<width$}  {:>10}  {:>8}  {:>9}  {:>8}",
            c.label,
            c.support,
            percent(c.recall),
            opt(c.precision),
            opt(c.f1)
        )
        .unwrap();
    }
    if let Some(acc) = r.accuracy {
        writeln!(out, "accuracy {} over {} records", percent(acc), r.total).unwrap();
    }
    out
}

/// `class,support,recall` with the recall as a fraction.
pub fn report_to_csv(r: &EvalReport) -> String {
    let mut out = String::from("class,support,recall\n");
    for c in &r.classes {
        writeln!(out, "{},{},{}", c.label, c.support, c.recall).unwrap();
    }
    out
}

pub fn confusion_to_text(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\predicted");
    for l in &cm.class_labels {
        write!(out, ",{l}").unwrap();
    }
    out.push('\n');
    for (l, row) in cm.class_labels.iter().zip(&cm.counts) {
        out.push_str(l);
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(k: usize) -> Vec<String> {
        ["normal", "injection", "impersonation", "flooding"][..k]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn empty_inputs() {
        let cm = confusion(&[], &[], &labels(4)).unwrap();
        assert_eq!(cm.total(), 0);
        let r = recall_report(&cm);
        assert!(r.classes.is_empty());
        assert_eq!(r.accuracy, None);
        assert_eq!(report_to_text(&r).lines().count(), 1);
        assert_eq!(report_to_csv(&r), "class,support,recall\n");
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let t = [0, 1, 2, 3, 3, 2];
        let cm = confusion(&t, &t, &labels(4)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(cm.counts()[i][j], 0);
                }
            }
        }
        let r = recall_report(&cm);
        assert!(r.classes.iter().all(|c| c.recall == 1.0));
        assert_eq!(r.accuracy, Some(1.0));
    }

    #[test]
    fn hand_tally() {
        let t = [0, 0, 1, 1, 1, 2, 2, 0, 1, 2];
        let p = [0, 1, 1, 1, 2, 2, 0, 0, 1, 2];
        // tallied by hand
        let expected = vec![vec![2, 1, 0], vec![0, 3, 1], vec![1, 0, 2]];
        let cm = confusion(&t, &p, &labels(3)).unwrap();
        assert_eq!(cm.counts(), expected.as_slice());
        let r = recall_report(&cm);
        assert!((r.recall("injection").unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(r.accuracy, Some(0.7));
    }

    #[test]
    fn ninety_nine_of_a_hundred() {
        let mut t = vec![0; 100];
        let mut p = vec![0; 100];
        p[0] = 1;
        t.push(1);
        p.push(1);
        let r = recall_report(&confusion(&t, &p, &labels(2)).unwrap());
        assert!((r.recall("normal").unwrap() - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_support_classes_are_absent() {
        let r = recall_report(&confusion(&[0, 0], &[0, 1], &labels(3)).unwrap());
        assert_eq!(r.classes.len(), 1);
        assert_eq!(r.recall("injection"), None);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            confusion(&[0], &[], &labels(2)),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[0], &[2], &labels(2)),
            Err(Error::LabelRange { label: 2, .. })
        ));
    }

    #[test]
    fn text_uses_two_decimal_percentages() {
        let r = EvalReport {
            classes: vec![
                ClassMetrics {
                    label: "Injection".into(),
                    support: 20079,
                    recall: 0.9984,
                    precision: None,
                    f1: None,
                },
                ClassMetrics {
                    label: "Impersonation".into(),
                    support: 8097,
                    recall: 1.0,
                    precision: Some(1.0),
                    f1: Some(1.0),
                },
            ],
            total: 28176,
            accuracy: Some(0.5),
        };
        let text = report_to_text(&r);
        assert!(text.contains("99.84%"));
        assert!(text.contains("100.00%"));
        assert!(text.lines().nth(1).unwrap().starts_with("Injection"));
    }
}
