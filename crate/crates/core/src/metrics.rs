//! Confusion-matrix tallies and the four summary scores, with `sedan`
//! (class 0) as the positive class.

use crate::error::{Error, Result};

pub const POSITIVE: usize = 0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    /// Tallies `(label, prediction)` pairs in order.
    pub fn tally(labels: &[usize], predictions: &[usize]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::invalid(
                "confusion",
                format!(
                    "{} labels but {} predictions",
                    labels.len(),
                    predictions.len()
                ),
            ));
        }
        let mut cm = ConfusionMatrix::default();
        for (&l, &p) in labels.iter().zip(predictions) {
            cm.record(l, p);
        }
        Ok(cm)
    }

    pub fn record(&mut self, label: usize, prediction: usize) {
        match (label == POSITIVE, prediction == POSITIVE) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn metrics(&self) -> Result<Metrics> {
        if self.total() == 0 {
            return Err(Error::invalid("metrics", "confusion matrix is empty"));
        }
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                f64::NAN
            } else {
                num as f64 / den as f64
            }
        };
        let accuracy = ratio(self.tp + self.tn, self.total());
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision.is_nan() || recall.is_nan() || precision + recall == 0.0 {
            f64::NAN
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(Metrics {
            accuracy,
            precision,
            recall,
            f1,
        })
    }
}

/// Scores in `[0, 1]`; `NaN` marks an undefined ratio (zero denominator).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Names of the scores that are undefined.
    pub fn undefined(&self) -> Vec<&'static str> {
        [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ]
        .into_iter()
        .filter(|(_, v)| v.is_nan())
        .map(|(n, _)| n)
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    #[test]
    fn tally_examples() {
        let labels = [0, 0, 0, 1, 1];
        assert_eq!(
            ConfusionMatrix::tally(&labels, &labels).unwrap(),
            cm(3, 2, 0, 0)
        );
        let inverted: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        assert_eq!(
            ConfusionMatrix::tally(&labels, &inverted).unwrap(),
            cm(0, 0, 2, 3)
        );
        // hand tally: pairs (0,0) (0,1) (1,0) (1,1) (0,0) (1,1) (1,0) (0,1) (1,1) (0,0)
        let l = [0, 0, 1, 1, 0, 1, 1, 0, 1, 0];
        let p = [0, 1, 0, 1, 0, 1, 0, 1, 1, 0];
        assert_eq!(ConfusionMatrix::tally(&l, &p).unwrap(), cm(3, 3, 2, 2));
        assert!(ConfusionMatrix::tally(&l, &p[..3]).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = cm(1, 1, 1, 1).metrics().unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (0.5, 0.5, 0.5, 0.5)
        );
        let m = cm(4, 2, 0, 0).metrics().unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        let m = cm(3, 1, 1, 1).metrics().unwrap();
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn undefined_ratios_are_nan() {
        let m = cm(0, 5, 0, 0).metrics().unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.precision.is_nan() && m.recall.is_nan() && m.f1.is_nan());
        assert_eq!(m.undefined(), vec!["precision", "recall", "f1"]);
        let m = cm(0, 1, 2, 3).metrics().unwrap();
        assert_eq!((m.precision, m.recall), (0.0, 0.0));
        assert!(m.f1.is_nan());
        assert!(cm(0, 0, 0, 0).metrics().is_err());
    }

    proptest! {
        #[test]
        fn f1_between_precision_and_recall(tp in 1u64..50, tn in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let m = cm(tp, tn, fp, fn_).metrics().unwrap();
            prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-15);
            prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
        }
    }
}
