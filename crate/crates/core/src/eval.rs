//! Classification metrics.

use serde::{Deserialize, Serialize};

use crate::calibration::DIV_FLOOR;
use crate::error::{Error, Result};
use crate::numerics::ClassDistribution;

/// `cells[i][j]` counts examples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            cells: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_cells(cells: Vec<Vec<u64>>) -> Result<Self> {
        let c = cells.len();
        if c == 0 || cells.iter().any(|row| row.len() != c) {
            return Err(Error::param("cells", "confusion matrix must be square"));
        }
        Ok(Self { cells })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InputShape {
                expected: truth.len(),
                got: predicted.len(),
            });
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.num_classes();
        if truth >= c || predicted >= c {
            return Err(Error::param(
                "class",
                format!("({truth}, {predicted}) out of range"),
            ));
        }
        self.cells[truth][predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Vec<u64>] {
        &self.cells
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    fn support(&self, class: usize) -> u64 {
        self.cells[class].iter().sum()
    }

    fn predicted(&self, class: usize) -> u64 {
        self.cells.iter().map(|row| row[class]).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric(
                "accuracy of an empty confusion matrix",
            ));
        }
        let trace: u64 = (0..self.num_classes()).map(|i| self.cells[i][i]).sum();
        Ok(trace as f64 / total as f64)
    }

    /// Support-weighted mean of per-class F1. Classes with zero precision and
    /// recall contribute 0.
    pub fn weighted_f1(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric(
                "weighted F1 of an empty confusion matrix",
            ));
        }
        let mut acc = 0.0;
        for c in 0..self.num_classes() {
            let support = self.support(c);
            if support == 0 {
                continue;
            }
            let tp = self.cells[c][c] as f64;
            let predicted = self.predicted(c);
            let precision = if predicted == 0 {
                0.0
            } else {
                tp / predicted as f64
            };
            let recall = tp / support as f64;
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            acc += support as f64 / total as f64 * f1;
        }
        Ok(acc)
    }

    /// Recall per class; `None` for classes without support.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.num_classes())
            .map(|c| {
                let support = self.support(c);
                (support > 0).then(|| self.cells[c][c] as f64 / support as f64)
            })
            .collect()
    }
}

/// `Σ p_i ln(p_i / max(q_i, DIV_FLOOR))`, skipping `p_i = 0`.
pub fn kl_divergence(p: &ClassDistribution, q: &ClassDistribution) -> f64 {
    p.probs()
        .iter()
        .zip(q.probs())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(DIV_FLOOR)).ln())
        .sum()
}

/// One evaluation of a model on a labeled dataset. Field order is the
/// serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub examples: u64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion_matrix: Vec<Vec<u64>>,
    /// KL(label distribution ‖ mean predicted distribution).
    pub kl_alignment: f64,
}

/// Metrics from true labels and predicted distributions.
pub fn evaluate_predictions(truth: &[usize], preds: &[ClassDistribution]) -> Result<MetricsRecord> {
    let classes = preds
        .first()
        .map(|p| p.len())
        .ok_or(Error::UndefinedMetric("no examples to evaluate"))?;
    let argmax: Vec<usize> = preds.iter().map(|p| p.argmax()).collect();
    let cm = ConfusionMatrix::from_predictions(truth, &argmax, classes)?;
    let mut label_freq = vec![0.0; classes];
    for &t in truth {
        label_freq[t] += 1.0;
    }
    let label_dist = ClassDistribution::normalize(label_freq).expect("non-empty truth");
    let mean_pred = ClassDistribution::mean(preds).expect("non-empty predictions");
    Ok(MetricsRecord {
        examples: cm.total(),
        accuracy: cm.accuracy()?,
        weighted_f1: cm.weighted_f1()?,
        per_class_accuracy: cm.per_class_accuracy(),
        confusion_matrix: cm.cells.clone(),
        kl_alignment: kl_divergence(&label_dist, &mean_pred),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(cells: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_cells(cells.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(cm(&[&[5, 0], &[0, 7]]).accuracy().unwrap(), 1.0);
        assert_eq!(cm(&[&[0, 5], &[7, 0]]).accuracy().unwrap(), 0.0);
        assert!((cm(&[&[40, 10], &[5, 45]]).accuracy().unwrap() - 0.85).abs() < 1e-15);
        assert!(ConfusionMatrix::new(3).accuracy().is_err());
    }

    #[test]
    fn weighted_f1_examples() {
        assert_eq!(cm(&[&[5, 0], &[0, 7]]).weighted_f1().unwrap(), 1.0);
        let m = cm(&[&[40, 10], &[5, 45]]);
        let f0 = 2.0 * (40.0 / 45.0) * 0.8 / (40.0 / 45.0 + 0.8);
        let f1 = 2.0 * (45.0 / 55.0) * 0.9 / (45.0 / 55.0 + 0.9);
        let w = m.weighted_f1().unwrap();
        assert!((w - (0.5 * f0 + 0.5 * f1)).abs() < 1e-15);
        assert!((f0 - 0.8421).abs() < 1e-4 && (f1 - 0.8571).abs() < 1e-4);
        assert!((w - 0.8496).abs() < 1e-4);
        // a class that is never true nor predicted does not contribute
        let with_empty = cm(&[&[40, 10, 0], &[5, 45, 0], &[0, 0, 0]]);
        assert!((with_empty.weighted_f1().unwrap() - w).abs() < 1e-15);
    }

    #[test]
    fn per_class_examples() {
        assert_eq!(
            cm(&[&[3, 0], &[0, 2]]).per_class_accuracy(),
            vec![Some(1.0), Some(1.0)]
        );
        assert_eq!(
            cm(&[&[40, 10], &[5, 45]]).per_class_accuracy(),
            vec![Some(0.8), Some(0.9)]
        );
        assert_eq!(cm(&[&[3, 1], &[0, 0]]).per_class_accuracy()[1], None);
    }

    #[test]
    fn kl_examples() {
        let p = ClassDistribution::new(vec![0.2, 0.8]).unwrap();
        assert_eq!(kl_divergence(&p, &p), 0.0);
        let kl = kl_divergence(
            &ClassDistribution::one_hot(0, 2),
            &ClassDistribution::uniform(2),
        );
        assert!((kl - 2f64.ln()).abs() < 1e-15);
        // zeros in q are floored
        let kl = kl_divergence(
            &ClassDistribution::uniform(2),
            &ClassDistribution::one_hot(0, 2),
        );
        assert!(kl.is_finite());
    }

    #[test]
    fn rejects_ragged_or_out_of_range() {
        assert!(ConfusionMatrix::from_cells(vec![vec![1, 2]]).is_err());
        assert!(ConfusionMatrix::from_predictions(&[0, 2], &[0, 1], 2).is_err());
        assert!(ConfusionMatrix::from_predictions(&[0], &[0, 1], 2).is_err());
    }

    fn dist(c: usize) -> impl Strategy<Value = ClassDistribution> {
        proptest::collection::vec(0.0f64..1.0, c)
            .prop_filter("mass", |w| w.iter().sum::<f64>() > 1e-6)
            .prop_map(|w| ClassDistribution::normalize(w).unwrap())
    }

    fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..4, n),
                proptest::collection::vec(0usize..4, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn kl_is_non_negative(p in dist(4), q in dist(4)) {
            prop_assert!(kl_divergence(&p, &q) >= -1e-12);
        }

        #[test]
        fn metrics_match_naive_recomputation((truth, pred) in labels()) {
            let m = ConfusionMatrix::from_predictions(&truth, &pred, 4).unwrap();
            let n = truth.len() as f64;
            let naive_acc = truth.iter().zip(&pred).filter(|(t, p)| t == p).count() as f64 / n;
            prop_assert!((m.accuracy().unwrap() - naive_acc).abs() < 1e-12);

            let mut naive_f1 = 0.0;
            for c in 0..4 {
                let tp = truth.iter().zip(&pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
                let fp = truth.iter().zip(&pred).filter(|(t, p)| **t != c && **p == c).count() as f64;
                let fn_ = truth.iter().zip(&pred).filter(|(t, p)| **t == c && **p != c).count() as f64;
                let support = tp + fn_;
                if support == 0.0 { continue; }
                // F1 = 2TP / (2TP + FP + FN)
                let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
                naive_f1 += support / n * f1;
                let recall = m.per_class_accuracy()[c].unwrap();
                prop_assert!((recall - tp / support).abs() < 1e-12);
            }
            prop_assert!((m.weighted_f1().unwrap() - naive_f1).abs() < 1e-12);

            // accuracy is the support-weighted mean of recall
            let weighted_recall: f64 = m.per_class_accuracy().iter().enumerate()
                .filter_map(|(c, r)| r.map(|r| r * truth.iter().filter(|t| **t == c).count() as f64 / n))
                .sum();
            prop_assert!((weighted_recall - naive_acc).abs() < 1e-12);
        }

        #[test]
        fn weighted_f1_is_permutation_invariant((truth, pred) in labels(), perm in Just([2usize, 0, 3, 1])) {
            let m = ConfusionMatrix::from_predictions(&truth, &pred, 4).unwrap();
            let t2: Vec<usize> = truth.iter().map(|t| perm[*t]).collect();
            let p2: Vec<usize> = pred.iter().map(|p| perm[*p]).collect();
            let m2 = ConfusionMatrix::from_predictions(&t2, &p2, 4).unwrap();
            prop_assert!((m.weighted_f1().unwrap() - m2.weighted_f1().unwrap()).abs() < 1e-12);
        }
    }
}
