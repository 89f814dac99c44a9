//! Effective-number class weights and the label-rebalanced supervised loss.
//!
//! A class with `n` labeled examples receives weight `(1 − β) / (1 − βⁿ)`.
//! `β = 0` disables re-weighting; as `β → 1` the weight tends to `1/n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cross_entropy, ClassDistribution};

/// Number of labeled examples per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(Vec<usize>);

impl ClassCounts {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.iter().all(|c| *c == 0) {
            return Err(Error::param("counts", "at least one class must be present"));
        }
        Ok(Self(counts))
    }

    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0; classes];
        for &y in labels {
            if y >= classes {
                return Err(Error::param("labels", format!("class {y} out of range")));
            }
            counts[y] += 1;
        }
        Self::new(counts)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn weight(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Rescaled so the weights sum to the number of classes.
    pub fn normalized(&self) -> Self {
        let sum: f64 = self.0.iter().sum();
        let c = self.0.len() as f64;
        Self(self.0.iter().map(|w| w * c / sum).collect())
    }
}

/// `(1 − β) / (1 − βⁿ)` for `n ≥ 1`, evaluated as
/// `(1 − β) / −expm1(n · log1p(−(1 − β)))` to stay accurate for `β` near 1.
fn effective_weight(beta: f64, n: usize) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    let one_minus = 1.0 - beta;
    let denom = -((n as f64) * (-one_minus).ln_1p()).exp_m1();
    one_minus / denom
}

/// Class weights from labeled counts. Classes without examples get weight 1
/// and a warning.
pub fn effective_number_weights(counts: &ClassCounts, beta: f64) -> Result<ClassWeights> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::param("beta", format!("{beta} outside [0, 1)")));
    }
    Ok(ClassWeights(
        counts
            .0
            .iter()
            .enumerate()
            .map(|(class, &n)| {
                if n == 0 {
                    log::warn!("class {class} has no labeled examples; using weight 1");
                    1.0
                } else {
                    effective_weight(beta, n)
                }
            })
            .collect(),
    ))
}

/// Batch mean of `w_{y_i} · H(onehot(y_i), pred_i)`.
pub fn balanced_supervised_loss(
    preds: &[ClassDistribution],
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::InputShape {
            expected: preds.len(),
            got: labels.len(),
        });
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, &y) in preds.iter().zip(labels) {
        if y >= weights.0.len() || p.len() != weights.0.len() {
            return Err(Error::param("labels", format!("class {y} out of range")));
        }
        let target = ClassDistribution::one_hot(y, p.len());
        total += weights.0[y] * cross_entropy(target.probs(), p.probs());
    }
    Ok(total / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(v: &[usize]) -> ClassCounts {
        ClassCounts::new(v.to_vec()).unwrap()
    }

    #[test]
    fn beta_zero_is_unweighted() {
        let w = effective_number_weights(&counts(&[1, 7, 1000]), 0.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn beta_9999_n100() {
        // closed form at 40 digits: 0.010049583329027618...
        let w = effective_number_weights(&counts(&[100]), 0.9999).unwrap();
        assert!((w.weight(0) - 0.010_049_583_329_027_618).abs() < 1e-15);
    }

    #[test]
    fn near_one_limit_is_inverse_frequency() {
        let w = effective_number_weights(&counts(&[4]), 1.0 - 1e-12).unwrap();
        assert!((w.weight(0) - 0.25).abs() / 0.25 < 1e-6);
    }

    #[test]
    fn beta_out_of_range() {
        assert!(effective_number_weights(&counts(&[3]), 1.0).is_err());
        assert!(effective_number_weights(&counts(&[3]), -0.1).is_err());
        assert!(effective_number_weights(&counts(&[3]), f64::NAN).is_err());
    }

    #[test]
    fn absent_class_gets_unit_weight() {
        let w = effective_number_weights(&counts(&[0, 5]), 0.9).unwrap();
        assert_eq!(w.weight(0), 1.0);
        assert!(w.weight(1) < 1.0);
    }

    #[test]
    fn all_zero_counts_rejected() {
        assert!(ClassCounts::new(vec![0, 0]).is_err());
    }

    #[test]
    fn normalized_sums_to_classes() {
        let w = effective_number_weights(&counts(&[40, 12, 4]), 0.9999)
            .unwrap()
            .normalized();
        assert!((w.as_slice().iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn loss_uniform_counts_beta_zero_is_plain_ce() {
        let preds = vec![
            ClassDistribution::new(vec![0.7, 0.3]).unwrap(),
            ClassDistribution::new(vec![0.1, 0.9]).unwrap(),
        ];
        let w = effective_number_weights(&counts(&[5, 5]), 0.0).unwrap();
        let loss = balanced_supervised_loss(&preds, &[0, 0], &w).unwrap();
        let plain = (-(0.7f64.ln()) - 0.1f64.ln()) / 2.0;
        assert_eq!(loss, plain);
    }

    #[test]
    fn perfect_predictions_zero_loss() {
        let preds = vec![
            ClassDistribution::one_hot(0, 2),
            ClassDistribution::one_hot(1, 2),
        ];
        let w = effective_number_weights(&counts(&[9, 1]), 0.99).unwrap();
        assert_eq!(balanced_supervised_loss(&preds, &[0, 1], &w).unwrap(), 0.0);
    }

    #[test]
    fn two_class_worked_example() {
        let w = effective_number_weights(&counts(&[3, 1]), 0.5).unwrap();
        assert!((w.weight(0) - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(w.weight(1), 1.0);
        let preds = vec![
            ClassDistribution::new(vec![0.8, 0.2]).unwrap(),
            ClassDistribution::new(vec![0.4, 0.6]).unwrap(),
        ];
        let loss = balanced_supervised_loss(&preds, &[0, 1], &w).unwrap();
        // brute force: (4/7·(−ln 0.8) + (−ln 0.6)) / 2
        assert!((loss - 0.319_168_112_258_483_85).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weight_bounds_and_monotonicity(beta in 0.0f64..0.99999, n in 1usize..5000) {
            let w = effective_weight(beta, n);
            let w_next = effective_weight(beta, n + 1);
            prop_assert!(w <= 1.0 + 1e-12);
            prop_assert!(w >= 1.0 / n as f64 - 1e-12);
            prop_assert!(w_next <= w + 1e-15);
        }

        #[test]
        fn scaling_counts_keeps_minority_heaviest(
            base in proptest::collection::vec(1usize..200, 2..6),
            k in 1usize..10,
            beta in 0.01f64..0.9999,
        ) {
            let scaled: Vec<usize> = base.iter().map(|c| c * k).collect();
            let min_class = base.iter().enumerate().min_by_key(|(_, c)| **c).unwrap().0;
            for cs in [&base, &scaled] {
                let w = effective_number_weights(&counts(cs), beta).unwrap();
                let max = w.as_slice().iter().cloned().fold(f64::MIN, f64::max);
                prop_assert_eq!(w.weight(min_class), max);
            }
        }
    }
}
