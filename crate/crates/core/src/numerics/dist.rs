use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to predicted probabilities before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance on `|Σp − 1|` for a valid distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A dense input vector (an encoded question, context, or their
/// concatenation). All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Representation(Vec<f64>);

impl Representation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "representation",
                format!("entry {i} is not finite"),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// `[q, c]`.
    pub fn concat(question: &Representation, context: &Representation) -> Self {
        let mut values = Vec::with_capacity(question.len() + context.len());
        values.extend_from_slice(&question.0);
        values.extend_from_slice(&context.0);
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Representation {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Representation> for Vec<f64> {
    fn from(r: Representation) -> Self {
        r.0
    }
}

/// A probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Distribution("no classes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Distribution(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Distribution(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(class: usize, classes: usize) -> Self {
        let mut probs = vec![0.0; classes];
        probs[class] = 1.0;
        Self(probs)
    }

    /// Divides non-negative `weights` by their sum. Returns `None` when the sum
    /// is zero or not finite.
    pub fn normalize(weights: Vec<f64>) -> Option<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return None;
        }
        Some(Self(weights.into_iter().map(|w| w / sum).collect()))
    }

    /// Elementwise mean of a non-empty set of distributions of equal length.
    pub fn mean<'a, I>(dists: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a ClassDistribution>,
    {
        let mut iter = dists.into_iter();
        let first = iter.next()?;
        let mut acc = first.0.clone();
        let mut n = 1usize;
        for d in iter {
            for (a, p) in acc.iter_mut().zip(&d.0) {
                *a += p;
            }
            n += 1;
        }
        Self::normalize(acc.into_iter().map(|a| a / n as f64).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for ClassDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<ClassDistribution> for Vec<f64> {
    fn from(d: ClassDistribution) -> Self {
        d.0
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `H(target, pred) = −Σ target_c · ln(max(pred_c, LOG_FLOOR))`.
pub fn cross_entropy(target: &[f64], pred: &[f64]) -> f64 {
    -target
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            if *t == 0.0 {
                0.0
            } else {
                t * p.max(LOG_FLOOR).ln()
            }
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid() {
        assert!(ClassDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ClassDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(ClassDistribution::new(vec![]).is_err());
        assert!(Representation::new(vec![1.0, f64::NAN]).is_err());
        assert!(ClassDistribution::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_clamps() {
        let h = cross_entropy(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((h - (-LOG_FLOOR.ln())).abs() < 1e-12);
        // zero-target entries never contribute, even against zero predictions
        assert_eq!(cross_entropy(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn argmax_and_entropy() {
        let d = ClassDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(d.argmax(), 1);
        assert!((ClassDistribution::uniform(3).entropy() - 3f64.ln()).abs() < 1e-15);
        assert_eq!(ClassDistribution::one_hot(1, 3).entropy(), 0.0);
    }
}
