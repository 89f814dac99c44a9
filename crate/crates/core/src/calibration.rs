//! Pseudo-label generation.
//!
//! A raw prediction `ṗ` on an unlabeled input is multiplied by the labeled
//! class distribution `ȳ`, divided by a running average `p̄` of recent batch
//! predictions, renormalized, and finally sharpened with temperature `T`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::{ClassDistribution, MlpClassifier, Representation};
use crate::rebalance::ClassCounts;

/// Floor on `p̄` entries before dividing.
pub const DIV_FLOOR: f64 = 1e-8;

/// Default number of batch means kept by the running estimator.
pub const DEFAULT_WINDOW: usize = 128;

/// Mean of the last `capacity` batch-mean predictions.
#[derive(Debug, Clone)]
pub struct RunningDistributionEstimator {
    window: VecDeque<ClassDistribution>,
    capacity: usize,
    classes: usize,
}

impl RunningDistributionEstimator {
    pub fn new(capacity: usize, classes: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("window", "must hold at least one batch"));
        }
        Ok(Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn update(&mut self, batch_mean: ClassDistribution) -> Result<()> {
        if batch_mean.len() != self.classes {
            return Err(Error::InputShape {
                expected: self.classes,
                got: batch_mean.len(),
            });
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(batch_mean);
        Ok(())
    }

    /// Current `p̄`; uniform until the first update.
    pub fn estimate(&self) -> ClassDistribution {
        ClassDistribution::mean(&self.window)
            .unwrap_or_else(|| ClassDistribution::uniform(self.classes))
    }
}

/// Empirical label frequencies of the labeled training data (`ȳ`).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution(ClassDistribution);

impl TargetDistribution {
    pub fn from_counts(counts: &ClassCounts) -> Self {
        let weights = counts.as_slice().iter().map(|c| *c as f64).collect();
        // ClassCounts guarantees a positive total
        Self(ClassDistribution::normalize(weights).expect("positive total count"))
    }

    pub fn new(dist: ClassDistribution) -> Self {
        Self(dist)
    }

    pub fn dist(&self) -> &ClassDistribution {
        &self.0
    }
}

/// Result of [`calibrate`]. `fell_back` is set when the calibrated mass was
/// zero and the raw prediction was returned instead.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub dist: ClassDistribution,
    pub fell_back: bool,
}

/// `Normalize(ṗ ⊙ ȳ ⊘ max(p̄, DIV_FLOOR))`.
pub fn calibrate(
    p_dot: &ClassDistribution,
    y_bar: &TargetDistribution,
    p_bar: &ClassDistribution,
) -> Result<Calibrated> {
    let c = p_dot.len();
    for other in [y_bar.0.len(), p_bar.len()] {
        if other != c {
            return Err(Error::InputShape {
                expected: c,
                got: other,
            });
        }
    }
    let scaled: Vec<f64> = p_dot
        .probs()
        .iter()
        .zip(y_bar.0.probs())
        .zip(p_bar.probs())
        .map(|((p, y), q)| p * y / q.max(DIV_FLOOR))
        .collect();
    Ok(match ClassDistribution::normalize(scaled) {
        Some(dist) => Calibrated {
            dist,
            fell_back: false,
        },
        None => Calibrated {
            dist: p_dot.clone(),
            fell_back: true,
        },
    })
}

/// `p_i^{1/T} / Σ_j p_j^{1/T}`, evaluated in the log domain.
pub fn sharpen(p: &ClassDistribution, temperature: f64) -> Result<ClassDistribution> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param(
            "temperature",
            format!("{temperature} is not a positive number"),
        ));
    }
    let max = p.probs().iter().copied().fold(0.0, f64::max);
    let log_max = max.ln();
    let powered: Vec<f64> = p
        .probs()
        .iter()
        .map(|q| ((q.ln() - log_max) / temperature).exp())
        .collect();
    ClassDistribution::normalize(powered)
        .ok_or_else(|| Error::Distribution("sharpening produced no mass".into()))
}

/// A pseudo-label together with the raw prediction it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    /// `ṗ`: the model's prediction on the original unlabeled input.
    pub prediction: ClassDistribution,
    /// `p̂`: the training target.
    pub target: ClassDistribution,
    pub fell_back: bool,
}

/// Turns a raw prediction into a pseudo-label. With `calibrated = false` the
/// prediction is only sharpened.
pub fn pseudo_label_from_prediction(
    prediction: ClassDistribution,
    estimator: &RunningDistributionEstimator,
    y_bar: &TargetDistribution,
    temperature: f64,
    calibrated: bool,
) -> Result<PseudoLabel> {
    let (base, fell_back) = if calibrated {
        let c = calibrate(&prediction, y_bar, &estimator.estimate())?;
        (c.dist, c.fell_back)
    } else {
        (prediction.clone(), false)
    };
    Ok(PseudoLabel {
        target: sharpen(&base, temperature)?,
        prediction,
        fell_back,
    })
}

/// `p̂ = sharpen(calibrate(forward(model, x_u), ȳ, p̄), T)`.
pub fn make_pseudo_label(
    model: &MlpClassifier,
    x_u: &Representation,
    estimator: &RunningDistributionEstimator,
    y_bar: &TargetDistribution,
    temperature: f64,
) -> Result<PseudoLabel> {
    pseudo_label_from_prediction(model.forward(x_u)?, estimator, y_bar, temperature, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(v: &[f64]) -> ClassDistribution {
        ClassDistribution::new(v.to_vec()).unwrap()
    }

    fn close(a: &ClassDistribution, b: &[f64], tol: f64) -> bool {
        a.probs().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn estimator_ring_buffer() {
        let mut est = RunningDistributionEstimator::new(2, 2).unwrap();
        assert_eq!(est.estimate(), ClassDistribution::uniform(2));
        est.update(d(&[1.0, 0.0])).unwrap();
        assert_eq!(est.estimate().probs(), &[1.0, 0.0]);
        est.update(d(&[0.0, 1.0])).unwrap();
        assert_eq!(est.estimate().probs(), &[0.5, 0.5]);
        est.update(d(&[0.0, 1.0])).unwrap();
        assert_eq!(est.estimate().probs(), &[0.0, 1.0]);
        assert_eq!(est.len(), 2);
        assert!(est.update(d(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn estimator_first_push_is_estimate() {
        let mut est = RunningDistributionEstimator::new(128, 3).unwrap();
        let p = d(&[0.2, 0.5, 0.3]);
        est.update(p.clone()).unwrap();
        assert!(close(&est.estimate(), p.probs(), 1e-15));
    }

    #[test]
    fn target_from_counts() {
        let t = TargetDistribution::from_counts(&ClassCounts::new(vec![329, 106, 65]).unwrap());
        assert!(close(t.dist(), &[0.658, 0.212, 0.130], 1e-12));
    }

    #[test]
    fn calibrate_identity_when_target_matches_running_mean() {
        let shared = d(&[0.6, 0.3, 0.1]);
        let p = d(&[0.2, 0.5, 0.3]);
        let c = calibrate(&p, &TargetDistribution::new(shared.clone()), &shared).unwrap();
        assert!(!c.fell_back);
        assert!(close(&c.dist, p.probs(), 1e-12));
    }

    #[test]
    fn calibrate_worked_example() {
        let y_bar = TargetDistribution::new(d(&[0.658, 0.212, 0.130]));
        let c = calibrate(&d(&[0.5, 0.3, 0.2]), &y_bar, &ClassDistribution::uniform(3)).unwrap();
        // [0.329, 0.0636, 0.026] / 0.4186
        assert!(close(
            &c.dist,
            &[0.329 / 0.4186, 0.0636 / 0.4186, 0.026 / 0.4186],
            1e-12
        ));
        assert!(close(&c.dist, &[0.7860, 0.1519, 0.0621], 1e-4));
    }

    #[test]
    fn calibrate_one_hot_stays_one_hot() {
        let y_bar = TargetDistribution::new(d(&[0.5, 0.3, 0.2]));
        let c = calibrate(
            &ClassDistribution::one_hot(2, 3),
            &y_bar,
            &d(&[0.9, 0.1, 0.0]),
        )
        .unwrap();
        assert_eq!(c.dist.probs(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn calibrate_zero_mass_falls_back() {
        let y_bar = TargetDistribution::new(d(&[1.0, 0.0]));
        let p = ClassDistribution::one_hot(1, 2);
        let c = calibrate(&p, &y_bar, &d(&[0.5, 0.5])).unwrap();
        assert!(c.fell_back);
        assert_eq!(c.dist, p);
    }

    #[test]
    fn sharpen_examples() {
        assert_eq!(
            sharpen(&ClassDistribution::uniform(4), 0.3).unwrap(),
            ClassDistribution::uniform(4)
        );
        let p = d(&[0.2, 0.5, 0.3]);
        assert!(close(&sharpen(&p, 1.0).unwrap(), p.probs(), 1e-15));
        // squares [0.49, 0.09] / 0.58
        let s = sharpen(&d(&[0.7, 0.3]), 0.5).unwrap();
        assert!(close(&s, &[0.49 / 0.58, 0.09 / 0.58], 1e-15));
        assert!(close(&s, &[0.8448, 0.1552], 1e-4));
        assert!(sharpen(&p, 0.0).is_err());
        assert!(sharpen(&p, -1.0).is_err());
    }

    #[test]
    fn sharpen_near_zero_temperature_is_one_hot() {
        let s = sharpen(&d(&[0.34, 0.33, 0.33]), 1e-3).unwrap();
        assert!(s.probs()[0] >= 1.0 - 1e-6);
        // no underflow to an all-zero vector with many small entries
        let s = sharpen(&d(&[0.1; 10]), 1e-3).unwrap();
        assert!(close(&s, &[0.1; 10], 1e-12));
    }

    #[test]
    fn pseudo_label_of_zero_model_is_uniform() {
        let model = MlpClassifier::zeros(&[4, 3]).unwrap();
        let est = RunningDistributionEstimator::new(DEFAULT_WINDOW, 3).unwrap();
        let y_bar = TargetDistribution::new(ClassDistribution::uniform(3));
        let x = Representation::new(vec![1.0, 2.0, -1.0, 0.0]).unwrap();
        let pl = make_pseudo_label(&model, &x, &est, &y_bar, 0.5).unwrap();
        assert!(close(&pl.target, &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn full_pipeline_worked_example() {
        // oracle: mpmath composition of calibrate then square-and-normalize
        let y_bar = TargetDistribution::new(d(&[0.658, 0.212, 0.130]));
        let est = RunningDistributionEstimator::new(DEFAULT_WINDOW, 3).unwrap();
        let pl =
            pseudo_label_from_prediction(d(&[0.5, 0.3, 0.2]), &est, &y_bar, 0.5, true).unwrap();
        assert!(close(
            &pl.target,
            &[
                0.958_207_524_019_590,
                0.035_808_160_552_455,
                0.005_984_315_427_955
            ],
            1e-9
        ));
    }

    fn distribution(c: usize) -> impl Strategy<Value = ClassDistribution> {
        proptest::collection::vec(0.001f64..1.0, c)
            .prop_map(|w| ClassDistribution::normalize(w).unwrap())
    }

    proptest! {
        #[test]
        fn sharpen_keeps_argmax(p in distribution(4), t in 0.01f64..5.0) {
            let mut sorted = p.probs().to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            prop_assert_eq!(sharpen(&p, t).unwrap().argmax(), p.argmax());
        }

        #[test]
        fn sharpen_entropy_decreases_with_temperature(p in distribution(5)) {
            let ts = [1.0, 0.5, 0.25, 0.1];
            let hs: Vec<f64> = ts.iter().map(|t| sharpen(&p, *t).unwrap().entropy()).collect();
            for w in hs.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }

        #[test]
        fn calibrate_is_scale_invariant(
            p in distribution(3), y in distribution(3), q in distribution(3), s in 0.01f64..100.0
        ) {
            let base = calibrate(&p, &TargetDistribution::new(y.clone()), &q).unwrap();
            // rescaling either factor must cancel under normalization
            let scaled_q: Vec<f64> = q.probs().iter().map(|v| v * s).collect();
            let scaled_y: Vec<f64> = y.probs().iter().map(|v| v * s).collect();
            let manual = |yv: &[f64], qv: &[f64]| {
                let raw: Vec<f64> = p.probs().iter().zip(yv).zip(qv).map(|((a, b), c)| a * b / c).collect();
                ClassDistribution::normalize(raw).unwrap()
            };
            for other in [manual(y.probs(), &scaled_q), manual(&scaled_y, q.probs())] {
                for (a, b) in base.dist.probs().iter().zip(other.probs()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn outputs_are_distributions(p in distribution(3), y in distribution(3), q in distribution(3), t in 0.05f64..2.0) {
            let c = calibrate(&p, &TargetDistribution::new(y), &q).unwrap();
            let s = sharpen(&c.dist, t).unwrap();
            prop_assert!(ClassDistribution::new(s.probs().to_vec()).is_ok());
        }
    }
}
