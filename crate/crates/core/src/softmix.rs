//! Latent-space mixing of an unlabeled example with its augmentations, and
//! the consistency losses built on it.
//!
//! One of the original (`u`), question-augmented (`a`) and context-augmented
//! (`b`) representations is picked as the perturbation source and every
//! representation is pulled toward it: `x'_* = λ·x_* + (1 − λ)·x_source` with
//! `λ ~ Beta(α, α)`. All mixed inputs share the example's pseudo-label.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cross_entropy, ClassDistribution, MlpClassifier, Representation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixSource {
    /// `x^u`
    Original,
    /// `x^a`
    Question,
    /// `x^b`
    Context,
}

impl MixSource {
    pub const ALL: [MixSource; 3] = [MixSource::Original, MixSource::Question, MixSource::Context];

    fn index(self) -> usize {
        self as usize
    }
}

/// `x^u`, `x^a`, `x^b` for one unlabeled example.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledTriple {
    original: Representation,
    question_aug: Representation,
    context_aug: Representation,
}

impl UnlabeledTriple {
    pub fn new(
        original: Representation,
        question_aug: Representation,
        context_aug: Representation,
    ) -> Result<Self> {
        let d = original.len();
        for other in [&question_aug, &context_aug] {
            if other.len() != d {
                return Err(Error::InputShape {
                    expected: d,
                    got: other.len(),
                });
            }
        }
        Ok(Self {
            original,
            question_aug,
            context_aug,
        })
    }

    pub fn original(&self) -> &Representation {
        &self.original
    }

    pub fn question_aug(&self) -> &Representation {
        &self.question_aug
    }

    pub fn context_aug(&self) -> &Representation {
        &self.context_aug
    }

    pub fn get(&self, which: MixSource) -> &Representation {
        match which {
            MixSource::Original => &self.original,
            MixSource::Question => &self.question_aug,
            MixSource::Context => &self.context_aug,
        }
    }

    pub fn dim(&self) -> usize {
        self.original.len()
    }
}

/// Mixed representations in `u, a, b` order.
#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub mixed: [Representation; 3],
    pub lambda: f64,
    pub source: MixSource,
}

impl MixResult {
    pub fn get(&self, which: MixSource) -> &Representation {
        &self.mixed[which.index()]
    }
}

/// `λ = g1 / (g1 + g2)` with `g1, g2 ~ Gamma(α, 1)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(
            "alpha",
            format!("{alpha} is not a positive number"),
        ));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::param("alpha", e.to_string()))?;
    loop {
        let g1 = gamma.sample(rng);
        let g2 = gamma.sample(rng);
        let sum = g1 + g2;
        // both draws underflowing is only plausible for tiny α
        if sum > 0.0 {
            return Ok(g1 / sum);
        }
    }
}

/// Deterministic mixing with a given `λ` and source.
pub fn mix_with(triple: &UnlabeledTriple, lambda: f64, source: MixSource) -> MixResult {
    let src = triple.get(source).as_slice();
    let mixed = MixSource::ALL.map(|which| {
        if which == source {
            return triple.get(which).clone();
        }
        let values = triple
            .get(which)
            .as_slice()
            .iter()
            .zip(src)
            .map(|(x, s)| lambda * x + (1.0 - lambda) * s)
            .collect();
        Representation::new(values).expect("convex combination of finite values")
    });
    MixResult {
        mixed,
        lambda,
        source,
    }
}

/// Draws a source uniformly from `{u, a, b}` and one `λ`, then mixes.
pub fn softmix<R: Rng + ?Sized>(
    triple: &UnlabeledTriple,
    alpha: f64,
    rng: &mut R,
) -> Result<MixResult> {
    let source = MixSource::ALL[rng.random_range(0..3)];
    let lambda = sample_lambda(alpha, rng)?;
    Ok(mix_with(triple, lambda, source))
}

/// `L_m`: batch mean of `Σ_{* ∈ {u,a,b}} H(p̂, forward(x'_*))`.
pub fn consistency_loss_m(
    model: &MlpClassifier,
    mixes: &[MixResult],
    p_hats: &[ClassDistribution],
) -> Result<f64> {
    if mixes.len() != p_hats.len() {
        return Err(Error::InputShape {
            expected: mixes.len(),
            got: p_hats.len(),
        });
    }
    if mixes.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (mix, p_hat) in mixes.iter().zip(p_hats) {
        for x in &mix.mixed {
            total += cross_entropy(p_hat.probs(), model.forward(x)?.probs());
        }
    }
    Ok(total / mixes.len() as f64)
}

/// `L_c`: batch mean of `H(p̂, forward(x^a))` on the unmixed question
/// augmentation.
pub fn anchor_loss_c(
    model: &MlpClassifier,
    question_augs: &[&Representation],
    p_hats: &[ClassDistribution],
) -> Result<f64> {
    if question_augs.len() != p_hats.len() {
        return Err(Error::InputShape {
            expected: question_augs.len(),
            got: p_hats.len(),
        });
    }
    if question_augs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, p_hat) in question_augs.iter().zip(p_hats) {
        total += cross_entropy(p_hat.probs(), model.forward(x)?.probs());
    }
    Ok(total / question_augs.len() as f64)
}

/// Mean pairwise Euclidean distance of a point set.
pub fn mean_pairwise_distance(points: &[&Representation]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            sum += a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
