use super::mlp::{GradientSet, MlpClassifier};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum:
/// `v ← momentum·v + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Option<GradientSet>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::param("lr", format!("{lr} is not a positive number")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::param(
                "momentum",
                format!("{momentum} outside [0, 1)"),
            ));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: None,
        })
    }

    pub fn velocity(&self) -> Option<&GradientSet> {
        self.velocity.as_ref()
    }

    /// Applies one update. Nothing is modified when a gradient entry is not
    /// finite.
    pub fn step(&mut self, model: &mut MlpClassifier, grads: &GradientSet) -> Result<()> {
        if let Some(tensor) = grads.first_non_finite() {
            return Err(Error::GradientDivergence { tensor });
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| GradientSet::zeros_like(model));
        for ((v, g), p) in velocity
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(model.parameters_mut())
        {
            for ((vi, gi), pi) in v.iter_mut().zip(g).zip(p.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}
