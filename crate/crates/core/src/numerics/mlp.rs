use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use super::dist::{cross_entropy, softmax, ClassDistribution, Representation, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::parallel::{self, ExecMode};

/// Leading bytes of a serialized classifier.
pub const MODEL_MAGIC: &[u8; 4] = b"QAM1";

/// One fully connected layer. `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v)),
        );
    }
}

/// Feed-forward classifier: affine layers with rectifier activations between
/// them and a softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    layers: Vec<Dense>,
}

/// Gradients with the same shapes as an [`MlpClassifier`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    layers: Vec<Dense>,
}

/// One term of a weighted cross-entropy objective.
#[derive(Debug, Clone, Copy)]
pub struct WeightedTarget<'a> {
    pub input: &'a [f64],
    pub target: &'a ClassDistribution,
    pub weight: f64,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::param(
            "layer_dims",
            "need at least an input and an output width",
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::param("layer_dims", "zero-width layer"));
    }
    if *layer_dims.last().unwrap() < 2 {
        return Err(Error::param("layer_dims", "need at least two classes"));
    }
    Ok(())
}

impl MlpClassifier {
    /// All-zero parameters.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layers: layer_dims
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// Glorot-uniform weights in `[−s, s]`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases.
    pub fn init<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        for layer in &mut model.layers {
            let s = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-s..=s);
            }
        }
        Ok(model)
    }

    /// Builds a model from explicit `(weights, bias)` pairs.
    pub fn from_parameters(
        layer_dims: &[usize],
        params: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        if params.len() != model.layers.len() {
            return Err(Error::param("params", "one (weights, bias) pair per layer"));
        }
        for (layer, (w, b)) in model.layers.iter_mut().zip(params) {
            if w.len() != layer.weights.len() || b.len() != layer.bias.len() {
                return Err(Error::param(
                    "params",
                    "tensor shape disagrees with layer_dims",
                ));
            }
            layer.weights = w;
            layer.bias = b;
        }
        Ok(model)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn tensor_names(&self) -> Vec<String> {
        tensor_names(self.layers.len())
    }

    /// Parameter tensors in the order `layer0.weight, layer0.bias, layer1.weight, ...`.
    pub fn parameters(&self) -> Vec<&[f64]> {
        tensors(&self.layers)
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        tensors_mut(&mut self.layers)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-softmax scores.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_slice(&self, x: &[f64]) -> Result<ClassDistribution> {
        let probs = softmax(&self.logits(x)?);
        ClassDistribution::normalize(probs)
            .ok_or_else(|| Error::Distribution("softmax produced a degenerate vector".into()))
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &Representation) -> Result<ClassDistribution> {
        self.forward_slice(x.as_slice())
    }

    pub fn predict(&self, x: &Representation) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    /// Predictions for many inputs, in input order.
    pub fn forward_batch(&self, xs: &[&[f64]], mode: ExecMode) -> Result<Vec<ClassDistribution>> {
        parallel::map(mode, xs, |x| self.forward_slice(x))
            .into_iter()
            .collect()
    }

    /// Adds `weight · ∂H(target, forward(x))/∂θ` into `grads` and returns
    /// `weight · H`.
    fn accumulate(&self, term: &WeightedTarget<'_>, grads: &mut GradientSet) -> Result<f64> {
        let x = term.input;
        self.check_input(x)?;
        if term.target.len() != self.num_classes() {
            return Err(Error::InputShape {
                expected: self.num_classes(),
                got: term.target.len(),
            });
        }
        // forward pass keeping every layer input and pre-activation
        let last = self.layers.len() - 1;
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.apply(&cur, &mut z);
            let a = if i < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut cur, a));
            pre.push(z);
        }
        let probs = softmax(&pre[last]);
        let target = term.target.probs();
        let loss = term.weight * cross_entropy(target, &probs);
        if term.weight == 0.0 {
            return Ok(loss);
        }

        // d/dz_j of −Σ_c t_c ln max(p_c, ε): clamped classes are constant
        let live_mass: f64 = target
            .iter()
            .zip(&probs)
            .filter(|(_, p)| **p >= LOG_FLOOR)
            .map(|(t, _)| t)
            .sum();
        let mut delta: Vec<f64> = probs
            .iter()
            .zip(target)
            .map(|(p, t)| {
                let pull = if *p >= LOG_FLOOR { *t } else { 0.0 };
                term.weight * (p * live_mass - pull)
            })
            .collect();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            let a = &inputs[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, v) in row.iter_mut().zip(a) {
                    *gw += d * v;
                }
            }
            if l > 0 {
                let z_prev = &pre[l - 1];
                let mut next = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * d;
                    }
                }
                for (n, z) in next.iter_mut().zip(z_prev) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok(loss)
    }

    /// Per-term losses `weight_i · H_i` and the gradient of their sum.
    ///
    /// Terms are processed in fixed-size chunks; chunk gradients are summed in
    /// chunk order so the result does not depend on `mode`.
    pub fn weighted_terms(
        &self,
        terms: &[WeightedTarget<'_>],
        mode: ExecMode,
    ) -> Result<(Vec<f64>, GradientSet)> {
        let chunks =
            parallel::map_chunks(mode, terms, |chunk| -> Result<(Vec<f64>, GradientSet)> {
                let mut grads = GradientSet::zeros_like(self);
                let losses = chunk
                    .iter()
                    .map(|t| self.accumulate(t, &mut grads))
                    .collect::<Result<Vec<_>>>()?;
                Ok((losses, grads))
            });
        let mut losses = Vec::with_capacity(terms.len());
        let mut total = GradientSet::zeros_like(self);
        for chunk in chunks {
            let (l, g) = chunk?;
            losses.extend(l);
            total.add_assign(&g);
        }
        Ok((losses, total))
    }

    /// Serializes as `QAM1`, a little-endian `u32` dimension count, the
    /// dimensions as `u32`, then each layer's weights (row-major) followed by
    /// its bias, all as little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        let dims = self.layer_dims();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for t in self.parameters() {
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::ModelFormat(format!("truncated file ({e})"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::ModelFormat(format!("bad magic bytes {magic:?}")));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(fmt)?;
        let n = u32::from_le_bytes(word) as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::ModelFormat(format!("implausible layer count {n}")));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut word).map_err(fmt)?;
            dims.push(u32::from_le_bytes(word) as usize);
        }
        let mut model = Self::zeros(&dims).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let mut buf = [0u8; 8];
        for t in model.parameters_mut() {
            for v in t.iter_mut() {
                r.read_exact(&mut buf).map_err(fmt)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(fmt)?;
        if !rest.is_empty() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", rest.len())));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Mean over the batch of `weight · H(target, forward(x))` and its exact
/// gradient.
pub fn weighted_ce_gradient(
    model: &MlpClassifier,
    batch: &[WeightedTarget<'_>],
    mode: ExecMode,
) -> Result<(f64, GradientSet)> {
    if let Some(t) = batch.iter().find(|t| t.weight.is_nan() || t.weight < 0.0) {
        return Err(Error::param("weight", format!("{} is negative", t.weight)));
    }
    if batch.is_empty() {
        return Ok((0.0, GradientSet::zeros_like(model)));
    }
    let (losses, mut grads) = model.weighted_terms(batch, mode)?;
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((losses.iter().sum::<f64>() / n, grads))
}

impl GradientSet {
    pub fn zeros_like(model: &MlpClassifier) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        tensors(&self.layers)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        tensors_mut(&mut self.layers)
    }

    pub fn tensor_names(&self) -> Vec<String> {
        tensor_names(self.layers.len())
    }

    /// Name of the first tensor containing a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .iter()
            .position(|t| t.iter().any(|v| !v.is_finite()))
            .map(|i| self.tensor_names()[i].clone())
    }
}

fn tensors(layers: &[Dense]) -> Vec<&[f64]> {
    layers
        .iter()
        .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
        .collect()
}

fn tensors_mut(layers: &mut [Dense]) -> Vec<&mut [f64]> {
    layers
        .iter_mut()
        .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
        .collect()
}

fn tensor_names(n: usize) -> Vec<String> {
    (0..n)
        .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(v: &[f64]) -> ClassDistribution {
        ClassDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpClassifier::zeros(&[4, 5, 3]).unwrap();
        let p = m
            .forward(&Representation::new(vec![1.0, -2.0, 3.0, 0.5]).unwrap())
            .unwrap();
        for v in p.probs() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_layer_ln2_logits() {
        // logits = [ln 2, 0] -> [2/3, 1/3]
        let m =
            MlpClassifier::from_parameters(&[1, 2], vec![(vec![0.0, 0.0], vec![2f64.ln(), 0.0])])
                .unwrap();
        let p = m.forward(&Representation::new(vec![7.0]).unwrap()).unwrap();
        assert!((p.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let m = MlpClassifier::zeros(&[3, 2]).unwrap();
        let err = m.forward(&Representation::zeros(2)).unwrap_err();
        assert!(matches!(
            err,
            Error::InputShape {
                expected: 3,
                got: 2
            }
        ));
    }

    #[test]
    fn bad_layer_dims() {
        assert!(MlpClassifier::zeros(&[3]).is_err());
        assert!(MlpClassifier::zeros(&[3, 0, 2]).is_err());
        assert!(MlpClassifier::zeros(&[3, 1]).is_err());
    }

    #[test]
    fn target_equal_to_prediction_has_zero_logit_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpClassifier::init(&[2, 3], &mut rng).unwrap();
        let x = [0.3, -0.7];
        let pred = m.forward_slice(&x).unwrap();
        let term = WeightedTarget {
            input: &x,
            target: &pred,
            weight: 1.0,
        };
        let (loss, grads) = weighted_ce_gradient(&m, &[term], ExecMode::Sequential).unwrap();
        assert!((loss - pred.entropy()).abs() < 1e-12);
        for t in grads.tensors() {
            for g in t {
                assert!(g.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = MlpClassifier::init(&[3, 4, 2], &mut rng).unwrap();
        let t = dist(&[0.2, 0.8]);
        let xs = [[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]];
        let batch: Vec<_> = xs
            .iter()
            .map(|x| WeightedTarget {
                input: x,
                target: &t,
                weight: 0.0,
            })
            .collect();
        let (loss, grads) = weighted_ce_gradient(&m, &batch, ExecMode::Sequential).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.tensors().iter().all(|t| t.iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn negative_weight_rejected() {
        let m = MlpClassifier::zeros(&[1, 2]).unwrap();
        let t = dist(&[0.5, 0.5]);
        let term = WeightedTarget {
            input: &[0.0],
            target: &t,
            weight: -1.0,
        };
        assert!(weighted_ce_gradient(&m, &[term], ExecMode::Sequential).is_err());
    }

    #[test]
    fn clamped_class_has_no_gradient_pull() {
        // prediction on class 0 underflows the log floor; the loss saturates
        let m = MlpClassifier::from_parameters(&[1, 2], vec![(vec![0.0, 0.0], vec![-40.0, 0.0])])
            .unwrap();
        let t = ClassDistribution::one_hot(0, 2);
        let term = WeightedTarget {
            input: &[1.0],
            target: &t,
            weight: 1.0,
        };
        let (loss, grads) = weighted_ce_gradient(&m, &[term], ExecMode::Sequential).unwrap();
        assert!((loss + LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(grads.tensors().iter().all(|t| t.iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn model_file_round_trip_and_bad_magic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = MlpClassifier::init(&[4, 6, 3], &mut rng).unwrap();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"QAM1");
        assert_eq!(bytes.len(), 4 + 4 + 3 * 4 + 8 * (4 * 6 + 6 + 6 * 3 + 3));
        assert_eq!(MlpClassifier::read_from(bytes.as_slice()).unwrap(), m);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            MlpClassifier::read_from(bad.as_slice()),
            Err(Error::ModelFormat(_))
        ));
        assert!(MlpClassifier::read_from(&bytes[..bytes.len() - 1]).is_err());
    }
}
