//! The training loop: label-rebalanced supervised loss plus SoftMix
//! consistency (`L_m`) and anchor (`L_c`) losses on calibrated pseudo-labels.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    pseudo_label_from_prediction, RunningDistributionEstimator, TargetDistribution, DEFAULT_WINDOW,
};
use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate_predictions, kl_divergence, MetricsRecord};
use crate::numerics::{
    ClassDistribution, GradientSet, MlpClassifier, Representation, Sgd, WeightedTarget,
};
use crate::parallel::ExecMode;
use crate::rebalance::{effective_number_weights, ClassWeights};
use crate::softmix::{softmix, MixResult, MixSource, UnlabeledTriple};

/// Hyperparameters and component switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Sharpening temperature `T`.
    pub temperature: f64,
    /// `λ ~ Beta(alpha, alpha)`.
    pub alpha: f64,
    /// Effective-number parameter `β`.
    pub beta: f64,
    /// Batches averaged by the running prediction estimator.
    pub window: usize,
    pub lr: f64,
    pub momentum: f64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub rebalance: bool,
    pub calibration: bool,
    pub softmix: bool,
    pub anchor: bool,
    /// Drops every unlabeled term.
    pub supervised_only: bool,
    pub scale_bs: f64,
    pub scale_m: f64,
    pub scale_c: f64,
    /// Rescale class weights to sum to the class count.
    pub normalize_weights: bool,
    pub eval_interval: usize,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            alpha: 0.75,
            beta: 0.9999,
            window: DEFAULT_WINDOW,
            lr: 0.05,
            momentum: 0.9,
            labeled_batch: 16,
            unlabeled_batch: 64,
            iterations: 2000,
            seed: 0,
            hidden: vec![64],
            rebalance: true,
            calibration: true,
            softmix: true,
            anchor: true,
            supervised_only: false,
            scale_bs: 1.0,
            scale_m: 1.0,
            scale_c: 1.0,
            normalize_weights: false,
            eval_interval: 100,
            exec: ExecMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} is not a positive number")))
            }
        };
        positive("temperature", self.temperature)?;
        positive("alpha", self.alpha)?;
        positive("lr", self.lr)?;
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::param(
                "beta",
                format!("{} outside [0, 1)", self.beta),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(
                "momentum",
                format!("{} outside [0, 1)", self.momentum),
            ));
        }
        for (name, v) in [
            ("window", self.window),
            ("labeled_batch", self.labeled_batch),
            ("unlabeled_batch", self.unlabeled_batch),
            ("iterations", self.iterations),
            ("eval_interval", self.eval_interval),
        ] {
            if v < 1 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::param("hidden", "zero-width layer"));
        }
        for (name, v) in [
            ("scale_bs", self.scale_bs),
            ("scale_m", self.scale_m),
            ("scale_c", self.scale_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("{v} is not a non-negative number"),
                ));
            }
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(classes);
        dims
    }

    /// Class weights used by the supervised term.
    pub fn class_weights(&self, labeled: &LabeledSet) -> Result<ClassWeights> {
        if !self.rebalance {
            return Ok(ClassWeights::uniform(labeled.num_classes));
        }
        let w = effective_number_weights(&labeled.counts()?, self.beta)?;
        Ok(if self.normalize_weights {
            w.normalized()
        } else {
            w
        })
    }
}

/// Draws batches by cycling through reshuffled epochs.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Pseudo-labels and mixes for one unlabeled batch. Targets are constants for
/// the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledTargets {
    /// `ṗ` on each original input.
    pub predictions: Vec<ClassDistribution>,
    /// `p̂`.
    pub pseudo_labels: Vec<ClassDistribution>,
    pub mixes: Vec<MixResult>,
    pub fallbacks: usize,
}

impl UnlabeledTargets {
    pub fn batch_mean_prediction(&self) -> Option<ClassDistribution> {
        ClassDistribution::mean(&self.predictions)
    }
}

/// Draws one SoftMix per triple.
pub fn draw_mixes<R: Rng + ?Sized>(
    batch: &[&UnlabeledTriple],
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<MixResult>> {
    batch.iter().map(|t| softmix(t, alpha, rng)).collect()
}

/// Computes `p̂` for each triple (calibrated unless disabled) around
/// already drawn mixes.
pub fn targets_with_mixes(
    model: &MlpClassifier,
    cfg: &TrainConfig,
    estimator: &RunningDistributionEstimator,
    y_bar: &TargetDistribution,
    batch: &[&UnlabeledTriple],
    mixes: Vec<MixResult>,
) -> Result<UnlabeledTargets> {
    if mixes.len() != batch.len() {
        return Err(Error::InputShape {
            expected: batch.len(),
            got: mixes.len(),
        });
    }
    let originals: Vec<&[f64]> = batch.iter().map(|t| t.original().as_slice()).collect();
    let predictions = model.forward_batch(&originals, cfg.exec)?;
    let mut pseudo_labels = Vec::with_capacity(batch.len());
    let mut fallbacks = 0;
    for p in &predictions {
        let pl = pseudo_label_from_prediction(
            p.clone(),
            estimator,
            y_bar,
            cfg.temperature,
            cfg.calibration,
        )?;
        fallbacks += usize::from(pl.fell_back);
        pseudo_labels.push(pl.target);
    }
    Ok(UnlabeledTargets {
        predictions,
        pseudo_labels,
        mixes,
        fallbacks,
    })
}

/// [`draw_mixes`] followed by [`targets_with_mixes`]. Mixes are drawn even
/// when `L_m` is switched off so the random stream does not depend on the
/// switches.
pub fn unlabeled_targets<R: Rng + ?Sized>(
    model: &MlpClassifier,
    cfg: &TrainConfig,
    estimator: &RunningDistributionEstimator,
    y_bar: &TargetDistribution,
    batch: &[&UnlabeledTriple],
    rng: &mut R,
) -> Result<UnlabeledTargets> {
    let mixes = draw_mixes(batch, cfg.alpha, rng)?;
    targets_with_mixes(model, cfg, estimator, y_bar, batch, mixes)
}

/// Loss components of one step and the gradient of their sum.
#[derive(Debug, Clone)]
pub struct StepLoss {
    pub loss_bs: f64,
    pub loss_m: f64,
    pub loss_c: f64,
    pub grads: GradientSet,
}

impl StepLoss {
    pub fn total(&self) -> f64 {
        self.loss_bs + self.loss_m + self.loss_c
    }
}

/// `scale · mean_i(weight_i · H_i)` and its gradient.
fn scaled_group(
    model: &MlpClassifier,
    terms: &[WeightedTarget<'_>],
    scale: f64,
    batch_len: usize,
    mode: ExecMode,
) -> Result<(f64, GradientSet)> {
    if terms.is_empty() || batch_len == 0 {
        return Ok((0.0, GradientSet::zeros_like(model)));
    }
    let (losses, mut grads) = model.weighted_terms(terms, mode)?;
    let n = batch_len as f64;
    grads.scale(scale / n);
    Ok((scale * (losses.iter().sum::<f64>() / n), grads))
}

/// `L_bs + L_m + L_c` for fixed targets.
///
/// * `L_bs = scale_bs · mean_i w_{y_i} H(onehot(y_i), f(x_i))`
/// * `L_m = scale_m · mean_j Σ_{*∈{u,a,b}} H(p̂_j, f(x'_*j))`
/// * `L_c = scale_c · mean_j H(p̂_j, f(x^a_j))`
pub fn objective(
    model: &MlpClassifier,
    cfg: &TrainConfig,
    weights: &ClassWeights,
    labeled: &[(&Representation, usize)],
    unlabeled: &[&UnlabeledTriple],
    targets: &UnlabeledTargets,
) -> Result<StepLoss> {
    let classes = model.num_classes();
    let one_hots: Vec<ClassDistribution> = (0..classes)
        .map(|k| ClassDistribution::one_hot(k, classes))
        .collect();
    let sup_terms: Vec<WeightedTarget<'_>> = labeled
        .iter()
        .map(|(x, y)| WeightedTarget {
            input: x.as_slice(),
            target: &one_hots[*y],
            weight: weights.weight(*y),
        })
        .collect();
    let (loss_bs, mut grads) =
        scaled_group(model, &sup_terms, cfg.scale_bs, labeled.len(), cfg.exec)?;

    let mut loss_m = 0.0;
    let mut loss_c = 0.0;
    if !unlabeled.is_empty() {
        if cfg.softmix {
            let terms: Vec<WeightedTarget<'_>> = targets
                .mixes
                .iter()
                .zip(&targets.pseudo_labels)
                .flat_map(|(mix, p_hat)| {
                    mix.mixed.iter().map(move |x| WeightedTarget {
                        input: x.as_slice(),
                        target: p_hat,
                        weight: 1.0,
                    })
                })
                .collect();
            let (l, g) = scaled_group(model, &terms, cfg.scale_m, unlabeled.len(), cfg.exec)?;
            loss_m = l;
            grads.add_assign(&g);
        }
        if cfg.anchor {
            let terms: Vec<WeightedTarget<'_>> = unlabeled
                .iter()
                .zip(&targets.pseudo_labels)
                .map(|(t, p_hat)| WeightedTarget {
                    input: t.question_aug().as_slice(),
                    target: p_hat,
                    weight: 1.0,
                })
                .collect();
            let (l, g) = scaled_group(model, &terms, cfg.scale_c, unlabeled.len(), cfg.exec)?;
            loss_c = l;
            grads.add_assign(&g);
        }
    }
    Ok(StepLoss {
        loss_bs,
        loss_m,
        loss_c,
        grads,
    })
}

/// State captured when training stops on a non-finite loss, gradient or
/// prediction. Loss components are absent when the step failed before they
/// were computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSnapshot {
    pub iteration: usize,
    pub reason: String,
    pub loss_bs: Option<f64>,
    pub loss_m: Option<f64>,
    pub loss_c: Option<f64>,
    pub lambdas: Vec<f64>,
    pub sources: Vec<MixSource>,
    /// First parameter tensor with a non-finite gradient, if any.
    pub tensor: Option<String>,
}

/// One line of the training report. Serialized keys follow field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Interval means of the loss components.
    pub loss_bs: f64,
    pub loss_m: f64,
    pub loss_c: f64,
    pub loss_total: f64,
    /// Fraction of pseudo-label argmaxes matching the unlabeled ground truth
    /// over the interval.
    pub pseudo_label_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_weighted_f1: Option<f64>,
    /// KL(ȳ ‖ mean p̂) over the interval.
    pub kl_alignment: Option<f64>,
    pub y_bar: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub mean_pseudo_label: Option<Vec<f64>>,
    pub calibration_fallbacks: usize,
}

/// Records at each evaluation interval, strictly increasing in iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    /// One JSON object per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut records: Vec<TrainRecord> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrainRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if records
                .last()
                .is_some_and(|prev| prev.iteration >= rec.iteration)
            {
                return Err(Error::Malformed {
                    line: i + 1,
                    reason: "iterations must be strictly increasing".into(),
                });
            }
            records.push(rec);
        }
        Ok(Self { records })
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

/// Metrics of `model` on a labeled set.
pub fn evaluate_checkpoint(
    model: &MlpClassifier,
    data: &LabeledSet,
    mode: ExecMode,
) -> Result<MetricsRecord> {
    let inputs: Vec<&[f64]> = data.inputs.iter().map(|x| x.as_slice()).collect();
    let preds = model.forward_batch(&inputs, mode)?;
    evaluate_predictions(&data.labels, &preds)
}

#[derive(Default)]
struct IntervalStats {
    steps: usize,
    loss_bs: f64,
    loss_m: f64,
    loss_c: f64,
    pseudo_seen: usize,
    pseudo_correct: usize,
    pseudo_sum: Vec<f64>,
    pseudo_count: usize,
    fallbacks: usize,
}

fn check_datasets(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    validation: &LabeledSet,
) -> Result<usize> {
    let d_in = labeled
        .inputs
        .first()
        .map(Representation::len)
        .ok_or_else(|| Error::param("labeled", "no labeled examples"))?;
    for x in labeled.inputs.iter().chain(&validation.inputs) {
        if x.len() != d_in {
            return Err(Error::InputShape {
                expected: d_in,
                got: x.len(),
            });
        }
    }
    for t in &unlabeled.triples {
        if t.dim() != d_in {
            return Err(Error::InputShape {
                expected: d_in,
                got: t.dim(),
            });
        }
    }
    if validation.num_classes != labeled.num_classes {
        return Err(Error::InputShape {
            expected: labeled.num_classes,
            got: validation.num_classes,
        });
    }
    if let Some(truth) = &unlabeled.truth {
        if truth.len() != unlabeled.len() {
            return Err(Error::InputShape {
                expected: unlabeled.len(),
                got: truth.len(),
            });
        }
    }
    Ok(d_in)
}

/// Trains a classifier and returns it with the per-interval report.
///
/// Each step draws a labeled batch and (unless supervised-only or the
/// unlabeled set is empty) an unlabeled batch, builds pseudo-labels from the
/// running estimator, draws one SoftMix per triple, takes one SGD step on
/// `L_bs + L_m + L_c`, and then pushes the batch-mean prediction into the
/// estimator.
pub fn train(
    cfg: &TrainConfig,
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    validation: &LabeledSet,
) -> Result<(MlpClassifier, TrainReport)> {
    cfg.validate()?;
    let d_in = check_datasets(labeled, unlabeled, validation)?;
    let classes = labeled.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpClassifier::init(&cfg.layer_dims(d_in, classes), &mut rng)?;
    let counts = labeled.counts()?;
    let weights = cfg.class_weights(labeled)?;
    let y_bar = TargetDistribution::from_counts(&counts);
    let mut estimator = RunningDistributionEstimator::new(cfg.window, classes)?;
    let mut optimizer = Sgd::new(cfg.lr, cfg.momentum)?;
    let use_unlabeled = !cfg.supervised_only && !unlabeled.is_empty();

    let mut labeled_sampler = BatchSampler::new(labeled.len());
    let mut unlabeled_sampler = BatchSampler::new(unlabeled.len());
    let mut report = TrainReport::default();
    let mut stats = IntervalStats::default();

    for iteration in 1..=cfg.iterations {
        let lb = labeled_sampler.next_batch(cfg.labeled_batch, &mut rng);
        let ub = if use_unlabeled {
            unlabeled_sampler.next_batch(cfg.unlabeled_batch, &mut rng)
        } else {
            Vec::new()
        };
        let lab: Vec<(&Representation, usize)> = lb
            .iter()
            .map(|&i| (&labeled.inputs[i], labeled.labels[i]))
            .collect();
        let unl: Vec<&UnlabeledTriple> = ub.iter().map(|&i| &unlabeled.triples[i]).collect();

        let mixes = draw_mixes(&unl, cfg.alpha, &mut rng)?;
        let lambdas: Vec<f64> = mixes.iter().map(|m| m.lambda).collect();
        let sources: Vec<MixSource> = mixes.iter().map(|m| m.source).collect();
        let diverged = |reason: String, step: Option<&StepLoss>, tensor: Option<String>| {
            Error::TrainingDivergence(Box::new(DivergenceSnapshot {
                iteration,
                reason,
                loss_bs: step.map(|s| s.loss_bs),
                loss_m: step.map(|s| s.loss_m),
                loss_c: step.map(|s| s.loss_c),
                lambdas: lambdas.clone(),
                sources: sources.clone(),
                tensor,
            }))
        };
        // a prediction that is not a distribution can only come from
        // overflowing parameters once the inputs have been validated
        let numeric = |e: Error| match e {
            Error::Distribution(reason) => diverged(reason, None, None),
            other => other,
        };
        let targets =
            targets_with_mixes(&model, cfg, &estimator, &y_bar, &unl, mixes).map_err(numeric)?;
        let step = objective(&model, cfg, &weights, &lab, &unl, &targets).map_err(numeric)?;
        if !step.total().is_finite() {
            return Err(diverged("non-finite loss".into(), Some(&step), None));
        }
        optimizer
            .step(&mut model, &step.grads)
            .map_err(|e| match e {
                Error::GradientDivergence { tensor } => {
                    diverged("non-finite gradient".into(), Some(&step), Some(tensor))
                }
                other => other,
            })?;

        if let Some(mean) = targets.batch_mean_prediction() {
            estimator.update(mean)?;
        }

        stats.steps += 1;
        stats.loss_bs += step.loss_bs;
        stats.loss_m += step.loss_m;
        stats.loss_c += step.loss_c;
        stats.fallbacks += targets.fallbacks;
        if !targets.pseudo_labels.is_empty() {
            if stats.pseudo_sum.is_empty() {
                stats.pseudo_sum = vec![0.0; classes];
            }
            for p in &targets.pseudo_labels {
                for (s, v) in stats.pseudo_sum.iter_mut().zip(p.probs()) {
                    *s += v;
                }
            }
            stats.pseudo_count += targets.pseudo_labels.len();
            if let Some(truth) = &unlabeled.truth {
                for (p, &i) in targets.pseudo_labels.iter().zip(&ub) {
                    stats.pseudo_seen += 1;
                    stats.pseudo_correct += usize::from(p.argmax() == truth[i]);
                }
            }
        }

        if iteration % cfg.eval_interval == 0 || iteration == cfg.iterations {
            let s = std::mem::take(&mut stats);
            let n = s.steps as f64;
            let mean_pseudo = (s.pseudo_count > 0)
                .then(|| {
                    ClassDistribution::normalize(
                        s.pseudo_sum
                            .iter()
                            .map(|v| v / s.pseudo_count as f64)
                            .collect(),
                    )
                })
                .flatten();
            let val = if validation.is_empty() {
                None
            } else {
                Some(
                    evaluate_checkpoint(&model, validation, cfg.exec).map_err(|e| match e {
                        Error::Distribution(reason) => {
                            Error::TrainingDivergence(Box::new(DivergenceSnapshot {
                                iteration,
                                reason,
                                loss_bs: None,
                                loss_m: None,
                                loss_c: None,
                                lambdas: Vec::new(),
                                sources: Vec::new(),
                                tensor: None,
                            }))
                        }
                        other => other,
                    })?,
                )
            };
            let (loss_bs, loss_m, loss_c) = (s.loss_bs / n, s.loss_m / n, s.loss_c / n);
            log::info!(
                "iteration {iteration}: loss_bs {loss_bs:.4} loss_m {loss_m:.4} loss_c {loss_c:.4} val_acc {}",
                val.as_ref().map_or("n/a".to_string(), |m| format!("{:.4}", m.accuracy))
            );
            report.records.push(TrainRecord {
                iteration,
                loss_bs,
                loss_m,
                loss_c,
                loss_total: loss_bs + loss_m + loss_c,
                pseudo_label_accuracy: (s.pseudo_seen > 0)
                    .then(|| s.pseudo_correct as f64 / s.pseudo_seen as f64),
                val_accuracy: val.as_ref().map(|m| m.accuracy),
                val_weighted_f1: val.as_ref().map(|m| m.weighted_f1),
                kl_alignment: mean_pseudo.as_ref().map(|m| kl_divergence(y_bar.dist(), m)),
                y_bar: y_bar.dist().probs().to_vec(),
                p_bar: estimator.estimate().probs().to_vec(),
                mean_pseudo_label: mean_pseudo.map(|m| m.probs().to_vec()),
                calibration_fallbacks: s.fallbacks,
            });
        }
    }
    Ok((model, report))
}
