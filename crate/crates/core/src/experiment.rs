//! Seed sweeps on synthetic data and mean ± std aggregation of reports.

use serde::{Deserialize, Serialize};

use crate::data::{synth_generate, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::MetricsRecord;
use crate::numerics::MlpClassifier;
use crate::parallel::{self, ExecMode};
use crate::trainer::{evaluate_checkpoint, train, TrainConfig, TrainReport};

/// Outcome of one synthetic run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub model: MlpClassifier,
    pub report: TrainReport,
    pub test: MetricsRecord,
}

/// Generates data with `seed`, trains with `seed`, and evaluates on the test
/// split.
pub fn run_synthetic(synth: &SynthConfig, cfg: &TrainConfig, seed: u64) -> Result<RunSummary> {
    let data = synth_generate(&SynthConfig {
        seed,
        ..synth.clone()
    })?;
    let truth = data.truth_map();
    let labeled = data.train.labeled_set();
    let unlabeled = data.train.unlabeled_set(Some(&truth))?;
    let cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    let (model, report) = train(&cfg, &labeled, &unlabeled, &data.validation.labeled_set())?;
    let test = evaluate_checkpoint(&model, &data.test.labeled_set(), cfg.exec)?;
    Ok(RunSummary {
        seed,
        model,
        report,
        test,
    })
}

/// Runs every seed, in parallel across seeds when `mode` allows. Results are
/// returned in seed order and do not depend on `mode`.
pub fn sweep(
    synth: &SynthConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
    mode: ExecMode,
) -> Result<Vec<RunSummary>> {
    parallel::map(mode, seeds, |&seed| run_synthetic(synth, cfg, seed))
        .into_iter()
        .collect()
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Aggregates the final record of each report. Reports must share iteration
/// schedules, class counts and which metrics are present.
pub fn aggregate_reports(reports: &[TrainReport]) -> Result<Vec<MetricSummary>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Report("no reports".into()))?;
    let schedule: Vec<usize> = first.records.iter().map(|r| r.iteration).collect();
    if schedule.is_empty() {
        return Err(Error::Report("report has no records".into()));
    }
    let finals: Vec<_> = reports
        .iter()
        .map(|r| r.last().expect("non-empty"))
        .collect();
    let last = finals[0];
    for (i, r) in reports.iter().enumerate() {
        let other: Vec<usize> = r.records.iter().map(|r| r.iteration).collect();
        let f = finals[i];
        if other != schedule
            || f.y_bar.len() != last.y_bar.len()
            || f.pseudo_label_accuracy.is_some() != last.pseudo_label_accuracy.is_some()
            || f.val_accuracy.is_some() != last.val_accuracy.is_some()
            || f.kl_alignment.is_some() != last.kl_alignment.is_some()
        {
            return Err(Error::Report(format!(
                "report {i} has a different schema from report 0"
            )));
        }
    }
    type Getter = fn(&crate::trainer::TrainRecord) -> Option<f64>;
    let metrics: [(&str, Getter); 8] = [
        ("loss_bs", |r| Some(r.loss_bs)),
        ("loss_m", |r| Some(r.loss_m)),
        ("loss_c", |r| Some(r.loss_c)),
        ("loss_total", |r| Some(r.loss_total)),
        ("pseudo_label_accuracy", |r| r.pseudo_label_accuracy),
        ("val_accuracy", |r| r.val_accuracy),
        ("val_weighted_f1", |r| r.val_weighted_f1),
        ("kl_alignment", |r| r.kl_alignment),
    ];
    Ok(metrics
        .iter()
        .filter_map(|(name, get)| {
            let values: Option<Vec<f64>> = finals.iter().map(|r| get(r)).collect();
            values.map(|v| {
                let (mean, std) = mean_std(&v);
                MetricSummary {
                    metric: name.to_string(),
                    mean,
                    std,
                    runs: v.len(),
                }
            })
        })
        .collect())
}
