use std::path::{Path, PathBuf};

use qamatch::data::{
    load_dataset, load_truth, synth_generate, LabeledSet, TEST_FILE, TRAIN_FILE, TRUTH_FILE,
    VALIDATION_FILE,
};
use qamatch::experiment::aggregate_reports;
use qamatch::trainer::evaluate_checkpoint;
use qamatch::{train, MlpClassifier, TrainReport};

use crate::args::{ConfigArgs, EvalArgs, GenerateArgs, OutputArgs, ReportArgs, TrainArgs};
use crate::config::{
    parse_assignment, parse_config, render, GenerateSettings, Layer, Settings, TrainSettings,
};
use crate::error::{CliError, Result};
use crate::manifest::{Artifact, RunManifest, MANIFEST_FILE, RESOLVED_FILE};

pub const MODEL_FILE: &str = "model.qam";
pub const REPORT_FILE: &str = "report.jsonl";
pub const DIVERGENCE_FILE: &str = "divergence.json";

/// Config file layer, then `--set` layer, then the command's own flags.
pub fn layers(args: &ConfigArgs, flags: Layer) -> Result<Vec<Layer>> {
    let mut out = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        out.push(parse_config(&text, &path.display().to_string())?);
    }
    out.push(
        args.set
            .iter()
            .map(|a| parse_assignment(a))
            .collect::<Result<_>>()?,
    );
    let mut flags = flags;
    if let Some(seed) = args.seed {
        flags.push(("seed".into(), seed.to_string()));
    }
    out.push(flags);
    Ok(out)
}

pub fn generate_layers(args: &GenerateArgs) -> Result<Vec<Layer>> {
    let flags = args
        .preset
        .iter()
        .map(|p| ("preset".to_string(), p.clone()))
        .collect();
    layers(&args.config, flags)
}

pub fn train_layers(args: &TrainArgs) -> Result<Vec<Layer>> {
    let mut flags: Layer = Vec::new();
    if let Some(dir) = &args.data {
        flags.push((
            "train_data".into(),
            dir.join(TRAIN_FILE).display().to_string(),
        ));
        for (key, file) in [("validation_data", VALIDATION_FILE), ("truth", TRUTH_FILE)] {
            let p = dir.join(file);
            if p.exists() {
                flags.push((key.into(), p.display().to_string()));
            }
        }
    }
    if args.supervised_only {
        flags.push(("supervised_only".into(), "true".into()));
    }
    for c in &args.ablate {
        flags.push((c.key().into(), "false".into()));
    }
    layers(&args.config, flags)
}

fn out_dir(output: &OutputArgs) -> Result<PathBuf> {
    output
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required".into()))
}

/// Creates `dir` and refuses to touch existing `files` without `force`.
fn prepare_outputs(dir: &Path, files: &[&str], force: bool) -> Result<()> {
    if !force {
        if let Some(existing) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
            return Err(CliError::Exists(existing));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| qamatch::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| {
        CliError::Core(qamatch::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| {
        CliError::Core(qamatch::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let settings = GenerateSettings::resolve(&generate_layers(args)?)?;
    let entries = settings.entries();
    if args.config.dry_run {
        print!("{}", render(&entries));
        return Ok(());
    }
    settings.synth.validate()?;
    let dir = out_dir(&args.output)?;
    prepare_outputs(
        &dir,
        &[
            TRAIN_FILE,
            VALIDATION_FILE,
            TEST_FILE,
            TRUTH_FILE,
            MANIFEST_FILE,
            RESOLVED_FILE,
        ],
        args.output.force,
    )?;
    let data = synth_generate(&settings.synth)?;
    let written = data.write(&dir)?;
    let resolved = dir.join(RESOLVED_FILE);
    write_text(&resolved, &render(&entries))?;

    let mut manifest =
        RunManifest::new("generate", settings.synth.seed, &entries, &absolute(&dir)?);
    for p in written.iter().chain([&resolved]) {
        manifest.outputs.push(Artifact::of(&absolute(p)?)?);
    }
    manifest.write(&dir.join(MANIFEST_FILE))?;
    log::info!(
        "wrote {} labeled, {} unlabeled, {} validation and {} test records to {}",
        data.train.labeled.len(),
        data.train.unlabeled.len(),
        data.validation.labeled.len(),
        data.test.labeled.len(),
        dir.display()
    );
    Ok(())
}

pub fn train_command(args: &TrainArgs) -> Result<()> {
    let mut settings = TrainSettings::resolve(&train_layers(args)?)?;
    settings.config.validate()?;
    let train_path = settings
        .train_data
        .clone()
        .ok_or_else(|| CliError::Usage("no training data: pass --data or set train_data".into()))?;
    if args.config.dry_run {
        print!("{}", render(&settings.entries()));
        return Ok(());
    }
    // absolute paths keep resolved.conf replayable from any directory
    settings.train_data = Some(absolute(&train_path)?);
    settings.validation_data = settings
        .validation_data
        .as_deref()
        .map(absolute)
        .transpose()?;
    settings.truth = settings.truth.as_deref().map(absolute).transpose()?;
    let entries = settings.entries();

    let dir = out_dir(&args.output)?;
    prepare_outputs(
        &dir,
        &[
            MODEL_FILE,
            REPORT_FILE,
            MANIFEST_FILE,
            RESOLVED_FILE,
            DIVERGENCE_FILE,
        ],
        args.output.force,
    )?;
    let train_path = settings.train_data.clone().expect("set above");
    let dataset = load_dataset(&train_path)?;
    let truth = settings
        .truth
        .as_ref()
        .map(|p| load_truth(p, &dataset.header))
        .transpose()?;
    let labeled = dataset.labeled_set();
    let unlabeled = dataset.unlabeled_set(truth.as_ref())?;
    let validation = match &settings.validation_data {
        Some(p) => {
            let v = load_dataset(p)?;
            if v.header.class_names != dataset.header.class_names || v.header.d != dataset.header.d
            {
                return Err(qamatch::Error::Header(format!(
                    "{} does not match the classes and dimension of {}",
                    p.display(),
                    train_path.display()
                ))
                .into());
            }
            v.labeled_set()
        }
        None => LabeledSet {
            inputs: Vec::new(),
            labels: Vec::new(),
            num_classes: dataset.header.num_classes,
        },
    };
    log::info!(
        "training on {} labeled and {} unlabeled examples for {} iterations",
        labeled.len(),
        unlabeled.len(),
        settings.config.iterations
    );

    let (model, report) = match train(&settings.config, &labeled, &unlabeled, &validation) {
        Ok(out) => out,
        Err(qamatch::Error::TrainingDivergence(snapshot)) => {
            let path = dir.join(DIVERGENCE_FILE);
            let json = serde_json::to_string_pretty(&snapshot).expect("snapshot serializes");
            write_text(&path, &(json + "\n"))?;
            return Err(CliError::Diverged {
                iteration: snapshot.iteration,
                path,
            });
        }
        Err(e) => return Err(e.into()),
    };

    let model_path = dir.join(MODEL_FILE);
    let report_path = dir.join(REPORT_FILE);
    let resolved = dir.join(RESOLVED_FILE);
    model.save(&model_path)?;
    report.save(&report_path)?;
    write_text(&resolved, &render(&entries))?;
    let stale = dir.join(DIVERGENCE_FILE);
    if stale.exists() {
        std::fs::remove_file(&stale).map_err(|e| qamatch::Error::Io {
            path: stale,
            source: e,
        })?;
    }

    let mut manifest = RunManifest::new("train", settings.config.seed, &entries, &absolute(&dir)?);
    for p in [
        Some(&train_path),
        settings.validation_data.as_ref(),
        settings.truth.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        manifest.inputs.push(Artifact::of(p)?);
    }
    for p in [&model_path, &report_path, &resolved] {
        manifest.outputs.push(Artifact::of(&absolute(p)?)?);
    }
    manifest.write(&dir.join(MANIFEST_FILE))?;

    if let Some(last) = report.last() {
        let val = last
            .val_accuracy
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "trained {} iterations; final loss {:.4}, validation accuracy {val}; outputs in {}",
            last.iteration,
            last.loss_total,
            dir.display()
        );
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let model = MlpClassifier::load(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let data = dataset.labeled_set();
    if data.is_empty() {
        return Err(qamatch::Error::Header(format!(
            "{} has no labeled records",
            args.data.display()
        ))
        .into());
    }
    if model.num_classes() != data.num_classes {
        return Err(qamatch::Error::InputShape {
            expected: model.num_classes(),
            got: data.num_classes,
        }
        .into());
    }
    let metrics = evaluate_checkpoint(&model, &data, args.exec)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&metrics).expect("metrics serialize")
    );
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(TrainReport::load)
        .collect::<qamatch::Result<Vec<_>>>()?;
    let summary = aggregate_reports(&reports)?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
        return Ok(());
    }
    println!(
        "{:<24} {:>12} {:>12} {:>5}",
        "metric", "mean", "std", "runs"
    );
    for m in &summary {
        println!(
            "{:<24} {:>12.6} {:>12.6} {:>5}",
            m.metric, m.mean, m.std, m.runs
        );
    }
    Ok(())
}
