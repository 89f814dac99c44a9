//! Dataset files and the synthetic long-tail generator.
//!
//! A dataset file holds one JSON object per line. The first line is the
//! header:
//!
//! ```text
//! {"format":"qamatch-dataset","version":1,"d":8,"num_classes":3,
//!  "class_names":["yes","no","maybe"],"counts":[43,13,4]}
//! ```
//!
//! followed by one record per line:
//!
//! ```text
//! {"id":"l0","label":"yes","q":[...],"c":[...],"q_aug":[...],"c_aug":[...]}
//! ```
//!
//! `label` is a class name or `"unlabeled"`. Unlabeled records must carry
//! `q_aug` and `c_aug`. `counts` must match the labeled records. Ground truth
//! for unlabeled records lives in a sidecar with one `id<TAB>label` line each.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Representation;
use crate::rebalance::ClassCounts;
use crate::softmix::UnlabeledTriple;

pub const FORMAT_TAG: &str = "qamatch-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const UNLABELED: &str = "unlabeled";

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const TRUTH_FILE: &str = "unlabeled_truth.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    /// Dimension of each of `q` and `c`.
    pub d: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Labeled records per class.
    pub counts: Vec<usize>,
}

impl DatasetHeader {
    pub fn new(d: usize, class_names: Vec<String>, counts: Vec<usize>) -> Self {
        Self {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            d,
            num_classes: class_names.len(),
            class_names,
            counts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_TAG {
            return Err(Error::Header(format!("unknown format `{}`", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::Header(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.d < 1 {
            return Err(Error::Header("d must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Header("need at least two classes".into()));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Header(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        if self.counts.len() != self.num_classes {
            return Err(Error::Header(format!(
                "{} counts for {} classes",
                self.counts.len(),
                self.num_classes
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.class_names {
            if name.is_empty() || name == UNLABELED || !seen.insert(name) {
                return Err(Error::Header(format!(
                    "bad or duplicate class name `{name}`"
                )));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }
}

/// One question/context example. `label` is `None` for unlabeled records.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub id: String,
    pub label: Option<usize>,
    pub q: Representation,
    pub c: Representation,
    pub q_aug: Option<Representation>,
    pub c_aug: Option<Representation>,
}

impl ExampleRecord {
    /// Classifier input `[q, c]`.
    pub fn input(&self) -> Representation {
        Representation::concat(&self.q, &self.c)
    }

    /// `([q, c], [q_aug, c], [q, c_aug])`.
    pub fn triple(&self) -> Result<UnlabeledTriple> {
        let missing = || Error::Record {
            id: self.id.clone(),
            reason: "augmented representations are missing".into(),
        };
        let q_aug = self.q_aug.as_ref().ok_or_else(missing)?;
        let c_aug = self.c_aug.as_ref().ok_or_else(missing)?;
        UnlabeledTriple::new(
            self.input(),
            Representation::concat(q_aug, &self.c),
            Representation::concat(&self.q, c_aug),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    label: String,
    q: Vec<f64>,
    c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_aug: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_aug: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub labeled: Vec<ExampleRecord>,
    pub unlabeled: Vec<ExampleRecord>,
}

/// Labeled inputs ready for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Vec<Representation>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn counts(&self) -> Result<ClassCounts> {
        ClassCounts::from_labels(&self.labels, self.num_classes)
    }
}

/// Unlabeled triples, with ground truth when it is known (synthetic data).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledSet {
    pub triples: Vec<UnlabeledTriple>,
    pub truth: Option<Vec<usize>>,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

impl Dataset {
    pub fn labeled_set(&self) -> LabeledSet {
        LabeledSet {
            inputs: self.labeled.iter().map(ExampleRecord::input).collect(),
            labels: self
                .labeled
                .iter()
                .map(|r| r.label.expect("labeled"))
                .collect(),
            num_classes: self.header.num_classes,
        }
    }

    /// Builds the unlabeled set; `truth` maps record ids to class indices and
    /// must cover every unlabeled record when given.
    pub fn unlabeled_set(&self, truth: Option<&HashMap<String, usize>>) -> Result<UnlabeledSet> {
        let triples = self
            .unlabeled
            .iter()
            .map(ExampleRecord::triple)
            .collect::<Result<Vec<_>>>()?;
        let truth = truth
            .map(|map| {
                self.unlabeled
                    .iter()
                    .map(|r| {
                        map.get(&r.id).copied().ok_or_else(|| Error::Record {
                            id: r.id.clone(),
                            reason: "missing from the ground-truth sidecar".into(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(UnlabeledSet { triples, truth })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in self.labeled.iter().chain(&self.unlabeled) {
            let line = RecordLine {
                id: r.id.clone(),
                label: match r.label {
                    Some(y) => self.header.class_names[y].clone(),
                    None => UNLABELED.into(),
                },
                q: r.q.as_slice().to_vec(),
                c: r.c.as_slice().to_vec(),
                q_aug: r.q_aug.as_ref().map(|v| v.as_slice().to_vec()),
                c_aug: r.c_aug.as_ref().map(|v| v.as_slice().to_vec()),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

fn vector(id: &str, field: &str, values: Vec<f64>, d: usize) -> Result<Representation> {
    if values.len() != d {
        return Err(Error::Record {
            id: id.into(),
            reason: format!("`{field}` has length {}, expected {d}", values.len()),
        });
    }
    Representation::new(values).map_err(|_| Error::Record {
        id: id.into(),
        reason: format!("`{field}` has a non-finite entry"),
    })
}

/// Parses and validates a dataset.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: DatasetHeader = loop {
        let (i, line) = lines
            .next()
            .ok_or_else(|| Error::Header("empty file".into()))?;
        let line = line.map_err(|e| Error::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            reason: format!("header: {e}"),
        })?;
    };
    header.validate()?;
    let d = header.d;

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut ids = HashSet::new();
    let mut counts = vec![0usize; header.num_classes];
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !ids.insert(raw.id.clone()) {
            return Err(Error::Record {
                id: raw.id,
                reason: "duplicate id".into(),
            });
        }
        let label = if raw.label == UNLABELED {
            None
        } else {
            let y = header
                .class_index(&raw.label)
                .ok_or_else(|| Error::UnknownLabel {
                    line: line_no,
                    label: raw.label.clone(),
                })?;
            counts[y] += 1;
            Some(y)
        };
        let id = raw.id;
        let q = vector(&id, "q", raw.q, d)?;
        let c = vector(&id, "c", raw.c, d)?;
        let q_aug = raw.q_aug.map(|v| vector(&id, "q_aug", v, d)).transpose()?;
        let c_aug = raw.c_aug.map(|v| vector(&id, "c_aug", v, d)).transpose()?;
        if label.is_none() && (q_aug.is_none() || c_aug.is_none()) {
            return Err(Error::Record {
                id,
                reason: "unlabeled records need `q_aug` and `c_aug`".into(),
            });
        }
        let record = ExampleRecord {
            id,
            label,
            q,
            c,
            q_aug,
            c_aug,
        };
        if label.is_some() {
            labeled.push(record);
        } else {
            unlabeled.push(record);
        }
    }
    if counts != header.counts {
        return Err(Error::Header(format!(
            "header counts {:?} disagree with labeled records {:?}",
            header.counts, counts
        )));
    }
    Ok(Dataset {
        header,
        labeled,
        unlabeled,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file))
}

/// Reads an `id<TAB>label` sidecar, resolving label names with `header`.
pub fn load_truth(
    path: impl AsRef<Path>,
    header: &DatasetHeader,
) -> Result<HashMap<String, usize>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            line: i + 1,
            reason: "expected `id<TAB>label`".into(),
        })?;
        let y = header
            .class_index(label)
            .ok_or_else(|| Error::UnknownLabel {
                line: i + 1,
                label: label.into(),
            })?;
        map.insert(id.to_string(), y);
    }
    Ok(map)
}

pub fn write_truth(
    path: impl AsRef<Path>,
    truth: &[(String, usize)],
    header: &DatasetHeader,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, y) in truth {
        out.push_str(id);
        out.push('\t');
        out.push_str(&header.class_names[*y]);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `n_k = ⌊n_max · γ^{−k/(C−1)}⌋` for `k = 0..C`.
pub fn longtail_counts(n_max: usize, gamma: f64, classes: usize) -> Result<ClassCounts> {
    if n_max < 1 {
        return Err(Error::param("n_max", "must be at least 1"));
    }
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("{gamma} is below 1")));
    }
    if classes < 2 {
        return Err(Error::param("classes", "need at least two classes"));
    }
    let counts: Vec<usize> = (0..classes)
        .map(|k| {
            let exact = n_max as f64 * gamma.powf(-(k as f64) / (classes - 1) as f64);
            // guards against products like 39.999999999 from rounding in powf
            (exact + 1e-9).floor() as usize
        })
        .collect();
    if counts.last() == Some(&0) {
        return Err(Error::param(
            "n_max",
            format!("smallest class is empty with n_max {n_max} and gamma {gamma}; increase n_max"),
        ));
    }
    ClassCounts::new(counts)
}

/// Splits `total` by `proportions` with the largest-remainder rule.
pub fn proportional_counts(total: usize, proportions: &[f64]) -> Vec<usize> {
    let sum: f64 = proportions.iter().sum();
    let exact: Vec<f64> = proportions.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Parameters of the synthetic generator. Class `k` is centred on
/// `separation · e_k` for both `q` and `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub class_names: Vec<String>,
    pub d: usize,
    pub n_max_labeled: usize,
    pub gamma_labeled: f64,
    pub n_max_unlabeled: usize,
    pub gamma_unlabeled: f64,
    /// Explicit labeled counts, overriding the long-tail rule.
    pub labeled_counts: Option<Vec<usize>>,
    /// Explicit unlabeled counts, overriding the long-tail rule.
    pub unlabeled_counts: Option<Vec<usize>>,
    pub validation_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub separation: f64,
    pub noise_sigma: f64,
    pub aug_sigma: f64,
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["longtail-3", "scholarchemqa-shape", "agnews-shape"];

impl Default for SynthConfig {
    fn default() -> Self {
        Self::preset("longtail-3").unwrap()
    }
}

impl SynthConfig {
    /// Named presets.
    ///
    /// * `longtail-3`: 3 classes, labeled γ = 10 (43/13/4 = 60 examples),
    ///   unlabeled γ = 10 (2,000 examples), balanced validation and test.
    /// * `scholarchemqa-shape`: yes/no/maybe at 65.8/21.2/13.0, 500 labeled,
    ///   50 validation, 500 test.
    /// * `agnews-shape`: 4 classes, labeled γ = 5 from 40, unlabeled γ = 150.
    pub fn preset(name: &str) -> Option<Self> {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Some(match name {
            "longtail-3" => Self {
                class_names: names(&["yes", "no", "maybe"]),
                d: 16,
                n_max_labeled: 43,
                gamma_labeled: 10.0,
                n_max_unlabeled: 1413,
                gamma_unlabeled: 10.0,
                labeled_counts: None,
                unlabeled_counts: None,
                validation_counts: vec![100, 100, 100],
                test_counts: vec![300, 300, 300],
                separation: 1.0,
                noise_sigma: 0.6,
                aug_sigma: 0.15,
                seed: 0,
            },
            "scholarchemqa-shape" => {
                let props = [0.658, 0.212, 0.130];
                Self {
                    class_names: names(&["yes", "no", "maybe"]),
                    d: 8,
                    n_max_labeled: 329,
                    gamma_labeled: 329.0 / 65.0,
                    n_max_unlabeled: 1316,
                    gamma_unlabeled: 1316.0 / 260.0,
                    labeled_counts: Some(proportional_counts(500, &props)),
                    unlabeled_counts: Some(proportional_counts(2000, &props)),
                    validation_counts: proportional_counts(50, &props),
                    test_counts: proportional_counts(500, &props),
                    separation: 1.0,
                    noise_sigma: 0.6,
                    aug_sigma: 0.15,
                    seed: 0,
                }
            }
            "agnews-shape" => Self {
                class_names: names(&["world", "sports", "business", "sci_tech"]),
                d: 8,
                n_max_labeled: 40,
                gamma_labeled: 5.0,
                n_max_unlabeled: 3000,
                gamma_unlabeled: 150.0,
                labeled_counts: None,
                unlabeled_counts: None,
                validation_counts: vec![50; 4],
                test_counts: vec![250; 4],
                separation: 1.0,
                noise_sigma: 0.6,
                aug_sigma: 0.15,
                seed: 0,
            },
            _ => return None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn check_counts(&self, field: &'static str, counts: &[usize]) -> Result<()> {
        if counts.len() != self.num_classes() {
            return Err(Error::param(
                field,
                format!("need {} entries", self.num_classes()),
            ));
        }
        Ok(())
    }

    pub fn labeled_counts(&self) -> Result<ClassCounts> {
        match &self.labeled_counts {
            Some(c) => {
                self.check_counts("labeled_counts", c)?;
                ClassCounts::new(c.clone())
            }
            None => longtail_counts(self.n_max_labeled, self.gamma_labeled, self.num_classes()),
        }
    }

    pub fn unlabeled_counts(&self) -> Result<Vec<usize>> {
        match &self.unlabeled_counts {
            Some(c) => {
                self.check_counts("unlabeled_counts", c)?;
                Ok(c.clone())
            }
            None if self.n_max_unlabeled == 0 => Ok(vec![0; self.num_classes()]),
            None => Ok(longtail_counts(
                self.n_max_unlabeled,
                self.gamma_unlabeled,
                self.num_classes(),
            )?
            .as_slice()
            .to_vec()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        if c < 2 {
            return Err(Error::param("class_names", "need at least two classes"));
        }
        let header = DatasetHeader::new(self.d, self.class_names.clone(), vec![0; c]);
        header
            .validate()
            .map_err(|e| Error::param("class_names", e.to_string()))?;
        if self.d < c {
            return Err(Error::param(
                "d",
                format!(
                    "{} is smaller than the class count {c}; orthogonal class means need d >= C",
                    self.d
                ),
            ));
        }
        if self.gamma_labeled.is_nan() || self.gamma_labeled < 1.0 {
            return Err(Error::param("gamma_labeled", "must be at least 1"));
        }
        if self.gamma_unlabeled.is_nan() || self.gamma_unlabeled < 1.0 {
            return Err(Error::param("gamma_unlabeled", "must be at least 1"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be positive"));
        }
        if !(self.aug_sigma >= 0.0 && self.aug_sigma.is_finite()) {
            return Err(Error::param("aug_sigma", "must be non-negative"));
        }
        if !self.separation.is_finite() {
            return Err(Error::param("separation", "must be finite"));
        }
        self.check_counts("validation_counts", &self.validation_counts)?;
        self.check_counts("test_counts", &self.test_counts)?;
        self.labeled_counts()?;
        self.unlabeled_counts()?;
        Ok(())
    }
}

/// Everything the generator produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Ground truth of `train.unlabeled`, in record order.
    pub unlabeled_truth: Vec<(String, usize)>,
}

impl SynthDataset {
    pub fn truth_map(&self) -> HashMap<String, usize> {
        self.unlabeled_truth.iter().cloned().collect()
    }

    /// Writes the train, validation and test files and the truth sidecar into
    /// `dir`, returning the written paths.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = [TRAIN_FILE, VALIDATION_FILE, TEST_FILE, TRUTH_FILE].map(|f| dir.join(f));
        self.train.write(&paths[0])?;
        self.validation.write(&paths[1])?;
        self.test.write(&paths[2])?;
        write_truth(&paths[3], &self.unlabeled_truth, &self.train.header)?;
        Ok(paths.to_vec())
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    aug: Normal<f64>,
    d: usize,
    separation: f64,
}

impl Sampler {
    fn point(&mut self, class: usize) -> Representation {
        let values = (0..self.d)
            .map(|i| {
                let mean = if i == class { self.separation } else { 0.0 };
                mean + self.noise.sample(&mut self.rng)
            })
            .collect();
        Representation::new(values).expect("finite sample")
    }

    fn jitter(&mut self, base: &Representation) -> Representation {
        let values = base
            .as_slice()
            .iter()
            .map(|v| v + self.aug.sample(&mut self.rng))
            .collect();
        Representation::new(values).expect("finite sample")
    }

    fn split(
        &mut self,
        counts: &[usize],
        prefix: &str,
        labeled: bool,
        augment: bool,
    ) -> Vec<(ExampleRecord, usize)> {
        let mut out = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let q = self.point(class);
                let c = self.point(class);
                let (q_aug, c_aug) = if augment {
                    (Some(self.jitter(&q)), Some(self.jitter(&c)))
                } else {
                    (None, None)
                };
                let record = ExampleRecord {
                    id: String::new(),
                    label: labeled.then_some(class),
                    q,
                    c,
                    q_aug,
                    c_aug,
                };
                out.push((record, class));
            }
        }
        out.shuffle(&mut self.rng);
        for (i, (r, _)) in out.iter_mut().enumerate() {
            r.id = format!("{prefix}{i}");
        }
        out
    }
}

/// Generates a dataset; a pure function of `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let labeled_counts = cfg.labeled_counts()?;
    let unlabeled_counts = cfg.unlabeled_counts()?;
    let mut sampler = Sampler {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        noise: Normal::new(0.0, cfg.noise_sigma)
            .map_err(|e| Error::param("noise_sigma", e.to_string()))?,
        aug: Normal::new(0.0, cfg.aug_sigma)
            .map_err(|e| Error::param("aug_sigma", e.to_string()))?,
        d: cfg.d,
        separation: cfg.separation,
    };
    let labeled = sampler.split(labeled_counts.as_slice(), "l", true, true);
    let unlabeled = sampler.split(&unlabeled_counts, "u", false, true);
    let validation = sampler.split(&cfg.validation_counts, "v", true, false);
    let test = sampler.split(&cfg.test_counts, "t", true, false);

    let header = |counts: Vec<usize>| DatasetHeader::new(cfg.d, cfg.class_names.clone(), counts);
    let unlabeled_truth = unlabeled.iter().map(|(r, y)| (r.id.clone(), *y)).collect();
    Ok(SynthDataset {
        train: Dataset {
            header: header(labeled_counts.as_slice().to_vec()),
            labeled: labeled.into_iter().map(|(r, _)| r).collect(),
            unlabeled: unlabeled.into_iter().map(|(r, _)| r).collect(),
        },
        validation: Dataset {
            header: header(cfg.validation_counts.clone()),
            labeled: validation.into_iter().map(|(r, _)| r).collect(),
            unlabeled: Vec::new(),
        },
        test: Dataset {
            header: header(cfg.test_counts.clone()),
            labeled: test.into_iter().map(|(r, _)| r).collect(),
            unlabeled: Vec::new(),
        },
        unlabeled_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_max_unlabeled: 30,
            validation_counts: vec![2, 2, 2],
            test_counts: vec![3, 3, 3],
            d: 3,
            ..SynthConfig::default()
        }
    }

    fn text(ds: &Dataset) -> String {
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn longtail_examples() {
        assert_eq!(
            longtail_counts(40, 5.0, 4).unwrap().as_slice(),
            &[40, 23, 13, 8]
        );
        assert_eq!(
            longtail_counts(200, 5.0, 4).unwrap().as_slice(),
            &[200, 116, 68, 40]
        );
        assert_eq!(longtail_counts(17, 1.0, 5).unwrap().as_slice(), &[17; 5]);
        assert_eq!(
            longtail_counts(43, 10.0, 3).unwrap().as_slice(),
            &[43, 13, 4]
        );
        assert!(longtail_counts(5, 10.0, 3).is_err());
        assert!(longtail_counts(5, 0.5, 3).is_err());
        assert!(longtail_counts(5, 2.0, 1).is_err());
    }

    #[test]
    fn longtail_shape() {
        for n_max in [20usize, 40, 100, 200, 1000] {
            for gamma in [1.0, 2.0, 5.0, 10.0] {
                for c in 2..6 {
                    let counts = longtail_counts(n_max, gamma, c).unwrap();
                    let v = counts.as_slice();
                    assert!(v.windows(2).all(|w| w[0] >= w[1]));
                    let ratio = v[0] as f64 / v[c - 1] as f64;
                    assert!(
                        ratio >= gamma / 2.0 && ratio <= gamma + 1e-9,
                        "{v:?} {gamma}"
                    );
                }
            }
        }
    }

    #[test]
    fn proportional_rounding() {
        assert_eq!(
            proportional_counts(500, &[0.658, 0.212, 0.130]),
            vec![329, 106, 65]
        );
        assert_eq!(
            proportional_counts(50, &[0.658, 0.212, 0.130])
                .iter()
                .sum::<usize>(),
            50
        );
    }

    #[test]
    fn generated_counts_match_profile() {
        let cfg = small_cfg();
        let ds = synth_generate(&cfg).unwrap();
        let labeled = ds.train.labeled_set();
        assert_eq!(
            labeled.counts().unwrap(),
            longtail_counts(43, 10.0, 3).unwrap()
        );
        let mut u = [0usize; 3];
        for (_, y) in &ds.unlabeled_truth {
            u[*y] += 1;
        }
        assert_eq!(u.to_vec(), longtail_counts(30, 10.0, 3).unwrap().as_slice());
        assert_eq!(ds.validation.labeled.len(), 6);
        assert_eq!(ds.test.labeled.len(), 9);
    }

    #[test]
    fn zero_aug_sigma_copies() {
        let cfg = SynthConfig {
            aug_sigma: 0.0,
            ..small_cfg()
        };
        let ds = synth_generate(&cfg).unwrap();
        for r in ds.train.unlabeled.iter().chain(&ds.train.labeled) {
            assert_eq!(r.q_aug.as_ref(), Some(&r.q));
            assert_eq!(r.c_aug.as_ref(), Some(&r.c));
        }
    }

    #[test]
    fn generation_is_pure() {
        let a = synth_generate(&small_cfg()).unwrap();
        let b = synth_generate(&small_cfg()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig {
            seed: 1,
            ..small_cfg()
        })
        .unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn dimension_below_classes_rejected() {
        let cfg = SynthConfig {
            d: 2,
            ..small_cfg()
        };
        assert!(matches!(
            synth_generate(&cfg),
            Err(Error::Parameter { name: "d", .. })
        ));
    }

    #[test]
    fn write_load_round_trip_is_exact() {
        let ds = synth_generate(&small_cfg()).unwrap();
        let parsed = parse_dataset(text(&ds.train).as_bytes()).unwrap();
        assert_eq!(parsed, ds.train);
    }

    #[test]
    fn empty_unlabeled_is_fine() {
        let ds = synth_generate(&small_cfg()).unwrap();
        let parsed = parse_dataset(text(&ds.test).as_bytes()).unwrap();
        assert!(parsed.unlabeled.is_empty());
        assert_eq!(parsed.labeled.len(), 9);
    }

    const HEADER: &str = r#"{"format":"qamatch-dataset","version":1,"d":2,"num_classes":2,"class_names":["yes","no"],"counts":[1,0]}"#;

    #[test]
    fn short_vector_names_record() {
        let file = format!(
            "{HEADER}\n{}\n",
            r#"{"id":"abc","label":"yes","q":[1.0],"c":[1.0,2.0]}"#
        );
        match parse_dataset(file.as_bytes()) {
            Err(Error::Record { id, .. }) => assert_eq!(id, "abc"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let file = format!(
            "{HEADER}\n{}\nnot json\n",
            r#"{"id":"a","label":"yes","q":[1,2],"c":[1,2]}"#
        );
        match parse_dataset(file.as_bytes()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_label() {
        let file = format!(
            "{HEADER}\n{}\n",
            r#"{"id":"a","label":"perhaps","q":[1,2],"c":[1,2]}"#
        );
        assert!(matches!(
            parse_dataset(file.as_bytes()),
            Err(Error::UnknownLabel { line: 2, .. })
        ));
    }

    #[test]
    fn unlabeled_without_augmentation_rejected() {
        let file = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"id":"a","label":"yes","q":[1,2],"c":[1,2]}"#,
            r#"{"id":"b","label":"unlabeled","q":[1,2],"c":[1,2]}"#
        );
        assert!(matches!(
            parse_dataset(file.as_bytes()),
            Err(Error::Record { .. })
        ));
    }

    #[test]
    fn header_mutations_rejected() {
        let ds = synth_generate(&small_cfg()).unwrap();
        let body = text(&ds.train);
        let (header_line, rest) = body.split_once('\n').unwrap();
        let header: serde_json::Value = serde_json::from_str(header_line).unwrap();
        let mutations: Vec<(&str, serde_json::Value)> = vec![
            ("format", "other".into()),
            ("version", 2.into()),
            ("d", 0.into()),
            ("d", 4.into()),
            ("num_classes", 1.into()),
            ("num_classes", 4.into()),
            ("class_names", serde_json::json!(["yes", "yes", "maybe"])),
            ("class_names", serde_json::json!(["yes", "no"])),
            ("counts", serde_json::json!([43, 13, 5])),
            ("counts", serde_json::json!([43, 13])),
        ];
        for (key, value) in mutations {
            let mut h = header.clone();
            h[key] = value.clone();
            let file = format!("{h}\n{rest}");
            assert!(
                parse_dataset(file.as_bytes()).is_err(),
                "{key} = {value} accepted"
            );
        }
    }

    #[test]
    fn truth_sidecar_round_trip() {
        let ds = synth_generate(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = ds.write(dir.path()).unwrap();
        let loaded = load_dataset(&paths[0]).unwrap();
        let truth = load_truth(&paths[3], &loaded.header).unwrap();
        assert_eq!(truth, ds.truth_map());
        let set = loaded.unlabeled_set(Some(&truth)).unwrap();
        assert_eq!(set.truth.unwrap().len(), ds.train.unlabeled.len());
    }
}
