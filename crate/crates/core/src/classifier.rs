//! One-vs-one linear max-margin classifier, page voting and confusion matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureLayout, FeatureSet, LabeledSample};

pub const MODEL_FORMAT: &str = "printid-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierParams {
    pub kernel: KernelKind,
    /// Soft-margin penalty.
    pub c: f64,
    /// Stop once every projected dual gradient is within `tol` of zero.
    pub tol: f64,
    /// Maximum passes over the training pairs.
    pub max_iter: usize,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Linear,
            c: 1.0,
            tol: 1e-4,
            max_iter: 100_000,
        }
    }
}

impl ClassifierParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::param("c", "must be a positive finite number"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-dimension min-max scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows[0].len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Self { min, max }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Constant training dimensions map to 0.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }
}

/// Linear decision function separating `positive` (score ≥ 0) from `negative`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFunction {
    pub positive: usize,
    pub negative: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl PairFunction {
    pub fn score(&self, scaled: &[f64]) -> f64 {
        dot(&self.weights, scaled) + self.bias
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dual coordinate descent for the L1-loss soft-margin SVM with the bias
/// folded in as a constant feature.
fn train_pair(xs: &[&[f64]], ys: &[f64], params: &ClassifierParams, seed: u64) -> (Vec<f64>, f64) {
    let d = xs[0].len();
    let n = xs.len();
    let c = params.c;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let qd: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..params.max_iter {
        order.shuffle(&mut rng);
        let mut worst: f64 = 0.0;
        for &i in &order {
            let g = ys[i] * (dot(&w, xs[i]) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            worst = worst.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * ys[i];
                for (wj, xj) in w.iter_mut().zip(xs[i]) {
                    *wj += step * xj;
                }
                b += step;
            }
        }
        if worst < params.tol {
            break;
        }
    }
    (w, b)
}

/// Scaling plus the k(k−1)/2 pair functions over an ordered class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub classes: Vec<String>,
    pub scaler: MinMaxScaler,
    pub pairs: Vec<PairFunction>,
}

/// Votes and summed signed margins of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrediction {
    pub label: usize,
    pub votes: Vec<usize>,
    pub margins: Vec<f64>,
}

/// Index of the best class by count, then margin, then class order.
fn elect(counts: &[usize], margins: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..counts.len() {
        if counts[k] > counts[best] || (counts[k] == counts[best] && margins[k] > margins[best]) {
            best = k;
        }
    }
    best
}

impl Classifier {
    /// Fits scaling and pair functions. Classes are ordered lexicographically.
    pub fn train(rows: &[&[f64]], labels: &[&str], params: &ClassifierParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if rows.len() != labels.len() {
            return Err(Error::Validation("feature and label counts differ".into()));
        }
        if rows.is_empty() {
            return Err(Error::Training("no training samples".into()));
        }
        let dim = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Validation(format!("sample {i} has dimension {}, expected {dim}", r.len())));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("sample {i} has a non-finite value at index {j}")));
            }
        }
        let classes: Vec<String> = labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(String::from)
            .collect();
        if classes.len() < 2 {
            return Err(Error::Training(format!(
                "need at least two classes, found {}",
                classes.len()
            )));
        }
        let index: BTreeMap<&str, usize> =
            classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let y: Vec<usize> = labels.iter().map(|l| index[l]).collect();
        let scaler = MinMaxScaler::fit(rows);
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();

        let k = classes.len();
        let jobs: Vec<(usize, usize)> = (0..k)
            .flat_map(|a| ((a + 1)..k).map(move |b| (a, b)))
            .collect();
        let pairs = jobs
            .par_iter()
            .enumerate()
            .map(|(p, &(a, b))| {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (i, &c) in y.iter().enumerate() {
                    if c == a || c == b {
                        xs.push(scaled[i].as_slice());
                        ys.push(if c == a { 1.0 } else { -1.0 });
                    }
                }
                let (weights, bias) = train_pair(&xs, &ys, params, seed.wrapping_add(p as u64));
                PairFunction {
                    positive: a,
                    negative: b,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Self { classes, scaler, pairs })
    }

    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn predict(&self, x: &[f64]) -> Result<GroupPrediction> {
        if x.len() != self.dim() {
            return Err(Error::Validation(format!(
                "sample dimension {} does not match model dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let scaled = self.scaler.transform(x);
        let k = self.classes.len();
        let mut votes = vec![0; k];
        let mut margins = vec![0.0; k];
        for f in &self.pairs {
            let s = f.score(&scaled);
            if s >= 0.0 {
                votes[f.positive] += 1;
            } else {
                votes[f.negative] += 1;
            }
            margins[f.positive] += s;
            margins[f.negative] -= s;
        }
        Ok(GroupPrediction {
            label: elect(&votes, &margins),
            votes,
            margins,
        })
    }
}

/// Majority vote over a page's group predictions; ties go to the larger
/// margin summed over the page's groups, then to class order.
pub fn page_decision(groups: &[GroupPrediction]) -> Result<usize> {
    let first = groups.first().ok_or(Error::Undecidable)?;
    let k = first.votes.len();
    let mut counts = vec![0; k];
    let mut margins = vec![0.0; k];
    for g in groups {
        counts[g.label] += 1;
        for (m, v) in margins.iter_mut().zip(&g.margins) {
            *m += v;
        }
    }
    Ok(elect(&counts, &margins))
}

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn row_total(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    pub fn total(&self) -> usize {
        (0..self.classes.len()).map(|i| self.row_total(i)).sum()
    }

    /// Accuracy per class, `None` for classes without test samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes.len())
            .map(|i| {
                let n = self.row_total(i);
                (n > 0).then(|| self.counts[i][i] as f64 / n as f64)
            })
            .collect()
    }

    /// Unweighted mean of the accuracies of classes that have test samples.
    pub fn average_accuracy(&self) -> f64 {
        let accs: Vec<f64> = self.per_class_accuracy().into_iter().flatten().collect();
        if accs.is_empty() {
            0.0
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        }
    }

    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(String::len)
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .chain(["true\\pred".len(), "acc%".len() + 2])
            .max()
            .unwrap_or(4)
            + 2;
        let mut out = format!("{:<width$}", "true\\pred");
        for c in &self.classes {
            write!(out, "{c:>width$}").unwrap();
        }
        writeln!(out, "{:>width$}", "acc%").unwrap();
        let accs = self.per_class_accuracy();
        for (i, row) in self.counts.iter().enumerate() {
            write!(out, "{:<width$}", self.classes[i]).unwrap();
            for c in row {
                write!(out, "{c:>width$}").unwrap();
            }
            match accs[i] {
                Some(a) => writeln!(out, "{:>width$.1}", a * 100.0).unwrap(),
                None => writeln!(out, "{:>width$}", "-").unwrap(),
            }
        }
        writeln!(out, "average accuracy: {:.2}%", self.average_accuracy() * 100.0).unwrap();
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true");
        for c in &self.classes {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&self.classes[i]);
            for c in row {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub group: ConfusionMatrix,
    pub page: ConfusionMatrix,
}

/// Page verdict with its group-level detail.
#[derive(Debug, Clone, PartialEq)]
pub struct PagePrediction {
    pub page_id: String,
    pub label: usize,
    pub groups: Vec<GroupPrediction>,
}

/// A trained classifier bound to the extraction settings it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub format_version: u32,
    pub layout_hash: String,
    pub extraction_hash: String,
    pub config: PipelineConfig,
    pub classifier: Classifier,
}

impl Model {
    pub fn train(set: &FeatureSet, config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        check_compatible(set, config)?;
        let rows: Vec<&[f64]> = set.samples.iter().map(|s| s.sample.vector.as_slice()).collect();
        let labels: Vec<&str> = set.samples.iter().map(|s| s.label.as_str()).collect();
        let classifier = Classifier::train(&rows, &labels, &config.classifier, config.seed).map_err(|e| match e {
            Error::Validation(m) if m.starts_with("sample ") => {
                let i: usize = m[7..].split(' ').next().and_then(|s| s.parse().ok()).unwrap_or(0);
                let s = &set.samples[i].sample;
                Error::Validation(format!("page `{}` group {}: {m}", s.page_id, s.group_index))
            }
            other => other,
        })?;
        Ok(Self {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            layout_hash: set.layout.hash(),
            extraction_hash: config.extraction_hash(),
            config: config.clone(),
            classifier,
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.config.gabor_mode)
    }

    pub fn classes(&self) -> &[String] {
        &self.classifier.classes
    }

    pub fn predict_group(&self, x: &[f64]) -> Result<GroupPrediction> {
        self.classifier.predict(x)
    }

    /// Rejects feature sets extracted with different settings.
    pub fn check_features(&self, set: &FeatureSet) -> Result<()> {
        if set.layout.hash() != self.layout_hash {
            return Err(Error::Validation(format!(
                "feature layout {} does not match model layout {}",
                set.layout.hash(),
                self.layout_hash
            )));
        }
        if set.extraction_hash != self.extraction_hash {
            return Err(Error::Validation(format!(
                "features were extracted with config {} but the model expects {}",
                set.extraction_hash, self.extraction_hash
            )));
        }
        Ok(())
    }

    /// Groups samples by page (in order of first appearance) and votes.
    pub fn predict_pages(&self, samples: &[LabeledSample]) -> Result<Vec<PagePrediction>> {
        let mut pages: Vec<PagePrediction> = Vec::new();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for s in samples {
            let g = self.predict_group(s.sample.vector.as_slice())?;
            let slot = *index.entry(&s.sample.page_id).or_insert_with(|| {
                pages.push(PagePrediction {
                    page_id: s.sample.page_id.clone(),
                    label: 0,
                    groups: Vec::new(),
                });
                pages.len() - 1
            });
            pages[slot].groups.push(g);
        }
        for p in &mut pages {
            p.label = page_decision(&p.groups)?;
        }
        Ok(pages)
    }

    pub fn evaluate(&self, set: &FeatureSet) -> Result<Evaluation> {
        self.check_features(set)?;
        let classes = self.classes().to_vec();
        let mut group = ConfusionMatrix::new(classes.clone());
        let mut page = ConfusionMatrix::new(classes);
        let mut truth: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &set.samples {
            let t = self.classifier.class_index(&s.label).ok_or_else(|| {
                Error::Validation(format!("test label `{}` was not seen in training", s.label))
            })?;
            if let Some(&prev) = truth.get(s.sample.page_id.as_str()) {
                if prev != t {
                    return Err(Error::Validation(format!(
                        "page `{}` carries two labels",
                        s.sample.page_id
                    )));
                }
            }
            truth.insert(&s.sample.page_id, t);
        }
        for p in self.predict_pages(&set.samples)? {
            let t = truth[p.page_id.as_str()];
            for g in &p.groups {
                group.record(t, g.label);
            }
            page.record(t, p.label);
        }
        Ok(Evaluation { group, page })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Model =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        if model.format != MODEL_FORMAT || model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format {} v{}",
                model.format, model.format_version
            )));
        }
        let layout = model.layout();
        if model.layout_hash != layout.hash() {
            return Err(Error::Validation(format!(
                "model layout hash {} does not match this build's {}",
                model.layout_hash,
                layout.hash()
            )));
        }
        let k = model.classifier.classes.len();
        if model.classifier.pairs.len() != k * (k - 1) / 2
            || model.classifier.dim() != layout.dim()
            || model.classifier.pairs.iter().any(|p| p.weights.len() != layout.dim())
        {
            return Err(Error::Validation("model file is internally inconsistent".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn check_compatible(set: &FeatureSet, config: &PipelineConfig) -> Result<()> {
    let want = FeatureLayout::new(config.gabor_mode);
    if set.layout != want {
        return Err(Error::Validation(format!(
            "feature layout {} does not match config layout {}",
            set.layout.hash(),
            want.hash()
        )));
    }
    if set.extraction_hash != config.extraction_hash() {
        return Err(Error::Validation(format!(
            "features were extracted with config {} but training uses {}",
            set.extraction_hash,
            config.extraction_hash()
        )));
    }
    Ok(())
}
