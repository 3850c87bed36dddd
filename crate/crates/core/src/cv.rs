//! Patient-stratified k-fold cross-validation and the models it compares.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::direct::{pretune_fhn, PretuneConfig};
use crate::error::{Error, Result};
use crate::fhn::{DriveConfig, FhnParams};
use crate::forest::{rf_predict, rf_train, DEFAULT_TREES};
use crate::hrv::FEATURE_COUNT;
use crate::metrics::{roc_auc, youden_point};
use crate::net::{ModelLayout, Sample};
use crate::rr::{FoldAssignment, Label};
use crate::train::{train, ModelInit, TrainConfig};

/// One segment as seen by the harness.
#[derive(Debug, Clone, Copy)]
pub struct Item<'a> {
    pub patient: &'a str,
    pub label: Label,
    pub intervals: &'a [u32],
    /// Raw HRV features, when computed.
    pub hrv: Option<&'a [f64]>,
}

impl<'a> Item<'a> {
    pub fn sample(&self) -> Sample<'a> {
        Sample {
            intervals: self.intervals,
            hrv: self.hrv,
            label: self.label,
        }
    }
}

/// Something that can be trained on one fold and score the held-out part.
pub trait FoldModel: Sync {
    fn fit_score(&self, fold: usize, train: &[Item<'_>], test: &[Item<'_>]) -> Result<Vec<f64>>;
}

/// Sensitivity, specificity and AUC of one fold; `None` marks a metric that
/// is undefined because the test set lacks a class.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub youden_threshold: Option<f64>,
    pub youden_j: Option<f64>,
    pub n: usize,
}

impl FoldMetrics {
    pub fn compute(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape {
                expected: labels.len(),
                got: scores.len(),
            });
        }
        let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
        for (&s, l) in scores.iter().zip(labels) {
            match (l.is_positive(), s >= threshold) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
            }
        }
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        let both = tp + fn_ > 0 && tn + fp > 0;
        let (auc, youden) = if both {
            (Some(roc_auc(scores, labels)?), Some(youden_point(scores, labels)?))
        } else {
            (None, None)
        };
        Ok(FoldMetrics {
            sensitivity: ratio(tp, fn_),
            specificity: ratio(tn, fp),
            auc,
            youden_threshold: youden.map(|y| y.0),
            youden_j: youden.map(|y| y.1),
            n: scores.len(),
        })
    }
}

/// Mean and population standard deviation over the folds where a metric is
/// defined.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Summary {
            mean,
            std: libm::sqrt(var),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregate {
    pub sensitivity: Option<Summary>,
    pub specificity: Option<Summary>,
    pub auc: Option<Summary>,
}

impl Aggregate {
    fn over(folds: &[FoldMetrics]) -> Self {
        let pick = |f: fn(&FoldMetrics) -> Option<f64>| -> Option<Summary> {
            let v: Vec<f64> = folds.iter().filter_map(f).collect();
            Summary::of(&v)
        };
        Aggregate {
            sensitivity: pick(|m| m.sensitivity),
            specificity: pick(|m| m.specificity),
            auc: pick(|m| m.auc),
        }
    }
}

/// A held-out score.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scored {
    pub patient: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldOutcome {
    pub fold: usize,
    pub n_train: usize,
    pub segment: FoldMetrics,
    pub patient: FoldMetrics,
    pub scores: Vec<Scored>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldReport {
    pub n_folds: usize,
    pub threshold: f64,
    pub folds: Vec<FoldOutcome>,
    pub segment: Aggregate,
    pub patient: Aggregate,
    pub warnings: Vec<String>,
}

impl FoldReport {
    /// Orders outcomes by fold and aggregates them.
    pub fn assemble(mut folds: Vec<FoldOutcome>, threshold: f64) -> Self {
        folds.sort_by_key(|f| f.fold);
        let mut warnings = Vec::new();
        for f in &folds {
            if f.segment.auc.is_none() {
                warnings.push(format!("fold {}: single-class test set, AUC excluded", f.fold));
            }
        }
        let seg: Vec<FoldMetrics> = folds.iter().map(|f| f.segment).collect();
        let pat: Vec<FoldMetrics> = folds.iter().map(|f| f.patient).collect();
        FoldReport {
            n_folds: folds.len(),
            threshold,
            segment: Aggregate::over(&seg),
            patient: Aggregate::over(&pat),
            folds,
            warnings,
        }
    }

    /// All held-out scores in fold order.
    pub fn pooled(&self) -> (Vec<f64>, Vec<Label>) {
        self.folds
            .iter()
            .flat_map(|f| f.scores.iter())
            .map(|s| (s.score, s.label))
            .unzip()
    }
}

/// Mean segment score per patient, patients in id order.
pub fn patient_scores(scores: &[Scored]) -> Vec<(String, Label, f64)> {
    let mut acc: BTreeMap<&str, (Label, f64, usize)> = BTreeMap::new();
    for s in scores {
        let e = acc.entry(&s.patient).or_insert((s.label, 0.0, 0));
        e.1 += s.score;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(p, (l, sum, n))| (String::from(p), l, sum / n as f64))
        .collect()
}

/// Splits `items` for `fold`, checks the split, trains and scores.
pub fn run_fold(
    items: &[Item<'_>],
    folds: &FoldAssignment,
    fold: usize,
    model: &dyn FoldModel,
    threshold: f64,
) -> Result<FoldOutcome> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for it in items {
        match folds.fold_of(it.patient) {
            Some(f) if f == fold => test.push(*it),
            Some(_) => train.push(*it),
            None => return Err(Error::Integrity(format!("patient {} has no fold", it.patient))),
        }
    }
    let train_patients: BTreeSet<&str> = train.iter().map(|i| i.patient).collect();
    if let Some(p) = test.iter().find(|i| train_patients.contains(i.patient)) {
        return Err(Error::Integrity(format!(
            "fold {fold}: patient {} is in both training and test data",
            p.patient
        )));
    }
    if test.is_empty() {
        return Err(Error::Argument(format!("fold {fold} has no test segments")));
    }
    if !(train.iter().any(|i| i.label.is_positive()) && train.iter().any(|i| !i.label.is_positive())) {
        return Err(Error::Argument(format!("fold {fold}: training data lacks a class")));
    }
    let raw = model.fit_score(fold, &train, &test)?;
    if raw.len() != test.len() {
        return Err(Error::Shape {
            expected: test.len(),
            got: raw.len(),
        });
    }
    let labels: Vec<Label> = test.iter().map(|i| i.label).collect();
    let segment = FoldMetrics::compute(&raw, &labels, threshold)?;
    let scores: Vec<Scored> = test
        .iter()
        .zip(&raw)
        .map(|(i, &score)| Scored {
            patient: String::from(i.patient),
            label: i.label,
            score,
        })
        .collect();
    let per_patient = patient_scores(&scores);
    let p_scores: Vec<f64> = per_patient.iter().map(|p| p.2).collect();
    let p_labels: Vec<Label> = per_patient.iter().map(|p| p.1).collect();
    let patient = FoldMetrics::compute(&p_scores, &p_labels, threshold)?;
    Ok(FoldOutcome {
        fold,
        n_train: train.len(),
        segment,
        patient,
        scores,
    })
}

/// Runs every fold in turn.
pub fn cross_validate(
    items: &[Item<'_>],
    folds: &FoldAssignment,
    model: &dyn FoldModel,
    threshold: f64,
) -> Result<FoldReport> {
    let outcomes = (0..folds.k)
        .map(|f| run_fold(items, folds, f, model, threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldReport::assemble(outcomes, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ModelKind {
    Deep,
    DeepTraditional,
    Traditional,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "deep" => Some(ModelKind::Deep),
            "deep+trad" | "deep+traditional" => Some(ModelKind::DeepTraditional),
            "trad" | "traditional" => Some(ModelKind::Traditional),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Deep => "deep",
            ModelKind::DeepTraditional => "deep+trad",
            ModelKind::Traditional => "trad",
        }
    }

    pub fn needs_hrv(self) -> bool {
        self != ModelKind::Deep
    }
}

/// Oscillator parameters used when pre-tuning is skipped: the center of the
/// pre-tuning box.
pub fn default_population(n: usize) -> Vec<FhnParams> {
    vec![FhnParams::new(1.55, libm::sqrt(0.005 * 0.5), 1.55, 0.5); n]
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeepConfig {
    pub n_neurons: usize,
    pub hidden: Vec<usize>,
    pub fused: bool,
    pub drive: DriveConfig,
    pub train: TrainConfig,
    /// `None` skips pre-tuning.
    pub pretune: Option<PretuneConfig>,
}

/// Pre-tunes (optionally) and trains a hybrid model on the given samples.
pub fn fit_deep(cfg: &DeepConfig, train_items: &[Item<'_>], seed: u64) -> Result<crate::net::HybridModel> {
    let population = match &cfg.pretune {
        Some(p) => {
            let data: Vec<(&[u32], Label)> = train_items.iter().map(|i| (i.intervals, i.label)).collect();
            let pc = PretuneConfig { seed, ..*p };
            pretune_fhn(&data, cfg.n_neurons, &cfg.drive, &pc)?.population
        }
        None => default_population(cfg.n_neurons),
    };
    let n_hrv = if cfg.fused { FEATURE_COUNT } else { 0 };
    let init = ModelInit {
        layout: ModelLayout::new(cfg.n_neurons, n_hrv, cfg.hidden.clone())?,
        population,
        drive: cfg.drive,
    };
    let samples: Vec<Sample<'_>> = train_items.iter().map(Item::sample).collect();
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    Ok(train(&samples, &init, &tc)?.0)
}

impl FoldModel for DeepConfig {
    fn fit_score(&self, fold: usize, train_items: &[Item<'_>], test: &[Item<'_>]) -> Result<Vec<f64>> {
        let model = fit_deep(self, train_items, self.train.seed.wrapping_add(fold as u64))?;
        test.iter().map(|i| model.predict(i.intervals, i.hrv)).collect()
    }
}

/// Random forest on HRV features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: DEFAULT_TREES,
            seed: 0,
        }
    }
}

fn hrv_rows<'a>(items: &[Item<'a>]) -> Result<Vec<&'a [f64]>> {
    items
        .iter()
        .map(|i| i.hrv.ok_or_else(|| Error::Argument(format!("segment of {} lacks HRV features", i.patient))))
        .collect()
}

impl FoldModel for ForestConfig {
    fn fit_score(&self, fold: usize, train_items: &[Item<'_>], test: &[Item<'_>]) -> Result<Vec<f64>> {
        let x = hrv_rows(train_items)?;
        let y: Vec<Label> = train_items.iter().map(|i| i.label).collect();
        let rf = rf_train(&x, &y, self.n_trees, self.seed.wrapping_add(fold as u64))?;
        Ok(hrv_rows(test)?.iter().map(|r| rf_predict(&rf, r)).collect())
    }
}

/// Scores each segment with its true label.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel;

impl FoldModel for OracleModel {
    fn fit_score(&self, _: usize, _: &[Item<'_>], test: &[Item<'_>]) -> Result<Vec<f64>> {
        Ok(test.iter().map(|i| i.label.as_f64()).collect())
    }
}

/// Uniform random scores, ignoring the data.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomModel {
    pub seed: u64,
}

impl FoldModel for RandomModel {
    fn fit_score(&self, fold: usize, _: &[Item<'_>], test: &[Item<'_>]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fold as u64);
        Ok(test.iter().map(|_| rng.random::<f64>()).collect())
    }
}
