//! Command definitions and their implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fhnet_core::cv::{DeepConfig, FoldMetrics, FoldModel, FoldOutcome, FoldReport, ForestConfig, Item, ModelKind, Scored};
use fhnet_core::direct::{pretune_fhn, PretuneConfig};
use fhnet_core::fhn::DriveConfig;
use fhnet_core::forest::rf_train;
use fhnet_core::hrv::FEATURE_COUNT;
use fhnet_core::metrics::{ctni_triage, roc_curve, CTNI_THRESHOLD};
use fhnet_core::net::{ModelLayout, Sample, DEFAULT_HIDDEN, DEFAULT_NEURONS};
use fhnet_core::rr::{stratified_folds, synth_dataset, Dataset, Label, RrSegment, SynthConfig};
use fhnet_core::train::{train_observed, EpochRecord, ModelInit, TrainConfig};

use crate::checkpoint::{Checkpoint, LoadedModel};
use crate::error::{Error, Result};
use crate::io;
use crate::parallel;

#[derive(Debug, Parser)]
#[command(name = "fhnet", version, about = "FitzHugh-Nagumo hybrid networks for RR-interval classification")]
pub struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-class segment file.
    Synth(SynthArgs),
    /// Train one model on a segment file and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint, or cross-validate a model kind, on a segment file.
    Eval(EvalArgs),
    /// Write the HRV feature matrix of a segment file.
    Features(FeaturesArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub patients_per_class: usize,
    /// Segments per patient.
    #[arg(long, default_value_t = 20)]
    pub segments: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Deep,
    #[value(name = "deep+trad")]
    DeepTrad,
    Trad,
}

impl From<ModelChoice> for ModelKind {
    fn from(c: ModelChoice) -> Self {
        match c {
            ModelChoice::Deep => ModelKind::Deep,
            ModelChoice::DeepTrad => ModelKind::DeepTraditional,
            ModelChoice::Trad => ModelKind::Traditional,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "deep")]
    pub model: ModelChoice,
    #[arg(long, default_value_t = DEFAULT_NEURONS)]
    pub neurons: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HIDDEN.to_vec())]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub clamp_frac: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Multiplier on the learning rate for oscillator parameters.
    #[arg(long, default_value_t = 0.01)]
    pub oscillator_lr_scale: f64,
    #[arg(long, default_value_t = 32)]
    pub minibatch: usize,
    /// Objective evaluations for oscillator pre-tuning; 0 skips it.
    #[arg(long, default_value_t = 100)]
    pub pretune_budget: usize,
    /// Segments per class used by the pre-tuning objective.
    #[arg(long, default_value_t = 40)]
    pub pretune_per_class: usize,
    /// Trees in the random forest.
    #[arg(long, default_value_t = 30)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn kind(&self) -> ModelKind {
        self.model.into()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs_max: self.epochs,
            clamp_fraction: self.clamp_frac,
            minibatch_size: self.minibatch,
            lambda: self.lambda,
            lr: self.lr,
            oscillator_lr_scale: self.oscillator_lr_scale,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn pretune_config(&self) -> Option<PretuneConfig> {
        (self.pretune_budget > 0).then(|| PretuneConfig {
            budget: self.pretune_budget,
            per_class: self.pretune_per_class,
            seed: self.seed,
            ..PretuneConfig::default()
        })
    }

    pub fn deep_config(&self) -> DeepConfig {
        DeepConfig {
            n_neurons: self.neurons,
            hidden: self.hidden.clone(),
            fused: self.kind() == ModelKind::DeepTraditional,
            drive: DriveConfig::default(),
            train: self.train_config(),
            pretune: self.pretune_config(),
        }
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.trees,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log path; defaults to the checkpoint path with `.log` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Pre-tuning evaluation trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "cv", conflicts_with = "cv")]
    pub checkpoint: Option<PathBuf>,
    /// Cross-validate with this many patient-stratified folds.
    #[arg(long)]
    pub cv: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Decision threshold for sensitivity and specificity.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// `patient_id,label,ctni_value` file for the biomarker comparator.
    #[arg(long)]
    pub ctni_file: Option<PathBuf>,
    #[arg(long, default_value_t = CTNI_THRESHOLD)]
    pub ctni_threshold: f64,
    /// `fpr,tpr,threshold` CSV of the pooled held-out scores.
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
    /// Structured report; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-fold metrics CSV.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    /// Fold assignment used for cross-validation.
    #[arg(long)]
    pub folds_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    parallel::with_threads(threads, move || match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Features(a) => cmd_features(&a),
    })?
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let ds = synth_dataset(a.patients_per_class, a.segments, &SynthConfig::default(), a.seed)?;
    io::write_text(&a.out, &ds.to_text())
}

/// Fails with a listing of every segment the quality filter rejects.
fn require_filtered(ds: &Dataset) -> Result<()> {
    let (_, rejected) = ds.partition_filtered();
    if rejected.is_empty() {
        return Ok(());
    }
    let listing = rejected
        .iter()
        .map(|(s, r)| format!("  {} [{}]: {r}", s.segment_id, r.rule_ids().join(",")))
        .collect::<Vec<_>>()
        .join("\n");
    Err(Error::Unfiltered {
        count: rejected.len(),
        listing,
    })
}

/// Raw HRV features for every segment, or nothing when the model does not
/// use them.
fn hrv_table(ds: &Dataset, needed: bool) -> Result<Option<Vec<Vec<f64>>>> {
    if !needed {
        return Ok(None);
    }
    let segs: Vec<&RrSegment> = ds.segments().iter().collect();
    let f = parallel::features_for(&segs)?;
    Ok(Some(f.into_iter().map(|x| x.as_slice().to_vec()).collect()))
}

fn items<'a>(ds: &'a Dataset, hrv: Option<&'a [Vec<f64>]>) -> Vec<Item<'a>> {
    ds.segments()
        .iter()
        .enumerate()
        .map(|(i, s)| Item {
            patient: &s.patient_id,
            label: s.label,
            intervals: &s.intervals,
            hrv: hrv.map(|h| h[i].as_slice()),
        })
        .collect()
}

fn log_path(a: &TrainArgs) -> PathBuf {
    a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    })
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let ds = io::read_dataset(&a.data)?;
    require_filtered(&ds)?;
    let kind = a.model.kind();
    let hrv = hrv_table(&ds, kind.needs_hrv())?;
    let items = items(&ds, hrv.as_deref());
    let seed = a.model.seed;
    if kind == ModelKind::Traditional {
        let x: Vec<&[f64]> = items.iter().map(|i| i.hrv.unwrap_or_default()).collect();
        let y: Vec<Label> = items.iter().map(|i| i.label).collect();
        let rf = rf_train(&x, &y, a.model.trees, seed)?;
        return Checkpoint::forest(rf, seed).save(&a.out);
    }
    let cfg = a.model.deep_config();
    let population = match &cfg.pretune {
        Some(p) => {
            let data: Vec<(&[u32], Label)> = items.iter().map(|i| (i.intervals, i.label)).collect();
            let r = pretune_fhn(&data, cfg.n_neurons, &cfg.drive, p)?;
            log::info!("pre-tuning: proxy {} (box center {})", r.proxy_loss, r.center_loss);
            if let Some(t) = &a.trace {
                io::write_text(t, &io::trace_text(&r.search))?;
            }
            r.population
        }
        None => fhnet_core::cv::default_population(cfg.n_neurons),
    };
    let init = ModelInit {
        layout: ModelLayout::new(cfg.n_neurons, if cfg.fused { FEATURE_COUNT } else { 0 }, cfg.hidden.clone())?,
        population,
        drive: cfg.drive,
    };
    let samples: Vec<Sample<'_>> = items.iter().map(Item::sample).collect();
    let mut observer = |r: &EpochRecord, _: &fhnet_core::net::HybridModel| {
        log::info!("epoch {}: J {} |g| {} clamped {}", r.epoch, r.mean_j, r.grad_norm, r.clamped);
    };
    let (model, log) = train_observed(&samples, &init, &cfg.train, &mut observer)?;
    io::write_text(&log_path(a), &log.to_text())?;
    Checkpoint::hybrid(kind, &model, &cfg.train, cfg.pretune, seed).save(&a.out)
}

fn outcome_for(scores: Vec<Scored>, threshold: f64) -> Result<FoldOutcome> {
    let s: Vec<f64> = scores.iter().map(|x| x.score).collect();
    let l: Vec<Label> = scores.iter().map(|x| x.label).collect();
    let segment = FoldMetrics::compute(&s, &l, threshold)?;
    let per_patient = fhnet_core::cv::patient_scores(&scores);
    let ps: Vec<f64> = per_patient.iter().map(|p| p.2).collect();
    let pl: Vec<Label> = per_patient.iter().map(|p| p.1).collect();
    Ok(FoldOutcome {
        fold: 0,
        n_train: 0,
        segment,
        patient: FoldMetrics::compute(&ps, &pl, threshold)?,
        scores,
    })
}

fn ctni_block(path: &Path, ds: &Dataset, threshold: f64) -> Result<(fhnet_core::metrics::TriageMetrics, usize)> {
    let records = io::parse_ctni(&io::read_text(path)?, path)?;
    for r in &records {
        if let Some(l) = ds.label_of(&r.patient_id) {
            if l != r.label {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: 0,
                    msg: format!("patient {} label disagrees with the segment file", r.patient_id),
                });
            }
        }
    }
    let values: Vec<f64> = records.iter().map(|r| r.value).collect();
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    Ok((ctni_triage(&values, &labels, threshold)?, records.len()))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = io::read_dataset(&a.data)?;
    require_filtered(&ds)?;
    let report = match (&a.checkpoint, a.cv) {
        (Some(path), _) => {
            let model = Checkpoint::load(path)?.to_model()?;
            let hrv = hrv_table(&ds, model.needs_hrv())?;
            let its = items(&ds, hrv.as_deref());
            let scores = score_all(&model, &its)?;
            FoldReport::assemble(vec![outcome_for(scores, a.threshold)?], a.threshold)
        }
        (None, Some(k)) => {
            let kind = a.model.kind();
            let folds = stratified_folds(&ds, k, a.model.seed)?;
            if let Some(p) = &a.folds_out {
                io::write_text(p, &io::folds_text(&folds))?;
            }
            let hrv = hrv_table(&ds, kind.needs_hrv())?;
            let its = items(&ds, hrv.as_deref());
            let deep;
            let forest;
            let model: &dyn FoldModel = if kind == ModelKind::Traditional {
                forest = a.model.forest_config();
                &forest
            } else {
                deep = a.model.deep_config();
                &deep
            };
            parallel::cross_validate(&its, &folds, model, a.threshold)?
        }
        (None, None) => unreachable!("clap requires --checkpoint or --cv"),
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let ctni = match &a.ctni_file {
        Some(p) => Some(ctni_block(p, &ds, a.ctni_threshold)?),
        None => None,
    };
    let text = io::report_text(&report, ctni.as_ref().map(|(m, n)| (m, a.ctni_threshold, *n)))?;
    match &a.report {
        Some(p) => io::write_text(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = &a.csv_out {
        io::write_text(p, &io::report_csv(&report))?;
    }
    if let Some(p) = &a.roc_out {
        let (s, l) = report.pooled();
        io::write_text(p, &io::roc_csv(&roc_curve(&s, &l)?))?;
    }
    Ok(())
}

fn score_all(model: &LoadedModel, items: &[Item<'_>]) -> Result<Vec<Scored>> {
    use rayon::prelude::*;
    items
        .par_iter()
        .map(|i| {
            Ok(Scored {
                patient: i.patient.to_string(),
                label: i.label,
                score: model.predict(i.intervals, i.hrv)?,
            })
        })
        .collect()
}

pub fn cmd_features(a: &FeaturesArgs) -> Result<()> {
    let ds = io::read_dataset(&a.data)?;
    let (accepted, rejected) = ds.partition_filtered();
    for (s, r) in &rejected {
        log::warn!("segment {} rejected [{}]: {r}", s.segment_id, r.rule_ids().join(","));
    }
    let features = parallel::features_for(&accepted)?;
    let rows: Vec<(&RrSegment, _)> = accepted.into_iter().zip(features).collect();
    io::write_text(&a.out, &io::features_csv(&rows))
}
