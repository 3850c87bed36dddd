//! Adam and the training schedule.
//!
//! Training maximizes the penalized log-likelihood `J` (Adam minimizes
//! `-J`). The oscillator parameters and the drive amplitude are frozen for
//! the first `ceil(clamp_fraction * epochs_max)` epochs; while frozen, the
//! firing rates are computed once and only the head is traced.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fhn::{DriveConfig, FhnParams};
use crate::net::{init_weights, HybridModel, ModelLayout, ParamVector, Sample, Standardizer};
use crate::rr::Label;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-entry multiplier on `lr`.
    pub lr_scale: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_scale: vec![1.0; n],
        }
    }

    /// One bias-corrected update of `params` against the loss gradient
    /// `grad`. Entries with `frozen[k]` keep their value and their moments.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], frozen: &[bool]) -> Result<()> {
        let n = self.m.len();
        if params.len() != n || grad.len() != n || frozen.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: params.len().min(grad.len()).min(frozen.len()),
            });
        }
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Optimizer(format!("non-finite gradient at entry {k}")));
        }
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for k in 0..n {
            if frozen[k] {
                continue;
            }
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= self.lr * self.lr_scale[k] * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub clamp_fraction: f64,
    pub minibatch_size: usize,
    pub lambda: f64,
    pub lr: f64,
    /// Multiplier on `lr` for the oscillator parameters and the amplitude.
    pub oscillator_lr_scale: f64,
    pub convergence_tol: f64,
    pub convergence_patience: usize,
    pub init_sigma: f64,
    /// Minibatches whose gradient norm exceeds this are skipped.
    pub max_grad_norm: f64,
    /// Standardize firing rates with training statistics taken at the
    /// initial oscillator parameters.
    pub standardize_rates: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 200,
            clamp_fraction: 0.1,
            minibatch_size: 32,
            lambda: 1e-3,
            lr: 1e-3,
            oscillator_lr_scale: 0.01,
            convergence_tol: 1e-5,
            convergence_patience: 10,
            init_sigma: 0.1,
            max_grad_norm: 1e6,
            standardize_rates: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_max == 0 {
            return Err(Error::Argument("epochs_max must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.clamp_fraction) {
            return Err(Error::Argument(format!(
                "clamp fraction {} outside [0, 1]",
                self.clamp_fraction
            )));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Argument("minibatch size must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lr > 0.0 && self.oscillator_lr_scale >= 0.0 && self.convergence_tol >= 0.0) {
            return Err(Error::Argument("lambda, lr, lr scale and tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of leading epochs with frozen oscillators.
    pub fn clamp_epochs(&self) -> usize {
        libm::ceil(self.clamp_fraction * self.epochs_max as f64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-size weighted mean of the minibatch objectives.
    pub mean_j: f64,
    /// Mean Euclidean norm of the minibatch loss gradients.
    pub grad_norm: f64,
    pub clamped: bool,
    pub skipped_batches: usize,
}

impl EpochRecord {
    /// `epoch,mean_J,grad_norm,clamped`
    pub fn to_line(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.mean_j, self.grad_norm, self.clamped)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub converged: bool,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInit {
    pub layout: ModelLayout,
    pub population: Vec<FhnParams>,
    pub drive: DriveConfig,
}

/// Called after every epoch with the model as it stands.
pub trait EpochObserver {
    fn epoch_done(&mut self, record: &EpochRecord, model: &HybridModel);
}

impl EpochObserver for () {
    fn epoch_done(&mut self, _: &EpochRecord, _: &HybridModel) {}
}

impl<F: FnMut(&EpochRecord, &HybridModel)> EpochObserver for F {
    fn epoch_done(&mut self, record: &EpochRecord, model: &HybridModel) {
        self(record, model)
    }
}

pub fn train(samples: &[Sample<'_>], init: &ModelInit, cfg: &TrainConfig) -> Result<(HybridModel, TrainLog)> {
    train_observed(samples, init, cfg, &mut ())
}

fn rates_for(model: &HybridModel, samples: &[Sample<'_>], readout: crate::fhn::Readout) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            model.raw_rates(s.intervals, readout).map_err(|e| Error::Training {
                epoch: 0,
                sample: index,
                source: e.into(),
            })
        })
        .collect()
}

pub fn train_observed(
    samples: &[Sample<'_>],
    init: &ModelInit,
    cfg: &TrainConfig,
    observer: &mut dyn EpochObserver,
) -> Result<(HybridModel, TrainLog)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Argument("no training samples".into()));
    }
    let layout = init.layout.clone();
    let head = init_weights(&layout.layer_sizes(), cfg.init_sigma, cfg.seed)?;
    let params = ParamVector::assemble(layout.clone(), &init.population, init.drive.amplitude, &head)?;
    let mut model = HybridModel::new(params, init.drive)?;
    if layout.n_hrv > 0 {
        let rows: Vec<&[f64]> = samples
            .iter()
            .map(|s| s.hrv.ok_or_else(|| Error::Argument("sample lacks an HRV block".into())))
            .collect::<Result<_>>()?;
        model.hrv = Some(Standardizer::fit(&rows)?);
    }

    let smooth = model.training_readout();
    let initial_rates = rates_for(&model, samples, smooth)?;
    if cfg.standardize_rates {
        model.rates.smooth = Standardizer::fit(&initial_rates)?;
    }
    let frozen_inputs: Vec<Vec<f64>> = initial_rates
        .iter()
        .zip(samples)
        .map(|(r, s)| model.head_input(r, s.hrv, smooth))
        .collect::<Result<_>>()?;

    let n_params = layout.param_count();
    let mut adam = AdamState::new(n_params, cfg.lr);
    for k in layout.fhn_range() {
        adam.lr_scale[k] = cfg.oscillator_lr_scale;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let clamp_epochs = cfg.clamp_epochs();
    let mut log = TrainLog::default();
    let mut stalled = 0usize;

    for epoch in 1..=cfg.epochs_max {
        let clamped = epoch <= clamp_epochs;
        model.params.set_oscillators_clamped(clamped);
        order.shuffle(&mut rng);
        let (mut j_sum, mut norm_sum, mut batches, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.minibatch_size) {
            let obj = if clamped {
                let inputs: Vec<(&[f64], Label)> = chunk
                    .iter()
                    .map(|&i| (frozen_inputs[i].as_slice(), samples[i].label))
                    .collect();
                model.head_objective(&inputs, cfg.lambda)
            } else {
                let batch: Vec<Sample<'_>> = chunk.iter().map(|&i| samples[i]).collect();
                model.objective(&batch, cfg.lambda)
            }
            .map_err(|e| match e {
                Error::Sample { index, source } => Error::Training {
                    epoch,
                    sample: chunk[index],
                    source,
                },
                other => Error::Training {
                    epoch,
                    sample: chunk[0],
                    source: other.into(),
                },
            })?;
            let loss_grad: Vec<f64> = obj.gradient.iter().map(|g| -g).collect();
            let norm = libm::sqrt(
                loss_grad
                    .iter()
                    .zip(&model.params.clamp_mask)
                    .filter(|(_, &f)| !f)
                    .map(|(g, _)| g * g)
                    .sum::<f64>(),
            );
            j_sum += obj.value * chunk.len() as f64;
            batches += 1;
            if !(norm <= cfg.max_grad_norm) || !obj.value.is_finite() {
                skipped += 1;
                continue;
            }
            norm_sum += norm;
            let ParamVector {
                values, clamp_mask, ..
            } = &mut model.params;
            adam.step(values, &loss_grad, clamp_mask)?;
        }
        let record = EpochRecord {
            epoch,
            mean_j: j_sum / samples.len() as f64,
            grad_norm: if batches > skipped {
                norm_sum / (batches - skipped) as f64
            } else {
                f64::NAN
            },
            clamped,
            skipped_batches: skipped,
        };
        let previous = log.epochs.last().map(|r| r.mean_j);
        log.epochs.push(record);
        observer.epoch_done(&record, &model);
        if !clamped {
            if let Some(prev) = previous {
                if record.mean_j - prev < cfg.convergence_tol {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
            }
            if stalled >= cfg.convergence_patience {
                log.converged = true;
                break;
            }
        }
    }
    model.params.set_oscillators_clamped(false);
    calibrate_hard_rates(&mut model, samples)?;
    Ok((model, log))
}

/// Maps hard-readout rates onto the scale the head was trained on: after
/// scaling, their training mean and deviation equal those of the scaled
/// smooth-readout rates at the final parameters.
pub fn calibrate_hard_rates(model: &mut HybridModel, samples: &[Sample<'_>]) -> Result<()> {
    let smooth = rates_for(model, samples, model.training_readout())?;
    let hard = rates_for(model, samples, crate::fhn::Readout::Hard)?;
    let scaled: Vec<Vec<f64>> = smooth.iter().map(|r| model.rates.smooth.apply(r)).collect();
    let target = Standardizer::fit(&scaled)?;
    let observed = Standardizer::fit(&hard)?;
    let n = model.layout().n_neurons;
    let mut mean = vec![0.0; n];
    let mut scale = vec![1.0; n];
    for k in 0..n {
        scale[k] = observed.scale[k] / target.scale[k];
        mean[k] = observed.mean[k] - target.mean[k] * scale[k];
    }
    model.rates.hard = Standardizer { mean, scale };
    Ok(())
}
