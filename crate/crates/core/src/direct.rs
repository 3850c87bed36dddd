//! DIRECT (dividing rectangles) global minimization on a box, plus the two
//! searches built on it: oscillator pre-tuning and hyperparameter tuning.
//!
//! The box is mapped to the unit cube. Every rectangle has side `3^-k` along
//! each dimension, so sizes are tracked as integer levels and compared
//! exactly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fhn::{fhn_forward, DriveConfig, FhnParams, Readout};
use crate::metrics::roc_auc;
use crate::net::{ModelLayout, Sample, Standardizer};
use crate::rr::Label;
use crate::train::{train, ModelInit, TrainConfig};

pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Stand-in for non-finite objective values during selection.
const NON_FINITE_SURROGATE: f64 = 1e300;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Dimensions searched uniformly in `ln x` instead of `x`.
    pub log_scale: Vec<bool>,
}

impl SearchSpace {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        Self::with_log_scale(bounds, &vec![false; bounds.len()])
    }

    pub fn with_log_scale(bounds: &[(f64, f64)], log_scale: &[bool]) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Argument("search space needs at least one dimension".into()));
        }
        if log_scale.len() != bounds.len() {
            return Err(Error::Shape {
                expected: bounds.len(),
                got: log_scale.len(),
            });
        }
        for (i, (&(lo, hi), &lg)) in bounds.iter().zip(log_scale).enumerate() {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Argument(format!("dimension {i}: need finite lower < upper")));
            }
            if lg && lo <= 0.0 {
                return Err(Error::Argument(format!("dimension {i}: log scale needs positive bounds")));
            }
        }
        Ok(SearchSpace {
            lower: bounds.iter().map(|b| b.0).collect(),
            upper: bounds.iter().map(|b| b.1).collect(),
            log_scale: log_scale.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Maps a unit-cube point into the box.
    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &t)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                let x = if self.log_scale[i] {
                    libm::exp(libm::log(lo) + t * (libm::log(hi) - libm::log(lo)))
                } else {
                    lo + t * (hi - lo)
                };
                x.clamp(lo, hi)
            })
            .collect()
    }
}

fn third_pow(level: u32) -> f64 {
    let mut s = 1.0;
    for _ in 0..level {
        s /= 3.0;
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    /// Center in the unit cube.
    pub center: Vec<f64>,
    /// Side along dimension `i` is `3^-levels[i]`.
    pub levels: Vec<u32>,
    pub value: f64,
}

impl Rect {
    pub fn side(&self, i: usize) -> f64 {
        third_pow(self.levels[i])
    }

    pub fn volume(&self) -> f64 {
        self.levels.iter().map(|&l| third_pow(l)).product()
    }

    /// Half diagonal, computed from sorted levels so that congruent
    /// rectangles get bit-identical sizes.
    pub fn size(&self) -> f64 {
        let mut l = self.levels.clone();
        l.sort_unstable();
        0.5 * libm::sqrt(l.iter().map(|&k| third_pow(k) * third_pow(k)).sum::<f64>())
    }

    fn key(&self) -> f64 {
        if self.value.is_finite() {
            self.value
        } else {
            NON_FINITE_SURROGATE
        }
    }

    fn size_class(&self) -> Vec<u32> {
        let mut l = self.levels.clone();
        l.sort_unstable();
        l
    }
}

/// The current partition of the unit cube.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RectTree {
    pub rects: Vec<Rect>,
}

impl RectTree {
    pub fn total_volume(&self) -> f64 {
        self.rects.iter().map(Rect::volume).sum()
    }

    /// True when no two rectangles share interior points.
    pub fn interiors_disjoint(&self) -> bool {
        let tol = 1e-12;
        for (a_i, a) in self.rects.iter().enumerate() {
            for b in &self.rects[a_i + 1..] {
                let overlap = (0..a.center.len()).all(|i| {
                    let gap = libm::fabs(a.center[i] - b.center[i]);
                    gap + tol < 0.5 * (a.side(i) + b.side(i))
                });
                if overlap {
                    return false;
                }
            }
        }
        true
    }

    /// Indices of the potentially optimal rectangles, ascending.
    pub fn potentially_optimal(&self, eps: f64) -> Vec<usize> {
        // lowest value per size class, ties to the lowest index
        let mut classes: Vec<(Vec<u32>, f64, usize)> = Vec::new();
        for (i, r) in self.rects.iter().enumerate() {
            let class = r.size_class();
            match classes.iter_mut().find(|c| c.0 == class) {
                Some(c) => {
                    if r.key() < self.rects[c.2].key() {
                        c.2 = i;
                    }
                }
                None => classes.push((class, r.size(), i)),
            }
        }
        let f_min = self
            .rects
            .iter()
            .map(Rect::key)
            .fold(f64::INFINITY, f64::min);
        let target = f_min - eps * libm::fabs(f_min);
        let mut chosen = Vec::new();
        for &(_, d_j, j) in &classes {
            let f_j = self.rects[j].key();
            let mut k_low = 0.0f64;
            let mut k_high = f64::INFINITY;
            for &(_, d_i, i) in &classes {
                let f_i = self.rects[i].key();
                if d_i < d_j {
                    k_low = k_low.max((f_j - f_i) / (d_j - d_i));
                } else if d_i > d_j {
                    k_high = k_high.min((f_i - f_j) / (d_i - d_j));
                }
            }
            if k_high.is_infinite() {
                chosen.push(j);
                continue;
            }
            if k_high > 0.0 && k_low <= k_high && f_j - k_high * d_j <= target {
                chosen.push(j);
            }
        }
        chosen.sort_unstable();
        chosen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Point in the original box.
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    /// Every evaluation in order.
    pub trace: Vec<Evaluation>,
    pub iterations: usize,
}

impl DirectResult {
    /// Best-so-far value after each evaluation.
    pub fn incumbent_curve(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trace
            .iter()
            .map(|e| {
                if e.value < best {
                    best = e.value;
                }
                best
            })
            .collect()
    }
}

struct Search<'a, F> {
    f: F,
    space: &'a SearchSpace,
    budget: usize,
    trace: Vec<Evaluation>,
    best: Option<usize>,
}

impl<F: FnMut(&[f64]) -> f64> Search<'_, F> {
    fn eval(&mut self, u: &[f64]) -> f64 {
        let x = self.space.denormalize(u);
        let mut value = (self.f)(&x);
        if value.is_nan() {
            value = f64::INFINITY;
        }
        let idx = self.trace.len();
        if self.best.is_none_or(|b| value < self.trace[b].value) {
            self.best = Some(idx);
        }
        self.trace.push(Evaluation { x, value });
        value
    }

    fn exhausted(&self) -> bool {
        self.trace.len() >= self.budget
    }
}

/// Minimizes `f` over `space` with at most `budget` evaluations.
pub fn direct_minimize<F: FnMut(&[f64]) -> f64>(
    f: F,
    space: &SearchSpace,
    budget: usize,
    eps: f64,
) -> Result<DirectResult> {
    direct_minimize_observed(f, space, budget, eps, |_| {})
}

/// As [`direct_minimize`], calling `observer` with the partition after the
/// initial sample and after every iteration.
pub fn direct_minimize_observed<F: FnMut(&[f64]) -> f64, O: FnMut(&RectTree)>(
    f: F,
    space: &SearchSpace,
    budget: usize,
    eps: f64,
    mut observer: O,
) -> Result<DirectResult> {
    if budget == 0 {
        return Err(Error::Argument("budget must be at least 1".into()));
    }
    if !(eps >= 0.0) {
        return Err(Error::Argument("epsilon must be non-negative".into()));
    }
    let n = space.dim();
    let mut s = Search {
        f,
        space,
        budget,
        trace: Vec::new(),
        best: None,
    };
    let center = vec![0.5; n];
    let value = s.eval(&center);
    let mut tree = RectTree {
        rects: vec![Rect {
            center,
            levels: vec![0; n],
            value,
        }],
    };
    observer(&tree);
    let mut iterations = 0;
    'outer: while !s.exhausted() {
        iterations += 1;
        for j in tree.potentially_optimal(eps) {
            let rect = tree.rects[j].clone();
            let min_level = *rect.levels.iter().min().unwrap();
            let dims: Vec<usize> = (0..n).filter(|&i| rect.levels[i] == min_level).collect();
            let delta = rect.side(dims[0]) / 3.0;
            let mut probes = Vec::with_capacity(dims.len());
            for &i in &dims {
                let mut plus = rect.center.clone();
                plus[i] += delta;
                let mut minus = rect.center.clone();
                minus[i] -= delta;
                if s.exhausted() {
                    break 'outer;
                }
                let fp = s.eval(&plus);
                if s.exhausted() {
                    break 'outer;
                }
                let fm = s.eval(&minus);
                probes.push((i, plus, fp, minus, fm));
            }
            // split the dimension with the best probe first
            probes.sort_by(|a, b| {
                let wa = key_of(a.2).min(key_of(a.4));
                let wb = key_of(b.2).min(key_of(b.4));
                wa.total_cmp(&wb).then(a.0.cmp(&b.0))
            });
            let mut levels = rect.levels.clone();
            for (i, plus, fp, minus, fm) in probes {
                levels[i] += 1;
                tree.rects.push(Rect {
                    center: plus,
                    levels: levels.clone(),
                    value: fp,
                });
                tree.rects.push(Rect {
                    center: minus,
                    levels: levels.clone(),
                    value: fm,
                });
            }
            tree.rects[j].levels = levels;
        }
        observer(&tree);
    }
    let b = s.best.unwrap_or(0);
    Ok(DirectResult {
        best_x: s.trace[b].x.clone(),
        best_value: s.trace[b].value,
        trace: s.trace,
        iterations,
    })
}

fn key_of(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        NON_FINITE_SURROGATE
    }
}

/// Bounds of one oscillator's `(p1, p2, p3, p4)`; `p2` is searched on a log
/// scale.
pub const FHN_BOUNDS: [(f64, f64); 4] = [(0.1, 3.0), (0.005, 0.5), (0.1, 3.0), (-1.0, 2.0)];
pub const FHN_LOG_SCALE: [bool; 4] = [false, true, false, false];

pub fn fhn_search_space(n_neurons: usize) -> Result<SearchSpace> {
    let mut bounds = Vec::new();
    let mut logs = Vec::new();
    for _ in 0..n_neurons {
        bounds.extend_from_slice(&FHN_BOUNDS);
        logs.extend_from_slice(&FHN_LOG_SCALE);
    }
    SearchSpace::with_log_scale(&bounds, &logs)
}

fn population_from(x: &[f64]) -> Vec<FhnParams> {
    x.chunks(4)
        .map(|c| FhnParams::new(c[0], c[1], c[2], c[3]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PretuneConfig {
    pub budget: usize,
    /// Segments drawn per class for the proxy.
    pub per_class: usize,
    pub readout_iterations: usize,
    pub readout_lr: f64,
    pub readout_ridge: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for PretuneConfig {
    fn default() -> Self {
        PretuneConfig {
            budget: 100,
            per_class: 40,
            readout_iterations: 200,
            readout_lr: 0.5,
            readout_ridge: 1e-3,
            eps: DEFAULT_EPSILON,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretuneResult {
    pub population: Vec<FhnParams>,
    pub proxy_loss: f64,
    /// Proxy loss of the box center, the first point DIRECT samples.
    pub center_loss: f64,
    pub search: DirectResult,
}

/// Fits a ridge-regularized logistic readout by gradient descent to the
/// standardized `fit` rows and returns its mean cross-entropy on the
/// standardized `score` rows. Passing the same rows twice gives the plain
/// training loss.
pub fn logistic_proxy(
    fit: &[Vec<f64>],
    score: &[Vec<f64>],
    labels: &[Label],
    iterations: usize,
    lr: f64,
    ridge: f64,
) -> Result<f64> {
    if fit.len() != labels.len() || score.len() != labels.len() {
        return Err(Error::Shape {
            expected: labels.len(),
            got: fit.len().min(score.len()),
        });
    }
    let standardize = |rows: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        let scaler = Standardizer::fit(rows)?;
        Ok(rows.iter().map(|r| scaler.apply(r)).collect())
    };
    let x = standardize(fit)?;
    let z = standardize(score)?;
    let d = x[0].len();
    let n = x.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let predict = |w: &[f64], b: f64, r: &[f64]| -> f64 {
        crate::ad::Scalar::sigmoid(b + w.iter().zip(r).map(|(a, c)| a * c).sum::<f64>())
    };
    for _ in 0..iterations {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, l) in x.iter().zip(labels) {
            let e = predict(&w, b, r) - l.as_f64();
            for (g, v) in gw.iter_mut().zip(r) {
                *g += e * v;
            }
            gb += e;
        }
        for k in 0..d {
            w[k] -= lr * (gw[k] / n + ridge * w[k]);
        }
        b -= lr * gb / n;
    }
    let loss = z
        .iter()
        .zip(labels)
        .map(|(r, l)| {
            let p = predict(&w, b, r).clamp(1e-12, 1.0 - 1e-12);
            if l.is_positive() {
                -libm::log(p)
            } else {
                -libm::log(1.0 - p)
            }
        })
        .sum::<f64>()
        / n;
    Ok(loss)
}

/// Class-balanced subsample used by the proxy, deterministic under `seed`.
pub fn proxy_subsample<'a>(data: &[(&'a [u32], Label)], per_class: usize, seed: u64) -> Vec<(&'a [u32], Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for class in [Label::Normal, Label::Positive] {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data[i].1 == class).collect();
        members.shuffle(&mut rng);
        members.truncate(per_class);
        members.sort_unstable();
        out.extend(members.into_iter().map(|i| data[i]));
    }
    out
}

/// Searches per-oscillator `(p1, p2, p3, p4)` with DIRECT on a
/// class-balanced subsample. A logistic readout is fitted to the smooth
/// firing rates, which is what training sees, and scored on the hard rates,
/// which is what prediction sees. Divergent candidates score `+inf`.
pub fn pretune_fhn(
    data: &[(&[u32], Label)],
    n_neurons: usize,
    drive: &DriveConfig,
    cfg: &PretuneConfig,
) -> Result<PretuneResult> {
    if n_neurons == 0 {
        return Err(Error::Argument("at least one oscillator is required".into()));
    }
    let subsample = proxy_subsample(data, cfg.per_class, cfg.seed);
    let labels: Vec<Label> = subsample.iter().map(|s| s.1).collect();
    if !labels.iter().any(|l| l.is_positive()) || labels.iter().all(|l| l.is_positive()) {
        return Err(Error::Pretune("both classes are required".into()));
    }
    let smooth = Readout::Smooth {
        temperature: drive.smooth_temperature,
    };
    let space = fhn_search_space(n_neurons)?;
    let objective = |x: &[f64]| -> f64 {
        let pop = population_from(x);
        let rates = |readout| -> Result<Vec<Vec<f64>>> {
            subsample
                .iter()
                .map(|(rr, _)| fhn_forward(&pop, drive.amplitude, rr, drive, readout))
                .collect()
        };
        match (rates(smooth), rates(Readout::Hard)) {
            (Ok(s), Ok(h)) => {
                logistic_proxy(&s, &h, &labels, cfg.readout_iterations, cfg.readout_lr, cfg.readout_ridge)
                    .unwrap_or(f64::INFINITY)
            }
            _ => f64::INFINITY,
        }
    };
    let search = direct_minimize(objective, &space, cfg.budget, cfg.eps)?;
    if !search.best_value.is_finite() {
        return Err(Error::Pretune("every candidate diverged".into()));
    }
    Ok(PretuneResult {
        population: population_from(&search.best_x),
        proxy_loss: search.best_value,
        center_loss: search.trace[0].value,
        search,
    })
}

/// Architecture and training settings explored by [`tune_hyperparams`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HyperParams {
    pub hidden_layers: usize,
    pub width: usize,
    pub minibatch_size: usize,
    pub lambda: f64,
}

impl HyperParams {
    pub fn hidden(&self) -> Vec<usize> {
        vec![self.width; self.hidden_layers]
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            minibatch_size: self.minibatch_size,
            lambda: self.lambda,
            ..base.clone()
        }
    }
}

/// Box over `(hidden layers, width, minibatch size, lambda)`. The first
/// three are integers (rounded to nearest); `lambda` is searched in log
/// scale.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HyperSpace {
    pub hidden_layers: (usize, usize),
    pub width: (usize, usize),
    pub minibatch_size: (usize, usize),
    pub lambda: (f64, f64),
}

impl Default for HyperSpace {
    fn default() -> Self {
        HyperSpace {
            hidden_layers: (1, 3),
            width: (2, 16),
            minibatch_size: (8, 64),
            lambda: (1e-5, 1e-1),
        }
    }
}

impl HyperSpace {
    fn space(&self) -> Result<SearchSpace> {
        let f = |(a, b): (usize, usize)| (a as f64, b as f64);
        SearchSpace::with_log_scale(
            &[f(self.hidden_layers), f(self.width), f(self.minibatch_size), self.lambda],
            &[false, false, false, true],
        )
    }

    pub fn decode(&self, x: &[f64]) -> HyperParams {
        let round = |v: f64, (lo, hi): (usize, usize)| (libm::round(v) as usize).clamp(lo, hi);
        HyperParams {
            hidden_layers: round(x[0], self.hidden_layers),
            width: round(x[1], self.width),
            minibatch_size: round(x[2], self.minibatch_size),
            lambda: x[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: HyperParams,
    pub best_value: f64,
    /// Every configuration tried, in evaluation order.
    pub tried: Vec<(HyperParams, f64)>,
}

/// DIRECT over a [`HyperSpace`]. `evaluate` scores a configuration (lower is
/// better); its errors count as `+inf`.
pub fn tune_hyperparams<E>(space: &HyperSpace, budget: usize, mut evaluate: E) -> Result<TuneResult>
where
    E: FnMut(&HyperParams) -> Result<f64>,
{
    let box_space = space.space()?;
    let mut tried = Vec::new();
    let result = direct_minimize(
        |x| {
            let h = space.decode(x);
            let v = evaluate(&h).unwrap_or(f64::INFINITY);
            tried.push((h, v));
            v
        },
        &box_space,
        budget,
        DEFAULT_EPSILON,
    )?;
    Ok(TuneResult {
        best: space.decode(&result.best_x),
        best_value: result.best_value,
        tried,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMetric {
    /// `-J` on the validation samples, without the penalty.
    NegLogLikelihood,
    OneMinusAuc,
}

/// Trains on `fit` and scores `validate`; the objective used by
/// hyperparameter tuning on an inner split.
pub fn validation_objective(
    fit: &[Sample<'_>],
    validate: &[Sample<'_>],
    init: &ModelInit,
    cfg: &TrainConfig,
    metric: ValidationMetric,
) -> Result<f64> {
    let (model, _) = train(fit, init, cfg)?;
    match metric {
        ValidationMetric::NegLogLikelihood => Ok(-model.objective_at(&model.params.values, validate, 0.0)?),
        ValidationMetric::OneMinusAuc => {
            let scores: Vec<f64> = validate
                .iter()
                .map(|s| model.predict(s.intervals, s.hrv))
                .collect::<Result<_>>()?;
            let labels: Vec<Label> = validate.iter().map(|s| s.label).collect();
            Ok(1.0 - roc_auc(&scores, &labels)?)
        }
    }
}

/// Layout for a tuned configuration.
pub fn tuned_layout(n_neurons: usize, n_hrv: usize, h: &HyperParams) -> Result<ModelLayout> {
    ModelLayout::new(n_neurons, n_hrv, h.hidden())
}
