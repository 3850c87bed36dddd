//! Feed-forward head, flat parameter vector and the training objective.
//!
//! The model maps an RR segment to `(O_OK, O_I)`: oscillator firing rates
//! (optionally followed by a standardized HRV block) feed tanh hidden layers
//! and a two-way softmax. All parameters live in one [`ParamVector`] laid out
//! as `[oscillators, amplitude, weights, biases]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ad::{Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::fhn::{fhn_forward, DriveConfig, FhnParams, Readout, FHN_PARAM_COUNT};
use crate::rr::Label;

/// Log arguments are floored here.
pub const LOG_FLOOR: f64 = 1e-12;
pub const DEFAULT_INIT_SIGMA: f64 = 0.1;
pub const DEFAULT_NEURONS: usize = 8;
pub const DEFAULT_HIDDEN: [usize; 2] = [16, 8];

/// Weights per layer (row-major, `out x in`) and biases per layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Argument("need at least an input and an output layer".into()));
    }
    if sizes.last() != Some(&2) {
        return Err(Error::Argument("output layer must have width 2".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Argument("layer widths must be positive".into()));
    }
    Ok(())
}

/// Weights drawn from `N(0, sigma^2)`, biases zero.
pub fn init_weights(sizes: &[usize], sigma: f64, seed: u64) -> Result<MlpParams> {
    check_sizes(sizes)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("sigma {sigma} must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(format!("{e}")))?;
    let weights = sizes
        .windows(2)
        .map(|w| (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
    Ok(MlpParams {
        sizes: sizes.to_vec(),
        weights,
        biases,
    })
}

impl MlpParams {
    pub fn weight_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.biases.iter().map(Vec::len).sum()
    }

    /// `(O_OK, O_I)` for one input.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, f64)> {
        let w: Vec<f64> = self.weights.concat();
        let b: Vec<f64> = self.biases.concat();
        forward(&self.sizes, &w, &b, x.to_vec())
    }
}

/// Two-way softmax with the larger logit subtracted first.
pub fn softmax2<S: Scalar>(z0: S, z1: S) -> Result<(S, S)> {
    let m = z0.value().max(z1.value());
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let s = e0 + e1;
    Ok((e0.div(s)?, e1.div(s)?))
}

/// Output logits for concatenated weights `w` and biases `b`.
pub fn logits<S: Scalar>(sizes: &[usize], w: &[S], b: &[S], x: Vec<S>) -> Result<(S, S)> {
    if x.len() != sizes[0] {
        return Err(Error::Shape {
            expected: sizes[0],
            got: x.len(),
        });
    }
    let layers = sizes.len() - 1;
    let mut a = x;
    let (mut wo, mut bo) = (0, 0);
    for l in 0..layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let mut next = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let row = &w[wo + j * n_in..wo + (j + 1) * n_in];
            let mut z = b[bo + j];
            for (wi, ai) in row.iter().zip(&a) {
                z = z + *wi * *ai;
            }
            next.push(if l + 1 < layers { z.tanh() } else { z });
        }
        wo += n_in * n_out;
        bo += n_out;
        a = next;
    }
    Ok((a[0], a[1]))
}

/// `(O_OK, O_I)`: tanh hidden layers followed by a softmax output.
pub fn forward<S: Scalar>(sizes: &[usize], w: &[S], b: &[S], x: Vec<S>) -> Result<(S, S)> {
    let (z0, z1) = logits(sizes, w, b, x)?;
    softmax2(z0, z1)
}

/// Per-column affine standardization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; a zero deviation
    /// becomes scale 1.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Argument("cannot standardize zero rows".into()));
        };
        let d = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = libm::sqrt(s / n);
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| (v - m) * (1.0 / s))
            .collect()
    }
}

/// Network shape: oscillator count, optional HRV block width and hidden sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelLayout {
    pub n_neurons: usize,
    pub n_hrv: usize,
    pub hidden: Vec<usize>,
}

impl ModelLayout {
    pub fn new(n_neurons: usize, n_hrv: usize, hidden: Vec<usize>) -> Result<Self> {
        if n_neurons == 0 {
            return Err(Error::Argument("at least one oscillator is required".into()));
        }
        let layout = ModelLayout {
            n_neurons,
            n_hrv,
            hidden,
        };
        check_sizes(&layout.layer_sizes())?;
        Ok(layout)
    }

    pub fn input_width(&self) -> usize {
        self.n_neurons + self.n_hrv
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_width()];
        s.extend_from_slice(&self.hidden);
        s.push(2);
        s
    }

    pub fn amplitude_index(&self) -> usize {
        self.n_neurons * FHN_PARAM_COUNT
    }

    fn weight_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1]).sum()
    }

    fn bias_count(&self) -> usize {
        self.layer_sizes()[1..].iter().sum()
    }

    /// Oscillator parameters and the amplitude.
    pub fn fhn_range(&self) -> Range<usize> {
        0..self.amplitude_index() + 1
    }

    pub fn weight_range(&self) -> Range<usize> {
        let s = self.amplitude_index() + 1;
        s..s + self.weight_count()
    }

    pub fn bias_range(&self) -> Range<usize> {
        let s = self.weight_range().end;
        s..s + self.bias_count()
    }

    /// Weights and biases: the penalized entries.
    pub fn head_range(&self) -> Range<usize> {
        self.weight_range().start..self.bias_range().end
    }

    pub fn param_count(&self) -> usize {
        self.bias_range().end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SliceKind {
    Oscillator(usize),
    Amplitude,
    Weights(usize),
    Biases(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamSlice {
    pub kind: SliceKind,
    pub start: usize,
    pub len: usize,
}

impl ParamSlice {
    pub fn name(&self) -> String {
        match self.kind {
            SliceKind::Oscillator(i) => format!("fhn[{i}]"),
            SliceKind::Amplitude => "amplitude".into(),
            SliceKind::Weights(l) => format!("W{l}"),
            SliceKind::Biases(l) => format!("b{l}"),
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Every trainable value in one flat array, with named slices and a
/// per-entry freeze mask.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamVector {
    pub layout: ModelLayout,
    pub values: Vec<f64>,
    pub clamp_mask: Vec<bool>,
}

impl ParamVector {
    pub fn assemble(
        layout: ModelLayout,
        population: &[FhnParams],
        amplitude: f64,
        head: &MlpParams,
    ) -> Result<Self> {
        if population.len() != layout.n_neurons {
            return Err(Error::Shape {
                expected: layout.n_neurons,
                got: population.len(),
            });
        }
        if head.sizes != layout.layer_sizes() {
            return Err(Error::Argument(format!(
                "head sizes {:?} do not match layout {:?}",
                head.sizes,
                layout.layer_sizes()
            )));
        }
        let mut values = Vec::with_capacity(layout.param_count());
        for p in population {
            values.extend_from_slice(&p.to_array());
        }
        values.push(amplitude);
        for w in &head.weights {
            values.extend_from_slice(w);
        }
        for b in &head.biases {
            values.extend_from_slice(b);
        }
        let n = values.len();
        Ok(ParamVector {
            layout,
            values,
            clamp_mask: vec![false; n],
        })
    }

    pub fn slices(&self) -> Vec<ParamSlice> {
        let l = &self.layout;
        let mut out = Vec::new();
        for i in 0..l.n_neurons {
            out.push(ParamSlice {
                kind: SliceKind::Oscillator(i),
                start: i * FHN_PARAM_COUNT,
                len: FHN_PARAM_COUNT,
            });
        }
        out.push(ParamSlice {
            kind: SliceKind::Amplitude,
            start: l.amplitude_index(),
            len: 1,
        });
        let sizes = l.layer_sizes();
        let mut at = l.weight_range().start;
        for (k, w) in sizes.windows(2).enumerate() {
            out.push(ParamSlice {
                kind: SliceKind::Weights(k),
                start: at,
                len: w[0] * w[1],
            });
            at += w[0] * w[1];
        }
        for (k, &n) in sizes[1..].iter().enumerate() {
            out.push(ParamSlice {
                kind: SliceKind::Biases(k),
                start: at,
                len: n,
            });
            at += n;
        }
        out
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.slices()
            .into_iter()
            .find(|s| s.name() == name)
            .map(|s| &self.values[s.range()])
    }

    pub fn oscillator(&self, i: usize) -> FhnParams {
        FhnParams::from_slice(&self.values[i * FHN_PARAM_COUNT..(i + 1) * FHN_PARAM_COUNT])
    }

    pub fn population(&self) -> Vec<FhnParams> {
        (0..self.layout.n_neurons).map(|i| self.oscillator(i)).collect()
    }

    pub fn amplitude(&self) -> f64 {
        self.values[self.layout.amplitude_index()]
    }

    pub fn head(&self) -> MlpParams {
        let sizes = self.layout.layer_sizes();
        let mut at = self.layout.weight_range().start;
        let mut weights = Vec::new();
        for w in sizes.windows(2) {
            weights.push(self.values[at..at + w[0] * w[1]].to_vec());
            at += w[0] * w[1];
        }
        let mut biases = Vec::new();
        for &n in &sizes[1..] {
            biases.push(self.values[at..at + n].to_vec());
            at += n;
        }
        MlpParams {
            sizes,
            weights,
            biases,
        }
    }

    /// Freezes or releases the oscillator parameters and the amplitude.
    pub fn set_oscillators_clamped(&mut self, clamped: bool) {
        for i in self.layout.fhn_range() {
            self.clamp_mask[i] = clamped;
        }
    }

    /// Squared norm of the penalized entries.
    pub fn head_norm_sq(&self) -> f64 {
        self.values[self.layout.head_range()].iter().map(|v| v * v).sum()
    }
}

/// Firing-rate scaling for the head input. Training sees smooth-readout
/// rates; prediction sees hard-readout rates mapped onto the same scale.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateScaling {
    pub smooth: Standardizer,
    pub hard: Standardizer,
}

impl RateScaling {
    pub fn identity(n: usize) -> Self {
        RateScaling {
            smooth: Standardizer::identity(n),
            hard: Standardizer::identity(n),
        }
    }

    pub fn for_readout(&self, readout: Readout) -> &Standardizer {
        match readout {
            Readout::Hard => &self.hard,
            Readout::Smooth { .. } => &self.smooth,
        }
    }
}

/// Oscillator layer plus head, with the frozen input scalings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HybridModel {
    pub params: ParamVector,
    pub drive: DriveConfig,
    pub rates: RateScaling,
    /// Present exactly when the layout has an HRV block.
    pub hrv: Option<Standardizer>,
}

/// One training or scoring example. `hrv` holds raw feature values.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub intervals: &'a [u32],
    pub hrv: Option<&'a [f64]>,
    pub label: Label,
}

/// Objective value `J` and its gradient with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl HybridModel {
    pub fn new(params: ParamVector, drive: DriveConfig) -> Result<Self> {
        drive.validate()?;
        let n = params.layout.n_neurons;
        let hrv = (params.layout.n_hrv > 0).then(|| Standardizer::identity(params.layout.n_hrv));
        Ok(HybridModel {
            params,
            drive,
            rates: RateScaling::identity(n),
            hrv,
        })
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.params.layout
    }

    pub fn training_readout(&self) -> Readout {
        Readout::Smooth {
            temperature: self.drive.smooth_temperature,
        }
    }

    /// Raw firing rates at the current oscillator parameters.
    pub fn raw_rates(&self, intervals: &[u32], readout: Readout) -> Result<Vec<f64>> {
        fhn_forward(
            &self.params.population(),
            self.params.amplitude(),
            intervals,
            &self.drive,
            readout,
        )
    }

    fn hrv_block<S: Scalar>(&self, like: S, hrv: Option<&[f64]>) -> Result<Vec<S>> {
        match (&self.hrv, hrv) {
            (None, _) => Ok(Vec::new()),
            (Some(scaler), Some(x)) => {
                if x.len() != scaler.len() {
                    return Err(Error::Shape {
                        expected: scaler.len(),
                        got: x.len(),
                    });
                }
                let c: Vec<S> = x.iter().map(|&v| like.constant(v)).collect();
                Ok(scaler.apply(&c))
            }
            (Some(_), None) => Err(Error::Argument("model expects an HRV block".into())),
        }
    }

    /// Head input for already computed raw rates.
    pub fn head_input<S: Scalar>(
        &self,
        raw_rates: &[S],
        hrv: Option<&[f64]>,
        readout: Readout,
    ) -> Result<Vec<S>> {
        let Some(&like) = raw_rates.first() else {
            return Err(Error::Argument("no firing rates".into()));
        };
        let mut x = self.rates.for_readout(readout).apply(raw_rates);
        x.extend(self.hrv_block(like, hrv)?);
        Ok(x)
    }

    /// `(O_OK, O_I)` with every parameter taken from `p`.
    pub fn output<S: Scalar>(&self, p: &[S], sample: &Sample<'_>, readout: Readout) -> Result<(S, S)> {
        let layout = self.layout();
        if p.len() != layout.param_count() {
            return Err(Error::Shape {
                expected: layout.param_count(),
                got: p.len(),
            });
        }
        let population: Vec<FhnParams<S>> = (0..layout.n_neurons)
            .map(|i| FhnParams::from_slice(&p[i * FHN_PARAM_COUNT..(i + 1) * FHN_PARAM_COUNT]))
            .collect();
        let amplitude = p[layout.amplitude_index()];
        let rates = fhn_forward(&population, amplitude, sample.intervals, &self.drive, readout)?;
        let x = self.head_input(&rates, sample.hrv, readout)?;
        self.head_output(p, x)
    }

    /// `(O_OK, O_I)` from a head input, with head parameters taken from `p`.
    pub fn head_output<S: Scalar>(&self, p: &[S], x: Vec<S>) -> Result<(S, S)> {
        let layout = self.layout();
        forward(
            &layout.layer_sizes(),
            &p[layout.weight_range()],
            &p[layout.bias_range()],
            x,
        )
    }

    /// `O_I` with hard-threshold firing rates.
    pub fn predict(&self, intervals: &[u32], hrv: Option<&[f64]>) -> Result<f64> {
        let sample = Sample {
            intervals,
            hrv,
            label: Label::Normal,
        };
        Ok(self.output(&self.params.values, &sample, Readout::Hard)?.1)
    }

    /// `J(P)` over a batch, generic so the same code runs on plain values
    /// or on one tape.
    pub fn objective_at<S: Scalar>(&self, p: &[S], batch: &[Sample<'_>], lambda: f64) -> Result<S> {
        check_batch(batch, lambda)?;
        let readout = self.training_readout();
        let mut ll: Option<S> = None;
        for s in batch {
            let (ok, i) = self.output(p, s, readout)?;
            let term = log_likelihood(ok, i, s.label)?;
            ll = Some(match ll {
                Some(acc) => acc + term,
                None => term,
            });
        }
        let n = batch.len() as f64;
        let mut penalty = p[0].constant(0.0);
        for &v in &p[self.layout().head_range()] {
            penalty = penalty + v * v;
        }
        Ok(ll.unwrap() * (1.0 / n) - penalty * (lambda / n))
    }

    /// `J` and `dJ/dP` at the current parameters. Each sample gets its own
    /// tape; the penalty gradient is added in closed form. Failures name the
    /// offending batch position.
    pub fn objective(&self, batch: &[Sample<'_>], lambda: f64) -> Result<ObjectiveValue> {
        check_batch(batch, lambda)?;
        let readout = self.training_readout();
        let values = &self.params.values;
        let mut gradient = vec![0.0; values.len()];
        let mut ll_sum = 0.0;
        let mut tape = Tape::new();
        for (index, s) in batch.iter().enumerate() {
            tape.clear();
            let p = tape.vars(values);
            let traced = self
                .output(&p, s, readout)
                .and_then(|(ok, i)| log_likelihood(ok, i, s.label))
                .and_then(|ll| Ok((ll.value(), tape.backward(&ll)?)));
            let (ll, g) = traced.map_err(|e| Error::Sample {
                index,
                source: e.into(),
            })?;
            ll_sum += ll;
            for (acc, v) in gradient.iter_mut().zip(&p) {
                *acc += g.wrt(v);
            }
            drop(p);
        }
        Ok(self.finish(ll_sum, gradient, batch.len(), lambda))
    }

    /// Same as [`objective`](Self::objective) with the oscillators frozen:
    /// head inputs are given and only weights and biases receive gradient.
    pub fn head_objective(&self, inputs: &[(&[f64], Label)], lambda: f64) -> Result<ObjectiveValue> {
        if inputs.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Argument("lambda must be non-negative".into()));
        }
        let values = &self.params.values;
        let head = self.layout().head_range();
        let mut gradient = vec![0.0; values.len()];
        let mut ll_sum = 0.0;
        let mut tape = Tape::new();
        let mut full: Vec<Var<'_>>;
        for (x, label) in inputs {
            tape.clear();
            let zero = tape.constant(0.0);
            full = vec![zero; values.len()];
            for k in head.clone() {
                full[k] = tape.var(values[k]);
            }
            let xin: Vec<Var<'_>> = x.iter().map(|&v| tape.constant(v)).collect();
            let (ok, i) = self.head_output(&full, xin)?;
            let ll = log_likelihood(ok, i, *label)?;
            ll_sum += ll.value();
            let g = tape.backward(&ll)?;
            for k in head.clone() {
                gradient[k] += g.wrt(&full[k]);
            }
            drop(full);
        }
        Ok(self.finish(ll_sum, gradient, inputs.len(), lambda))
    }

    fn finish(&self, ll_sum: f64, mut gradient: Vec<f64>, n: usize, lambda: f64) -> ObjectiveValue {
        let n = n as f64;
        gradient.iter_mut().for_each(|g| *g /= n);
        let values = &self.params.values;
        let mut norm_sq = 0.0;
        for k in self.layout().head_range() {
            norm_sq += values[k] * values[k];
            gradient[k] -= 2.0 * lambda / n * values[k];
        }
        ObjectiveValue {
            value: ll_sum / n - lambda / n * norm_sq,
            gradient,
        }
    }
}

fn check_batch(batch: &[Sample<'_>], lambda: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Argument("lambda must be non-negative".into()));
    }
    Ok(())
}

/// `y ln O_I + (1 - y) ln O_OK` with both arguments floored at `LOG_FLOOR`.
pub fn log_likelihood<S: Scalar>(o_ok: S, o_i: S, label: Label) -> Result<S> {
    if label.is_positive() {
        o_i.floor_at(LOG_FLOOR).ln()
    } else {
        o_ok.floor_at(LOG_FLOOR).ln()
    }
}
