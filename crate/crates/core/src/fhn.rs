//! Modified FitzHugh-Nagumo oscillators driven by RR impulse trains.
//!
//! Each oscillator follows
//!
//! ```text
//! dv/dt = v - v^3/3 - p1 * w * v + I(t)
//! dw/dt = p2 * (v - p3 * w)
//! ```
//!
//! unrolled with fixed-step forward Euler. The input current `I(t)` is a train
//! of rectangular pulses, one at `t = 0` and one after every interval. The
//! firing rate of an oscillator is the sum of its supra-threshold membrane
//! potentials over the whole trajectory.

use alloc::format;
use alloc::vec::Vec;

use crate::ad::Scalar;
use crate::error::{Error, Result};

/// Integration aborts once |v| or |w| exceeds this bound.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Per-oscillator coefficients and initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FhnParams<S = f64> {
    /// Coupling of recovery into the membrane equation (multiplies `w * v`).
    pub p1: S,
    /// Recovery time scale.
    pub p2: S,
    /// Recovery leak.
    pub p3: S,
    /// Firing threshold.
    pub p4: S,
    pub v0: S,
    pub w0: S,
}

pub const FHN_PARAM_COUNT: usize = 6;

impl<S: Copy> FhnParams<S> {
    pub fn from_slice(s: &[S]) -> Self {
        FhnParams {
            p1: s[0],
            p2: s[1],
            p3: s[2],
            p4: s[3],
            v0: s[4],
            w0: s[5],
        }
    }

    pub fn to_array(&self) -> [S; FHN_PARAM_COUNT] {
        [self.p1, self.p2, self.p3, self.p4, self.v0, self.w0]
    }
}

impl FhnParams<f64> {
    /// Coefficients with the oscillator at rest.
    pub fn new(p1: f64, p2: f64, p3: f64, p4: f64) -> Self {
        FhnParams {
            p1,
            p2,
            p3,
            p4,
            v0: 0.0,
            w0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument(format!("non-finite oscillator parameter in {self:?}")));
        }
        if self.p2 <= 0.0 {
            return Err(Error::Argument(format!("p2 = {} must be positive", self.p2)));
        }
        Ok(())
    }
}

/// Pulse encoding and integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriveConfig {
    pub dt_ms: f64,
    pub amplitude: f64,
    pub pulse_width_ms: f64,
    /// Milliseconds per model time unit.
    pub tau_ms: f64,
    /// Sigmoid temperature of the smooth firing-rate readout.
    pub smooth_temperature: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            dt_ms: 10.0,
            amplitude: 0.5,
            pulse_width_ms: 20.0,
            tau_ms: 100.0,
            smooth_temperature: 0.1,
        }
    }
}

impl DriveConfig {
    /// Euler step in model time units.
    pub fn step(&self) -> f64 {
        self.dt_ms / self.tau_ms
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_ms > 0.0 && self.tau_ms > 0.0) {
            return Err(Error::Argument("dt and tau must be positive".into()));
        }
        if !(self.pulse_width_ms >= self.dt_ms) {
            return Err(Error::Argument(format!(
                "pulse width {} ms shorter than step {} ms",
                self.pulse_width_ms, self.dt_ms
            )));
        }
        if !(self.smooth_temperature > 0.0) {
            return Err(Error::Argument("smooth temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Sampled input current, one value per Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSignal {
    pub samples: Vec<f64>,
    /// `true` where a pulse is on; kept separately so the amplitude can be
    /// differentiated even when it is zero.
    pub active: Vec<bool>,
    pub dt_ms: f64,
    pub amplitude: f64,
    pub pulse_width_ms: f64,
}

impl DriveSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Encodes an RR series as rectangular pulses of height `amplitude` and
/// width `pulse_width_ms`, sampled every `dt_ms` over
/// `sum(rr) + pulse_width_ms`.
pub fn rr_to_drive(
    intervals: &[u32],
    dt_ms: f64,
    amplitude: f64,
    pulse_width_ms: f64,
) -> Result<DriveSignal> {
    if !(dt_ms > 0.0) {
        return Err(Error::Argument("dt must be positive".into()));
    }
    if !(pulse_width_ms >= dt_ms) {
        return Err(Error::Argument("pulse width must be at least one step".into()));
    }
    let total: u64 = intervals.iter().map(|&r| r as u64).sum();
    let duration = total as f64 + pulse_width_ms;
    let n = libm::ceil(duration / dt_ms) as usize;
    let mut active = alloc::vec![false; n];
    let mut beat = 0u64;
    let mut mark = |beat: u64| {
        let from = libm::ceil(beat as f64 / dt_ms) as usize;
        let to = libm::ceil((beat as f64 + pulse_width_ms) / dt_ms) as usize;
        for a in active.iter_mut().take(to.min(n)).skip(from) {
            *a = true;
        }
    };
    mark(0);
    for &r in intervals {
        beat += r as u64;
        mark(beat);
    }
    let samples = active
        .iter()
        .map(|&on| if on { amplitude } else { 0.0 })
        .collect();
    Ok(DriveSignal {
        samples,
        active,
        dt_ms,
        amplitude,
        pulse_width_ms,
    })
}

/// Membrane potential and recovery per step, including the initial state.
#[derive(Debug, Clone)]
pub struct Trajectory<S = f64> {
    pub v: Vec<S>,
    pub w: Vec<S>,
}

#[inline]
fn euler_step<S: Scalar>(
    p: &FhnParams<S>,
    v: S,
    w: S,
    input: Option<S>,
    h: f64,
) -> (S, S) {
    let mut dv = v - v.powi(3) * (1.0 / 3.0) - p.p1 * (w * v);
    if let Some(i) = input {
        dv = dv + i;
    }
    let dw = p.p2 * (v - p.p3 * w);
    (v + dv * h, w + dw * h)
}

#[inline]
fn check(v: f64, w: f64, step: usize) -> Result<()> {
    if v.is_finite() && w.is_finite() && libm::fabs(v) <= DIVERGENCE_BOUND && libm::fabs(w) <= DIVERGENCE_BOUND {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

/// Forward-Euler unrolling with step `h` (model time units). The drive's
/// pulse mask is scaled by `amplitude`.
pub fn integrate<S: Scalar>(
    params: &FhnParams<S>,
    amplitude: S,
    drive: &DriveSignal,
    h: f64,
) -> Result<Trajectory<S>> {
    let n = drive.len();
    let mut v = Vec::with_capacity(n + 1);
    let mut w = Vec::with_capacity(n + 1);
    let (mut vt, mut wt) = (params.v0, params.w0);
    v.push(vt);
    w.push(wt);
    for (t, &on) in drive.active.iter().enumerate() {
        (vt, wt) = euler_step(params, vt, wt, on.then_some(amplitude), h);
        check(vt.value(), wt.value(), t + 1)?;
        v.push(vt);
        w.push(wt);
    }
    Ok(Trajectory { v, w })
}

/// How supra-threshold potentials are counted.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Readout {
    /// `v * [v >= p4]`, the exact rule.
    Hard,
    /// `v * sigmoid((v - p4) / temperature)`, differentiable in `p4`.
    Smooth { temperature: f64 },
}

#[inline]
fn readout_term<S: Scalar>(v: S, p4: S, readout: Readout) -> S {
    match readout {
        Readout::Hard => v.select_ge(p4, v, v.constant(0.0)),
        Readout::Smooth { temperature } => v * ((v - p4) * (1.0 / temperature)).sigmoid(),
    }
}

/// Sum over the trajectory of the (hard or smoothed) supra-threshold
/// membrane potential.
pub fn firing_rate<S: Scalar>(v: &[S], p4: S, readout: Readout) -> S {
    let mut terms = v.iter().map(|&x| readout_term(x, p4, readout));
    let first = terms.next().unwrap_or_else(|| p4.constant(0.0));
    terms.fold(first, |acc, t| acc + t)
}

/// Integrates and reads out in one pass without storing the trajectory.
/// Produces exactly `firing_rate(&integrate(..)?.v, p4, readout)`.
pub fn integrate_rate<S: Scalar>(
    params: &FhnParams<S>,
    amplitude: S,
    drive: &DriveSignal,
    h: f64,
    readout: Readout,
) -> Result<S> {
    let (mut v, mut w) = (params.v0, params.w0);
    let mut acc = readout_term(v, params.p4, readout);
    for (t, &on) in drive.active.iter().enumerate() {
        (v, w) = euler_step(params, v, w, on.then_some(amplitude), h);
        check(v.value(), w.value(), t + 1)?;
        acc = acc + readout_term(v, params.p4, readout);
    }
    Ok(acc)
}

/// Firing rates of a population for one RR series, in population order.
pub fn fhn_forward<S: Scalar>(
    population: &[FhnParams<S>],
    amplitude: S,
    intervals: &[u32],
    cfg: &DriveConfig,
    readout: Readout,
) -> Result<Vec<S>> {
    if population.is_empty() {
        return Err(Error::Argument("empty oscillator population".into()));
    }
    let drive = rr_to_drive(intervals, cfg.dt_ms, amplitude.value(), cfg.pulse_width_ms)?;
    population
        .iter()
        .enumerate()
        .map(|(i, p)| {
            integrate_rate(p, amplitude, &drive, cfg.step(), readout).map_err(|e| match e {
                Error::Divergence { step } => Error::NeuronDivergence { neuron: i, step },
                other => other,
            })
        })
        .collect()
}
