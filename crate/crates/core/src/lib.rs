//! Differentiable FitzHugh-Nagumo classifier for RR-interval series.
//!
//! The crate is `no_std` with `alloc`. Everything here is pure computation:
//! file formats, checkpoints and the command line live in the `fhnet` crate.
//!
//! Pipeline overview:
//!
//! * [`rr`] ingests, filters, synthesizes and folds RR-interval segments.
//! * [`fhn`] turns a segment into an impulse train, integrates a population of
//!   modified FitzHugh-Nagumo oscillators and reads out one firing rate per
//!   oscillator.
//! * [`ad`] is a scalar reverse-mode tape; every numeric routine that needs a
//!   gradient is generic over [`ad::Scalar`] and runs unchanged on `f64`.
//! * [`net`] is the tanh/softmax head, the flat parameter vector and the
//!   penalized log-likelihood objective.
//! * [`train`] holds Adam and the clamped training schedule.
//! * [`direct`] is the DIRECT global optimizer plus oscillator pre-tuning and
//!   hyperparameter search.
//! * [`hrv`] and [`forest`] form the 23-feature random-forest baseline.
//! * [`metrics`] and [`cv`] evaluate scores with patient-stratified folds.
#![no_std]
// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ad;
pub mod cv;
pub mod direct;
pub mod error;
pub mod fhn;
pub mod forest;
pub mod hrv;
pub mod metrics;
pub mod net;
pub mod rr;
pub mod train;

pub use error::{Error, Result};
