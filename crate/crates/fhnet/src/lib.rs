//! File formats, model checkpoints, parallel evaluation and the command line
//! front end for `fhnet-core`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod io;
pub mod parallel;

pub use error::{Error, Result};
