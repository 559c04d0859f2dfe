//! Transition-probability reconstruction and work statistics for a driven two-spin system.
//!
//! The pipeline runs from a Hamiltonian and pulse protocol ([`hilbert`],
//! [`pulses`]) through exact or measured observable means ([`tpm`],
//! [`measure`]) to a reconstructed transition matrix ([`invert`]) and the
//! resulting fluctuation statistics ([`stats`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod hilbert;
pub mod invert;
pub mod io;
pub mod measure;
pub mod parallel;
pub mod pulses;
pub mod stats;
pub mod tpm;

pub use error::{Error, ErrorClass, Result};
pub use experiment::{Experiment, RunConfig};
pub use parallel::Execution;
pub use tpm::Direction;
