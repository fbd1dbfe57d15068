//! Confidence-aware adversarial imitation on tabular gridworlds.
//!
//! The crate trains a discriminator on a mixture of demonstrations of varying
//! quality while learning a per-pair confidence that down-weights the bad ones,
//! guided by a small ranked subset of trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod airl;
pub mod bilevel;
pub mod checks;
pub mod confidence;
pub mod demo;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod net;
pub mod oracle;
pub mod ranking;
pub mod rng;

pub use error::{CailError, Result};
