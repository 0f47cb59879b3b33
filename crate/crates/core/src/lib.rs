//! Deterministic simulator for two-party split neural networks (vertical
//! federated learning).
//!
//! The crate models a *client* that owns some feature columns and a bottom
//! network, and a *host* that owns the remaining columns, its own bottom
//! network, the top network and all labels. On top of that protocol it
//! provides:
//!
//! - [`attack`]: model-completion label inference from the client's bottom
//!   network, the reference bounds `r_upper`/`r_lower`, and the embedding
//!   extension attack that appends generated perturbation dimensions to the
//!   uploaded embedding.
//! - [`defense`]: the distance-correlation regularizer and label
//!   obfuscation, where the host trains against secret interleaved soft
//!   labels selected by two party-held random attributes.
//! - [`harness`]: config-driven experiments over several seeds with JSON/CSV
//!   reports.
//!
//! Everything runs on a small reverse-mode differentiation core in [`nd`],
//! double precision throughout.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod harness;
pub mod nd;
pub mod rng;
pub mod split;
pub mod stats;

pub use error::{Error, Result};
pub use nd::{Activation, Mlp, MlpSpec, OptimizerConfig, OptimizerKind, Tape, Tensor2, ValueId};
