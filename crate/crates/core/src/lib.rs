//! Contextual multinomial-logit (MNL) assortment bandit toolkit.
//!
//! The crate covers the full loop of a revenue-maximizing assortment
//! experiment under a linear-in-features MNL choice model:
//!
//! * [`mnl`] — choice probabilities, expected revenue, purchase sampling,
//!   log-likelihood, and empirical Fisher information.
//! * [`estimation`] — pilot maximum-likelihood fits on exploration data and
//!   norm-constrained local refits.
//! * [`opt`] — assortment solvers for the per-period upper-confidence
//!   objective: exhaustive enumeration, local-swap search, and a
//!   discretized dynamic program with multivariate direction sampling.
//! * [`policy`] — the confidence-bound policy built from those pieces, plus
//!   an epoch-based utility-learning baseline that ignores features.
//! * [`sim`] — instance generators, episode simulation, replication
//!   harnesses, and trace output.
//!
//! Everything is deterministic given a seed: simulations use counter-mode
//! RNG streams so serial and parallel runs produce identical traces.

#![forbid(unsafe_code)]

pub mod error;
pub(crate) mod linalg;
pub(crate) mod randv;
pub mod mnl;
pub mod estimation;
pub mod opt;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
pub use mnl::{
    Assortment, ChoiceProbabilities, Coefficient, ContextSlice, FisherMatrix, InstanceStats,
    Observation, ObservationLog,
};
