//! No-regret learning in Bayesian games over smooth auction mechanisms.
//!
//! The crate covers finite pay-your-bid auctions, exhaustive (λ, μ)-smoothness
//! checks, Hedge and Exp3 learners, a seeded simulator for the repeated
//! population game, trace analysis (Bayes-CCE epsilon, welfare ratios,
//! finite-time bounds) and exact agent-normal-form tools including a small
//! dense simplex solver.

pub mod analysis;
pub mod error;
pub mod exact;
pub mod learners;
pub mod lp;
pub mod mechanism;
pub mod rng;
pub mod simulator;
pub mod smoothness;

pub use error::{Error, Result};
pub use mechanism::{
    ActionSpace, Mechanism, MechanismDescriptor, MechanismKind, Outcome, TieBreak,
};
pub use smoothness::{SmoothnessParams, SmoothnessReport};
