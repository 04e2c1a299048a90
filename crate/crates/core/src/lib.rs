//! Fatigue-aware ad creative selection.
//!
//! A contextual Thompson-sampling bandit whose click predictor carries a
//! per-user advertising-fatigue signal: the similarity-weighted count of
//! creatives the user was exposed to over the trailing 24 hours. The crate
//! bundles the selection policy, the hashed logistic reward model with a
//! diagonal Laplace posterior, the exposure history store, the creative
//! similarity pipeline, and a synthetic RTB environment plus an A/B
//! experiment harness for evaluating fatigue-aware selection against a
//! non-fatigue baseline and a uniform-random policy.

pub mod config;
pub mod error;
pub mod fatigue;
pub mod harness;
pub mod history;
pub mod model;
pub mod policy;
pub mod similarity;
pub mod simenv;

pub use error::{Error, Result};
