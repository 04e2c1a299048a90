//! Hashed sparse logistic CTR model.
//!
//! Context features are expanded with creative-tagged copies (the action
//! interaction), hashed into a 2^M index space, and fed to an L2-regularized
//! logistic regression fitted by SGD. A diagonal Laplace approximation
//! around the fitted weights gives the Gaussian posterior that Thompson
//! sampling draws from. In fatigue-aware mode two reserved coordinates past
//! the hash space carry the fatigue metric and its square.

mod features;
mod posterior;
mod train;

pub use features::{
    expand_features, fnv1a64, hash_features, ContextVector, HashedFeatures, RawFeatures,
    BIAS_FEATURE,
};
pub use posterior::{Mode, Posterior};
pub use train::{
    downsample, mean_score, nll, nll_grad, sample_score, sample_weights, sigmoid, train_batch,
    SgdConfig, TrainingExample,
};
