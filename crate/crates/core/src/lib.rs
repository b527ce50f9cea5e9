//! Probabilistic attention: MAP value inference for a per-unit mixture of
//! isotropic Gaussians over queries and values, with inference-time key
//! adaptation and belief propagation from value corrections.
//!
//! Standard softmax attention is the special case with tied precisions,
//! norm-linked priors and a vanishing value precision; see
//! [`model::tie_and_link`] and [`inference::standard_attention`].

pub mod adapt;
pub mod bp;
pub mod error;
pub mod format;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod suite;

pub use adapt::{adapt, key_responsibilities, update_alpha, update_keys, AdaptConfig, Adapted, ClampWarning};
pub use bp::{
    bp_responsibilities, propagate, update_beta, update_mu, update_pi, BpConfig, Correction,
    CorrectionSet, Propagated,
};
pub use error::{Error, Result};
pub use inference::{
    batch_infer, em_step, infer_value, standard_attention, EmConfig, Inference, InferenceTrace,
    WeightMode,
};
pub use model::{
    conditional_log_density, joint_log_density, log_gaussian, responsibilities, tie_and_link,
    AttentionMatrix, AttentionRow, HyperPriors, ModelParams,
};
