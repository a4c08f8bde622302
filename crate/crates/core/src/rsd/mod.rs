//! Redundancy suppression distillation: correlation loss, decoupler, and baselines.

mod aad;
mod baseline;
mod correlation;
mod objective;

pub use aad::{aad_forward_vars, expanded_dim, AadModule, AadVars, DEFAULT_EXPANSION};
pub use baseline::{ce_loss, feature_mse_loss, kd_kld_loss, one_hot};
pub use correlation::{
    degenerate_columns, pearson_matrix, rsd_loss, rsd_on_logits, standardize_columns, CorrelationMatrix,
    EmbeddingBatch, Layer, RsdLoss, Source, TargetMatrix, STANDARDIZE_EPS,
};
pub use objective::{
    full_objective, objective_gradcheck, ApplyTo, LossBreakdown, RsdConfig, DEFAULT_KAPPA, DEFAULT_LAMBDA,
    DEFAULT_TEMPERATURE,
};
