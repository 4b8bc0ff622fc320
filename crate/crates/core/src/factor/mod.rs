//! Latent factor models: matrix factorization, CP tensor factorization and
//! order-2 factorization machines.

pub mod config;
pub mod fm;
pub mod mf;
pub mod tensor;

pub use config::{Centering, Optimizer, TrainConfig};
pub use fm::{fm_encode, fm_fit, fm_fit_dataset, fm_predict, fm_predict_dense, FeatureLayout, FmModel, SparseFeatures};
pub use mf::{mf_fit, mf_fit_matrix, mf_fit_observations, mf_gradient, mf_loss, mf_predict, MfModel};
pub use tensor::{
    tf_fit, tf_fit_dataset, tf_predict, ContextBinning, ContextRating, TensorDims, TensorModel, DEFAULT_CONTEXT_BINS,
};
