//! Recommendation toolkit: memory-based and content-based filtering, latent
//! factor models, graph and sparse linear models, ensembles, ranking metrics,
//! data splitting, hyperparameter search and RFM customer segmentation.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod container;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod factor;
pub mod graph;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod segmentation;
pub mod similarity;
pub mod split;
pub mod tuning;

pub use container::{fit_model, AnyModel, ModelFile, ModelSpec};
pub use data::{
    build_matrix, global_mean, top_k, IdIndex, Interaction, RatingDataset, RatingScale, RecommendationList,
    SparseRatingMatrix,
};
pub use error::{Error, Result};
pub use model::Predictor;
