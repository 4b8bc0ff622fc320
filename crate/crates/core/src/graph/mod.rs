//! Graph and sparse linear models: random-walk item similarity, the
//! factored SLIM variant of an item similarity matrix, and the linear
//! feature model.

pub mod linear;
pub mod slim;
pub mod walk;

pub use linear::{linear_fit, linear_fit_dataset, linear_predict, LinearModel, LinearRecommender, DEFAULT_SCHEMA};
pub use slim::{compute_s, slim_fit, slim_predict, SlimConfig, SlimModel, SlimRecommender};
pub use walk::{build_graph, rw_similarity, InteractionGraph, WalkConfig};
