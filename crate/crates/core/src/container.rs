//! Declarative model specifications, a closed enum over every fitted model
//! type, and the versioned on-disk model container.

use serde::{Deserialize, Serialize};

use crate::data::{build_matrix, IdIndex, RatingDataset};
use crate::ensemble::{
    bagging_fit, boosting_fit, stacking_fit, BaggingEnsemble, BoostingEnsemble, HybridModel, StackingConfig,
    StackingEnsemble, Trainer, WeightedEnsemble,
};
use crate::error::{Error, Result};
use crate::factor::{fm_fit_dataset, mf_fit, tf_fit_dataset, FmModel, MfModel, TensorModel, TrainConfig, DEFAULT_CONTEXT_BINS};
use crate::graph::{compute_s, linear_fit_dataset, slim_fit, LinearRecommender, SlimConfig, SlimRecommender};
use crate::ingest::Catalog;
use crate::model::{GlobalMeanModel, Predictor};
use crate::preprocess::Axis;
use crate::similarity::{knn_fit, CbfModel, KnnModel, DEFAULT_LIKE_THRESHOLD};

pub const MODEL_FORMAT: &str = "reckit-model";
pub const MODEL_VERSION: u32 = 1;

fn default_bins() -> usize {
    DEFAULT_CONTEXT_BINS
}
fn default_neighbors() -> usize {
    20
}
fn default_like() -> f64 {
    DEFAULT_LIKE_THRESHOLD
}
fn default_linear_lambda() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    0.5
}
fn default_shrinkage() -> f64 {
    0.5
}

/// What to train. Serialized with an `algorithm` tag, e.g.
/// `{"algorithm": "mf", "train": {"factors": 32}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    GlobalMean,
    Mf {
        #[serde(default)]
        train: TrainConfig,
    },
    Tensor {
        #[serde(default)]
        train: TrainConfig,
        #[serde(default = "default_bins")]
        bins: usize,
    },
    Fm {
        #[serde(default)]
        train: TrainConfig,
    },
    UserKnn {
        #[serde(default = "default_neighbors")]
        neighbors: usize,
    },
    ItemKnn {
        #[serde(default = "default_neighbors")]
        neighbors: usize,
    },
    Cbf {
        #[serde(default = "default_like")]
        like_threshold: f64,
    },
    Slim {
        #[serde(default)]
        slim: SlimConfig,
    },
    Linear {
        #[serde(default = "default_linear_lambda")]
        lambda: f64,
    },
    Hybrid {
        cf: Box<ModelSpec>,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_like")]
        like_threshold: f64,
    },
    Weighted {
        members: Vec<ModelSpec>,
        weights: Vec<f64>,
    },
    Bagging {
        #[serde(default)]
        train: TrainConfig,
        members: usize,
    },
    Boosting {
        #[serde(default)]
        train: TrainConfig,
        rounds: usize,
        #[serde(default = "default_shrinkage")]
        shrinkage: f64,
    },
    Stacking {
        members: Vec<ModelSpec>,
        #[serde(default)]
        stacking: StackingConfig,
    },
}

impl ModelSpec {
    pub fn is_ensemble(&self) -> bool {
        matches!(
            self,
            ModelSpec::Weighted { .. } | ModelSpec::Bagging { .. } | ModelSpec::Boosting { .. } | ModelSpec::Stacking { .. }
        )
    }

    /// Replace every seed in the model spec tree with `seed`. Components derive
    /// their own streams from it by name.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.set_seed(seed);
        self
    }

    fn set_seed(&mut self, seed: u64) {
        match self {
            ModelSpec::Mf { train }
            | ModelSpec::Tensor { train, .. }
            | ModelSpec::Fm { train }
            | ModelSpec::Bagging { train, .. }
            | ModelSpec::Boosting { train, .. } => train.seed = seed,
            ModelSpec::Slim { slim } => slim.seed = seed,
            ModelSpec::Hybrid { cf, .. } => cf.set_seed(seed),
            ModelSpec::Weighted { members, .. } => members.iter_mut().for_each(|m| m.set_seed(seed)),
            ModelSpec::Stacking { members, stacking } => {
                stacking.seed = seed;
                members.iter_mut().for_each(|m| m.set_seed(seed));
            }
            ModelSpec::GlobalMean | ModelSpec::UserKnn { .. } | ModelSpec::ItemKnn { .. } | ModelSpec::Cbf { .. } | ModelSpec::Linear { .. } => {}
        }
    }

    /// The gradient-trained configuration, for specs that have one.
    pub fn train_config(&self) -> Option<&TrainConfig> {
        match self {
            ModelSpec::Mf { train }
            | ModelSpec::Tensor { train, .. }
            | ModelSpec::Fm { train }
            | ModelSpec::Bagging { train, .. }
            | ModelSpec::Boosting { train, .. } => Some(train),
            _ => None,
        }
    }

    /// This spec with its training configuration replaced; `None` for specs
    /// without one.
    pub fn with_train_config(&self, config: TrainConfig) -> Option<ModelSpec> {
        let mut spec = self.clone();
        match &mut spec {
            ModelSpec::Mf { train }
            | ModelSpec::Tensor { train, .. }
            | ModelSpec::Fm { train }
            | ModelSpec::Bagging { train, .. }
            | ModelSpec::Boosting { train, .. } => *train = config,
            _ => return None,
        }
        Some(spec)
    }

    /// Whether fitting needs an item catalog.
    pub fn needs_catalog(&self) -> bool {
        match self {
            ModelSpec::Cbf { .. } | ModelSpec::Hybrid { .. } => true,
            ModelSpec::Weighted { members, .. } | ModelSpec::Stacking { members, .. } => {
                members.iter().any(ModelSpec::needs_catalog)
            }
            _ => false,
        }
    }
}

/// Every fitted model the container can hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum AnyModel {
    GlobalMean(GlobalMeanModel),
    Mf(MfModel),
    Tensor(TensorModel),
    Fm(FmModel),
    Knn(KnnModel),
    Cbf(CbfModel),
    Slim(SlimRecommender),
    Linear(LinearRecommender),
    Hybrid(Box<HybridModel<AnyModel, CbfModel>>),
    Weighted(WeightedEnsemble<AnyModel>),
    Bagging(BaggingEnsemble),
    Boosting(BoostingEnsemble),
    Stacking(StackingEnsemble<AnyModel>),
}

impl AnyModel {
    fn inner(&self) -> &dyn Predictor {
        match self {
            AnyModel::GlobalMean(m) => m,
            AnyModel::Mf(m) => m,
            AnyModel::Tensor(m) => m,
            AnyModel::Fm(m) => m,
            AnyModel::Knn(m) => m,
            AnyModel::Cbf(m) => m,
            AnyModel::Slim(m) => m,
            AnyModel::Linear(m) => m,
            AnyModel::Hybrid(m) => m.as_ref(),
            AnyModel::Weighted(m) => m,
            AnyModel::Bagging(m) => m,
            AnyModel::Boosting(m) => m,
            AnyModel::Stacking(m) => m,
        }
    }
}

impl Predictor for AnyModel {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.inner().predict(user, item)
    }

    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        self.inner().predict_at(user, item, timestamp)
    }
}

fn require_catalog(catalog: Option<&Catalog>) -> Result<&Catalog> {
    catalog.ok_or_else(|| Error::InvalidConfig("content-based models need an item catalog".into()))
}

/// Train the model described by `spec` on `train`.
pub fn fit_model(spec: &ModelSpec, train: &RatingDataset, catalog: Option<&Catalog>) -> Result<AnyModel> {
    Ok(match spec {
        ModelSpec::GlobalMean => AnyModel::GlobalMean(GlobalMeanModel::fit(train)?),
        ModelSpec::Mf { train: cfg } => AnyModel::Mf(mf_fit(train, cfg)?),
        ModelSpec::Tensor { train: cfg, bins } => AnyModel::Tensor(tf_fit_dataset(train, *bins, cfg)?),
        ModelSpec::Fm { train: cfg } => AnyModel::Fm(fm_fit_dataset(train, cfg)?),
        ModelSpec::UserKnn { neighbors } => AnyModel::Knn(knn_fit(&build_matrix(train)?, Axis::User, *neighbors, train.scale())?),
        ModelSpec::ItemKnn { neighbors } => AnyModel::Knn(knn_fit(&build_matrix(train)?, Axis::Item, *neighbors, train.scale())?),
        ModelSpec::Cbf { like_threshold } => AnyModel::Cbf(CbfModel::fit(train, require_catalog(catalog)?, *like_threshold)?),
        ModelSpec::Slim { slim } => {
            let matrix = build_matrix(train)?;
            let model = slim_fit(&compute_s(&matrix)?, slim)?;
            AnyModel::Slim(SlimRecommender { model, train: matrix, scale: train.scale() })
        }
        ModelSpec::Linear { lambda } => AnyModel::Linear(linear_fit_dataset(train, *lambda)?),
        ModelSpec::Hybrid { cf, beta, like_threshold } => {
            let cbf = CbfModel::fit(train, require_catalog(catalog)?, *like_threshold)?;
            AnyModel::Hybrid(Box::new(HybridModel::new(fit_model(cf, train, catalog)?, cbf, *beta)?))
        }
        ModelSpec::Weighted { members, weights } => {
            if members.is_empty() {
                return Err(Error::InvalidConfig("weighted ensemble needs at least one member".into()));
            }
            let fitted = members
                .iter()
                .enumerate()
                .map(|(k, m)| fit_model(m, train, catalog).map_err(Error::member(k)))
                .collect::<Result<Vec<_>>>()?;
            AnyModel::Weighted(WeightedEnsemble::new(fitted, weights)?)
        }
        ModelSpec::Bagging { train: cfg, members } => AnyModel::Bagging(bagging_fit(train, cfg, *members, cfg.seed)?),
        ModelSpec::Boosting { train: cfg, rounds, shrinkage } => {
            AnyModel::Boosting(boosting_fit(train, cfg, *rounds, *shrinkage)?)
        }
        ModelSpec::Stacking { members, stacking } => {
            let closures: Vec<Box<Trainer<'_, AnyModel>>> = members
                .iter()
                .map(|m| Box::new(move |d: &RatingDataset| fit_model(m, d, catalog)) as Box<Trainer<'_, AnyModel>>)
                .collect();
            let refs: Vec<&Trainer<'_, AnyModel>> = closures.iter().map(|b| b.as_ref()).collect();
            AnyModel::Stacking(stacking_fit(train, &refs, stacking)?)
        }
    })
}

/// A fitted model with the model spec that produced it and the id maps its dense
/// indices refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub users: IdIndex,
    pub items: IdIndex,
    pub model: AnyModel,
}

impl ModelFile {
    pub fn new(spec: ModelSpec, train: &RatingDataset, model: AnyModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            spec,
            users: train.users().as_ref().clone(),
            items: train.items().as_ref().clone(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: serde_json::Value = serde_json::from_str(text)?;
        match (header.get("format").and_then(|f| f.as_str()), header.get("version").and_then(|v| v.as_u64())) {
            (Some(MODEL_FORMAT), Some(v)) if v == u64::from(MODEL_VERSION) => {}
            (Some(MODEL_FORMAT), v) => {
                return Err(Error::Value(format!("unsupported model version {v:?}, expected {MODEL_VERSION}")));
            }
            _ => return Err(Error::Value(format!("not a {MODEL_FORMAT} file"))),
        }
        Ok(serde_json::from_value(header)?)
    }
}
