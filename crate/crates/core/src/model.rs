//! The prediction contract shared by every rating model.

use crate::error::Result;

/// Anything that scores a (user, item) pair on dense indices.
pub trait Predictor: Send + Sync {
    /// Predicted rating, clamped to the model's rating scale.
    fn predict(&self, user: usize, item: usize) -> Result<f64>;

    /// Prediction for an interaction observed at `timestamp`. Context-free
    /// models ignore the timestamp.
    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        let _ = timestamp;
        self.predict(user, item)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        (**self).predict(user, item)
    }

    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        (**self).predict_at(user, item, timestamp)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        (**self).predict(user, item)
    }

    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        (**self).predict_at(user, item, timestamp)
    }
}

impl<P: Predictor + ?Sized> Predictor for std::sync::Arc<P> {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        (**self).predict(user, item)
    }

    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        (**self).predict_at(user, item, timestamp)
    }
}

/// Always predicts the training mean. The baseline for RMSE comparisons.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlobalMeanModel {
    pub mean: f64,
}

impl GlobalMeanModel {
    pub fn fit(train: &crate::data::RatingDataset) -> Result<Self> {
        Ok(Self { mean: crate::data::global_mean(train)? })
    }
}

impl Predictor for GlobalMeanModel {
    fn predict(&self, _user: usize, _item: usize) -> Result<f64> {
        Ok(self.mean)
    }
}
