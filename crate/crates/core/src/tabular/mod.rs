//! Feature-channel classifiers: a bootstrap random forest and discrete
//! AdaBoost over decision stumps.

mod boost;
mod forest;

pub use boost::{train_adaboost, BoostConfig, BoostModel, Stump};
pub use forest::{train_forest, ForestConfig, ForestModel, Node, Tree, LEAF_EPSILON};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Label, LogitPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TabularModel {
    Forest(ForestModel),
    Boost(BoostModel),
}

impl TabularModel {
    pub fn n_features(&self) -> usize {
        match self {
            TabularModel::Forest(m) => m.n_features,
            TabularModel::Boost(m) => m.n_features,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<LogitPair> {
        match self {
            TabularModel::Forest(m) => m.predict(x),
            TabularModel::Boost(m) => m.predict(x),
        }
    }
}

pub(crate) fn check_training_set(x: &[Vec<f64>], y: &[Label]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::dim(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 training rows, got {}",
            x.len()
        )));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::dim(d, bad.len()));
    }
    if y.iter().all(|l| *l == y[0]) {
        return Err(Error::SingleClass);
    }
    Ok(d)
}
