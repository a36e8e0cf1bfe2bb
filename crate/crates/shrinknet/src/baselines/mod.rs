//! Classical comparison models: multinomial logistic regression and a
//! random forest, trained on features extracted from the same samples.

mod features;
mod forest;
mod logistic;

pub use features::{extract_features, FeatureMode, FeatureVector};
pub use forest::{rf_train, DecisionTree, RandomForestModel};
pub use logistic::{lr_train, LogisticRegressionModel};

use crate::error::{Error, Result};

/// Argmax with ties broken toward the lower index.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Either baseline model behind one prediction surface.
pub enum BaselineModel {
    Lr(LogisticRegressionModel),
    Rf(RandomForestModel),
}

impl BaselineModel {
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        match self {
            BaselineModel::Lr(m) => m.predict(features),
            BaselineModel::Rf(m) => m.predict(features),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::contract(format!(
            "feature dimensionality mismatch: model expects {expected}, got {got}"
        )));
    }
    Ok(())
}

/// splitmix64, used to derive independent per-tree seeds.
pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
