//! Random forests and squared-loss gradient boosting over CART trees.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{check_params, grow, normalise, DecisionTree, TrainingColumns, TreeParams};
use super::{rmse, stable_mean, validate_xy, MlError};
use crate::features::FeatureMatrix;
use crate::seed::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSubset {
    /// ⌈p/3⌉ features per split.
    Third,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub max_features: FeatureSubset,
    pub seed: u64,
}

impl ForestParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            max_features: FeatureSubset::Third,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        stable_mean(self.trees.iter().map(|t| t.predict_row(row)))
    }

    pub fn feature_importances(&self) -> Vec<f64> {
        average_importances(&self.trees)
    }
}

fn average_importances(trees: &[DecisionTree]) -> Vec<f64> {
    let p = trees.first().map_or(0, |t| t.n_features);
    let mut acc = vec![0.0; p];
    for t in trees {
        for (a, v) in acc.iter_mut().zip(t.feature_importances()) {
            *a += v;
        }
    }
    normalise(&acc)
}

pub fn fit_random_forest(
    x: &FeatureMatrix,
    y: &[f64],
    params: &ForestParams,
) -> Result<RandomForest, MlError> {
    validate_xy(x, y, 2)?;
    if params.n_estimators == 0 {
        return Err(MlError::InvalidParams("n_estimators must be >= 1".into()));
    }
    let p = x.n_cols();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        max_features: match params.max_features {
            FeatureSubset::Third => Some(p.div_ceil(3)),
            FeatureSubset::All => None,
        },
    };
    check_params(&tree_params)?;
    let n = x.n_rows();
    let shared = (!params.bootstrap).then(|| {
        let data = TrainingColumns::from_rows(x, None);
        let order = data.presort();
        (data, order)
    });

    let mut trees = Vec::with_capacity(params.n_estimators);
    for t in 0..params.n_estimators {
        let mut rng = seed::rng_at(params.seed, &[domain::TREE, t as u64]);
        let tree = match &shared {
            Some((data, order)) => grow(data, y, order, &tree_params, &mut rng).0,
            None => {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let data = TrainingColumns::from_rows(x, Some(&rows));
                let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                grow(&data, &yb, &data.presort(), &tree_params, &mut rng).0
            }
        };
        trees.push(tree);
    }
    Ok(RandomForest { trees })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: Some(3),
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
    /// Training RMSE after each boosting round.
    pub train_rmse: Vec<f64>,
}

impl GradientBoosting {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.init + self.learning_rate * sum
    }

    pub fn feature_importances(&self) -> Vec<f64> {
        let p = self.trees.first().map_or(0, |t| t.n_features);
        let mut acc = vec![0.0; p];
        for t in &self.trees {
            for (a, g) in acc.iter_mut().zip(&t.gains) {
                *a += g;
            }
        }
        normalise(&acc)
    }
}

pub fn fit_gbt(
    x: &FeatureMatrix,
    y: &[f64],
    params: &GbtParams,
) -> Result<GradientBoosting, MlError> {
    validate_xy(x, y, 2)?;
    if !(params.learning_rate >= 0.0 && params.learning_rate.is_finite()) {
        return Err(MlError::InvalidParams(
            "learning_rate must be finite and >= 0".into(),
        ));
    }
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        max_features: None,
    };
    check_params(&tree_params)?;
    let data = TrainingColumns::from_rows(x, None);
    let order = data.presort();
    let init = stable_mean(y.iter().copied());
    let mut f = vec![init; y.len()];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut history = Vec::with_capacity(params.n_estimators);
    // unused: trees never subsample features
    let mut rng = seed::rng(0);
    // tree outputs accumulate unscaled so predictions match predict_row
    let mut sums = vec![0.0; y.len()];
    for _ in 0..params.n_estimators {
        let residual: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
        let (tree, fitted) = grow(&data, &residual, &order, &tree_params, &mut rng);
        for ((s, fi), out) in sums.iter_mut().zip(f.iter_mut()).zip(&fitted) {
            *s += out;
            *fi = init + params.learning_rate * *s;
        }
        history.push(rmse(&f, y));
        trees.push(tree);
    }
    Ok(GradientBoosting {
        init,
        learning_rate: params.learning_rate,
        trees,
        train_rmse: history,
    })
}
