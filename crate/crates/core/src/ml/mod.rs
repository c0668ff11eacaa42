//! Classical regressors: CART trees, random forests, gradient boosting and
//! RBF-kernel ε-SVR, plus feature elimination and grid search.
//!
//! Each model predicts a single target; the ID and sensing regressors are
//! fitted independently.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

pub mod ensemble;
pub mod selection;
pub mod svr;
pub mod tree;

pub use ensemble::{FeatureSubset, ForestParams, GbtParams, GradientBoosting, RandomForest};
pub use selection::{grid_search_cv, kfold, rfe_cv, CvRow, GridResult, RfeResult, RfeStep};
pub use svr::{Gamma, SvrModel, SvrParams};
pub use tree::{DecisionTree, TreeNode, TreeParams};

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("training data is empty")]
    Empty,
    #[error("need at least {min} rows, got {found}")]
    TooFewRows { min: usize, found: usize },
    #[error("{rows} feature rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("non-finite target at row {0}")]
    NonFiniteTarget(usize),
    #[error("feature {feature} has mean {mean:.3}; SVR expects standardised input")]
    NotStandardized { feature: usize, mean: f64 },
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("feature elimination needs at least {min} features, got {found}")]
    TooFewFeatures { min: usize, found: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Dt,
    Rf,
    Gbt,
    Svr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Dt, ModelKind::Rf, ModelKind::Gbt, ModelKind::Svr];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Gbt => "gbt",
            ModelKind::Svr => "svr",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = MlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| MlError::InvalidParams(format!("unknown model kind {s:?}")))
    }
}

/// Hyperparameters of one model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Dt(TreeParams),
    Rf(ForestParams),
    Gbt(GbtParams),
    Svr(SvrParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Dt(_) => ModelKind::Dt,
            ModelParams::Rf(_) => ModelKind::Rf,
            ModelParams::Gbt(_) => ModelKind::Gbt,
            ModelParams::Svr(_) => ModelKind::Svr,
        }
    }

    pub fn fit(&self, x: &FeatureMatrix, y: &[f64]) -> Result<Regressor, MlError> {
        Ok(match self {
            ModelParams::Dt(p) => Regressor::Dt(tree::fit_decision_tree(x, y, p)?),
            ModelParams::Rf(p) => Regressor::Rf(ensemble::fit_random_forest(x, y, p)?),
            ModelParams::Gbt(p) => Regressor::Gbt(ensemble::fit_gbt(x, y, p)?),
            ModelParams::Svr(p) => Regressor::Svr(svr::fit_svr(x, y, p)?),
        })
    }

    /// Compact `key=value` form used in CV tables.
    pub fn describe(&self) -> String {
        let depth = |d: Option<usize>| d.map_or("none".to_string(), |d| d.to_string());
        match self {
            ModelParams::Dt(p) => format!(
                "max_depth={} min_samples_split={}",
                depth(p.max_depth),
                p.min_samples_split
            ),
            ModelParams::Rf(p) => format!(
                "n_estimators={} max_depth={} min_samples_split={}",
                p.n_estimators,
                depth(p.max_depth),
                p.min_samples_split
            ),
            ModelParams::Gbt(p) => format!(
                "n_estimators={} learning_rate={} max_depth={} min_samples_split={}",
                p.n_estimators,
                p.learning_rate,
                depth(p.max_depth),
                p.min_samples_split
            ),
            ModelParams::Svr(p) => format!("C={} epsilon={} gamma={}", p.c, p.epsilon, p.gamma),
        }
    }

    /// Hyperparameter grid for `kind` with `n_features` inputs.
    pub fn default_grid(kind: ModelKind, seed: u64) -> Vec<ModelParams> {
        let depths = [5, 10, 20];
        let splits = [2, 10];
        let mut grid = Vec::new();
        match kind {
            ModelKind::Dt => {
                for d in depths {
                    for s in splits {
                        grid.push(ModelParams::Dt(TreeParams {
                            max_depth: Some(d),
                            min_samples_split: s,
                            max_features: None,
                        }));
                    }
                }
            }
            ModelKind::Rf => {
                for n in [100, 300] {
                    for d in depths {
                        for s in splits {
                            grid.push(ModelParams::Rf(ForestParams {
                                n_estimators: n,
                                max_depth: Some(d),
                                min_samples_split: s,
                                ..ForestParams::with_seed(seed)
                            }));
                        }
                    }
                }
            }
            ModelKind::Gbt => {
                for n in [100, 300] {
                    for lr in [0.05, 0.1] {
                        for d in depths {
                            for s in splits {
                                grid.push(ModelParams::Gbt(GbtParams {
                                    n_estimators: n,
                                    learning_rate: lr,
                                    max_depth: Some(d),
                                    min_samples_split: s,
                                }));
                            }
                        }
                    }
                }
            }
            ModelKind::Svr => {
                for c in [1.0, 10.0, 100.0] {
                    for eps in [0.01, 0.1] {
                        for gamma in [Gamma::InverseFeatures, Gamma::Value(0.1)] {
                            grid.push(ModelParams::Svr(SvrParams {
                                c,
                                epsilon: eps,
                                gamma,
                                ..SvrParams::default()
                            }));
                        }
                    }
                }
            }
        }
        grid
    }

    /// Mid-grid configuration used as the estimator inside feature
    /// elimination.
    pub fn rfe_estimator(kind: ModelKind, seed: u64) -> ModelParams {
        match kind {
            ModelKind::Dt => ModelParams::Dt(TreeParams {
                max_depth: Some(10),
                min_samples_split: 2,
                max_features: None,
            }),
            ModelKind::Rf => ModelParams::Rf(ForestParams {
                n_estimators: 50,
                max_depth: Some(10),
                ..ForestParams::with_seed(seed)
            }),
            ModelKind::Gbt => ModelParams::Gbt(GbtParams {
                n_estimators: 50,
                learning_rate: 0.1,
                max_depth: Some(5),
                min_samples_split: 2,
            }),
            ModelKind::Svr => ModelParams::Svr(SvrParams {
                c: 10.0,
                epsilon: 0.1,
                ..SvrParams::default()
            }),
        }
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Regressor {
    Dt(DecisionTree),
    Rf(RandomForest),
    Gbt(GradientBoosting),
    Svr(SvrModel),
}

impl Regressor {
    pub fn kind(&self) -> ModelKind {
        match self {
            Regressor::Dt(_) => ModelKind::Dt,
            Regressor::Rf(_) => ModelKind::Rf,
            Regressor::Gbt(_) => ModelKind::Gbt,
            Regressor::Svr(_) => ModelKind::Svr,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Regressor::Dt(m) => m.predict_row(row),
            Regressor::Rf(m) => m.predict_row(row),
            Regressor::Gbt(m) => m.predict_row(row),
            Regressor::Svr(m) => m.predict_row(row),
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    /// Normalised impurity importances; `None` for SVR.
    pub fn importances(&self) -> Option<Vec<f64>> {
        match self {
            Regressor::Dt(m) => Some(m.feature_importances()),
            Regressor::Rf(m) => Some(m.feature_importances()),
            Regressor::Gbt(m) => Some(m.feature_importances()),
            Regressor::Svr(_) => None,
        }
    }
}

/// Mean that reproduces a constant sequence exactly.
pub fn stable_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = values.into_iter();
    let Some(first) = it.next() else {
        return 0.0;
    };
    let (mut sum, mut n) = (0.0, 1usize);
    for v in it {
        sum += v - first;
        n += 1;
    }
    first + sum / n as f64
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> f64 {
    assert_eq!(pred.len(), actual.len(), "rmse length mismatch");
    if pred.is_empty() {
        return 0.0;
    }
    let sse: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    (sse / pred.len() as f64).sqrt()
}

pub(crate) fn validate_xy(x: &FeatureMatrix, y: &[f64], min_rows: usize) -> Result<(), MlError> {
    if x.n_rows() == 0 || x.n_cols() == 0 {
        return Err(MlError::Empty);
    }
    if x.n_rows() != y.len() {
        return Err(MlError::LengthMismatch {
            rows: x.n_rows(),
            targets: y.len(),
        });
    }
    if x.n_rows() < min_rows {
        return Err(MlError::TooFewRows {
            min: min_rows,
            found: x.n_rows(),
        });
    }
    for (i, r) in x.rows().enumerate() {
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(MlError::NonFinite { row: i, col: j });
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(MlError::NonFiniteTarget(i));
    }
    Ok(())
}
