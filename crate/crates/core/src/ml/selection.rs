//! K-fold cross-validation, recursive feature elimination and grid search.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rmse, MlError, ModelParams};
use crate::features::FeatureMatrix;
use crate::seed::{self, domain};

/// Relative tolerance under which two CV scores count as tied.
const SCORE_TIE: f64 = 1e-9;

/// Shuffled k-fold partition as `(train, test)` index pairs, both sorted.
/// The first `n % k` folds hold one extra row.
pub fn kfold(n: usize, k: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    assert!(k >= 2 && n >= k, "need 2 <= k <= n");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng_at(seed, &[domain::FOLD]));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let mut test = idx[start..start + size].to_vec();
        let mut train: Vec<usize> = idx[..start]
            .iter()
            .chain(&idx[start + size..])
            .copied()
            .collect();
        test.sort_unstable();
        train.sort_unstable();
        folds.push((train, test));
        start += size;
    }
    folds
}

fn pick(y: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| y[i]).collect()
}

/// Held-out RMSE of `params` on each fold.
pub fn cv_rmse(
    params: &ModelParams,
    x: &FeatureMatrix,
    y: &[f64],
    folds: &[(Vec<usize>, Vec<usize>)],
) -> Result<Vec<f64>, MlError> {
    folds
        .iter()
        .map(|(train, test)| {
            let model = params.fit(&x.select_rows(train), &pick(y, train))?;
            Ok(rmse(&model.predict(&x.select_rows(test)), &pick(y, test)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub params: ModelParams,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
    pub std_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub best: ModelParams,
    pub table: Vec<CvRow>,
}

impl GridResult {
    /// One row per configuration and fold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,model,params,fold,rmse,mean_rmse,std_rmse,selected\n");
        for (i, row) in self.table.iter().enumerate() {
            for (f, r) in row.fold_rmse.iter().enumerate() {
                out.push_str(&format!(
                    "{i},{},\"{}\",{f},{r:e},{:e},{:e},{}\n",
                    row.params.kind(),
                    row.params.describe(),
                    row.mean_rmse,
                    row.std_rmse,
                    i == self.best_index
                ));
            }
        }
        out
    }
}

/// Exhaustive search over `grid` with one fold assignment shared by every
/// configuration. Lowest mean RMSE wins; ties go to the earlier entry.
pub fn grid_search_cv(
    x: &FeatureMatrix,
    y: &[f64],
    grid: &[ModelParams],
    n_folds: usize,
    seed: u64,
) -> Result<GridResult, MlError> {
    if grid.is_empty() {
        return Err(MlError::EmptyGrid);
    }
    if x.n_rows() < n_folds.max(2) * 2 {
        return Err(MlError::TooFewRows {
            min: n_folds.max(2) * 2,
            found: x.n_rows(),
        });
    }
    let folds = kfold(x.n_rows(), n_folds, seed);
    let mut table = Vec::with_capacity(grid.len());
    let mut best_index = 0;
    for (i, params) in grid.iter().enumerate() {
        let fold_rmse = cv_rmse(params, x, y, &folds)?;
        let (mean_rmse, std_rmse) = mean_std(&fold_rmse);
        if i > 0 && mean_rmse < table_mean(&table, best_index) {
            best_index = i;
        }
        table.push(CvRow {
            params: params.clone(),
            fold_rmse,
            mean_rmse,
            std_rmse,
        });
    }
    Ok(GridResult {
        best_index,
        best: grid[best_index].clone(),
        table,
    })
}

fn table_mean(table: &[CvRow], i: usize) -> f64 {
    table[i].mean_rmse
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeStep {
    pub mask: Vec<bool>,
    pub cv_rmse: f64,
}

impl RfeStep {
    pub fn n_features(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeResult {
    pub mask: Vec<bool>,
    pub steps: Vec<RfeStep>,
}

impl RfeResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,n_features,cv_rmse,selected\n");
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{:e},{}\n",
                s.n_features(),
                s.cv_rmse,
                s.mask == self.mask
            ));
        }
        out
    }
}

/// Recursive feature elimination scored by k-fold CV.
///
/// Each step fits `estimator` on every fold, records the mean held-out RMSE
/// and drops the least important 10% of the surviving features (at least
/// one). Tree models rank by impurity importance averaged over the folds;
/// SVR ranks by permutation importance on each held-out fold. The returned
/// mask has the lowest CV RMSE, preferring fewer features among scores
/// within a relative 1e-9.
pub fn rfe_cv(
    estimator: &ModelParams,
    x: &FeatureMatrix,
    y: &[f64],
    n_folds: usize,
    seed: u64,
) -> Result<RfeResult, MlError> {
    let p = x.n_cols();
    if p == 0 {
        return Err(MlError::TooFewFeatures { min: 1, found: 0 });
    }
    if p == 1 {
        return Ok(RfeResult {
            mask: vec![true],
            steps: Vec::new(),
        });
    }
    if x.n_rows() < n_folds.max(2) * 2 {
        return Err(MlError::TooFewRows {
            min: n_folds.max(2) * 2,
            found: x.n_rows(),
        });
    }
    let folds = kfold(x.n_rows(), n_folds, seed);
    let mut mask = vec![true; p];
    let mut steps = Vec::new();
    for step in 0u64.. {
        let active: Vec<usize> = (0..p).filter(|&j| mask[j]).collect();
        let xs = x.select_columns(&mask);
        let mut importance = vec![0.0; active.len()];
        let mut scores = Vec::with_capacity(folds.len());
        for (f, (train, test)) in folds.iter().enumerate() {
            let model = estimator.fit(&xs.select_rows(train), &pick(y, train))?;
            let x_test = xs.select_rows(test);
            let y_test = pick(y, test);
            let base = rmse(&model.predict(&x_test), &y_test);
            scores.push(base);
            let imp = match model.importances() {
                Some(imp) => imp,
                None => {
                    permutation_importance(&model, &x_test, &y_test, base, seed, step, f as u64)
                }
            };
            for (a, v) in importance.iter_mut().zip(imp) {
                *a += v;
            }
        }
        steps.push(RfeStep {
            mask: mask.clone(),
            cv_rmse: mean_std(&scores).0,
        });
        if active.len() == 1 {
            break;
        }
        let drop = (active.len() / 10).max(1);
        let mut rank: Vec<usize> = (0..active.len()).collect();
        // least important first; among equals the higher index goes first
        rank.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]).then(b.cmp(&a)));
        for &r in &rank[..drop] {
            mask[active[r]] = false;
        }
    }

    let best = steps
        .iter()
        .map(|s| s.cv_rmse)
        .fold(f64::INFINITY, f64::min);
    let chosen = steps
        .iter()
        .filter(|s| s.cv_rmse <= best + SCORE_TIE * best.abs())
        .min_by_key(|s| s.n_features())
        .expect("at least one step");
    Ok(RfeResult {
        mask: chosen.mask.clone(),
        steps,
    })
}

fn permutation_importance(
    model: &super::Regressor,
    x_test: &FeatureMatrix,
    y_test: &[f64],
    base: f64,
    seed: u64,
    step: u64,
    fold: u64,
) -> Vec<f64> {
    let n = x_test.n_rows();
    let names = x_test.names.clone();
    (0..x_test.n_cols())
        .map(|j| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seed::rng_at(
                seed,
                &[domain::PERMUTE, step, fold, j as u64],
            ));
            let mut data = x_test.as_slice().to_vec();
            let w = names.len();
            for (i, &src) in perm.iter().enumerate() {
                data[i * w + j] = x_test.get(src, j);
            }
            let shuffled = FeatureMatrix::from_flat(names.clone(), data).expect("same shape");
            rmse(&model.predict(&shuffled), y_test) - base
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::{GbtParams, SvrParams, TreeParams};
    use rand::Rng;

    fn noisy_dataset(n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = seed::rng(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..10).map(|_| rng.random_range(-1.7..1.7)).collect())
            .collect();
        let y = rows.iter().map(|r| r[0]).collect();
        let names = (0..10).map(|j| format!("f{j}")).collect();
        (FeatureMatrix::new(names, &rows).unwrap(), y)
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold(10, 3, 1);
        let sizes: Vec<usize> = folds.iter().map(|f| f.1.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.1.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for (train, test) in &folds {
            assert_eq!(train.len() + test.len(), 10);
            assert!(test.iter().all(|t| !train.contains(t)));
        }
        assert_eq!(folds, kfold(10, 3, 1));
        assert_ne!(folds, kfold(10, 3, 2));
    }

    #[test]
    fn rfe_keeps_the_informative_feature() {
        let (x, y) = noisy_dataset(90, 3);
        for est in [
            ModelParams::Dt(TreeParams::default()),
            ModelParams::Gbt(GbtParams {
                n_estimators: 20,
                ..GbtParams::default()
            }),
            ModelParams::Svr(SvrParams {
                c: 10.0,
                epsilon: 0.01,
                ..SvrParams::default()
            }),
        ] {
            let r = rfe_cv(&est, &x, &y, 3, 11).unwrap();
            assert!(
                r.mask[0],
                "{:?} dropped feature 0: {:?}",
                est.kind(),
                r.mask
            );
            let best = r
                .steps
                .iter()
                .map(|s| s.cv_rmse)
                .fold(f64::INFINITY, f64::min);
            let chosen = r.steps.iter().find(|s| s.mask == r.mask).unwrap();
            assert!(chosen.cv_rmse <= best * (1.0 + 1e-9));
        }
    }

    #[test]
    fn rfe_single_feature() {
        let x = FeatureMatrix::new(vec!["a".into()], &[vec![1.0], vec![2.0]]).unwrap();
        let r = rfe_cv(
            &ModelParams::Dt(TreeParams::default()),
            &x,
            &[1.0, 2.0],
            3,
            0,
        )
        .unwrap();
        assert_eq!(r.mask, vec![true]);
    }

    #[test]
    fn rfe_duplicate_feature_tie_goes_to_fewer() {
        let mut rng = seed::rng(5);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let v: f64 = rng.random_range(-1.0..1.0);
                vec![v, v, rng.random_range(-1.0..1.0)]
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let x =
            FeatureMatrix::new(vec!["a".into(), "a_dup".into(), "noise".into()], &rows).unwrap();
        let r = rfe_cv(&ModelParams::Dt(TreeParams::default()), &x, &y, 3, 0).unwrap();
        assert_eq!(r.mask.iter().filter(|&&m| m).count(), 1);
        assert!(r.mask[0] || r.mask[1]);
        let full = &r.steps[0];
        let chosen = r.steps.iter().find(|s| s.mask == r.mask).unwrap();
        assert_eq!(full.cv_rmse, chosen.cv_rmse);
    }

    #[test]
    fn grid_search_examples() {
        let (x, y) = noisy_dataset(60, 8);
        let one = [ModelParams::Dt(TreeParams::default())];
        let r = grid_search_cv(&x, &y, &one, 3, 1).unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.table.len(), 1);
        assert_eq!(grid_search_cv(&x, &y, &[], 3, 1), Err(MlError::EmptyGrid));

        let stump = ModelParams::Dt(TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        });
        let r = grid_search_cv(&x, &y, &[stump, one[0].clone()], 3, 1).unwrap();
        let (a, b) = (&r.table[0].fold_rmse, &r.table[1].fold_rmse);
        assert!(a.iter().zip(b).all(|(s, d)| d < s));
        assert_eq!(r.best_index, 1);
        assert_eq!(r.to_csv().lines().count(), 1 + 2 * 3);
    }

    #[test]
    fn grid_search_prefers_more_boosting_rounds() {
        let (x, y) = noisy_dataset(90, 9);
        let grid: Vec<ModelParams> = [1, 50]
            .into_iter()
            .map(|m| {
                ModelParams::Gbt(GbtParams {
                    n_estimators: m,
                    ..GbtParams::default()
                })
            })
            .collect();
        let r = grid_search_cv(&x, &y, &grid, 3, 4).unwrap();
        assert_eq!(r.best_index, 1);
    }
}
