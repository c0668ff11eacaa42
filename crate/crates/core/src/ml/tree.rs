//! CART regression trees with the variance-reduction criterion.
//!
//! Candidate thresholds are midpoints between consecutive distinct values.
//! A row goes left when `x[feature] <= threshold`. Among equally good
//! splits the lowest feature index wins, then the lowest threshold.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{stable_mean, validate_xy, MlError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features drawn per split; `None` evaluates all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
        n_samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
    },
}

/// Node arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    /// Total squared-error reduction attributed to each feature.
    pub gains: Vec<f64>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn feature_importances(&self) -> Vec<f64> {
        normalise(&self.gains)
    }
}

pub(crate) fn normalise(gains: &[f64]) -> Vec<f64> {
    let total: f64 = gains.iter().sum();
    if total > 0.0 {
        gains.iter().map(|g| g / total).collect()
    } else {
        vec![0.0; gains.len()]
    }
}

pub fn fit_decision_tree(
    x: &FeatureMatrix,
    y: &[f64],
    params: &TreeParams,
) -> Result<DecisionTree, MlError> {
    validate_xy(x, y, 2)?;
    check_params(params)?;
    let data = TrainingColumns::from_rows(x, None);
    let mut rng = crate::seed::rng(0);
    Ok(grow(&data, y, &data.presort(), params, &mut rng).0)
}

pub(crate) fn check_params(params: &TreeParams) -> Result<(), MlError> {
    if params.min_samples_split < 2 {
        return Err(MlError::InvalidParams(
            "min_samples_split must be >= 2".into(),
        ));
    }
    if params.max_features == Some(0) {
        return Err(MlError::InvalidParams("max_features must be >= 1".into()));
    }
    Ok(())
}

/// Column-major copy of the training rows, one entry per sample.
pub(crate) struct TrainingColumns {
    pub cols: Vec<Vec<f64>>,
    pub n_samples: usize,
}

impl TrainingColumns {
    /// `rows` selects (possibly repeated) rows; `None` takes all of them.
    pub fn from_rows(x: &FeatureMatrix, rows: Option<&[usize]>) -> Self {
        let idx: Vec<usize> = match rows {
            Some(r) => r.to_vec(),
            None => (0..x.n_rows()).collect(),
        };
        let cols = (0..x.n_cols())
            .map(|j| idx.iter().map(|&i| x.get(i, j)).collect())
            .collect();
        Self {
            cols,
            n_samples: idx.len(),
        }
    }

    /// Sample indices sorted by each feature, ties by sample index.
    pub fn presort(&self) -> Vec<Vec<u32>> {
        self.cols
            .iter()
            .map(|c| {
                let mut o: Vec<u32> = (0..self.n_samples as u32).collect();
                o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect()
    }
}

/// Grows a tree on the samples of `data` with targets `y`. Returns the tree
/// and the fitted value of every sample.
pub(crate) fn grow<R: Rng>(
    data: &TrainingColumns,
    y: &[f64],
    order: &[Vec<u32>],
    params: &TreeParams,
    rng: &mut R,
) -> (DecisionTree, Vec<f64>) {
    let p = data.cols.len();
    let mut b = Builder {
        cols: &data.cols,
        y,
        order: order.to_vec(),
        params,
        rng,
        nodes: Vec::new(),
        gains: vec![0.0; p],
        fitted: vec![0.0; data.n_samples],
        goes_left: vec![false; data.n_samples],
        scratch: Vec::with_capacity(data.n_samples),
        centered: vec![0.0; data.n_samples],
    };
    b.build(0, data.n_samples, 0);
    (
        DecisionTree {
            nodes: b.nodes,
            n_features: p,
            gains: b.gains,
        },
        b.fitted,
    )
}

struct Builder<'a, R> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    order: Vec<Vec<u32>>,
    params: &'a TreeParams,
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
    gains: Vec<f64>,
    fitted: Vec<f64>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    centered: Vec<f64>,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let n = hi - lo;
        let samples = &self.order[0][lo..hi];
        let mean = stable_mean(samples.iter().map(|&s| self.y[s as usize]));
        let constant = samples
            .iter()
            .all(|&s| self.y[s as usize] == self.y[samples[0] as usize]);

        let stop = n < self.params.min_samples_split
            || constant
            || self.params.max_depth.is_some_and(|d| depth >= d);
        let best = if stop {
            None
        } else {
            self.best_split(lo, hi, mean)
        };

        let Some(best) = best else {
            for &s in &self.order[0][lo..hi] {
                self.fitted[s as usize] = mean;
            }
            self.nodes.push(TreeNode::Leaf {
                value: mean,
                n_samples: n,
            });
            return self.nodes.len() - 1;
        };

        let col = &self.cols[best.feature];
        for &s in &self.order[best.feature][lo..hi] {
            self.goes_left[s as usize] = col[s as usize] <= best.threshold;
        }
        let mut n_left = 0;
        for f in 0..self.order.len() {
            self.scratch.clear();
            let seg = &mut self.order[f][lo..hi];
            let mut w = 0;
            for i in 0..seg.len() {
                let s = seg[i];
                if self.goes_left[s as usize] {
                    seg[w] = s;
                    w += 1;
                } else {
                    self.scratch.push(s);
                }
            }
            seg[w..].copy_from_slice(&self.scratch);
            n_left = w;
        }
        self.gains[best.feature] += best.gain;

        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: mean,
            n_samples: n,
        });
        let left = self.build(lo, lo + n_left, depth + 1);
        let right = self.build(lo + n_left, hi, depth + 1);
        self.nodes[me] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            n_samples: n,
        };
        me
    }

    fn best_split(&mut self, lo: usize, hi: usize, mean: f64) -> Option<Candidate> {
        let p = self.cols.len();
        let n = hi - lo;
        let features: Vec<usize> = match self.params.max_features {
            Some(k) if k < p => {
                let mut f = sample(self.rng, p, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };

        let mut total = 0.0;
        let mut sse = 0.0;
        for &s in &self.order[0][lo..hi] {
            let c = self.y[s as usize] - mean;
            self.centered[s as usize] = c;
            total += c;
            sse += c * c;
        }
        let base = total * total / n as f64;
        let min_gain = sse * 1e-12;

        let mut best: Option<Candidate> = None;
        for f in features {
            let col = &self.cols[f];
            let seg = &self.order[f][lo..hi];
            let mut s_left = 0.0;
            for i in 0..n - 1 {
                let s = seg[i] as usize;
                s_left += self.centered[s];
                let (a, b) = (col[s], col[seg[i + 1] as usize]);
                if !(a < b) {
                    continue;
                }
                let n_l = (i + 1) as f64;
                let n_r = (n - i - 1) as f64;
                let s_right = total - s_left;
                let gain = s_left * s_left / n_l + s_right * s_right / n_r - base;
                if gain > min_gain && best.as_ref().is_none_or(|c| gain > c.gain) {
                    let mut threshold = 0.5 * (a + b);
                    if !(threshold < b) {
                        threshold = a;
                    }
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }
}
