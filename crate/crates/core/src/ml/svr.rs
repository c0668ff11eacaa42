//! ε-insensitive support-vector regression with an RBF kernel.
//!
//! The dual has 2n variables `α` (sign +1) and `α*` (sign −1) and is solved
//! by SMO with maximal-violating-pair selection:
//!
//! ```text
//! min ½ aᵀQa + pᵀa   s.t.  sᵀa = 0,  0 <= a <= C
//! Q_tu = s_t s_u K(x_t, x_u),   p = [ε − y; ε + y]
//! ```
//!
//! The decision function is `f(x) = Σ (α_i − α*_i) K(x_i, x) + b`.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{validate_xy, MlError};
use crate::features::FeatureMatrix;

/// Largest training set whose full kernel matrix is precomputed.
const FULL_KERNEL_LIMIT: usize = 3000;
/// Row cache budget for larger sets, in f64 entries.
const CACHE_ENTRIES: usize = 16 << 20;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gamma {
    /// 1 / number of features.
    InverseFeatures,
    Value(f64),
}

impl Gamma {
    pub fn resolve(self, n_features: usize) -> f64 {
        match self {
            Gamma::InverseFeatures => 1.0 / n_features as f64,
            Gamma::Value(g) => g,
        }
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::InverseFeatures => f.write_str("1/p"),
            Gamma::Value(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: Gamma,
    /// Stop when the maximal KKT violation drops below this.
    pub tol: f64,
    /// `None` uses max(100 000, 200 n).
    pub max_iter: Option<usize>,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            gamma: Gamma::InverseFeatures,
            tol: 1e-3,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i − α*_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Maximal KKT violation at exit.
    pub kkt_violation: f64,
    pub converged: bool,
}

impl SvrModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (sv, c) in self.support_vectors.iter().zip(&self.dual_coef) {
            acc += c * rbf(self.gamma, sv, row);
        }
        acc + self.bias
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Rejects inputs that do not look standardised.
pub fn check_standardized(x: &FeatureMatrix) -> Result<(), MlError> {
    let n = x.n_rows() as f64;
    for j in 0..x.n_cols() {
        let mean = (0..x.n_rows()).map(|i| x.get(i, j)).sum::<f64>() / n;
        if mean.abs() > 0.5 {
            return Err(MlError::NotStandardized { feature: j, mean });
        }
    }
    Ok(())
}

enum Kernel<'a> {
    Full(Vec<f64>),
    Cached {
        x: &'a FeatureMatrix,
        rows: std::collections::HashMap<usize, Vec<f64>>,
        fifo: VecDeque<usize>,
        capacity: usize,
    },
}

impl Kernel<'_> {
    fn new(x: &FeatureMatrix, gamma: f64) -> Kernel<'_> {
        let n = x.n_rows();
        if n <= FULL_KERNEL_LIMIT {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                k[i * n + i] = 1.0;
                for j in 0..i {
                    let v = rbf(gamma, x.row(i), x.row(j));
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            Kernel::Full(k)
        } else {
            Kernel::Cached {
                x,
                rows: Default::default(),
                fifo: VecDeque::new(),
                capacity: (CACHE_ENTRIES / n).max(2),
            }
        }
    }

    fn row_into(&mut self, gamma: f64, i: usize, out: &mut [f64]) {
        match self {
            Kernel::Full(k) => {
                let n = out.len();
                out.copy_from_slice(&k[i * n..(i + 1) * n]);
            }
            Kernel::Cached {
                x,
                rows,
                fifo,
                capacity,
            } => {
                if let Some(r) = rows.get(&i) {
                    out.copy_from_slice(r);
                    return;
                }
                for (j, o) in out.iter_mut().enumerate() {
                    *o = rbf(gamma, x.row(i), x.row(j));
                }
                if fifo.len() >= *capacity {
                    if let Some(old) = fifo.pop_front() {
                        rows.remove(&old);
                    }
                }
                fifo.push_back(i);
                rows.insert(i, out.to_vec());
            }
        }
    }
}

pub fn fit_svr(x: &FeatureMatrix, y: &[f64], params: &SvrParams) -> Result<SvrModel, MlError> {
    validate_xy(x, y, 1)?;
    check_standardized(x)?;
    if !(params.c > 0.0) || !(params.epsilon >= 0.0) || !(params.tol > 0.0) {
        return Err(MlError::InvalidParams(
            "need C > 0, epsilon >= 0, tol > 0".into(),
        ));
    }
    let gamma = params.gamma.resolve(x.n_cols());
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(MlError::InvalidParams(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let n = x.n_rows();
    let base = SvrModel {
        gamma,
        c: params.c,
        epsilon: params.epsilon,
        support_vectors: Vec::new(),
        dual_coef: Vec::new(),
        bias: y[0],
        iterations: 0,
        kkt_violation: 0.0,
        converged: true,
    };
    if y.iter().all(|&v| v == y[0]) {
        return Ok(base);
    }

    let c = params.c;
    let m = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let mut alpha = vec![0.0; m];
    let mut grad: Vec<f64> = (0..m)
        .map(|t| {
            if t < n {
                params.epsilon - y[t]
            } else {
                params.epsilon + y[t - n]
            }
        })
        .collect();
    let mut kernel = Kernel::new(x, gamma);
    let (mut ki, mut kj) = (vec![0.0; n], vec![0.0; n]);
    let max_iter = params.max_iter.unwrap_or((200 * n).max(100_000));

    let mut iterations = 0;
    let mut violation;
    loop {
        let mut i = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut g_min = f64::INFINITY;
        for t in 0..m {
            let s = sign(t);
            let v = -s * grad[t];
            let up = if s > 0.0 {
                alpha[t] < c
            } else {
                alpha[t] > 0.0
            };
            let low = if s > 0.0 {
                alpha[t] > 0.0
            } else {
                alpha[t] < c
            };
            if up && v > g_max {
                g_max = v;
                i = t;
            }
            if low && v < g_min {
                g_min = v;
                j = t;
            }
        }
        violation = g_max - g_min;
        if violation < params.tol || i == usize::MAX || j == usize::MAX || iterations >= max_iter {
            break;
        }
        iterations += 1;

        kernel.row_into(gamma, i % n, &mut ki);
        kernel.row_into(gamma, j % n, &mut kj);
        let (si, sj) = (sign(i), sign(j));
        let q_ij = si * sj * ki[j % n];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if si != sj {
            let mut quad = ki[i % n] + kj[j % n] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = ki[i % n] + kj[j % n] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..m {
            let st = sign(t);
            grad[t] += st * (si * ki[t % n] * di + sj * kj[t % n] * dj);
        }
    }

    // b = -rho, rho from free variables or the midpoint of the feasible range
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut n_free) = (0.0, 0usize);
    for t in 0..m {
        let s = sign(t);
        let yg = s * grad[t];
        if alpha[t] >= c {
            if s < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if s > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        0.5 * (ub + lb)
    };

    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for k in 0..n {
        let coef = alpha[k] - alpha[k + n];
        if coef != 0.0 {
            support_vectors.push(x.row(k).to_vec());
            dual_coef.push(coef);
        }
    }
    Ok(SvrModel {
        support_vectors,
        dual_coef,
        bias: -rho,
        iterations,
        kkt_violation: violation,
        converged: violation < params.tol,
        ..base
    })
}
