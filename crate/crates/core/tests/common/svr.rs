//! Brute-force search of the SVR dual on five 1-D points.

use crfid::features::FeatureMatrix;
use crfid::ml::svr::{fit_svr, Gamma, SvrParams};

pub const XS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
pub const YS: [f64; 5] = [0.2, 0.9, -0.1, 0.6, 0.3];

pub fn kernel(gamma: f64) -> [[f64; 5]; 5] {
    let mut k = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            k[i][j] = (-gamma * (XS[i] - XS[j]).powi(2)).exp();
        }
    }
    k
}

/// Dual objective in β = α − α*, with β₅ = −Σβ₁..₄.
fn objective(k: &[[f64; 5]; 5], beta: &[f64; 5], eps: f64) -> f64 {
    let mut quad = 0.0;
    for i in 0..5 {
        for j in 0..5 {
            quad += beta[i] * beta[j] * k[i][j];
        }
    }
    0.5 * quad + eps * beta.iter().map(|b| b.abs()).sum::<f64>()
        - beta.iter().zip(YS).map(|(b, y)| b * y).sum::<f64>()
}

/// Coarse-to-fine grid over the four free coordinates.
pub fn brute_force_dual(k: &[[f64; 5]; 5], c: f64, eps: f64) -> [f64; 5] {
    let mut center = [0.0; 4];
    let mut step = 0.1 * c;
    let mut radius = 10i32;
    let mut best = (f64::INFINITY, [0.0; 5]);
    while step > 1e-4 * c {
        let base = center;
        let steps: Vec<f64> = (-radius..=radius).map(|s| s as f64 * step).collect();
        for &a in &steps {
            for &b in &steps {
                for &d in &steps {
                    for &e in &steps {
                        let free = [base[0] + a, base[1] + b, base[2] + d, base[3] + e];
                        if free.iter().any(|v| v.abs() > c) {
                            continue;
                        }
                        let last = -free.iter().sum::<f64>();
                        if last.abs() > c {
                            continue;
                        }
                        let beta = [free[0], free[1], free[2], free[3], last];
                        let obj = objective(k, &beta, eps);
                        if obj < best.0 {
                            best = (obj, beta);
                        }
                    }
                }
            }
        }
        center = [best.1[0], best.1[1], best.1[2], best.1[3]];
        step /= 5.0;
        radius = 3;
    }
    best.1
}

/// Bias minimising the ε-insensitive training loss for fixed β; midpoint
/// of the optimal interval.
pub fn oracle_bias(k: &[[f64; 5]; 5], beta: &[f64; 5], eps: f64) -> f64 {
    let g: Vec<f64> = (0..5)
        .map(|i| (0..5).map(|j| beta[j] * k[i][j]).sum())
        .collect();
    let loss = |b: f64| -> f64 {
        (0..5)
            .map(|i| ((YS[i] - g[i] - b).abs() - eps).max(0.0))
            .sum()
    };
    let mut cands: Vec<f64> = (0..5)
        .flat_map(|i| [YS[i] - g[i] - eps, YS[i] - g[i] + eps])
        .collect();
    cands.sort_by(f64::total_cmp);
    let best = cands.iter().map(|&b| loss(b)).fold(f64::INFINITY, f64::min);
    let opt: Vec<f64> = cands
        .into_iter()
        .filter(|&b| loss(b) <= best + 1e-12)
        .collect();
    0.5 * (opt[0] + opt[opt.len() - 1])
}

/// Largest gap between `fit_svr` and the oracle over a set of probes.
pub fn svr_oracle_gap(c: f64, eps: f64, gamma: f64) -> f64 {
    let k = kernel(gamma);
    let beta = brute_force_dual(&k, c, eps);
    let bias = oracle_bias(&k, &beta, eps);
    let oracle = |x: f64| -> f64 {
        (0..5)
            .map(|i| beta[i] * (-gamma * (x - XS[i]).powi(2)).exp())
            .sum::<f64>()
            + bias
    };

    let rows: Vec<Vec<f64>> = XS.iter().map(|&v| vec![v]).collect();
    let x = FeatureMatrix::new(vec!["x".into()], &rows).unwrap();
    let model = fit_svr(
        &x,
        &YS,
        &SvrParams {
            c,
            epsilon: eps,
            gamma: Gamma::Value(gamma),
            ..SvrParams::default()
        },
    )
    .unwrap();
    assert!(model.converged);
    assert!(model.kkt_violation < 1e-3);
    [-1.0, -0.75, -0.5, -0.2, 0.0, 0.3, 0.5, 0.8, 1.0]
        .iter()
        .map(|&probe| (model.predict_row(&[probe]) - oracle(probe)).abs())
        .fold(0.0, f64::max)
}
