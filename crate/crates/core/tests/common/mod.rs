#![allow(dead_code)]

pub mod svr;

use crfid::cnn::{model_spec, ArchitectureSpec, LayerParams, LayerSpec, Mode, Network, Shape};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn random_inputs(n: usize, width: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = crfid::seed::rng(seed);
    let x = (0..n * width)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (x, y)
}

fn loss(net: &Network, x: &[f64], y: &[f64], mode: Mode) -> f64 {
    let cache = net.forward(x, y.len(), mode).unwrap();
    crfid::cnn::mse(cache.predictions(), y)
}

/// Moves every conv/dense bias off zero. With zero biases, windows whose
/// inputs are all exactly zero (after ReLU or dropout) sit on the ReLU kink,
/// where central differences and the subgradient legitimately disagree.
pub fn jitter_biases(net: &mut Network, seed: u64) {
    let mut rng = crfid::seed::rng(seed);
    for p in net.params_mut() {
        if let LayerParams::Conv { b, .. } | LayerParams::Dense { b, .. } = p {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
}

/// Largest relative error between backprop and central differences over
/// every trainable scalar, `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn max_grad_error(net: &mut Network, x: &[f64], y: &[f64], mode: Mode) -> f64 {
    let n = y.len();
    let cache = net.forward(x, n, mode).unwrap();
    let d_out: Vec<f64> = cache
        .predictions()
        .iter()
        .zip(y)
        .map(|(p, t)| 2.0 * (p - t) / n as f64)
        .collect();
    let grads = net.backward(&cache, &d_out).unwrap();
    let sizes: Vec<usize> = net.trainable().iter().map(|t| t.len()).collect();
    let mut worst = 0.0f64;
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let orig = net.trainable()[ti][k];
            net.trainable_mut()[ti][k] = orig + FD_STEP;
            let up = loss(net, x, y, mode);
            net.trainable_mut()[ti][k] = orig - FD_STEP;
            let down = loss(net, x, y, mode);
            net.trainable_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.tensors[ti][k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn spec(len: usize, layers: Vec<LayerSpec>) -> ArchitectureSpec {
    ArchitectureSpec {
        name: "test".into(),
        input: Shape { len, ch: 1 },
        layers,
    }
}

/// Input length 20, conv 4x3, pool, dense 5, dense 1.
pub fn tiny_spec() -> ArchitectureSpec {
    spec(
        20,
        vec![
            LayerSpec::Conv1D {
                filters: 4,
                kernel: 3,
            },
            LayerSpec::pool(),
            LayerSpec::Flatten,
            LayerSpec::dense(5),
            LayerSpec::output(),
        ],
    )
}

pub const TRAIN: Mode = Mode::Train { dropout_seed: 42 };

/// Gradient check of a small network around each layer type.
pub fn layer_gradient_errors() -> Vec<(&'static str, f64)> {
    let cases: Vec<(&'static str, Vec<LayerSpec>)> = vec![
        (
            "conv",
            vec![
                LayerSpec::Conv1D {
                    filters: 3,
                    kernel: 4,
                },
                LayerSpec::Flatten,
                LayerSpec::output(),
            ],
        ),
        (
            "pool",
            vec![
                LayerSpec::Conv1D {
                    filters: 2,
                    kernel: 3,
                },
                LayerSpec::pool(),
                LayerSpec::Flatten,
                LayerSpec::output(),
            ],
        ),
        (
            "batchnorm",
            vec![
                LayerSpec::Conv1D {
                    filters: 3,
                    kernel: 3,
                },
                LayerSpec::batch_norm(),
                LayerSpec::Flatten,
                LayerSpec::output(),
            ],
        ),
        (
            "dropout",
            vec![
                LayerSpec::Conv1D {
                    filters: 3,
                    kernel: 3,
                },
                LayerSpec::dropout(),
                LayerSpec::Flatten,
                LayerSpec::output(),
            ],
        ),
        (
            "dense",
            vec![
                LayerSpec::Flatten,
                LayerSpec::dense(6),
                LayerSpec::dense(4),
                LayerSpec::output(),
            ],
        ),
    ];
    let mut out = Vec::new();
    for (name, layers) in cases {
        let mut net = Network::new(spec(16, layers), 11).unwrap();
        jitter_biases(&mut net, 11);
        if name == "batchnorm" {
            // move scale and shift off their defaults so both matter
            for p in net.params_mut() {
                if let LayerParams::BatchNorm { gamma, beta, .. } = p {
                    gamma
                        .iter_mut()
                        .enumerate()
                        .for_each(|(i, g)| *g = 0.7 + 0.2 * i as f64);
                    beta.iter_mut()
                        .enumerate()
                        .for_each(|(i, b)| *b = 0.1 * i as f64);
                }
            }
        }
        let (x, y) = random_inputs(5, 16, 12);
        out.push((name, max_grad_error(&mut net, &x, &y, TRAIN)));
    }
    out
}

/// Gradient check of Models 1-4 at width divisor 64.
pub fn reduced_model_gradient_errors() -> Vec<(u8, f64)> {
    (1..=4u8)
        .map(|id| {
            let mut net = Network::new(model_spec(id, 64).unwrap(), 100 + id as u64).unwrap();
            jitter_biases(&mut net, id as u64);
            let (x, y) = random_inputs(3, 700, 20 + id as u64);
            (id, max_grad_error(&mut net, &x, &y, TRAIN))
        })
        .collect()
}
