//! Parameters, forward pass and reverse-mode gradients.
//!
//! Activations are stored per sample as `[length][channels]`, samples
//! back to back. Conv kernels are laid out `[filter][tap][in_channel]`, so
//! a filter's receptive field at position `t` is the contiguous slice
//! `x[t*C .. (t+K)*C]`. Dense weights are `[unit][input]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{matmul_acc, View};
use super::spec::{Activation, ArchitectureSpec, LayerSpec, Shape};
use super::CnnError;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    None,
    Conv {
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Dense {
        w: Vec<f64>,
        b: Vec<f64>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Batch statistics and dropout; masks derive from the seed.
    Train {
        dropout_seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub spec: ArchitectureSpec,
    shapes: Vec<Shape>,
    params: Vec<LayerParams>,
    /// Bumped on every parameter mutation; caches from older versions are
    /// rejected by [`Network::backward`].
    #[serde(skip)]
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

/// Gradients of every trainable tensor, in [`Network::trainable`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Pool(Vec<u32>),
    Dropout(Vec<f64>),
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
}

/// Activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    n: usize,
    training: bool,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl ForwardCache {
    pub fn predictions(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }

    pub fn layer_output(&self, layer: usize) -> &[f64] {
        &self.acts[layer + 1]
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Network {
    /// He-uniform weights, zero biases, unit batch-norm scale.
    pub fn new(spec: ArchitectureSpec, init_seed: u64) -> Result<Self, CnnError> {
        let mut net = Self::zeros(spec)?;
        for (i, p) in net.params.iter_mut().enumerate() {
            let mut rng = seed::rng_at(init_seed, &[seed::domain::INIT, i as u64]);
            let fan_in = match &net.spec.layers[i] {
                LayerSpec::Conv1D { kernel, .. } => {
                    let in_ch = if i == 0 {
                        net.spec.input.ch
                    } else {
                        net.shapes[i - 1].ch
                    };
                    kernel * in_ch
                }
                LayerSpec::Dense { .. } => {
                    if i == 0 {
                        net.spec.input.size()
                    } else {
                        net.shapes[i - 1].size()
                    }
                }
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            if let LayerParams::Conv { w, .. } | LayerParams::Dense { w, .. } = p {
                w.iter_mut()
                    .for_each(|v| *v = rng.random_range(-limit..limit));
            }
        }
        Ok(net)
    }

    /// All weights and biases zero; batch-norm at identity.
    pub fn zeros(spec: ArchitectureSpec) -> Result<Self, CnnError> {
        let shapes = spec.shapes()?;
        let mut prev = spec.input;
        let mut params = Vec::with_capacity(spec.layers.len());
        for (layer, shape) in spec.layers.iter().zip(&shapes) {
            params.push(match *layer {
                LayerSpec::Conv1D { filters, kernel } => LayerParams::Conv {
                    w: vec![0.0; filters * kernel * prev.ch],
                    b: vec![0.0; filters],
                },
                LayerSpec::Dense { units, .. } => LayerParams::Dense {
                    w: vec![0.0; units * prev.size()],
                    b: vec![0.0; units],
                },
                LayerSpec::BatchNorm { .. } => LayerParams::BatchNorm {
                    gamma: vec![1.0; prev.ch],
                    beta: vec![0.0; prev.ch],
                    running_mean: vec![0.0; prev.ch],
                    running_var: vec![1.0; prev.ch],
                },
                _ => LayerParams::None,
            });
            prev = *shape;
        }
        Ok(Self {
            spec,
            shapes,
            params,
            version: 0,
        })
    }

    /// Rebuilds a network from stored parameters after checking every
    /// tensor size against the spec.
    pub fn from_parts(spec: ArchitectureSpec, params: Vec<LayerParams>) -> Result<Self, CnnError> {
        let mut net = Self::zeros(spec)?;
        if params.len() != net.params.len() {
            return Err(CnnError::ShapeMismatch {
                layer: params.len().min(net.params.len()),
                expected: net.params.len(),
                found: params.len(),
            });
        }
        for (i, (want, got)) in net.params.iter().zip(&params).enumerate() {
            let sizes = |p: &LayerParams| -> Vec<usize> {
                match p {
                    LayerParams::None => vec![],
                    LayerParams::Conv { w, b } | LayerParams::Dense { w, b } => {
                        vec![w.len(), b.len()]
                    }
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    } => vec![
                        gamma.len(),
                        beta.len(),
                        running_mean.len(),
                        running_var.len(),
                    ],
                }
            };
            let same_kind = std::mem::discriminant(want) == std::mem::discriminant(got);
            if !same_kind || sizes(want) != sizes(got) {
                return Err(CnnError::ShapeMismatch {
                    layer: i,
                    expected: sizes(want).iter().sum(),
                    found: sizes(got).iter().sum(),
                });
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Mutable access; invalidates existing forward caches.
    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn in_shape(&self, layer: usize) -> Shape {
        if layer == 0 {
            self.spec.input
        } else {
            self.shapes[layer - 1]
        }
    }

    /// Trainable tensors in a fixed order: weights then biases for conv and
    /// dense layers, scale then shift for batch norm.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for p in &self.params {
            match p {
                LayerParams::Conv { w, b } | LayerParams::Dense { w, b } => {
                    out.push(w);
                    out.push(b);
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                LayerParams::None => {}
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.version += 1;
        let mut out = Vec::new();
        for p in &mut self.params {
            match p {
                LayerParams::Conv { w, b } | LayerParams::Dense { w, b } => {
                    out.push(w);
                    out.push(b);
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                LayerParams::None => {}
            }
        }
        out
    }

    pub fn n_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Runs `n` samples laid out back to back. Returns one prediction per
    /// sample and the cache needed by [`Network::backward`].
    pub fn forward(&self, x: &[f64], n: usize, mode: Mode) -> Result<ForwardCache, CnnError> {
        let expected = n * self.spec.input.size();
        if x.len() != expected || n == 0 {
            return Err(CnnError::ShapeMismatch {
                layer: 0,
                expected,
                found: x.len(),
            });
        }
        let training = matches!(mode, Mode::Train { .. });
        let mut acts = Vec::with_capacity(self.params.len() + 1);
        let mut aux = Vec::with_capacity(self.params.len());
        acts.push(x.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = &acts[i];
            let (ish, osh) = (self.in_shape(i), self.shapes[i]);
            let (out, a) = match (layer, &self.params[i]) {
                (LayerSpec::Conv1D { filters, kernel }, LayerParams::Conv { w, b }) => (
                    conv_forward(input, n, ish, osh, *filters, *kernel, w, b),
                    Aux::None,
                ),
                (LayerSpec::MaxPool { size }, _) => {
                    let (o, arg) = pool_forward(input, n, ish, osh, *size);
                    (o, Aux::Pool(arg))
                }
                (
                    LayerSpec::BatchNorm { eps, .. },
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => bn_forward(
                    input,
                    ish.ch,
                    *eps,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    training,
                ),
                (LayerSpec::Dropout { rate }, _) => match mode {
                    Mode::Train { dropout_seed } if *rate > 0.0 => {
                        let mut rng = seed::rng_at(dropout_seed, &[i as u64]);
                        let keep = 1.0 - rate;
                        let mask: Vec<f64> = (0..input.len())
                            .map(|_| {
                                if rng.random::<f64>() < *rate {
                                    0.0
                                } else {
                                    1.0 / keep
                                }
                            })
                            .collect();
                        let o = input.iter().zip(&mask).map(|(v, m)| v * m).collect();
                        (o, Aux::Dropout(mask))
                    }
                    _ => (input.clone(), Aux::None),
                },
                (LayerSpec::Flatten, _) => (input.clone(), Aux::None),
                (LayerSpec::Dense { units, activation }, LayerParams::Dense { w, b }) => (
                    dense_forward(input, n, ish.size(), *units, *activation, w, b),
                    Aux::None,
                ),
                _ => {
                    return Err(CnnError::ShapeMismatch {
                        layer: i,
                        expected: 0,
                        found: 0,
                    })
                }
            };
            debug_assert!(all_finite(&out), "non-finite activation after layer {i}");
            acts.push(out);
            aux.push(a);
        }
        Ok(ForwardCache {
            version: self.version,
            n,
            training,
            acts,
            aux,
        })
    }

    /// Predictions in inference mode, evaluated in chunks.
    pub fn predict(&self, x: &[f64], n: usize) -> Result<Vec<f64>, CnnError> {
        const CHUNK: usize = 64;
        let width = self.spec.input.size();
        if x.len() != n * width {
            return Err(CnnError::ShapeMismatch {
                layer: 0,
                expected: n * width,
                found: x.len(),
            });
        }
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(CHUNK) {
            let m = CHUNK.min(n - start);
            let cache = self.forward(&x[start * width..(start + m) * width], m, Mode::Inference)?;
            out.extend_from_slice(cache.predictions());
        }
        Ok(out)
    }

    /// Gradients of the loss given `d_out = dL/dprediction` per sample.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> Result<Gradients, CnnError> {
        Ok(self.backward_impl(cache, d_out, false)?.0)
    }

    /// Gradient of the loss with respect to the network input.
    pub fn input_gradient(
        &self,
        cache: &ForwardCache,
        d_out: &[f64],
    ) -> Result<Vec<f64>, CnnError> {
        Ok(self.backward_impl(cache, d_out, true)?.1)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        d_out: &[f64],
        want_input: bool,
    ) -> Result<(Gradients, Vec<f64>), CnnError> {
        if cache.version != self.version {
            return Err(CnnError::StaleCache {
                cache: cache.version,
                network: self.version,
            });
        }
        if d_out.len() != cache.n {
            return Err(CnnError::ShapeMismatch {
                layer: self.params.len().saturating_sub(1),
                expected: cache.n,
                found: d_out.len(),
            });
        }
        let n = cache.n;
        let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.params.len()];
        let mut g = d_out.to_vec();
        for i in (0..self.spec.layers.len()).rev() {
            let input = &cache.acts[i];
            let output = &cache.acts[i + 1];
            let (ish, osh) = (self.in_shape(i), self.shapes[i]);
            let need_dx = i > 0 || want_input;
            g = match (&self.spec.layers[i], &self.params[i], &cache.aux[i]) {
                (LayerSpec::Conv1D { filters, kernel }, LayerParams::Conv { w, .. }, _) => {
                    let (dx, dw, db) = conv_backward(
                        input, output, &g, n, ish, osh, *filters, *kernel, w, need_dx,
                    );
                    grads[i] = vec![dw, db];
                    dx
                }
                (LayerSpec::MaxPool { .. }, _, Aux::Pool(arg)) => {
                    let mut dx = vec![0.0; input.len()];
                    for (gi, &a) in g.iter().zip(arg) {
                        dx[a as usize] += gi;
                    }
                    dx
                }
                (
                    LayerSpec::BatchNorm { .. },
                    LayerParams::BatchNorm { gamma, .. },
                    Aux::Norm { xhat, inv_std, .. },
                ) => {
                    let (dx, dgamma, dbeta) =
                        bn_backward(&g, ish.ch, gamma, xhat, inv_std, cache.training);
                    grads[i] = vec![dgamma, dbeta];
                    dx
                }
                (LayerSpec::Dropout { .. }, _, Aux::Dropout(mask)) => {
                    g.iter().zip(mask).map(|(a, m)| a * m).collect()
                }
                (LayerSpec::Dropout { .. }, _, _) | (LayerSpec::Flatten, _, _) => g,
                (LayerSpec::Dense { units, activation }, LayerParams::Dense { w, .. }, _) => {
                    let (dx, dw, db) = dense_backward(
                        input,
                        output,
                        &g,
                        n,
                        ish.size(),
                        *units,
                        *activation,
                        w,
                        need_dx,
                    );
                    grads[i] = vec![dw, db];
                    dx
                }
                _ => {
                    return Err(CnnError::ShapeMismatch {
                        layer: i,
                        expected: 0,
                        found: 0,
                    })
                }
            };
        }
        let tensors: Vec<Vec<f64>> = grads.into_iter().flatten().collect();
        debug_assert!(tensors.iter().all(|t| all_finite(t)), "non-finite gradient");
        Ok((Gradients { tensors }, g))
    }

    /// Folds the batch statistics of a training-mode pass into the
    /// running averages.
    pub fn commit_running_stats(&mut self, cache: &ForwardCache) {
        if !cache.training {
            return;
        }
        for (i, p) in self.params.iter_mut().enumerate() {
            if let (
                LayerParams::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
                LayerSpec::BatchNorm { momentum, .. },
                Aux::Norm { mean, var, .. },
            ) = (p, &self.spec.layers[i], &cache.aux[i])
            {
                for c in 0..mean.len() {
                    running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * mean[c];
                    running_var[c] = momentum * running_var[c] + (1.0 - momentum) * var[c];
                }
            }
        }
        self.version += 1;
    }
}

/// The batch is read as one long sequence; window `r` starts at position
/// `r` of that sequence and is valid when it does not cross a sample
/// boundary. Returns the number of windows covering every sample.
fn window_rows(n: usize, ish: Shape, osh: Shape) -> usize {
    (n - 1) * ish.len + osh.len
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    n: usize,
    ish: Shape,
    osh: Shape,
    filters: usize,
    kernel: usize,
    w: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let c = ish.ch;
    let kc = kernel * c;
    let rows = window_rows(n, ish, osh);
    let mut all = vec![0.0; rows * filters];
    for row in all.chunks_exact_mut(filters) {
        row.copy_from_slice(b);
    }
    matmul_acc(
        View::new(x, c, 1),
        View::new(w, 1, kc),
        rows,
        kc,
        filters,
        &mut all,
    );
    let mut out = Vec::with_capacity(n * osh.size());
    for s in 0..n {
        let start = s * ish.len * filters;
        out.extend(all[start..start + osh.size()].iter().map(|v| v.max(0.0)));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    out: &[f64],
    g: &[f64],
    n: usize,
    ish: Shape,
    osh: Shape,
    filters: usize,
    kernel: usize,
    w: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = ish.ch;
    let kc = kernel * c;
    let rows = window_rows(n, ish, osh);
    let mut gm = vec![0.0; rows * filters];
    let mut db = vec![0.0; filters];
    for s in 0..n {
        let src = s * osh.size();
        let dst = s * ish.len * filters;
        for k in 0..osh.size() {
            if out[src + k] > 0.0 {
                gm[dst + k] = g[src + k];
            }
        }
        for row in gm[dst..dst + osh.size()].chunks_exact(filters) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    let mut dw = vec![0.0; w.len()];
    matmul_acc(
        View::new(&gm, 1, filters),
        View::new(x, c, 1),
        filters,
        rows,
        kc,
        &mut dw,
    );
    let mut dx = Vec::new();
    if need_dx {
        dx = vec![0.0; x.len()];
        let mut cols = vec![0.0; rows * kc];
        matmul_acc(
            View::new(&gm, filters, 1),
            View::new(w, kc, 1),
            rows,
            filters,
            kc,
            &mut cols,
        );
        for s in 0..n {
            for t in 0..osh.len {
                let r = s * ish.len + t;
                for (d, &v) in dx[r * c..r * c + kc]
                    .iter_mut()
                    .zip(&cols[r * kc..(r + 1) * kc])
                {
                    *d += v;
                }
            }
        }
    }
    (dx, dw, db)
}

fn pool_forward(x: &[f64], n: usize, ish: Shape, osh: Shape, size: usize) -> (Vec<f64>, Vec<u32>) {
    let c = ish.ch;
    let mut out = Vec::with_capacity(n * osh.size());
    let mut arg = Vec::with_capacity(n * osh.size());
    for s in 0..n {
        let base = s * ish.size();
        for t in 0..osh.len {
            for ch in 0..c {
                let mut best = base + t * size * c + ch;
                for k in 1..size {
                    let idx = base + (t * size + k) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

#[allow(clippy::too_many_arguments)]
fn bn_forward(
    x: &[f64],
    c: usize,
    eps: f64,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    training: bool,
) -> (Vec<f64>, Aux) {
    let m = (x.len() / c) as f64;
    let (mean, var) = if training {
        let mut mean = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m);
        let mut var = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|a| *a /= m);
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for ((row, xh), o) in x
        .chunks_exact(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(out.chunks_exact_mut(c))
    {
        for ch in 0..c {
            xh[ch] = (row[ch] - mean[ch]) * inv_std[ch];
            o[ch] = gamma[ch] * xh[ch] + beta[ch];
        }
    }
    (
        out,
        Aux::Norm {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

fn bn_backward(
    g: &[f64],
    c: usize,
    gamma: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    training: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (g.len() / c) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (gr, xr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            dgamma[ch] += gr[ch] * xr[ch];
            dbeta[ch] += gr[ch];
        }
    }
    let mut dx = vec![0.0; g.len()];
    for ((d, gr), xr) in dx
        .chunks_exact_mut(c)
        .zip(g.chunks_exact(c))
        .zip(xhat.chunks_exact(c))
    {
        for ch in 0..c {
            d[ch] = if training {
                gamma[ch] * inv_std[ch] / m * (m * gr[ch] - dbeta[ch] - xr[ch] * dgamma[ch])
            } else {
                gamma[ch] * inv_std[ch] * gr[ch]
            };
        }
    }
    (dx, dgamma, dbeta)
}

fn dense_forward(
    x: &[f64],
    n: usize,
    d: usize,
    units: usize,
    act: Activation,
    w: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * units);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    matmul_acc(
        View::new(x, d, 1),
        View::new(w, 1, d),
        n,
        d,
        units,
        &mut out,
    );
    if act == Activation::Relu {
        for o in out.iter_mut() {
            *o = o.max(0.0);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f64],
    out: &[f64],
    g: &[f64],
    n: usize,
    d: usize,
    units: usize,
    act: Activation,
    w: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let gm: Vec<f64> = g[..n * units]
        .iter()
        .zip(out)
        .map(|(&gv, &o)| {
            if act == Activation::Relu && o <= 0.0 {
                0.0
            } else {
                gv
            }
        })
        .collect();
    let mut db = vec![0.0; units];
    for row in gm.chunks_exact(units) {
        for (b, &v) in db.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut dw = vec![0.0; w.len()];
    matmul_acc(
        View::new(&gm, 1, units),
        View::new(x, d, 1),
        units,
        n,
        d,
        &mut dw,
    );
    let mut dx = Vec::new();
    if need_dx {
        dx = vec![0.0; n * d];
        matmul_acc(
            View::new(&gm, units, 1),
            View::new(w, d, 1),
            n,
            units,
            d,
            &mut dx,
        );
    }
    (dx, dw, db)
}
