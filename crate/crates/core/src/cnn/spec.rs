//! Layer lists and shape inference.

use serde::{Deserialize, Serialize};

use super::CnnError;

pub const SIGNATURE_LEN: usize = 700;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Valid cross-correlation followed by ReLU.
    Conv1D {
        filters: usize,
        kernel: usize,
    },
    MaxPool {
        size: usize,
    },
    BatchNorm {
        momentum: f64,
        eps: f64,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize) -> Self {
        LayerSpec::Conv1D { filters, kernel: 7 }
    }

    pub fn pool() -> Self {
        LayerSpec::MaxPool { size: 2 }
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn dropout() -> Self {
        LayerSpec::Dropout { rate: 0.5 }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense {
            units,
            activation: Activation::Relu,
        }
    }

    pub fn output() -> Self {
        LayerSpec::Dense {
            units: 1,
            activation: Activation::Linear,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1D { .. } => "conv1d",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }
}

/// `(length, channels)`; flat vectors are `(1, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub len: usize,
    pub ch: usize,
}

impl Shape {
    pub fn size(&self) -> usize {
        self.len * self.ch
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.len == 1 {
            write!(f, "({})", self.ch)
        } else {
            write!(f, "({}, {})", self.len, self.ch)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> Result<Vec<Shape>, CnnError> {
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        if cur.len == 0 || cur.ch == 0 {
            return Err(CnnError::InvalidSpec("empty input shape".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let bad =
                |msg: String| CnnError::InvalidSpec(format!("layer {i} ({}): {msg}", layer.name()));
            cur = match *layer {
                LayerSpec::Conv1D { filters, kernel } => {
                    if filters == 0 || kernel == 0 {
                        return Err(bad("filters and kernel must be positive".into()));
                    }
                    if cur.len < kernel {
                        return Err(bad(format!("input {cur} shorter than kernel {kernel}")));
                    }
                    Shape {
                        len: cur.len - kernel + 1,
                        ch: filters,
                    }
                }
                LayerSpec::MaxPool { size } => {
                    if size == 0 || cur.len < size {
                        return Err(bad(format!("input {cur} shorter than pool {size}")));
                    }
                    Shape {
                        len: cur.len / size,
                        ch: cur.ch,
                    }
                }
                LayerSpec::BatchNorm { momentum, eps } => {
                    if !(0.0..1.0).contains(&momentum) || !(eps > 0.0) {
                        return Err(bad("momentum in [0, 1) and eps > 0 required".into()));
                    }
                    cur
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(format!("rate {rate} outside [0, 1)")));
                    }
                    cur
                }
                LayerSpec::Flatten => Shape {
                    len: 1,
                    ch: cur.size(),
                },
                LayerSpec::Dense { units, .. } => {
                    if cur.len != 1 {
                        return Err(bad(format!("dense input {cur} must be flat")));
                    }
                    if units == 0 {
                        return Err(bad("units must be positive".into()));
                    }
                    Shape { len: 1, ch: units }
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape, CnnError> {
        Ok(*self.shapes()?.last().unwrap_or(&self.input))
    }

    /// Checks the shape chain and the Dense(1, linear) head.
    pub fn validate(&self) -> Result<(), CnnError> {
        self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense {
                units: 1,
                activation: Activation::Linear,
            }) => Ok(()),
            _ => Err(CnnError::InvalidSpec(
                "final layer must be Dense(1, linear)".into(),
            )),
        }
    }

    pub fn flatten_width(&self) -> Option<usize> {
        let shapes = self.shapes().ok()?;
        self.layers
            .iter()
            .position(|l| *l == LayerSpec::Flatten)
            .map(|i| shapes[i].ch)
    }

    /// Number of trainable scalars.
    pub fn n_params(&self) -> Result<usize, CnnError> {
        let shapes = self.shapes()?;
        let mut prev = self.input;
        let mut total = 0;
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            total += match layer {
                LayerSpec::Conv1D { filters, kernel } => filters * kernel * prev.ch + filters,
                LayerSpec::Dense { units, .. } => units * prev.ch + units,
                LayerSpec::BatchNorm { .. } => 2 * prev.ch,
                _ => 0,
            };
            prev = *shape;
        }
        Ok(total)
    }
}

fn scaled(n: usize, divisor: usize) -> usize {
    (n / divisor.max(1)).max(1)
}

fn conv_block(filters: usize) -> [LayerSpec; 4] {
    [
        LayerSpec::conv(filters),
        LayerSpec::pool(),
        LayerSpec::batch_norm(),
        LayerSpec::dropout(),
    ]
}

fn build(name: &str, layers: Vec<LayerSpec>) -> ArchitectureSpec {
    ArchitectureSpec {
        name: name.to_string(),
        input: Shape {
            len: SIGNATURE_LEN,
            ch: 1,
        },
        layers,
    }
}

/// Model `id` (1..=4) with conv filters and hidden dense units divided by
/// `divisor`. The output layer is unaffected.
pub fn model_spec(id: u8, divisor: usize) -> Result<ArchitectureSpec, CnnError> {
    model_spec_capped(id, divisor, None)
}

/// Like [`model_spec`], with every conv layer further limited to at most
/// `conv_cap` filters.
pub fn model_spec_capped(
    id: u8,
    divisor: usize,
    conv_cap: Option<usize>,
) -> Result<ArchitectureSpec, CnnError> {
    if conv_cap == Some(0) {
        return Err(CnnError::InvalidSpec("conv cap must be positive".into()));
    }
    let s = |n| scaled(n, divisor);
    let c = |n| conv_cap.map_or(s(n), |cap| s(n).min(cap));
    let mut l = Vec::new();
    let (first, rest, dense): (Option<usize>, &[usize], [usize; 2]) = match id {
        1 => (Some(64), &[64], [1500, 500]),
        2 => (Some(64), &[32], [1000, 100]),
        3 => (Some(512), &[256, 128, 64, 32], [1500, 500]),
        4 => (None, &[256, 128, 64, 32], [1000, 500]),
        _ => return Err(CnnError::InvalidSpec(format!("unknown model id {id}"))),
    };
    if let Some(f) = first {
        l.extend([
            LayerSpec::conv(c(f)),
            LayerSpec::pool(),
            LayerSpec::dropout(),
        ]);
    }
    for &f in rest {
        l.extend(conv_block(c(f)));
    }
    l.extend([
        LayerSpec::Flatten,
        LayerSpec::dense(s(dense[0])),
        LayerSpec::dropout(),
        LayerSpec::dense(s(dense[1])),
        LayerSpec::output(),
    ]);
    let mut name = format!("model_{id}");
    if divisor > 1 {
        name.push_str(&format!("_w{divisor}"));
    }
    if let Some(cap) = conv_cap {
        name.push_str(&format!("_c{cap}"));
    }
    Ok(build(&name, l))
}

pub fn model_1_spec() -> ArchitectureSpec {
    model_spec(1, 1).expect("model 1")
}

pub fn model_2_spec() -> ArchitectureSpec {
    model_spec(2, 1).expect("model 2")
}

pub fn model_3_spec() -> ArchitectureSpec {
    model_spec(3, 1).expect("model 3")
}

pub fn model_4_spec() -> ArchitectureSpec {
    model_spec(4, 1).expect("model 4")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(len: usize, ch: usize) -> Shape {
        Shape { len, ch }
    }

    #[test]
    fn model_1_shape_chain() {
        let s = model_1_spec().shapes().unwrap();
        assert_eq!(s[0], sh(694, 64));
        assert_eq!(s[1], sh(347, 64));
        assert_eq!(s[3], sh(341, 64));
        assert_eq!(s[4], sh(170, 64));
        assert_eq!(model_1_spec().flatten_width(), Some(10_880));
    }

    #[test]
    fn flatten_widths() {
        assert_eq!(model_2_spec().flatten_width(), Some(5_440));
        assert_eq!(model_3_spec().flatten_width(), Some(512));
        assert_eq!(model_4_spec().flatten_width(), Some(1_216));
        assert_eq!(model_3_spec().shapes().unwrap()[0], sh(694, 512));
    }

    #[test]
    fn every_model_ends_in_linear_scalar() {
        for id in 1..=4 {
            for div in [1, 8] {
                let spec = model_spec(id, div).unwrap();
                spec.validate().unwrap();
                assert_eq!(spec.output_shape().unwrap(), sh(1, 1));
            }
        }
        assert!(model_spec(5, 1).is_err());
    }

    #[test]
    fn conv_cap_limits_filters_only() {
        let capped = model_spec_capped(3, 1, Some(32)).unwrap();
        let full = model_3_spec();
        let (a, b) = (capped.shapes().unwrap(), full.shapes().unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.len, y.len);
        }
        assert_eq!(a[0].ch, 32);
        assert_eq!(capped.flatten_width(), Some(512));
        assert!(capped.layers.contains(&LayerSpec::dense(1500)));
        assert_eq!(capped.name, "model_3_c32");
        assert!(model_spec_capped(3, 1, Some(0)).is_err());
    }

    #[test]
    fn width_divisor_keeps_lengths() {
        let full = model_3_spec().shapes().unwrap();
        let small = model_spec(3, 8).unwrap().shapes().unwrap();
        for (a, b) in full.iter().zip(&small) {
            assert_eq!(a.len, b.len);
        }
        assert_eq!(small[0].ch, 64);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = model_1_spec();
        spec.layers.insert(0, LayerSpec::dense(3));
        assert!(matches!(spec.shapes(), Err(CnnError::InvalidSpec(m)) if m.contains("layer 0")));
        let mut spec = model_1_spec();
        spec.layers.pop();
        assert!(spec.validate().is_err());
    }
}
