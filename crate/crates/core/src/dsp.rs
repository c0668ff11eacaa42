//! Butterworth low-pass smoothing of RCS signatures.
//!
//! The signature is treated as a uniformly sampled sequence; the cutoff is a
//! fraction of that sequence's Nyquist rate. Filters are built from the
//! analog prototype poles, prewarped, mapped through the bilinear transform
//! and realised as cascaded second-order sections. [`filtfilt`] runs the
//! cascade forward and backward for zero phase.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rcs::RcsSignature;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("signature has {len} samples; need more than {required}")]
    TooShort { len: usize, required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    /// Fraction of Nyquist, in (0, 1).
    pub cutoff: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: 4,
            cutoff: 0.1,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), DspError> {
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(DspError::InvalidSpec(format!(
                "cutoff {} outside (0, 1)",
                self.cutoff
            )));
        }
        if self.order < 2 || self.order % 2 != 0 {
            return Err(DspError::InvalidSpec(format!(
                "order {} must be even and >= 2",
                self.order
            )));
        }
        Ok(())
    }

    /// Edge padding used by [`filtfilt`]: three times the length of the
    /// equivalent transfer-function polynomials.
    pub fn pad_len(&self) -> usize {
        3 * (self.order + 1)
    }
}

/// One second-order section, `a[0]` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = self.a[0] + z_inv * (self.a[1] + z_inv * self.a[2]);
        num / den
    }

    /// Transposed direct-form II state for a unit-step steady state.
    fn step_state(&self) -> [f64; 2] {
        let z2 = self.b[2] - self.a[2];
        let z1 = self.b[1] - self.a[1] + z2;
        [z1, z2]
    }
}

pub type Sos = Vec<Biquad>;

pub fn design_butterworth(spec: &FilterSpec) -> Result<Sos, DspError> {
    spec.validate()?;
    let n = spec.order;
    let warped = (std::f64::consts::PI * spec.cutoff / 2.0).tan();
    let sections = (0..n / 2)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let pole = Complex64::from_polar(warped, theta);
            let zp = (1.0 + pole) / (1.0 - pole);
            let a1 = -2.0 * zp.re;
            let a2 = zp.norm_sqr();
            let g = (1.0 + a1 + a2) / 4.0;
            Biquad {
                b: [g, 2.0 * g, g],
                a: [1.0, a1, a2],
            }
        })
        .collect();
    Ok(sections)
}

/// Complex response at normalised frequency `w` (fraction of Nyquist).
pub fn frequency_response(sos: &[Biquad], w: f64) -> Complex64 {
    let z_inv = Complex64::from_polar(1.0, -std::f64::consts::PI * w);
    sos.iter().map(|s| s.response(z_inv)).product()
}

/// Single causal pass with every section started from the steady state of
/// a constant input equal to `x[0]`.
fn sosfilt_steady(sos: &[Biquad], x: &mut [f64]) {
    let x0 = x[0];
    for s in sos {
        let [mut z1, mut z2] = s.step_state();
        z1 *= x0;
        z2 *= x0;
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[1] * y + z2;
            z2 = s.b[2] * input - s.a[2] * y;
            *v = y;
        }
    }
}

/// Zero-phase filtering of a raw sequence with odd-reflection padding.
pub fn filtfilt_values(values: &[f64], spec: &FilterSpec) -> Result<Vec<f64>, DspError> {
    let sos = design_butterworth(spec)?;
    let pad = spec.pad_len();
    let n = values.len();
    if n <= pad {
        return Err(DspError::TooShort {
            len: n,
            required: pad,
        });
    }
    let first = values[0];
    let last = values[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - values[i]));
    ext.extend_from_slice(values);
    ext.extend((1..=pad).map(|i| 2.0 * last - values[n - 1 - i]));

    sosfilt_steady(&sos, &mut ext);
    ext.reverse();
    sosfilt_steady(&sos, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Zero-phase low-pass of a signature. Negative values produced by ringing
/// are clamped to zero.
pub fn filtfilt(sig: &RcsSignature, spec: &FilterSpec) -> Result<RcsSignature, DspError> {
    let rcs = filtfilt_values(&sig.rcs, spec)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    Ok(RcsSignature {
        frequencies: sig.frequencies.clone(),
        rcs,
        filtered: true,
    })
}
