//! Feature extraction and standardisation.
//!
//! The catalog (version [`CATALOG_VERSION`]) has 46 whole-band features in
//! four families: statistical, temporal, spectral and energy/entropy. The
//! sequence is indexed by grid position, not by frequency. Spectral
//! features use the one-sided power spectrum of the mean-removed sequence
//! with a rectangular window; bin frequencies are in cycles per sample.
//!
//! On top of the catalog, each of the four frequency windows contributes its
//! argmin frequency (Hz) and minimum RCS (m²).
//!
//! Degenerate inputs map to 0 rather than NaN: moments of a constant
//! sequence, autocorrelation with zero variance, spectral shape with zero
//! power and the histogram entropy of a flat sequence.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rcs::RcsSignature;

pub const CATALOG_VERSION: u32 = 1;

/// Standard deviations below this are treated as constant features.
pub const STD_FLOOR: f64 = 1.0e-12;

const HISTOGRAM_BINS: usize = 16;

pub const CATALOG_NAMES: [&str; 46] = [
    // statistical
    "mean",
    "std",
    "variance",
    "skewness",
    "kurtosis",
    "min",
    "max",
    "peak_to_peak",
    "median",
    "q25",
    "q75",
    "iqr",
    "rms",
    "mean_abs_dev",
    "argmin_pos",
    "argmax_pos",
    // temporal
    "zero_crossings",
    "slope_sign_changes",
    "total_variation",
    "mean_abs_diff",
    "mean_diff",
    "max_abs_diff",
    "autocorr_lag1",
    "autocorr_lag5",
    "autocorr_lag10",
    "trend_slope",
    "trend_intercept",
    "num_local_minima",
    "auc",
    "temporal_centroid",
    // spectral
    "spectral_centroid",
    "spectral_spread",
    "spectral_skewness",
    "spectral_kurtosis",
    "spectral_rolloff_85",
    "dominant_bin",
    "band_energy_ratio_0",
    "band_energy_ratio_1",
    "band_energy_ratio_2",
    "band_energy_ratio_3",
    "spectral_entropy",
    "spectral_flatness",
    "max_power",
    "total_power",
    // energy / entropy
    "energy",
    "histogram_entropy",
];

pub const WINDOWED_NAMES: [&str; 8] = [
    "w1_argmin_hz",
    "w1_min_rcs",
    "w2_argmin_hz",
    "w2_min_rcs",
    "w3_argmin_hz",
    "w3_min_rcs",
    "w4_argmin_hz",
    "w4_min_rcs",
];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("catalog features require a filtered signature")]
    Unfiltered,
    #[error("signature needs at least {min} samples, got {len}")]
    TooShort { len: usize, min: usize },
    #[error("feature matrix is empty")]
    Empty,
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("scaler fitted on {expected} features applied to {found}")]
    WidthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

/// Four half-open bands in Hz; the last band is closed at its top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub bands: [(f64, f64); 4],
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            bands: [
                (3.1e9, 4.2e9),
                (4.2e9, 5.2e9),
                (5.2e9, 6.3e9),
                (6.3e9, 10.6e9),
            ],
        }
    }
}

impl WindowSpec {
    fn contains(&self, band: usize, f: f64) -> bool {
        let (lo, hi) = self.bands[band];
        f >= lo && (f < hi || (band == self.bands.len() - 1 && f <= hi))
    }
}

/// Row-major table of named features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    data: Vec<f64>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let width = names.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(FeatureError::RaggedRow {
                    row: i,
                    found: r.len(),
                    expected: width,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            names,
            data,
            n_rows: rows.len(),
        })
    }

    pub fn from_flat(names: Vec<String>, data: Vec<f64>) -> Result<Self, FeatureError> {
        let width = names.len().max(1);
        if data.len() % width != 0 {
            return Err(FeatureError::RaggedRow {
                row: data.len() / width,
                found: data.len() % width,
                expected: width,
            });
        }
        let n_rows = if names.is_empty() {
            0
        } else {
            data.len() / width
        };
        Ok(Self {
            names,
            data,
            n_rows,
        })
    }

    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self, FeatureError> {
        let first = vectors.first().ok_or(FeatureError::Empty)?;
        let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
        Self::new(first.names.clone(), &rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            names: self.names.clone(),
            data,
            n_rows: idx.len(),
        }
    }

    /// Keeps the columns whose mask entry is true, in order.
    pub fn select_columns(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.n_cols(), "mask width");
        let keep: Vec<usize> = (0..self.n_cols()).filter(|&j| mask[j]).collect();
        let names = keep.iter().map(|&j| self.names[j].clone()).collect();
        let mut data = Vec::with_capacity(self.n_rows * keep.len());
        for r in self.rows() {
            data.extend(keep.iter().map(|&j| r[j]));
        }
        Self {
            names,
            data,
            n_rows: self.n_rows,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// CSV with a header row of feature names.
    pub fn to_csv(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Per-feature z-score statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_scaler(train: &FeatureMatrix) -> Result<ScalerStats, FeatureError> {
    fit_scaler_flat(train.as_slice(), train.n_cols(), train.n_rows())
}

/// Column statistics of a row-major buffer, summed in row order.
pub fn fit_scaler_flat(
    data: &[f64],
    width: usize,
    n_rows: usize,
) -> Result<ScalerStats, FeatureError> {
    if n_rows == 0 || width == 0 {
        return Err(FeatureError::Empty);
    }
    let n = n_rows as f64;
    let mut mean = vec![0.0; width];
    for r in data.chunks_exact(width) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for r in data.chunks_exact(width) {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd < STD_FLOOR {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(ScalerStats { mean, std })
}

impl ScalerStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn select(&self, mask: &[bool]) -> Self {
        let pick = |v: &[f64]| {
            v.iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(x, _)| *x)
                .collect()
        };
        Self {
            mean: pick(&self.mean),
            std: pick(&self.std),
        }
    }
}

pub fn apply_scaler(
    stats: &ScalerStats,
    matrix: &FeatureMatrix,
) -> Result<FeatureMatrix, FeatureError> {
    if stats.width() != matrix.n_cols() {
        return Err(FeatureError::WidthMismatch {
            expected: stats.width(),
            found: matrix.n_cols(),
        });
    }
    let mut out = matrix.clone();
    let w = out.n_cols();
    for r in out.data.chunks_exact_mut(w) {
        stats.transform_row(r);
    }
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn first_arg(x: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if better(v, x[best]) {
            best = i;
        }
    }
    best
}

fn power_spectrum(centered: &[f64]) -> Vec<f64> {
    let n = centered.len();
    let mut buf: Vec<Complex<f64>> = centered.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Whole-band catalog features of a filtered signature.
pub fn extract_catalog(sig: &RcsSignature) -> Result<FeatureVector, FeatureError> {
    if !sig.filtered {
        return Err(FeatureError::Unfiltered);
    }
    Ok(FeatureVector {
        names: CATALOG_NAMES.iter().map(|s| s.to_string()).collect(),
        values: catalog_values(&sig.rcs)?,
    })
}

pub fn catalog_values(x: &[f64]) -> Result<Vec<f64>, FeatureError> {
    let n = x.len();
    if n < 12 {
        return Err(FeatureError::TooShort { len: n, min: 12 });
    }
    let nf = n as f64;
    let mut out = Vec::with_capacity(CATALOG_NAMES.len());

    // statistical
    let mean = x.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let m2 = centered.iter().map(|c| c * c).sum::<f64>() / nf;
    let m3 = centered.iter().map(|c| c * c * c).sum::<f64>() / nf;
    let m4 = centered.iter().map(|c| (c * c) * (c * c)).sum::<f64>() / nf;
    let degenerate = m2.sqrt() < STD_FLOOR * mean.abs().max(1e-300) || m2 == 0.0;
    // rounding residue of a constant sequence
    let m2 = if degenerate { 0.0 } else { m2 };
    let std = m2.sqrt();
    let (skew, kurt) = if degenerate {
        (0.0, 0.0)
    } else {
        (m3 / (m2 * std), m4 / (m2 * m2) - 3.0)
    };
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[n - 1];
    let q25 = quantile(&sorted, 0.25);
    let q75 = quantile(&sorted, 0.75);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
    let mad = if degenerate {
        0.0
    } else {
        centered.iter().map(|c| c.abs()).sum::<f64>() / nf
    };
    let argmin = first_arg(x, |a, b| a < b);
    let argmax = first_arg(x, |a, b| a > b);
    out.extend([
        mean,
        std,
        m2,
        skew,
        kurt,
        min,
        max,
        max - min,
        quantile(&sorted, 0.5),
        q25,
        q75,
        q75 - q25,
        rms,
        mad,
        argmin as f64 / (n - 1) as f64,
        argmax as f64 / (n - 1) as f64,
    ]);

    // temporal
    let diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let zero_crossings = if degenerate {
        0
    } else {
        centered.windows(2).filter(|w| w[0] * w[1] < 0.0).count()
    };
    let slope_changes = diffs.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let tv: f64 = diffs.iter().map(|d| d.abs()).sum();
    let max_abs_diff = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let autocorr = |lag: usize| -> f64 {
        if degenerate {
            return 0.0;
        }
        let num: f64 = (0..n - lag).map(|i| centered[i] * centered[i + lag]).sum();
        num / (m2 * nf)
    };
    // least squares against t = 0..n-1
    let t_mean = (nf - 1.0) / 2.0;
    let sxx: f64 = (0..n).map(|i| (i as f64 - t_mean).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| (i as f64 - t_mean) * centered[i]).sum();
    let slope = if degenerate { 0.0 } else { sxy / sxx };
    let intercept = mean - slope * t_mean;
    let local_minima = (1..n - 1)
        .filter(|&i| x[i] < x[i - 1] && x[i] < x[i + 1])
        .count();
    let auc: f64 = x.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    let mass: f64 = x.iter().map(|v| v.abs()).sum();
    let temporal_centroid = if mass > 0.0 {
        x.iter()
            .enumerate()
            .map(|(i, v)| i as f64 * v.abs())
            .sum::<f64>()
            / mass
            / (n - 1) as f64
    } else {
        0.0
    };
    out.extend([
        zero_crossings as f64,
        slope_changes as f64,
        tv,
        tv / (n - 1) as f64,
        (x[n - 1] - x[0]) / (n - 1) as f64,
        max_abs_diff,
        autocorr(1),
        autocorr(5),
        autocorr(10),
        slope,
        intercept,
        local_minima as f64,
        auc,
        temporal_centroid,
    ]);

    // spectral
    let power = if degenerate {
        vec![0.0; n / 2 + 1]
    } else {
        power_spectrum(&centered)
    };
    let total: f64 = power.iter().sum();
    if total > 0.0 {
        let freq = |k: usize| k as f64 / nf;
        let centroid: f64 = power
            .iter()
            .enumerate()
            .map(|(k, p)| freq(k) * p)
            .sum::<f64>()
            / total;
        let moment = |order: i32| -> f64 {
            power
                .iter()
                .enumerate()
                .map(|(k, p)| (freq(k) - centroid).powi(order) * p)
                .sum::<f64>()
                / total
        };
        let spread = moment(2).sqrt();
        let (s_skew, s_kurt) = if spread > 0.0 {
            (moment(3) / spread.powi(3), moment(4) / spread.powi(4))
        } else {
            (0.0, 0.0)
        };
        let mut cum = 0.0;
        let mut rolloff = freq(power.len() - 1);
        for (k, p) in power.iter().enumerate() {
            cum += p;
            if cum >= 0.85 * total {
                rolloff = freq(k);
                break;
            }
        }
        let dominant = first_arg(&power, |a, b| a > b);
        let m = power.len();
        let bands: Vec<f64> = (0..4)
            .map(|j| power[j * m / 4..(j + 1) * m / 4].iter().sum::<f64>() / total)
            .collect();
        let entropy: f64 = -power
            .iter()
            .map(|p| p / total)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.log2())
            .sum::<f64>();
        let floor = total * 1e-20;
        let log_mean = power.iter().map(|p| p.max(floor).ln()).sum::<f64>() / m as f64;
        let flatness = log_mean.exp() / (total / m as f64);
        let max_power = power.iter().fold(0.0f64, |a, &b| a.max(b));
        out.extend([centroid, spread, s_skew, s_kurt, rolloff, dominant as f64]);
        out.extend(bands);
        out.extend([entropy, flatness, max_power, total]);
    } else {
        out.extend(std::iter::repeat(0.0).take(14));
    }

    // energy / entropy
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let hist_entropy = if max > min {
        let mut counts = [0usize; HISTOGRAM_BINS];
        let width = (max - min) / HISTOGRAM_BINS as f64;
        for &v in x {
            let b = (((v - min) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[b] += 1;
        }
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                p * p.log2()
            })
            .sum::<f64>()
    } else {
        0.0
    };
    out.extend([energy, hist_entropy]);
    debug_assert_eq!(out.len(), CATALOG_NAMES.len());
    Ok(out)
}

/// Argmin frequency and minimum magnitude per window. Ties resolve to the
/// lowest frequency; an empty window yields NaN-free zeros.
pub fn extract_windowed(sig: &RcsSignature, windows: &WindowSpec) -> FeatureVector {
    let mut values = Vec::with_capacity(8);
    for band in 0..4 {
        let mut best: Option<(f64, f64)> = None;
        for (&f, &r) in sig.frequencies.iter().zip(&sig.rcs) {
            if windows.contains(band, f) && best.is_none_or(|(_, m)| r < m) {
                best = Some((f, r));
            }
        }
        let (f, m) = best.unwrap_or((0.0, 0.0));
        values.push(f);
        values.push(m);
    }
    FeatureVector {
        names: WINDOWED_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    }
}

/// Catalog followed by the windowed features.
pub fn extract_all(
    sig: &RcsSignature,
    windows: &WindowSpec,
) -> Result<FeatureVector, FeatureError> {
    let mut fv = extract_catalog(sig)?;
    let w = extract_windowed(sig, windows);
    fv.names.extend(w.names);
    fv.values.extend(w.values);
    Ok(fv)
}

pub fn all_feature_names() -> Vec<String> {
    CATALOG_NAMES
        .iter()
        .chain(WINDOWED_NAMES.iter())
        .map(|s| s.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{filtfilt, FilterSpec};
    use crate::siggen::{synth_rcs, DeformationCase, GeneratorConfig, Position, TagLabel};
    use crate::touchstone::CanonicalGrid;
    use proptest::prelude::*;

    fn idx(name: &str) -> usize {
        CATALOG_NAMES.iter().position(|n| *n == name).unwrap()
    }

    fn filtered_constant(c: f64) -> RcsSignature {
        let mut s = RcsSignature::on_grid(&CanonicalGrid::default(), vec![c; 700]);
        s.filtered = true;
        s
    }

    fn noiseless(tag_id: u8, cap: f64) -> RcsSignature {
        let label = TagLabel {
            tag_id,
            capacitance_pf: cap,
            position: Position::P1,
            case: DeformationCase::Ci,
            reading: 0,
        };
        let raw = synth_rcs(&label, &GeneratorConfig::noiseless(), 0).unwrap();
        filtfilt(&raw, &FilterSpec::default()).unwrap()
    }

    #[test]
    fn names_are_unique() {
        let names = all_feature_names();
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), 54);
    }

    #[test]
    fn constant_signature() {
        let fv = extract_catalog(&filtered_constant(2e-3)).unwrap();
        assert!((fv.values[idx("mean")] - 2e-3).abs() < 1e-15);
        assert_eq!(fv.values[idx("variance")], 0.0);
        assert_eq!(fv.values[idx("zero_crossings")], 0.0);
        assert_eq!(fv.values[idx("total_variation")], 0.0);
        assert_eq!(fv.values[idx("histogram_entropy")], 0.0);
        assert!(fv.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unfiltered_rejected() {
        let s = RcsSignature::on_grid(&CanonicalGrid::default(), vec![1.0; 700]);
        assert_eq!(extract_catalog(&s), Err(FeatureError::Unfiltered));
    }

    #[test]
    fn mirror_invariants() {
        let sig = noiseless(5, 0.3);
        let mut mirrored = sig.clone();
        mirrored.rcs.reverse();
        let a = extract_catalog(&sig).unwrap();
        let b = extract_catalog(&mirrored).unwrap();
        for name in ["variance", "energy", "histogram_entropy"] {
            let (x, y) = (a.values[idx(name)], b.values[idx(name)]);
            assert!(
                (x - y).abs() <= 1e-12 * x.abs().max(1e-300),
                "{name}: {x} vs {y}"
            );
        }
    }

    #[test]
    fn single_dip_min_and_finite() {
        let cfg = GeneratorConfig::noiseless();
        let sig = noiseless(0, 0.8);
        let fv = extract_catalog(&sig).unwrap();
        assert!(fv.values.iter().all(|v| v.is_finite()));
        // deepest point: the sensing dip at full depth, widened slightly by the filter
        let expected = cfg.baseline_rcs * (1.0 - cfg.sensing_depth);
        assert!((fv.values[idx("min")] - expected).abs() < 0.05 * cfg.baseline_rcs);
        let dom = fv.values[idx("dominant_bin")];
        assert!(dom >= 0.0 && dom <= 350.0);
    }

    #[test]
    fn windowed_minima_track_ring_centres() {
        let cfg = GeneratorConfig::noiseless();
        let step = cfg.grid.spacing();
        let w = extract_windowed(&noiseless(7, 0.1), &WindowSpec::default());
        for k in 0..3 {
            assert!((w.values[2 * k] - cfg.id_centers_hz[k]).abs() <= step + 1.0);
        }
        assert!((w.values[6] - cfg.sensing_center_hz(0.1)).abs() <= step + 1.0);

        let z = extract_windowed(&noiseless(0, 0.1), &WindowSpec::default());
        for k in 0..3 {
            assert!(z.values[2 * k + 1] >= cfg.baseline_rcs * (1.0 - cfg.id_residual_depth) - 1e-9);
        }
    }

    #[test]
    fn windowed_constant_ties_to_first_frequency() {
        let sig = filtered_constant(1e-3);
        let w = extract_windowed(&sig, &WindowSpec::default());
        let grid = CanonicalGrid::default();
        let spec = WindowSpec::default();
        for band in 0..4 {
            let first = grid
                .frequencies()
                .into_iter()
                .find(|&f| spec.contains(band, f))
                .unwrap();
            assert_eq!(w.values[2 * band], first);
            assert_eq!(w.values[2 * band + 1], 1e-3);
        }
    }

    #[test]
    fn windows_partition_grid() {
        let spec = WindowSpec::default();
        for f in CanonicalGrid::default().frequencies() {
            assert_eq!((0..4).filter(|&b| spec.contains(b, f)).count(), 1, "{f}");
        }
    }

    #[test]
    fn scaler_two_point_and_constant() {
        let m = FeatureMatrix::new(
            vec!["a".into(), "c".into()],
            &[vec![0.0, 5.0], vec![2.0, 5.0]],
        )
        .unwrap();
        let stats = fit_scaler(&m).unwrap();
        assert_eq!(stats.mean, vec![1.0, 5.0]);
        assert_eq!(stats.std, vec![1.0, 1.0]);
        let t = apply_scaler(&stats, &m).unwrap();
        assert_eq!(t.column(0), vec![-1.0, 1.0]);
        assert_eq!(t.column(1), vec![0.0, 0.0]);
        let val = FeatureMatrix::new(vec!["a".into(), "c".into()], &[vec![3.0, 5.0]]).unwrap();
        assert_eq!(apply_scaler(&stats, &val).unwrap().row(0), &[2.0, 0.0]);
        let empty = FeatureMatrix::new(vec!["a".into()], &[]).unwrap();
        assert_eq!(fit_scaler(&empty), Err(FeatureError::Empty));
    }

    proptest! {
        #[test]
        fn standardised_training_set_has_zero_mean_unit_std(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..40)
        ) {
            let m = FeatureMatrix::new(vec!["a".into(), "b".into(), "c".into()], &rows).unwrap();
            let stats = fit_scaler(&m).unwrap();
            let t = apply_scaler(&stats, &m).unwrap();
            let again = apply_scaler(&fit_scaler(&t).unwrap(), &t).unwrap();
            for j in 0..3 {
                let col = t.column(j);
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                if stats.std[j] != 1.0 || sd > 0.5 {
                    prop_assert!((sd - 1.0).abs() < 1e-9);
                }
                for (a, b) in col.iter().zip(again.column(j)) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn windowed_affine_behaviour(scale in 0.1f64..10.0, tag in 0u8..8) {
            let sig = noiseless(tag, 0.3);
            let mut scaled = sig.clone();
            scaled.rcs.iter_mut().for_each(|v| *v *= scale);
            let a = extract_windowed(&sig, &WindowSpec::default());
            let b = extract_windowed(&scaled, &WindowSpec::default());
            for k in 0..4 {
                prop_assert_eq!(a.values[2 * k], b.values[2 * k]);
                prop_assert!((a.values[2 * k + 1] * scale - b.values[2 * k + 1]).abs() < 1e-15);
            }
        }

        #[test]
        fn schema_is_stable(tag in 0u8..8, cap_idx in 0usize..3) {
            let sig = noiseless(tag, crate::siggen::CAPACITANCES_PF[cap_idx]);
            let fv = extract_all(&sig, &WindowSpec::default()).unwrap();
            prop_assert_eq!(fv.names, all_feature_names());
            prop_assert!(fv.values.iter().all(|v| v.is_finite()));
        }
    }
}
