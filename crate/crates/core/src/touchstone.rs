//! Two-port Touchstone v1 (`.s2p`) reading and writing, plus the canonical
//! 3.1–10.6 GHz frequency grid shared by the rest of the pipeline.
//!
//! Only S11 is retained from a parsed file. S21, S12 and S22 columns are
//! validated for shape and then dropped.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance, in Hz, used when comparing frequencies against the
/// canonical grid.
pub const GRID_TOLERANCE_HZ: f64 = 1.0e3;

#[derive(Debug, Error, PartialEq)]
pub enum TouchstoneError {
    #[error("line {line}: data line before the `#` option line")]
    MissingOptionLine { line: usize },
    #[error("no `#` option line found")]
    NoOptionLine,
    #[error("line {line}: duplicate `#` option line")]
    DuplicateOptionLine { line: usize },
    #[error("line {line}: Touchstone v2 keyword `{keyword}` is not supported")]
    UnsupportedVersion { line: usize, keyword: String },
    #[error("line {line}: unknown frequency unit `{token}`")]
    UnknownUnit { line: usize, token: String },
    #[error("line {line}: unknown data format `{token}`")]
    UnknownFormat { line: usize, token: String },
    #[error("line {line}: unsupported parameter type `{token}` (only S is accepted)")]
    UnsupportedParameter { line: usize, token: String },
    #[error("line {line}: unrecognised option token `{token}`")]
    UnknownOption { line: usize, token: String },
    #[error("line {line}: expected 9 columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: cannot parse `{token}` as a number")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: frequency {freq_hz} Hz does not increase")]
    NonMonotonic { line: usize, freq_hz: f64 },
    #[error("sweep contains no data points")]
    Empty,
    #[error("frequency and S11 sequences differ in length ({freqs} vs {values})")]
    LengthMismatch { freqs: usize, values: usize },
    #[error("frequency index {index} does not increase")]
    NotIncreasing { index: usize },
    #[error("sweep spans {start_hz}..{stop_hz} Hz and does not cover the grid {grid_start_hz}..{grid_stop_hz} Hz")]
    NotCovered {
        start_hz: f64,
        stop_hz: f64,
        grid_start_hz: f64,
        grid_stop_hz: f64,
    },
}

/// Uniform inclusive frequency grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalGrid {
    pub f_start: f64,
    pub f_stop: f64,
    pub n_points: usize,
}

impl Default for CanonicalGrid {
    fn default() -> Self {
        Self {
            f_start: 3.1e9,
            f_stop: 10.6e9,
            n_points: 700,
        }
    }
}

impl CanonicalGrid {
    pub fn spacing(&self) -> f64 {
        (self.f_stop - self.f_start) / (self.n_points - 1) as f64
    }

    /// Frequency of grid point `i`. Endpoints are exact.
    pub fn frequency(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.f_stop
        } else {
            self.f_start + (self.f_stop - self.f_start) * i as f64 / (self.n_points - 1) as f64
        }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.frequency(i)).collect()
    }

    /// True when `freqs` matches this grid point-for-point within
    /// [`GRID_TOLERANCE_HZ`].
    pub fn matches(&self, freqs: &[f64]) -> bool {
        freqs.len() == self.n_points
            && freqs
                .iter()
                .enumerate()
                .all(|(i, &f)| (f - self.frequency(i)).abs() <= GRID_TOLERANCE_HZ)
    }
}

/// One S11 sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySweep {
    /// Hz, strictly increasing.
    pub frequencies: Vec<f64>,
    pub s11: Vec<Complex64>,
    pub source_id: String,
    /// Reference resistance from the option line, in ohms. Carried along
    /// but not used by calibration, which only forms ratios.
    pub reference_ohms: f64,
}

impl FrequencySweep {
    pub fn new(
        frequencies: Vec<f64>,
        s11: Vec<Complex64>,
        source_id: impl Into<String>,
    ) -> Result<Self, TouchstoneError> {
        let sweep = Self {
            frequencies,
            s11,
            source_id: source_id.into(),
            reference_ohms: 50.0,
        };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn validate(&self) -> Result<(), TouchstoneError> {
        if self.frequencies.len() != self.s11.len() {
            return Err(TouchstoneError::LengthMismatch {
                freqs: self.frequencies.len(),
                values: self.s11.len(),
            });
        }
        if self.frequencies.is_empty() {
            return Err(TouchstoneError::Empty);
        }
        if let Some(i) = self.frequencies.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(TouchstoneError::NotIncreasing { index: i + 1 });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Builds a sweep on the canonical grid without re-checking monotonicity.
    pub fn on_grid(
        grid: &CanonicalGrid,
        s11: Vec<Complex64>,
        source_id: impl Into<String>,
    ) -> Self {
        assert_eq!(s11.len(), grid.n_points, "S11 length must match the grid");
        Self {
            frequencies: grid.frequencies(),
            s11,
            source_id: source_id.into(),
            reference_ohms: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataFormat {
    RealImag,
    MagAngle,
    DbAngle,
}

struct OptionLine {
    unit_scale: f64,
    format: DataFormat,
    reference_ohms: f64,
}

fn parse_option_line(body: &str, line: usize) -> Result<OptionLine, TouchstoneError> {
    // Touchstone defaults when a token is omitted.
    let mut opts = OptionLine {
        unit_scale: 1.0e9,
        format: DataFormat::MagAngle,
        reference_ohms: 50.0,
    };
    let mut tokens = body.split_whitespace();
    while let Some(tok) = tokens.next() {
        match tok.to_ascii_uppercase().as_str() {
            "HZ" => opts.unit_scale = 1.0,
            "KHZ" => opts.unit_scale = 1.0e3,
            "MHZ" => opts.unit_scale = 1.0e6,
            "GHZ" => opts.unit_scale = 1.0e9,
            "S" => {}
            "Y" | "Z" | "G" | "H" => {
                return Err(TouchstoneError::UnsupportedParameter {
                    line,
                    token: tok.to_string(),
                })
            }
            "RI" => opts.format = DataFormat::RealImag,
            "MA" => opts.format = DataFormat::MagAngle,
            "DB" => opts.format = DataFormat::DbAngle,
            "R" => {
                let value = tokens
                    .next()
                    .ok_or_else(|| TouchstoneError::UnknownOption {
                        line,
                        token: "R".to_string(),
                    })?;
                opts.reference_ohms = parse_number(value, line)?;
            }
            upper if upper.ends_with("HZ") => {
                return Err(TouchstoneError::UnknownUnit {
                    line,
                    token: tok.to_string(),
                })
            }
            upper if upper.len() == 2 && upper.chars().all(|c| c.is_ascii_alphabetic()) => {
                return Err(TouchstoneError::UnknownFormat {
                    line,
                    token: tok.to_string(),
                })
            }
            _ => {
                return Err(TouchstoneError::UnknownOption {
                    line,
                    token: tok.to_string(),
                })
            }
        }
    }
    Ok(opts)
}

fn parse_number(token: &str, line: usize) -> Result<f64, TouchstoneError> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| TouchstoneError::BadNumber {
            line,
            token: token.to_string(),
        })
}

fn to_rect(format: DataFormat, a: f64, b: f64) -> Complex64 {
    match format {
        DataFormat::RealImag => Complex64::new(a, b),
        DataFormat::MagAngle => Complex64::from_polar(a, b.to_radians()),
        DataFormat::DbAngle => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
    }
}

/// Parses a two-port Touchstone v1 document and returns its S11 sweep.
pub fn parse_s2p(text: &str) -> Result<FrequencySweep, TouchstoneError> {
    let mut options: Option<OptionLine> = None;
    let mut freqs = Vec::new();
    let mut s11 = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('!').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            let keyword = content.split(']').next().unwrap_or(content).to_string() + "]";
            return Err(TouchstoneError::UnsupportedVersion { line, keyword });
        }
        if let Some(body) = content.strip_prefix('#') {
            if options.is_some() {
                return Err(TouchstoneError::DuplicateOptionLine { line });
            }
            options = Some(parse_option_line(body, line)?);
            continue;
        }
        let opts = options
            .as_ref()
            .ok_or(TouchstoneError::MissingOptionLine { line })?;
        let cols: Vec<&str> = content.split_whitespace().collect();
        if cols.len() != 9 {
            return Err(TouchstoneError::ColumnCount {
                line,
                found: cols.len(),
            });
        }
        let mut values = [0.0f64; 9];
        for (v, tok) in values.iter_mut().zip(&cols) {
            *v = parse_number(tok, line)?;
        }
        let f = values[0] * opts.unit_scale;
        if let Some(&prev) = freqs.last() {
            if !(f > prev) {
                return Err(TouchstoneError::NonMonotonic { line, freq_hz: f });
            }
        }
        freqs.push(f);
        s11.push(to_rect(opts.format, values[1], values[2]));
    }

    let opts = options.ok_or(TouchstoneError::NoOptionLine)?;
    if freqs.is_empty() {
        return Err(TouchstoneError::Empty);
    }
    Ok(FrequencySweep {
        frequencies: freqs,
        s11,
        source_id: String::new(),
        reference_ohms: opts.reference_ohms,
    })
}

/// Formats `x` with `digits` significant digits, `%g` style.
pub(crate) fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_fraction(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes the sweep as `# GHZ S RI R 50` with 12 significant digits. The
/// S21, S12 and S22 columns are written as zeros.
pub fn write_s2p(sweep: &FrequencySweep) -> Result<String, TouchstoneError> {
    sweep.validate()?;
    let mut out = String::with_capacity(64 * (sweep.len() + 2));
    if !sweep.source_id.is_empty() {
        let _ = writeln!(out, "! {}", sweep.source_id.replace(['\n', '\r'], " "));
    }
    out.push_str("# GHZ S RI R 50\n");
    for (f, s) in sweep.frequencies.iter().zip(&sweep.s11) {
        let _ = writeln!(
            out,
            "{} {} {} 0 0 0 0 0 0",
            format_sig(f / 1.0e9, 12),
            format_sig(s.re, 12),
            format_sig(s.im, 12)
        );
    }
    Ok(out)
}

/// Linearly interpolates real and imaginary parts onto `grid`.
pub fn resample_to_grid(
    sweep: &FrequencySweep,
    grid: &CanonicalGrid,
) -> Result<FrequencySweep, TouchstoneError> {
    sweep.validate()?;
    let first = sweep.frequencies[0];
    let last = *sweep.frequencies.last().expect("non-empty");
    if first > grid.f_start + GRID_TOLERANCE_HZ || last < grid.f_stop - GRID_TOLERANCE_HZ {
        return Err(TouchstoneError::NotCovered {
            start_hz: first,
            stop_hz: last,
            grid_start_hz: grid.f_start,
            grid_stop_hz: grid.f_stop,
        });
    }

    let xs = &sweep.frequencies;
    let ys = &sweep.s11;
    let values = grid
        .frequencies()
        .into_iter()
        .map(|f| {
            if f <= first {
                return ys[0];
            }
            if f >= last {
                return ys[ys.len() - 1];
            }
            // first index with xs[i] > f; f lies in [xs[i-1], xs[i])
            let hi = xs.partition_point(|&x| x <= f);
            let lo = hi - 1;
            let t = (f - xs[lo]) / (xs[hi] - xs[lo]);
            ys[lo] + (ys[hi] - ys[lo]) * t
        })
        .collect();
    Ok(FrequencySweep {
        frequencies: grid.frequencies(),
        s11: values,
        source_id: sweep.source_id.clone(),
        reference_ohms: sweep.reference_ohms,
    })
}
