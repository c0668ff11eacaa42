//! Parametric generator for labelled chipless-tag RCS signatures.
//!
//! A signature is a flat baseline with Gaussian dips cut into it:
//!
//! * a null-encoding ring that is always present,
//! * three ID rings, one per ID window, deep when the corresponding bit of
//!   the tag ID is set and shallow otherwise (bit `k` lives in window `k`),
//! * a sensing ring whose centre moves down in frequency as the loaded
//!   capacitance grows, `f_s(C) = f0 / sqrt(1 + C / C0)`.
//!
//! Read position scales the amplitude and the noise, the deformation case
//! detunes every ring and damps its depth, and tilted positions add a small
//! sinusoidal ripple. Readings within a group differ only by their noise
//! realisation.
//!
//! Seeds: the label with coordinates `(tag, cap, pos, case, reading)` gets
//! the seed `seed::derive(master, [LABEL, key])` with
//! `key = (((tag * 3 + cap) * 4 + pos) * 5 + case) * 20 + reading`, so a
//! reduced-reading dataset is a strict subset of the full one.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rcs::{self, RcsSignature, ReferencePlate, DENOMINATOR_FLOOR};
use crate::seed;
use crate::touchstone::{CanonicalGrid, FrequencySweep};

pub const CAPACITANCES_PF: [f64; 3] = [0.1, 0.3, 0.8];
pub const FULL_READINGS: usize = 20;

/// ID windows in Hz, `[lo, hi)`.
pub const ID_WINDOWS_HZ: [(f64, f64); 3] = [(3.1e9, 4.2e9), (4.2e9, 5.2e9), (5.2e9, 6.3e9)];
pub const SENSING_WINDOW_HZ: (f64, f64) = (6.3e9, 10.6e9);

#[derive(Debug, Error, PartialEq)]
pub enum SiggenError {
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("isolation and reference profiles coincide (contrast {0:e})")]
    DegenerateReference(f64),
    #[error("config parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Position {
    P1,
    P2,
    P3,
    P4,
}

impl Position {
    pub const ALL: [Position; 4] = [Position::P1, Position::P2, Position::P3, Position::P4];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Read range in millimetres.
    pub fn range_mm(self) -> f64 {
        match self {
            Position::P1 | Position::P2 => 200.0,
            Position::P3 | Position::P4 => 300.0,
        }
    }

    pub fn tilt_deg(self) -> f64 {
        match self {
            Position::P1 | Position::P3 => 0.0,
            Position::P2 | Position::P4 => 45.0,
        }
    }

    pub fn is_tilted(self) -> bool {
        self.tilt_deg() != 0.0
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.index() + 1)
    }
}

impl FromStr for Position {
    type Err = SiggenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "P1" => Ok(Position::P1),
            "P2" => Ok(Position::P2),
            "P3" => Ok(Position::P3),
            "P4" => Ok(Position::P4),
            other => Err(SiggenError::InvalidLabel(format!(
                "unknown position `{other}`"
            ))),
        }
    }
}

/// Mounting-surface deformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeformationCase {
    /// Flat.
    Ci,
    /// Corner bend, 50:50.
    Cii,
    /// Corner bend, 25:75.
    Ciii,
    /// Cylinder, r = 40 mm.
    Civ,
    /// Cylinder, r = 10 mm.
    Cv,
}

impl DeformationCase {
    pub const ALL: [DeformationCase; 5] = [
        DeformationCase::Ci,
        DeformationCase::Cii,
        DeformationCase::Ciii,
        DeformationCase::Civ,
        DeformationCase::Cv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DeformationCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DeformationCase::Ci => "Ci",
            DeformationCase::Cii => "Cii",
            DeformationCase::Ciii => "Ciii",
            DeformationCase::Civ => "Civ",
            DeformationCase::Cv => "Cv",
        };
        f.write_str(s)
    }
}

impl FromStr for DeformationCase {
    type Err = SiggenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Ci" => Ok(DeformationCase::Ci),
            "Cii" => Ok(DeformationCase::Cii),
            "Ciii" => Ok(DeformationCase::Ciii),
            "Civ" => Ok(DeformationCase::Civ),
            "Cv" => Ok(DeformationCase::Cv),
            other => Err(SiggenError::InvalidLabel(format!("unknown case `{other}`"))),
        }
    }
}

/// Ground truth for one reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagLabel {
    /// Integer value of the 3-bit code, 0..=7.
    pub tag_id: u8,
    pub capacitance_pf: f64,
    pub position: Position,
    pub case: DeformationCase,
    pub reading: u16,
}

impl TagLabel {
    pub fn capacitance_index(&self) -> Option<usize> {
        CAPACITANCES_PF
            .iter()
            .position(|&c| c == self.capacitance_pf)
    }

    pub fn validate(&self) -> Result<(), SiggenError> {
        if self.tag_id > 7 {
            return Err(SiggenError::InvalidLabel(format!(
                "tag_id {} outside 0..=7",
                self.tag_id
            )));
        }
        if self.capacitance_index().is_none() {
            return Err(SiggenError::InvalidLabel(format!(
                "capacitance {} pF not in {:?}",
                self.capacitance_pf, CAPACITANCES_PF
            )));
        }
        if self.reading as usize >= FULL_READINGS {
            return Err(SiggenError::InvalidLabel(format!(
                "reading {} outside 0..{FULL_READINGS}",
                self.reading
            )));
        }
        Ok(())
    }

    /// Stable integer key used for seed derivation.
    pub fn key(&self) -> u64 {
        let cap = self.capacitance_index().unwrap_or(0) as u64;
        ((((self.tag_id as u64 * 3 + cap) * 4 + self.position.index() as u64) * 5
            + self.case.index() as u64)
            * FULL_READINGS as u64)
            + self.reading as u64
    }

    pub fn bit(&self, k: usize) -> bool {
        (self.tag_id >> k) & 1 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionModel {
    pub amplitude: f64,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseModel {
    /// Fractional shift applied to every ring centre.
    pub detune: f64,
    /// Multiplier on every dip depth.
    pub damping: f64,
}

/// Extra difficulty for one (case, position) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardCell {
    pub case: DeformationCase,
    pub position: Position,
    pub detune_multiplier: f64,
    pub noise_multiplier: f64,
}

/// Isolation/reference S11 profiles used when synthesising raw sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub iso_magnitude: f64,
    pub iso_delay_ns: f64,
    /// |S11_ref - S11_iso|.
    pub ref_contrast: f64,
    pub ref_delay_ns: f64,
    pub tag_delay_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// m².
    pub baseline_rcs: f64,
    pub null_center_hz: f64,
    pub null_depth: f64,
    pub null_width_hz: f64,
    pub id_centers_hz: [f64; 3],
    /// Fractional depth of a set bit.
    pub id_deep_depth: f64,
    /// Fractional depth of a cleared bit.
    pub id_residual_depth: f64,
    pub id_width_hz: f64,
    pub sensing_f0_hz: f64,
    pub sensing_c0_pf: f64,
    pub sensing_depth: f64,
    pub sensing_width_hz: f64,
    pub positions: [PositionModel; 4],
    pub cases: [CaseModel; 5],
    pub hard_cell: HardCell,
    /// Additive white noise std as a fraction of the baseline.
    pub noise_std: f64,
    /// Ripple amplitude at tilted positions, fraction of the baseline.
    pub ripple_amplitude: f64,
    pub ripple_period_hz: f64,
    /// Per-reading fractional detune jitter std.
    pub jitter_std: f64,
    /// Minimum fractional depth difference between set and cleared bits in
    /// noiseless flat P1 signatures.
    pub bit_margin: f64,
    pub readings_per_group: usize,
    pub calibration: CalibrationProfile,
    pub plate: ReferencePlate,
    pub grid: CanonicalGrid,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            baseline_rcs: 1.0e-3,
            null_center_hz: 6.65e9,
            null_depth: 0.35,
            null_width_hz: 0.10e9,
            id_centers_hz: [3.65e9, 4.70e9, 5.75e9],
            id_deep_depth: 0.70,
            id_residual_depth: 0.12,
            id_width_hz: 0.12e9,
            sensing_f0_hz: 9.6e9,
            sensing_c0_pf: 1.0,
            sensing_depth: 0.75,
            sensing_width_hz: 0.15e9,
            positions: [
                PositionModel {
                    amplitude: 1.0,
                    noise_scale: 1.0,
                },
                PositionModel {
                    amplitude: 0.85,
                    noise_scale: 1.25,
                },
                PositionModel {
                    amplitude: 0.8,
                    noise_scale: 1.5,
                },
                PositionModel {
                    amplitude: 0.8 * 0.85,
                    noise_scale: 1.9,
                },
            ],
            cases: [
                CaseModel {
                    detune: 0.0,
                    damping: 1.0,
                },
                CaseModel {
                    detune: 0.004,
                    damping: 0.95,
                },
                CaseModel {
                    detune: -0.008,
                    damping: 0.9,
                },
                CaseModel {
                    detune: 0.01,
                    damping: 0.88,
                },
                CaseModel {
                    detune: -0.015,
                    damping: 0.8,
                },
            ],
            hard_cell: HardCell {
                case: DeformationCase::Ciii,
                position: Position::P4,
                detune_multiplier: 2.0,
                noise_multiplier: 2.0,
            },
            noise_std: 0.05,
            ripple_amplitude: 0.03,
            ripple_period_hz: 0.8e9,
            jitter_std: 0.002,
            bit_margin: 0.3,
            readings_per_group: FULL_READINGS,
            calibration: CalibrationProfile {
                iso_magnitude: 0.05,
                iso_delay_ns: 1.3,
                ref_contrast: 0.3,
                ref_delay_ns: 2.1,
                tag_delay_ns: 2.2,
            },
            plate: ReferencePlate::default(),
            grid: CanonicalGrid::default(),
            seed: 20_231_009,
        }
    }
}

impl GeneratorConfig {
    /// Default geometry with every noise source switched off.
    pub fn noiseless() -> Self {
        Self {
            noise_std: 0.0,
            ripple_amplitude: 0.0,
            jitter_std: 0.0,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SiggenError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SiggenError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("generator config serialises")
    }

    /// Sensing resonance for a given capacitance, before any detuning.
    pub fn sensing_center_hz(&self, capacitance_pf: f64) -> f64 {
        self.sensing_f0_hz / (1.0 + capacitance_pf / self.sensing_c0_pf).sqrt()
    }

    pub fn validate(&self) -> Result<(), SiggenError> {
        let bad = |msg: String| Err(SiggenError::InvalidConfig(msg));
        if !(self.baseline_rcs > 0.0) {
            return bad("baseline_rcs must be positive".into());
        }
        for (k, (&c, &(lo, hi))) in self.id_centers_hz.iter().zip(&ID_WINDOWS_HZ).enumerate() {
            if !(c >= lo && c <= hi) {
                return bad(format!("ID ring {k} centre {c} Hz outside [{lo}, {hi}]"));
            }
        }
        for &c in &CAPACITANCES_PF {
            let f = self.sensing_center_hz(c);
            if !(f > SENSING_WINDOW_HZ.0 && f <= SENSING_WINDOW_HZ.1) {
                return bad(format!(
                    "sensing centre {f} Hz for {c} pF outside (6.3, 10.6] GHz"
                ));
            }
        }
        if !(self.id_deep_depth - self.id_residual_depth >= self.bit_margin) {
            return bad("deep and residual ID depths closer than bit_margin".into());
        }
        for d in [
            self.id_deep_depth,
            self.id_residual_depth,
            self.null_depth,
            self.sensing_depth,
        ] {
            if !(0.0..=1.0).contains(&d) {
                return bad(format!("dip depth {d} outside [0, 1]"));
            }
        }
        for w in [
            self.id_width_hz,
            self.null_width_hz,
            self.sensing_width_hz,
            self.ripple_period_hz,
        ] {
            if !(w > 0.0) {
                return bad("widths and ripple period must be positive".into());
            }
        }
        if self.noise_std < 0.0 || self.ripple_amplitude < 0.0 || self.jitter_std < 0.0 {
            return bad("noise parameters must be non-negative".into());
        }
        if self.readings_per_group == 0 || self.readings_per_group > FULL_READINGS {
            return bad(format!("readings_per_group must be in 1..={FULL_READINGS}"));
        }
        if self.grid.n_points < 2 || !(self.grid.f_stop > self.grid.f_start) {
            return bad("grid must have at least two increasing points".into());
        }
        Ok(())
    }

    fn case_detune(&self, label: &TagLabel) -> f64 {
        let base = self.cases[label.case.index()].detune;
        if label.case == self.hard_cell.case && label.position == self.hard_cell.position {
            base * self.hard_cell.detune_multiplier
        } else {
            base
        }
    }

    fn noise_sigma(&self, label: &TagLabel) -> f64 {
        let mut sigma =
            self.noise_std * self.baseline_rcs * self.positions[label.position.index()].noise_scale;
        if label.case == self.hard_cell.case && label.position == self.hard_cell.position {
            sigma *= self.hard_cell.noise_multiplier;
        }
        sigma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSignature {
    pub label: TagLabel,
    pub signature: RcsSignature,
}

fn gaussian(f: f64, center: f64, width: f64) -> f64 {
    let z = (f - center) / width;
    (-0.5 * z * z).exp()
}

/// Synthesises the calibrated RCS signature for one reading.
pub fn synth_rcs(
    label: &TagLabel,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<RcsSignature, SiggenError> {
    label.validate()?;
    let mut rng = seed::rng(seed);

    let jitter: f64 = if cfg.jitter_std > 0.0 {
        cfg.jitter_std * Distribution::<f64>::sample(&StandardNormal, &mut rng)
    } else {
        0.0
    };
    let ripple_phase: f64 = rng.random::<f64>() * 2.0 * PI;
    let detune = 1.0 + cfg.case_detune(label) + jitter;
    let damping = cfg.cases[label.case.index()].damping;
    let amplitude = cfg.positions[label.position.index()].amplitude;

    let mut dips: Vec<(f64, f64, f64)> = Vec::with_capacity(5);
    dips.push((cfg.null_center_hz, cfg.null_depth, cfg.null_width_hz));
    for (k, &c) in cfg.id_centers_hz.iter().enumerate() {
        let depth = if label.bit(k) {
            cfg.id_deep_depth
        } else {
            cfg.id_residual_depth
        };
        dips.push((c, depth, cfg.id_width_hz));
    }
    dips.push((
        cfg.sensing_center_hz(label.capacitance_pf),
        cfg.sensing_depth,
        cfg.sensing_width_hz,
    ));

    let sigma = cfg.noise_sigma(label);
    let ripple = if label.position.is_tilted() {
        cfg.ripple_amplitude * cfg.baseline_rcs
    } else {
        0.0
    };

    let frequencies = cfg.grid.frequencies();
    let rcs = frequencies
        .iter()
        .map(|&f| {
            let notch: f64 = dips
                .iter()
                .map(|&(c, d, w)| d * damping * gaussian(f, c * detune, w))
                .sum();
            let mut v = amplitude * cfg.baseline_rcs * (1.0 - notch);
            if ripple > 0.0 {
                v += ripple * (2.0 * PI * f / cfg.ripple_period_hz + ripple_phase).sin();
            }
            if sigma > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                v += sigma * n;
            }
            v.max(0.0)
        })
        .collect();

    Ok(RcsSignature {
        frequencies,
        rcs,
        filtered: false,
    })
}

/// Builds (tag, isolation, reference) S11 sweeps whose calibration
/// reproduces [`synth_rcs`] for the same inputs.
pub fn synth_sweeps(
    label: &TagLabel,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<(FrequencySweep, FrequencySweep, FrequencySweep), SiggenError> {
    let profile = &cfg.calibration;
    if !(profile.ref_contrast >= DENOMINATOR_FLOOR) {
        return Err(SiggenError::DegenerateReference(profile.ref_contrast));
    }
    let sig = synth_rcs(label, cfg, seed)?;
    let n = sig.len();
    let mut tag = Vec::with_capacity(n);
    let mut iso = Vec::with_capacity(n);
    let mut reference = Vec::with_capacity(n);
    for (&f, &r) in sig.frequencies.iter().zip(&sig.rcs) {
        let phase = |delay_ns: f64| -2.0 * PI * f * delay_ns * 1e-9;
        let s_iso = Complex64::from_polar(profile.iso_magnitude, phase(profile.iso_delay_ns));
        let contrast = Complex64::from_polar(profile.ref_contrast, phase(profile.ref_delay_ns));
        let sigma_ref =
            rcs::sigma_ref(&cfg.plate, f).map_err(|e| SiggenError::InvalidConfig(e.to_string()))?;
        let ratio = Complex64::from_polar((r / sigma_ref).sqrt(), phase(profile.tag_delay_ns));
        iso.push(s_iso);
        reference.push(s_iso + contrast);
        tag.push(s_iso + contrast * ratio);
    }
    let id = format!(
        "tag{}_c{}_{}_{}_r{}",
        label.tag_id, label.capacitance_pf, label.position, label.case, label.reading
    );
    Ok((
        FrequencySweep::on_grid(&cfg.grid, tag, format!("{id} tag")),
        FrequencySweep::on_grid(&cfg.grid, iso, format!("{id} isolation")),
        FrequencySweep::on_grid(&cfg.grid, reference, format!("{id} reference")),
    ))
}

/// Every label in canonical order: tag, capacitance, position, case,
/// reading.
pub fn all_labels(readings_per_group: usize) -> Vec<TagLabel> {
    let mut out = Vec::with_capacity(8 * 3 * 4 * 5 * readings_per_group);
    for tag_id in 0..8u8 {
        for &capacitance_pf in &CAPACITANCES_PF {
            for position in Position::ALL {
                for case in DeformationCase::ALL {
                    for reading in 0..readings_per_group as u16 {
                        out.push(TagLabel {
                            tag_id,
                            capacitance_pf,
                            position,
                            case,
                            reading,
                        });
                    }
                }
            }
        }
    }
    out
}

pub fn label_seed(cfg: &GeneratorConfig, label: &TagLabel) -> u64 {
    seed::derive(cfg.seed, &[seed::domain::LABEL, label.key()])
}

/// The full labelled dataset, one signature per label.
pub fn build_dataset(cfg: &GeneratorConfig) -> Result<Vec<LabeledSignature>, SiggenError> {
    cfg.validate()?;
    all_labels(cfg.readings_per_group)
        .into_iter()
        .map(|label| {
            let signature = synth_rcs(&label, cfg, label_seed(cfg, &label))?;
            Ok(LabeledSignature { label, signature })
        })
        .collect()
}
