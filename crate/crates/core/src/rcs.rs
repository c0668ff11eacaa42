//! Monostatic RCS calibration from tag, isolation and reference-plate S11
//! sweeps.
//!
//! ```text
//! RCS(f) = |(S11_tag - S11_iso) / (S11_ref - S11_iso)|^2 * sigma_ref(f)
//! sigma_ref(f) = 4 pi A^2 / lambda^2,   lambda = c / f
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::touchstone::{CanonicalGrid, FrequencySweep};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Minimum usable |S11_ref - S11_iso|.
pub const DENOMINATOR_FLOOR: f64 = 1.0e-9;

/// Floor applied before converting to dBsm, in m².
pub const DBSM_FLOOR: f64 = 1.0e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CalError {
    #[error("frequency must be positive, got {0} Hz")]
    NonPositiveFrequency(f64),
    #[error("plate side length must be positive, got {0} m")]
    InvalidPlate(f64),
    #[error("{which} sweep is not on the canonical grid")]
    GridMismatch { which: &'static str },
    #[error("|S11_ref - S11_iso| = {magnitude:e} below floor at index {index} ({freq_hz} Hz)")]
    DegenerateReference {
        index: usize,
        freq_hz: f64,
        magnitude: f64,
    },
}

/// Square metal plate with analytic RCS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePlate {
    /// Metres.
    pub side_length: f64,
}

impl Default for ReferencePlate {
    /// 25 mm copper square.
    fn default() -> Self {
        Self { side_length: 0.025 }
    }
}

impl ReferencePlate {
    pub fn new(side_length: f64) -> Result<Self, CalError> {
        if side_length > 0.0 && side_length.is_finite() {
            Ok(Self { side_length })
        } else {
            Err(CalError::InvalidPlate(side_length))
        }
    }

    pub fn area(&self) -> f64 {
        self.side_length * self.side_length
    }
}

/// Calibrated RCS magnitudes in m² on the canonical grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcsSignature {
    pub frequencies: Vec<f64>,
    pub rcs: Vec<f64>,
    pub filtered: bool,
}

impl RcsSignature {
    pub fn on_grid(grid: &CanonicalGrid, rcs: Vec<f64>) -> Self {
        assert_eq!(rcs.len(), grid.n_points, "RCS length must match the grid");
        Self {
            frequencies: grid.frequencies(),
            rcs,
            filtered: false,
        }
    }

    pub fn len(&self) -> usize {
        self.rcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rcs.is_empty()
    }
}

/// Physical-optics RCS of the flat plate at broadside.
pub fn sigma_ref(plate: &ReferencePlate, frequency: f64) -> Result<f64, CalError> {
    if !(frequency > 0.0) {
        return Err(CalError::NonPositiveFrequency(frequency));
    }
    if !(plate.side_length > 0.0) {
        return Err(CalError::InvalidPlate(plate.side_length));
    }
    let lambda = SPEED_OF_LIGHT / frequency;
    let area = plate.area();
    Ok(4.0 * std::f64::consts::PI * area * area / (lambda * lambda))
}

/// Applies the three-measurement calibration pointwise.
pub fn calibrate(
    tag: &FrequencySweep,
    iso: &FrequencySweep,
    reference: &FrequencySweep,
    plate: &ReferencePlate,
) -> Result<RcsSignature, CalError> {
    calibrate_on(&CanonicalGrid::default(), tag, iso, reference, plate)
}

/// Same as [`calibrate`] for an explicit grid.
pub fn calibrate_on(
    grid: &CanonicalGrid,
    tag: &FrequencySweep,
    iso: &FrequencySweep,
    reference: &FrequencySweep,
    plate: &ReferencePlate,
) -> Result<RcsSignature, CalError> {
    for (which, sweep) in [("tag", tag), ("isolation", iso), ("reference", reference)] {
        if sweep.s11.len() != sweep.frequencies.len() || !grid.matches(&sweep.frequencies) {
            return Err(CalError::GridMismatch { which });
        }
    }
    let frequencies = grid.frequencies();
    let mut rcs = Vec::with_capacity(frequencies.len());
    for (i, &f) in frequencies.iter().enumerate() {
        let denom = reference.s11[i] - iso.s11[i];
        let magnitude = denom.norm();
        if !(magnitude >= DENOMINATOR_FLOOR) {
            return Err(CalError::DegenerateReference {
                index: i,
                freq_hz: f,
                magnitude,
            });
        }
        let ratio = (tag.s11[i] - iso.s11[i]) / denom;
        rcs.push(ratio.norm_sqr() * sigma_ref(plate, f)?);
    }
    Ok(RcsSignature {
        frequencies,
        rcs,
        filtered: false,
    })
}

/// Converts to dB relative to 1 m², flooring at [`DBSM_FLOOR`].
pub fn to_dbsm(sig: &RcsSignature) -> Vec<f64> {
    sig.rcs
        .iter()
        .map(|&r| 10.0 * r.max(DBSM_FLOOR).log10())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn sweep_from(f: impl Fn(usize) -> Complex64) -> FrequencySweep {
        let grid = CanonicalGrid::default();
        FrequencySweep::on_grid(&grid, (0..grid.n_points).map(f).collect(), "")
    }

    fn iso_profile(i: usize) -> Complex64 {
        Complex64::from_polar(0.05, i as f64 * 0.013)
    }

    fn ref_profile(i: usize) -> Complex64 {
        iso_profile(i) + Complex64::from_polar(0.3, -(i as f64) * 0.021)
    }

    #[test]
    fn sigma_ref_reference_value() {
        let plate = ReferencePlate::new(0.025).unwrap();
        let f = SPEED_OF_LIGHT / 0.05;
        let s = sigma_ref(&plate, f).unwrap();
        let expected = 4.0 * std::f64::consts::PI * 6.25e-4f64.powi(2) / 0.0025;
        assert!((s - expected).abs() / expected < 1e-12);
        assert!((s - 1.9635e-3).abs() / 1.9635e-3 < 1e-4);
    }

    #[test]
    fn sigma_ref_scaling() {
        let a = ReferencePlate::new(0.02).unwrap();
        let b = ReferencePlate::new(0.02 * 2f64.sqrt()).unwrap();
        let f = 5.0e9;
        let ratio_area = sigma_ref(&b, f).unwrap() / sigma_ref(&a, f).unwrap();
        assert!((ratio_area - 4.0).abs() < 1e-12);
        let ratio_freq = sigma_ref(&a, 2.0 * f).unwrap() / sigma_ref(&a, f).unwrap();
        assert!((ratio_freq - 4.0).abs() < 1e-12);
        assert_eq!(sigma_ref(&a, 0.0), Err(CalError::NonPositiveFrequency(0.0)));
        assert!(ReferencePlate::new(-1.0).is_err());
    }

    #[test]
    fn calibrate_ratio_cases() {
        let plate = ReferencePlate::default();
        let iso = sweep_from(iso_profile);
        let reference = sweep_from(ref_profile);

        let same_as_ref = calibrate(&reference.clone(), &iso, &reference, &plate).unwrap();
        for (f, r) in same_as_ref.frequencies.iter().zip(&same_as_ref.rcs) {
            let s = sigma_ref(&plate, *f).unwrap();
            assert!((r - s).abs() <= 1e-12 * s);
        }

        let same_as_iso = calibrate(&iso.clone(), &iso, &reference, &plate).unwrap();
        assert!(same_as_iso.rcs.iter().all(|&r| r == 0.0));

        let half = sweep_from(|i| iso_profile(i) + (ref_profile(i) - iso_profile(i)) * 0.5);
        let quarter = calibrate(&half, &iso, &reference, &plate).unwrap();
        for (f, r) in quarter.frequencies.iter().zip(&quarter.rcs) {
            let s = sigma_ref(&plate, *f).unwrap();
            assert!((r - 0.25 * s).abs() <= 1e-12 * s);
        }
        assert!(!quarter.filtered);
    }

    #[test]
    fn calibrate_errors() {
        let plate = ReferencePlate::default();
        let iso = sweep_from(iso_profile);
        let err = calibrate(&iso, &iso, &iso, &plate).unwrap_err();
        assert!(matches!(
            err,
            CalError::DegenerateReference { index: 0, .. }
        ));

        let short = FrequencySweep::new(vec![3.1e9], vec![Complex64::new(0.0, 0.0)], "").unwrap();
        assert_eq!(
            calibrate(&short, &iso, &iso, &plate).unwrap_err(),
            CalError::GridMismatch { which: "tag" }
        );
    }

    #[test]
    fn dbsm_conversion() {
        let sig = RcsSignature {
            frequencies: vec![1.0, 2.0, 3.0],
            rcs: vec![1.0, 1e-3, 0.0],
            filtered: false,
        };
        let db = to_dbsm(&sig);
        assert!(db[0].abs() < 1e-12);
        assert!((db[1] + 30.0).abs() < 1e-12);
        assert!((db[2] + 120.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn calibration_is_scale_invariant(
            mag in 0.1f64..10.0,
            phase in -3.1f64..3.1,
            seed in 0u64..1000,
        ) {
            let plate = ReferencePlate::default();
            let k = Complex64::from_polar(mag, phase);
            let tag_fn = move |i: usize| {
                Complex64::from_polar(0.1 + 0.05 * ((i as u64 * 31 + seed) % 17) as f64 / 17.0, i as f64 * 0.07)
            };
            let base = calibrate(&sweep_from(tag_fn), &sweep_from(iso_profile), &sweep_from(ref_profile), &plate).unwrap();
            let scaled = calibrate(
                &sweep_from(move |i| tag_fn(i) * k),
                &sweep_from(move |i| iso_profile(i) * k),
                &sweep_from(move |i| ref_profile(i) * k),
                &plate,
            ).unwrap();
            for (a, b) in base.rcs.iter().zip(&scaled.rcs) {
                prop_assert!(*a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-30));
            }
        }
    }
}
