//! Error metrics, nearest-value decoding and per-case breakdowns.

use serde::{Deserialize, Serialize};

use super::{PipelineError, Task};
use crate::siggen::{DeformationCase, Position, TagLabel, CAPACITANCES_PF};

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64, PipelineError> {
    if predictions.is_empty() {
        return Err(PipelineError::Data("RMSE of an empty set".into()));
    }
    if predictions.len() != targets.len() {
        return Err(PipelineError::Data(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// RMSE as a percentage of the target range.
pub fn normalized_rmse(rmse: f64, target_range: f64) -> f64 {
    rmse / target_range * 100.0
}

/// Relative reduction from `before` to `after`, in percent.
pub fn improvement_percent(before: f64, after: f64) -> f64 {
    (before - after) / before * 100.0
}

fn finite(prediction: f64) -> Result<f64, PipelineError> {
    if prediction.is_finite() {
        Ok(prediction)
    } else {
        Err(PipelineError::Numerical(format!(
            "cannot decode prediction {prediction}"
        )))
    }
}

/// Nearest integer ID, halves rounded up, clamped to 0..=7.
pub fn decode_id(prediction: f64) -> Result<u8, PipelineError> {
    let p = finite(prediction)?;
    Ok((p + 0.5).floor().clamp(0.0, 7.0) as u8)
}

/// Nearest capacitance in pF; a prediction exactly between two values
/// decodes to the smaller one.
pub fn decode_sensing(prediction: f64) -> Result<f64, PipelineError> {
    let p = finite(prediction)?;
    for w in CAPACITANCES_PF.windows(2) {
        if p <= (w[0] + w[1]) / 2.0 {
            return Ok(w[0]);
        }
    }
    Ok(CAPACITANCES_PF[CAPACITANCES_PF.len() - 1])
}

/// Fraction of predictions whose decoded value equals the target.
pub fn decode_accuracy(
    task: Task,
    predictions: &[f64],
    targets: &[f64],
) -> Result<f64, PipelineError> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(PipelineError::Data(
            "decode accuracy needs matching non-empty inputs".into(),
        ));
    }
    let mut hits = 0usize;
    for (&p, &t) in predictions.iter().zip(targets) {
        if task.decode(p)? == t {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseCell {
    pub position: Position,
    pub case: DeformationCase,
    pub n: usize,
    pub rmse: f64,
    /// Population standard deviation of the absolute errors.
    pub std_abs_error: f64,
}

/// Per (position, case) errors, ordered P1..P4 then Ci..Cv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTable {
    pub cells: Vec<CaseCell>,
}

impl CaseTable {
    pub fn cell(&self, position: Position, case: DeformationCase) -> &CaseCell {
        &self.cells[position.index() * DeformationCase::ALL.len() + case.index()]
    }

    /// Cell with the largest RMSE; the first one on ties.
    pub fn worst(&self) -> &CaseCell {
        self.cells.iter().fold(
            &self.cells[0],
            |best, c| if c.rmse > best.rmse { c } else { best },
        )
    }

    /// 4×5 matrix of `value`, one row per position.
    pub fn matrix_csv(&self, value: impl Fn(&CaseCell) -> f64) -> String {
        let mut out = String::from("position");
        for case in DeformationCase::ALL {
            out.push_str(&format!(",{case}"));
        }
        out.push('\n');
        for position in Position::ALL {
            out.push_str(&position.to_string());
            for case in DeformationCase::ALL {
                out.push_str(&format!(",{}", value(self.cell(position, case))));
            }
            out.push('\n');
        }
        out
    }
}

pub fn per_case_report(
    predictions: &[f64],
    targets: &[f64],
    labels: &[TagLabel],
) -> Result<CaseTable, PipelineError> {
    if predictions.len() != targets.len() || predictions.len() != labels.len() {
        return Err(PipelineError::Data(format!(
            "{} predictions, {} targets and {} labels",
            predictions.len(),
            targets.len(),
            labels.len()
        )));
    }
    let mut errors: Vec<Vec<f64>> =
        vec![Vec::new(); Position::ALL.len() * DeformationCase::ALL.len()];
    for ((&p, &t), l) in predictions.iter().zip(targets).zip(labels) {
        errors[l.position.index() * DeformationCase::ALL.len() + l.case.index()].push(p - t);
    }
    let mut cells = Vec::with_capacity(errors.len());
    for position in Position::ALL {
        for case in DeformationCase::ALL {
            let e = &errors[position.index() * DeformationCase::ALL.len() + case.index()];
            if e.is_empty() {
                return Err(PipelineError::Data(format!(
                    "no rows for {position}/{case}"
                )));
            }
            let n = e.len() as f64;
            let rmse = (e.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            let mean_abs = e.iter().map(|v| v.abs()).sum::<f64>() / n;
            let var = e.iter().map(|v| (v.abs() - mean_abs).powi(2)).sum::<f64>() / n;
            cells.push(CaseCell {
                position,
                case,
                n: e.len(),
                rmse,
                std_abs_error: var.sqrt(),
            });
        }
    }
    Ok(CaseTable { cells })
}
