//! Evaluation reports and prediction tables in CSV form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{CaseCell, CaseTable};
use super::{PipelineError, Task};
use crate::siggen::{DeformationCase, Position, TagLabel};

pub const REPORT_HEADER: &str = "model,task,metric,position,case,value";
pub const PREDICTION_HEADER: &str =
    "tag_id,capacitance_pf,position,case,reading,actual,predicted,decoded,error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub task: Task,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub test_rmse: f64,
    /// Test RMSE in percent of the task's target range.
    pub test_nrmse_pct: f64,
    pub test_decode_accuracy: f64,
    /// Validation RMSE exceeded the configured multiple of training RMSE.
    pub overfit_warning: bool,
    pub cases: CaseTable,
}

const SCALARS: [&str; 9] = [
    "n_train",
    "n_val",
    "n_test",
    "train_rmse",
    "val_rmse",
    "test_rmse",
    "test_nrmse_pct",
    "test_decode_accuracy",
    "overfit_warning",
];

impl EvalReport {
    fn scalars(&self) -> [f64; 9] {
        [
            self.n_train as f64,
            self.n_val as f64,
            self.n_test as f64,
            self.train_rmse,
            self.val_rmse,
            self.test_rmse,
            self.test_nrmse_pct,
            self.test_decode_accuracy,
            if self.overfit_warning { 1.0 } else { 0.0 },
        ]
    }

    /// Long-format rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let prefix = format!("{},{}", self.model, self.task);
        for (name, v) in SCALARS.iter().zip(self.scalars()) {
            out.push_str(&format!("{prefix},{name},,,{v}\n"));
        }
        for c in &self.cases.cells {
            let loc = format!("{},{}", c.position, c.case);
            out.push_str(&format!("{prefix},case_n,{loc},{}\n", c.n));
            out.push_str(&format!("{prefix},case_rmse,{loc},{}\n", c.rmse));
            out.push_str(&format!("{prefix},case_std,{loc},{}\n", c.std_abs_error));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}", self.csv_rows())
    }

    /// Parses one or more reports; order follows first appearance.
    pub fn parse_csv(text: &str) -> Result<Vec<EvalReport>, PipelineError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != REPORT_HEADER {
            return Err(PipelineError::Format(format!(
                "report header must be `{REPORT_HEADER}`, found `{}`",
                header.join(",")
            )));
        }
        let mut order: Vec<(String, Task)> = Vec::new();
        let mut values: BTreeMap<(String, String), BTreeMap<(String, String, String), f64>> =
            BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != 6 {
                return Err(PipelineError::Format(format!(
                    "line {line}: expected 6 fields"
                )));
            }
            let task: Task = rec[1].parse()?;
            let value: f64 = rec[5].parse().map_err(|_| {
                PipelineError::Format(format!("line {line}: bad value {:?}", &rec[5]))
            })?;
            let key = (rec[0].to_string(), task.to_string());
            if !values.contains_key(&key) {
                order.push((rec[0].to_string(), task));
            }
            values.entry(key).or_default().insert(
                (rec[2].to_string(), rec[3].to_string(), rec[4].to_string()),
                value,
            );
        }
        if order.is_empty() {
            return Err(PipelineError::Format("report has no rows".into()));
        }
        order
            .into_iter()
            .map(|(model, task)| {
                let v = &values[&(model.clone(), task.to_string())];
                let get = |metric: &str, pos: &str, case: &str| {
                    v.get(&(metric.to_string(), pos.to_string(), case.to_string()))
                        .copied()
                        .ok_or_else(|| {
                            PipelineError::Format(format!(
                                "report for {model}/{task} lacks {metric} {pos} {case}"
                            ))
                        })
                };
                let s: Vec<f64> = SCALARS
                    .iter()
                    .map(|m| get(m, "", ""))
                    .collect::<Result<_, _>>()?;
                let mut cells = Vec::new();
                for position in Position::ALL {
                    for case in DeformationCase::ALL {
                        let (p, c) = (position.to_string(), case.to_string());
                        cells.push(CaseCell {
                            position,
                            case,
                            n: get("case_n", &p, &c)? as usize,
                            rmse: get("case_rmse", &p, &c)?,
                            std_abs_error: get("case_std", &p, &c)?,
                        });
                    }
                }
                Ok(EvalReport {
                    model: model.clone(),
                    task,
                    n_train: s[0] as usize,
                    n_val: s[1] as usize,
                    n_test: s[2] as usize,
                    train_rmse: s[3],
                    val_rmse: s[4],
                    test_rmse: s[5],
                    test_nrmse_pct: s[6],
                    test_decode_accuracy: s[7],
                    overfit_warning: s[8] != 0.0,
                    cases: CaseTable { cells },
                })
            })
            .collect()
    }
}

/// Held-out predictions with decoded values, one row per signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    pub task: Task,
    pub labels: Vec<Option<TagLabel>>,
    pub predicted: Vec<f64>,
}

impl PredictionTable {
    pub fn to_csv(&self) -> Result<String, PipelineError> {
        let mut out = format!("{PREDICTION_HEADER}\n");
        for (label, &p) in self.labels.iter().zip(&self.predicted) {
            let decoded = self.task.decode(p)?;
            match label {
                Some(l) => {
                    let actual = self.task.target(l);
                    out.push_str(&format!(
                        "{},{},{},{},{},{actual},{p},{decoded},{}\n",
                        l.tag_id,
                        l.capacitance_pf,
                        l.position,
                        l.case,
                        l.reading,
                        (p - actual).abs()
                    ));
                }
                None => out.push_str(&format!(",,,,,,{p},{decoded},\n")),
            }
        }
        Ok(out)
    }
}
