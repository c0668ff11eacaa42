//! Labelled RCS datasets and their CSV form.
//!
//! Header: `tag_id,capacitance_pf,position,case,reading,f0..f699`, RCS in m².

use std::io::{Read, Write};

use super::PipelineError;
use crate::rcs::RcsSignature;
use crate::siggen::{LabeledSignature, TagLabel};
use crate::touchstone::CanonicalGrid;

const LABEL_COLUMNS: [&str; 5] = ["tag_id", "capacitance_pf", "position", "case", "reading"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: CanonicalGrid,
    pub labels: Vec<TagLabel>,
    /// Raw (unfiltered) RCS per row, one value per grid point.
    pub rows: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn from_labeled(items: Vec<LabeledSignature>) -> Self {
        let grid = CanonicalGrid::default();
        let (labels, rows) = items
            .into_iter()
            .map(|s| (s.label, s.signature.rcs))
            .unzip();
        Self { grid, labels, rows }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn signature(&self, i: usize) -> RcsSignature {
        RcsSignature::on_grid(&self.grid, self.rows[i].clone())
    }

    pub fn header(&self) -> Vec<String> {
        LABEL_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain((0..self.grid.n_points).map(|i| format!("f{i}")))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PipelineError> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        w.write_record(self.header())?;
        let mut record = Vec::with_capacity(5 + self.grid.n_points);
        for (label, row) in self.labels.iter().zip(&self.rows) {
            record.clear();
            record.push(label.tag_id.to_string());
            record.push(label.capacitance_pf.to_string());
            record.push(label.position.to_string());
            record.push(label.case.to_string());
            record.push(label.reading.to_string());
            record.extend(row.iter().map(|v| format!("{v:e}")));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| PipelineError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, PipelineError> {
        let grid = CanonicalGrid::default();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let expected: Vec<String> = LABEL_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain((0..grid.n_points).map(|i| format!("f{i}")))
            .collect();
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != expected {
            return Err(PipelineError::Format(format!(
                "dataset header mismatch: expected {} columns `tag_id,capacitance_pf,position,case,reading,f0..f{}`, found {}",
                expected.len(),
                grid.n_points - 1,
                header.len()
            )));
        }
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| rec.get(k).unwrap_or("").trim();
            let bad = |what: &str, v: &str| {
                PipelineError::Format(format!("line {line}: invalid {what} {v:?}"))
            };
            let label = TagLabel {
                tag_id: field(0).parse().map_err(|_| bad("tag_id", field(0)))?,
                capacitance_pf: field(1)
                    .parse()
                    .map_err(|_| bad("capacitance_pf", field(1)))?,
                position: field(2).parse().map_err(|_| bad("position", field(2)))?,
                case: field(3).parse().map_err(|_| bad("case", field(3)))?,
                reading: field(4).parse().map_err(|_| bad("reading", field(4)))?,
            };
            label
                .validate()
                .map_err(|e| PipelineError::Format(format!("line {line}: {e}")))?;
            let row = (5..5 + grid.n_points)
                .map(|k| {
                    let v: f64 = field(k).parse().map_err(|_| bad("RCS value", field(k)))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(bad("RCS value", field(k)))
                    }
                })
                .collect::<Result<Vec<f64>, _>>()?;
            labels.push(label);
            rows.push(row);
        }
        if labels.is_empty() {
            return Err(PipelineError::Format("dataset has no rows".into()));
        }
        Ok(Self { grid, labels, rows })
    }
}
