//! Stratified train/validation/test assignment.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::seed::{self, domain};
use crate::siggen::{TagLabel, FULL_READINGS};

/// Smallest stratum that can receive a row in every split.
pub const MIN_ROWS_PER_KEY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub tags: Vec<SplitTag>,
}

impl SplitAssignment {
    /// Row indices with `tag`, ascending.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    /// (train, val, test) row counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let count = |tag| self.tags.iter().filter(|&&t| t == tag).count();
        (
            count(SplitTag::Train),
            count(SplitTag::Val),
            count(SplitTag::Test),
        )
    }
}

/// Stratification key: (tag, capacitance, position, case) without the
/// reading index.
pub fn stratum(label: &TagLabel) -> u64 {
    label.key() / FULL_READINGS as u64
}

/// Per-stratum (test, val) sizes; the rest goes to training.
pub fn stratum_sizes(n: usize) -> (usize, usize) {
    let fifth = (n as f64 * 0.2).round() as usize;
    (fifth, fifth)
}

/// 20% test, then 75:25 train:val of the remainder, inside every stratum.
///
/// Each stratum is shuffled with its own derived seed, so the assignment of
/// one stratum does not depend on the others.
pub fn stratified_split(labels: &[TagLabel], seed: u64) -> Result<SplitAssignment, PipelineError> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        label
            .validate()
            .map_err(|e| PipelineError::Data(format!("row {i}: {e}")))?;
        groups.entry(stratum(label)).or_default().push(i);
    }
    let mut tags = vec![SplitTag::Train; labels.len()];
    for (key, mut rows) in groups {
        if rows.len() < MIN_ROWS_PER_KEY {
            let l = labels[rows[0]];
            return Err(PipelineError::Data(format!(
                "stratum tag {} / {} pF / {} / {} has {} rows, need at least {MIN_ROWS_PER_KEY}",
                l.tag_id,
                l.capacitance_pf,
                l.position,
                l.case,
                rows.len()
            )));
        }
        rows.shuffle(&mut seed::rng_at(seed, &[domain::SPLIT, key]));
        let (n_test, n_val) = stratum_sizes(rows.len());
        for &i in &rows[..n_test] {
            tags[i] = SplitTag::Test;
        }
        for &i in &rows[n_test..n_test + n_val] {
            tags[i] = SplitTag::Val;
        }
    }
    Ok(SplitAssignment { tags })
}
