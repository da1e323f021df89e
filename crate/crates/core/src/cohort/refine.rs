use super::{CohortError, ExamTable};
use crate::features::RangeTable;
use crate::rng::{self, streams};
use rand::seq::index;
use serde::Serialize;
use std::collections::BTreeMap;

/// Keep exactly the records whose every feature lies inside its inclusive
/// range.
pub fn apply_range_filter(table: &ExamTable, ranges: &RangeTable) -> ExamTable {
    table.filter(|r| ranges.contains_all(&r.features))
}

/// Per patient, keep the greedy earliest-first chronological subsequence
/// whose consecutive exams are strictly more than `min_gap_days` apart, then
/// drop patients left with fewer than `min_exams`.
pub fn refine_multi_exam(table: &ExamTable, min_exams: usize, min_gap_days: i64) -> ExamTable {
    let recs = table.records();
    let mut keep = vec![false; recs.len()];
    for idx in table.by_patient_chronological().values() {
        let mut kept: Vec<usize> = Vec::with_capacity(idx.len());
        for &i in idx {
            match kept.last() {
                Some(&last) => {
                    let gap = (recs[i].acquired_at - recs[last].acquired_at).num_days();
                    if gap > min_gap_days {
                        kept.push(i);
                    }
                }
                None => kept.push(i),
            }
        }
        if kept.len() >= min_exams {
            for i in kept {
                keep[i] = true;
            }
        }
    }
    table.retain_mask(&keep)
}

/// Reduce patients with more than `cap` exams to `cap` exams by seeded
/// uniform sampling without replacement. Patients at or under the cap are
/// untouched. The choice depends only on the set of exams, not row order.
pub fn cap_exams_per_patient(table: &ExamTable, cap: usize, seed: u64) -> Result<ExamTable, CohortError> {
    if cap == 0 {
        return Err(CohortError::InvalidParameter("cap must be >= 1".into()));
    }
    let mut rng = rng::stream(seed, streams::CAP);
    let mut keep = vec![true; table.len()];
    for idx in table.by_patient_chronological().values() {
        if idx.len() <= cap {
            continue;
        }
        for &i in idx {
            keep[i] = false;
        }
        for pick in index::sample(&mut rng, idx.len(), cap) {
            keep[idx[pick]] = true;
        }
    }
    Ok(table.retain_mask(&keep))
}

/// Generic categorical-column filter: keep records whose attribute `column`
/// (or `Gender`) equals one of `allowed`.
pub fn filter_categorical(table: &ExamTable, column: &str, allowed: &[String]) -> ExamTable {
    table.filter(|r| {
        let value = if column == "Gender" { r.gender.as_ref() } else { r.attributes.get(column) };
        value.is_some_and(|v| allowed.iter().any(|a| a == v))
    })
}

/// Drop every patient with fewer than `min_exams` records.
pub fn drop_sparse_patients(table: &ExamTable, min_exams: usize) -> ExamTable {
    let mut keep = vec![false; table.len()];
    for idx in table.by_patient().values() {
        if idx.len() >= min_exams {
            for &i in idx {
                keep[i] = true;
            }
        }
    }
    table.retain_mask(&keep)
}

/// Patient frequency by number of exams, with an overflow bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExamCountDistribution {
    pub exams: usize,
    pub patients: usize,
    /// exams-per-patient -> patient count; keys at or above `overflow_at`
    /// are folded into `overflow_at`.
    pub by_count: BTreeMap<usize, usize>,
    pub overflow_at: usize,
}

impl ExamCountDistribution {
    pub fn of(table: &ExamTable, overflow_at: usize) -> Self {
        let mut by_count = BTreeMap::new();
        let groups = table.by_patient();
        for idx in groups.values() {
            *by_count.entry(idx.len().min(overflow_at)).or_insert(0) += 1;
        }
        Self { exams: table.len(), patients: groups.len(), by_count, overflow_at }
    }
}
