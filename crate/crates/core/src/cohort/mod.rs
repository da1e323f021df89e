//! Exam tables, cohort refinement, patient-disjoint splits and INTRA/INTER
//! pair construction.

mod io;
mod pairs;
mod refine;
mod split;

pub use io::{load_exams, read_exams, write_exams, ColumnSchema, LoadedExams, RowRejection};
pub use pairs::{build_inter_pairs, build_intra_pairs, Pair, PairLabel, PairSet, DAYS_PER_MONTH};
pub use refine::{
    apply_range_filter, cap_exams_per_patient, drop_sparse_patients, filter_categorical,
    refine_multi_exam, ExamCountDistribution,
};
pub use split::{split_by_patient, Split, SplitFractions, SplitManifest};

use crate::features::N_FEATURES;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CohortError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("exam table is empty")]
    EmptyTable,
    #[error("required column `{0}` missing from header")]
    MissingColumn(String),
    #[error("duplicate exam_id `{0}`")]
    DuplicateExamId(String),
    #[error("malformed delimited text: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("split `{0}` ended up empty")]
    EmptySplit(Split),
    #[error("need at least {needed} patients, found {found}")]
    TooFewPatients { needed: usize, found: usize },
    #[error("exam `{0}` not present in table")]
    UnknownExam(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// One ECG exam with its 13 fiducial features in declared order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub patient_id: String,
    pub exam_id: String,
    pub acquired_at: NaiveDate,
    pub gender: Option<String>,
    pub age: Option<f64>,
    pub features: [f64; N_FEATURES],
    /// Extra categorical columns (acquisition device, site, ...).
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl ExamRecord {
    /// Chronological key with exam_id as the tie-break.
    pub fn chrono_key(&self) -> (NaiveDate, &str) {
        (self.acquired_at, self.exam_id.as_str())
    }
}

/// A collection of exams with unique exam ids. Operations preserve the
/// relative order of the records they retain.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExamTable {
    records: Vec<ExamRecord>,
}

impl ExamTable {
    pub fn new(records: Vec<ExamRecord>) -> Result<Self, CohortError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.exam_id.as_str()) {
                return Err(CohortError::DuplicateExamId(r.exam_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub(crate) fn from_unique(records: Vec<ExamRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[ExamRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<ExamRecord> {
        self.records
    }

    /// Record indices per patient, in table order.
    pub fn by_patient(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.patient_id.as_str()).or_default().push(i);
        }
        map
    }

    /// Record indices per patient sorted chronologically (exam_id breaks ties).
    pub fn by_patient_chronological(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map = self.by_patient();
        for idx in map.values_mut() {
            idx.sort_by(|&a, &b| self.records[a].chrono_key().cmp(&self.records[b].chrono_key()));
        }
        map
    }

    pub fn patient_count(&self) -> usize {
        self.records.iter().map(|r| r.patient_id.as_str()).collect::<HashSet<_>>().len()
    }

    pub fn find_exam(&self, exam_id: &str) -> Option<&ExamRecord> {
        self.records.iter().find(|r| r.exam_id == exam_id)
    }

    /// Keep records whose flag is set, preserving order.
    pub(crate) fn retain_mask(&self, keep: &[bool]) -> ExamTable {
        debug_assert_eq!(keep.len(), self.records.len());
        ExamTable::from_unique(
            self.records
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect(),
        )
    }

    pub fn filter<F: FnMut(&ExamRecord) -> bool>(&self, mut pred: F) -> ExamTable {
        ExamTable::from_unique(self.records.iter().filter(|r| pred(r)).cloned().collect())
    }
}
