use super::{CohortError, ExamTable};
use crate::rng::{self, streams};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    fn validate(&self) -> Result<(), CohortError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(CohortError::InvalidParameter(format!(
                "split fractions {parts:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Patient-disjoint assignment of patients to train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub fractions: SplitFractions,
    pub min_train_exams: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, Split>,
}

/// Seeded patient-level split.
///
/// Patient ids are sorted, shuffled with the seed and cut with cumulative
/// rounding: `n_train = round(n * f_train)`, `n_train + n_val =
/// round(n * (f_train + f_val))`, test takes the rest (so 10 patients at
/// 0.5/0.25/0.25 give 5/3/2). Train patients with fewer than
/// `min_train_exams` exams then move to val and test alternately, starting
/// with val.
pub fn split_by_patient(
    table: &ExamTable,
    fractions: SplitFractions,
    min_train_exams: usize,
    seed: u64,
) -> Result<SplitManifest, CohortError> {
    fractions.validate()?;
    let groups = table.by_patient();
    let mut patients: Vec<(&str, usize)> = groups.iter().map(|(p, idx)| (*p, idx.len())).collect();
    let n = patients.len();
    patients.shuffle(&mut rng::stream(seed, streams::SPLIT));

    let n_train = ((n as f64) * fractions.train).round() as usize;
    let n_train_val = (((n as f64) * (fractions.train + fractions.val)).round() as usize).max(n_train).min(n);

    let mut assignments = BTreeMap::new();
    let mut alternate = Split::Val;
    for (i, (pid, count)) in patients.into_iter().enumerate() {
        let split = if i < n_train {
            if count >= min_train_exams {
                Split::Train
            } else {
                let s = alternate;
                alternate = if s == Split::Val { Split::Test } else { Split::Val };
                s
            }
        } else if i < n_train_val {
            Split::Val
        } else {
            Split::Test
        };
        assignments.insert(pid.to_string(), split);
    }
    for s in Split::ALL {
        if !assignments.values().any(|&a| a == s) {
            return Err(CohortError::EmptySplit(s));
        }
    }
    Ok(SplitManifest { fractions, min_train_exams, seed, assignments })
}

impl SplitManifest {
    pub fn split_of(&self, patient_id: &str) -> Option<Split> {
        self.assignments.get(patient_id).copied()
    }

    pub fn patients(&self, split: Split) -> Vec<&str> {
        self.assignments.iter().filter(|(_, &s)| s == split).map(|(p, _)| p.as_str()).collect()
    }

    /// Records of `table` whose patient is assigned to `split`.
    pub fn subset(&self, table: &ExamTable, split: Split) -> ExamTable {
        table.filter(|r| self.split_of(&r.patient_id) == Some(split))
    }

    /// Line-oriented text: a `#` header block with parameters, then
    /// `patient_id,split` records sorted by patient id.
    pub fn write_to<W: Write>(&self, mut out: W, extra_header: &[String]) -> std::io::Result<()> {
        writeln!(out, "# ecgid split-manifest v1")?;
        writeln!(out, "# train_fraction={}", self.fractions.train)?;
        writeln!(out, "# val_fraction={}", self.fractions.val)?;
        writeln!(out, "# test_fraction={}", self.fractions.test)?;
        writeln!(out, "# min_train_exams={}", self.min_train_exams)?;
        writeln!(out, "# seed={}", self.seed)?;
        for h in extra_header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "patient_id,split")?;
        for (p, s) in &self.assignments {
            writeln!(out, "{p},{s}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, CohortError> {
        let mut header = BTreeMap::new();
        let mut assignments = BTreeMap::new();
        let mut saw_columns = false;
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|source| CohortError::Io { path: Default::default(), source })?;
            let fmt_err = |message: String| CohortError::Format { line: n + 1, message };
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.trim().split_once('=') {
                    header.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if !saw_columns {
                if line.trim() != "patient_id,split" {
                    return Err(fmt_err(format!("expected column header, found `{line}`")));
                }
                saw_columns = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (p, s) = line.rsplit_once(',').ok_or_else(|| fmt_err("expected `patient_id,split`".into()))?;
            let split = s.trim().parse::<Split>().map_err(fmt_err)?;
            if assignments.insert(p.to_string(), split).is_some() {
                return Err(fmt_err(format!("patient `{p}` listed twice")));
            }
        }
        let get = |k: &str| -> Result<&String, CohortError> {
            header.get(k).ok_or_else(|| CohortError::Format { line: 0, message: format!("missing header `{k}`") })
        };
        let parse_f = |k: &str| -> Result<f64, CohortError> {
            get(k)?.parse().map_err(|_| CohortError::Format { line: 0, message: format!("bad `{k}`") })
        };
        Ok(SplitManifest {
            fractions: SplitFractions {
                train: parse_f("train_fraction")?,
                val: parse_f("val_fraction")?,
                test: parse_f("test_fraction")?,
            },
            min_train_exams: get("min_train_exams")?
                .parse()
                .map_err(|_| CohortError::Format { line: 0, message: "bad min_train_exams".into() })?,
            seed: get("seed")?.parse().map_err(|_| CohortError::Format { line: 0, message: "bad seed".into() })?,
            assignments,
        })
    }
}
