use super::{CohortError, ExamTable};
use crate::rng::{self, streams};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

/// Fixed month length used for every window check.
pub const DAYS_PER_MONTH: f64 = 30.4375;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Intra,
    Inter,
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairLabel::Intra => "intra",
            PairLabel::Inter => "inter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub exam_a: String,
    pub exam_b: String,
    pub patient_a: String,
    pub patient_b: String,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub seed: Option<u64>,
    pub window_months: (f64, f64),
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut out: W, extra_header: &[String]) -> std::io::Result<()> {
        writeln!(out, "# ecgid pair-set v1")?;
        writeln!(out, "# window_months={},{}", self.window_months.0, self.window_months.1)?;
        match self.seed {
            Some(s) => writeln!(out, "# seed={s}")?,
            None => writeln!(out, "# seed=none")?,
        }
        writeln!(out, "# pairs={}", self.pairs.len())?;
        for w in &self.warnings {
            writeln!(out, "# warning={w}")?;
        }
        for h in extra_header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "exam_a\texam_b\tpatient_a\tpatient_b\tlabel")?;
        for p in &self.pairs {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", p.exam_a, p.exam_b, p.patient_a, p.patient_b, p.label)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, CohortError> {
        let mut set = PairSet { pairs: Vec::new(), seed: None, window_months: (0.0, 0.0), warnings: Vec::new() };
        let mut saw_columns = false;
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|source| CohortError::Io { path: Default::default(), source })?;
            let err = |message: String| CohortError::Format { line: n + 1, message };
            if let Some(h) = line.strip_prefix('#') {
                match h.trim().split_once('=') {
                    Some(("window_months", v)) => {
                        let (a, b) = v.split_once(',').ok_or_else(|| err("bad window".into()))?;
                        set.window_months = (
                            a.parse().map_err(|_| err("bad window".into()))?,
                            b.parse().map_err(|_| err("bad window".into()))?,
                        );
                    }
                    Some(("seed", "none")) => set.seed = None,
                    Some(("seed", v)) => set.seed = Some(v.parse().map_err(|_| err("bad seed".into()))?),
                    Some(("warning", w)) => set.warnings.push(w.to_string()),
                    _ => {}
                }
                continue;
            }
            if !saw_columns {
                saw_columns = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", f.len())));
            }
            let label = match f[4] {
                "intra" => PairLabel::Intra,
                "inter" => PairLabel::Inter,
                other => return Err(err(format!("unknown label `{other}`"))),
            };
            set.pairs.push(Pair {
                exam_a: f[0].into(),
                exam_b: f[1].into(),
                patient_a: f[2].into(),
                patient_b: f[3].into(),
                label,
            });
        }
        Ok(set)
    }
}

/// One genuine pair per patient: the earliest (in chronological order of the
/// first, then second exam) pair whose distance in months lies inside the
/// closed window. Patients without a qualifying pair are skipped.
pub fn build_intra_pairs(table: &ExamTable, window_months: (f64, f64)) -> Result<PairSet, CohortError> {
    let (low, high) = window_months;
    if !(low >= 0.0 && low <= high) {
        return Err(CohortError::InvalidParameter(format!("window {window_months:?} must satisfy 0 <= low <= high")));
    }
    let recs = table.records();
    let mut pairs = Vec::new();
    for (pid, idx) in table.by_patient_chronological() {
        'search: for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                let months = (recs[j].acquired_at - recs[i].acquired_at).num_days() as f64 / DAYS_PER_MONTH;
                if months > high {
                    break;
                }
                if months >= low {
                    pairs.push(Pair {
                        exam_a: recs[i].exam_id.clone(),
                        exam_b: recs[j].exam_id.clone(),
                        patient_a: pid.to_string(),
                        patient_b: pid.to_string(),
                        label: PairLabel::Intra,
                    });
                    break 'search;
                }
            }
        }
    }
    let mut warnings = Vec::new();
    if pairs.is_empty() {
        let w = format!("no patient has an exam pair {low}-{high} months apart");
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(PairSet { pairs, seed: None, window_months, warnings })
}

/// As many impostor pairs as `intra` has pairs, each drawn uniformly from the
/// exams that appear in `intra`, rejecting same-patient draws.
pub fn build_inter_pairs(intra: &PairSet, table: &ExamTable, seed: u64) -> Result<PairSet, CohortError> {
    let patient_of: HashMap<&str, &str> =
        table.records().iter().map(|r| (r.exam_id.as_str(), r.patient_id.as_str())).collect();
    let mut pool: Vec<(&str, &str)> = Vec::with_capacity(2 * intra.len());
    for p in &intra.pairs {
        for e in [&p.exam_a, &p.exam_b] {
            let pid = patient_of.get(e.as_str()).ok_or_else(|| CohortError::UnknownExam(e.clone()))?;
            pool.push((e.as_str(), pid));
        }
    }
    let distinct: BTreeMap<&str, ()> = pool.iter().map(|&(_, p)| (p, ())).collect();
    if distinct.len() < 2 {
        return Err(CohortError::TooFewPatients { needed: 2, found: distinct.len() });
    }

    let mut rng = rng::stream(seed, streams::INTER_PAIRS);
    let mut pairs = Vec::with_capacity(intra.len());
    while pairs.len() < intra.len() {
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        if a.1 == b.1 {
            continue;
        }
        pairs.push(Pair {
            exam_a: a.0.to_string(),
            exam_b: b.0.to_string(),
            patient_a: a.1.to_string(),
            patient_b: b.1.to_string(),
            label: PairLabel::Inter,
        });
    }
    Ok(PairSet { pairs, seed: Some(seed), window_months: intra.window_months, warnings: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::exam;
    use super::*;

    fn month(m: f64) -> i64 {
        (m * DAYS_PER_MONTH).round() as i64
    }

    #[test]
    fn in_window_pair_emitted_out_of_window_skipped() {
        let t = ExamTable::new(vec![
            exam("a", "a0", 0),
            exam("a", "a12", month(12.0)),
            exam("b", "b0", 0),
            exam("b", "b3", month(3.0)),
        ])
        .unwrap();
        let s = build_intra_pairs(&t, (6.0, 18.0)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s.pairs[0].exam_a.as_str(), s.pairs[0].exam_b.as_str()), ("a0", "a12"));
    }

    #[test]
    fn earliest_qualifying_pair_chosen() {
        let t = ExamTable::new(vec![
            exam("a", "m30", month(30.0)),
            exam("a", "m7", month(7.0)),
            exam("a", "m0", 0),
        ])
        .unwrap();
        let s = build_intra_pairs(&t, (6.0, 18.0)).unwrap();
        assert_eq!((s.pairs[0].exam_a.as_str(), s.pairs[0].exam_b.as_str()), ("m0", "m7"));
    }

    #[test]
    fn empty_result_carries_warning() {
        let t = ExamTable::new(vec![exam("a", "a0", 0), exam("a", "a1", 10)]).unwrap();
        let s = build_intra_pairs(&t, (6.0, 18.0)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.warnings.len(), 1);
    }

    fn cohort(n: usize) -> ExamTable {
        let mut recs = Vec::new();
        for p in 0..n {
            recs.push(exam(&format!("p{p}"), &format!("p{p}a"), 0));
            recs.push(exam(&format!("p{p}"), &format!("p{p}b"), month(9.0)));
        }
        ExamTable::new(recs).unwrap()
    }

    #[test]
    fn inter_matches_intra_size_and_is_cross_patient() {
        let t = cohort(12);
        let intra = build_intra_pairs(&t, (6.0, 18.0)).unwrap();
        assert_eq!(intra.len(), 12);
        assert!(intra.pairs.iter().all(|p| p.patient_a == p.patient_b));
        let inter = build_inter_pairs(&intra, &t, 5).unwrap();
        assert_eq!(inter.len(), intra.len());
        assert!(inter.pairs.iter().all(|p| p.patient_a != p.patient_b && p.label == PairLabel::Inter));
        assert_eq!(inter, build_inter_pairs(&intra, &t, 5).unwrap());
        assert_ne!(inter, build_inter_pairs(&intra, &t, 6).unwrap());
    }

    #[test]
    fn single_patient_cannot_form_inter_pairs() {
        let t = cohort(1);
        let intra = build_intra_pairs(&t, (6.0, 18.0)).unwrap();
        assert!(matches!(build_inter_pairs(&intra, &t, 1), Err(CohortError::TooFewPatients { .. })));
    }

    #[test]
    fn text_round_trip() {
        let t = cohort(4);
        let intra = build_intra_pairs(&t, (6.0, 18.0)).unwrap();
        let inter = build_inter_pairs(&intra, &t, 77).unwrap();
        for set in [intra, inter] {
            let mut buf = Vec::new();
            set.write_to(&mut buf, &[]).unwrap();
            assert_eq!(PairSet::read_from(buf.as_slice()).unwrap(), set);
        }
    }
}
