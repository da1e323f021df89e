//! Per-pair samples for the INTRA/INTER comparison.

use super::{pearson, spearman, StatsError};
use crate::cohort::{ExamTable, PairLabel, PairSet};
use crate::embedding::EmbeddingSet;
use crate::features::Feature;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Correlations between the two exams of each pair, over the
/// [`Feature::CORRELATION_SET`] values, split by pair label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelations {
    pub intra_pearson: Vec<f64>,
    pub intra_spearman: Vec<f64>,
    pub inter_pearson: Vec<f64>,
    pub inter_spearman: Vec<f64>,
    /// Pairs with a constant feature vector, where correlation is undefined.
    pub skipped: usize,
}

fn correlation_vector(values: &[f64; crate::features::N_FEATURES]) -> Vec<f64> {
    Feature::CORRELATION_SET.iter().map(|f| values[f.index()]).collect()
}

pub fn pair_correlations(table: &ExamTable, pairs: &PairSet) -> Result<PairCorrelations, StatsError> {
    let mut out = PairCorrelations {
        intra_pearson: Vec::new(),
        intra_spearman: Vec::new(),
        inter_pearson: Vec::new(),
        inter_spearman: Vec::new(),
        skipped: 0,
    };
    for p in &pairs.pairs {
        let a = table.find_exam(&p.exam_a).ok_or_else(|| StatsError::UnknownExam(p.exam_a.clone()))?;
        let b = table.find_exam(&p.exam_b).ok_or_else(|| StatsError::UnknownExam(p.exam_b.clone()))?;
        let (x, y) = (correlation_vector(&a.features), correlation_vector(&b.features));
        let (r, rho) = match (pearson(&x, &y), spearman(&x, &y)) {
            (Ok(r), Ok(rho)) => (r, rho),
            (Err(StatsError::ConstantInput), _) | (_, Err(StatsError::ConstantInput)) => {
                out.skipped += 1;
                continue;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        match p.label {
            PairLabel::Intra => {
                out.intra_pearson.push(r);
                out.intra_spearman.push(rho);
            }
            PairLabel::Inter => {
                out.inter_pearson.push(r);
                out.inter_spearman.push(rho);
            }
        }
    }
    Ok(out)
}

/// Euclidean distances between pair members' embeddings, `(intra, inter)`.
pub fn pair_distances(set: &EmbeddingSet, pairs: &PairSet) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    let index: HashMap<&str, usize> = set.labels().iter().enumerate().map(|(i, l)| (l.exam_id.as_str(), i)).collect();
    let row = |exam: &str| index.get(exam).map(|&i| set.row(i)).ok_or_else(|| StatsError::UnknownExam(exam.to_string()));
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for p in &pairs.pairs {
        let (a, b) = (row(&p.exam_a)?, row(&p.exam_b)?);
        let d = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt();
        match p.label {
            PairLabel::Intra => intra.push(d),
            PairLabel::Inter => inter.push(d),
        }
    }
    Ok((intra, inter))
}
