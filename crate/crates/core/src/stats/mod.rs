//! Correlations, two-sample tests, effect sizes and overlap measures used to
//! compare genuine (INTRA) against impostor (INTER) comparisons.
//!
//! Tie conventions are shared by every statistic: average ranks for
//! Spearman, midranks for the rank tests, and half-counting for U, AUC and
//! Cliff's delta.

mod correlation;
mod pairs;
mod special;
mod twosample;

pub use correlation::{average_ranks, pearson, spearman};
pub use pairs::{pair_correlations, pair_distances, PairCorrelations};
pub use twosample::{
    anderson_darling_2samp, auc_from_scores, bhattacharyya_coefficient, cliffs_delta, cohens_d,
    cramer_von_mises_2samp, ks_two_sample, mann_whitney_u, AndersonDarling, CramerVonMises, MannWhitney,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("correlation undefined: constant input vector")]
    ConstantInput,
    #[error("effect size undefined: pooled variance is zero")]
    ZeroPooledVariance,
    #[error("bin count must be >= 2, got {0}")]
    InvalidBins(usize),
    #[error("pair refers to unknown exam {0}")]
    UnknownExam(String),
}

pub(crate) fn check(x: &[f64], min_len: usize) -> Result<(), StatsError> {
    if x.len() < min_len {
        return Err(StatsError::TooFewSamples { needed: min_len, found: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub const DEFAULT_OVERLAP_BINS: usize = 64;

/// Every two-sample statistic for one (first, second) group pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub n_first: usize,
    pub n_second: usize,
    pub ks: f64,
    pub ad: f64,
    pub mwu_u: f64,
    pub mwu_p: f64,
    pub cvm: f64,
    pub cvm_p: f64,
    pub cohens_d: f64,
    pub cliffs_delta: f64,
    pub bhattacharyya: f64,
    /// Probability that a first-group value exceeds a second-group value.
    pub auc: f64,
    /// `auc` with the score direction reversed; `auc + auc_inverted == 1`.
    pub auc_inverted: f64,
}

impl TwoSampleReport {
    pub fn compute(first: &[f64], second: &[f64], bins: usize) -> Result<Self, StatsError> {
        let mwu = mann_whitney_u(first, second)?;
        let cvm = cramer_von_mises_2samp(first, second)?;
        Ok(Self {
            n_first: first.len(),
            n_second: second.len(),
            ks: ks_two_sample(first, second)?,
            ad: anderson_darling_2samp(first, second)?.statistic,
            mwu_u: mwu.u,
            mwu_p: mwu.p_value,
            cvm: cvm.statistic,
            cvm_p: cvm.p_value,
            cohens_d: cohens_d(first, second)?,
            cliffs_delta: cliffs_delta(first, second)?,
            bhattacharyya: bhattacharyya_coefficient(first, second, bins)?,
            auc: auc_from_scores(first, second)?,
            auc_inverted: auc_from_scores(second, first)?,
        })
    }

    /// `name=value` lines.
    pub fn to_flat_text(&self) -> String {
        let rows: [(&str, String); 13] = [
            ("n_first", self.n_first.to_string()),
            ("n_second", self.n_second.to_string()),
            ("KS", self.ks.to_string()),
            ("AD statistic", self.ad.to_string()),
            ("Mann-Whitney U", self.mwu_u.to_string()),
            ("Mann-Whitney p", self.mwu_p.to_string()),
            ("Cramer-von Mises", self.cvm.to_string()),
            ("Cramer-von Mises p", self.cvm_p.to_string()),
            ("Cohen's d", self.cohens_d.to_string()),
            ("Cliff's Delta", self.cliffs_delta.to_string()),
            ("Bhattacharyya", self.bhattacharyya.to_string()),
            ("AUC", self.auc.to_string()),
            ("AUC inverted", self.auc_inverted.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
