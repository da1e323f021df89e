use super::LearnError;
use crate::cohort::ExamTable;
use crate::features::{Feature, N_FEATURES};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Each row standardised by its own mean and std.
    PerSample,
    /// Each feature standardised by train-split mean and std.
    TrainGlobal,
}

impl std::str::FromStr for NormMode {
    type Err = LearnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_sample" => Ok(Self::PerSample),
            "train_global" => Ok(Self::TrainGlobal),
            other => Err(LearnError::Config { field: "norm", reason: format!("unknown mode {other:?}") }),
        }
    }
}

/// Stds are unbiased (n - 1) everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: NormMode,
    /// Empty for `PerSample`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn fit_norm_stats(train: &ExamTable, mode: NormMode) -> Result<NormStats, LearnError> {
    if train.is_empty() {
        return Err(LearnError::EmptyTable);
    }
    if mode == NormMode::PerSample {
        return Ok(NormStats { mode, mean: Vec::new(), std: Vec::new() });
    }
    let mut mean = Vec::with_capacity(N_FEATURES);
    let mut std = Vec::with_capacity(N_FEATURES);
    for f in Feature::ALL {
        let (m, s) = mean_std(train.records().iter().map(|r| r.features[f.index()]));
        if !(s > 0.0) {
            return Err(LearnError::ZeroVariance { feature: f.name().to_string() });
        }
        mean.push(m);
        std.push(s);
    }
    Ok(NormStats { mode, mean, std })
}

pub fn normalize(x: &[f64; N_FEATURES], stats: &NormStats) -> Result<[f64; N_FEATURES], LearnError> {
    let mut out = [0.0; N_FEATURES];
    match stats.mode {
        NormMode::TrainGlobal => {
            for i in 0..N_FEATURES {
                out[i] = (x[i] - stats.mean[i]) / stats.std[i];
            }
        }
        NormMode::PerSample => {
            let (m, s) = mean_std(x.iter().copied());
            if !(s > 0.0) {
                return Err(LearnError::ConstantRow);
            }
            for i in 0..N_FEATURES {
                out[i] = (x[i] - m) / s;
            }
        }
    }
    Ok(out)
}
