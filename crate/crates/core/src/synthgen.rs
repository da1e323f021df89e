//! Deterministic synthetic cohorts with a controllable identity signature.
//!
//! Each patient owns a latent vector `u ~ N(0, between_spread² I)` and a unit
//! drift direction `g`. An exam taken `t` months after the patient's first
//! exam has features `map(u + drift_per_month * t * g + eps)` with
//! `eps ~ N(0, within_noise² I)`, where `map` is an affine latent -> feature
//! map centred on the range midpoints. Values outside the physiological
//! ranges are clipped and counted.

use crate::cohort::{ExamRecord, ExamTable, DAYS_PER_MONTH};
use crate::features::{Feature, RangeTable, N_FEATURES};
use crate::rng::{self, streams};
use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid synthetic parameter `{field}`: {reason}")]
pub struct SynthError {
    pub field: &'static str,
    pub reason: String,
}

/// Affine map from latent space to the 13 features:
/// `features[f] = offset[f] + sum_k weights[f][k] * latent[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub weights: Vec<Vec<f64>>,
    pub offset: [f64; N_FEATURES],
}

impl FeatureMap {
    /// Random directions per feature, scaled so that the between-patient
    /// spread of each feature is one eighth of its range width.
    pub fn default_for(latent_dim: usize, between_spread: f64, ranges: &RangeTable, seed: u64) -> Self {
        let mut rng = rng::stream(seed, streams::FEATURE_MAP);
        let mut weights = Vec::with_capacity(N_FEATURES);
        let mut offset = [0.0; N_FEATURES];
        for f in Feature::ALL {
            let r = ranges.get(f);
            offset[f.index()] = r.midpoint();
            let dir: Vec<f64> = (0..latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let scale = r.width() / (8.0 * between_spread * norm);
            weights.push(dir.into_iter().map(|v| v * scale).collect());
        }
        Self { weights, offset }
    }

    pub fn apply(&self, latent: &[f64]) -> [f64; N_FEATURES] {
        let mut out = self.offset;
        for (o, row) in out.iter_mut().zip(&self.weights) {
            *o += row.iter().zip(latent).map(|(w, z)| w * z).sum::<f64>();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_patients: usize,
    pub exams_per_patient: (usize, usize),
    pub latent_dim: usize,
    pub within_noise: f64,
    pub between_spread: f64,
    pub drift_per_month: f64,
    /// Fraction of exams tagged with a second acquisition device.
    pub off_device_fraction: f64,
    /// `None` derives the default map from the seed.
    pub feature_map: Option<FeatureMap>,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_patients: 1000,
            exams_per_patient: (4, 4),
            latent_dim: 8,
            within_noise: 0.1,
            between_spread: 1.0,
            drift_per_month: 0.0,
            off_device_fraction: 0.0,
            feature_map: None,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |field, reason: &str| Err(SynthError { field, reason: reason.to_string() });
        if self.n_patients == 0 {
            return err("n_patients", "must be >= 1");
        }
        if self.exams_per_patient.0 == 0 {
            return err("exams_min", "must be >= 1");
        }
        if self.exams_per_patient.1 < self.exams_per_patient.0 {
            return err("exams_max", "must be >= exams_min");
        }
        if self.latent_dim == 0 {
            return err("latent_dim", "must be >= 1");
        }
        if !(self.within_noise >= 0.0 && self.within_noise.is_finite()) {
            return err("within_noise", "must be finite and >= 0");
        }
        if !(self.between_spread > 0.0 && self.between_spread.is_finite()) {
            return err("between_spread", "must be finite and > 0");
        }
        if !(self.drift_per_month >= 0.0 && self.drift_per_month.is_finite()) {
            return err("drift_per_month", "must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.off_device_fraction) {
            return err("off_device_fraction", "must lie in [0, 1]");
        }
        if let Some(map) = &self.feature_map {
            if map.weights.len() != N_FEATURES || map.weights.iter().any(|r| r.len() != self.latent_dim) {
                return err("feature_map", "must be 13 rows of latent_dim weights");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub table: ExamTable,
    /// Feature values clipped to the physiological ranges.
    pub clip_events: usize,
}

pub const PRIMARY_DEVICE: &str = "ELI250";
pub const SECONDARY_DEVICE: &str = "MAC5500";

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Generate the cohort. Each patient draws from its own seeded stream, so
/// output does not depend on how patients are scheduled across threads.
pub fn generate_cohort(params: &SynthParams) -> Result<SynthCohort, SynthError> {
    params.validate()?;
    let ranges = RangeTable::default();
    let map = params.feature_map.clone().unwrap_or_else(|| {
        FeatureMap::default_for(params.latent_dim, params.between_spread, &ranges, params.seed)
    });
    let base = NaiveDate::from_ymd_opt(2008, 1, 1).expect("valid date");
    let width = params.n_patients.to_string().len().max(5);

    let per_patient: Vec<(Vec<ExamRecord>, usize)> = (0..params.n_patients)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(params.seed, streams::PER_ENTITY_BASE + p as u64);
            let latent = gaussian_vec(&mut rng, params.latent_dim, params.between_spread);
            let mut drift = gaussian_vec(&mut rng, params.latent_dim, 1.0);
            let norm = drift.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                drift.iter_mut().for_each(|v| *v /= norm);
            }
            let n_exams = rng.random_range(params.exams_per_patient.0..=params.exams_per_patient.1);
            let gender = if rng.random_bool(0.5) { "F" } else { "M" };
            let age0 = rng.random_range(25.0..80.0f64).floor();
            let mut day = rng.random_range(0..1460i64);
            let first_day = day;
            let pid = format!("P{p:0width$}");

            let mut clips = 0;
            let mut exams = Vec::with_capacity(n_exams);
            for e in 0..n_exams {
                if e > 0 {
                    day += rng.random_range(31..=400i64);
                }
                let months = (day - first_day) as f64 / DAYS_PER_MONTH;
                let noise = gaussian_vec(&mut rng, params.latent_dim, params.within_noise);
                let point: Vec<f64> = (0..params.latent_dim)
                    .map(|k| latent[k] + params.drift_per_month * months * drift[k] + noise[k])
                    .collect();
                let mut features = map.apply(&point);
                for f in Feature::ALL {
                    let r = ranges.get(f);
                    let v = &mut features[f.index()];
                    if *v < r.min || *v > r.max {
                        *v = v.clamp(r.min, r.max);
                        clips += 1;
                    }
                }
                let device =
                    if rng.random_bool(params.off_device_fraction) { SECONDARY_DEVICE } else { PRIMARY_DEVICE };
                exams.push(ExamRecord {
                    patient_id: pid.clone(),
                    exam_id: format!("{pid}-E{e:02}"),
                    acquired_at: base + chrono::Duration::days(day),
                    gender: Some(gender.to_string()),
                    age: Some(age0 + ((day - first_day) / 365) as f64),
                    features,
                    attributes: BTreeMap::from([("Device".to_string(), device.to_string())]),
                });
            }
            (exams, clips)
        })
        .collect();

    let clip_events = per_patient.iter().map(|(_, c)| c).sum();
    let records = per_patient.into_iter().flat_map(|(r, _)| r).collect();
    let table = ExamTable::new(records).expect("generated exam ids are unique");
    Ok(SynthCohort { table, clip_events })
}
