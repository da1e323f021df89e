//! Closed-set identification: single-template galleries, genuine rank with
//! pessimistic ties, CMC curves and `rank_k_95`.

use crate::embedding::{dot, EmbeddingSet};
use crate::rng::{self, streams};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum IdentifyError {
    #[error("probe identity {0} has no gallery template (closed-set violation)")]
    NotInGallery(String),
    #[error("gallery has {count} templates for identity {identity}")]
    DuplicateTemplate { identity: String, count: usize },
    #[error("no probes")]
    NoProbes,
    #[error("empty gallery")]
    EmptyGallery,
    #[error("earliest_single needs acquisition dates; exam {0} has none")]
    MissingDate(String),
    #[error("unknown gallery strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GalleryStrategy {
    RandomSingle,
    EarliestSingle,
}

impl std::str::FromStr for GalleryStrategy {
    type Err = IdentifyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random_single" => Ok(Self::RandomSingle),
            "earliest_single" => Ok(Self::EarliestSingle),
            other => Err(IdentifyError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GallerySpec {
    pub strategy: GalleryStrategy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GallerySplit {
    pub gallery: EmbeddingSet,
    pub probes: EmbeddingSet,
    /// identity -> template exam id
    pub templates: BTreeMap<String, String>,
    /// Identities with a single exam, left out of both sets.
    pub excluded: Vec<String>,
}

/// Exams of each identity, chronological (date, then exam id).
fn exams_by_identity(set: &EmbeddingSet) -> BTreeMap<&str, Vec<usize>> {
    let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in set.labels().iter().enumerate() {
        by.entry(l.patient_id.as_str()).or_default().push(i);
    }
    for v in by.values_mut() {
        v.sort_by(|&a, &b| {
            let (la, lb) = (set.label(a), set.label(b));
            (la.acquired_at, &la.exam_id).cmp(&(lb.acquired_at, &lb.exam_id))
        });
    }
    by
}

/// Pick one template per identity. The choice depends only on the labels,
/// not on row order.
pub(crate) fn choose_templates(
    set: &EmbeddingSet,
    identities: &BTreeMap<&str, Vec<usize>>,
    spec: GallerySpec,
) -> Result<BTreeMap<String, usize>, IdentifyError> {
    let mut rng = rng::stream(spec.seed, streams::GALLERY);
    let mut out = BTreeMap::new();
    for (id, exams) in identities {
        let pick = match spec.strategy {
            GalleryStrategy::EarliestSingle => {
                if let Some(&i) = exams.iter().find(|&&i| set.label(i).acquired_at.is_none()) {
                    return Err(IdentifyError::MissingDate(set.label(i).exam_id.clone()));
                }
                exams[0]
            }
            GalleryStrategy::RandomSingle => exams[rng.random_range(0..exams.len())],
        };
        out.insert(id.to_string(), pick);
    }
    Ok(out)
}

pub fn build_gallery(set: &EmbeddingSet, spec: GallerySpec) -> Result<GallerySplit, IdentifyError> {
    let mut identities = exams_by_identity(set);
    let excluded: Vec<String> =
        identities.iter().filter(|(_, v)| v.len() < 2).map(|(k, _)| k.to_string()).collect();
    if !excluded.is_empty() {
        log::warn!("{} single-exam identities excluded from the closed-set gallery", excluded.len());
    }
    identities.retain(|_, v| v.len() >= 2);
    let chosen = choose_templates(set, &identities, spec)?;
    let gallery_rows: Vec<usize> = chosen.values().copied().collect();
    let is_template: std::collections::HashSet<usize> = gallery_rows.iter().copied().collect();
    let probe_rows: Vec<usize> =
        identities.values().flatten().copied().filter(|i| !is_template.contains(i)).collect();
    Ok(GallerySplit {
        gallery: set.select(&gallery_rows),
        probes: set.select(&probe_rows),
        templates: chosen.into_iter().map(|(k, i)| (k, set.label(i).exam_id.clone())).collect(),
        excluded,
    })
}

/// identity -> gallery row, rejecting multi-template galleries.
pub(crate) fn template_index(gallery: &EmbeddingSet) -> Result<HashMap<&str, usize>, IdentifyError> {
    if gallery.is_empty() {
        return Err(IdentifyError::EmptyGallery);
    }
    let mut idx = HashMap::with_capacity(gallery.len());
    for (i, l) in gallery.labels().iter().enumerate() {
        if idx.insert(l.patient_id.as_str(), i).is_some() {
            let count = gallery.labels().iter().filter(|m| m.patient_id == l.patient_id).count();
            return Err(IdentifyError::DuplicateTemplate { identity: l.patient_id.clone(), count });
        }
    }
    Ok(idx)
}

fn rank_with_index(probe: &[f32], genuine_row: usize, gallery: &EmbeddingSet) -> usize {
    let g = dot(probe, gallery.row(genuine_row));
    let ahead = (0..gallery.len()).filter(|&j| j != genuine_row && dot(probe, gallery.row(j)) >= g).count();
    1 + ahead
}

/// `1 + #{other templates scoring >= genuine}`: ties count against the
/// genuine template.
pub fn rank_of_genuine(probe: &[f32], identity: &str, gallery: &EmbeddingSet) -> Result<usize, IdentifyError> {
    let idx = template_index(gallery)?;
    let &row = idx.get(identity).ok_or_else(|| IdentifyError::NotInGallery(identity.to_string()))?;
    Ok(rank_with_index(probe, row, gallery))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    /// `values[k - 1]` is CMC at rank `k`, for `k = 1..=G`.
    pub values: Vec<f64>,
    pub n_probes: usize,
    /// `rank_counts[k - 1]` probes have genuine rank exactly `k`.
    pub rank_counts: Vec<u64>,
}

impl CmcCurve {
    pub fn from_ranks(ranks: &[usize], gallery_size: usize) -> Self {
        let mut rank_counts = vec![0u64; gallery_size];
        for &r in ranks {
            rank_counts[r - 1] += 1;
        }
        let n = ranks.len() as f64;
        let mut acc = 0u64;
        let values = rank_counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / n
            })
            .collect();
        Self { values, n_probes: ranks.len(), rank_counts }
    }

    pub fn gallery_size(&self) -> usize {
        self.values.len()
    }

    /// CMC at rank `k`, saturating at the gallery size.
    pub fn rank(&self, k: usize) -> f64 {
        self.values[k.clamp(1, self.values.len()) - 1]
    }

    /// Smallest `k` with `CMC[k] >= target`.
    pub fn rank_k_at(&self, target: f64) -> usize {
        self.values.iter().position(|&v| v >= target).map_or(self.values.len(), |p| p + 1)
    }

    pub fn rank_k_95(&self) -> usize {
        self.rank_k_at(0.95)
    }
}

pub fn cmc(probes: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<CmcCurve, IdentifyError> {
    if probes.is_empty() {
        return Err(IdentifyError::NoProbes);
    }
    let idx = template_index(gallery)?;
    let ranks: Vec<usize> = (0..probes.len())
        .into_par_iter()
        .map(|p| {
            let id = probes.label(p).patient_id.as_str();
            let &row = idx.get(id).ok_or_else(|| IdentifyError::NotInGallery(id.to_string()))?;
            Ok(rank_with_index(probes.row(p), row, gallery))
        })
        .collect::<Result<_, IdentifyError>>()?;
    Ok(CmcCurve::from_ranks(&ranks, gallery.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationSummary {
    pub gallery_size: usize,
    pub n_probes: usize,
    pub excluded_identities: usize,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub rank_k_95: usize,
}

/// Gallery construction plus CMC in one call.
pub fn evaluate_closed_set(set: &EmbeddingSet, spec: GallerySpec) -> Result<(IdentificationSummary, CmcCurve), IdentifyError> {
    let split = build_gallery(set, spec)?;
    let curve = cmc(&split.probes, &split.gallery)?;
    let summary = IdentificationSummary {
        gallery_size: split.gallery.len(),
        n_probes: split.probes.len(),
        excluded_identities: split.excluded.len(),
        rank1: curve.rank(1),
        rank5: curve.rank(5),
        rank10: curve.rank(10),
        rank_k_95: curve.rank_k_95(),
    };
    Ok((summary, curve))
}
