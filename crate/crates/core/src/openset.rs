//! Two-stage open-set identification: a top-K cosine shortlist, a fusion
//! step producing one (identity, decision score) per probe, thresholds
//! calibrated on impostor probes, and DIR@FAR.

use crate::embedding::{dot, EmbeddingSet};
use crate::identify::{choose_templates, GallerySpec, GalleryStrategy};
use crate::rng::{self, streams};
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const DEFAULT_COHORT_SIZE: usize = 300;
pub const DEFAULT_K: usize = 10;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OpenSetError {
    #[error("s-norm needs a cohort of at least 2 embeddings, got {0}")]
    CohortTooSmall(usize),
    #[error("s-norm undefined: zero score spread against the cohort")]
    ZeroCohortSpread,
    #[error("shortlist size K={k} must lie in 1..={gallery}")]
    BadK { k: usize, gallery: usize },
    #[error("no impostor scores to calibrate on")]
    NoImpostors,
    #[error("no known probes")]
    NoKnownProbes,
    #[error("protocol invariant violated: {0}")]
    Invariant(String),
    #[error("not enough data for the protocol: {0}")]
    Insufficient(String),
    #[error("unknown fusion strategy {0:?} (expected bestofk, topkmean or snorm)")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSizes {
    pub gallery: usize,
    pub known_probes: usize,
    pub impostor_probes: usize,
}

impl ProtocolSizes {
    pub const DESK: Self = Self { gallery: 200, known_probes: 100, impostor_probes: 300 };
    pub const FULL: Self = Self { gallery: 5000, known_probes: 2000, impostor_probes: 6000 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetProtocol {
    pub gallery: EmbeddingSet,
    pub known: EmbeddingSet,
    pub impostors: EmbeddingSet,
    pub cohort: EmbeddingSet,
    pub k: usize,
    pub seed: u64,
}

fn ids(set: &EmbeddingSet) -> BTreeSet<&str> {
    set.labels().iter().map(|l| l.patient_id.as_str()).collect()
}

impl OpenSetProtocol {
    pub fn new(
        gallery: EmbeddingSet,
        known: EmbeddingSet,
        impostors: EmbeddingSet,
        cohort: EmbeddingSet,
        k: usize,
        seed: u64,
    ) -> Result<Self, OpenSetError> {
        let inv = |m: String| Err(OpenSetError::Invariant(m));
        let g = ids(&gallery);
        if g.len() != gallery.len() {
            return inv("gallery must hold exactly one template per identity".into());
        }
        if k == 0 || k > gallery.len() {
            return Err(OpenSetError::BadK { k, gallery: gallery.len() });
        }
        if let Some(id) = ids(&known).into_iter().find(|id| !g.contains(id)) {
            return inv(format!("known probe identity {id} is not enrolled"));
        }
        let imp = ids(&impostors);
        if let Some(id) = imp.iter().find(|id| g.contains(*id)) {
            return inv(format!("impostor probe identity {id} is enrolled"));
        }
        let used: BTreeSet<&str> = g.iter().chain(&imp).copied().chain(ids(&known)).collect();
        if let Some(id) = ids(&cohort).into_iter().find(|id| used.contains(id)) {
            return inv(format!("cohort identity {id} also appears in the gallery or probes"));
        }
        Ok(Self { gallery, known, impostors, cohort, k, seed })
    }

    pub fn sizes(&self) -> ProtocolSizes {
        ProtocolSizes { gallery: self.gallery.len(), known_probes: self.known.len(), impostor_probes: self.impostors.len() }
    }
}

fn sample_rows<R: rand::Rng>(rng: &mut R, pool: &[usize], n: usize, what: &str) -> Result<Vec<usize>, OpenSetError> {
    if pool.len() < n {
        return Err(OpenSetError::Insufficient(format!("{what}: need {n}, have {}", pool.len())));
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Enrol `sizes.gallery` identities with at least two exams (random single
/// template each), draw known probes from their remaining exams and
/// impostor probes from the non-enrolled identities, and draw the s-norm
/// cohort from `cohort_pool`.
pub fn build_protocol(
    test: &EmbeddingSet,
    cohort_pool: &EmbeddingSet,
    sizes: ProtocolSizes,
    cohort_size: usize,
    k: usize,
    seed: u64,
) -> Result<OpenSetProtocol, OpenSetError> {
    let mut rng = rng::stream(seed, streams::PROTOCOL);
    let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in test.labels().iter().enumerate() {
        by_id.entry(l.patient_id.as_str()).or_default().push(i);
    }
    for v in by_id.values_mut() {
        v.sort_by(|&a, &b| (test.label(a).acquired_at, &test.label(a).exam_id).cmp(&(test.label(b).acquired_at, &test.label(b).exam_id)));
    }
    let mut order: Vec<&str> = by_id.keys().copied().collect();
    order.shuffle(&mut rng);
    let eligible: Vec<&str> = order.iter().copied().filter(|id| by_id[id].len() >= 2).collect();
    if eligible.len() < sizes.gallery {
        return Err(OpenSetError::Insufficient(format!(
            "gallery: need {} identities with >= 2 exams, have {}",
            sizes.gallery,
            eligible.len()
        )));
    }
    let enrolled: BTreeSet<&str> = eligible[..sizes.gallery].iter().copied().collect();
    let enrolled_map: BTreeMap<&str, Vec<usize>> =
        by_id.iter().filter(|(id, _)| enrolled.contains(*id)).map(|(id, v)| (*id, v.clone())).collect();
    let templates = choose_templates(test, &enrolled_map, GallerySpec { strategy: GalleryStrategy::RandomSingle, seed })
        .map_err(|e| OpenSetError::Invariant(e.to_string()))?;
    let template_rows: BTreeSet<usize> = templates.values().copied().collect();
    let known_pool: Vec<usize> = enrolled_map.values().flatten().copied().filter(|i| !template_rows.contains(i)).collect();
    let impostor_pool: Vec<usize> =
        by_id.iter().filter(|(id, _)| !enrolled.contains(*id)).flat_map(|(_, v)| v.iter().copied()).collect();

    let known = sample_rows(&mut rng, &known_pool, sizes.known_probes, "known probes")?;
    let impostors = sample_rows(&mut rng, &impostor_pool, sizes.impostor_probes, "impostor probes")?;
    let cohort_all: Vec<usize> = (0..cohort_pool.len()).collect();
    let cohort = sample_rows(&mut rng, &cohort_all, cohort_size.min(cohort_pool.len()), "cohort")?;
    let gallery_rows: Vec<usize> = templates.values().copied().collect();
    OpenSetProtocol::new(
        test.select(&gallery_rows),
        test.select(&known),
        test.select(&impostors),
        cohort_pool.select(&cohort),
        k,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    BestOfK,
    TopKMean,
    SNorm,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::BestOfK, FusionKind::TopKMean, FusionKind::SNorm];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::BestOfK => "bestofk",
            FusionKind::TopKMean => "topkmean",
            FusionKind::SNorm => "snorm",
        }
    }
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionKind {
    type Err = OpenSetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| OpenSetError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub gallery_row: usize,
    pub score: f64,
}

/// The `k` templates most similar to `probe`, best first; equal scores are
/// ordered by identity.
pub fn shortlist_topk(probe: &[f32], gallery: &EmbeddingSet, k: usize) -> Vec<Candidate> {
    let mut all: Vec<Candidate> =
        (0..gallery.len()).map(|j| Candidate { gallery_row: j, score: dot(probe, gallery.row(j)) }).collect();
    let cmp = |a: &Candidate, b: &Candidate| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| gallery.label(a.gallery_row).patient_id.cmp(&gallery.label(b.gallery_row).patient_id))
    };
    let k = k.min(all.len());
    if k < all.len() {
        all.select_nth_unstable_by(k, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation of a score list against the cohort.
pub fn cohort_stats(scores: &[f64]) -> Result<CohortStats, OpenSetError> {
    if scores.len() < 2 {
        return Err(OpenSetError::CohortTooSmall(scores.len()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(std > 0.0) {
        return Err(OpenSetError::ZeroCohortSpread);
    }
    Ok(CohortStats { mean, std })
}

pub fn snorm_score(s: f64, probe: CohortStats, template: CohortStats) -> f64 {
    0.5 * ((s - probe.mean) / probe.std + (s - template.mean) / template.std)
}

/// s-norm fusion from raw numbers: candidate scores, the probe's cohort
/// scores and each candidate template's cohort scores. Returns the
/// position of the winning candidate and its normalised score.
pub fn snorm_decision(candidate_scores: &[f64], probe_cohort: &[f64], template_cohorts: &[&[f64]]) -> Result<(usize, f64), OpenSetError> {
    let p = cohort_stats(probe_cohort)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, (&s, tc)) in candidate_scores.iter().zip(template_cohorts).enumerate() {
        let v = snorm_score(s, p, cohort_stats(tc)?);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub gallery_row: usize,
    pub score: f64,
}

/// Probe- and gallery-side cohort statistics for s-norm.
pub struct SNormContext<'a> {
    pub probe: CohortStats,
    pub gallery: &'a [CohortStats],
}

/// Fuse a non-empty shortlist into one decision. `snorm` must be given for
/// [`FusionKind::SNorm`].
pub fn fuse(candidates: &[Candidate], kind: FusionKind, snorm: Option<&SNormContext<'_>>) -> Result<Decision, OpenSetError> {
    let top = candidates.first().ok_or(OpenSetError::Invariant("empty shortlist".into()))?;
    match kind {
        FusionKind::BestOfK => Ok(Decision { gallery_row: top.gallery_row, score: top.score }),
        FusionKind::TopKMean => {
            let mean = candidates.iter().map(|c| c.score).sum::<f64>() / candidates.len() as f64;
            Ok(Decision { gallery_row: top.gallery_row, score: mean })
        }
        FusionKind::SNorm => {
            let ctx = snorm.ok_or(OpenSetError::CohortTooSmall(0))?;
            let mut best = Decision { gallery_row: top.gallery_row, score: f64::NEG_INFINITY };
            for c in candidates {
                let v = snorm_score(c.score, ctx.probe, ctx.gallery[c.gallery_row]);
                if v > best.score {
                    best = Decision { gallery_row: c.gallery_row, score: v };
                }
            }
            Ok(best)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub far_target: f64,
    pub threshold: f64,
    /// Fraction of impostors with score >= threshold.
    pub far: f64,
    pub n_impostors: usize,
    pub unreliable: bool,
}

/// Smallest threshold accepting at most a `far_target` fraction of
/// impostors (accept rule `score >= threshold`).
pub fn calibrate_threshold(impostor_scores: &[f64], far_target: f64) -> Result<Calibration, OpenSetError> {
    let n = impostor_scores.len();
    if n == 0 {
        return Err(OpenSetError::NoImpostors);
    }
    let mut s = impostor_scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    // largest m with m / n <= far_target
    let mut m = ((far_target * n as f64).floor().max(0.0) as usize).min(n);
    while m < n && (m + 1) as f64 / n as f64 <= far_target {
        m += 1;
    }
    while m > 0 && m as f64 / n as f64 > far_target {
        m -= 1;
    }
    let threshold = if m >= n { s[n - 1] } else { s[m].next_up() };
    let accepted = s.iter().filter(|&&v| v >= threshold).count();
    let unreliable = (n as f64) * far_target < 1.0;
    if unreliable {
        log::warn!("{n} impostor probes cannot resolve FAR {far_target:e}");
    }
    Ok(Calibration { far_target, threshold, far: accepted as f64 / n as f64, n_impostors: n, unreliable })
}

/// Per-probe fused decisions for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDecisions {
    pub kind: FusionKind,
    /// `(decision, fused identity is the probe's own)` per known probe.
    pub known: Vec<(Decision, bool)>,
    pub impostor_scores: Vec<f64>,
}

fn cohort_scores(z: &[f32], cohort: &EmbeddingSet) -> Vec<f64> {
    cohort.rows().map(|c| dot(z, c)).collect()
}

pub fn decide_all(protocol: &OpenSetProtocol, kind: FusionKind) -> Result<ProbeDecisions, OpenSetError> {
    let p = protocol;
    let gallery_stats: Vec<CohortStats> = if kind == FusionKind::SNorm {
        (0..p.gallery.len())
            .into_par_iter()
            .map(|j| cohort_stats(&cohort_scores(p.gallery.row(j), &p.cohort)))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let decide = |z: &[f32]| -> Result<Decision, OpenSetError> {
        let cands = shortlist_topk(z, &p.gallery, p.k);
        if kind == FusionKind::SNorm {
            let ctx = SNormContext { probe: cohort_stats(&cohort_scores(z, &p.cohort))?, gallery: &gallery_stats };
            fuse(&cands, kind, Some(&ctx))
        } else {
            fuse(&cands, kind, None)
        }
    };
    let known = (0..p.known.len())
        .into_par_iter()
        .map(|i| {
            let d = decide(p.known.row(i))?;
            Ok((d, p.gallery.label(d.gallery_row).patient_id == p.known.label(i).patient_id))
        })
        .collect::<Result<Vec<_>, OpenSetError>>()?;
    let impostor_scores = (0..p.impostors.len())
        .into_par_iter()
        .map(|i| decide(p.impostors.row(i)).map(|d| d.score))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProbeDecisions { kind, known, impostor_scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirResult {
    pub strategy: FusionKind,
    pub far_target: f64,
    pub threshold: f64,
    pub dir: f64,
    pub unreliable: bool,
}

pub fn dir_from_decisions(d: &ProbeDecisions, far_target: f64) -> Result<DirResult, OpenSetError> {
    if d.known.is_empty() {
        return Err(OpenSetError::NoKnownProbes);
    }
    let cal = calibrate_threshold(&d.impostor_scores, far_target)?;
    let hits = d.known.iter().filter(|(dec, correct)| *correct && dec.score >= cal.threshold).count();
    Ok(DirResult {
        strategy: d.kind,
        far_target,
        threshold: cal.threshold,
        dir: hits as f64 / d.known.len() as f64,
        unreliable: cal.unreliable,
    })
}

pub fn dir_at_far(protocol: &OpenSetProtocol, kind: FusionKind, far_target: f64) -> Result<DirResult, OpenSetError> {
    dir_from_decisions(&decide_all(protocol, kind)?, far_target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetReport {
    pub sizes: ProtocolSizes,
    pub k: usize,
    pub cohort_size: usize,
    pub seed: u64,
    pub rows: Vec<DirResult>,
}

/// One row per (strategy, FAR) pair, strategies in the given order and
/// FAR targets from loosest to strictest.
pub fn evaluate_openset(protocol: &OpenSetProtocol, kinds: &[FusionKind], far_targets: &[f64]) -> Result<OpenSetReport, OpenSetError> {
    let mut fars = far_targets.to_vec();
    fars.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::new();
    for &kind in kinds {
        let d = decide_all(protocol, kind)?;
        for &f in &fars {
            rows.push(dir_from_decisions(&d, f)?);
        }
    }
    Ok(OpenSetReport { sizes: protocol.sizes(), k: protocol.k, cohort_size: protocol.cohort.len(), seed: protocol.seed, rows })
}
