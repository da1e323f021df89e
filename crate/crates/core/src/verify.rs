//! All-vs-all verification: streaming genuine/impostor cosine histograms,
//! EER, TAR@FAR and ROC/DET samples.
//!
//! Scores live in `[-1, 1]`, split into `B` equal bins. Edge `k` is
//! `-1 + 2k/B`; a score on an edge goes to the bin it opens, so accepting
//! bins `k..B` is the same as accepting `score >= edge(k)`.

use crate::embedding::EmbeddingSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BINS: usize = 1 << 20;
pub const DEFAULT_BLOCK: usize = 256;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("need at least 2 embeddings, got {0}")]
    TooFewEmbeddings(usize),
    #[error("block size must be >= 1")]
    ZeroBlock,
    #[error("no {0} comparisons: metric undefined")]
    EmptyClass(&'static str),
    #[error("histograms have different bin counts ({0} vs {1})")]
    BinMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreHistogramPair {
    pub genuine: Vec<u64>,
    pub impostor: Vec<u64>,
    pub n_genuine: u64,
    pub n_impostor: u64,
}

impl ScoreHistogramPair {
    pub fn new(bins: usize) -> Result<Self, VerifyError> {
        if bins < 2 {
            return Err(VerifyError::TooFewBins(bins));
        }
        Ok(Self { genuine: vec![0; bins], impostor: vec![0; bins], n_genuine: 0, n_impostor: 0 })
    }

    pub fn bins(&self) -> usize {
        self.genuine.len()
    }

    pub fn edge(&self, k: usize) -> f64 {
        -1.0 + 2.0 * k as f64 / self.bins() as f64
    }

    pub fn bin_of(&self, score: f64) -> usize {
        let b = self.bins();
        let x = ((score + 1.0) * 0.5 * b as f64).floor();
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(b - 1)
        }
    }

    pub fn add(&mut self, score: f64, genuine: bool) {
        let k = self.bin_of(score);
        if genuine {
            self.genuine[k] += 1;
            self.n_genuine += 1;
        } else {
            self.impostor[k] += 1;
            self.n_impostor += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<(), VerifyError> {
        if other.bins() != self.bins() {
            return Err(VerifyError::BinMismatch(self.bins(), other.bins()));
        }
        for (a, b) in self.genuine.iter_mut().zip(&other.genuine) {
            *a += b;
        }
        for (a, b) in self.impostor.iter_mut().zip(&other.impostor) {
            *a += b;
        }
        self.n_genuine += other.n_genuine;
        self.n_impostor += other.n_impostor;
        Ok(())
    }

    /// `(#impostor >= edge(k), #genuine >= edge(k))` for `k = 0..=B`.
    fn tails(&self) -> (Vec<u64>, Vec<u64>) {
        let b = self.bins();
        let mut imp = vec![0u64; b + 1];
        let mut gen = vec![0u64; b + 1];
        for k in (0..b).rev() {
            imp[k] = imp[k + 1] + self.impostor[k];
            gen[k] = gen[k + 1] + self.genuine[k];
        }
        (imp, gen)
    }

    fn require_both(&self) -> Result<(), VerifyError> {
        if self.n_genuine == 0 {
            return Err(VerifyError::EmptyClass("genuine"));
        }
        if self.n_impostor == 0 {
            return Err(VerifyError::EmptyClass("impostor"));
        }
        Ok(())
    }
}

/// Bin every unordered pair `i < j` of `set`. Pairs are grouped into
/// `block x block` tiles of the upper triangle; tiles are scored in parallel
/// into per-worker histograms that are then summed.
pub fn accumulate_all_pairs(set: &EmbeddingSet, bins: usize, block: usize) -> Result<ScoreHistogramPair, VerifyError> {
    let empty = ScoreHistogramPair::new(bins)?;
    let n = set.len();
    if n < 2 {
        return Err(VerifyError::TooFewEmbeddings(n));
    }
    if block == 0 {
        return Err(VerifyError::ZeroBlock);
    }
    let tiles_per_side = n.div_ceil(block);
    let tiles: Vec<(usize, usize)> =
        (0..tiles_per_side).flat_map(|bi| (bi..tiles_per_side).map(move |bj| (bi, bj))).collect();
    let workers = rayon::current_num_threads().max(1);
    let per_worker = tiles.len().div_ceil(workers);

    let partials: Vec<ScoreHistogramPair> = tiles
        .par_chunks(per_worker)
        .map(|chunk| {
            let mut h = empty.clone();
            for &(bi, bj) in chunk {
                let rows = bi * block..((bi + 1) * block).min(n);
                for i in rows {
                    let cols = (bj * block).max(i + 1)..((bj + 1) * block).min(n);
                    let (zi, pi) = (set.row(i), &set.label(i).patient_id);
                    for j in cols {
                        h.add(crate::embedding::dot(zi, set.row(j)), *pi == set.label(j).patient_id);
                    }
                }
            }
            h
        })
        .collect();

    let mut total = empty;
    for p in &partials {
        total.merge(p)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Sweep every bin edge (plus "reject all") and return the one minimising
/// `|FAR - FRR|`; the lowest such edge wins ties.
pub fn eer(h: &ScoreHistogramPair) -> Result<EerPoint, VerifyError> {
    h.require_both()?;
    let (imp, gen) = h.tails();
    let (ni, ng) = (h.n_impostor as f64, h.n_genuine as f64);
    let mut best: Option<(f64, EerPoint)> = None;
    for k in 0..=h.bins() {
        let far = imp[k] as f64 / ni;
        let frr = 1.0 - gen[k] as f64 / ng;
        let gap = (far - frr).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, EerPoint { eer: (far + frr) / 2.0, threshold: h.edge(k), far, frr }));
        }
    }
    Ok(best.expect("sweep is non-empty").1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarAtFar {
    pub far_target: f64,
    pub tar: f64,
    pub threshold: f64,
    /// Empirical FAR at `threshold`.
    pub far: f64,
    /// Fewer than `1 / far_target` impostors: the estimate is reported but
    /// cannot resolve the target.
    pub unreliable: bool,
}

/// Lowest bin edge whose empirical FAR does not exceed `far_target`.
pub fn tar_at_far(h: &ScoreHistogramPair, far_target: f64) -> Result<TarAtFar, VerifyError> {
    h.require_both()?;
    let (imp, gen) = h.tails();
    let ni = h.n_impostor as f64;
    // tails are non-increasing, so the admissible edges form a suffix
    let k = imp.partition_point(|&c| c as f64 / ni > far_target);
    let unreliable = ni * far_target < 1.0;
    if unreliable {
        log::warn!("{} impostor scores cannot resolve FAR {far_target:e}", h.n_impostor);
    }
    Ok(TarAtFar {
        far_target,
        tar: gen[k] as f64 / h.n_genuine as f64,
        threshold: h.edge(k),
        far: imp[k] as f64 / ni,
        unreliable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
    pub frr: f64,
}

/// `n_points >= 2` thresholds evenly spaced over `[-1, 1]`, each snapped to
/// a bin edge. ROC is `(far, tar)`, DET is `(far, frr)` of the same points.
pub fn export_curves(h: &ScoreHistogramPair, n_points: usize) -> Result<Vec<CurvePoint>, VerifyError> {
    h.require_both()?;
    let n_points = n_points.max(2);
    let (imp, gen) = h.tails();
    let b = h.bins();
    let mut out = Vec::with_capacity(n_points);
    let mut last = usize::MAX;
    for i in 0..n_points {
        let k = ((i as f64 * b as f64) / (n_points - 1) as f64).round() as usize;
        if k == last {
            continue;
        }
        last = k;
        let tar = gen[k] as f64 / h.n_genuine as f64;
        out.push(CurvePoint { threshold: h.edge(k), far: imp[k] as f64 / h.n_impostor as f64, tar, frr: 1.0 - tar });
    }
    Ok(out)
}

/// Trapezoidal area under `(far, tar)` points ordered by threshold.
pub fn roc_auc(points: &[CurvePoint]) -> f64 {
    points.windows(2).map(|w| (w[0].far - w[1].far) * (w[0].tar + w[1].tar) / 2.0).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub bins: usize,
    pub n_genuine: u64,
    pub n_impostor: u64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub tar_at_far: Vec<TarAtFar>,
}

impl VerificationReport {
    pub fn from_histograms(h: &ScoreHistogramPair, far_targets: &[f64]) -> Result<Self, VerifyError> {
        let e = eer(h)?;
        let mut targets = far_targets.to_vec();
        targets.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            bins: h.bins(),
            n_genuine: h.n_genuine,
            n_impostor: h.n_impostor,
            eer: e.eer,
            eer_threshold: e.threshold,
            tar_at_far: targets.iter().map(|&f| tar_at_far(h, f)).collect::<Result<_, _>>()?,
        })
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Exact metrics from raw scores, used to check the histogram path.

    pub struct Scores {
        pub genuine: Vec<f64>,
        pub impostor: Vec<f64>,
    }

    pub fn all_pair_scores(set: &crate::embedding::EmbeddingSet) -> Scores {
        let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                let s = set.cosine(i, j);
                if set.label(i).patient_id == set.label(j).patient_id {
                    genuine.push(s);
                } else {
                    impostor.push(s);
                }
            }
        }
        Scores { genuine, impostor }
    }

    fn sorted(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    }

    /// `#{v >= t}` on an ascending slice.
    fn count_ge(v: &[f64], t: f64) -> usize {
        v.len() - v.partition_point(|&s| s < t)
    }

    /// Candidate thresholds: every distinct score plus +inf.
    fn candidates(g: &[f64], i: &[f64]) -> Vec<f64> {
        let mut t: Vec<f64> = g.iter().chain(i).copied().collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t.push(f64::INFINITY);
        t
    }

    /// `(eer, threshold)` minimising `|FAR - FRR|` over all thresholds.
    pub fn exact_eer(s: &Scores) -> (f64, f64) {
        let (g, i) = (sorted(&s.genuine), sorted(&s.impostor));
        let (ng, ni) = (g.len() as f64, i.len() as f64);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for t in candidates(&g, &i) {
            let far = count_ge(&i, t) as f64 / ni;
            let frr = 1.0 - count_ge(&g, t) as f64 / ng;
            if (far - frr).abs() < best.0 {
                best = ((far - frr).abs(), (far + frr) / 2.0, t);
            }
        }
        (best.1, best.2)
    }

    /// `(tar, threshold)` at the lowest threshold with FAR <= target.
    pub fn exact_tar_at_far(s: &Scores, far: f64) -> (f64, f64) {
        let (g, i) = (sorted(&s.genuine), sorted(&s.impostor));
        let ni = i.len() as f64;
        for t in candidates(&g, &i) {
            if count_ge(&i, t) as f64 / ni <= far {
                // the infimum of admissible thresholds sits just above the
                // largest rejected impostor score
                let below = i.partition_point(|&x| x < t);
                let tar = count_ge(&g, t) as f64 / g.len() as f64;
                return (tar, if below > 0 { i[below - 1].next_up() } else { t });
            }
        }
        unreachable!("+inf admits every target")
    }
}
