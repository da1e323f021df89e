use super::loss::{contrastive_loss, triplet_loss, ArcFaceHead};
use super::mining::{mine_triplets, MiningStrategy};
use super::mlp::{dropout_mask, MlpParams, MlpShape, Mode};
use super::norm::{normalize, NormStats};
use super::LearnError;
use crate::cohort::ExamTable;
use crate::embedding::{EmbeddingLabel, EmbeddingSet};
use crate::features::N_FEATURES;
use crate::identify::{evaluate_closed_set, GallerySpec, GalleryStrategy};
use crate::rng::{self, streams};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Contrastive,
    Triplet,
    Arcface,
}

impl std::str::FromStr for LossKind {
    type Err = LearnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contrastive" => Ok(Self::Contrastive),
            "triplet" => Ok(Self::Triplet),
            "arcface" => Ok(Self::Arcface),
            other => Err(LearnError::Config { field: "loss", reason: format!("unknown loss {other:?}") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub contrastive_margin: f64,
    pub triplet_alpha: f64,
    pub arcface_scale: f64,
    pub arcface_margin: f64,
    pub batch_size: usize,
    /// Exams per identity in a contrastive/triplet batch.
    pub samples_per_identity: usize,
    pub learning_rate: f64,
    /// 0 gives plain gradient descent.
    pub momentum: f64,
    pub epochs: usize,
    pub mining: MiningStrategy,
    pub dropout: f64,
    pub shape: MlpShape,
    pub seed: u64,
    /// Off in deterministic runs so logs compare byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Arcface,
            contrastive_margin: 1.0,
            triplet_alpha: 0.2,
            arcface_scale: 30.0,
            arcface_margin: 0.5,
            batch_size: 64,
            samples_per_identity: 4,
            learning_rate: 0.1,
            momentum: 0.0,
            epochs: 30,
            mining: MiningStrategy::SemiHard,
            dropout: 0.1,
            shape: MlpShape::default(),
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |field, reason: &str| Err(LearnError::Config { field, reason: reason.to_string() });
        if !(self.contrastive_margin >= 0.0) || !(self.triplet_alpha >= 0.0) || !(self.arcface_margin >= 0.0) {
            return bad("margin", "margins must be >= 0");
        }
        if self.arcface_margin >= std::f64::consts::PI {
            return bad("arcface_margin", "must be below pi");
        }
        if !(self.arcface_scale > 0.0) {
            return bad("arcface_scale", "must be > 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be >= 2");
        }
        if self.samples_per_identity < 2 {
            return bad("samples_per_identity", "must be >= 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be a positive number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if self.shape.input != N_FEATURES {
            return bad("shape", "input width must be 13");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the validation table has no probes.
    pub val_rank1: Option<f64>,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub head: Option<ArcFaceHead>,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept; `None` for zero epochs.
    pub best_epoch: Option<usize>,
    /// Train identities in class-index order.
    pub classes: Vec<String>,
}

fn normalized_matrix(table: &ExamTable, rows: &[usize], norm: &NormStats) -> Result<Array2<f64>, LearnError> {
    let mut x = Array2::zeros((rows.len(), N_FEATURES));
    for (r, &i) in rows.iter().enumerate() {
        let v = normalize(&table.records()[i].features, norm)?;
        for (c, f) in v.iter().enumerate() {
            x[[r, c]] = *f;
        }
    }
    Ok(x)
}

/// Eval-mode embeddings, one per exam in table order.
pub fn embed_table(params: &MlpParams, table: &ExamTable, norm: &NormStats) -> Result<EmbeddingSet, LearnError> {
    const CHUNK: usize = 512;
    let all: Vec<usize> = (0..table.len()).collect();
    let mut rows = Vec::with_capacity(table.len());
    for chunk in all.chunks(CHUNK) {
        let x = normalized_matrix(table, chunk, norm)?;
        let cache = params.forward(&x, Mode::Eval, None)?;
        rows.extend(cache.z.rows().into_iter().map(|r| r.to_vec()));
    }
    let labels = table
        .records()
        .iter()
        .map(|r| EmbeddingLabel {
            patient_id: r.patient_id.clone(),
            exam_id: r.exam_id.clone(),
            acquired_at: Some(r.acquired_at),
        })
        .collect();
    Ok(EmbeddingSet::from_rows_normalized(labels, &rows)?)
}

/// Row indices grouped into batches for one epoch.
fn arcface_batches<R: Rng>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

/// Identity-grouped batches: each identity's exams are shuffled and cut into
/// groups of `k`, the groups are shuffled and packed into batches.
fn grouped_batches<R: Rng>(groups: &[Vec<usize>], batch: usize, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut chunks = Vec::new();
    for g in groups {
        let mut g = g.clone();
        g.shuffle(rng);
        chunks.extend(g.chunks(k).map(<[usize]>::to_vec));
    }
    chunks.shuffle(rng);
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for c in chunks {
        if !cur.is_empty() && cur.len() + c.len() > batch {
            out.push(std::mem::take(&mut cur));
        }
        cur.extend(c);
    }
    match out.last_mut() {
        Some(last) if cur.len() < 2 => last.extend(cur),
        _ if cur.len() >= 2 => out.push(cur),
        _ => {}
    }
    out
}

struct Velocity {
    params: Vec<Vec<f64>>,
    head: Option<Array2<f64>>,
}

fn sgd_step(params: &mut MlpParams, grads: &[&[f64]], vel: &mut Velocity, lr: f64, momentum: f64) {
    for ((p, g), v) in params.trainable_mut().into_iter().zip(grads).zip(vel.params.iter_mut()) {
        for ((p, g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

/// Loss and `dL/dz` for one batch; `labels` are class indices.
#[allow(clippy::too_many_arguments)]
fn batch_objective<R: Rng>(
    cfg: &TrainConfig,
    z: &Array2<f64>,
    labels: &[usize],
    head: Option<&ArcFaceHead>,
    dw: Option<&mut Array2<f64>>,
    mining_rng: &mut R,
    pairing_rng: &mut R,
) -> Result<Option<(f64, Array2<f64>)>, LearnError> {
    let n = z.nrows();
    let row = |i: usize| z.row(i).to_vec();
    let mut dz = Array2::zeros(z.raw_dim());
    let mut add = |i: usize, g: &[f64], w: f64| {
        for (d, v) in dz.row_mut(i).iter_mut().zip(g) {
            *d += w * v;
        }
    };
    let total;
    match cfg.loss {
        LossKind::Contrastive => {
            let mut pairs = Vec::new();
            let mut genuine = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if labels[i] == labels[j] {
                        pairs.push((i, j, true));
                        genuine += 1;
                    }
                }
            }
            if genuine == 0 || labels.iter().all(|&l| l == labels[0]) {
                return Ok(None);
            }
            let mut drawn = 0;
            while drawn < genuine {
                let i = pairing_rng.random_range(0..n);
                let j = pairing_rng.random_range(0..n);
                if labels[i] != labels[j] {
                    pairs.push((i.min(j), i.max(j), false));
                    drawn += 1;
                }
            }
            let w = 1.0 / pairs.len() as f64;
            let mut sum = 0.0;
            for (i, j, y) in pairs {
                let (l, g1, g2) = contrastive_loss(&row(i), &row(j), y, cfg.contrastive_margin);
                sum += l;
                add(i, &g1, w);
                add(j, &g2, w);
            }
            total = sum * w;
        }
        LossKind::Triplet => {
            let rows: Vec<Vec<f64>> = (0..n).map(row).collect();
            let triplets = match mine_triplets(&rows, labels, cfg.mining, cfg.triplet_alpha, mining_rng) {
                Ok(t) => t,
                Err(LearnError::Mining(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let w = 1.0 / triplets.len() as f64;
            let mut sum = 0.0;
            for (a, p, ng) in triplets {
                let (l, [ga, gp, gn]) = triplet_loss(&rows[a], &rows[p], &rows[ng], cfg.triplet_alpha);
                sum += l;
                add(a, &ga, w);
                add(p, &gp, w);
                add(ng, &gn, w);
            }
            total = sum * w;
        }
        LossKind::Arcface => {
            let head = head.expect("arcface head");
            let dw = dw.expect("arcface head gradient");
            let norms: Vec<f64> = head.weights.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
            let w = 1.0 / n as f64;
            let mut sum = 0.0;
            for i in 0..n {
                let step = head.step_with_norms(&row(i), labels[i], dw, w, &norms);
                sum += step.loss;
                add(i, &step.dz, w);
            }
            total = sum * w;
        }
    }
    Ok(Some((total, dz)))
}

fn val_rank1(params: &MlpParams, val: &ExamTable, norm: &NormStats, seed: u64) -> Result<Option<f64>, LearnError> {
    if val.is_empty() {
        return Ok(None);
    }
    let set = embed_table(params, val, norm)?;
    match evaluate_closed_set(&set, GallerySpec { strategy: GalleryStrategy::RandomSingle, seed }) {
        Ok((summary, _)) => Ok(Some(summary.rank1)),
        Err(crate::identify::IdentifyError::NoProbes) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn as_divergence(e: LearnError, epoch: usize, batch: usize) -> LearnError {
    match e {
        LearnError::NumericFault { .. } => LearnError::Divergence { epoch, batch },
        other => other,
    }
}

/// Mini-batch gradient descent. Keeps the parameters of the epoch with the
/// best validation Rank@1 (earliest on ties; the last epoch when validation
/// is unavailable).
pub fn train(cfg: &TrainConfig, train: &ExamTable, val: &ExamTable, norm: &NormStats) -> Result<TrainOutcome, LearnError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(LearnError::EmptyTable);
    }
    let groups_by_id = train.by_patient();
    let classes: Vec<String> = groups_by_id.keys().map(|s| s.to_string()).collect();
    let class_of: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels: Vec<usize> = train.records().iter().map(|r| class_of[r.patient_id.as_str()]).collect();
    let groups: Vec<Vec<usize>> = groups_by_id.values().cloned().collect();
    let x_all = normalized_matrix(train, &(0..train.len()).collect::<Vec<_>>(), norm)?;

    let mut init_rng = rng::stream(cfg.seed, streams::INIT);
    let mut params = MlpParams::init(cfg.shape.clone(), cfg.dropout, &mut init_rng);
    let mut head = (cfg.loss == LossKind::Arcface).then(|| {
        ArcFaceHead::init(classes.len(), cfg.shape.embedding, cfg.arcface_scale, cfg.arcface_margin, &mut init_rng)
    });
    let mut batch_rng = rng::stream(cfg.seed, streams::BATCHES);
    let mut drop_rng = rng::stream(cfg.seed, streams::DROPOUT);
    let mut mining_rng = rng::stream(cfg.seed, streams::MINING);
    let mut pairing_rng = rng::stream(cfg.seed, streams::PAIRING);

    let mut vel = Velocity {
        params: params.trainable_mut().iter().map(|s| vec![0.0; s.len()]).collect(),
        head: head.as_ref().map(|h| Array2::zeros(h.weights.raw_dim())),
    };
    let mut best: Option<(usize, Option<f64>, MlpParams, Option<ArcFaceHead>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches = match cfg.loss {
            LossKind::Arcface => arcface_batches(train.len(), cfg.batch_size, &mut batch_rng),
            _ => grouped_batches(&groups, cfg.batch_size, cfg.samples_per_identity, &mut batch_rng),
        };
        let (mut loss_sum, mut counted) = (0.0, 0usize);
        for (b, rows) in batches.iter().enumerate() {
            let x = x_all.select(ndarray::Axis(0), rows);
            let mask = dropout_mask(&mut drop_rng, rows.len(), params.last_hidden_width(), params.dropout);
            let cache = params.forward(&x, Mode::Train, mask.as_ref()).map_err(|e| as_divergence(e, epoch, b))?;
            let batch_labels: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let mut dw = head.as_ref().map(|h| Array2::zeros(h.weights.raw_dim()));
            let Some((loss, dz)) =
                batch_objective(cfg, &cache.z, &batch_labels, head.as_ref(), dw.as_mut(), &mut mining_rng, &mut pairing_rng)?
            else {
                continue;
            };
            if !loss.is_finite() {
                return Err(LearnError::Divergence { epoch, batch: b });
            }
            loss_sum += loss;
            counted += 1;
            let (grads, _) = params.backward(&cache, &dz);
            sgd_step(&mut params, &grads.slices(), &mut vel, cfg.learning_rate, cfg.momentum);
            if let (Some(h), Some(dw), Some(v)) = (head.as_mut(), dw, vel.head.as_mut()) {
                for ((w, g), v) in h.weights.iter_mut().zip(dw.iter()).zip(v.iter_mut()) {
                    *v = cfg.momentum * *v + g;
                    *w -= cfg.learning_rate * *v;
                }
            }
            params.update_running_stats(&cache);
            if !params.all_finite() {
                return Err(LearnError::Divergence { epoch, batch: b });
            }
        }
        let train_loss = if counted == 0 { f64::NAN } else { loss_sum / counted as f64 };
        let rank1 = val_rank1(&params, val, norm, cfg.seed)?;
        log::info!("epoch {epoch}: loss {train_loss:.6} val rank@1 {rank1:?}");
        log.push(EpochLog {
            epoch,
            train_loss,
            val_rank1: rank1,
            wall_seconds: cfg.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        });
        let better = match &best {
            None => true,
            Some((_, prev, _, _)) => match (rank1, prev) {
                (Some(r), Some(p)) => r > *p,
                (None, _) => true,
                (Some(_), None) => true,
            },
        };
        if better {
            best = Some((epoch, rank1, params.clone(), head.clone()));
        }
    }

    Ok(match best {
        Some((epoch, _, params, head)) => TrainOutcome { params, head, log, best_epoch: Some(epoch), classes },
        None => TrainOutcome { params, head, log, best_epoch: None, classes },
    })
}
