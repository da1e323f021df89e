use crate::fail::Validation;
use anyhow::{Context, Result};
use ecgid_core::cohort::{ColumnSchema, SplitFractions};
use ecgid_core::identify::GalleryStrategy;
use ecgid_core::learn::{LossKind, MiningStrategy, MlpShape, NormMode, TrainConfig};
use ecgid_core::openset::{FusionKind, ProtocolSizes, DEFAULT_COHORT_SIZE, DEFAULT_K};
use ecgid_core::synthgen::SynthParams;
use ecgid_core::verify::{DEFAULT_BINS, DEFAULT_BLOCK};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub synth: SynthSection,
    pub prepare: PrepareSection,
    pub stats: StatsSection,
    pub train: TrainSection,
    pub embed: EmbedSection,
    pub verify: VerifySection,
    pub identify: IdentifySection,
    pub openset: OpenSetSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            paths: PathsSection::default(),
            synth: SynthSection::default(),
            prepare: PrepareSection::default(),
            stats: StatsSection::default(),
            train: TrainSection::default(),
            embed: EmbedSection::default(),
            verify: VerifySection::default(),
            identify: IdentifySection::default(),
            openset: OpenSetSection::default(),
        }
    }
}

/// Unset entries default to fixed file names under `work_dir`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub work_dir: Option<PathBuf>,
    pub exams: Option<PathBuf>,
    pub refined: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub intra_pairs: Option<PathBuf>,
    pub inter_pairs: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub cohort_embeddings: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_patients: usize,
    pub exams_min: usize,
    pub exams_max: usize,
    pub latent_dim: usize,
    pub within_noise: f64,
    pub between_spread: f64,
    pub drift_per_month: f64,
    pub off_device_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        Self {
            n_patients: p.n_patients,
            exams_min: p.exams_per_patient.0,
            exams_max: p.exams_per_patient.1,
            latent_dim: p.latent_dim,
            within_noise: p.within_noise,
            between_spread: p.between_spread,
            drift_per_month: p.drift_per_month,
            off_device_fraction: p.off_device_fraction,
        }
    }
}

impl SynthSection {
    pub fn params(&self, seed: u64) -> SynthParams {
        SynthParams {
            n_patients: self.n_patients,
            exams_per_patient: (self.exams_min, self.exams_max),
            latent_dim: self.latent_dim,
            within_noise: self.within_noise,
            between_spread: self.between_spread,
            drift_per_month: self.drift_per_month,
            off_device_fraction: self.off_device_fraction,
            feature_map: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub columns: Option<ColumnSchema>,
    pub min_exams: usize,
    pub min_gap_days: i64,
    pub cap: usize,
    /// Empty `categorical_allowed` skips the categorical step.
    pub categorical_column: String,
    pub categorical_allowed: Vec<String>,
    pub fractions: SplitFractions,
    pub min_train_exams: usize,
    pub window_months: (f64, f64),
}

impl Default for PrepareSection {
    fn default() -> Self {
        Self {
            columns: None,
            min_exams: 2,
            min_gap_days: 30,
            cap: 10,
            categorical_column: "Device".into(),
            categorical_allowed: vec!["ELI250".into()],
            fractions: SplitFractions { train: 0.7, val: 0.15, test: 0.15 },
            min_train_exams: 3,
            window_months: (6.0, 18.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub overlap_bins: usize,
    /// Also compare INTRA/INTER embedding distances on the embedded split.
    pub embeddings: bool,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self { overlap_bins: ecgid_core::stats::DEFAULT_OVERLAP_BINS, embeddings: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub loss: LossKind,
    pub norm: NormMode,
    pub contrastive_margin: f64,
    pub triplet_alpha: f64,
    pub arcface_scale: f64,
    pub arcface_margin: f64,
    pub batch_size: usize,
    pub samples_per_identity: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub mining: MiningStrategy,
    pub dropout: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            loss: t.loss,
            norm: NormMode::TrainGlobal,
            contrastive_margin: t.contrastive_margin,
            triplet_alpha: t.triplet_alpha,
            arcface_scale: t.arcface_scale,
            arcface_margin: t.arcface_margin,
            batch_size: t.batch_size,
            samples_per_identity: t.samples_per_identity,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            epochs: t.epochs,
            mining: t.mining,
            dropout: t.dropout,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64, record_wall_time: bool) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            contrastive_margin: self.contrastive_margin,
            triplet_alpha: self.triplet_alpha,
            arcface_scale: self.arcface_scale,
            arcface_margin: self.arcface_margin,
            batch_size: self.batch_size,
            samples_per_identity: self.samples_per_identity,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            mining: self.mining,
            dropout: self.dropout,
            shape: MlpShape::default(),
            seed,
            record_wall_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub split: ecgid_core::cohort::Split,
    /// Split embedded for the open-set score-normalisation cohort.
    pub cohort_split: ecgid_core::cohort::Split,
}

impl Default for EmbedSection {
    fn default() -> Self {
        use ecgid_core::cohort::Split;
        Self { split: Split::Test, cohort_split: Split::Train }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub bins: usize,
    pub block: usize,
    pub far_targets: Vec<f64>,
    pub curve_points: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, block: DEFAULT_BLOCK, far_targets: vec![1e-2, 1e-3, 1e-4], curve_points: 1001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifySection {
    pub strategy: GalleryStrategy,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self { strategy: GalleryStrategy::RandomSingle }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenSetSection {
    pub k: usize,
    pub cohort_size: usize,
    pub gallery: usize,
    pub known_probes: usize,
    pub impostor_probes: usize,
    pub strategies: Vec<FusionKind>,
    pub far_targets: Vec<f64>,
}

impl Default for OpenSetSection {
    fn default() -> Self {
        let s = ProtocolSizes::DESK;
        Self {
            k: DEFAULT_K,
            cohort_size: DEFAULT_COHORT_SIZE,
            gallery: s.gallery,
            known_probes: s.known_probes,
            impostor_probes: s.impostor_probes,
            strategies: FusionKind::ALL.to_vec(),
            far_targets: vec![1e-1, 1e-2],
        }
    }
}

impl OpenSetSection {
    pub fn sizes(&self) -> ProtocolSizes {
        ProtocolSizes { gallery: self.gallery, known_probes: self.known_probes, impostor_probes: self.impostor_probes }
    }
}

/// Resolved artifact locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub exams: PathBuf,
    pub refined: PathBuf,
    pub split: PathBuf,
    pub intra_pairs: PathBuf,
    pub inter_pairs: PathBuf,
    pub checkpoint: PathBuf,
    pub embeddings: PathBuf,
    pub cohort_embeddings: PathBuf,
    pub reports: PathBuf,
}

pub const DEFAULT_WORK_DIR: &str = "ecgid-run";

/// Env var wins over the config entry, which wins over `work_dir/<default>`.
pub fn resolve_paths(p: &PathsSection, work_dir_flag: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Paths {
    let work_dir = work_dir_flag
        .map(Path::to_path_buf)
        .or_else(|| env("ECGID_WORK_DIR").map(PathBuf::from))
        .or_else(|| p.work_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_WORK_DIR));
    let pick = |var: &str, configured: &Option<PathBuf>, default: &str| {
        env(var).map(PathBuf::from).or_else(|| configured.clone()).unwrap_or_else(|| work_dir.join(default))
    };
    Paths {
        exams: pick("ECGID_EXAMS", &p.exams, "exams.csv"),
        refined: pick("ECGID_REFINED", &p.refined, "refined.csv"),
        split: pick("ECGID_SPLIT", &p.split, "split.txt"),
        intra_pairs: pick("ECGID_INTRA_PAIRS", &p.intra_pairs, "pairs_intra.txt"),
        inter_pairs: pick("ECGID_INTER_PAIRS", &p.inter_pairs, "pairs_inter.txt"),
        checkpoint: pick("ECGID_CHECKPOINT", &p.checkpoint, "model.json"),
        embeddings: pick("ECGID_EMBEDDINGS", &p.embeddings, "embeddings.bin"),
        cohort_embeddings: pick("ECGID_COHORT_EMBEDDINGS", &p.cohort_embeddings, "cohort_embeddings.bin"),
        reports: pick("ECGID_REPORTS", &p.reports, "reports"),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Validation(format!("config {}: {e}", path.display())).into())
    }

    /// The resolved configuration without `paths`, as canonical JSON.
    pub fn canonical_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serialises");
        v.as_object_mut().expect("table").remove("paths");
        v
    }

    /// Artifact locations are left out so a run can be replayed elsewhere.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().to_string().as_bytes()))
    }
}
