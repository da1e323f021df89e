use super::loss::ArcFaceHead;
use super::mlp::MlpParams;
use super::norm::NormStats;
use super::train::{TrainConfig, TrainOutcome};
use super::LearnError;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const CHECKPOINT_FORMAT: &str = "ecgid-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained network plus everything needed to embed new exams with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub norm: NormStats,
    pub params: MlpParams,
    pub head: Option<ArcFaceHead>,
    pub classes: Vec<String>,
    pub best_epoch: Option<usize>,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, norm: NormStats, outcome: &TrainOutcome) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            norm,
            params: outcome.params.clone(),
            head: outcome.head.clone(),
            classes: outcome.classes.clone(),
            best_epoch: outcome.best_epoch,
        }
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), LearnError> {
        serde_json::to_writer(out, self).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, LearnError> {
        let c: Self = serde_json::from_reader(input).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        if c.params.shape.hidden.len() != c.params.hidden.len() || !c.params.all_finite() {
            return Err(LearnError::Checkpoint("inconsistent or non-finite parameters".into()));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::mlp::MlpShape;
    use crate::learn::norm::NormMode;
    use crate::rng;

    fn sample() -> Checkpoint {
        let mut r = rng::stream(5, 0);
        let params = MlpParams::init(MlpShape::default(), 0.1, &mut r);
        let head = ArcFaceHead::init(3, 128, 30.0, 0.5, &mut r);
        let outcome = TrainOutcome {
            params,
            head: Some(head),
            log: vec![],
            best_epoch: Some(2),
            classes: vec!["a".into(), "b".into(), "c".into()],
        };
        let norm = NormStats { mode: NormMode::TrainGlobal, mean: vec![0.1; 13], std: vec![1.0 / 3.0; 13] };
        Checkpoint::new(TrainConfig::default(), norm, &outcome)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), c);
    }

    #[test]
    fn foreign_format_is_rejected() {
        let mut c = sample();
        c.version = 9;
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert!(matches!(Checkpoint::read_from(&buf[..]), Err(LearnError::Checkpoint(_))));
        assert!(matches!(Checkpoint::read_from(&b"{"[..]), Err(LearnError::Checkpoint(_))));
    }
}
