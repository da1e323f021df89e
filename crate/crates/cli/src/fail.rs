use ecgid_core::cohort::CohortError;
use ecgid_core::learn::LearnError;
use ecgid_core::synthgen::SynthError;
use std::path::Path;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// Bad configuration or a missing upstream artifact.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Validation(pub String);

pub fn require_input(path: &Path, produced_by: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Validation(format!("missing input {} (produced by `ecgid {produced_by}`)", path.display())).into())
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.is::<Validation>()
            || e.is::<SynthError>()
            || matches!(e.downcast_ref::<LearnError>(), Some(LearnError::Config { .. }))
            || matches!(
                e.downcast_ref::<CohortError>(),
                Some(CohortError::InvalidParameter(_) | CohortError::EmptySplit(_) | CohortError::MissingColumn(_))
            )
    });
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}
