//! Metric learning and biometric evaluation on tabular ECG fiducial
//! features.
//!
//! The pipeline runs cohort refinement ([`cohort`]), embedding training
//! ([`learn`]) and operational evaluation: all-vs-all verification
//! ([`verify`]), closed-set identification ([`identify`]) and two-stage
//! open-set identification ([`openset`]). [`stats`] holds the two-sample
//! statistics used to compare genuine and impostor comparisons, and
//! [`synthgen`] generates cohorts with a known identity signature.

pub mod cohort;
pub mod embedding;
pub mod features;
pub mod identify;
pub mod learn;
pub mod openset;
pub mod rng;
pub mod stats;
pub mod synthgen;
pub mod verify;
