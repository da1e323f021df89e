//! The 13 fiducial features carried by every exam and the physiological
//! ranges used for outlier cleaning.

use serde::{Deserialize, Serialize};
use std::fmt;

pub const N_FEATURES: usize = 13;

/// Fiducial features in their fixed declared order. The discriminant is the
/// column index into every feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    VentricularRate = 0,
    PRInterval,
    QRSDuration,
    QTInterval,
    QTCorrected,
    PAxis,
    RAxis,
    TAxis,
    QOnset,
    QOffset,
    POnset,
    POffset,
    TOffset,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::VentricularRate,
        Feature::PRInterval,
        Feature::QRSDuration,
        Feature::QTInterval,
        Feature::QTCorrected,
        Feature::PAxis,
        Feature::RAxis,
        Feature::TAxis,
        Feature::QOnset,
        Feature::QOffset,
        Feature::POnset,
        Feature::POffset,
        Feature::TOffset,
    ];

    /// The eight non-redundant measurements used for per-pair correlations.
    /// The five onset/offset positions are linear combinations of these.
    pub const CORRELATION_SET: [Feature; 8] = [
        Feature::VentricularRate,
        Feature::PRInterval,
        Feature::QRSDuration,
        Feature::QTInterval,
        Feature::QTCorrected,
        Feature::PAxis,
        Feature::RAxis,
        Feature::TAxis,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::VentricularRate => "VentricularRate",
            Feature::PRInterval => "PRInterval",
            Feature::QRSDuration => "QRSDuration",
            Feature::QTInterval => "QTInterval",
            Feature::QTCorrected => "QTCorrected",
            Feature::PAxis => "PAxis",
            Feature::RAxis => "RAxis",
            Feature::TAxis => "TAxis",
            Feature::QOnset => "QOnset",
            Feature::QOffset => "QOffset",
            Feature::POnset => "POnset",
            Feature::POffset => "POffset",
            Feature::TOffset => "TOffset",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Feature::VentricularRate => "bpm",
            Feature::PAxis | Feature::RAxis | Feature::TAxis => "deg",
            _ => "ms",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inclusive bounds for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RangeError {
    #[error("range for {feature} has min {min} >= max {max}")]
    Inverted { feature: Feature, min: f64, max: f64 },
}

/// Per-feature inclusive bounds, indexed by [`Feature`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeTable {
    bounds: [Range; N_FEATURES],
}

impl RangeTable {
    pub fn new(bounds: [Range; N_FEATURES]) -> Result<Self, RangeError> {
        for f in Feature::ALL {
            let r = bounds[f.index()];
            if !(r.min < r.max) {
                return Err(RangeError::Inverted { feature: f, min: r.min, max: r.max });
            }
        }
        Ok(Self { bounds })
    }

    /// Extended physiological ranges used for outlier cleaning of clinical
    /// exams.
    pub fn extended_physiological() -> Self {
        let mut bounds = [Range { min: 0.0, max: 0.0 }; N_FEATURES];
        let table: [(Feature, f64, f64); N_FEATURES] = [
            (Feature::VentricularRate, 40.0, 120.0),
            (Feature::PRInterval, 100.0, 240.0),
            (Feature::QRSDuration, 60.0, 150.0),
            (Feature::QTInterval, 300.0, 500.0),
            (Feature::QTCorrected, 300.0, 500.0),
            (Feature::PAxis, -30.0, 90.0),
            (Feature::RAxis, -90.0, 120.0),
            (Feature::TAxis, -30.0, 120.0),
            (Feature::POnset, 50.0, 500.0),
            (Feature::POffset, 150.0, 550.0),
            (Feature::QOnset, 200.0, 650.0),
            (Feature::QOffset, 300.0, 750.0),
            (Feature::TOffset, 500.0, 1200.0),
        ];
        for (f, min, max) in table {
            bounds[f.index()] = Range { min, max };
        }
        Self { bounds }
    }

    pub fn get(&self, feature: Feature) -> Range {
        self.bounds[feature.index()]
    }

    pub fn contains_all(&self, values: &[f64; N_FEATURES]) -> bool {
        values.iter().zip(self.bounds.iter()).all(|(&v, r)| r.contains(v))
    }
}

impl Default for RangeTable {
    fn default() -> Self {
        Self::extended_physiological()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declared_order_matches_discriminants() {
        for (i, f) in Feature::ALL.iter().enumerate() {
            assert_eq!(f.index(), i);
            assert_eq!(Feature::from_name(f.name()), Some(*f));
        }
    }

    #[test]
    fn physiological_table_values() {
        let t = RangeTable::extended_physiological();
        assert_eq!(t.get(Feature::VentricularRate), Range { min: 40.0, max: 120.0 });
        assert_eq!(t.get(Feature::QTInterval), Range { min: 300.0, max: 500.0 });
        assert_eq!(t.get(Feature::RAxis), Range { min: -90.0, max: 120.0 });
        assert_eq!(t.get(Feature::TOffset), Range { min: 500.0, max: 1200.0 });
        assert_eq!(t.get(Feature::QOnset), Range { min: 200.0, max: 650.0 });
        // constructor accepts its own output
        assert!(RangeTable::new(t.bounds).is_ok());
    }

    #[test]
    fn inverted_range_rejected() {
        let mut b = RangeTable::default().bounds;
        b[Feature::PAxis.index()] = Range { min: 5.0, max: 5.0 };
        assert!(matches!(
            RangeTable::new(b),
            Err(RangeError::Inverted { feature: Feature::PAxis, .. })
        ));
    }
}
