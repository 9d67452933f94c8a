//! Sequence-level domain types shared by every stage.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// `T x D` matrix of per-frame feature vectors, `T >= 1`, `D >= 1`, all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence(Tensor2);

impl FeatureSequence {
    pub fn new(frames: Tensor2) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::shape(format!(
                "feature sequence must be at least 1x1, got {:?}",
                frames.shape()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::Numeric("feature sequence has non-finite entries".into()));
        }
        Ok(FeatureSequence(frames))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    pub fn as_tensor(&self) -> &Tensor2 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor2 {
        self.0
    }
}

/// Raw per-frame vectors before feature extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub id: String,
    pub frames: FeatureSequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Complete,
    Incomplete,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Complete => 1.0,
            Label::Incomplete => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Complete => "complete",
            Label::Incomplete => "incomplete",
        })
    }
}

/// A feature sequence with its video-level label and, for complete sequences
/// under full supervision, the 1-based completion frame `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    pub action: String,
    pub label: Label,
    pub tau: Option<usize>,
    pub features: FeatureSequence,
}

impl LabeledSequence {
    pub fn new(
        id: impl Into<String>,
        action: impl Into<String>,
        label: Label,
        tau: Option<usize>,
        features: FeatureSequence,
    ) -> Result<Self> {
        let id = id.into();
        if let Some(tau) = tau {
            if label != Label::Complete {
                return Err(Error::config(format!("{id}: tau given for an incomplete sequence")));
            }
            if tau < 1 || tau > features.len() {
                return Err(Error::config(format!(
                    "{id}: tau {tau} outside 1..={}",
                    features.len()
                )));
            }
        }
        Ok(LabeledSequence {
            id,
            action: action.into(),
            label,
            tau,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
