use serde::{Deserialize, Serialize};

use super::{AnnotatorId, ClipId, CvsCriterion, PerCriterion, ANNOTATED_FRAMES};
use crate::scalar::Scalar;

/// Binary labels for the three criteria at one annotated frame.
pub type FrameLabels = PerCriterion<bool>;

/// One annotator's verdict on one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub clip_id: ClipId,
    pub annotator_id: AnnotatorId,
    /// One entry per annotated frame, in grid order.
    pub frame_labels: Vec<FrameLabels>,
    /// Per-clip confidence in `[0, 1]`, shared by all three criteria.
    pub confidence: f64,
    /// Whether each criterion was achieved anywhere in the window.
    pub video_level: PerCriterion<bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssessmentError {
    #[error("expected {ANNOTATED_FRAMES} annotated frames, got {0}")]
    FrameCount(usize),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("video-level {0} achieved but no annotated frame marks it")]
    VideoLevelWithoutFrame(CvsCriterion),
}

impl Assessment {
    pub fn validate(&self) -> Result<(), AssessmentError> {
        if self.frame_labels.len() != ANNOTATED_FRAMES {
            return Err(AssessmentError::FrameCount(self.frame_labels.len()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(AssessmentError::Confidence(self.confidence));
        }
        for k in CvsCriterion::ALL {
            if self.video_level[k] && !self.frame_labels.iter().any(|f| f[k]) {
                return Err(AssessmentError::VideoLevelWithoutFrame(k));
            }
        }
        Ok(())
    }
}

/// Three independent annotators' labels and confidences for one
/// (frame, criterion) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelTriple<T> {
    pub labels: [bool; 3],
    pub confidences: [T; 3],
}

impl<T: Scalar> LabelTriple<T> {
    pub fn new(labels: [bool; 3], confidences: [T; 3]) -> Self {
        Self { labels, confidences }
    }

    /// Triple for annotated frame position `frame` and criterion `k`.
    pub fn from_assessments(assessments: [&Assessment; 3], frame: usize, k: CvsCriterion) -> Self {
        Self {
            labels: assessments.map(|a| a.frame_labels[frame][k]),
            confidences: assessments.map(|a| T::from_f64_lossy(a.confidence)),
        }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}
