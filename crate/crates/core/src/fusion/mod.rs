//! Ground-truth fusion of three-annotator assessments.
//!
//! Each (frame, criterion) cell yields a majority-vote label, a
//! confidence-aware soft label `(1/3) * sum(0.5 + (l_i - 0.5) * c_i)`, and
//! an agreement class. The same triples drive the expert reference
//! predictors used to bracket team performance.

mod report;
mod stats;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{
    Assessment, CaseProvenance, ClipId, CvsCriterion, LabelTriple, PerCriterion, Split, ANNOTATED_FRAMES,
    ANNOTATION_STRIDE,
};
use crate::scalar::Scalar;

pub use report::{classification_report, f1_score, overall_macro_f1, round_half_up_2, ClassificationReport, ShapeMismatch};
pub use stats::{dataset_stats, AgreementCounts, ConfidenceSummary, DatasetStats, MeanSd, SplitStats};

/// Majority vote over three binary labels.
pub fn fuse_mode<T: Scalar>(t: &LabelTriple<T>) -> bool {
    t.positives() >= 2
}

/// Confidence-aware soft label.
pub fn fuse_soft<T: Scalar>(t: &LabelTriple<T>) -> T {
    let half = T::half();
    let sum = t
        .labels
        .iter()
        .zip(t.confidences.iter())
        .fold(T::zero(), |acc, (&l, &c)| {
            let l = if l { T::one() } else { T::zero() };
            acc + (half + (l - half) * c)
        });
    sum / T::from_count(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AgreementClass {
    /// All three annotators concur.
    Full,
    /// Exactly two concur (three binary labels cannot all differ).
    Partial,
}

pub fn agreement_class<T: Scalar>(t: &LabelTriple<T>) -> AgreementClass {
    match t.positives() {
        0 | 3 => AgreementClass::Full,
        _ => AgreementClass::Partial,
    }
}

/// Fused targets for one (clip, frame, criterion) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFrameLabel<T> {
    pub clip_id: ClipId,
    pub frame_index: u32,
    pub criterion: CvsCriterion,
    pub mode_label: bool,
    pub soft_label: T,
    pub agreement: AgreementClass,
}

/// One line of the fused ground-truth file: all three criteria of one
/// annotated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFrame<T> {
    pub clip_id: ClipId,
    pub frame_index: u32,
    pub mode: PerCriterion<bool>,
    pub soft: PerCriterion<T>,
    pub agreement: PerCriterion<AgreementClass>,
}

impl<T: Scalar> FusedFrame<T> {
    pub fn label(&self, k: CvsCriterion) -> FusedFrameLabel<T> {
        FusedFrameLabel {
            clip_id: self.clip_id.clone(),
            frame_index: self.frame_index,
            criterion: k,
            mode_label: self.mode[k],
            soft_label: self.soft[k],
            agreement: self.agreement[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FusionError {
    #[error("clip {clip}: expected 3 assessments from distinct annotators, got {got}")]
    MissingAssessments { clip: ClipId, got: usize },
    #[error("clip {clip}: assessment for another clip ({other})")]
    MixedClips { clip: ClipId, other: ClipId },
    #[error("clip {clip}: malformed assessment: {reason}")]
    Malformed { clip: ClipId, reason: String },
}

/// Checks that `assessments` are exactly three valid, distinct-annotator
/// verdicts on the same clip, and returns them as an array.
pub fn three_assessments(assessments: &[Assessment]) -> Result<[&Assessment; 3], FusionError> {
    let clip = assessments
        .first()
        .map(|a| a.clip_id.clone())
        .unwrap_or_else(|| ClipId::new(""));
    let distinct: BTreeSet<_> = assessments.iter().map(|a| &a.annotator_id).collect();
    if assessments.len() != 3 || distinct.len() != 3 {
        return Err(FusionError::MissingAssessments {
            clip,
            got: distinct.len(),
        });
    }
    for a in assessments {
        if a.clip_id != clip {
            return Err(FusionError::MixedClips {
                clip,
                other: a.clip_id.clone(),
            });
        }
        a.validate().map_err(|e| FusionError::Malformed {
            clip: clip.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok([&assessments[0], &assessments[1], &assessments[2]])
}

/// Label triples for every annotated frame position.
pub fn clip_triples<T: Scalar>(assessments: &[Assessment]) -> Result<Vec<PerCriterion<LabelTriple<T>>>, FusionError> {
    let three = three_assessments(assessments)?;
    Ok((0..ANNOTATED_FRAMES)
        .map(|f| PerCriterion::from_fn(|k| LabelTriple::from_assessments(three, f, k)))
        .collect())
}

/// Fuses one clip's three assessments into 18 ground-truth frames.
pub fn fuse_clip<T: Scalar>(assessments: &[Assessment]) -> Result<Vec<FusedFrame<T>>, FusionError> {
    let triples = clip_triples::<T>(assessments)?;
    let clip_id = assessments[0].clip_id.clone();
    Ok(triples
        .iter()
        .enumerate()
        .map(|(pos, t)| FusedFrame {
            clip_id: clip_id.clone(),
            frame_index: (pos * ANNOTATION_STRIDE) as u32,
            mode: t.map(fuse_mode),
            soft: t.map(fuse_soft),
            agreement: t.map(agreement_class),
        })
        .collect())
}

/// Video-level label per criterion: mode of the annotators' window verdicts.
pub fn fuse_video_level(assessments: &[Assessment]) -> Result<PerCriterion<bool>, FusionError> {
    let three = three_assessments(assessments)?;
    Ok(PerCriterion::from_fn(|k| {
        three.iter().filter(|a| a.video_level[k]).count() >= 2
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ExpertBound {
    /// Emits the rater mode everywhere.
    Upper,
    /// Emits the mode on unanimous cells and the minority label elsewhere.
    Lower,
}

/// Expert reference predictions for one clip, one entry per annotated frame.
pub fn expert_bound_predict(assessments: &[Assessment], bound: ExpertBound) -> Result<Vec<PerCriterion<bool>>, FusionError> {
    let triples = clip_triples::<f64>(assessments)?;
    Ok(triples
        .iter()
        .map(|t| {
            t.map(|cell| {
                let mode = fuse_mode(cell);
                match (bound, agreement_class(cell)) {
                    (ExpertBound::Upper, _) | (ExpertBound::Lower, AgreementClass::Full) => mode,
                    (ExpertBound::Lower, AgreementClass::Partial) => !mode,
                }
            })
        })
        .collect())
}

/// A fused pool entry: one clip, its metadata, and its assessments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedClip {
    pub clip_id: ClipId,
    pub split: Split,
    pub provenance: CaseProvenance,
    pub assessments: Vec<Assessment>,
}

impl AnnotatedClip {
    pub fn mean_confidence(&self) -> Option<f64> {
        if self.assessments.is_empty() {
            return None;
        }
        Some(self.assessments.iter().map(|a| a.confidence).sum::<f64>() / self.assessments.len() as f64)
    }
}
