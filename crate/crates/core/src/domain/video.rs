use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CaseId, ClipId, IllegalTransition, InstitutionId, RaterId};

/// Length of the pre-clipping window, in seconds.
pub const CLIP_DURATION_S: u32 = 90;
/// Frames per clip at 1 fps.
pub const CLIP_FRAMES: usize = 90;
/// Seconds between annotated frames.
pub const ANNOTATION_STRIDE: usize = 5;
/// Annotated frames per clip.
pub const ANNOTATED_FRAMES: usize = CLIP_FRAMES / ANNOTATION_STRIDE;

/// The fixed evaluation grid `{0, 5, ..., 85}`.
pub fn annotated_frame_indices() -> Vec<u32> {
    (0..ANNOTATED_FRAMES)
        .map(|i| (i * ANNOTATION_STRIDE) as u32)
        .collect()
}

/// A metadata value that may be missing. `Unknown` never compares equal to
/// any recorded value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Origin {
    Known(String),
    Unknown,
}

impl Origin {
    pub fn known(s: impl Into<String>) -> Self {
        Origin::Known(s.into())
    }

    pub fn as_known(&self) -> Option<&str> {
        match self {
            Origin::Known(s) => Some(s),
            Origin::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Approach {
    Laparoscopic,
    Robotic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CaseProvenance {
    pub country: Origin,
    pub device_vendor: Origin,
    pub approach: Approach,
    pub used_ioc: bool,
    pub used_icg: bool,
    pub source_institution: InstitutionId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    NotCholecystectomy,
    #[serde(rename = "NO_CONTINUOUS_90S")]
    NoContinuous90s,
    Bailout,
    IncompleteNoClipping,
}

/// One screening rater's verdict on a donated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreAnnotation {
    pub rater_id: RaterId,
    pub eligible: bool,
    pub exclusion_reason: Option<ExclusionReason>,
    /// Seconds from video start; absent when no clipping event was captured.
    pub clipping_timestamp: Option<f64>,
    pub used_ioc: bool,
    pub used_icg: bool,
    pub approach: Approach,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreAnnotationError {
    #[error("eligible verdict must not carry an exclusion reason, and an excluded one must")]
    ReasonMismatch,
    #[error("eligible verdict needs a clipping timestamp of at least 90 s, got {0:?}")]
    WindowTooShort(Option<f64>),
}

impl PreAnnotation {
    pub fn validate(&self) -> Result<(), PreAnnotationError> {
        if self.eligible == self.exclusion_reason.is_some() {
            return Err(PreAnnotationError::ReasonMismatch);
        }
        if self.eligible {
            match self.clipping_timestamp {
                Some(t) if t >= f64::from(CLIP_DURATION_S) => {}
                other => return Err(PreAnnotationError::WindowTooShort(other)),
            }
        }
        Ok(())
    }
}

/// A 90-second, 1 fps clip cut from a qualified case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualifiedClip {
    pub clip_id: ClipId,
    pub case_id: CaseId,
    pub duration_s: u32,
    pub frame_rate: u32,
    /// Source window `[window_start_s, window_end_s)`.
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub annotated_frame_indices: Vec<u32>,
    pub blinded: bool,
    pub media_uri: String,
}

impl QualifiedClip {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VideoState {
    Received,
    Screening,
    Excluded(ExclusionReason),
    Reprocessing,
    Qualified,
    Clipped,
    InAnnotation,
    FullyAnnotated,
    Fused,
}

impl VideoState {
    /// Position along the main flow; `Excluded` sits beside `Qualified`.
    pub fn stage(&self) -> u8 {
        match self {
            VideoState::Received => 0,
            VideoState::Screening => 1,
            VideoState::Excluded(_) | VideoState::Reprocessing => 2,
            VideoState::Qualified => 3,
            VideoState::Clipped => 4,
            VideoState::InAnnotation => 5,
            VideoState::FullyAnnotated => 6,
            VideoState::Fused => 7,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, VideoState::Excluded(_) | VideoState::Fused)
    }
}

impl fmt::Display for VideoState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VideoState::Excluded(r) => write!(f, "Excluded({r:?})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VideoEvent {
    ScreeningStarted,
    /// One more rater joined the adjudication chain without closing it.
    PreAnnotationRecorded { verdict: PreAnnotation },
    /// The chain closed; `verdict` is the concordant pair's shared verdict.
    ConcordanceReached {
        verdict: PreAnnotation,
        needs_blur: bool,
    },
    ReprocessingDone,
    ClipExtracted { clip: QualifiedClip },
    AnnotationStarted,
    AnnotationCompleted,
    LabelsFused,
}

impl VideoEvent {
    pub fn name(&self) -> &'static str {
        match self {
            VideoEvent::ScreeningStarted => "ScreeningStarted",
            VideoEvent::PreAnnotationRecorded { .. } => "PreAnnotationRecorded",
            VideoEvent::ConcordanceReached { .. } => "ConcordanceReached",
            VideoEvent::ReprocessingDone => "ReprocessingDone",
            VideoEvent::ClipExtracted { .. } => "ClipExtracted",
            VideoEvent::AnnotationStarted => "AnnotationStarted",
            VideoEvent::AnnotationCompleted => "AnnotationCompleted",
            VideoEvent::LabelsFused => "LabelsFused",
        }
    }
}

/// A donated case moving through screening, clipping and annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCase {
    pub case_id: CaseId,
    pub provenance: CaseProvenance,
    pub media_uri: String,
    pub duration_s: f64,
    pub state: VideoState,
    pub preannotation_chain: Vec<PreAnnotation>,
    /// Set once the adjudication chain closes (including for excluded cases).
    pub final_metadata: Option<PreAnnotation>,
    pub needs_blur: bool,
    pub clip: Option<QualifiedClip>,
}

impl VideoCase {
    pub fn received(
        case_id: CaseId,
        provenance: CaseProvenance,
        media_uri: impl Into<String>,
        duration_s: f64,
    ) -> Self {
        Self {
            case_id,
            provenance,
            media_uri: media_uri.into(),
            duration_s,
            state: VideoState::Received,
            preannotation_chain: Vec::new(),
            final_metadata: None,
            needs_blur: false,
            clip: None,
        }
    }

    /// Applies `event`, returning the successor case. The input is left
    /// untouched on error.
    pub fn transition(&self, event: &VideoEvent) -> Result<VideoCase, IllegalTransition> {
        use VideoEvent as E;
        use VideoState as S;

        let illegal = || IllegalTransition {
            state: self.state.to_string(),
            event: event.name().to_owned(),
        };
        let mut next = self.clone();
        match (&self.state, event) {
            (S::Received, E::ScreeningStarted) => next.state = S::Screening,
            (S::Screening, E::PreAnnotationRecorded { verdict }) => {
                next.preannotation_chain.push(verdict.clone());
            }
            (S::Screening, E::ConcordanceReached { verdict, needs_blur }) => {
                if verdict.validate().is_err() {
                    return Err(illegal());
                }
                next.preannotation_chain.push(verdict.clone());
                next.final_metadata = Some(verdict.clone());
                next.needs_blur = *needs_blur && verdict.eligible;
                next.state = match verdict.exclusion_reason {
                    Some(reason) => S::Excluded(reason),
                    None if *needs_blur => S::Reprocessing,
                    None => S::Qualified,
                };
            }
            (S::Reprocessing, E::ReprocessingDone) => {
                next.needs_blur = false;
                next.state = S::Qualified;
            }
            (S::Qualified, E::ClipExtracted { clip }) => {
                if clip.case_id != self.case_id {
                    return Err(illegal());
                }
                next.clip = Some(clip.clone());
                next.state = S::Clipped;
            }
            (S::Clipped, E::AnnotationStarted) => next.state = S::InAnnotation,
            (S::InAnnotation, E::AnnotationCompleted) => next.state = S::FullyAnnotated,
            (S::FullyAnnotated, E::LabelsFused) => next.state = S::Fused,
            _ => return Err(illegal()),
        }
        Ok(next)
    }
}

/// Free-function form of [`VideoCase::transition`].
pub fn video_transition(case: &VideoCase, event: &VideoEvent) -> Result<VideoCase, IllegalTransition> {
    case.transition(event)
}
