use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnnotatorId, ClipId, IllegalTransition};

/// Minimum exam correspondence with the expert key.
pub const PASS_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnnotatorState {
    Contacted,
    Eligible,
    /// Rejected at the eligibility check (e.g. no clinical background).
    Ineligible,
    Training,
    ExamTaken,
    /// Passed the exam; waiting for organizer activation.
    Qualified,
    Failed,
    Active,
    Paused,
    Dropped,
}

impl AnnotatorState {
    pub const ALL: [AnnotatorState; 10] = [
        AnnotatorState::Contacted,
        AnnotatorState::Eligible,
        AnnotatorState::Ineligible,
        AnnotatorState::Training,
        AnnotatorState::ExamTaken,
        AnnotatorState::Qualified,
        AnnotatorState::Failed,
        AnnotatorState::Active,
        AnnotatorState::Paused,
        AnnotatorState::Dropped,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            AnnotatorState::Ineligible | AnnotatorState::Failed | AnnotatorState::Dropped
        )
    }

    /// Milestone index along the recruitment funnel.
    pub fn funnel_depth(self) -> u8 {
        match self {
            AnnotatorState::Contacted | AnnotatorState::Ineligible => 0,
            AnnotatorState::Eligible | AnnotatorState::Training => 1,
            AnnotatorState::ExamTaken | AnnotatorState::Failed => 2,
            AnnotatorState::Qualified => 3,
            AnnotatorState::Active | AnnotatorState::Paused => 4,
            AnnotatorState::Dropped => 0,
        }
    }
}

impl fmt::Display for AnnotatorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnnotatorEvent {
    EligibilityPassed,
    EligibilityFailed,
    TrainingStarted,
    ExamSubmitted { score: f64 },
    ExamGraded,
    Activated,
    Paused,
    Resumed,
    DroppedOut,
}

impl AnnotatorEvent {
    pub fn name(&self) -> &'static str {
        match self {
            AnnotatorEvent::EligibilityPassed => "EligibilityPassed",
            AnnotatorEvent::EligibilityFailed => "EligibilityFailed",
            AnnotatorEvent::TrainingStarted => "TrainingStarted",
            AnnotatorEvent::ExamSubmitted { .. } => "ExamSubmitted",
            AnnotatorEvent::ExamGraded => "ExamGraded",
            AnnotatorEvent::Activated => "Activated",
            AnnotatorEvent::Paused => "Paused",
            AnnotatorEvent::Resumed => "Resumed",
            AnnotatorEvent::DroppedOut => "DroppedOut",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub clinical_background: bool,
    pub contact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotator {
    pub annotator_id: AnnotatorId,
    pub state: AnnotatorState,
    pub profile: AnnotatorProfile,
    pub exam_score: Option<f64>,
    pub assigned_clips: BTreeSet<ClipId>,
    pub completed_count: u32,
    /// State the annotator left from, when `state == Dropped`.
    pub dropped_from: Option<AnnotatorState>,
}

impl Annotator {
    pub fn contacted(annotator_id: AnnotatorId, profile: AnnotatorProfile) -> Self {
        Self {
            annotator_id,
            state: AnnotatorState::Contacted,
            profile,
            exam_score: None,
            assigned_clips: BTreeSet::new(),
            completed_count: 0,
            dropped_from: None,
        }
    }

    /// Deepest funnel milestone ever reached, looking through a dropout.
    pub fn furthest_state(&self) -> AnnotatorState {
        match (self.state, self.dropped_from) {
            (AnnotatorState::Dropped, Some(from)) => from,
            (s, _) => s,
        }
    }

    pub fn transition(&self, event: &AnnotatorEvent) -> Result<Annotator, IllegalTransition> {
        use AnnotatorEvent as E;
        use AnnotatorState as S;

        let illegal = || IllegalTransition {
            state: self.state.to_string(),
            event: event.name().to_owned(),
        };
        let mut next = self.clone();
        match (self.state, event) {
            (S::Contacted, E::EligibilityPassed) if self.profile.clinical_background => {
                next.state = S::Eligible;
            }
            (S::Contacted, E::EligibilityFailed) => next.state = S::Ineligible,
            (S::Eligible, E::TrainingStarted) => next.state = S::Training,
            (S::Training, E::ExamSubmitted { score }) if (0.0..=1.0).contains(score) => {
                next.exam_score = Some(*score);
                next.state = S::ExamTaken;
            }
            (S::ExamTaken, E::ExamGraded) => {
                let score = self.exam_score.ok_or_else(illegal)?;
                next.state = if score >= PASS_THRESHOLD {
                    S::Qualified
                } else {
                    S::Failed
                };
            }
            (S::Qualified, E::Activated) => next.state = S::Active,
            (S::Active, E::Paused) => next.state = S::Paused,
            (S::Paused, E::Resumed) => next.state = S::Active,
            (s, E::DroppedOut) if !s.is_terminal() => {
                next.dropped_from = Some(s);
                next.state = S::Dropped;
            }
            _ => return Err(illegal()),
        }
        Ok(next)
    }
}

/// Free-function form of [`Annotator::transition`].
pub fn annotator_transition(a: &Annotator, event: &AnnotatorEvent) -> Result<Annotator, IllegalTransition> {
    a.transition(event)
}
