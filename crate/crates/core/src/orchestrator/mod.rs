//! Event-sourced campaign engine.
//!
//! Platform state is a pure fold over an append-only event log. Each event
//! targets one entity stream and carries that stream's next sequence
//! number. Applying an event may queue effects (reminders, ticks, fusion
//! jobs, organizer notifications); their execution outcomes are recorded as
//! events too, so a replay reproduces effect bookkeeping exactly.

mod clock;
mod effects;
mod engine;
mod errorlog;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{
    Annotator, AnnotatorEvent, AnnotatorId, AnnotatorProfile, AnnotatorState, Assessment, CaseId, ClipId,
    IllegalTransition, TeamId, Timestamp, VideoCase, VideoEvent, VideoState,
};
use crate::evaluation::TeamScores;
use crate::fusion::{fuse_clip, FusedFrame};
use crate::scheduler::{AssignmentBatch, CoverageError, CoverageSignal, CoverageState, RevokedAssignment, SchedulerConfig};

pub use clock::{Clock, ManualClock, SystemClock};
pub use effects::{
    Effect, EffectKind, EffectOutcome, EffectReport, EffectStatus, Notification, Notifier, NotifyError,
    RecordingNotifier, RetryPolicy,
};
pub use engine::{EngineError, Orchestrator};
pub use errorlog::{ErrorLog, ErrorRecord};
pub use store::{
    restore, snapshot, EventStore, FileStore, MemoryStore, RestoreReport, RestoreSource, Snapshot, StoreError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityKind {
    Video,
    Annotator,
    Coverage,
    Submission,
    Effect,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub id: String,
}

impl EntityRef {
    pub fn new(kind: EntityKind, id: impl Into<String>) -> Self {
        Self { kind, id: id.into() }
    }

    pub fn video(id: &CaseId) -> Self {
        Self::new(EntityKind::Video, id.as_str())
    }

    pub fn annotator(id: &AnnotatorId) -> Self {
        Self::new(EntityKind::Annotator, id.as_str())
    }

    /// The campaign has a single coverage stream.
    pub fn coverage() -> Self {
        Self::new(EntityKind::Coverage, "campaign")
    }

    fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = serde_json::to_value(self.kind).ok();
        let kind = kind.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        write!(f, "{kind}/{}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    CaseReceived { case: VideoCase },
    Video { event: VideoEvent },
    AnnotatorContacted { profile: AnnotatorProfile },
    Annotator { event: AnnotatorEvent },
    TickIssued { batch: AssignmentBatch },
    AssessmentAccepted { assessment: Assessment },
    AssignmentsRevoked { revoked: Vec<RevokedAssignment> },
    SubmissionReceived { team_id: TeamId, clips: usize },
    SubmissionScored { scores: TeamScores },
    EffectAttempted { outcome: EffectOutcome },
}

impl Payload {
    pub fn name(&self) -> &'static str {
        match self {
            Payload::CaseReceived { .. } => "CASE_RECEIVED",
            Payload::Video { .. } => "VIDEO",
            Payload::AnnotatorContacted { .. } => "ANNOTATOR_CONTACTED",
            Payload::Annotator { .. } => "ANNOTATOR",
            Payload::TickIssued { .. } => "TICK_ISSUED",
            Payload::AssessmentAccepted { .. } => "ASSESSMENT_ACCEPTED",
            Payload::AssignmentsRevoked { .. } => "ASSIGNMENTS_REVOKED",
            Payload::SubmissionReceived { .. } => "SUBMISSION_RECEIVED",
            Payload::SubmissionScored { .. } => "SUBMISSION_SCORED",
            Payload::EffectAttempted { .. } => "EFFECT_ATTEMPTED",
        }
    }

    fn entity_kind(&self) -> EntityKind {
        match self {
            Payload::CaseReceived { .. } | Payload::Video { .. } => EntityKind::Video,
            Payload::AnnotatorContacted { .. } | Payload::Annotator { .. } => EntityKind::Annotator,
            Payload::TickIssued { .. } | Payload::AssessmentAccepted { .. } | Payload::AssignmentsRevoked { .. } => {
                EntityKind::Coverage
            }
            Payload::SubmissionReceived { .. } | Payload::SubmissionScored { .. } => EntityKind::Submission,
            Payload::EffectAttempted { .. } => EntityKind::Effect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Position in the global log, from 1.
    pub seq: u64,
    /// Position in the entity's own stream, from 1.
    pub event_id: u64,
    pub entity: EntityRef,
    pub payload: Payload,
    pub occurred_at: Timestamp,
}

/// Configuration that the fold itself depends on; persisted with snapshots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub scheduler: SchedulerConfig,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub team_id: TeamId,
    pub received_at: Timestamp,
    pub clips: usize,
    pub scores: Option<TeamScores>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlatformState {
    pub config: PlatformConfig,
    pub videos: BTreeMap<CaseId, VideoCase>,
    pub clip_case: BTreeMap<ClipId, CaseId>,
    pub annotators: BTreeMap<AnnotatorId, Annotator>,
    pub coverage: CoverageState,
    pub assessments: BTreeMap<ClipId, BTreeMap<AnnotatorId, Assessment>>,
    pub fused: BTreeMap<ClipId, Vec<FusedFrame<f64>>>,
    pub submissions: BTreeMap<String, SubmissionRecord>,
    pub effects: BTreeMap<String, Effect>,
    /// Last applied `event_id` per entity, keyed by `KIND/id`.
    pub sequences: BTreeMap<String, u64>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApplyError {
    #[error("{entity}: expected event {expected}, got {got}")]
    SequenceGap { entity: String, expected: u64, got: u64 },
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("payload {payload} does not belong to entity {entity}")]
    WrongEntity { entity: String, payload: &'static str },
    #[error("{0} already exists")]
    AlreadyExists(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("annotator {0} is not active")]
    InactiveAnnotator(AnnotatorId),
    #[error("invalid payload: {0}")]
    Invalid(String),
}

impl ApplyError {
    /// Short class name for the error log.
    pub fn class(&self) -> &'static str {
        match self {
            ApplyError::SequenceGap { .. } => "SEQUENCE_GAP",
            ApplyError::IllegalTransition(_) => "ILLEGAL_TRANSITION",
            ApplyError::Coverage(_) => "COVERAGE",
            ApplyError::WrongEntity { .. } => "WRONG_ENTITY",
            ApplyError::AlreadyExists(_) => "ALREADY_EXISTS",
            ApplyError::NotFound(_) => "NOT_FOUND",
            ApplyError::InactiveAnnotator(_) => "INACTIVE_ANNOTATOR",
            ApplyError::Invalid(_) => "INVALID",
        }
    }
}

impl PlatformState {
    pub fn new(config: PlatformConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn next_event_id(&self, entity: &EntityRef) -> u64 {
        self.sequences.get(&entity.key()).copied().unwrap_or(0) + 1
    }

    pub fn active_annotators(&self) -> Vec<AnnotatorId> {
        self.annotators
            .values()
            .filter(|a| a.state == AnnotatorState::Active)
            .map(|a| a.annotator_id.clone())
            .collect()
    }

    pub fn dropped_annotators(&self) -> BTreeSet<AnnotatorId> {
        self.annotators
            .values()
            .filter(|a| a.state == AnnotatorState::Dropped)
            .map(|a| a.annotator_id.clone())
            .collect()
    }

    /// Pending effects due at or before `now`, oldest first.
    pub fn due_effects(&self, now: Timestamp) -> Vec<&Effect> {
        let mut due: Vec<&Effect> = self
            .effects
            .values()
            .filter(|e| e.status == EffectStatus::Pending && e.due_at <= now)
            .collect();
        due.sort_by(|a, b| (a.due_at, &a.effect_id).cmp(&(b.due_at, &b.effect_id)));
        due
    }
}

/// Applies one event. On error the state is left untouched.
pub fn apply_event(state: &mut PlatformState, event: &Event) -> Result<Vec<Effect>, ApplyError> {
    let key = event.entity.key();
    if event.payload.entity_kind() != event.entity.kind {
        return Err(ApplyError::WrongEntity {
            entity: key,
            payload: event.payload.name(),
        });
    }
    if event.seq != state.last_seq + 1 {
        return Err(ApplyError::SequenceGap {
            entity: "log".into(),
            expected: state.last_seq + 1,
            got: event.seq,
        });
    }
    let expected = state.next_event_id(&event.entity);
    if event.event_id != expected {
        return Err(ApplyError::SequenceGap {
            entity: key,
            expected,
            got: event.event_id,
        });
    }

    let effects = apply_payload(state, event)?;
    state.sequences.insert(key, event.event_id);
    state.last_seq = event.seq;
    for e in &effects {
        state.effects.insert(e.effect_id.clone(), e.clone());
    }
    Ok(effects)
}

/// Pure form: returns the successor state and queued effects.
pub fn applied(state: &PlatformState, event: &Event) -> Result<(PlatformState, Vec<Effect>), ApplyError> {
    let mut next = state.clone();
    let effects = apply_event(&mut next, event)?;
    Ok((next, effects))
}

/// Folds a log from empty state.
pub fn replay<'a>(config: PlatformConfig, events: impl IntoIterator<Item = &'a Event>) -> Result<PlatformState, ApplyError> {
    let mut state = PlatformState::new(config);
    for e in events {
        apply_event(&mut state, e)?;
    }
    Ok(state)
}

struct EffectSink<'a> {
    event: &'a Event,
    out: Vec<Effect>,
}

impl EffectSink<'_> {
    fn queue(&mut self, kind: EffectKind, due_at: Timestamp) {
        let effect_id = format!("{}#{}/{}", self.event.entity, self.event.event_id, self.out.len());
        self.out.push(Effect::new(effect_id, kind, due_at));
    }
}

fn apply_payload(state: &mut PlatformState, event: &Event) -> Result<Vec<Effect>, ApplyError> {
    let mut sink = EffectSink { event, out: Vec::new() };
    let id = &event.entity.id;
    let at = event.occurred_at;
    match &event.payload {
        Payload::CaseReceived { case } => {
            if case.case_id.as_str() != id {
                return Err(ApplyError::Invalid(format!("case id {} in stream {id}", case.case_id)));
            }
            if state.videos.contains_key(&case.case_id) {
                return Err(ApplyError::AlreadyExists(event.entity.to_string()));
            }
            state.videos.insert(case.case_id.clone(), case.clone());
        }
        Payload::Video { event: ve } => {
            let case_id = CaseId::new(id.as_str());
            let case = state
                .videos
                .get(&case_id)
                .ok_or_else(|| ApplyError::NotFound(event.entity.to_string()))?;
            let next = case.transition(ve)?;
            if let VideoEvent::ClipExtracted { clip } = ve {
                if state.clip_case.contains_key(&clip.clip_id) {
                    return Err(ApplyError::AlreadyExists(format!("clip {}", clip.clip_id)));
                }
                state.clip_case.insert(clip.clip_id.clone(), case_id.clone());
                state.coverage.register_clip(clip.clip_id.clone());
            }
            if let VideoEvent::LabelsFused = ve {
                let clip = next.clip.as_ref().expect("fused case has a clip");
                let assessments: Vec<Assessment> = state
                    .assessments
                    .get(&clip.clip_id)
                    .map(|m| m.values().cloned().collect())
                    .unwrap_or_default();
                let frames = fuse_clip::<f64>(&assessments).map_err(|e| ApplyError::Invalid(e.to_string()))?;
                state.fused.insert(clip.clip_id.clone(), frames);
            }
            if next.state == VideoState::Reprocessing && case.state != VideoState::Reprocessing {
                sink.queue(
                    EffectKind::NotifyOrganizer {
                        subject: format!("case {case_id} needs blurring before clipping"),
                    },
                    at,
                );
            }
            state.videos.insert(case_id, next);
        }
        Payload::AnnotatorContacted { profile } => {
            let aid = AnnotatorId::new(id.as_str());
            if state.annotators.contains_key(&aid) {
                return Err(ApplyError::AlreadyExists(event.entity.to_string()));
            }
            state.annotators.insert(aid.clone(), Annotator::contacted(aid, profile.clone()));
        }
        Payload::Annotator { event: ae } => {
            let aid = AnnotatorId::new(id.as_str());
            let a = state
                .annotators
                .get(&aid)
                .ok_or_else(|| ApplyError::NotFound(event.entity.to_string()))?;
            let next = a.transition(ae)?;
            if next.state == AnnotatorState::Qualified && a.state != AnnotatorState::Qualified {
                sink.queue(
                    EffectKind::NotifyOrganizer {
                        subject: format!("annotator {aid} passed the exam and awaits activation"),
                    },
                    at,
                );
            }
            state.annotators.insert(aid, next);
        }
        Payload::TickIssued { batch } => {
            for a in &batch.assignments {
                match state.annotators.get(&a.annotator_id) {
                    Some(x) if x.state == AnnotatorState::Active => {}
                    _ => return Err(ApplyError::InactiveAnnotator(a.annotator_id.clone())),
                }
            }
            let cfg = &state.config.scheduler;
            state.coverage.apply_batch(cfg, batch)?;
            let mut reminders: BTreeMap<&AnnotatorId, Timestamp> = BTreeMap::new();
            for a in &batch.assignments {
                let ann = state.annotators.get_mut(&a.annotator_id).expect("checked above");
                ann.assigned_clips.insert(a.clip_id.clone());
                let due = reminders.entry(&a.annotator_id).or_insert(a.due_at);
                *due = (*due).max(a.due_at);
            }
            for (annotator_id, due) in reminders {
                sink.queue(
                    EffectKind::Reminder {
                        annotator_id: annotator_id.clone(),
                        tick_id: batch.tick_id,
                    },
                    due,
                );
            }
            if !state.coverage.fully_covered(cfg.coverage_target) {
                sink.queue(
                    EffectKind::TickDue {
                        tick_id: batch.tick_id + 1,
                    },
                    batch.issued_at + cfg.cadence(),
                );
            }
        }
        Payload::AssessmentAccepted { assessment } => {
            assessment.validate().map_err(|e| ApplyError::Invalid(e.to_string()))?;
            let cfg = state.config.scheduler.clone();
            let signal = state
                .coverage
                .complete(&cfg, &assessment.annotator_id, &assessment.clip_id)?;
            let (clip, who) = (&assessment.clip_id, &assessment.annotator_id);
            if let Some(ann) = state.annotators.get_mut(who) {
                ann.assigned_clips.remove(clip);
                ann.completed_count += 1;
            }
            state
                .assessments
                .entry(clip.clone())
                .or_default()
                .insert(who.clone(), assessment.clone());
            if let Some(CoverageSignal::ClipFullyAnnotated { clip_id }) = signal {
                sink.queue(EffectKind::FusionJob { clip_id }, at);
            }
        }
        Payload::AssignmentsRevoked { revoked } => {
            state.coverage.apply_revocations(revoked);
            for r in revoked {
                if let Some(ann) = state.annotators.get_mut(&r.annotator_id) {
                    ann.assigned_clips.remove(&r.clip_id);
                }
            }
        }
        Payload::SubmissionReceived { team_id, clips } => {
            if state.submissions.contains_key(id) {
                return Err(ApplyError::AlreadyExists(event.entity.to_string()));
            }
            state.submissions.insert(
                id.clone(),
                SubmissionRecord {
                    team_id: team_id.clone(),
                    received_at: at,
                    clips: *clips,
                    scores: None,
                },
            );
        }
        Payload::SubmissionScored { scores } => {
            if ![scores.map_a, scores.brier_b, scores.drs_c].iter().all(|v| v.is_finite()) {
                return Err(ApplyError::Invalid("non-finite score".into()));
            }
            let rec = state
                .submissions
                .get_mut(id)
                .ok_or_else(|| ApplyError::NotFound(event.entity.to_string()))?;
            rec.scores = Some(scores.clone());
        }
        Payload::EffectAttempted { outcome } => {
            let policy = state.config.retry.clone();
            let effect = state
                .effects
                .get_mut(id)
                .ok_or_else(|| ApplyError::NotFound(event.entity.to_string()))?;
            if effect.status != EffectStatus::Pending {
                return Err(ApplyError::Invalid(format!("effect {id} already settled")));
            }
            effect.record_attempt(outcome, at, &policy);
        }
    }
    Ok(sink.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Approach, CaseProvenance, InstitutionId, Origin};
    use chrono::TimeZone;

    fn t0() -> Timestamp {
        chrono::Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
    }

    fn ev(state: &PlatformState, entity: EntityRef, payload: Payload) -> Event {
        Event {
            seq: state.last_seq + 1,
            event_id: state.next_event_id(&entity),
            entity,
            payload,
            occurred_at: t0(),
        }
    }

    fn case() -> VideoCase {
        VideoCase::received(
            CaseId::new("v1"),
            CaseProvenance {
                country: Origin::known("NL"),
                device_vendor: Origin::Unknown,
                approach: Approach::Laparoscopic,
                used_ioc: false,
                used_icg: false,
                source_institution: InstitutionId::new("i"),
            },
            "s3://v1",
            1800.0,
        )
    }

    #[test]
    fn sequence_gap_rejected_without_mutation() {
        let mut s = PlatformState::default();
        let mut e = ev(&s, EntityRef::video(&CaseId::new("v1")), Payload::CaseReceived { case: case() });
        e.event_id = 2;
        assert!(matches!(apply_event(&mut s, &e), Err(ApplyError::SequenceGap { expected: 1, got: 2, .. })));
        assert_eq!(s, PlatformState::default());
    }

    #[test]
    fn wrong_entity_rejected() {
        let mut s = PlatformState::default();
        let e = ev(&s, EntityRef::coverage(), Payload::CaseReceived { case: case() });
        assert!(matches!(apply_event(&mut s, &e), Err(ApplyError::WrongEntity { .. })));
    }

    #[test]
    fn exam_pass_awaits_activation_and_notifies() {
        let mut s = PlatformState::default();
        let who = AnnotatorId::new("a");
        let ent = EntityRef::annotator(&who);
        let steps = [
            Payload::AnnotatorContacted {
                profile: AnnotatorProfile {
                    clinical_background: true,
                    contact: "a@x".into(),
                },
            },
            Payload::Annotator { event: AnnotatorEvent::EligibilityPassed },
            Payload::Annotator { event: AnnotatorEvent::TrainingStarted },
            Payload::Annotator { event: AnnotatorEvent::ExamSubmitted { score: 0.80 } },
        ];
        for p in steps {
            let e = ev(&s, ent.clone(), p);
            assert!(apply_event(&mut s, &e).unwrap().is_empty());
        }
        let e = ev(&s, ent.clone(), Payload::Annotator { event: AnnotatorEvent::ExamGraded });
        let effects = apply_event(&mut s, &e).unwrap();
        assert_eq!(s.annotators[&who].state, AnnotatorState::Qualified);
        assert!(matches!(effects[0].kind, EffectKind::NotifyOrganizer { .. }));
        assert_eq!(s.effects.len(), 1);
    }

    #[test]
    fn illegal_transition_propagates() {
        let mut s = PlatformState::default();
        let e = ev(&s, EntityRef::video(&CaseId::new("v1")), Payload::CaseReceived { case: case() });
        apply_event(&mut s, &e).unwrap();
        let e = ev(&s, EntityRef::video(&CaseId::new("v1")), Payload::Video { event: VideoEvent::LabelsFused });
        assert!(matches!(apply_event(&mut s, &e), Err(ApplyError::IllegalTransition(_))));
        assert_eq!(s.last_seq, 1);
    }
}
