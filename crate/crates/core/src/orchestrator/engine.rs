use std::collections::BTreeSet;
use std::sync::Arc;

use super::{
    apply_event, restore, ApplyError, Clock, Effect, EffectKind, EffectOutcome, EffectReport, EffectStatus, EntityKind,
    EntityRef, ErrorLog, ErrorRecord, Event, EventStore, Notification, Notifier, Payload, PlatformConfig,
    PlatformState, RestoreReport, StoreError,
};
use crate::domain::{
    AnnotatorEvent, AnnotatorId, AnnotatorProfile, Assessment, CaseId, QualifiedClip, Timestamp, VideoEvent,
    VideoState,
};
use crate::evaluation::{Submission, TeamScores};
use crate::scheduler::AssignmentBatch;
use crate::domain::PreAnnotation;
use crate::video_flow::{extract_clip, AdjudicationChain, AdjudicationError, ChainStatus, ClipError, IntakeRecord};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Adjudication(#[from] AdjudicationError),
    #[error("{0} not found")]
    NotFound(String),
}

impl EngineError {
    pub fn class(&self) -> &'static str {
        match self {
            EngineError::Apply(e) => e.class(),
            EngineError::Store(_) => "STORE",
            EngineError::Clip(_) => "CLIP",
            EngineError::Adjudication(_) => "ADJUDICATION",
            EngineError::NotFound(_) => "NOT_FOUND",
        }
    }
}

/// Single writer over an event store. Commands validate by applying the
/// event to live state, then persist it.
pub struct Orchestrator<S: EventStore> {
    state: PlatformState,
    store: S,
    clock: Arc<dyn Clock>,
    errors: ErrorLog,
    seed: u64,
}

impl<S: EventStore> Orchestrator<S> {
    /// Opens over `store`, replaying whatever it already holds.
    pub fn open(config: PlatformConfig, store: S, clock: Arc<dyn Clock>, seed: u64) -> Result<Self, EngineError> {
        Self::open_with_snapshot(config, store, None, clock, seed).map(|(o, _)| o)
    }

    pub fn open_with_snapshot(
        config: PlatformConfig,
        store: S,
        snapshot: Option<&str>,
        clock: Arc<dyn Clock>,
        seed: u64,
    ) -> Result<(Self, RestoreReport), EngineError> {
        let events = store.load()?;
        let (state, report) = restore(config, snapshot, &events)?;
        let mut errors = ErrorLog::in_memory();
        if let Some(w) = &report.warning {
            errors.record(ErrorRecord {
                at: clock.now(),
                entity: "snapshot".into(),
                event: "RESTORE".into(),
                error_class: "CORRUPT_SNAPSHOT".into(),
                message: w.clone(),
            });
        }
        Ok((
            Self {
                state,
                store,
                clock,
                errors,
                seed,
            },
            report,
        ))
    }

    pub fn with_error_log(mut self, log: ErrorLog) -> Self {
        self.errors = log;
        self
    }

    pub fn state(&self) -> &PlatformState {
        &self.state
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn errors(&self) -> &ErrorLog {
        &self.errors
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Applies and persists one event.
    pub fn commit(&mut self, entity: EntityRef, payload: Payload) -> Result<Vec<Effect>, EngineError> {
        let event = Event {
            seq: self.state.last_seq + 1,
            event_id: self.state.next_event_id(&entity),
            entity,
            payload,
            occurred_at: self.clock.now(),
        };
        let effects = match apply_event(&mut self.state, &event) {
            Ok(effects) => effects,
            Err(e) => {
                self.log_error(&event.entity.to_string(), event.payload.name(), e.class(), &e.to_string());
                return Err(e.into());
            }
        };
        if let Err(e) = self.store.append(&event) {
            self.log_error(&event.entity.to_string(), event.payload.name(), "STORE", &e.to_string());
            // the event is not durable; rebuild from what is
            let events = self.store.load()?;
            let (state, _) = restore(self.state.config.clone(), None, &events)?;
            self.state = state;
            return Err(e.into());
        }
        Ok(effects)
    }

    fn log_error(&mut self, entity: &str, event: &str, class: &str, message: &str) {
        let at = self.clock.now();
        self.errors.record(ErrorRecord {
            at,
            entity: entity.to_string(),
            event: event.to_string(),
            error_class: class.to_string(),
            message: message.to_string(),
        });
    }

    pub fn intake(&mut self, record: IntakeRecord) -> Result<(), EngineError> {
        let entity = EntityRef::video(&record.case_id);
        self.commit(entity, Payload::CaseReceived { case: record.into_case() })?;
        Ok(())
    }

    pub fn video_event(&mut self, case: &CaseId, event: VideoEvent) -> Result<Vec<Effect>, EngineError> {
        self.commit(EntityRef::video(case), Payload::Video { event })
    }

    /// Adds one rater's verdict to the case's adjudication chain, opening
    /// screening first if needed. Returns the chain status afterwards.
    pub fn screen(
        &mut self,
        case_id: &CaseId,
        verdict: PreAnnotation,
        needs_blur: bool,
    ) -> Result<ChainStatus, EngineError> {
        let case = self
            .state
            .videos
            .get(case_id)
            .ok_or_else(|| EngineError::NotFound(format!("case {case_id}")))?;
        let mut chain = AdjudicationChain::new(case_id.clone());
        chain.entries = case.preannotation_chain.clone();
        if case.state == VideoState::Received {
            self.video_event(case_id, VideoEvent::ScreeningStarted)?;
        }
        let next = chain.submit(verdict.clone())?;
        match next.status {
            ChainStatus::Concordant => {
                self.video_event(case_id, VideoEvent::ConcordanceReached { verdict, needs_blur })?;
            }
            ChainStatus::NeedsRater => {
                self.video_event(case_id, VideoEvent::PreAnnotationRecorded { verdict })?;
            }
        }
        Ok(next.status)
    }

    /// Cuts the evaluation window from a qualified case.
    pub fn extract_clip(&mut self, case_id: &CaseId) -> Result<QualifiedClip, EngineError> {
        let case = self
            .state
            .videos
            .get(case_id)
            .ok_or_else(|| EngineError::NotFound(format!("case {case_id}")))?;
        let clip = extract_clip(case)?;
        self.video_event(case_id, VideoEvent::ClipExtracted { clip: clip.clone() })?;
        Ok(clip)
    }

    pub fn contact(&mut self, id: &AnnotatorId, profile: AnnotatorProfile) -> Result<(), EngineError> {
        self.commit(EntityRef::annotator(id), Payload::AnnotatorContacted { profile })?;
        Ok(())
    }

    pub fn annotator_event(&mut self, id: &AnnotatorId, event: AnnotatorEvent) -> Result<Vec<Effect>, EngineError> {
        self.commit(EntityRef::annotator(id), Payload::Annotator { event })
    }

    /// Submits and grades an exam in one step.
    pub fn take_exam(&mut self, id: &AnnotatorId, score: f64) -> Result<Vec<Effect>, EngineError> {
        self.annotator_event(id, AnnotatorEvent::ExamSubmitted { score })?;
        self.annotator_event(id, AnnotatorEvent::ExamGraded)
    }

    /// Revokes stale work of dropped annotators, then issues the next batch.
    pub fn run_tick(&mut self) -> Result<AssignmentBatch, EngineError> {
        let now = self.clock.now();
        let cfg = self.state.config.scheduler.clone();
        let mut probe = self.state.coverage.clone();
        let revoked = probe.revoke_dropped(&cfg, &self.state.dropped_annotators(), now);
        if !revoked.is_empty() {
            self.commit(EntityRef::coverage(), Payload::AssignmentsRevoked { revoked })?;
        }
        let active = self.state.active_annotators();
        let batch = self.state.coverage.plan_tick(&cfg, &active, now, self.seed);
        self.commit(EntityRef::coverage(), Payload::TickIssued { batch: batch.clone() })?;

        let started: BTreeSet<CaseId> = batch
            .assignments
            .iter()
            .filter_map(|a| self.state.clip_case.get(&a.clip_id))
            .filter(|c| self.state.videos.get(*c).is_some_and(|v| v.state == VideoState::Clipped))
            .cloned()
            .collect();
        for case in started {
            self.video_event(&case, VideoEvent::AnnotationStarted)?;
        }
        Ok(batch)
    }

    pub fn submit_assessment(&mut self, assessment: Assessment) -> Result<Vec<Effect>, EngineError> {
        let effects = self.commit(EntityRef::coverage(), Payload::AssessmentAccepted { assessment })?;
        for e in &effects {
            if let EffectKind::FusionJob { clip_id } = &e.kind {
                if let Some(case) = self.state.clip_case.get(clip_id).cloned() {
                    self.video_event(&case, VideoEvent::AnnotationCompleted)?;
                }
            }
        }
        Ok(effects)
    }

    pub fn receive_submission(&mut self, submission_id: &str, sub: &Submission) -> Result<(), EngineError> {
        let entity = EntityRef::new(EntityKind::Submission, submission_id);
        self.commit(
            entity,
            Payload::SubmissionReceived {
                team_id: sub.team_id.clone(),
                clips: sub.clips.len(),
            },
        )?;
        Ok(())
    }

    pub fn record_scores(&mut self, submission_id: &str, scores: TeamScores) -> Result<(), EngineError> {
        let entity = EntityRef::new(EntityKind::Submission, submission_id);
        self.commit(entity, Payload::SubmissionScored { scores })?;
        Ok(())
    }

    /// Runs one effect through its adapter without recording the outcome.
    /// The idempotency key handed to adapters is the effect id.
    pub fn execute_effect(&mut self, effect: &Effect, notifier: &mut dyn Notifier) -> EffectOutcome {
        let skip = |reason: &str| EffectOutcome::Skipped { reason: reason.into() };
        let result: Result<EffectOutcome, String> = match &effect.kind {
            EffectKind::Reminder { annotator_id, tick_id } => {
                if !self.state.coverage.has_outstanding_from(annotator_id, *tick_id) {
                    Ok(skip("batch already finished"))
                } else {
                    let to = self
                        .state
                        .annotators
                        .get(annotator_id)
                        .map(|a| a.profile.contact.clone())
                        .filter(|c| !c.is_empty())
                        .unwrap_or_else(|| annotator_id.to_string());
                    let open = self
                        .state
                        .coverage
                        .clips
                        .values()
                        .filter(|c| c.outstanding.get(annotator_id).is_some_and(|o| o.tick_id == *tick_id))
                        .count();
                    let msg = Notification {
                        to,
                        subject: "Annotation reminder".into(),
                        body: format!("{open} clip(s) from batch {tick_id} are past due."),
                    };
                    notifier.send(&effect.effect_id, &msg).map(|_| EffectOutcome::Ok).map_err(|e| e.to_string())
                }
            }
            EffectKind::NotifyOrganizer { subject } => {
                let msg = Notification {
                    to: "organizers".into(),
                    subject: subject.clone(),
                    body: String::new(),
                };
                notifier.send(&effect.effect_id, &msg).map(|_| EffectOutcome::Ok).map_err(|e| e.to_string())
            }
            EffectKind::TickDue { tick_id } => {
                if self.state.coverage.next_tick != *tick_id {
                    Ok(skip("tick already issued"))
                } else if self.state.active_annotators().is_empty() {
                    Err("no active annotators".into())
                } else {
                    self.run_tick().map(|_| EffectOutcome::Ok).map_err(|e| e.to_string())
                }
            }
            EffectKind::FusionJob { clip_id } => match self.state.clip_case.get(clip_id).cloned() {
                None => Err(format!("clip {clip_id} has no case")),
                Some(case) if self.state.videos[&case].state == VideoState::Fused => Ok(skip("already fused")),
                Some(case) => self
                    .video_event(&case, VideoEvent::LabelsFused)
                    .map(|_| EffectOutcome::Ok)
                    .map_err(|e| e.to_string()),
            },
        };
        result.unwrap_or_else(|message| EffectOutcome::Error { message })
    }

    pub fn record_outcome(&mut self, effect_id: &str, outcome: EffectOutcome) -> Result<(), EngineError> {
        self.commit(EntityRef::new(EntityKind::Effect, effect_id), Payload::EffectAttempted { outcome })?;
        Ok(())
    }

    /// Executes every pending effect due now. Adapter failures are recorded
    /// and rescheduled, never returned.
    pub fn run_due_effects(&mut self, notifier: &mut dyn Notifier) -> EffectReport {
        let now = self.clock.now();
        let due: Vec<Effect> = self.state.due_effects(now).into_iter().cloned().collect();
        let mut report = EffectReport::default();
        for effect in due {
            let outcome = self.execute_effect(&effect, notifier);
            if let Err(e) = self.record_outcome(&effect.effect_id, outcome.clone()) {
                report.failed.push(effect.effect_id.clone());
                tracing::error!("could not record effect outcome: {e}");
                continue;
            }
            let status = self.state.effects[&effect.effect_id].status;
            match (&outcome, status) {
                (EffectOutcome::Ok, _) => report.executed.push(effect.effect_id),
                (EffectOutcome::Skipped { .. }, _) => report.skipped.push(effect.effect_id),
                (EffectOutcome::Error { message }, s) => {
                    let class = if s == EffectStatus::Failed { "EFFECT_FAILED" } else { "EFFECT_RETRY" };
                    self.log_error(&effect.target, &format!("{:?}", effect.kind), class, message);
                    if s == EffectStatus::Failed {
                        report.failed.push(effect.effect_id);
                    } else {
                        report.retrying.push(effect.effect_id);
                    }
                }
            }
        }
        report
    }
}
