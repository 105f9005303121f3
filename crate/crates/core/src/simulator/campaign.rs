use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ConfidenceSampler;
use super::{SimError, SimPool};
use crate::domain::{AnnotatorEvent, AnnotatorId, ClipId, Split, Timestamp, VideoEvent};
use crate::orchestrator::{
    EffectKind, EffectOutcome, EngineError, Event, EventStore, ManualClock, MemoryStore, Orchestrator, Payload,
    PlatformConfig, PlatformState, RecordingNotifier, RetryPolicy,
};
use crate::scheduler::SchedulerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignPolicy {
    pub seed: u64,
    /// Chance an annotator finishes a given assignment before the next tick.
    pub completion_rate: f64,
    /// Per-tick chance that an active annotator leaves.
    pub dropout_rate: f64,
    pub max_ticks: u64,
    pub scheduler: SchedulerConfig,
    pub retry: RetryPolicy,
}

impl Default for CampaignPolicy {
    fn default() -> Self {
        Self {
            seed: 0,
            completion_rate: 1.0,
            dropout_rate: 0.0,
            max_ticks: 200,
            scheduler: SchedulerConfig::default(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TranscriptEntry {
    Batch {
        at: Timestamp,
        tick_id: u64,
        assignments: usize,
        annotators: usize,
    },
    Assessment {
        at: Timestamp,
        clip_id: ClipId,
        annotator_id: AnnotatorId,
    },
    Reminder {
        at: Timestamp,
        annotator_id: AnnotatorId,
        tick_id: u64,
    },
    Dropout {
        at: Timestamp,
        annotator_id: AnnotatorId,
    },
    Revoked {
        at: Timestamp,
        annotator_id: AnnotatorId,
        clip_id: ClipId,
    },
    Fused {
        at: Timestamp,
        clip_id: ClipId,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn ticks(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, TranscriptEntry::Batch { .. }))
            .count()
    }

    pub fn count(&self, pred: impl Fn(&TranscriptEntry) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(e)).count()
    }

    /// Projects new log events onto transcript entries.
    fn absorb(&mut self, events: &[Event], state: &PlatformState) {
        for e in events {
            let at = e.occurred_at;
            match &e.payload {
                Payload::TickIssued { batch } => self.entries.push(TranscriptEntry::Batch {
                    at,
                    tick_id: batch.tick_id,
                    assignments: batch.assignments.len(),
                    annotators: batch.per_annotator().len(),
                }),
                Payload::AssessmentAccepted { assessment } => self.entries.push(TranscriptEntry::Assessment {
                    at,
                    clip_id: assessment.clip_id.clone(),
                    annotator_id: assessment.annotator_id.clone(),
                }),
                Payload::AssignmentsRevoked { revoked } => {
                    self.entries.extend(revoked.iter().map(|r| TranscriptEntry::Revoked {
                        at,
                        annotator_id: r.annotator_id.clone(),
                        clip_id: r.clip_id.clone(),
                    }))
                }
                Payload::Annotator {
                    event: AnnotatorEvent::DroppedOut,
                } => self.entries.push(TranscriptEntry::Dropout {
                    at,
                    annotator_id: AnnotatorId::new(e.entity.id.clone()),
                }),
                Payload::Video {
                    event: VideoEvent::LabelsFused,
                } => {
                    let clip = state
                        .videos
                        .get(&crate::domain::CaseId::new(e.entity.id.clone()))
                        .and_then(|v| v.clip.as_ref());
                    if let Some(clip) = clip {
                        self.entries.push(TranscriptEntry::Fused {
                            at,
                            clip_id: clip.clip_id.clone(),
                        });
                    }
                }
                Payload::EffectAttempted {
                    outcome: EffectOutcome::Ok,
                } => {
                    if let Some(EffectKind::Reminder { annotator_id, tick_id }) =
                        state.effects.get(&e.entity.id).map(|x| &x.kind)
                    {
                        self.entries.push(TranscriptEntry::Reminder {
                            at,
                            annotator_id: annotator_id.clone(),
                            tick_id: *tick_id,
                        });
                    }
                }
                _ => {}
            }
        }
    }
}

/// Outcome of a campaign that reached full coverage.
#[derive(Debug)]
pub struct CampaignRun {
    pub transcript: Transcript,
    pub state: PlatformState,
    pub events: Vec<Event>,
    pub notifications: RecordingNotifier,
}

fn engine_err(e: EngineError) -> SimError {
    SimError::Engine(e.to_string())
}

/// Drives the pool through intake, screening, onboarding and annotation on
/// the orchestrator, one scheduling tick per cadence period, until every
/// clip is fully covered and fused.
pub fn run_campaign(pool: &SimPool, policy: &CampaignPolicy, clock: ManualClock) -> Result<CampaignRun, SimError> {
    let config = PlatformConfig {
        scheduler: policy.scheduler.clone(),
        retry: policy.retry.clone(),
    };
    let mut o = Orchestrator::open(config, MemoryStore::new(), Arc::new(clock.clone()), policy.seed)
        .map_err(engine_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut notifier = RecordingNotifier::new();

    for case in &pool.cases {
        let id = &case.intake.case_id;
        o.intake(case.intake.clone()).map_err(engine_err)?;
        for v in &case.screening {
            o.screen(id, v.clone(), case.needs_blur).map_err(engine_err)?;
        }
        if case.needs_blur {
            o.video_event(id, VideoEvent::ReprocessingDone).map_err(engine_err)?;
        }
        o.extract_clip(id).map_err(engine_err)?;
    }
    for a in &pool.annotators {
        let id = &a.annotator_id;
        o.contact(id, a.profile.clone()).map_err(engine_err)?;
        o.annotator_event(id, AnnotatorEvent::EligibilityPassed).map_err(engine_err)?;
        o.annotator_event(id, AnnotatorEvent::TrainingStarted).map_err(engine_err)?;
        o.take_exam(id, a.exam_score.unwrap_or(1.0)).map_err(engine_err)?;
        o.annotator_event(id, AnnotatorEvent::Activated).map_err(engine_err)?;
    }
    o.run_due_effects(&mut notifier);

    let latent: BTreeMap<&ClipId, (&super::LatentClip, Split)> =
        pool.cases.iter().map(|c| (&c.clip.clip_id, (&c.latent, c.split))).collect();
    let samplers = [Split::Train, Split::Test].map(|s| ConfidenceSampler::new(pool.confidence.get(s)));
    let sampler = |s: Split| samplers[usize::from(s == Split::Test)];

    let mut transcript = Transcript::default();
    let mut cursor = o.state().last_seq as usize;
    o.run_tick().map_err(engine_err)?;
    let target = policy.scheduler.coverage_target;
    loop {
        let events = o.store().load().map_err(|e| SimError::Engine(e.to_string()))?;
        transcript.absorb(&events[cursor..], o.state());
        cursor = events.len();

        let state = o.state();
        if state.coverage.fully_covered(target) {
            break;
        }
        let starving = || -> Vec<ClipId> { state.coverage.open_clips(target).into_iter().cloned().collect() };
        let tick = state.coverage.next_tick.saturating_sub(1);
        let outstanding: usize = state.coverage.clips.values().map(|c| c.outstanding.len()).sum();
        if state.active_annotators().is_empty() || outstanding == 0 || tick >= policy.max_ticks {
            return Err(SimError::DeadlockDetected {
                tick,
                starving: starving(),
            });
        }

        let mut work: Vec<(ClipId, AnnotatorId)> = Vec::new();
        for a in state.active_annotators() {
            for (clip, cov) in &state.coverage.clips {
                if cov.outstanding.contains_key(&a) && rng.random_bool(policy.completion_rate) {
                    work.push((clip.clone(), a.clone()));
                }
            }
        }
        for (clip, a) in work {
            let (lat, split) = latent[&clip];
            let c = sampler(split).sample(&mut rng);
            let assessment = pool.calibration.assess(lat, &clip, &a, c, &mut rng);
            o.submit_assessment(assessment).map_err(engine_err)?;
        }
        o.run_due_effects(&mut notifier);
        if o.state().coverage.fully_covered(target) {
            continue;
        }
        for a in o.state().active_annotators() {
            if rng.random_bool(policy.dropout_rate) {
                o.annotator_event(&a, AnnotatorEvent::DroppedOut).map_err(engine_err)?;
            }
        }
        clock.advance(policy.scheduler.cadence());
        o.run_due_effects(&mut notifier);
    }
    let events = o.store().load().map_err(|e| SimError::Engine(e.to_string()))?;
    Ok(CampaignRun {
        transcript,
        state: o.state().clone(),
        events,
        notifications: notifier,
    })
}
