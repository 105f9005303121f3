//! Random legal command driver for the orchestrator.

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvs_core::domain::{
    AnnotatorEvent, AnnotatorId, AnnotatorProfile, AnnotatorState, Approach, Assessment, CaseId, CaseProvenance,
    ClipId, ExclusionReason, FrameLabels, InstitutionId, Origin, PerCriterion, PreAnnotation, RaterId, VideoEvent,
    VideoState, ANNOTATED_FRAMES,
};
use cvs_core::orchestrator::{EventStore, ManualClock, MemoryStore, Orchestrator, PlatformConfig, RecordingNotifier};
use cvs_core::video_flow::IntakeRecord;

pub fn t0() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 3, 1, 9, 0, 0).unwrap()
}

pub fn intake_record(i: usize, rng: &mut impl Rng) -> IntakeRecord {
    let countries = ["FR", "IT", "US", "JP", "BR"];
    IntakeRecord {
        case_id: CaseId::new(format!("case-{i:04}")),
        provenance: CaseProvenance {
            country: if rng.random_bool(0.1) {
                Origin::Unknown
            } else {
                Origin::known(countries[rng.random_range(0..countries.len())])
            },
            device_vendor: Origin::known(["olympus", "storz", "stryker"][rng.random_range(0..3)]),
            approach: if rng.random_bool(0.2) { Approach::Robotic } else { Approach::Laparoscopic },
            used_ioc: rng.random_bool(0.1),
            used_icg: rng.random_bool(0.1),
            source_institution: InstitutionId::new(format!("inst-{}", i % 7)),
        },
        media_uri: format!("file:///videos/{i}.mp4"),
        duration_s: 1800.0,
    }
}

pub fn verdict(rater: String, rng: &mut impl Rng) -> PreAnnotation {
    let eligible = rng.random_bool(0.8);
    PreAnnotation {
        rater_id: RaterId::new(rater),
        eligible,
        exclusion_reason: (!eligible).then_some(ExclusionReason::Bailout),
        clipping_timestamp: Some(f64::from(rng.random_range(60..400u32))),
        used_ioc: false,
        used_icg: false,
        approach: Approach::Laparoscopic,
    }
}

pub fn random_assessment(clip: &ClipId, annotator: &AnnotatorId, rng: &mut impl Rng) -> Assessment {
    let frame_labels: Vec<FrameLabels> = (0..ANNOTATED_FRAMES)
        .map(|_| PerCriterion::new(rng.random_bool(0.3), rng.random_bool(0.3), rng.random_bool(0.2)))
        .collect();
    let video_level = PerCriterion::from_fn(|k| frame_labels.iter().any(|f| f[k]));
    Assessment {
        clip_id: clip.clone(),
        annotator_id: annotator.clone(),
        frame_labels,
        confidence: f64::from(rng.random_range(0..=10u32)) / 10.0,
        video_level,
    }
}

pub fn profile(clinical: bool) -> AnnotatorProfile {
    AnnotatorProfile {
        clinical_background: clinical,
        contact: String::new(),
    }
}

/// Drives random commands until the log holds `target` events. Commands
/// the engine rejects leave no trace in the log.
pub fn drive<S: EventStore>(o: &mut Orchestrator<S>, clock: &ManualClock, rng: &mut ChaCha8Rng, target: usize) {
    let mut notifier = RecordingNotifier::new();
    let (mut cases, mut annotators, mut raters) = (0usize, 0usize, 0usize);
    while (o.state().last_seq as usize) < target {
        let state = o.state();
        match rng.random_range(0..100) {
            0..=11 if cases < 400 => {
                let rec = intake_record(cases, rng);
                cases += 1;
                o.intake(rec).unwrap();
            }
            12..=29 => {
                let open: Vec<CaseId> = state
                    .videos
                    .values()
                    .filter(|v| matches!(v.state, VideoState::Received | VideoState::Screening))
                    .map(|v| v.case_id.clone())
                    .collect();
                if open.is_empty() {
                    continue;
                }
                let case = open[rng.random_range(0..open.len())].clone();
                raters += 1;
                let prev = state.videos[&case].preannotation_chain.last().cloned();
                let v = match prev {
                    Some(mut p) if rng.random_bool(0.7) => {
                        p.rater_id = RaterId::new(format!("r{raters}"));
                        p
                    }
                    _ => verdict(format!("r{raters}"), rng),
                };
                let _ = o.screen(&case, v, rng.random_bool(0.2));
            }
            30..=37 => {
                let ready: Vec<(CaseId, VideoState)> = state
                    .videos
                    .values()
                    .filter(|v| matches!(v.state, VideoState::Reprocessing | VideoState::Qualified))
                    .map(|v| (v.case_id.clone(), v.state.clone()))
                    .collect();
                if let Some((case, s)) = ready.first().cloned() {
                    if s == VideoState::Reprocessing {
                        o.video_event(&case, VideoEvent::ReprocessingDone).unwrap();
                    } else {
                        o.extract_clip(&case).unwrap();
                    }
                }
            }
            38..=42 if annotators < 60 => {
                let id = AnnotatorId::new(format!("ann-{annotators:03}"));
                annotators += 1;
                o.contact(&id, profile(rng.random_bool(0.85))).unwrap();
            }
            43..=55 => {
                let pool: Vec<(AnnotatorId, AnnotatorState)> =
                    state.annotators.values().map(|a| (a.annotator_id.clone(), a.state)).collect();
                if pool.is_empty() {
                    continue;
                }
                let (id, s) = pool[rng.random_range(0..pool.len())].clone();
                let _ = if rng.random_bool(0.02) {
                    o.annotator_event(&id, AnnotatorEvent::DroppedOut)
                } else {
                    match s {
                        AnnotatorState::Contacted => o.annotator_event(&id, AnnotatorEvent::EligibilityPassed),
                        AnnotatorState::Eligible => o.annotator_event(&id, AnnotatorEvent::TrainingStarted),
                        AnnotatorState::Training => o.take_exam(&id, rng.random_range(0.5..1.0)),
                        AnnotatorState::Qualified => o.annotator_event(&id, AnnotatorEvent::Activated),
                        AnnotatorState::Active if rng.random_bool(0.1) => {
                            o.annotator_event(&id, AnnotatorEvent::Paused)
                        }
                        AnnotatorState::Paused => o.annotator_event(&id, AnnotatorEvent::Resumed),
                        _ => continue,
                    }
                };
            }
            56..=60 => {
                clock.advance(Duration::days(rng.random_range(1..20)));
                let _ = o.run_tick();
            }
            61..=85 => {
                let outstanding: Vec<(ClipId, AnnotatorId)> = state
                    .coverage
                    .clips
                    .iter()
                    .flat_map(|(c, cov)| cov.outstanding.keys().map(move |a| (c.clone(), a.clone())))
                    .collect();
                if outstanding.is_empty() {
                    continue;
                }
                let (clip, ann) = outstanding[rng.random_range(0..outstanding.len())].clone();
                let a = random_assessment(&clip, &ann, rng);
                o.submit_assessment(a).unwrap();
            }
            86..=93 => {
                if rng.random_bool(0.3) {
                    notifier.fail_any(rng.random_range(1..3));
                }
                o.run_due_effects(&mut notifier);
            }
            _ => clock.advance(Duration::hours(rng.random_range(1..72))),
        }
    }
}

/// A fresh in-memory engine on a manual clock, driven to `target` events.
pub fn driven(seed: u64, target: usize) -> (Orchestrator<MemoryStore>, ManualClock) {
    let clock = ManualClock::new(t0());
    let mut o =
        Orchestrator::open(PlatformConfig::default(), MemoryStore::new(), std::sync::Arc::new(clock.clone()), seed)
            .expect("empty store opens");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    drive(&mut o, &clock, &mut rng, target);
    (o, clock)
}
