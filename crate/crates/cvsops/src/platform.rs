//! Opening the on-disk platform and the operations shared by the CLI and
//! the HTTP API.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use cvs_core::domain::{
    Annotator, AnnotatorEvent, AnnotatorState, CaseId, ClipId, PreAnnotation, Split, VideoEvent, VideoState,
};
use cvs_core::evaluation::{
    default_variant_splits, evaluate, GroundTruth, MetricsReport, Submission, TeamScores, VariantSplit,
    VariantSplitDef,
};
use cvs_core::fusion::AnnotatedClip;
use cvs_core::orchestrator::{
    snapshot, Clock, EngineError, ErrorLog, FileStore, Orchestrator, PlatformState, RestoreReport,
};
use cvs_core::scalar::{Exact, Scalar};
use cvs_core::video_flow::ChainStatus;

use crate::config::OpsConfig;

pub type Engine = Orchestrator<FileStore>;

/// Opens the event log under `data_dir`, restoring from the snapshot when
/// one is present and valid.
pub fn open(cfg: &OpsConfig, clock: Arc<dyn Clock>, seed: u64) -> anyhow::Result<(Engine, RestoreReport)> {
    open_with(cfg, clock, seed, true)
}

/// Like [`open`], optionally ignoring the snapshot and replaying the whole log.
pub fn open_with(
    cfg: &OpsConfig,
    clock: Arc<dyn Clock>,
    seed: u64,
    use_snapshot: bool,
) -> anyhow::Result<(Engine, RestoreReport)> {
    std::fs::create_dir_all(&cfg.data_dir).with_context(|| format!("creating {}", cfg.data_dir.display()))?;
    let store = FileStore::open(cfg.events_path())?;
    let snap = if use_snapshot { read_snapshot(&cfg.snapshot_path())? } else { None };
    let (o, report) = Orchestrator::open_with_snapshot(cfg.platform(), store, snap.as_deref(), clock, seed)?;
    let mut log = ErrorLog::open(cfg.error_log_path())?;
    for rec in o.errors().records().to_vec() {
        log.record(rec);
    }
    Ok((o.with_error_log(log), report))
}

fn read_snapshot(path: &Path) -> anyhow::Result<Option<String>> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

/// Writes a checksummed snapshot of `state`, replacing the old one
/// atomically.
pub fn save_snapshot(cfg: &OpsConfig, state: &PlatformState) -> anyhow::Result<()> {
    let path = cfg.snapshot_path();
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec(&snapshot(state))?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(())
}

/// Whether the error is a repeat of something already recorded.
pub fn is_duplicate(e: &EngineError) -> bool {
    matches!(e, EngineError::Apply(cvs_core::orchestrator::ApplyError::AlreadyExists(_)))
}

/// Events that take a fresh contact to the roster record's state.
pub fn onboarding_path(a: &Annotator) -> Vec<AnnotatorEvent> {
    use AnnotatorEvent as E;
    use AnnotatorState as S;

    let score = a.exam_score.unwrap_or(1.0);
    let to_state = |s: AnnotatorState| -> Vec<AnnotatorEvent> {
        match s {
            S::Contacted | S::Dropped => vec![],
            S::Ineligible => vec![E::EligibilityFailed],
            S::Eligible => vec![E::EligibilityPassed],
            S::Training => vec![E::EligibilityPassed, E::TrainingStarted],
            S::ExamTaken => vec![E::EligibilityPassed, E::TrainingStarted, E::ExamSubmitted { score }],
            S::Qualified | S::Failed => vec![
                E::EligibilityPassed,
                E::TrainingStarted,
                E::ExamSubmitted { score },
                E::ExamGraded,
            ],
            S::Active => vec![
                E::EligibilityPassed,
                E::TrainingStarted,
                E::ExamSubmitted { score },
                E::ExamGraded,
                E::Activated,
            ],
            S::Paused => vec![
                E::EligibilityPassed,
                E::TrainingStarted,
                E::ExamSubmitted { score },
                E::ExamGraded,
                E::Activated,
                E::Paused,
            ],
        }
    };
    match a.state {
        S::Dropped => {
            let mut path = to_state(a.dropped_from.unwrap_or(S::Contacted));
            path.push(E::DroppedOut);
            path
        }
        s => to_state(s),
    }
}

/// Contacts `a` and walks them to their recorded state.
pub fn onboard(o: &mut Engine, a: &Annotator) -> Result<(), EngineError> {
    o.contact(&a.annotator_id, a.profile.clone())?;
    for e in onboarding_path(a) {
        o.annotator_event(&a.annotator_id, e)?;
    }
    Ok(())
}

/// Feeds one screening verdict and, once the case is qualified, cuts its
/// clip. Returns the chain status and the clip id if one was extracted.
pub fn screen_case(
    o: &mut Engine,
    case_id: &CaseId,
    verdict: PreAnnotation,
    needs_blur: bool,
) -> Result<(ChainStatus, Option<ClipId>), EngineError> {
    let status = o.screen(case_id, verdict, needs_blur)?;
    Ok((status, extract_if_qualified(o, case_id)?))
}

/// Records that blurring finished and cuts the clip.
pub fn reprocessed(o: &mut Engine, case_id: &CaseId) -> Result<Option<ClipId>, EngineError> {
    o.video_event(case_id, VideoEvent::ReprocessingDone)?;
    extract_if_qualified(o, case_id)
}

pub fn extract_if_qualified(o: &mut Engine, case_id: &CaseId) -> Result<Option<ClipId>, EngineError> {
    let qualified = o
        .state()
        .videos
        .get(case_id)
        .is_some_and(|v| v.state == VideoState::Qualified && v.clip.is_none());
    if qualified {
        Ok(Some(o.extract_clip(case_id)?.clip_id))
    } else {
        Ok(None)
    }
}

/// Fused clips of the platform as an evaluation pool.
pub fn fused_pool(state: &PlatformState) -> Vec<AnnotatedClip> {
    state
        .fused
        .keys()
        .filter_map(|clip_id| {
            let case = state.clip_case.get(clip_id)?;
            let video = state.videos.get(case)?;
            Some(AnnotatedClip {
                clip_id: clip_id.clone(),
                split: Split::Test,
                provenance: video.provenance.clone(),
                assessments: state.assessments.get(clip_id)?.values().cloned().collect(),
            })
        })
        .collect()
}

/// Builds variant splits, dropping any that select nothing in this pool.
/// Returns the splits and the ids of the dropped definitions.
pub fn variant_splits(pool: &[AnnotatedClip], defs: Option<&[VariantSplitDef]>) -> (Vec<VariantSplit>, Vec<String>) {
    let defs = defs.map(<[_]>::to_vec).unwrap_or_else(|| default_variant_splits(pool));
    let mut splits = Vec::new();
    let mut empty = Vec::new();
    for d in defs {
        let clips: std::collections::BTreeSet<ClipId> =
            pool.iter().filter(|c| d.predicate.matches(c)).map(|c| c.clip_id.clone()).collect();
        if clips.is_empty() {
            empty.push(d.split_id);
        } else {
            splits.push(VariantSplit {
                split_id: d.split_id,
                clips,
            });
        }
    }
    (splits, empty)
}

/// Scored report in whichever scalar the configuration selects, with the
/// leaderboard entry.
#[derive(Debug, Clone, serde::Serialize)]
#[serde(untagged)]
pub enum AnyReport {
    F64(MetricsReport<f64>),
    Exact(MetricsReport<Exact>),
}

impl AnyReport {
    pub fn team_scores(&self) -> TeamScores {
        match self {
            AnyReport::F64(r) => r.team_scores(),
            AnyReport::Exact(r) => r.team_scores(),
        }
    }

    pub fn set_audit(&mut self, outcome: cvs_core::evaluation::AuditOutcome) {
        match self {
            AnyReport::F64(r) => r.causal_audit = Some(outcome),
            AnyReport::Exact(r) => r.causal_audit = Some(outcome),
        }
    }
}

pub fn score(
    sub: &Submission,
    frames: &[cvs_core::fusion::FusedFrame<f64>],
    splits: &[VariantSplit],
    exact: bool,
) -> anyhow::Result<AnyReport> {
    fn run<T: Scalar>(
        sub: &Submission,
        frames: &[cvs_core::fusion::FusedFrame<f64>],
        splits: &[VariantSplit],
    ) -> anyhow::Result<MetricsReport<T>> {
        let ground = GroundTruth::from_frames(frames.iter().map(|f| cvs_core::fusion::FusedFrame {
            clip_id: f.clip_id.clone(),
            frame_index: f.frame_index,
            mode: f.mode,
            soft: f.soft.map(|&v| T::from_f64_lossy(v)),
            agreement: f.agreement,
        }));
        sub.validate_against(ground.clips.keys())?;
        Ok(evaluate(sub, &ground, splits)?)
    }
    let approx = run::<f64>(sub, frames, splits)?;
    if !exact {
        return Ok(AnyReport::F64(approx));
    }
    let exact = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run::<Exact>(sub, frames, splits)))
        .map_err(|_| anyhow::anyhow!("{EXACT_RANGE}"))??;
    if !same_scores(&exact.team_scores(), &approx.team_scores()) {
        anyhow::bail!("{EXACT_RANGE}");
    }
    Ok(AnyReport::Exact(exact))
}

const EXACT_RANGE: &str = "exact scoring exceeded the i128 rational range for this input; score in f64 instead";

/// Exact arithmetic that overflows either panics or wraps; a wrapped result
/// disagrees with the `f64` evaluation of the same input.
fn same_scores(a: &TeamScores, b: &TeamScores) -> bool {
    let close = |x: f64, y: f64| (x.is_nan() && y.is_nan()) || (x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs()));
    close(a.map_a, b.map_a) && close(a.brier_b, b.brier_b) && close(a.drs_c, b.drs_c)
}

/// Operational counters over the platform state.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub last_seq: u64,
    pub videos: BTreeMap<String, usize>,
    pub annotators: BTreeMap<String, usize>,
    pub clips: usize,
    pub clips_fully_covered: usize,
    pub outstanding_assignments: usize,
    pub assessments: usize,
    pub fused_clips: usize,
    pub next_tick_id: u64,
    pub effects: BTreeMap<String, usize>,
    pub submissions: usize,
    pub scored_submissions: usize,
}

fn enum_name<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(serde_json::Value::Object(m)) => m.keys().next().cloned().unwrap_or_default(),
        _ => "?".into(),
    }
}

pub fn metrics(state: &PlatformState) -> Metrics {
    let mut videos = BTreeMap::new();
    for v in state.videos.values() {
        *videos.entry(enum_name(&v.state)).or_insert(0) += 1;
    }
    let mut annotators = BTreeMap::new();
    for a in state.annotators.values() {
        *annotators.entry(enum_name(&a.state)).or_insert(0) += 1;
    }
    let mut effects = BTreeMap::new();
    for e in state.effects.values() {
        *effects.entry(enum_name(&e.status)).or_insert(0) += 1;
    }
    let target = state.config.scheduler.coverage_target;
    let cov = &state.coverage;
    Metrics {
        last_seq: state.last_seq,
        videos,
        annotators,
        clips: cov.clips.len(),
        clips_fully_covered: cov.clips.values().filter(|c| c.completed_count() >= target).count(),
        outstanding_assignments: cov.clips.values().map(|c| c.outstanding.len()).sum(),
        assessments: state.assessments.values().map(BTreeMap::len).sum(),
        fused_clips: state.fused.len(),
        next_tick_id: cov.next_tick,
        effects,
        submissions: state.submissions.len(),
        scored_submissions: state.submissions.values().filter(|s| s.scores.is_some()).count(),
    }
}

/// Leaderboard entries of every scored submission, latest per team.
pub fn platform_scores(state: &PlatformState) -> Vec<TeamScores> {
    let mut latest: BTreeMap<&cvs_core::domain::TeamId, (&cvs_core::domain::Timestamp, &TeamScores)> = BTreeMap::new();
    for rec in state.submissions.values() {
        if let Some(s) = &rec.scores {
            let newer = latest.get(&rec.team_id).is_none_or(|(at, _)| **at <= rec.received_at);
            if newer {
                latest.insert(&rec.team_id, (&rec.received_at, s));
            }
        }
    }
    latest.into_values().map(|(_, s)| s.clone()).collect()
}
