//! Paced, blinded assignment of qualified clips to active annotators.
//!
//! Every tick hands each active annotator a bucket of at most
//! `bucket_size` clips they have never been assigned before. Clips are
//! chosen least-covered-first (ties broken by a seeded shuffle) and no clip
//! is ever held by more than `coverage_target` annotators, counting both
//! outstanding and completed assignments. After the greedy pass, augmenting
//! paths reassign picks within the tick so that spare annotator capacity is
//! never left idle while an uncovered clip could still be reached.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::Duration;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotatorId, Assessment, CaseProvenance, ClipId, QualifiedClip, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub bucket_size: usize,
    pub coverage_target: usize,
    pub cadence_days: i64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            bucket_size: 20,
            coverage_target: 3,
            cadence_days: 14,
        }
    }
}

impl SchedulerConfig {
    pub fn cadence(&self) -> Duration {
        Duration::days(self.cadence_days)
    }

    /// Ticks needed for full coverage of `clips` by `annotators` who finish
    /// every batch: `ceil(target * clips / (bucket * annotators))`.
    pub fn tick_bound(&self, clips: usize, annotators: usize) -> usize {
        let demand = self.coverage_target * clips;
        let per_tick = self.bucket_size * annotators;
        if demand == 0 {
            0
        } else {
            demand.div_ceil(per_tick.max(1))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub annotator_id: AnnotatorId,
    pub clip_id: ClipId,
    pub due_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentBatch {
    pub tick_id: u64,
    pub issued_at: Timestamp,
    pub assignments: Vec<Assignment>,
}

impl AssignmentBatch {
    pub fn per_annotator(&self) -> BTreeMap<&AnnotatorId, usize> {
        let mut m = BTreeMap::new();
        for a in &self.assignments {
            *m.entry(&a.annotator_id).or_insert(0) += 1;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outstanding {
    pub tick_id: u64,
    pub issued_at: Timestamp,
    pub due_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClipCoverage {
    pub outstanding: BTreeMap<AnnotatorId, Outstanding>,
    pub completed: BTreeSet<AnnotatorId>,
}

impl ClipCoverage {
    pub fn assigned_count(&self) -> usize {
        self.outstanding.len() + self.completed.len()
    }

    pub fn completed_count(&self) -> usize {
        self.completed.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoverageError {
    #[error("no outstanding assignment of clip {1} to annotator {0}")]
    UnknownAssignment(AnnotatorId, ClipId),
    #[error("annotator {0} already assessed clip {1}")]
    DuplicateAssessment(AnnotatorId, ClipId),
    #[error("clip {0} is not registered")]
    UnknownClip(ClipId),
    #[error("annotator {0} was already assigned clip {1}")]
    RepeatAssignment(AnnotatorId, ClipId),
    #[error("clip {0} would exceed its coverage target")]
    OverCoverage(ClipId),
    #[error("batch tick {got} does not follow tick {expected}")]
    TickOutOfOrder { expected: u64, got: u64 },
}

/// Signals raised by coverage updates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CoverageSignal {
    ClipFullyAnnotated { clip_id: ClipId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokedAssignment {
    pub annotator_id: AnnotatorId,
    pub clip_id: ClipId,
    pub tick_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoverageState {
    pub clips: BTreeMap<ClipId, ClipCoverage>,
    /// Every (annotator, clip) pair ever assigned, including revoked ones.
    pub history: BTreeMap<AnnotatorId, BTreeSet<ClipId>>,
    pub next_tick: u64,
}

impl CoverageState {
    pub fn new(clips: impl IntoIterator<Item = ClipId>) -> Self {
        let mut s = Self::default();
        for c in clips {
            s.register_clip(c);
        }
        s
    }

    pub fn register_clip(&mut self, clip: ClipId) {
        self.clips.entry(clip).or_default();
    }

    pub fn has_seen(&self, annotator: &AnnotatorId, clip: &ClipId) -> bool {
        self.history.get(annotator).is_some_and(|s| s.contains(clip))
    }

    pub fn outstanding_for(&self, annotator: &AnnotatorId) -> usize {
        self.clips
            .values()
            .filter(|c| c.outstanding.contains_key(annotator))
            .count()
    }

    pub fn fully_covered(&self, target: usize) -> bool {
        self.clips.values().all(|c| c.completed_count() >= target)
    }

    /// Clips that still need assignments to reach `target`.
    pub fn open_clips(&self, target: usize) -> Vec<&ClipId> {
        self.clips
            .iter()
            .filter(|(_, c)| c.assigned_count() < target)
            .map(|(id, _)| id)
            .collect()
    }

    /// Chooses this tick's assignments without mutating anything.
    pub fn plan_tick(
        &self,
        cfg: &SchedulerConfig,
        active: &[AnnotatorId],
        now: Timestamp,
        seed: u64,
    ) -> AssignmentBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ self.next_tick.rotate_left(32));

        let mut annotators: Vec<&AnnotatorId> = active.iter().collect::<BTreeSet<_>>().into_iter().collect();
        annotators.shuffle(&mut rng);

        let mut open: Vec<&ClipId> = self.open_clips(cfg.coverage_target);
        open.shuffle(&mut rng);

        let clip_need: Vec<usize> = open
            .iter()
            .map(|c| cfg.coverage_target - self.clips[*c].assigned_count())
            .collect();
        let base_count: Vec<usize> = open.iter().map(|c| self.clips[*c].assigned_count()).collect();
        let capacity: Vec<usize> = annotators
            .iter()
            .map(|a| cfg.bucket_size.saturating_sub(self.outstanding_for(a)))
            .collect();
        let allowed = |ai: usize, ci: usize| !self.has_seen(annotators[ai], open[ci]);

        let mut plan = TickPlan::new(annotators.len(), open.len(), clip_need, capacity);

        // greedy: round-robin, each annotator takes its least-covered allowed clip
        let mut queue: BTreeSet<(usize, usize)> = (0..open.len()).map(|ci| (base_count[ci], ci)).collect();
        let mut exhausted = vec![false; annotators.len()];
        loop {
            let mut progressed = false;
            for ai in 0..annotators.len() {
                if exhausted[ai] || plan.cap_left[ai] == 0 {
                    continue;
                }
                let pick = queue
                    .iter()
                    .find(|&&(_, ci)| allowed(ai, ci) && !plan.assigned[ai].contains(&ci))
                    .copied();
                match pick {
                    Some((count, ci)) => {
                        queue.remove(&(count, ci));
                        plan.assign(ai, ci);
                        if plan.need_left[ci] > 0 {
                            queue.insert((count + 1, ci));
                        }
                        progressed = true;
                    }
                    None => exhausted[ai] = true,
                }
            }
            if !progressed {
                break;
            }
        }

        // augment: route spare annotator capacity to clips that still need work
        for ai in 0..annotators.len() {
            while plan.cap_left[ai] > 0 && plan.augment(ai, &allowed) {}
        }

        let due_at = now + cfg.cadence();
        let (annotators, open) = (&annotators, &open);
        let mut assignments: Vec<Assignment> = plan
            .assigned
            .iter()
            .enumerate()
            .flat_map(|(ai, clips)| {
                clips.iter().map(move |&ci| Assignment {
                    annotator_id: annotators[ai].clone(),
                    clip_id: open[ci].clone(),
                    due_at,
                })
            })
            .collect();
        assignments.sort_by(|x, y| (&x.annotator_id, &x.clip_id).cmp(&(&y.annotator_id, &y.clip_id)));
        AssignmentBatch {
            tick_id: self.next_tick,
            issued_at: now,
            assignments,
        }
    }

    /// Records a batch, enforcing the no-repeat and coverage-cap rules.
    pub fn apply_batch(&mut self, cfg: &SchedulerConfig, batch: &AssignmentBatch) -> Result<(), CoverageError> {
        if batch.tick_id != self.next_tick {
            return Err(CoverageError::TickOutOfOrder {
                expected: self.next_tick,
                got: batch.tick_id,
            });
        }
        let mut staged = self.clone();
        for a in &batch.assignments {
            if staged.has_seen(&a.annotator_id, &a.clip_id) {
                return Err(CoverageError::RepeatAssignment(a.annotator_id.clone(), a.clip_id.clone()));
            }
            let cov = staged
                .clips
                .get_mut(&a.clip_id)
                .ok_or_else(|| CoverageError::UnknownClip(a.clip_id.clone()))?;
            if cov.assigned_count() >= cfg.coverage_target {
                return Err(CoverageError::OverCoverage(a.clip_id.clone()));
            }
            cov.outstanding.insert(
                a.annotator_id.clone(),
                Outstanding {
                    tick_id: batch.tick_id,
                    issued_at: batch.issued_at,
                    due_at: a.due_at,
                },
            );
            staged
                .history
                .entry(a.annotator_id.clone())
                .or_default()
                .insert(a.clip_id.clone());
        }
        staged.next_tick += 1;
        *self = staged;
        Ok(())
    }

    /// Plans and records one tick.
    pub fn run_tick(
        &mut self,
        cfg: &SchedulerConfig,
        active: &[AnnotatorId],
        now: Timestamp,
        seed: u64,
    ) -> AssignmentBatch {
        let batch = self.plan_tick(cfg, active, now, seed);
        self.apply_batch(cfg, &batch)
            .expect("planned batch satisfies coverage rules");
        batch
    }

    /// Closes an outstanding assignment with the annotator's assessment.
    pub fn accept_assessment(
        &mut self,
        cfg: &SchedulerConfig,
        assignment: &Assignment,
        assessment: &Assessment,
    ) -> Result<Option<CoverageSignal>, CoverageError> {
        let (annotator, clip) = (&assessment.annotator_id, &assessment.clip_id);
        if &assignment.clip_id != clip || &assignment.annotator_id != annotator {
            return Err(CoverageError::UnknownAssignment(annotator.clone(), clip.clone()));
        }
        self.complete(cfg, annotator, clip)
    }

    /// Marks `(annotator, clip)` done. Emits a signal when the clip reaches
    /// its coverage target.
    pub fn complete(
        &mut self,
        cfg: &SchedulerConfig,
        annotator: &AnnotatorId,
        clip: &ClipId,
    ) -> Result<Option<CoverageSignal>, CoverageError> {
        let cov = self
            .clips
            .get_mut(clip)
            .ok_or_else(|| CoverageError::UnknownAssignment(annotator.clone(), clip.clone()))?;
        if cov.completed.contains(annotator) {
            return Err(CoverageError::DuplicateAssessment(annotator.clone(), clip.clone()));
        }
        if cov.outstanding.remove(annotator).is_none() {
            return Err(CoverageError::UnknownAssignment(annotator.clone(), clip.clone()));
        }
        cov.completed.insert(annotator.clone());
        Ok((cov.completed_count() == cfg.coverage_target).then(|| CoverageSignal::ClipFullyAnnotated {
            clip_id: clip.clone(),
        }))
    }

    /// Returns to the pool every outstanding assignment of a dropped
    /// annotator that was issued at least one cadence period before `now`.
    pub fn revoke_dropped(
        &mut self,
        cfg: &SchedulerConfig,
        dropped: &BTreeSet<AnnotatorId>,
        now: Timestamp,
    ) -> Vec<RevokedAssignment> {
        let mut revoked = Vec::new();
        for (clip_id, cov) in self.clips.iter_mut() {
            cov.outstanding.retain(|a, o| {
                let stale = dropped.contains(a) && o.issued_at + cfg.cadence() <= now;
                if stale {
                    revoked.push(RevokedAssignment {
                        annotator_id: a.clone(),
                        clip_id: clip_id.clone(),
                        tick_id: o.tick_id,
                    });
                }
                !stale
            });
        }
        revoked
    }

    /// Removes specific outstanding assignments (replaying a revocation).
    pub fn apply_revocations(&mut self, revoked: &[RevokedAssignment]) {
        for r in revoked {
            if let Some(cov) = self.clips.get_mut(&r.clip_id) {
                cov.outstanding.remove(&r.annotator_id);
            }
        }
    }

    /// Overdue outstanding work, one entry per (annotator, tick).
    pub fn overdue(&self, now: Timestamp) -> BTreeSet<(AnnotatorId, u64)> {
        self.clips
            .values()
            .flat_map(|c| c.outstanding.iter())
            .filter(|(_, o)| o.due_at <= now)
            .map(|(a, o)| (a.clone(), o.tick_id))
            .collect()
    }

    /// Whether `annotator` still has unfinished work from `tick_id`.
    pub fn has_outstanding_from(&self, annotator: &AnnotatorId, tick_id: u64) -> bool {
        self.clips
            .values()
            .any(|c| c.outstanding.get(annotator).is_some_and(|o| o.tick_id == tick_id))
    }
}

/// Working state of one tick's b-matching between annotators and clips.
struct TickPlan {
    assigned: Vec<BTreeSet<usize>>,
    holders: Vec<BTreeSet<usize>>,
    need_left: Vec<usize>,
    cap_left: Vec<usize>,
}

impl TickPlan {
    fn new(n_annotators: usize, n_clips: usize, need: Vec<usize>, capacity: Vec<usize>) -> Self {
        Self {
            assigned: vec![BTreeSet::new(); n_annotators],
            holders: vec![BTreeSet::new(); n_clips],
            need_left: need,
            cap_left: capacity,
        }
    }

    fn assign(&mut self, ai: usize, ci: usize) {
        self.assigned[ai].insert(ci);
        self.holders[ci].insert(ai);
        self.need_left[ci] -= 1;
        self.cap_left[ai] -= 1;
    }

    /// BFS for an alternating path from `start` to a clip with spare need.
    fn augment(&mut self, start: usize, allowed: &impl Fn(usize, usize) -> bool) -> bool {
        let n_clips = self.need_left.len();
        let mut clip_parent: Vec<Option<usize>> = vec![None; n_clips];
        let mut annotator_parent: Vec<Option<usize>> = vec![None; self.assigned.len()];
        let mut seen_annotator = vec![false; self.assigned.len()];
        seen_annotator[start] = true;
        let mut frontier = VecDeque::from([start]);
        let mut found = None;

        'search: while let Some(ai) = frontier.pop_front() {
            for ci in 0..n_clips {
                if clip_parent[ci].is_some() || self.assigned[ai].contains(&ci) || !allowed(ai, ci) {
                    continue;
                }
                clip_parent[ci] = Some(ai);
                if self.need_left[ci] > 0 {
                    found = Some(ci);
                    break 'search;
                }
                for &holder in &self.holders[ci] {
                    if !seen_annotator[holder] {
                        seen_annotator[holder] = true;
                        annotator_parent[holder] = Some(ci);
                        frontier.push_back(holder);
                    }
                }
            }
        }

        let Some(mut ci) = found else {
            return false;
        };
        self.need_left[ci] -= 1;
        loop {
            let ai = clip_parent[ci].expect("clip on path has a parent");
            self.assigned[ai].insert(ci);
            self.holders[ci].insert(ai);
            match annotator_parent[ai] {
                None => {
                    self.cap_left[ai] -= 1;
                    return true;
                }
                Some(prev) => {
                    // ai hands its earlier pick `prev` to the annotator before it
                    self.assigned[ai].remove(&prev);
                    self.holders[prev].remove(&ai);
                    ci = prev;
                }
            }
        }
    }
}

/// What an annotator is allowed to see of a clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorView {
    pub clip_id: ClipId,
    pub media_uri: String,
    pub frame_indices: Vec<u32>,
}

/// Strips provenance and peer labels from a clip before it reaches an annotator.
pub fn blind_payload(clip: &QualifiedClip, _provenance: &CaseProvenance) -> AnnotatorView {
    AnnotatorView {
        clip_id: clip.clip_id.clone(),
        media_uri: clip.media_uri.clone(),
        frame_indices: clip.annotated_frame_indices.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{annotated_frame_indices, Approach, CaseId, InstitutionId, Origin, PerCriterion};
    use chrono::TimeZone;

    fn t0() -> Timestamp {
        chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:04}")).collect()
    }

    fn annotators(n: usize) -> Vec<AnnotatorId> {
        ids("ann", n).into_iter().map(AnnotatorId::new).collect()
    }

    fn state(n: usize) -> CoverageState {
        CoverageState::new(ids("clip", n).into_iter().map(ClipId::new))
    }

    fn assessment(a: &AnnotatorId, c: &ClipId) -> Assessment {
        Assessment {
            clip_id: c.clone(),
            annotator_id: a.clone(),
            frame_labels: vec![PerCriterion::default(); 18],
            confidence: 0.5,
            video_level: PerCriterion::default(),
        }
    }

    #[test]
    fn three_annotators_saturate_twenty_clips() {
        let cfg = SchedulerConfig::default();
        let mut s = state(20);
        let anns = annotators(3);
        let batch = s.run_tick(&cfg, &anns, t0(), 7);
        assert_eq!(batch.assignments.len(), 60);
        for n in batch.per_annotator().values() {
            assert_eq!(*n, 20);
        }
        assert!(s.clips.values().all(|c| c.assigned_count() == 3));
    }

    #[test]
    fn single_annotator_gets_one_bucket() {
        let cfg = SchedulerConfig::default();
        let mut s = state(100);
        let batch = s.run_tick(&cfg, &annotators(1), t0(), 1);
        assert_eq!(batch.assignments.len(), 20);
    }

    #[test]
    fn seen_clip_never_reassigned() {
        let cfg = SchedulerConfig::default();
        let mut s = state(5);
        let anns = annotators(1);
        let b1 = s.run_tick(&cfg, &anns, t0(), 3);
        assert_eq!(b1.assignments.len(), 5);
        for a in &b1.assignments {
            s.complete(&cfg, &a.annotator_id, &a.clip_id).unwrap();
        }
        let b2 = s.run_tick(&cfg, &anns, t0() + cfg.cadence(), 3);
        assert!(b2.assignments.is_empty());
    }

    #[test]
    fn deterministic_in_state_and_seed() {
        let cfg = SchedulerConfig::default();
        let s = state(50);
        let anns = annotators(4);
        assert_eq!(s.plan_tick(&cfg, &anns, t0(), 11), s.plan_tick(&cfg, &anns, t0(), 11));
    }

    #[test]
    fn acceptance_signals_full_coverage() {
        let cfg = SchedulerConfig::default();
        let mut s = state(1);
        let anns = annotators(3);
        let batch = s.run_tick(&cfg, &anns, t0(), 0);
        let mut signals = Vec::new();
        for a in &batch.assignments {
            signals.push(s.accept_assessment(&cfg, a, &assessment(&a.annotator_id, &a.clip_id)).unwrap());
        }
        assert_eq!(signals[0], None);
        assert_eq!(signals[1], None);
        assert_eq!(
            signals[2],
            Some(CoverageSignal::ClipFullyAnnotated {
                clip_id: ClipId::new("clip0000")
            })
        );
        let a = &batch.assignments[0];
        assert_eq!(
            s.accept_assessment(&cfg, a, &assessment(&a.annotator_id, &a.clip_id)),
            Err(CoverageError::DuplicateAssessment(a.annotator_id.clone(), a.clip_id.clone()))
        );
    }

    #[test]
    fn mismatched_assessment_is_unknown() {
        let cfg = SchedulerConfig::default();
        let mut s = state(2);
        let batch = s.run_tick(&cfg, &annotators(1), t0(), 0);
        let a = &batch.assignments[0];
        let wrong = assessment(&a.annotator_id, &ClipId::new("clip0001"));
        assert!(matches!(
            s.accept_assessment(&cfg, a, &wrong),
            Err(CoverageError::UnknownAssignment(..))
        ));
        let stranger = assessment(&AnnotatorId::new("nobody"), &a.clip_id);
        assert!(matches!(
            s.complete(&cfg, &stranger.annotator_id, &stranger.clip_id),
            Err(CoverageError::UnknownAssignment(..))
        ));
    }

    #[test]
    fn dropped_assignments_revoked_after_one_period() {
        let cfg = SchedulerConfig::default();
        let mut s = state(10);
        let anns = annotators(5);
        s.run_tick(&cfg, &anns[..3], t0(), 0);
        let dropped: BTreeSet<_> = [anns[0].clone()].into();
        assert!(s.revoke_dropped(&cfg, &dropped, t0() + Duration::days(1)).is_empty());
        let revoked = s.revoke_dropped(&cfg, &dropped, t0() + cfg.cadence());
        assert_eq!(revoked.len(), 10);
        assert_eq!(s.outstanding_for(&anns[0]), 0);
        assert!(s.clips.values().all(|c| c.assigned_count() == 2));
        // revoked clips return to the pool and go to someone new
        let batch = s.run_tick(&cfg, &anns[1..], t0() + cfg.cadence(), 0);
        assert_eq!(batch.assignments.len(), 10);
        assert!(batch.assignments.iter().all(|a| a.annotator_id != anns[0]));
        assert!(s.clips.values().all(|c| c.assigned_count() == 3));
        assert_eq!(s.history[&anns[0]].len(), 10);
    }

    #[test]
    fn overdue_is_grouped_by_annotator_and_tick() {
        let cfg = SchedulerConfig::default();
        let mut s = state(10);
        let anns = annotators(2);
        s.run_tick(&cfg, &anns, t0(), 0);
        assert!(s.overdue(t0()).is_empty());
        let overdue = s.overdue(t0() + cfg.cadence());
        assert_eq!(overdue.len(), 2);
    }

    #[test]
    fn apply_rejects_repeats_and_overcoverage() {
        let cfg = SchedulerConfig::default();
        let mut s = state(1);
        let a = annotators(4);
        let mk = |tick, who: &AnnotatorId| AssignmentBatch {
            tick_id: tick,
            issued_at: t0(),
            assignments: vec![Assignment {
                annotator_id: who.clone(),
                clip_id: ClipId::new("clip0000"),
                due_at: t0(),
            }],
        };
        s.apply_batch(&cfg, &mk(0, &a[0])).unwrap();
        assert!(matches!(s.apply_batch(&cfg, &mk(1, &a[0])), Err(CoverageError::RepeatAssignment(..))));
        s.apply_batch(&cfg, &mk(1, &a[1])).unwrap();
        s.apply_batch(&cfg, &mk(2, &a[2])).unwrap();
        assert!(matches!(s.apply_batch(&cfg, &mk(3, &a[3])), Err(CoverageError::OverCoverage(..))));
        assert!(matches!(s.apply_batch(&cfg, &mk(9, &a[3])), Err(CoverageError::TickOutOfOrder { .. })));
    }

    #[test]
    fn tick_bound_formula() {
        let cfg = SchedulerConfig::default();
        assert_eq!(cfg.tick_bound(1000, 20), 8);
        assert_eq!(cfg.tick_bound(20, 3), 1);
        assert_eq!(cfg.tick_bound(0, 3), 0);
    }

    fn clip_with_provenance() -> (QualifiedClip, CaseProvenance) {
        let clip = QualifiedClip {
            clip_id: ClipId::new("case-1-clip"),
            case_id: CaseId::new("case-1"),
            duration_s: 90,
            frame_rate: 1,
            window_start_s: 10.0,
            window_end_s: 100.0,
            annotated_frame_indices: annotated_frame_indices(),
            blinded: true,
            media_uri: "clip://case-1-clip".into(),
        };
        let prov = CaseProvenance {
            country: Origin::known("Atlantis"),
            device_vendor: Origin::known("AcmeScope"),
            approach: Approach::Robotic,
            used_ioc: true,
            used_icg: false,
            source_institution: InstitutionId::new("St. Elsewhere"),
        };
        (clip, prov)
    }

    #[test]
    fn blinded_view_has_exact_schema() {
        let (clip, prov) = clip_with_provenance();
        let view = blind_payload(&clip, &prov);
        let json = serde_json::to_value(&view).unwrap();
        let keys: BTreeSet<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["clip_id", "frame_indices", "media_uri"].map(String::from).into());
        let text = json.to_string();
        for leak in ["Atlantis", "AcmeScope", "Elsewhere", "country"] {
            assert!(!text.contains(leak), "{leak} leaked");
        }
    }

    #[test]
    fn blinded_views_identical_across_annotators() {
        let (clip, prov) = clip_with_provenance();
        let a = serde_json::to_vec(&blind_payload(&clip, &prov)).unwrap();
        let b = serde_json::to_vec(&blind_payload(&clip, &prov)).unwrap();
        assert_eq!(a, b);
    }
}
