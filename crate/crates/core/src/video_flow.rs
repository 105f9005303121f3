//! Eligibility screening, dual-rater adjudication and clip extraction.
//!
//! Each donated case is preannotated by organizer raters until two
//! consecutive verdicts agree on every eligibility and metadata field. The
//! concordant verdict then drives the case state machine and, for eligible
//! cases, the 90-second clip cut that precedes the clipping timestamp.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{
    annotated_frame_indices, Approach, CaseId, CaseProvenance, ClipId, ExclusionReason, PreAnnotation,
    QualifiedClip, RaterId, VideoCase, VideoState, CLIP_DURATION_S,
};

/// Two clipping timestamps agree when they differ by at most this many seconds.
pub const TIMESTAMP_TOLERANCE_S: f64 = 2.0;

/// What a screening rater observed while reviewing a donated video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningObservation {
    pub rater_id: RaterId,
    pub is_cholecystectomy: bool,
    pub bailout: bool,
    pub clipping_timestamp: Option<f64>,
    /// The operative field is not clearly visible somewhere in the window.
    pub window_obscured: bool,
    pub used_ioc: bool,
    pub used_icg: bool,
    pub approach: Approach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Eligibility {
    Eligible,
    Excluded(ExclusionReason),
}

/// Applies the eligibility rules in a fixed precedence order.
pub fn check_eligibility(obs: &ScreeningObservation, case_duration_s: f64) -> Eligibility {
    if !obs.is_cholecystectomy {
        return Eligibility::Excluded(ExclusionReason::NotCholecystectomy);
    }
    if obs.bailout {
        return Eligibility::Excluded(ExclusionReason::Bailout);
    }
    let t = match obs.clipping_timestamp {
        Some(t) if t <= case_duration_s => t,
        _ => return Eligibility::Excluded(ExclusionReason::IncompleteNoClipping),
    };
    if t < f64::from(CLIP_DURATION_S) || obs.window_obscured {
        return Eligibility::Excluded(ExclusionReason::NoContinuous90s);
    }
    Eligibility::Eligible
}

impl ScreeningObservation {
    pub fn to_preannotation(&self, case_duration_s: f64) -> PreAnnotation {
        let verdict = check_eligibility(self, case_duration_s);
        PreAnnotation {
            rater_id: self.rater_id.clone(),
            eligible: verdict == Eligibility::Eligible,
            exclusion_reason: match verdict {
                Eligibility::Eligible => None,
                Eligibility::Excluded(r) => Some(r),
            },
            clipping_timestamp: self.clipping_timestamp,
            used_ioc: self.used_ioc,
            used_icg: self.used_icg,
            approach: self.approach,
        }
    }
}

/// Field-level agreement between two verdicts, ignoring who gave them.
pub fn verdicts_agree(a: &PreAnnotation, b: &PreAnnotation) -> bool {
    let timestamps = match (a.clipping_timestamp, b.clipping_timestamp) {
        (Some(x), Some(y)) => (x - y).abs() <= TIMESTAMP_TOLERANCE_S,
        (None, None) => true,
        _ => false,
    };
    timestamps
        && a.eligible == b.eligible
        && a.exclusion_reason == b.exclusion_reason
        && a.used_ioc == b.used_ioc
        && a.used_icg == b.used_icg
        && a.approach == b.approach
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChainStatus {
    NeedsRater,
    Concordant,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdjudicationError {
    #[error("rater {0} already contributed to this chain")]
    DuplicateRater(RaterId),
    #[error("chain for case {0} is already concordant")]
    ChainClosed(CaseId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationChain {
    pub case_id: CaseId,
    pub entries: Vec<PreAnnotation>,
    pub status: ChainStatus,
}

impl AdjudicationChain {
    pub fn new(case_id: CaseId) -> Self {
        Self {
            case_id,
            entries: Vec::new(),
            status: ChainStatus::NeedsRater,
        }
    }

    pub fn raters(&self) -> BTreeSet<&RaterId> {
        self.entries.iter().map(|p| &p.rater_id).collect()
    }

    /// Appends a verdict and recomputes the status.
    pub fn submit(&self, p: PreAnnotation) -> Result<AdjudicationChain, AdjudicationError> {
        if self.status == ChainStatus::Concordant {
            return Err(AdjudicationError::ChainClosed(self.case_id.clone()));
        }
        if self.entries.iter().any(|e| e.rater_id == p.rater_id) {
            return Err(AdjudicationError::DuplicateRater(p.rater_id));
        }
        let mut next = self.clone();
        next.entries.push(p);
        let n = next.entries.len();
        if n >= 2 && verdicts_agree(&next.entries[n - 2], &next.entries[n - 1]) {
            next.status = ChainStatus::Concordant;
        }
        Ok(next)
    }

    /// The concordant verdict (last entry), once the chain is closed.
    pub fn final_metadata(&self) -> Option<&PreAnnotation> {
        match self.status {
            ChainStatus::Concordant => self.entries.last(),
            ChainStatus::NeedsRater => None,
        }
    }
}

/// Free-function form of [`AdjudicationChain::submit`].
pub fn submit_preannotation(
    chain: &AdjudicationChain,
    p: PreAnnotation,
) -> Result<AdjudicationChain, AdjudicationError> {
    chain.submit(p)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClipError {
    #[error("case {0} is not qualified (state {1})")]
    NotQualified(CaseId, VideoState),
    #[error("clipping timestamp {0:?} leaves less than 90 s of video")]
    WindowUnderflow(Option<f64>),
}

/// Cuts the `[T - 90, T)` window ending at the clipping timestamp `T`.
pub fn extract_clip(case: &VideoCase) -> Result<QualifiedClip, ClipError> {
    if case.state != VideoState::Qualified {
        return Err(ClipError::NotQualified(case.case_id.clone(), case.state.clone()));
    }
    let t = case.final_metadata.as_ref().and_then(|m| m.clipping_timestamp);
    let end = match t {
        Some(end) if end >= f64::from(CLIP_DURATION_S) => end,
        other => return Err(ClipError::WindowUnderflow(other)),
    };
    let start = end - f64::from(CLIP_DURATION_S);
    let clip_id = ClipId::new(format!("{}-clip", case.case_id));
    Ok(QualifiedClip {
        media_uri: format!("clip://{clip_id}"),
        clip_id,
        case_id: case.case_id.clone(),
        duration_s: CLIP_DURATION_S,
        frame_rate: 1,
        window_start_s: start,
        window_end_s: end,
        annotated_frame_indices: annotated_frame_indices(),
        blinded: true,
    })
}

/// One line of the intake manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntakeRecord {
    pub case_id: CaseId,
    pub provenance: CaseProvenance,
    pub media_uri: String,
    pub duration_s: f64,
}

impl IntakeRecord {
    pub fn into_case(self) -> VideoCase {
        VideoCase::received(self.case_id, self.provenance, self.media_uri, self.duration_s)
    }
}

/// One rater's verdict submitted for screening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSubmission {
    pub case_id: CaseId,
    pub verdict: PreAnnotation,
    /// The reviewer flagged identifying content that must be blurred.
    #[serde(default)]
    pub needs_blur: bool,
}

/// One line of the screening audit export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningAuditRecord {
    pub case_id: CaseId,
    pub position: usize,
    pub verdict: PreAnnotation,
    pub status_after: ChainStatus,
}

pub fn audit_records(chain: &AdjudicationChain) -> Vec<ScreeningAuditRecord> {
    let mut out = Vec::with_capacity(chain.entries.len());
    let mut replay = AdjudicationChain::new(chain.case_id.clone());
    for (i, p) in chain.entries.iter().enumerate() {
        // entries were accepted once already, so resubmission cannot fail
        replay = replay.submit(p.clone()).expect("replaying an accepted chain");
        out.push(ScreeningAuditRecord {
            case_id: chain.case_id.clone(),
            position: i,
            verdict: p.clone(),
            status_after: replay.status,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{InstitutionId, Origin, VideoEvent};

    fn obs(t: Option<f64>) -> ScreeningObservation {
        ScreeningObservation {
            rater_id: RaterId::new("r1"),
            is_cholecystectomy: true,
            bailout: false,
            clipping_timestamp: t,
            window_obscured: false,
            used_ioc: false,
            used_icg: false,
            approach: Approach::Laparoscopic,
        }
    }

    fn verdict(rater: &str, t: f64, ioc: bool) -> PreAnnotation {
        PreAnnotation {
            rater_id: RaterId::new(rater),
            eligible: true,
            exclusion_reason: None,
            clipping_timestamp: Some(t),
            used_ioc: ioc,
            used_icg: false,
            approach: Approach::Laparoscopic,
        }
    }

    #[test]
    fn eligibility_rules() {
        let bail = ScreeningObservation { bailout: true, ..obs(Some(300.0)) };
        assert_eq!(check_eligibility(&bail, 1000.0), Eligibility::Excluded(ExclusionReason::Bailout));
        assert_eq!(
            check_eligibility(&obs(Some(60.0)), 1000.0),
            Eligibility::Excluded(ExclusionReason::NoContinuous90s)
        );
        assert_eq!(check_eligibility(&obs(Some(300.0)), 1000.0), Eligibility::Eligible);
        assert_eq!(
            check_eligibility(&obs(None), 1000.0),
            Eligibility::Excluded(ExclusionReason::IncompleteNoClipping)
        );
        let obscured = ScreeningObservation { window_obscured: true, ..obs(Some(300.0)) };
        assert_eq!(
            check_eligibility(&obscured, 1000.0),
            Eligibility::Excluded(ExclusionReason::NoContinuous90s)
        );
        let other = ScreeningObservation { is_cholecystectomy: false, ..obs(Some(300.0)) };
        assert_eq!(
            check_eligibility(&other, 1000.0),
            Eligibility::Excluded(ExclusionReason::NotCholecystectomy)
        );
    }

    #[test]
    fn preannotation_from_observation_is_valid() {
        for o in [obs(Some(60.0)), obs(Some(300.0)), obs(None)] {
            assert!(o.to_preannotation(1000.0).validate().is_ok());
        }
    }

    #[test]
    fn two_agreeing_raters_close_chain() {
        let c = AdjudicationChain::new(CaseId::new("c"));
        let c = c.submit(verdict("r1", 300.0, false)).unwrap();
        assert_eq!(c.status, ChainStatus::NeedsRater);
        let c = c.submit(verdict("r2", 301.5, false)).unwrap();
        assert_eq!(c.status, ChainStatus::Concordant);
        assert_eq!(c.final_metadata().unwrap().rater_id, RaterId::new("r2"));
    }

    #[test]
    fn third_rater_adjudicates() {
        let c = AdjudicationChain::new(CaseId::new("c"))
            .submit(verdict("r1", 300.0, false))
            .unwrap()
            .submit(verdict("r2", 300.0, true))
            .unwrap();
        assert_eq!(c.status, ChainStatus::NeedsRater);
        let c = c.submit(verdict("r3", 300.0, true)).unwrap();
        assert_eq!(c.status, ChainStatus::Concordant);
        assert_eq!(c.entries.len(), 3);
    }

    #[test]
    fn fourth_rater_when_third_disagrees() {
        let c = AdjudicationChain::new(CaseId::new("c"))
            .submit(verdict("r1", 300.0, false))
            .unwrap()
            .submit(verdict("r2", 300.0, true))
            .unwrap()
            // timestamps 5 s apart: outside tolerance
            .submit(verdict("r3", 305.0, true))
            .unwrap();
        assert_eq!(c.status, ChainStatus::NeedsRater);
        let c = c.submit(verdict("r4", 304.0, true)).unwrap();
        assert_eq!(c.status, ChainStatus::Concordant);
        assert_eq!(c.entries.len(), 4);
    }

    #[test]
    fn chain_errors() {
        let c = AdjudicationChain::new(CaseId::new("c")).submit(verdict("r1", 300.0, false)).unwrap();
        assert_eq!(
            c.submit(verdict("r1", 300.0, false)).unwrap_err(),
            AdjudicationError::DuplicateRater(RaterId::new("r1"))
        );
        let c = c.submit(verdict("r2", 300.0, false)).unwrap();
        assert_eq!(
            c.submit(verdict("r3", 300.0, false)).unwrap_err(),
            AdjudicationError::ChainClosed(CaseId::new("c"))
        );
    }

    fn qualified_case(t: f64) -> VideoCase {
        let case = VideoCase::received(
            CaseId::new("case-9"),
            CaseProvenance {
                country: Origin::known("BR"),
                device_vendor: Origin::known("V1"),
                approach: Approach::Laparoscopic,
                used_ioc: false,
                used_icg: false,
                source_institution: InstitutionId::new("i"),
            },
            "s3://bucket/case-9.mp4",
            2000.0,
        );
        let mut case = case.transition(&VideoEvent::ScreeningStarted).unwrap();
        // bypass validation to exercise the underflow path directly
        case.state = VideoState::Qualified;
        case.final_metadata = Some(verdict("r1", t, false));
        case
    }

    #[test]
    fn clip_window_arithmetic() {
        let clip = extract_clip(&qualified_case(300.0)).unwrap();
        assert_eq!((clip.window_start_s, clip.window_end_s), (210.0, 300.0));
        assert_eq!(clip.frame_count(), 90);
        assert_eq!(clip.annotated_frame_indices.len(), 18);
        let clip = extract_clip(&qualified_case(90.0)).unwrap();
        assert_eq!((clip.window_start_s, clip.window_end_s), (0.0, 90.0));
        assert_eq!(
            extract_clip(&qualified_case(89.0)).unwrap_err(),
            ClipError::WindowUnderflow(Some(89.0))
        );
    }

    #[test]
    fn clip_requires_qualified_case() {
        let mut c = qualified_case(300.0);
        c.state = VideoState::Screening;
        assert!(matches!(extract_clip(&c), Err(ClipError::NotQualified(..))));
    }

    #[test]
    fn audit_export_tracks_status() {
        let c = AdjudicationChain::new(CaseId::new("c"))
            .submit(verdict("r1", 300.0, false))
            .unwrap()
            .submit(verdict("r2", 300.0, false))
            .unwrap();
        let recs = audit_records(&c);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].status_after, ChainStatus::NeedsRater);
        assert_eq!(recs[1].status_after, ChainStatus::Concordant);
    }
}
