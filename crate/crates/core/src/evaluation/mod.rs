//! Subchallenge metrics, variant-split robustness, the causal audit, and
//! rank derivation for the leaderboard.
//!
//! Only the annotated frame grid is scored; predictions for the other
//! frames are accepted but ignored.

mod causal;
mod leaderboard;
mod metrics;
mod ranking;
mod submission;
mod variants;

use serde::{Deserialize, Serialize};

use crate::domain::TeamId;
use crate::scalar::Scalar;

pub use causal::{
    causal_audit, AuditError, AuditOutcome, ClipMedia, FnPredictor, FrameDescriptor, ProcessPredictor,
    StreamingPredictor, CAUSAL_TOLERANCE, PROBES,
};
pub use leaderboard::{leaderboard, rank_columns, to_csv, to_json, LeaderboardRow, RankColumns, TeamScores};
pub use metrics::{average_precision, brier, domain_robustness_score, ApError, EmptyVariants};
pub use ranking::{
    aggregate_overall, aligned, rank_table, robustness_scatter, spearman, Direction, MisalignedTeams, Ranks,
    ScatterRow, SpearmanError,
};
pub use submission::{
    brier_score, map_score, ClipPrediction, CriterionScores, EvalError, GroundTruth, Submission, SubmissionError,
    SubmissionMeta,
};
pub use variants::{
    build_variant_splits, default_variant_splits, robustness, EmptySplit, RobustnessReport, SkipFlag, VariantPredicate,
    VariantScore, VariantSplit, VariantSplitDef,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub team_id: TeamId,
    pub sub_a: CriterionScores<T>,
    pub sub_b: CriterionScores<T>,
    pub sub_c: RobustnessReport<T>,
    pub causal_audit: Option<AuditOutcome>,
}

/// Scores a submission on every ground-truth clip and on each variant split.
pub fn evaluate<T: Scalar>(
    sub: &Submission,
    ground: &GroundTruth<T>,
    splits: &[VariantSplit],
) -> Result<MetricsReport<T>, EvalError> {
    let all = ground.clip_ids();
    Ok(MetricsReport {
        team_id: sub.team_id.clone(),
        sub_a: map_score(sub, ground, &all)?,
        sub_b: brier_score(sub, ground, &all)?,
        sub_c: robustness(sub, ground, splits)?,
        causal_audit: None,
    })
}

impl<T: Scalar> MetricsReport<T> {
    /// Leaderboard entry; mAP and DRS as percentages. Undefined scores
    /// become NaN and rank last.
    pub fn team_scores(&self) -> TeamScores {
        let pct = |v: Option<T>| v.map_or(f64::NAN, |v| 100.0 * v.to_f64_lossy());
        TeamScores {
            team_id: self.team_id.clone(),
            map_a: pct(self.sub_a.mean),
            brier_b: self.sub_b.mean.map_or(f64::NAN, |v| v.to_f64_lossy()),
            drs_c: pct(self.sub_c.drs),
            baseline: false,
        }
    }
}
