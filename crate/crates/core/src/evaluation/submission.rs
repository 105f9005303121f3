use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, brier, ApError};
use crate::domain::{ClipId, CvsCriterion, PerCriterion, TeamId, CLIP_FRAMES};
use crate::fusion::FusedFrame;
use crate::scalar::Scalar;

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub team_id: TeamId,
    pub clip_id: ClipId,
    pub frames: Vec<PerCriterion<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionMeta {
    pub name: String,
    pub contact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub team_id: TeamId,
    pub meta: SubmissionMeta,
    pub clips: BTreeMap<ClipId, Vec<PerCriterion<f64>>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubmissionError {
    #[error("empty prediction file")]
    Empty,
    #[error("prediction file mixes teams {0} and {1}")]
    MixedTeams(TeamId, TeamId),
    #[error("clip {0} predicted twice")]
    DuplicateClip(ClipId),
    #[error("clip {clip}: expected {CLIP_FRAMES} frames, got {got}")]
    FrameCount { clip: ClipId, got: usize },
    #[error("clip {clip} frame {frame}: probability {value} outside [0, 1]")]
    Probability { clip: ClipId, frame: usize, value: f64 },
    #[error("missing clip {0}")]
    MissingClip(ClipId),
}

impl Submission {
    pub fn from_predictions(
        lines: impl IntoIterator<Item = ClipPrediction>,
        meta: SubmissionMeta,
    ) -> Result<Self, SubmissionError> {
        let mut team: Option<TeamId> = None;
        let mut clips = BTreeMap::new();
        for line in lines {
            match &team {
                None => team = Some(line.team_id.clone()),
                Some(t) if *t != line.team_id => return Err(SubmissionError::MixedTeams(t.clone(), line.team_id)),
                Some(_) => {}
            }
            if clips.insert(line.clip_id.clone(), line.frames).is_some() {
                return Err(SubmissionError::DuplicateClip(line.clip_id));
            }
        }
        let team_id = team.ok_or(SubmissionError::Empty)?;
        let sub = Self { team_id, meta, clips };
        sub.check_shape()?;
        Ok(sub)
    }

    fn check_shape(&self) -> Result<(), SubmissionError> {
        for (clip, frames) in &self.clips {
            if frames.len() != CLIP_FRAMES {
                return Err(SubmissionError::FrameCount {
                    clip: clip.clone(),
                    got: frames.len(),
                });
            }
            for (i, f) in frames.iter().enumerate() {
                for (_, &v) in f.iter() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(SubmissionError::Probability {
                            clip: clip.clone(),
                            frame: i,
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Every test clip must be predicted.
    pub fn validate_against<'a>(&self, test_clips: impl IntoIterator<Item = &'a ClipId>) -> Result<(), SubmissionError> {
        for c in test_clips {
            if !self.clips.contains_key(c) {
                return Err(SubmissionError::MissingClip(c.clone()));
            }
        }
        self.check_shape()
    }

    pub fn to_predictions(&self) -> Vec<ClipPrediction> {
        self.clips
            .iter()
            .map(|(clip_id, frames)| ClipPrediction {
                team_id: self.team_id.clone(),
                clip_id: clip_id.clone(),
                frames: frames.clone(),
            })
            .collect()
    }
}

/// Fused ground truth indexed by clip.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T> {
    pub clips: BTreeMap<ClipId, Vec<FusedFrame<T>>>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn from_frames(frames: impl IntoIterator<Item = FusedFrame<T>>) -> Self {
        let mut clips: BTreeMap<ClipId, Vec<FusedFrame<T>>> = BTreeMap::new();
        for f in frames {
            clips.entry(f.clip_id.clone()).or_default().push(f);
        }
        for v in clips.values_mut() {
            v.sort_by_key(|f| f.frame_index);
        }
        Self { clips }
    }

    pub fn clip_ids(&self) -> BTreeSet<ClipId> {
        self.clips.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction for clip {0}")]
    MissingClip(ClipId),
    #[error("clip {clip}: no prediction for frame {frame}")]
    MissingFrame { clip: ClipId, frame: u32 },
    #[error("no ground truth for clip {0}")]
    NoGround(ClipId),
    #[error("empty clip set")]
    EmptyClipSet,
}

/// Per-criterion scores with their mean. A criterion is `None` when its
/// metric is undefined on the clip set (no positive frames for AP).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionScores<T> {
    pub per_criterion: PerCriterion<Option<T>>,
    pub mean: Option<T>,
}

impl<T: Scalar> CriterionScores<T> {
    fn from_parts(per_criterion: PerCriterion<Option<T>>) -> Self {
        let defined: Vec<T> = per_criterion.values().into_iter().flatten().copied().collect();
        let mean = crate::scalar::mean(&defined);
        Self { per_criterion, mean }
    }

    pub fn skipped(&self) -> Vec<CvsCriterion> {
        self.per_criterion
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| k)
            .collect()
    }
}

/// Pooled (prediction, ground frame) pairs for the annotated frames of a
/// clip set.
fn collect<'a, T: Scalar>(
    sub: &'a Submission,
    ground: &'a GroundTruth<T>,
    clip_set: &BTreeSet<ClipId>,
) -> Result<Vec<(&'a PerCriterion<f64>, &'a FusedFrame<T>)>, EvalError> {
    if clip_set.is_empty() {
        return Err(EvalError::EmptyClipSet);
    }
    let mut out = Vec::new();
    for clip in clip_set {
        let truth = ground.clips.get(clip).ok_or_else(|| EvalError::NoGround(clip.clone()))?;
        let preds = sub.clips.get(clip).ok_or_else(|| EvalError::MissingClip(clip.clone()))?;
        for g in truth {
            let p = preds.get(g.frame_index as usize).ok_or_else(|| EvalError::MissingFrame {
                clip: clip.clone(),
                frame: g.frame_index,
            })?;
            out.push((p, g));
        }
    }
    Ok(out)
}

/// Frame-level AP per criterion against the mode labels, pooled over the
/// clip set.
pub fn map_score<T: Scalar>(
    sub: &Submission,
    ground: &GroundTruth<T>,
    clip_set: &BTreeSet<ClipId>,
) -> Result<CriterionScores<T>, EvalError> {
    let pairs = collect(sub, ground, clip_set)?;
    let per = PerCriterion::from_fn(|k| {
        let scores: Vec<T> = pairs.iter().map(|(p, _)| T::from_f64_lossy(p[k])).collect();
        let labels: Vec<bool> = pairs.iter().map(|(_, g)| g.mode[k]).collect();
        match average_precision(&scores, &labels) {
            Ok(ap) => Some(ap),
            Err(ApError::NoPositives) => {
                tracing::warn!(criterion = %k, "no positive frames; AP skipped");
                None
            }
            Err(ApError::LengthMismatch { .. }) => unreachable!("pairs are aligned"),
        }
    });
    Ok(CriterionScores::from_parts(per))
}

/// Brier score per criterion against the confidence-aware soft labels.
pub fn brier_score<T: Scalar>(
    sub: &Submission,
    ground: &GroundTruth<T>,
    clip_set: &BTreeSet<ClipId>,
) -> Result<CriterionScores<T>, EvalError> {
    let pairs = collect(sub, ground, clip_set)?;
    let per = PerCriterion::from_fn(|k| {
        let p: Vec<T> = pairs.iter().map(|(p, _)| T::from_f64_lossy(p[k])).collect();
        let y: Vec<T> = pairs.iter().map(|(_, g)| g.soft[k]).collect();
        brier(&p, &y)
    });
    Ok(CriterionScores::from_parts(per))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::AgreementClass;

    fn ground(clip: &str, mode: [bool; 2], soft: [f64; 2]) -> Vec<FusedFrame<f64>> {
        (0..2)
            .map(|i| FusedFrame {
                clip_id: ClipId::new(clip),
                frame_index: 5 * i as u32,
                mode: PerCriterion::new(mode[i], mode[i], mode[i]),
                soft: PerCriterion::new(soft[i], soft[i], soft[i]),
                agreement: PerCriterion::new(AgreementClass::Full, AgreementClass::Full, AgreementClass::Full),
            })
            .collect()
    }

    fn sub(clips: &[&str], p: f64) -> Submission {
        Submission::from_predictions(
            clips.iter().map(|c| ClipPrediction {
                team_id: TeamId::new("t"),
                clip_id: ClipId::new(*c),
                frames: vec![PerCriterion::new(p, p, p); CLIP_FRAMES],
            }),
            SubmissionMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn constant_half_predictor() {
        let g = GroundTruth::from_frames(ground("a", [true, false], [1.0, 0.0]));
        let set = g.clip_ids();
        let b = brier_score(&sub(&["a"], 0.5), &g, &set).unwrap();
        assert_eq!(b.mean, Some(0.25));
        let m = map_score(&sub(&["a"], 0.5), &g, &set).unwrap();
        assert_eq!(m.per_criterion.c1, Some(0.5));
    }

    #[test]
    fn missing_clip_and_undefined_ap() {
        let g = GroundTruth::from_frames(ground("a", [false, false], [0.0, 0.0]));
        let set = g.clip_ids();
        let m = map_score(&sub(&["a"], 0.1), &g, &set).unwrap();
        assert_eq!(m.mean, None);
        assert_eq!(m.skipped().len(), 3);
        assert_eq!(
            map_score(&sub(&["b"], 0.1), &g, &set).unwrap_err(),
            EvalError::MissingClip(ClipId::new("a"))
        );
        assert_eq!(map_score(&sub(&["a"], 0.1), &g, &BTreeSet::new()).unwrap_err(), EvalError::EmptyClipSet);
    }

    #[test]
    fn submission_shape_checks() {
        let bad = ClipPrediction {
            team_id: TeamId::new("t"),
            clip_id: ClipId::new("a"),
            frames: vec![PerCriterion::new(0.1, 1.5, 0.0); CLIP_FRAMES],
        };
        assert!(matches!(
            Submission::from_predictions([bad], SubmissionMeta::default()),
            Err(SubmissionError::Probability { .. })
        ));
        let s = sub(&["a"], 0.2);
        assert_eq!(
            s.validate_against(&[ClipId::new("a"), ClipId::new("b")]),
            Err(SubmissionError::MissingClip(ClipId::new("b")))
        );
        let short = ClipPrediction {
            team_id: TeamId::new("t"),
            clip_id: ClipId::new("a"),
            frames: vec![],
        };
        assert!(matches!(
            Submission::from_predictions([short], SubmissionMeta::default()),
            Err(SubmissionError::FrameCount { got: 0, .. })
        ));
    }
}
