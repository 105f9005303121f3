use rand::Rng;
use rand_distr::{Distribution, Normal as NormalSampler};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::{AgreementModel, ConfidenceModel, SimError};
use crate::domain::{AnnotatorId, Assessment, ClipId, CvsCriterion, FrameLabels, PerCriterion, ANNOTATED_FRAMES};

const FRAMES: usize = ANNOTATED_FRAMES;
/// Onset offsets an annotator may perceive when they disagree on timing.
const JITTER: [i64; 4] = [-2, -1, 1, 2];

/// Mean and SD of `clamp(X, 0, 1)` for `X ~ N(m, s^2)`.
pub fn clamped_normal_moments(m: f64, s: f64) -> (f64, f64) {
    let n = Normal::standard();
    let (a, b) = (-m / s, (1.0 - m) / s);
    let (ca, cb) = (n.cdf(a), n.cdf(b));
    let (pa, pb) = (n.pdf(a), n.pdf(b));
    let mid = cb - ca;
    let upper = 1.0 - cb;
    let e1 = m * mid + s * (pa - pb) + upper;
    let e2 = (m * m + s * s) * mid + 2.0 * m * s * (pa - pb) + s * s * (a * pa - b * pb) + upper;
    (e1, (e2 - e1 * e1).max(0.0).sqrt())
}

/// Underlying normal parameters whose clamped moments hit the target.
pub(super) fn calibrate_confidence(target: &ConfidenceModel) -> (f64, f64) {
    let (mut m, mut s) = (target.mean, target.sd);
    for _ in 0..500 {
        let (e1, sd) = clamped_normal_moments(m, s);
        m += target.mean - e1;
        s *= target.sd / sd;
        if (e1 - target.mean).abs() < 1e-12 && (sd - target.sd).abs() < 1e-12 {
            break;
        }
    }
    (m, s)
}

/// Confidence sampler for one split, rounded to hundredths.
#[derive(Debug, Clone, Copy)]
pub(super) struct ConfidenceSampler(NormalSampler<f64>);

impl ConfidenceSampler {
    pub(super) fn new(target: &ConfidenceModel) -> Self {
        let (m, s) = calibrate_confidence(target);
        Self(NormalSampler::new(m, s).expect("calibrated sd is positive"))
    }

    pub(super) fn sample(&self, rng: &mut impl Rng) -> f64 {
        (self.0.sample(rng).clamp(0.0, 1.0) * 100.0).round() / 100.0
    }
}

/// Ground truth behind one clip: whether each criterion is achieved in the
/// window and, if so, the first annotated frame position where it holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentClip {
    pub achieved: PerCriterion<bool>,
    pub onset: PerCriterion<u8>,
}

/// Latent rates and onset-jitter probabilities solved from the targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementCalibration {
    /// Latent achievement rate per criterion.
    pub latent_rate: PerCriterion<f64>,
    /// Chance an annotator perceives a shifted onset.
    pub jitter: PerCriterion<f64>,
    pub video_flip: f64,
}

/// Chance three raters' majority matches a latent outcome under flip `eps`.
fn majority_correct(eps: f64) -> f64 {
    (1.0 - eps).powi(3) + 3.0 * eps * (1.0 - eps).powi(2)
}

/// Expected share of frame cells with unanimous raters.
fn expected_full_agreement(q: f64, eps: f64, jitter: f64) -> f64 {
    let unanimous = |p: f64| p.powi(3) + (1.0 - p).powi(3);
    let mut total = 0.0;
    for t in 0..FRAMES {
        // latent not achieved: a flipped rater places the onset uniformly
        let p = eps * (t + 1) as f64 / FRAMES as f64;
        total += (1.0 - q) * unanimous(p);
        for o in 0..FRAMES {
            let shifted = JITTER
                .iter()
                .filter(|&&d| (o as i64 + d).clamp(0, FRAMES as i64 - 1) <= t as i64)
                .count() as f64
                / JITTER.len() as f64;
            let on = (1.0 - jitter) * f64::from(u8::from(o <= t)) + jitter * shifted;
            total += q / FRAMES as f64 * unanimous((1.0 - eps) * on);
        }
    }
    total / FRAMES as f64
}

impl AgreementCalibration {
    pub fn solve(model: &AgreementModel) -> Result<Self, SimError> {
        let eps = model.video_flip;
        let r = majority_correct(eps);
        if r <= 0.5 {
            return Err(SimError::InvalidConfig(format!("video_flip {eps} leaves no signal")));
        }
        let mut latent_rate = PerCriterion::new(0.0, 0.0, 0.0);
        let mut jitter = PerCriterion::new(0.0, 0.0, 0.0);
        for k in CvsCriterion::ALL {
            let q = (model.positive_rate[k] - (1.0 - r)) / (2.0 * r - 1.0);
            if !(0.0..=1.0).contains(&q) {
                return Err(SimError::InvalidConfig(format!(
                    "positive_rate.{k} = {} is unreachable with video_flip {eps}",
                    model.positive_rate[k]
                )));
            }
            let target = model.full_agreement[k];
            let (hi_agree, lo_agree) = (expected_full_agreement(q, eps, 0.0), expected_full_agreement(q, eps, 1.0));
            if target > hi_agree + 1e-12 || target < lo_agree - 1e-12 {
                return Err(SimError::InvalidConfig(format!(
                    "full_agreement.{k} = {target} outside the attainable [{lo_agree:.3}, {hi_agree:.3}]"
                )));
            }
            // agreement falls as jitter rises
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if expected_full_agreement(q, eps, mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            latent_rate[k] = q;
            jitter[k] = 0.5 * (lo + hi);
        }
        Ok(Self {
            latent_rate,
            jitter,
            video_flip: eps,
        })
    }

    /// Expected full-agreement share under these parameters.
    pub fn expected_full_agreement(&self) -> PerCriterion<f64> {
        PerCriterion::from_fn(|k| expected_full_agreement(self.latent_rate[k], self.video_flip, self.jitter[k]))
    }

    pub fn sample_latent(&self, rng: &mut impl Rng) -> LatentClip {
        let achieved = PerCriterion::from_fn(|k| rng.random_bool(self.latent_rate[k]));
        let onset = PerCriterion::from_fn(|_| rng.random_range(0..FRAMES as u8));
        LatentClip { achieved, onset }
    }

    /// One annotator's assessment of a clip. Frame labels switch on at the
    /// annotator's perceived onset; the video-level answer is whether they
    /// saw the criterion at all.
    pub(super) fn assess(
        &self,
        latent: &LatentClip,
        clip_id: &ClipId,
        annotator_id: &AnnotatorId,
        confidence: f64,
        rng: &mut impl Rng,
    ) -> Assessment {
        let mut seen = PerCriterion::new(None, None, None);
        for k in CvsCriterion::ALL {
            let flip = rng.random_bool(self.video_flip);
            seen[k] = match (latent.achieved[k], flip) {
                (true, false) => {
                    let mut o = i64::from(latent.onset[k]);
                    if rng.random_bool(self.jitter[k]) {
                        o += JITTER[rng.random_range(0..JITTER.len())];
                    }
                    Some(o.clamp(0, FRAMES as i64 - 1) as usize)
                }
                (false, true) => Some(rng.random_range(0..FRAMES)),
                _ => None,
            };
        }
        let frame_labels: Vec<FrameLabels> = (0..FRAMES)
            .map(|t| PerCriterion::from_fn(|k| seen[k].is_some_and(|o| o <= t)))
            .collect();
        Assessment {
            clip_id: clip_id.clone(),
            annotator_id: annotator_id.clone(),
            frame_labels,
            confidence,
            video_level: PerCriterion::from_fn(|k| seen[k].is_some()),
        }
    }
}
