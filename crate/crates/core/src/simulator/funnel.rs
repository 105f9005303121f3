use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::domain::{Annotator, AnnotatorEvent, AnnotatorId, AnnotatorProfile, PASS_THRESHOLD};

/// Stage-by-stage recruitment probabilities. Each candidate either moves to
/// the next stage or stops there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FunnelModel {
    pub contacted: usize,
    /// Leaves before the eligibility check.
    pub p_drop_contacted: f64,
    /// Of those checked, lacks a clinical background.
    pub p_non_clinical: f64,
    /// Leaves after passing eligibility, before training.
    pub p_drop_eligible: f64,
    /// Leaves during training, before the exam.
    pub p_drop_training: f64,
    pub p_pass_exam: f64,
    /// Passed candidates activated by the organizers.
    pub p_activate: f64,
}

impl Default for FunnelModel {
    fn default() -> Self {
        // 106 contacted, 33 silent, 2 of 73 checked non-clinical, 71 eligible,
        // 2 + 2 leave before the exam, 67 examined, 27 pass, 20 activated
        Self {
            contacted: 106,
            p_drop_contacted: 33.0 / 106.0,
            p_non_clinical: 2.0 / 73.0,
            p_drop_eligible: 2.0 / 71.0,
            p_drop_training: 2.0 / 69.0,
            p_pass_exam: 27.0 / 67.0,
            p_activate: 20.0 / 27.0,
        }
    }
}

impl FunnelModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let rates = [
            ("p_drop_contacted", self.p_drop_contacted),
            ("p_non_clinical", self.p_non_clinical),
            ("p_drop_eligible", self.p_drop_eligible),
            ("p_drop_training", self.p_drop_training),
            ("p_pass_exam", self.p_pass_exam),
            ("p_activate", self.p_activate),
        ];
        for (name, v) in rates {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::InvalidConfig(format!("funnel.{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Walks `model.contacted` candidates through recruitment. Every candidate
/// is built by applying legal events, so the result obeys the annotator
/// state machine.
pub fn simulate_funnel(model: &FunnelModel, rng: &mut impl Rng) -> Vec<Annotator> {
    use AnnotatorEvent as E;

    (0..model.contacted)
        .map(|i| {
            let id = AnnotatorId::new(format!("cand-{:03}", i + 1));
            let mut events = Vec::new();
            let clinical = if rng.random_bool(model.p_drop_contacted) {
                events.push(E::DroppedOut);
                true
            } else if rng.random_bool(model.p_non_clinical) {
                events.push(E::EligibilityFailed);
                false
            } else {
                events.push(E::EligibilityPassed);
                if rng.random_bool(model.p_drop_eligible) {
                    events.push(E::DroppedOut);
                } else {
                    events.push(E::TrainingStarted);
                    if rng.random_bool(model.p_drop_training) {
                        events.push(E::DroppedOut);
                    } else {
                        let score = if rng.random_bool(model.p_pass_exam) {
                            rng.random_range(PASS_THRESHOLD..=1.0)
                        } else {
                            rng.random_range(0.4..PASS_THRESHOLD)
                        };
                        events.push(E::ExamSubmitted { score });
                        events.push(E::ExamGraded);
                        if score >= PASS_THRESHOLD && rng.random_bool(model.p_activate) {
                            events.push(E::Activated);
                        }
                    }
                }
                true
            };
            let start = Annotator::contacted(
                id.clone(),
                AnnotatorProfile {
                    clinical_background: clinical,
                    contact: format!("{id}@example.org"),
                },
            );
            events
                .iter()
                .try_fold(start, |a, e| a.transition(e))
                .expect("funnel walk follows legal transitions")
        })
        .collect()
}
