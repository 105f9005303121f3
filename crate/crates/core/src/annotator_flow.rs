//! Competency exam grading and the recruitment funnel report.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Annotator, AnnotatorState, CvsCriterion, PerCriterion};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamItem {
    pub clip_ref: String,
    pub expert_key: PerCriterion<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetencyExam {
    pub exam_id: String,
    pub items: Vec<ExamItem>,
}

/// Candidate answers keyed by `clip_ref`.
pub type ExamAnswers = BTreeMap<String, PerCriterion<bool>>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExamError {
    #[error("exam has no items")]
    Empty,
    #[error("answers missing for {0:?}")]
    IncompleteAnswers(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExamGrade {
    pub correct: usize,
    pub total: usize,
    pub score: f64,
    pub verdict: Verdict,
}

impl CompetencyExam {
    pub fn new(exam_id: impl Into<String>, items: Vec<ExamItem>) -> Result<Self, ExamError> {
        if items.is_empty() {
            return Err(ExamError::Empty);
        }
        Ok(Self {
            exam_id: exam_id.into(),
            items,
        })
    }
}

/// Pass iff `correct / total >= 0.75`, evaluated in integers.
pub fn verdict_for(correct: usize, total: usize) -> Verdict {
    if total > 0 && 4 * correct >= 3 * total {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Scores answers cell by cell: three criterion cells per exam item.
pub fn grade_exam(answers: &ExamAnswers, exam: &CompetencyExam) -> Result<ExamGrade, ExamError> {
    if exam.items.is_empty() {
        return Err(ExamError::Empty);
    }
    let missing: Vec<String> = exam
        .items
        .iter()
        .filter(|it| !answers.contains_key(&it.clip_ref))
        .map(|it| it.clip_ref.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ExamError::IncompleteAnswers(missing));
    }
    let correct = exam
        .items
        .iter()
        .map(|it| {
            let a = &answers[&it.clip_ref];
            CvsCriterion::ALL
                .iter()
                .filter(|&&k| a[k] == it.expert_key[k])
                .count()
        })
        .sum::<usize>();
    let total = 3 * exam.items.len();
    Ok(ExamGrade {
        correct,
        total,
        score: correct as f64 / total as f64,
        verdict: verdict_for(correct, total),
    })
}

/// Cumulative counts along the recruitment funnel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunnelReport {
    pub contacted: usize,
    pub eligible: usize,
    /// Rejected at the eligibility check.
    pub excluded: usize,
    pub exam_taken: usize,
    pub passed: usize,
    pub failed: usize,
    /// Activated by an organizer (ever reached `Active`).
    pub qualified: usize,
    /// Left without qualifying or being excluded: dropouts plus exam failures.
    pub dropped: usize,
    /// Annotators currently able to receive work.
    pub active: usize,
}

pub fn funnel_report<'a>(pool: impl IntoIterator<Item = &'a Annotator>) -> FunnelReport {
    use AnnotatorState as S;

    let mut r = FunnelReport::default();
    for a in pool {
        let furthest = a.furthest_state();
        r.contacted += 1;
        if furthest.funnel_depth() >= 1 {
            r.eligible += 1;
        }
        if a.exam_score.is_some() {
            r.exam_taken += 1;
        }
        if matches!(furthest, S::Qualified | S::Active | S::Paused) {
            r.passed += 1;
        }
        if matches!(furthest, S::Active | S::Paused) {
            r.qualified += 1;
        }
        match a.state {
            S::Ineligible => r.excluded += 1,
            S::Failed => {
                r.failed += 1;
                r.dropped += 1;
            }
            S::Dropped => r.dropped += 1,
            S::Active => r.active += 1,
            _ => {}
        }
    }
    r
}

impl fmt::Display for FunnelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("contacted", self.contacted),
            ("eligible", self.eligible),
            ("excluded", self.excluded),
            ("exam_taken", self.exam_taken),
            ("passed", self.passed),
            ("failed", self.failed),
            ("qualified", self.qualified),
            ("dropped", self.dropped),
            ("active", self.active),
        ];
        writeln!(f, "{:<12} {:>6}", "stage", "count")?;
        for (name, n) in rows {
            writeln!(f, "{name:<12} {n:>6}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AnnotatorEvent, AnnotatorId, AnnotatorProfile};

    fn exam(n: usize) -> CompetencyExam {
        let items = (0..n)
            .map(|i| ExamItem {
                clip_ref: format!("q{i}"),
                expert_key: PerCriterion::new(i % 2 == 0, true, false),
            })
            .collect();
        CompetencyExam::new("e", items).unwrap()
    }

    fn answers_with_errors(exam: &CompetencyExam, wrong_cells: usize) -> ExamAnswers {
        let mut left = wrong_cells;
        exam.items
            .iter()
            .map(|it| {
                let mut a = it.expert_key;
                for k in CvsCriterion::ALL {
                    if left > 0 {
                        a[k] = !a[k];
                        left -= 1;
                    }
                }
                (it.clip_ref.clone(), a)
            })
            .collect()
    }

    #[test]
    fn threshold_in_integers() {
        assert_eq!(verdict_for(30, 40), Verdict::Pass);
        assert_eq!(verdict_for(29, 40), Verdict::Fail);
        assert_eq!(verdict_for(0, 0), Verdict::Fail);
    }

    #[test]
    fn grading_at_and_below_threshold() {
        let e = exam(12);
        let g = grade_exam(&answers_with_errors(&e, 9), &e).unwrap();
        assert_eq!((g.correct, g.total), (27, 36));
        assert_eq!(g.score, 0.75);
        assert_eq!(g.verdict, Verdict::Pass);
        let g = grade_exam(&answers_with_errors(&e, 10), &e).unwrap();
        assert_eq!(g.verdict, Verdict::Fail);
        let g = grade_exam(&answers_with_errors(&e, 0), &e).unwrap();
        assert_eq!((g.score, g.verdict), (1.0, Verdict::Pass));
    }

    #[test]
    fn missing_answers_rejected() {
        let e = exam(3);
        let mut a = answers_with_errors(&e, 0);
        a.remove("q1");
        assert_eq!(grade_exam(&a, &e).unwrap_err(), ExamError::IncompleteAnswers(vec!["q1".into()]));
        assert_eq!(CompetencyExam::new("x", vec![]).unwrap_err(), ExamError::Empty);
    }

    fn walk(id: usize, clinical: bool, events: &[AnnotatorEvent]) -> Annotator {
        let a = Annotator::contacted(
            AnnotatorId::new(format!("a{id}")),
            AnnotatorProfile {
                clinical_background: clinical,
                contact: String::new(),
            },
        );
        events.iter().fold(a, |a, e| a.transition(e).unwrap())
    }

    /// Builds the published recruitment outcome event by event.
    pub(crate) fn published_funnel_pool() -> Vec<Annotator> {
        use AnnotatorEvent::*;
        let mut pool = Vec::new();
        let mut id = 0;
        let mut push = |clinical: bool, events: &[AnnotatorEvent], n: usize| {
            for _ in 0..n {
                pool.push(walk(id, clinical, events));
                id += 1;
            }
        };
        push(false, &[EligibilityFailed], 2);
        push(true, &[DroppedOut], 33);
        push(true, &[EligibilityPassed, DroppedOut], 2);
        push(true, &[EligibilityPassed, TrainingStarted, DroppedOut], 2);
        push(true, &[EligibilityPassed, TrainingStarted, ExamSubmitted { score: 0.6 }, ExamGraded], 40);
        push(true, &[EligibilityPassed, TrainingStarted, ExamSubmitted { score: 0.8 }, ExamGraded], 7);
        push(
            true,
            &[EligibilityPassed, TrainingStarted, ExamSubmitted { score: 0.9 }, ExamGraded, Activated],
            20,
        );
        pool
    }

    #[test]
    fn published_funnel_counts() {
        let r = funnel_report(&published_funnel_pool());
        assert_eq!(r.contacted, 106);
        assert_eq!(r.eligible, 71);
        assert_eq!(r.excluded, 2);
        assert_eq!(r.exam_taken, 67);
        assert_eq!(r.passed, 27);
        assert_eq!(r.qualified, 20);
        assert_eq!(r.dropped, 77);
    }

    #[test]
    fn empty_pool_is_all_zero() {
        assert_eq!(funnel_report(&[]), FunnelReport::default());
    }

    #[test]
    fn funnel_counts_are_monotone() {
        let r = funnel_report(&published_funnel_pool());
        assert!(r.contacted >= r.eligible && r.eligible >= r.exam_taken);
        assert!(r.exam_taken >= r.passed && r.passed >= r.qualified);
        let table = r.to_string();
        assert!(table.contains("qualified        20"));
    }

    #[test]
    fn grading_is_permutation_invariant() {
        let e = exam(8);
        let a = answers_with_errors(&e, 5);
        let mut reversed = e.clone();
        reversed.items.reverse();
        assert_eq!(grade_exam(&a, &e).unwrap(), grade_exam(&a, &reversed).unwrap());
    }
}
