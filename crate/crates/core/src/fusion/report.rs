use serde::{Deserialize, Serialize};

use crate::domain::{CvsCriterion, PerCriterion};
use crate::scalar::Scalar;

/// Frame-level classification metrics, expressed as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport<T> {
    pub frames: usize,
    pub accuracy: PerCriterion<T>,
    pub macro_f1: PerCriterion<T>,
    pub overall_macro_f1: T,
    /// Share of frames with all three criteria correct.
    pub subset_accuracy: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{predictions} prediction frames for {labels} label frames")]
pub struct ShapeMismatch {
    pub predictions: usize,
    pub labels: usize,
}

/// `2tp / (2tp + fp + fn)`. A class absent from both predictions and labels
/// scores 1.
pub fn f1_score<T: Scalar>(tp: usize, fp: usize, fn_: usize) -> T {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        T::one()
    } else {
        T::from_count(2 * tp) / T::from_count(denom)
    }
}

pub fn overall_macro_f1<T: Scalar>(per: &PerCriterion<T>) -> T {
    (per.c1 + per.c2 + per.c3) / T::from_count(3)
}

pub fn classification_report<T: Scalar>(
    predictions: &[PerCriterion<bool>],
    labels: &[PerCriterion<bool>],
) -> Result<ClassificationReport<T>, ShapeMismatch> {
    if predictions.len() != labels.len() {
        return Err(ShapeMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let n = labels.len();
    let hundred = T::from_count(100);
    let pct = |num: usize| {
        if n == 0 {
            hundred
        } else {
            hundred * T::from_count(num) / T::from_count(n)
        }
    };
    let pairs = || predictions.iter().zip(labels);

    let accuracy = PerCriterion::from_fn(|k: CvsCriterion| pct(pairs().filter(|(p, l)| p[k] == l[k]).count()));
    let macro_f1 = PerCriterion::from_fn(|k: CvsCriterion| {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (p, l) in pairs() {
            match (p[k], l[k]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        // class 0 swaps the roles of positives and negatives
        let f1_pos: T = f1_score(tp, fp, fn_);
        let f1_neg: T = f1_score(tn, fn_, fp);
        hundred * (f1_pos + f1_neg) / T::from_count(2)
    });
    Ok(ClassificationReport {
        frames: n,
        accuracy,
        overall_macro_f1: overall_macro_f1(&macro_f1),
        macro_f1,
        subset_accuracy: pct(pairs().filter(|(p, l)| p == l).count()),
    })
}

/// Presentation rounding: half away from zero at 2 decimals.
pub fn round_half_up_2(x: f64) -> f64 {
    // nudge by a relative epsilon so that values like 62.945 stored as
    // 62.94499999 still round up
    let scaled = x * 100.0;
    let nudged = scaled + scaled.signum() * scaled.abs().max(1.0) * 1e-12;
    nudged.round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;
    use num_rational::Ratio;

    fn grid(bits: &[u8]) -> Vec<PerCriterion<bool>> {
        bits.iter()
            .map(|b| PerCriterion::new(b & 1 == 1, b & 2 == 2, b & 4 == 4))
            .collect()
    }

    #[test]
    fn perfect_predictions_score_100() {
        let l = grid(&[0, 1, 2, 7, 5, 0]);
        let r = classification_report::<f64>(&l, &l).unwrap();
        assert_eq!(r.subset_accuracy, 100.0);
        assert_eq!(r.overall_macro_f1, 100.0);
        assert!(CvsCriterion::ALL.iter().all(|&k| r.accuracy[k] == 100.0 && r.macro_f1[k] == 100.0));
    }

    #[test]
    fn shape_mismatch() {
        let e = classification_report::<f64>(&grid(&[0]), &grid(&[0, 1])).unwrap_err();
        assert_eq!(e, ShapeMismatch { predictions: 1, labels: 2 });
    }

    #[test]
    fn all_negative_on_balanced_labels() {
        let labels = grid(&[7, 7, 7, 7, 7, 0, 0, 0, 0, 0]);
        let preds = grid(&[0; 10]);
        let r = classification_report::<Exact>(&preds, &labels).unwrap();
        // class 0: tp=5, fp=5 (missed positives), fn=0 -> F1 = 10/15
        let f1_neg = Ratio::new(2, 3);
        let expected = Ratio::from_integer(100) * f1_neg / Ratio::from_integer(2);
        assert_eq!(r.macro_f1.c1, expected);
        assert_eq!(r.overall_macro_f1, expected);
        assert_eq!(r.subset_accuracy, Ratio::from_integer(50));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up_2(62.945), 62.95);
        assert_eq!(round_half_up_2(62.9433), 62.94);
        assert_eq!(round_half_up_2(0.125), 0.13);
    }
}
