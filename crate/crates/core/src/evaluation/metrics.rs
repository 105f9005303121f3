use std::cmp::Ordering;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ApError {
    #[error("no positive labels; average precision undefined")]
    NoPositives,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
}

/// Step-wise precision-recall integral. Tied scores form one group whose
/// precision is taken after the whole group is admitted.
pub fn average_precision<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T, ApError> {
    if scores.len() != labels.len() {
        return Err(ApError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(ApError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let mut ap = T::zero();
    let (mut seen, mut hits) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_hits = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            group_hits += labels[order[j]] as usize;
            j += 1;
        }
        seen += j - i;
        hits += group_hits;
        if group_hits > 0 {
            let recall_step = T::from_count(group_hits) / T::from_count(positives);
            let precision = T::from_count(hits) / T::from_count(seen);
            ap = ap + recall_step * precision;
        }
        i = j;
    }
    Ok(ap)
}

/// Mean squared difference between predictions and targets.
pub fn brier<T: Scalar>(predictions: &[T], targets: &[T]) -> Option<T> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return None;
    }
    let ss = predictions
        .iter()
        .zip(targets)
        .fold(T::zero(), |acc, (&p, &y)| acc + (p - y) * (p - y));
    Some(ss / T::from_count(predictions.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no variant scores")]
pub struct EmptyVariants;

/// Drops the worst `floor(n / 10)` variant scores and returns the minimum
/// of the remainder.
pub fn domain_robustness_score<T: Scalar>(variant_scores: &[T]) -> Result<T, EmptyVariants> {
    if variant_scores.is_empty() {
        return Err(EmptyVariants);
    }
    let mut sorted = variant_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(sorted[variant_scores.len() / 10])
}
