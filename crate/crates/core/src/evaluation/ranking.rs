use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::TeamId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Higher,
    Lower,
}

pub type Ranks = BTreeMap<TeamId, usize>;

/// Dense ranks keyed by team; exact ties share the better rank. Unordered
/// scores (NaN) share the last rank.
pub fn rank_table<T: PartialOrd + Copy>(scores: &[(TeamId, T)], direction: Direction) -> Ranks {
    let (mut sorted, unordered): (Vec<&(TeamId, T)>, Vec<_>) =
        scores.iter().partition(|(_, s)| s.partial_cmp(s).is_some());
    sorted.sort_by(|a, b| {
        let ord = a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal);
        match direction {
            Direction::Higher => ord.reverse(),
            Direction::Lower => ord,
        }
    });
    let mut ranks = dense(sorted.into_iter().map(|(t, s)| (t.clone(), *s)));
    let last = ranks.values().max().copied().unwrap_or(0) + 1;
    ranks.extend(unordered.into_iter().map(|(t, _)| (t.clone(), last)));
    ranks
}

fn dense<K: PartialEq>(ordered: impl Iterator<Item = (TeamId, K)>) -> Ranks {
    let mut out = Ranks::new();
    let mut prev: Option<K> = None;
    let mut rank = 0;
    for (team, key) in ordered {
        if prev.as_ref() != Some(&key) {
            rank += 1;
        }
        out.insert(team, rank);
        prev = Some(key);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("rank columns cover different teams")]
pub struct MisalignedTeams;

/// Overall order by rank sum, ties broken by the better Subchallenge A rank.
pub fn aggregate_overall(a: &Ranks, b: &Ranks, c: &Ranks) -> Result<Ranks, MisalignedTeams> {
    let teams: BTreeSet<&TeamId> = a.keys().collect();
    if teams != b.keys().collect() || teams != c.keys().collect() {
        return Err(MisalignedTeams);
    }
    let mut keyed: Vec<(TeamId, (usize, usize))> = teams
        .into_iter()
        .map(|t| (t.clone(), (a[t] + b[t] + c[t], a[t])))
        .collect();
    keyed.sort_by_key(|(_, k)| *k);
    Ok(dense(keyed.into_iter()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SpearmanError {
    #[error("rank vectors of length {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two ranks")]
    TooShort,
}

/// `1 - 6 * sum(d^2) / (n (n^2 - 1))` for tie-free rankings.
pub fn spearman<T: Scalar>(x: &[usize], y: &[usize]) -> Result<T, SpearmanError> {
    if x.len() != y.len() {
        return Err(SpearmanError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(SpearmanError::TooShort);
    }
    let d2: usize = x.iter().zip(y).map(|(&a, &b)| a.abs_diff(b).pow(2)).sum();
    Ok(T::one() - T::from_count(6 * d2) / T::from_count(n * (n * n - 1)))
}

/// Aligns two rank maps on their shared teams.
pub fn aligned(x: &Ranks, y: &Ranks) -> (Vec<usize>, Vec<usize>) {
    x.iter().filter_map(|(t, &r)| y.get(t).map(|&s| (r, s))).unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub team_id: TeamId,
    pub mean: f64,
    /// Population standard deviation across variant splits.
    pub std: f64,
}

pub fn robustness_scatter<T: Scalar>(reports: &[(TeamId, Vec<T>)]) -> Vec<ScatterRow> {
    reports
        .iter()
        .map(|(team, values)| {
            let (mean, var) = match (crate::scalar::mean(values), crate::scalar::population_variance(values)) {
                (Some(m), Some(v)) => (m.to_f64_lossy(), v.to_f64_lossy()),
                _ => (f64::NAN, f64::NAN),
            };
            ScatterRow {
                team_id: team.clone(),
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;
    use num_rational::Ratio;

    fn t(s: &str) -> TeamId {
        TeamId::new(s)
    }

    #[test]
    fn dense_ranks_share_ties() {
        let r = rank_table(&[(t("a"), 0.5), (t("b"), 0.9), (t("c"), 0.5)], Direction::Higher);
        assert_eq!((r[&t("b")], r[&t("a")], r[&t("c")]), (1, 2, 2));
        let r = rank_table(&[(t("a"), 0.5), (t("b"), 0.9)], Direction::Lower);
        assert_eq!((r[&t("a")], r[&t("b")]), (1, 2));
        assert_eq!(rank_table(&[(t("solo"), 1.0)], Direction::Lower)[&t("solo")], 1);
    }

    #[test]
    fn overall_tie_break_and_shared_rank() {
        let a: Ranks = [(t("x"), 1), (t("y"), 2), (t("z"), 1)].into();
        let b: Ranks = [(t("x"), 2), (t("y"), 1), (t("z"), 2)].into();
        let c = a.clone();
        let o = aggregate_overall(&a, &b, &c).unwrap();
        // x and z have identical triples; y has the same sum but worse A rank
        assert_eq!((o[&t("x")], o[&t("z")], o[&t("y")]), (1, 1, 2));
        let short: Ranks = [(t("x"), 1)].into();
        assert_eq!(aggregate_overall(&a, &short, &c), Err(MisalignedTeams));
    }

    #[test]
    fn spearman_extremes() {
        let x = [1, 2, 3, 4, 5];
        assert_eq!(spearman::<Exact>(&x, &x), Ok(Ratio::from_integer(1)));
        assert_eq!(spearman::<Exact>(&x, &[5, 4, 3, 2, 1]), Ok(Ratio::from_integer(-1)));
        assert_eq!(spearman::<f64>(&x, &[1]), Err(SpearmanError::LengthMismatch(5, 1)));
    }

    #[test]
    fn scatter_std_is_population() {
        let rows = robustness_scatter(&[(t("flat"), vec![70.0; 10]), (t("spread"), vec![60.0, 80.0])]);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].mean, rows[0].std), (70.0, 0.0));
        assert_eq!((rows[1].mean, rows[1].std), (70.0, 10.0));
    }
}
