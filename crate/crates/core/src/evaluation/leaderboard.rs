use serde::{Deserialize, Serialize};

use super::ranking::{aggregate_overall, rank_table, Direction, Ranks};
use crate::domain::TeamId;

/// Headline score per subchallenge: mAP (%), Brier, DRS (%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamScores {
    pub team_id: TeamId,
    pub map_a: f64,
    pub brier_b: f64,
    pub drs_c: f64,
    /// Reference entries are listed but never ranked.
    #[serde(default)]
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub team_id: TeamId,
    pub map_a: f64,
    pub brier_b: f64,
    pub drs_c: f64,
    pub rank_a: Option<usize>,
    pub rank_b: Option<usize>,
    pub rank_c: Option<usize>,
    pub rank_sum: Option<usize>,
    pub overall_rank: Option<usize>,
}

pub struct RankColumns {
    pub a: Ranks,
    pub b: Ranks,
    pub c: Ranks,
    pub overall: Ranks,
}

pub fn rank_columns(scores: &[TeamScores]) -> RankColumns {
    let ranked: Vec<&TeamScores> = scores.iter().filter(|s| !s.baseline).collect();
    let col = |f: fn(&TeamScores) -> f64, d| {
        let v: Vec<(TeamId, f64)> = ranked.iter().map(|s| (s.team_id.clone(), f(s))).collect();
        rank_table(&v, d)
    };
    let a = col(|s| s.map_a, Direction::Higher);
    let b = col(|s| s.brier_b, Direction::Lower);
    let c = col(|s| s.drs_c, Direction::Higher);
    let overall = aggregate_overall(&a, &b, &c).expect("columns built from the same teams");
    RankColumns { a, b, c, overall }
}

/// Ranked teams in overall order, followed by unranked baselines.
pub fn leaderboard(scores: &[TeamScores]) -> Vec<LeaderboardRow> {
    let r = rank_columns(scores);
    let mut rows: Vec<LeaderboardRow> = scores
        .iter()
        .map(|s| {
            let get = |m: &Ranks| if s.baseline { None } else { m.get(&s.team_id).copied() };
            let (a, b, c) = (get(&r.a), get(&r.b), get(&r.c));
            LeaderboardRow {
                team_id: s.team_id.clone(),
                map_a: s.map_a,
                brier_b: s.brier_b,
                drs_c: s.drs_c,
                rank_a: a,
                rank_b: b,
                rank_c: c,
                rank_sum: a.zip(b).zip(c).map(|((a, b), c)| a + b + c),
                overall_rank: get(&r.overall),
            }
        })
        .collect();
    rows.sort_by(|x, y| {
        let key = |r: &LeaderboardRow| (r.overall_rank.is_none(), r.overall_rank, r.rank_a);
        key(x).cmp(&key(y)).then_with(|| x.team_id.cmp(&y.team_id))
    });
    rows
}

pub fn to_csv(rows: &[LeaderboardRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json(rows: &[LeaderboardRow]) -> serde_json::Result<String> {
    serde_json::to_string_pretty(rows)
}
