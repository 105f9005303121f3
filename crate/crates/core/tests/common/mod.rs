//! Published-table fixtures and brute-force oracles shared by test targets.
#![allow(dead_code)]

pub mod driver;

use std::collections::BTreeMap;

use cvs_core::domain::{Approach, ExclusionReason, PreAnnotation, RaterId, TeamId};
use cvs_core::evaluation::Ranks;
use cvs_core::scalar::Exact;
use num_rational::Ratio;
use rand::Rng;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
pub struct ScoreRow {
    pub team: String,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub avg: f64,
    pub baseline: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Table2 {
    pub aliases: BTreeMap<String, String>,
    pub subchallenge_a: Vec<ScoreRow>,
    pub subchallenge_b: Vec<ScoreRow>,
    pub subchallenge_c: Vec<ScoreRow>,
}

impl Table2 {
    pub fn load() -> Self {
        serde_json::from_str(include_str!("../fixtures/table2.json")).expect("table2 fixture")
    }

    /// Team spellings differ between tables; map to one canonical id.
    pub fn canonical(&self, team: &str) -> TeamId {
        TeamId::new(self.aliases.get(team).map(String::as_str).unwrap_or(team))
    }

    /// Ranked (non-baseline) teams with their Avg column.
    pub fn avg_column(&self, rows: &[ScoreRow]) -> Vec<(TeamId, f64)> {
        rows.iter()
            .filter(|r| !r.baseline)
            .map(|r| (self.canonical(&r.team), r.avg))
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct Table4Row {
    pub team: String,
    pub overall: usize,
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

pub fn table4() -> Vec<Table4Row> {
    serde_json::from_str(include_str!("../fixtures/table4.json")).expect("table4 fixture")
}

pub fn table4_column(f: fn(&Table4Row) -> usize) -> Ranks {
    table4().iter().map(|r| (TeamId::new(&r.team), f(r))).collect()
}

#[derive(Debug, Clone, Deserialize)]
pub struct Breakdown {
    pub overall: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Table5Row {
    pub team: String,
    pub macro_f1: Breakdown,
    pub accuracy: Breakdown,
}

pub fn table5() -> Vec<Table5Row> {
    serde_json::from_str(include_str!("../fixtures/table5.json")).expect("table5 fixture")
}

/// Precision-recall step integral, thresholding at every distinct score.
pub fn ap_oracle(scores: &[Exact], labels: &[bool]) -> Option<Exact> {
    let positives = labels.iter().filter(|&&l| l).count() as i128;
    if positives == 0 {
        return None;
    }
    let mut thresholds: Vec<Exact> = scores.to_vec();
    thresholds.sort();
    thresholds.dedup();
    thresholds.reverse();
    let mut ap = Ratio::from_integer(0);
    let mut prev_recall = Ratio::from_integer(0);
    for tau in thresholds {
        let selected: Vec<bool> = scores
            .iter()
            .zip(labels)
            .filter(|(s, _)| **s >= tau)
            .map(|(_, l)| *l)
            .collect();
        let tp = selected.iter().filter(|&&l| l).count() as i128;
        let recall = Ratio::new(tp, positives);
        let precision = Ratio::new(tp, selected.len() as i128);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Sort, then index `floor(n / 10)`.
pub fn drs_oracle(values: &[Exact]) -> Exact {
    let mut v = values.to_vec();
    v.sort();
    v[v.len() / 10]
}

/// Random verdict stream over a small value domain so that consecutive
/// verdicts agree often. Timestamps are multiples of 0.5 s, so the 2 s
/// tolerance boundary is hit exactly.
pub fn verdict_stream(rng: &mut impl Rng, len: usize) -> Vec<PreAnnotation> {
    let reasons = [
        ExclusionReason::NotCholecystectomy,
        ExclusionReason::NoContinuous90s,
        ExclusionReason::Bailout,
        ExclusionReason::IncompleteNoClipping,
    ];
    (0..len)
        .map(|i| {
            let eligible = rng.random_bool(0.7);
            PreAnnotation {
                rater_id: RaterId::new(format!("r{i}")),
                eligible,
                exclusion_reason: (!eligible).then(|| reasons[rng.random_range(0..2)]),
                clipping_timestamp: (!rng.random_bool(0.05)).then(|| 600.0 + f64::from(rng.random_range(0..8u32)) * 0.5),
                used_ioc: rng.random_bool(0.1),
                used_icg: rng.random_bool(0.1),
                approach: if rng.random_bool(0.1) { Approach::Robotic } else { Approach::Laparoscopic },
            }
        })
        .collect()
}

/// Agreement on every verdict field, clipping times within 2 s.
pub fn agreement_oracle(a: &PreAnnotation, b: &PreAnnotation) -> bool {
    let same_fields = (a.eligible, &a.exclusion_reason, a.used_ioc, a.used_icg, a.approach)
        == (b.eligible, &b.exclusion_reason, b.used_ioc, b.used_icg, b.approach);
    let same_time = match (a.clipping_timestamp, b.clipping_timestamp) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 2.0,
        _ => false,
    };
    same_fields && same_time
}

/// Index of the first verdict that agrees with its predecessor.
pub fn first_agreeing_index(stream: &[PreAnnotation]) -> Option<usize> {
    (1..stream.len()).find(|&i| agreement_oracle(&stream[i - 1], &stream[i]))
}
