use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::domain_robustness_score;
use super::submission::{map_score, CriterionScores, EvalError, GroundTruth, Submission};
use crate::domain::{Approach, ClipId, CvsCriterion, Origin, PerCriterion};
use crate::fusion::AnnotatedClip;
use crate::scalar::Scalar;

/// Metadata predicate selecting a variant test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VariantPredicate {
    UsedIoc,
    UsedIcg,
    Approach { approach: Approach },
    DeviceVendor { vendors: Vec<String> },
    Country { countries: Vec<String> },
    MeanConfidenceBelow { threshold: f64 },
    MeanConfidenceAtLeast { threshold: f64 },
}

impl VariantPredicate {
    pub fn matches(&self, clip: &AnnotatedClip) -> bool {
        let p = &clip.provenance;
        let known_in = |o: &Origin, set: &[String]| matches!(o, Origin::Known(v) if set.contains(v));
        match self {
            Self::UsedIoc => p.used_ioc,
            Self::UsedIcg => p.used_icg,
            Self::Approach { approach } => p.approach == *approach,
            Self::DeviceVendor { vendors } => known_in(&p.device_vendor, vendors),
            Self::Country { countries } => known_in(&p.country, countries),
            Self::MeanConfidenceBelow { threshold } => clip.mean_confidence().is_some_and(|c| c < *threshold),
            Self::MeanConfidenceAtLeast { threshold } => clip.mean_confidence().is_some_and(|c| c >= *threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSplitDef {
    pub split_id: String,
    pub predicate: VariantPredicate,
}

impl VariantSplitDef {
    pub fn new(split_id: impl Into<String>, predicate: VariantPredicate) -> Self {
        Self {
            split_id: split_id.into(),
            predicate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSplit {
    pub split_id: String,
    pub clips: BTreeSet<ClipId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("variant split {0} selects no clips")]
pub struct EmptySplit(pub String);

/// Known origin values ordered by frequency (descending), ties by name.
fn by_frequency<'a>(pool: &'a [AnnotatedClip], origin: impl Fn(&'a AnnotatedClip) -> &'a Origin) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in pool {
        if let Origin::Known(v) = origin(c) {
            *counts.entry(v.as_str()).or_default() += 1;
        }
    }
    let mut v: Vec<(&str, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter().map(|(name, _)| name.to_string()).collect()
}

/// The ten shipped splits. Vendor and country splits are instantiated from
/// the test pool: the two most frequent vendors, and the known countries
/// dealt alternately by frequency into two groups.
pub fn default_variant_splits(test_pool: &[AnnotatedClip]) -> Vec<VariantSplitDef> {
    use VariantPredicate as P;

    let vendors = by_frequency(test_pool, |c| &c.provenance.device_vendor);
    let countries = by_frequency(test_pool, |c| &c.provenance.country);
    let group = |parity: usize| -> Vec<String> {
        countries
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == parity)
            .map(|(_, c)| c.clone())
            .collect()
    };
    let vendor = |i: usize| vendors.get(i).cloned().into_iter().collect::<Vec<_>>();
    vec![
        VariantSplitDef::new("ioc", P::UsedIoc),
        VariantSplitDef::new("icg", P::UsedIcg),
        VariantSplitDef::new("robotic", P::Approach { approach: Approach::Robotic }),
        VariantSplitDef::new("laparoscopic", P::Approach { approach: Approach::Laparoscopic }),
        VariantSplitDef::new("vendor-1", P::DeviceVendor { vendors: vendor(0) }),
        VariantSplitDef::new("vendor-2", P::DeviceVendor { vendors: vendor(1) }),
        VariantSplitDef::new("country-group-a", P::Country { countries: group(0) }),
        VariantSplitDef::new("country-group-b", P::Country { countries: group(1) }),
        VariantSplitDef::new("low-confidence", P::MeanConfidenceBelow { threshold: 0.5 }),
        VariantSplitDef::new("high-confidence", P::MeanConfidenceAtLeast { threshold: 0.5 }),
    ]
}

pub fn build_variant_splits(
    test_pool: &[AnnotatedClip],
    defs: &[VariantSplitDef],
) -> Result<Vec<VariantSplit>, EmptySplit> {
    defs.iter()
        .map(|d| {
            let clips: BTreeSet<ClipId> = test_pool
                .iter()
                .filter(|c| d.predicate.matches(c))
                .map(|c| c.clip_id.clone())
                .collect();
            if clips.is_empty() {
                Err(EmptySplit(d.split_id.clone()))
            } else {
                Ok(VariantSplit {
                    split_id: d.split_id.clone(),
                    clips,
                })
            }
        })
        .collect()
}

/// A criterion left out of one split's mean because AP was undefined there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipFlag {
    pub split_id: String,
    pub criterion: CvsCriterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScore<T> {
    pub split_id: String,
    pub map: CriterionScores<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport<T> {
    pub per_variant: Vec<VariantScore<T>>,
    /// DRS of each criterion's variant APs.
    pub drs_per_criterion: PerCriterion<Option<T>>,
    /// DRS of the criterion-averaged variant mAPs.
    pub drs: Option<T>,
    pub skipped: Vec<SkipFlag>,
}

impl<T: Scalar> RobustnessReport<T> {
    pub fn variant_means(&self) -> Vec<T> {
        self.per_variant.iter().filter_map(|v| v.map.mean).collect()
    }
}

pub fn robustness<T: Scalar>(
    sub: &Submission,
    ground: &GroundTruth<T>,
    splits: &[VariantSplit],
) -> Result<RobustnessReport<T>, EvalError> {
    let mut per_variant = Vec::with_capacity(splits.len());
    let mut skipped = Vec::new();
    for s in splits {
        let map = map_score(sub, ground, &s.clips)?;
        skipped.extend(map.skipped().into_iter().map(|criterion| SkipFlag {
            split_id: s.split_id.clone(),
            criterion,
        }));
        per_variant.push(VariantScore {
            split_id: s.split_id.clone(),
            map,
        });
    }
    let drs_per_criterion = PerCriterion::from_fn(|k| {
        let v: Vec<T> = per_variant.iter().filter_map(|s| s.map.per_criterion[k]).collect();
        domain_robustness_score(&v).ok()
    });
    let means: Vec<T> = per_variant.iter().filter_map(|v| v.map.mean).collect();
    Ok(RobustnessReport {
        drs: domain_robustness_score(&means).ok(),
        drs_per_criterion,
        per_variant,
        skipped,
    })
}
