use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use super::{agreement_class, clip_triples, fuse_mode, fuse_video_level, AgreementClass, AnnotatedClip};
use crate::domain::{Approach, CvsCriterion, Origin, PerCriterion, Split};

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(values: &[f64]) -> Self {
        match values.len() {
            0 => Self::default(),
            1 => Self { mean: values[0], sd: 0.0 },
            _ => Self {
                mean: values.mean(),
                sd: values.std_dev(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Frame counts split by fused outcome and agreement class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgreementCounts {
    pub achieved_full: usize,
    pub achieved_partial: usize,
    pub not_achieved_full: usize,
    pub not_achieved_partial: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub videos: usize,
    pub countries: usize,
    pub unknown_country: usize,
    pub videos_per_country: MeanSd,
    pub device_vendors: usize,
    pub unknown_device: usize,
    /// Over videos with a known vendor.
    pub videos_per_device: MeanSd,
    /// Over per-assessment confidences.
    pub confidence: ConfidenceSummary,
    pub video_level_achieved: PerCriterion<usize>,
    pub laparoscopic: usize,
    pub robotic_rate: f64,
    pub ioc_rate: f64,
    pub icg_rate: f64,
    pub frame_agreement: PerCriterion<AgreementCounts>,
    /// Clips skipped because they lacked three usable assessments.
    pub unfused_clips: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub splits: BTreeMap<Split, SplitStats>,
    pub total: SplitStats,
}

pub fn dataset_stats(pool: &[AnnotatedClip]) -> DatasetStats {
    let mut splits = BTreeMap::new();
    for split in [Split::Train, Split::Test] {
        let clips: Vec<&AnnotatedClip> = pool.iter().filter(|c| c.split == split).collect();
        if !clips.is_empty() {
            splits.insert(split, split_stats(&clips));
        }
    }
    let all: Vec<&AnnotatedClip> = pool.iter().collect();
    DatasetStats {
        splits,
        total: split_stats(&all),
    }
}

fn split_stats(clips: &[&AnnotatedClip]) -> SplitStats {
    if clips.is_empty() {
        return SplitStats::default();
    }
    let n = clips.len();
    let tally = |origin: fn(&AnnotatedClip) -> &Origin| {
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        let mut unknown = 0;
        for c in clips {
            match origin(c) {
                Origin::Known(name) => *per.entry(name.as_str()).or_default() += 1,
                Origin::Unknown => unknown += 1,
            }
        }
        let counts: Vec<f64> = per.values().map(|&v| v as f64).collect();
        (per.len(), unknown, MeanSd::of(&counts))
    };
    let (countries, unknown_country, videos_per_country) = tally(|c| &c.provenance.country);
    let (device_vendors, unknown_device, videos_per_device) = tally(|c| &c.provenance.device_vendor);

    let confidences: Vec<f64> = clips
        .iter()
        .flat_map(|c| c.assessments.iter().map(|a| a.confidence))
        .collect();
    let confidence = if confidences.is_empty() {
        ConfidenceSummary::default()
    } else {
        let ms = MeanSd::of(&confidences);
        ConfidenceSummary {
            min: confidences.iter().copied().fold(f64::INFINITY, f64::min),
            max: confidences.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: ms.mean,
            sd: ms.sd,
        }
    };

    let mut video_level_achieved = PerCriterion::new(0, 0, 0);
    let mut frame_agreement = PerCriterion::from_fn(|_| AgreementCounts::default());
    let mut unfused_clips = 0;
    for c in clips {
        let (Ok(video), Ok(triples)) = (fuse_video_level(&c.assessments), clip_triples::<f64>(&c.assessments)) else {
            unfused_clips += 1;
            continue;
        };
        for k in CvsCriterion::ALL {
            video_level_achieved[k] += video[k] as usize;
        }
        for t in &triples {
            for k in CvsCriterion::ALL {
                let counts = &mut frame_agreement[k];
                match (fuse_mode(&t[k]), agreement_class(&t[k])) {
                    (true, AgreementClass::Full) => counts.achieved_full += 1,
                    (true, AgreementClass::Partial) => counts.achieved_partial += 1,
                    (false, AgreementClass::Full) => counts.not_achieved_full += 1,
                    (false, AgreementClass::Partial) => counts.not_achieved_partial += 1,
                }
            }
        }
    }

    let rate = |pred: fn(&AnnotatedClip) -> bool| clips.iter().filter(|c| pred(c)).count() as f64 / n as f64;
    SplitStats {
        videos: n,
        countries,
        unknown_country,
        videos_per_country,
        device_vendors,
        unknown_device,
        videos_per_device,
        confidence,
        video_level_achieved,
        laparoscopic: clips
            .iter()
            .filter(|c| c.provenance.approach == Approach::Laparoscopic)
            .count(),
        robotic_rate: rate(|c| c.provenance.approach == Approach::Robotic),
        ioc_rate: rate(|c| c.provenance.used_ioc),
        icg_rate: rate(|c| c.provenance.used_icg),
        frame_agreement,
        unfused_clips,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AnnotatorId, Assessment, CaseProvenance, ClipId, InstitutionId, ANNOTATED_FRAMES};

    fn clip(i: usize, split: Split, country: Origin, device: Origin, c1: bool) -> AnnotatedClip {
        let clip_id = ClipId::new(format!("v{i}"));
        let labels = PerCriterion::new(c1, false, false);
        AnnotatedClip {
            clip_id: clip_id.clone(),
            split,
            provenance: CaseProvenance {
                country,
                device_vendor: device,
                approach: Approach::Laparoscopic,
                used_ioc: i % 2 == 0,
                used_icg: false,
                source_institution: InstitutionId::new("inst"),
            },
            assessments: (0..3)
                .map(|a| Assessment {
                    clip_id: clip_id.clone(),
                    annotator_id: AnnotatorId::new(format!("a{a}")),
                    frame_labels: vec![labels; ANNOTATED_FRAMES],
                    confidence: 0.25 * a as f64,
                    video_level: labels,
                })
                .collect(),
        }
    }

    #[test]
    fn empty_pool_is_all_zero() {
        let s = dataset_stats(&[]);
        assert!(s.splits.is_empty());
        assert_eq!(s.total, SplitStats::default());
    }

    #[test]
    fn counts_per_split() {
        let pool = vec![
            clip(0, Split::Train, Origin::known("NL"), Origin::known("Olympus"), true),
            clip(1, Split::Train, Origin::known("NL"), Origin::Unknown, false),
            clip(2, Split::Train, Origin::known("FR"), Origin::known("Storz"), true),
            clip(3, Split::Test, Origin::known("FR"), Origin::known("Storz"), false),
        ];
        let s = dataset_stats(&pool);
        let train = &s.splits[&Split::Train];
        assert_eq!((train.videos, train.countries, train.unknown_device), (3, 2, 1));
        assert_eq!(train.videos_per_country.mean, 1.5);
        assert!((train.videos_per_country.sd - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(train.video_level_achieved.c1, 2);
        assert_eq!(train.frame_agreement.c1.achieved_full, 2 * ANNOTATED_FRAMES);
        assert!((train.ioc_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(train.confidence.max, 0.5);
        assert_eq!(s.total.videos, 4);
        assert_eq!(s.splits[&Split::Test].video_level_achieved.c1, 0);
    }
}
