//! Synthetic campaigns whose marginals follow the published dataset
//! statistics: provenance mix, confidence moments, video-level achievement
//! and annotator agreement.

mod campaign;
mod funnel;
mod model;
mod pool;

use serde::{Deserialize, Serialize};

use crate::domain::{ClipId, PerCriterion, Split};

pub use campaign::{run_campaign, CampaignPolicy, CampaignRun, Transcript, TranscriptEntry};
pub use funnel::{simulate_funnel, FunnelModel};
pub use model::{clamped_normal_moments, AgreementCalibration, LatentClip};
pub use pool::{generate_pool, write_pool, PoolFiles, SimCase, SimPool};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("campaign deadlocked at tick {tick}: {} clip(s) cannot reach coverage", starving.len())]
    DeadlockDetected { tick: u64, starving: Vec<ClipId> },
    #[error("campaign engine: {0}")]
    Engine(String),
}

/// A named category and its sampling weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighted {
    pub name: String,
    pub weight: f64,
}

/// Weights proportional to `1 / rank^exponent`, normalised to sum to 1.
pub fn zipf_weights(names: &[&str], exponent: f64) -> Vec<Weighted> {
    let raw: Vec<f64> = (1..=names.len()).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    names
        .iter()
        .zip(raw)
        .map(|(n, w)| Weighted {
            name: (*n).to_string(),
            weight: w / total,
        })
        .collect()
}

/// Per-clip annotator confidence: a normal clamped to `[0, 1]` whose
/// clamped moments equal `mean` and `sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceModel {
    pub countries: Vec<Weighted>,
    pub devices: Vec<Weighted>,
    pub unknown_device_rate: f64,
    pub ioc_rate: f64,
    pub icg_rate: f64,
    pub robotic_rate: f64,
}

/// Latent achievement plus per-annotator noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementModel {
    /// Target rate of clips whose fused video-level label is achieved.
    pub positive_rate: PerCriterion<f64>,
    /// Target share of annotated frame cells where all three raters agree.
    pub full_agreement: PerCriterion<f64>,
    /// Chance an annotator flips the clip's latent video-level outcome.
    pub video_flip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModels<T> {
    pub train: T,
    pub test: T,
}

impl<T> SplitModels<T> {
    pub fn get(&self, split: Split) -> &T {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_videos: usize,
    /// Share of videos placed in the test split.
    pub test_fraction: f64,
    pub n_annotators: usize,
    /// Per-tick chance that an active annotator leaves during a campaign.
    pub dropout_rate: f64,
    /// Chance a screening chain opens with a discordant verdict.
    pub screening_discord_rate: f64,
    /// Chance a qualified case needs blurring before clipping.
    pub blur_rate: f64,
    pub agreement: AgreementModel,
    pub confidence: SplitModels<ConfidenceModel>,
    pub provenance: SplitModels<ProvenanceModel>,
    pub funnel: FunnelModel,
}

const COUNTRIES: [&str; 23] = [
    "US", "FR", "IT", "DE", "ES", "GB", "CA", "BR", "JP", "CN", "IN", "MX", "NL", "CH", "BE", "KR", "AU", "AR", "CL",
    "CO", "PT", "GR", "TR",
];
const VENDORS: [&str; 8] = [
    "olympus",
    "storz",
    "stryker",
    "richard-wolf",
    "medtronic",
    "intuitive",
    "aesculap",
    "conmed",
];

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_videos: 1000,
            test_fraction: 0.3,
            n_annotators: 20,
            dropout_rate: 0.0,
            screening_discord_rate: 0.15,
            blur_rate: 0.1,
            agreement: AgreementModel {
                positive_rate: PerCriterion::new(0.413, 0.600, 0.395),
                full_agreement: PerCriterion::new(0.85, 0.83, 0.86),
                video_flip: 0.08,
            },
            confidence: SplitModels {
                train: ConfidenceModel { mean: 0.64, sd: 0.28 },
                test: ConfidenceModel { mean: 0.58, sd: 0.27 },
            },
            provenance: SplitModels {
                train: ProvenanceModel {
                    countries: zipf_weights(&COUNTRIES, 1.12),
                    devices: zipf_weights(&VENDORS, 1.10),
                    unknown_device_rate: 156.0 / 700.0,
                    ioc_rate: 0.10,
                    icg_rate: 0.08,
                    robotic_rate: 47.0 / 700.0,
                },
                test: ProvenanceModel {
                    countries: zipf_weights(&COUNTRIES[..18], 1.13),
                    devices: zipf_weights(&VENDORS, 1.18),
                    unknown_device_rate: 114.0 / 300.0,
                    ioc_rate: 0.09,
                    icg_rate: 0.10,
                    robotic_rate: 34.0 / 300.0,
                },
            },
            funnel: FunnelModel::default(),
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SimError::InvalidConfig(format!("{name} = {v} is outside [0, 1]")))
    }
}

fn check_weights(name: &str, w: &[Weighted]) -> Result<(), SimError> {
    if w.is_empty() {
        return Err(SimError::InvalidConfig(format!("{name} is empty")));
    }
    if w.iter().any(|x| !(x.weight >= 0.0)) {
        return Err(SimError::InvalidConfig(format!("{name} has a negative weight")));
    }
    let total: f64 = w.iter().map(|x| x.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SimError::InvalidConfig(format!("{name} weights sum to {total}, not 1")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        check_rate("test_fraction", self.test_fraction)?;
        check_rate("dropout_rate", self.dropout_rate)?;
        check_rate("screening_discord_rate", self.screening_discord_rate)?;
        check_rate("blur_rate", self.blur_rate)?;
        check_rate("agreement.video_flip", self.agreement.video_flip)?;
        for (k, v) in self.agreement.positive_rate.iter() {
            check_rate(&format!("agreement.positive_rate.{k}"), *v)?;
        }
        for (k, v) in self.agreement.full_agreement.iter() {
            check_rate(&format!("agreement.full_agreement.{k}"), *v)?;
        }
        if self.n_annotators < 3 {
            return Err(SimError::InvalidConfig("at least 3 annotators are needed".into()));
        }
        for (split, c) in [("train", &self.confidence.train), ("test", &self.confidence.test)] {
            check_rate(&format!("confidence.{split}.mean"), c.mean)?;
            if !(c.sd > 0.0 && c.sd * c.sd < c.mean * (1.0 - c.mean)) {
                return Err(SimError::InvalidConfig(format!(
                    "confidence.{split}: sd {} is not attainable on [0, 1] with mean {}",
                    c.sd, c.mean
                )));
            }
        }
        for (split, p) in [("train", &self.provenance.train), ("test", &self.provenance.test)] {
            check_weights(&format!("provenance.{split}.countries"), &p.countries)?;
            check_weights(&format!("provenance.{split}.devices"), &p.devices)?;
            check_rate(&format!("provenance.{split}.unknown_device_rate"), p.unknown_device_rate)?;
            check_rate(&format!("provenance.{split}.ioc_rate"), p.ioc_rate)?;
            check_rate(&format!("provenance.{split}.icg_rate"), p.icg_rate)?;
            check_rate(&format!("provenance.{split}.robotic_rate"), p.robotic_rate)?;
        }
        self.funnel.validate()?;
        AgreementCalibration::solve(&self.agreement)?;
        Ok(())
    }

    /// Videos per split: the first `n_train` cases train, the rest test.
    pub fn split_sizes(&self) -> (usize, usize) {
        let test = (self.n_videos as f64 * self.test_fraction).round() as usize;
        (self.n_videos - test, test)
    }
}
