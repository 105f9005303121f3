use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ConfidenceSampler;
use super::{
    simulate_funnel, AgreementCalibration, ConfidenceModel, LatentClip, ProvenanceModel, SimConfig, SimError,
    SplitModels, Weighted,
};
use crate::domain::{
    Annotator, AnnotatorEvent, AnnotatorId, AnnotatorProfile, CaseId, CaseProvenance, ClipId, InstitutionId, Origin,
    PerCriterion, PreAnnotation, QualifiedClip, RaterId, Split, TeamId, VideoCase, VideoEvent, ANNOTATED_FRAMES,
    ANNOTATION_STRIDE, CLIP_FRAMES,
};
use crate::evaluation::ClipPrediction;
use crate::fusion::{fuse_clip, AnnotatedClip, FusedFrame};
use crate::jsonl::{self, JsonlError};
use crate::video_flow::{extract_clip, IntakeRecord, ScreeningSubmission};

/// One generated case with everything needed to drive it through the
/// platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCase {
    pub intake: IntakeRecord,
    pub split: Split,
    /// Screening verdicts in submission order; the last two agree.
    pub screening: Vec<PreAnnotation>,
    pub needs_blur: bool,
    pub clip: QualifiedClip,
    pub latent: LatentClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPool {
    pub seed: u64,
    pub cases: Vec<SimCase>,
    /// Active annotators who label the pool.
    pub annotators: Vec<Annotator>,
    /// Three assessments per clip, with provenance and split.
    pub clips: Vec<AnnotatedClip>,
    /// Full recruitment history, for funnel reporting.
    pub recruitment: Vec<Annotator>,
    pub calibration: AgreementCalibration,
    pub confidence: SplitModels<ConfidenceModel>,
}

/// Exact per-category counts by largest remainder; every category gets at
/// least one item when `n` allows.
fn allocate(n: usize, weights: &[Weighted]) -> Vec<usize> {
    let k = weights.len();
    let raw: Vec<f64> = weights.iter().map(|w| w.weight * n as f64).collect();
    let floor = usize::from(n >= k);
    let mut counts: Vec<usize> = raw.iter().map(|r| (*r as usize).max(floor)).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut i = 0;
    while counts.iter().sum::<usize>() < n {
        counts[order[i % k]] += 1;
        i += 1;
    }
    while counts.iter().sum::<usize>() > n {
        let j = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("non-empty");
        counts[j] -= 1;
    }
    counts
}

fn shuffled_labels<T: Clone>(groups: &[(T, usize)], rng: &mut impl Rng) -> Vec<T> {
    let mut out: Vec<T> = groups.iter().flat_map(|(v, n)| std::iter::repeat_n(v.clone(), *n)).collect();
    out.shuffle(rng);
    out
}

fn flags(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<bool> {
    let yes = (n as f64 * rate).round() as usize;
    shuffled_labels(&[(true, yes), (false, n - yes)], rng)
}

fn provenances(n: usize, model: &ProvenanceModel, rng: &mut impl Rng) -> Vec<CaseProvenance> {
    let named = |ws: &[Weighted], total: usize| -> Vec<(Origin, usize)> {
        ws.iter().zip(allocate(total, ws)).map(|(w, c)| (Origin::known(&w.name), c)).collect()
    };
    let countries = shuffled_labels(&named(&model.countries, n), rng);
    let unknown = (n as f64 * model.unknown_device_rate).round() as usize;
    let mut device_groups = named(&model.devices, n - unknown);
    device_groups.push((Origin::Unknown, unknown));
    let devices = shuffled_labels(&device_groups, rng);
    let robotic = flags(n, model.robotic_rate, rng);
    let ioc = flags(n, model.ioc_rate, rng);
    let icg = flags(n, model.icg_rate, rng);
    (0..n)
        .map(|i| CaseProvenance {
            country: countries[i].clone(),
            device_vendor: devices[i].clone(),
            approach: if robotic[i] {
                crate::domain::Approach::Robotic
            } else {
                crate::domain::Approach::Laparoscopic
            },
            used_ioc: ioc[i],
            used_icg: icg[i],
            source_institution: InstitutionId::new(format!("inst-{:02}", rng.random_range(1..=54))),
        })
        .collect()
}

fn active_annotator(i: usize, rng: &mut impl Rng) -> Annotator {
    use AnnotatorEvent as E;
    let id = AnnotatorId::new(format!("ann-{:02}", i + 1));
    let score = (rng.random_range(0.75..=1.0f64) * 40.0).ceil() / 40.0;
    let start = Annotator::contacted(
        id.clone(),
        AnnotatorProfile {
            clinical_background: true,
            contact: format!("{id}@example.org"),
        },
    );
    [E::EligibilityPassed, E::TrainingStarted, E::ExamSubmitted { score }, E::ExamGraded, E::Activated]
        .iter()
        .try_fold(start, |a, e| a.transition(e))
        .expect("onboarding follows legal transitions")
}

/// Concordant screening chain, optionally opened by a discordant verdict.
fn screening_chain(prov: &CaseProvenance, clipping: f64, discord: bool) -> Vec<PreAnnotation> {
    let verdict = |rater: &str, t: f64| PreAnnotation {
        rater_id: RaterId::new(rater),
        eligible: true,
        exclusion_reason: None,
        clipping_timestamp: Some(t),
        used_ioc: prov.used_ioc,
        used_icg: prov.used_icg,
        approach: prov.approach,
    };
    let mut chain = Vec::new();
    if discord {
        chain.push(verdict("rater-a", clipping + 30.0));
    }
    chain.push(verdict("rater-b", clipping));
    chain.push(verdict("rater-c", clipping));
    chain
}

/// Runs a case through screening and clipping with the domain transitions.
fn qualify(intake: &IntakeRecord, chain: &[PreAnnotation], needs_blur: bool) -> QualifiedClip {
    let (last, earlier) = chain.split_last().expect("chain is non-empty");
    let mut case: VideoCase = intake.clone().into_case();
    let mut events = vec![VideoEvent::ScreeningStarted];
    events.extend(earlier.iter().map(|v| VideoEvent::PreAnnotationRecorded { verdict: v.clone() }));
    events.push(VideoEvent::ConcordanceReached {
        verdict: last.clone(),
        needs_blur,
    });
    if needs_blur {
        events.push(VideoEvent::ReprocessingDone);
    }
    for e in &events {
        case = case.transition(e).expect("generated screening is legal");
    }
    extract_clip(&case).expect("generated case is qualified")
}

/// Deterministic in `cfg.seed`.
pub fn generate_pool(cfg: &SimConfig) -> Result<SimPool, SimError> {
    cfg.validate()?;
    let calibration = AgreementCalibration::solve(&cfg.agreement)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_train, n_test) = cfg.split_sizes();

    let annotators: Vec<Annotator> = (0..cfg.n_annotators).map(|i| active_annotator(i, &mut rng)).collect();
    let recruitment = simulate_funnel(&cfg.funnel, &mut rng);

    let mut cases = Vec::with_capacity(cfg.n_videos);
    let mut clips = Vec::with_capacity(cfg.n_videos);
    for (split, n) in [(Split::Train, n_train), (Split::Test, n_test)] {
        let sampler = ConfidenceSampler::new(cfg.confidence.get(split));
        for prov in provenances(n, cfg.provenance.get(split), &mut rng) {
            let idx = cases.len() + 1;
            let duration_s = f64::from(rng.random_range(1200..=5400u32));
            let clipping = f64::from(rng.random_range(300..=1100u32));
            let intake = IntakeRecord {
                case_id: CaseId::new(format!("case-{idx:04}")),
                provenance: prov.clone(),
                media_uri: format!("placeholder://videos/case-{idx:04}.mp4"),
                duration_s,
            };
            let screening = screening_chain(&prov, clipping, rng.random_bool(cfg.screening_discord_rate));
            let needs_blur = rng.random_bool(cfg.blur_rate);
            let clip = qualify(&intake, &screening, needs_blur);
            let latent = calibration.sample_latent(&mut rng);
            let raters = index::sample(&mut rng, annotators.len(), 3);
            let assessments = raters
                .iter()
                .map(|r| {
                    let c = sampler.sample(&mut rng);
                    calibration.assess(&latent, &clip.clip_id, &annotators[r].annotator_id, c, &mut rng)
                })
                .collect();
            clips.push(AnnotatedClip {
                clip_id: clip.clip_id.clone(),
                split,
                provenance: prov,
                assessments,
            });
            cases.push(SimCase {
                intake,
                split,
                screening,
                needs_blur,
                clip,
                latent,
            });
        }
    }
    Ok(SimPool {
        seed: cfg.seed,
        cases,
        annotators,
        clips,
        recruitment,
        calibration,
        confidence: cfg.confidence.clone(),
    })
}

impl SimPool {
    pub fn clip(&self, id: &ClipId) -> Option<&AnnotatedClip> {
        self.clips.iter().find(|c| &c.clip_id == id)
    }

    pub fn split_clips(&self, split: Split) -> Vec<AnnotatedClip> {
        self.clips.iter().filter(|c| c.split == split).cloned().collect()
    }

    /// Fused ground truth for every clip of `split`.
    pub fn ground_truth(&self, split: Split) -> Vec<FusedFrame<f64>> {
        self.clips
            .iter()
            .filter(|c| c.split == split)
            .flat_map(|c| fuse_clip::<f64>(&c.assessments).expect("generated clips carry three assessments"))
            .collect()
    }

    /// A noisy submission over the test split: each of the 90 frames
    /// carries the soft label of the latest annotated frame, perturbed.
    pub fn baseline_submission(&self, team: &str, noise: f64) -> Vec<ClipPrediction> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        self.clips
            .iter()
            .filter(|c| c.split == Split::Test)
            .map(|c| {
                let fused = fuse_clip::<f64>(&c.assessments).expect("generated clips carry three assessments");
                let frames = (0..CLIP_FRAMES)
                    .map(|f| {
                        let soft = fused[(f / ANNOTATION_STRIDE).min(ANNOTATED_FRAMES - 1)].soft;
                        PerCriterion::from_fn(|k| {
                            (soft[k] + rng.random_range(-noise..=noise)).clamp(0.0, 1.0)
                        })
                    })
                    .collect();
                ClipPrediction {
                    team_id: TeamId::new(team),
                    clip_id: c.clip_id.clone(),
                    frames,
                }
            })
            .collect()
    }

    pub fn screening_submissions(&self) -> Vec<ScreeningSubmission> {
        self.cases
            .iter()
            .flat_map(|c| {
                c.screening.iter().map(|v| ScreeningSubmission {
                    case_id: c.intake.case_id.clone(),
                    verdict: v.clone(),
                    needs_blur: c.needs_blur,
                })
            })
            .collect()
    }
}

/// Paths written by [`write_pool`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PoolFiles {
    pub cases: PathBuf,
    pub screening: PathBuf,
    pub annotators: PathBuf,
    pub recruitment: PathBuf,
    pub assessments: PathBuf,
    pub clips: PathBuf,
    pub ground_truth: PathBuf,
    pub submission: PathBuf,
}

impl PoolFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            cases: dir.join("cases.jsonl"),
            screening: dir.join("screening.jsonl"),
            annotators: dir.join("annotators.jsonl"),
            recruitment: dir.join("recruitment.jsonl"),
            assessments: dir.join("assessments.jsonl"),
            clips: dir.join("clips.jsonl"),
            ground_truth: dir.join("ground_truth.jsonl"),
            submission: dir.join("submission_baseline.jsonl"),
        }
    }
}

/// Writes the pool as JSON-lines files. `ground_truth.jsonl` and the
/// baseline submission cover the test split.
pub fn write_pool(pool: &SimPool, dir: &Path) -> Result<PoolFiles, JsonlError> {
    std::fs::create_dir_all(dir)?;
    let files = PoolFiles::in_dir(dir);
    let intake: Vec<&IntakeRecord> = pool.cases.iter().map(|c| &c.intake).collect();
    jsonl::write_path(&files.cases, &intake)?;
    jsonl::write_path(&files.screening, &pool.screening_submissions())?;
    jsonl::write_path(&files.annotators, &pool.annotators)?;
    jsonl::write_path(&files.recruitment, &pool.recruitment)?;
    let assessments: Vec<_> = pool.clips.iter().flat_map(|c| c.assessments.iter()).collect();
    jsonl::write_path(&files.assessments, &assessments)?;
    jsonl::write_path(&files.clips, &pool.clips)?;
    jsonl::write_path(&files.ground_truth, &pool.ground_truth(Split::Test))?;
    jsonl::write_path(&files.submission, &pool.baseline_submission("baseline", 0.15))?;
    Ok(files)
}
