use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use cvs_core::annotator_flow::funnel_report;
use cvs_core::domain::{CvsCriterion, PerCriterion, Split, VideoState};
use cvs_core::evaluation::{
    build_variant_splits, evaluate, ClipPrediction, GroundTruth, Submission, SubmissionMeta, VariantPredicate,
    VariantSplitDef,
};
use cvs_core::fusion::{dataset_stats, AnnotatedClip, FusedFrame};
use cvs_core::jsonl;
use cvs_core::orchestrator::ManualClock;
use cvs_core::simulator::{
    generate_pool, run_campaign, simulate_funnel, write_pool, AgreementCalibration, CampaignPolicy, FunnelModel,
    SimConfig, SimError, SimPool, TranscriptEntry,
};

fn default_pool() -> SimPool {
    generate_pool(&SimConfig::default()).unwrap()
}

/// Two-sided 99% interval of Binomial(n, p).
fn binomial_99(n: u64, p: f64) -> (u64, u64) {
    let b = Binomial::new(p, n).unwrap();
    (b.inverse_cdf(0.005), b.inverse_cdf(0.995))
}

fn clock() -> ManualClock {
    ManualClock::new(Utc.with_ymd_and_hms(2022, 1, 3, 8, 0, 0).unwrap())
}

#[test]
fn video_level_counts_fall_in_binomial_intervals() {
    let stats = dataset_stats(&default_pool().clips);
    assert_eq!(stats.total.videos, 1000);
    let published = PerCriterion::new(413u64, 600, 395);
    for k in CvsCriterion::ALL {
        let (lo, hi) = binomial_99(1000, published[k] as f64 / 1000.0);
        let got = stats.total.video_level_achieved[k] as u64;
        assert!((lo..=hi).contains(&got), "{k}: {got} outside [{lo}, {hi}]");
    }
}

#[test]
fn confidence_moments_match_per_split() {
    let stats = dataset_stats(&default_pool().clips);
    let train = &stats.splits[&Split::Train].confidence;
    let test = &stats.splits[&Split::Test].confidence;
    assert!((train.mean - 0.64).abs() <= 0.02, "train mean {}", train.mean);
    assert!((train.sd - 0.28).abs() <= 0.02, "train sd {}", train.sd);
    assert!((test.mean - 0.58).abs() <= 0.02, "test mean {}", test.mean);
    assert!((test.sd - 0.27).abs() <= 0.02, "test sd {}", test.sd);
    assert_eq!((train.min, train.max), (0.0, 1.0));
}

#[test]
fn provenance_marginals_are_reproduced() {
    let stats = dataset_stats(&default_pool().clips);
    let train = &stats.splits[&Split::Train];
    let test = &stats.splits[&Split::Test];
    assert_eq!((train.videos, test.videos), (700, 300));
    assert_eq!((train.countries, test.countries), (23, 18));
    assert_eq!((train.unknown_country, test.unknown_country), (0, 0));
    assert_eq!((train.device_vendors, test.device_vendors), (8, 8));
    assert_eq!((train.unknown_device, test.unknown_device), (156, 114));
    assert_eq!((train.laparoscopic, test.laparoscopic), (653, 266));
    assert!((train.videos_per_country.mean - 700.0 / 23.0).abs() < 1e-9);
    assert!((train.videos_per_device.mean - 68.0).abs() < 1e-9);
    assert!((test.videos_per_device.mean - 23.25).abs() < 1e-9);
    // spreads follow from the category weights; allow a little for rounding
    assert!((train.videos_per_country.sd - 46.54).abs() < 1.0, "{}", train.videos_per_country.sd);
    assert!((test.videos_per_country.sd - 23.18).abs() < 1.0, "{}", test.videos_per_country.sd);
    assert!((train.videos_per_device.sd - 65.47).abs() < 1.0, "{}", train.videos_per_device.sd);
    assert!((test.videos_per_device.sd - 24.44).abs() < 1.0, "{}", test.videos_per_device.sd);
}

#[test]
fn frame_agreement_tracks_calibration_targets() {
    let cfg = SimConfig::default();
    let cal = AgreementCalibration::solve(&cfg.agreement).unwrap();
    let expected = cal.expected_full_agreement();
    let stats = dataset_stats(&default_pool().clips);
    for k in CvsCriterion::ALL {
        assert!((expected[k] - cfg.agreement.full_agreement[k]).abs() < 1e-6);
        let c = stats.total.frame_agreement[k];
        let full = (c.achieved_full + c.not_achieved_full) as f64;
        let share = full / (full + (c.achieved_partial + c.not_achieved_partial) as f64);
        assert!((share - cfg.agreement.full_agreement[k]).abs() < 0.03, "{k}: {share}");
    }
}

#[test]
fn every_generated_artifact_is_valid() {
    let pool = default_pool();
    for c in &pool.clips {
        assert_eq!(c.assessments.len(), 3);
        let raters: BTreeSet<_> = c.assessments.iter().map(|a| &a.annotator_id).collect();
        assert_eq!(raters.len(), 3);
        for a in &c.assessments {
            a.validate().unwrap();
        }
    }
    for case in &pool.cases {
        assert_eq!(case.clip.frame_count(), 90);
        assert!(case.clip.window_end_s <= case.intake.duration_s);
    }
    assert!(pool.annotators.iter().all(|a| a.state == cvs_core::domain::AnnotatorState::Active));
}

#[test]
fn same_seed_gives_byte_identical_pools() {
    let a = serde_json::to_string(&default_pool()).unwrap();
    let b = serde_json::to_string(&default_pool()).unwrap();
    assert_eq!(a, b);
    let other = generate_pool(&SimConfig {
        seed: 1,
        ..SimConfig::default()
    })
    .unwrap();
    assert_ne!(a, serde_json::to_string(&other).unwrap());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = SimConfig::default();
    cfg.provenance.train.countries[0].weight += 0.1;
    assert!(matches!(generate_pool(&cfg), Err(SimError::InvalidConfig(_))));
    let mut cfg = SimConfig::default();
    cfg.agreement.full_agreement.c1 = 0.99;
    assert!(matches!(generate_pool(&cfg), Err(SimError::InvalidConfig(_))));
    let cfg = SimConfig {
        dropout_rate: 1.5,
        ..SimConfig::default()
    };
    assert!(matches!(generate_pool(&cfg), Err(SimError::InvalidConfig(_))));
}

#[test]
fn funnel_counts_are_consistent_with_published_figures() {
    let model = FunnelModel::default();
    let stage = |n: usize, p: f64, got: usize| {
        let (lo, hi) = binomial_99(n as u64, p);
        assert!((lo..=hi).contains(&(got as u64)), "{got} of {n} outside [{lo}, {hi}]");
    };
    for seed in 0..20 {
        let pool = simulate_funnel(&model, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = funnel_report(&pool);
        assert_eq!(r.contacted, 106);
        stage(106, 71.0 / 106.0, r.eligible);
        stage(r.eligible, 67.0 / 71.0, r.exam_taken);
        stage(r.exam_taken, 27.0 / 67.0, r.passed);
        stage(r.passed, 20.0 / 27.0, r.qualified);
        assert!(r.contacted >= r.eligible && r.eligible >= r.exam_taken);
        assert!(r.exam_taken >= r.passed && r.passed >= r.qualified);
    }
    // long-run averages converge on the published counts
    let runs = 4000;
    let mut sums = [0usize; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..runs {
        let r = funnel_report(&simulate_funnel(&model, &mut rng));
        for (s, v) in sums.iter_mut().zip([r.eligible, r.exam_taken, r.passed, r.qualified]) {
            *s += v;
        }
    }
    for (s, target) in sums.iter().zip([71.0, 67.0, 27.0, 20.0]) {
        let mean = *s as f64 / runs as f64;
        assert!((mean - target).abs() < 0.5, "{mean} vs {target}");
    }
}

#[test]
fn funnel_without_dropout_drops_nobody() {
    let model = FunnelModel {
        p_drop_contacted: 0.0,
        p_drop_eligible: 0.0,
        p_drop_training: 0.0,
        p_pass_exam: 1.0,
        ..FunnelModel::default()
    };
    let r = funnel_report(&simulate_funnel(&model, &mut ChaCha8Rng::seed_from_u64(4)));
    assert_eq!(r.dropped, 0);
    assert_eq!(r.exam_taken, r.passed);
}

#[test]
fn low_confidence_split_matches_a_direct_filter() {
    let pool = default_pool();
    let test: Vec<AnnotatedClip> = pool.split_clips(Split::Test);
    let defs = [VariantSplitDef {
        split_id: "low-confidence".into(),
        predicate: VariantPredicate::MeanConfidenceBelow { threshold: 0.5 },
    }];
    let built = build_variant_splits(&test, &defs).unwrap();
    let mut expected = Vec::new();
    for c in &test {
        let sum: f64 = c.assessments.iter().map(|a| a.confidence).sum();
        if sum < 1.5 {
            expected.push(c.clip_id.clone());
        }
    }
    let got: Vec<_> = built[0].clips.iter().cloned().collect();
    expected.sort();
    assert!(!expected.is_empty());
    assert_eq!(got, expected);
}

#[test]
fn written_pool_loads_back_for_evaluation() {
    let cfg = SimConfig {
        n_videos: 120,
        ..SimConfig::default()
    };
    let pool = generate_pool(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_pool(&pool, dir.path()).unwrap();

    let frames: Vec<FusedFrame<f64>> = jsonl::read_path(&files.ground_truth).unwrap();
    assert_eq!(frames.len(), 36 * 18);
    let ground = GroundTruth::from_frames(frames);
    let preds: Vec<ClipPrediction> = jsonl::read_path(&files.submission).unwrap();
    let sub = Submission::from_predictions(preds, SubmissionMeta::default()).unwrap();
    let report = evaluate(&sub, &ground, &[]).unwrap();
    assert!(report.sub_a.mean.unwrap() > 0.5);

    let clips: Vec<AnnotatedClip> = jsonl::read_path(&files.clips).unwrap();
    assert_eq!(clips, pool.clips);
    let text = std::fs::read_to_string(&files.clips).unwrap();
    assert!(text.contains("\"split\":\"TRAIN\""));
}

#[test]
fn dropout_free_campaign_covers_within_the_tick_bound() {
    let cfg = SimConfig::default();
    let pool = generate_pool(&cfg).unwrap();
    let policy = CampaignPolicy::default();
    let run = run_campaign(&pool, &policy, clock()).unwrap();
    // 3 x 1000 assignments at 20 per annotator per tick
    assert_eq!(policy.scheduler.tick_bound(1000, 20), 8);
    assert_eq!(run.transcript.ticks(), 8);
    assert!(run.state.videos.values().all(|v| v.state == VideoState::Fused));
    assert_eq!(run.state.fused.len(), 1000);
    assert_eq!(
        run.transcript.count(|e| matches!(e, TranscriptEntry::Assessment { .. })),
        3000
    );
    assert_eq!(run.transcript.count(|e| matches!(e, TranscriptEntry::Reminder { .. })), 0);
    let replayed = cvs_core::orchestrator::replay(run.state.config.clone(), &run.events).unwrap();
    assert_eq!(replayed, run.state);
}

#[test]
fn partial_completion_triggers_reminders_and_still_finishes() {
    let pool = generate_pool(&SimConfig {
        n_videos: 200,
        n_annotators: 8,
        ..SimConfig::default()
    })
    .unwrap();
    let policy = CampaignPolicy {
        completion_rate: 0.6,
        seed: 3,
        ..CampaignPolicy::default()
    };
    let run = run_campaign(&pool, &policy, clock()).unwrap();
    let reminders = run.transcript.count(|e| matches!(e, TranscriptEntry::Reminder { .. }));
    assert!(reminders > 0);
    // at most one reminder per annotator and batch
    let keys: BTreeSet<_> = run
        .transcript
        .entries
        .iter()
        .filter_map(|e| match e {
            TranscriptEntry::Reminder { annotator_id, tick_id, .. } => Some((annotator_id.clone(), *tick_id)),
            _ => None,
        })
        .collect();
    assert_eq!(keys.len(), reminders);
    assert!(run.state.videos.values().all(|v| v.state == VideoState::Fused));
}

#[test]
fn heavy_dropout_deadlocks_with_starving_clips() {
    let pool = generate_pool(&SimConfig {
        n_videos: 300,
        n_annotators: 5,
        ..SimConfig::default()
    })
    .unwrap();
    let policy = CampaignPolicy {
        dropout_rate: 0.6,
        seed: 1,
        ..CampaignPolicy::default()
    };
    match run_campaign(&pool, &policy, clock()) {
        Err(SimError::DeadlockDetected { starving, .. }) => assert!(!starving.is_empty()),
        other => panic!("expected a deadlock, got {:?}", other.map(|r| r.transcript.ticks())),
    }
}
