use cvs_core::domain::{AnnotatorId, Assessment, ClipId, CvsCriterion, LabelTriple, PerCriterion, ANNOTATED_FRAMES};
use cvs_core::fusion::{
    agreement_class, classification_report, expert_bound_predict, fuse_clip, fuse_mode, fuse_soft, AgreementClass,
    ExpertBound,
};
use cvs_core::scalar::Exact;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exact_conf() -> impl Strategy<Value = Exact> {
    (0i128..=100).prop_map(|n| Ratio::new(n, 100))
}

fn exact_triple() -> impl Strategy<Value = LabelTriple<Exact>> {
    (any::<[bool; 3]>(), [exact_conf(), exact_conf(), exact_conf()]).prop_map(|(l, c)| LabelTriple::new(l, c))
}

fn frame() -> impl Strategy<Value = PerCriterion<bool>> {
    any::<[bool; 3]>().prop_map(|b| PerCriterion::new(b[0], b[1], b[2]))
}

/// Macro-F1 from precision and recall, scored per class.
fn oracle_f1(pred: &[bool], truth: &[bool], class: bool) -> Exact {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p == class && **t == class).count() as i128;
    let predicted = pred.iter().filter(|p| **p == class).count() as i128;
    let actual = truth.iter().filter(|t| **t == class).count() as i128;
    if predicted == 0 && actual == 0 {
        return Ratio::from_integer(1);
    }
    if tp == 0 {
        return Ratio::from_integer(0);
    }
    let precision = Ratio::new(tp, predicted);
    let recall = Ratio::new(tp, actual);
    Ratio::from_integer(2) * precision * recall / (precision + recall)
}

proptest! {
    #[test]
    fn soft_label_in_unit_interval(t in exact_triple()) {
        let y = fuse_soft(&t);
        prop_assert!(y >= Ratio::from_integer(0) && y <= Ratio::from_integer(1));
    }

    #[test]
    fn soft_label_degenerate_confidences(l in any::<[bool; 3]>()) {
        let full = LabelTriple::<Exact>::new(l, [Ratio::from_integer(1); 3]);
        let positives = l.iter().filter(|&&b| b).count() as i128;
        prop_assert_eq!(fuse_soft(&full), Ratio::new(positives, 3));
        let none = LabelTriple::<Exact>::new(l, [Ratio::from_integer(0); 3]);
        prop_assert_eq!(fuse_soft(&none), Ratio::new(1, 2));
    }

    #[test]
    fn fusion_is_permutation_invariant(t in exact_triple(), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let p = LabelTriple::new(perm.map(|i| t.labels[i]), perm.map(|i| t.confidences[i]));
        prop_assert_eq!(fuse_soft(&t), fuse_soft(&p));
        prop_assert_eq!(fuse_mode(&t), fuse_mode(&p));
        prop_assert_eq!(agreement_class(&t), agreement_class(&p));
    }

    #[test]
    fn report_matches_confusion_matrix_oracle(pairs in prop::collection::vec((frame(), frame()), 0..=50)) {
        let (preds, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let r = classification_report::<Exact>(&preds, &labels).unwrap();
        let n = labels.len() as i128;
        let hundred = Ratio::from_integer(100);
        let mut f1_sum = Ratio::from_integer(0);
        for k in CvsCriterion::ALL {
            let p: Vec<bool> = preds.iter().map(|f| f[k]).collect();
            let t: Vec<bool> = labels.iter().map(|f| f[k]).collect();
            let macro_f1 = hundred * (oracle_f1(&p, &t, true) + oracle_f1(&p, &t, false)) / Ratio::from_integer(2);
            prop_assert_eq!(r.macro_f1[k], macro_f1);
            f1_sum += macro_f1;
            if n > 0 {
                let correct = p.iter().zip(&t).filter(|(a, b)| a == b).count() as i128;
                prop_assert_eq!(r.accuracy[k], hundred * Ratio::new(correct, n));
            }
        }
        prop_assert_eq!(r.overall_macro_f1, f1_sum / Ratio::from_integer(3));
        if n > 0 {
            let all = preds.iter().zip(&labels).filter(|(a, b)| CvsCriterion::ALL.iter().all(|&k| a[k] == b[k])).count();
            prop_assert_eq!(r.subset_accuracy, hundred * Ratio::new(all as i128, n));
        }
    }

    #[test]
    fn expert_bounds_against_mode(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assessments: Vec<Assessment> = (0..3)
            .map(|a| {
                let frames: Vec<PerCriterion<bool>> =
                    (0..ANNOTATED_FRAMES).map(|_| PerCriterion::from_fn(|_| rng.random_bool(0.5))).collect();
                let video_level = PerCriterion::from_fn(|k| frames.iter().any(|f| f[k]));
                Assessment {
                    clip_id: ClipId::new("c"),
                    annotator_id: AnnotatorId::new(format!("a{a}")),
                    frame_labels: frames,
                    confidence: 0.5,
                    video_level,
                }
            })
            .collect();
        let fused = fuse_clip::<f64>(&assessments).unwrap();
        let truth: Vec<_> = fused.iter().map(|f| f.mode).collect();
        let upper = classification_report::<f64>(&expert_bound_predict(&assessments, ExpertBound::Upper).unwrap(), &truth).unwrap();
        let lower = classification_report::<Exact>(&expert_bound_predict(&assessments, ExpertBound::Lower).unwrap(), &truth).unwrap();
        for k in CvsCriterion::ALL {
            prop_assert_eq!(upper.accuracy[k], 100.0);
            prop_assert_eq!(upper.macro_f1[k], 100.0);
            let full = fused.iter().filter(|f| f.agreement[k] == AgreementClass::Full).count() as i128;
            prop_assert_eq!(lower.accuracy[k], Ratio::from_integer(100) * Ratio::new(full, ANNOTATED_FRAMES as i128));
        }
    }
}

#[test]
fn rounded_soft_label_agrees_with_mode_on_grid() {
    for bits in 0u8..8 {
        let l = [bits & 1 == 1, bits & 2 == 2, bits & 4 == 4];
        for step in 1..=10 {
            let c = Ratio::new(step, 10);
            let t = LabelTriple::<Exact>::new(l, [c; 3]);
            let y = fuse_soft(&t);
            let rounded = y > Ratio::new(1, 2);
            assert_eq!(rounded, fuse_mode(&t), "labels {l:?} confidence {c}");
        }
    }
}

#[test]
fn full_agreement_rate_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for p in [0.1, 0.41, 0.5, 0.9] {
        let trials = 200_000;
        let full = (0..trials)
            .filter(|_| {
                let t = LabelTriple::<f64>::new([rng.random_bool(p), rng.random_bool(p), rng.random_bool(p)], [1.0; 3]);
                agreement_class(&t) == AgreementClass::Full
            })
            .count();
        let expected = p.powi(3) + (1.0 - p).powi(3);
        let observed = full as f64 / trials as f64;
        // 5 standard errors
        let se = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!((observed - expected).abs() < 5.0 * se, "p={p}: {observed} vs {expected}");
    }
}

#[test]
fn table5_overall_macro_f1_is_mean_of_criteria() {
    let rows: [(&str, [f64; 3], f64); 6] = [
        ("Farm", [53.64, 76.09, 59.10], 62.94),
        ("theator", [55.34, 75.13, 62.42], 64.30),
        ("SDS-HD", [51.31, 74.41, 57.64], 61.12),
        ("mmll", [52.20, 71.54, 54.30], 59.35),
        ("TUE-VCA", [39.05, 69.76, 52.63], 53.81),
        ("Expert lower bound", [31.12, 47.44, 32.11], 36.89),
    ];
    for (team, per, overall) in rows {
        let got = cvs_core::fusion::overall_macro_f1(&PerCriterion::new(per[0], per[1], per[2]));
        assert_eq!(cvs_core::fusion::round_half_up_2(got), overall, "{team}");
    }
}
