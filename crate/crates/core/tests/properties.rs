use proptest::prelude::*;

use fcog::eval::{average_precision, compare, Aligned};
use fcog::fcm::{partition, CognitionRecord, Fcm, FcmConfig};
use fcog::fcs::{
    cosine, run_fcs, update_rule, FcsConfig, ProjectionConfig, PrototypeClassifier,
};
use fcog::features::{position_score, segment_labels, ActionSegment, CooccurrenceModel};
use fcog::fuzzy::{Engine, FuzzyVariable};
use fcog::rules;
use fcog::{FrameRecord, Level, Rule, RuleBase, Term};

fn shipped_engine() -> Engine {
    Engine::standard(rules::shipped_rulebase())
}

fn label_stream(max_len: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0..4usize, 1..max_len)
        .prop_map(|v| v.into_iter().map(|k| format!("a{k}")).collect())
}

fn frames_from(labels: &[String], confs: &[f64], features: &[Vec<f64>]) -> Vec<FrameRecord> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| FrameRecord::new(i, l.clone(), confs[i], features[i].clone()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn inference_stays_inside_the_output_universe(c in 0.0..=1.0f64, n in -1.0..=1.0f64, g in 0.0..=1.0f64) {
        let u = shipped_engine().infer(c, n, g).unwrap();
        prop_assert!((0.0..=1.0).contains(&u));
    }

    #[test]
    fn inputs_outside_a_universe_act_as_its_edge(c in -3.0..4.0f64, n in -4.0..4.0f64, g in -3.0..4.0f64) {
        let engine = shipped_engine();
        let clamped = engine.infer(c.clamp(0.0, 1.0), n.clamp(-1.0, 1.0), g.clamp(0.0, 1.0)).unwrap();
        prop_assert_eq!(engine.infer(c, n, g).unwrap(), clamped);
    }

    #[test]
    fn refining_the_grid_moves_the_centroid_little(c in 0.0..=1.0f64, n in -1.0..=1.0f64, g in 0.0..=1.0f64) {
        let coarse = Engine::with_resolution(rules::shipped_rulebase(), 2001).unwrap();
        let fine = Engine::with_resolution(rules::shipped_rulebase(), 8001).unwrap();
        let d = (coarse.infer(c, n, g).unwrap() - fine.infer(c, n, g).unwrap()).abs();
        prop_assert!(d < 1e-3, "moved by {d}");
    }

    #[test]
    fn fuzzified_degrees_form_a_partition_of_unity(x in -2.0..2.0f64) {
        for var in [FuzzyVariable::confidence(), FuzzyVariable::correlation(), FuzzyVariable::position()] {
            let v = var.fuzzify(x).unwrap();
            let degrees = v.degrees();
            prop_assert!(degrees.iter().all(|d| (0.0..=1.0).contains(d)));
            prop_assert!((degrees.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(degrees.iter().filter(|d| **d > 0.0).count() <= 2);
        }
    }

    #[test]
    fn serialized_rule_bases_parse_back(picks in prop::collection::vec((0..5usize, 0..5usize, 0..5usize, 0..5usize), 1..40)) {
        let mut seen = std::collections::HashSet::new();
        let rules: Vec<Rule> = picks
            .into_iter()
            .filter(|(c, n, g, _)| seen.insert((*c, *n, *g)))
            .enumerate()
            .map(|(k, (c, n, g, u))| {
                let t = |i| Term::from_index(i).unwrap();
                Rule::new(format!("R{}", k + 1), t(c), t(n), t(g), t(u))
            })
            .collect();
        let rb = RuleBase::new(rules);
        let text = rules::serialize(&rb);
        let back = rules::parse_str(&text).unwrap();
        prop_assert_eq!(&back, &rb);
        prop_assert_eq!(rules::serialize(&back), text);
    }

    #[test]
    fn npmi_is_bounded_for_fitted_models(corpus in prop::collection::vec(label_stream(20), 1..8), alpha in 0.0..2.0f64) {
        let fitted = CooccurrenceModel::fit(&corpus, alpha);
        if let Ok(model) = fitted {
            for a in model.labels() {
                for b in model.labels() {
                    let v = model.npmi(a, b).unwrap();
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn fitting_ignores_corpus_order(mut corpus in prop::collection::vec(label_stream(20), 2..8), alpha in 0.01..2.0f64) {
        let a = CooccurrenceModel::fit(&corpus, alpha).unwrap();
        corpus.reverse();
        let b = CooccurrenceModel::fit(&corpus, alpha).unwrap();
        for x in a.labels() {
            for y in a.labels() {
                prop_assert!((a.joint(x, y).unwrap() - b.joint(x, y).unwrap()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn segments_flatten_back_to_the_stream(labels in label_stream(60), offset in 0..100usize) {
        let segs = segment_labels(&labels, offset).unwrap();
        let flat: Vec<String> = segs
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.label.clone(), s.len()))
            .collect();
        prop_assert_eq!(flat, labels);
        prop_assert_eq!(segs[0].start, offset);
        for w in segs.windows(2) {
            prop_assert!(w[0].label != w[1].label);
            prop_assert_eq!(w[0].end + 1, w[1].start);
        }
    }

    #[test]
    fn position_scores_mirror_about_the_centre(start in 0..500usize, len in 1..80usize) {
        let seg = ActionSegment { start, end: start + len - 1, label: "a".into() };
        for j in 0..len {
            let a = position_score(&seg, start + j).unwrap();
            let b = position_score(&seg, seg.end - j).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a > 0.0 && a <= 1.0);
        }
    }

    #[test]
    fn average_precision_is_a_fraction_and_ignores_duplication(
        scores in prop::collection::vec((0.0..1.0f64, any::<bool>()), 1..40),
    ) {
        if let Some(ap) = average_precision(&scores) {
            prop_assert!((0.0..=1.0).contains(&ap));
            let doubled: Vec<(f64, bool)> = scores.iter().chain(&scores).copied().collect();
            let ap2 = average_precision(&doubled).unwrap();
            prop_assert!((ap - ap2).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_ignores_positive_scale(
        a in prop::collection::vec(-5.0..5.0f64, 4),
        b in prop::collection::vec(-5.0..5.0f64, 4),
        s in 0.01..100.0f64,
    ) {
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        prop_assert!((cosine(&a, &b) - cosine(&scaled, &b)).abs() < 1e-12);
        prop_assert!(cosine(&a, &b).abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn reclassify_returns_a_probability_vector(
        protos in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 2..6),
        agg in prop::collection::vec(-1.0..1.0f64, 3),
        own in prop::collection::vec(-1.0..1.0f64, 3),
        temperature in 0.01..5.0f64,
        blend in 0.0..=1.0f64,
    ) {
        let labels = (0..protos.len()).map(|k| format!("c{k}")).collect();
        let clf = PrototypeClassifier::new(labels, protos, temperature, blend).unwrap();
        let h = clf.reclassify(&agg, &own).unwrap();
        prop_assert!(h.iter().all(|p| *p >= 0.0));
        prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn update_rule_is_a_max(u in 0.0..1.0f64, u_hat in 0.0..1.0f64, tau in 0.0..1.0f64) {
        let (u_opt, accepted) = update_rule(u, u_hat, tau);
        prop_assert!(u_opt >= u_hat && u_opt >= u + tau);
        prop_assert_eq!(accepted, u_hat > u + tau);
    }

    #[test]
    fn raising_delta_only_moves_frames_to_the_low_side(us in prop::collection::vec(0.0..1.0f64, 1..50), d1 in 0.0..1.0f64, d2 in 0.0..1.0f64) {
        let records: Vec<CognitionRecord> = us
            .iter()
            .enumerate()
            .map(|(i, &u)| CognitionRecord { index: i, label: "a".into(), c: u, n: 0.0, g: 1.0, u, level: Level::High })
            .collect();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (high_lo, low_lo) = partition(&records, lo);
        let (high_hi, _) = partition(&records, hi);
        prop_assert!(high_hi.iter().all(|i| high_lo.contains(i)));
        prop_assert_eq!(high_lo.len() + low_lo.len(), records.len());
    }
}

fn toy_fcm(labels: &[String]) -> Fcm {
    let model = CooccurrenceModel::fit(&[labels.to_vec()], 0.5).unwrap();
    Fcm::new(FcmConfig::new(model)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn updating_is_idempotent_and_spares_high_frames(
        labels in label_stream(40),
        seed in any::<u64>(),
        tau in 0.0..0.5f64,
    ) {
        let n = labels.len();
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let confs: Vec<f64> = (0..n).map(|_| next()).collect();
        let features: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| next() - 0.5).collect()).collect();
        let frames = frames_from(&labels, &confs, &features);
        let fcm = toy_fcm(&labels);
        let records = fcm.evaluate(&frames).unwrap();

        let classes: Vec<String> = (0..4).map(|k| format!("a{k}")).collect();
        let protos: Vec<Vec<f64>> = (0..4).map(|k| (0..3).map(|d| if d == k % 3 { 1.0 } else { 0.1 * k as f64 }).collect()).collect();
        let clf = PrototypeClassifier::new(classes, protos, 0.1, 0.5).unwrap();
        let mut cfg = FcsConfig::new(ProjectionConfig::identity(3), clf);
        cfg.tau = tau;

        let first = run_fcs(&frames, &records, &fcm, &cfg).unwrap();
        let second = run_fcs(&first.sequence, &records, &fcm, &cfg).unwrap();
        prop_assert_eq!(&second.sequence, &first.sequence);
        for (rec, (before, after)) in records.iter().zip(frames.iter().zip(&first.sequence)) {
            if rec.level == Level::High {
                prop_assert_eq!(&before.label, &after.label);
            }
        }
        for o in &first.outcomes {
            if !o.accepted {
                prop_assert_eq!(&o.new_label, &o.old_label);
            }
        }
    }

    #[test]
    fn compare_conserves_correct_frames(
        before in label_stream(30),
        flips in prop::collection::vec(any::<bool>(), 30),
        truth_shift in prop::collection::vec(any::<bool>(), 30),
    ) {
        let n = before.len();
        let after_labels: Vec<String> = before
            .iter()
            .zip(&flips)
            .map(|(l, f)| if *f { format!("{l}x") } else { l.clone() })
            .collect();
        let truth: Vec<String> = before
            .iter()
            .zip(&truth_shift)
            .zip(&after_labels)
            .map(|((b, s), a)| if *s { a.clone() } else { b.clone() })
            .collect();
        let confs = vec![0.5; n];
        let feats = vec![vec![0.0]; n];
        let b = frames_from(&before, &confs, &feats);
        let a = frames_from(&after_labels, &confs, &feats);
        let report = compare(&[Aligned { before: &b, after: &a, truth: &truth, outcomes: &[] }], &[]).unwrap();
        let correct = |s: &[FrameRecord]| s.iter().zip(&truth).filter(|(f, t)| f.label == **t).count() as i64;
        prop_assert_eq!(report.repaired as i64 - report.broken as i64, correct(&a) - correct(&b));
    }
}
