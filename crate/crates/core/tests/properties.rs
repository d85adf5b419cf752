use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use finsent_core::corpus::{
    stratified_split, subset_proportion, CorpusSet, DomainCorpus, DomainId, Example, Language, SentimentLabel, SplitSpec,
    PROPORTIONS,
};
use finsent_core::inference::{parse_label, ParsedLabel};
use finsent_core::metrics::{score_labels, RunMeta};
use finsent_core::sampler::{compute_weights, emit_manifest, TrainingManifest, WeightMode};
use finsent_core::scheduler::{EarlyStopConfig, EarlyStopState, Phase, PhasePlan, StopUpdate};
use finsent_core::seed;
use finsent_core::synthetic::{SyntheticDomain, SyntheticSpec};

const LABELS: [SentimentLabel; 3] = SentimentLabel::ALL;

fn corpus_with_counts(counts: &[usize]) -> DomainCorpus {
    let d = DomainId::new("prop");
    let mut examples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            examples.push(Example {
                id: format!("c{c}-{i}"),
                text: format!("token{c} item{i}"),
                label: LABELS[c],
                domain: d.clone(),
                language: Language::En,
            });
        }
    }
    DomainCorpus::new(d, examples).unwrap()
}

fn ids(c: &DomainCorpus) -> BTreeSet<String> {
    c.examples().iter().map(|e| e.id.clone()).collect()
}

/// The schedule written out case by case, independently of the library.
fn lr_table(t: usize, w: usize, lr_max: f64, lr_min: f64) -> Vec<f64> {
    let f = t * 8 / 10;
    let cosine = |s: usize| lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * (s - w) as f64 / (f - w) as f64).cos());
    (0..t)
        .map(|s| {
            if s < w {
                lr_max * s as f64 / w as f64
            } else if s < f {
                cosine(s)
            } else {
                lr_min
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_and_stratifies(
        counts in prop::collection::vec(2usize..60, 1..=3),
        frac in 0.05f64..0.5,
        seed in any::<u64>(),
    ) {
        let corpus = corpus_with_counts(&counts);
        let spec = SplitSpec { seed, test_fraction: frac, train_proportion: 100 };
        let (train, test) = stratified_split(&corpus, &spec).unwrap();
        let (a, b) = (ids(&train), ids(&test));
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.union(&b).count(), corpus.len());
        for (c, &n) in counts.iter().enumerate() {
            let got = test.class_counts().get(&LABELS[c]).copied().unwrap_or(0);
            prop_assert!((got as f64 - n as f64 * frac).abs() <= 1.0 + 1e-9, "class {} n={} test={}", c, n, got);
            prop_assert!(got >= 1 && got < n);
        }
        // Same inputs, same split.
        let (train2, _) = stratified_split(&corpus, &spec).unwrap();
        prop_assert_eq!(ids(&train2), a);
    }

    #[test]
    fn proportion_subsets_nest(counts in prop::collection::vec(1usize..80, 1..=3), seed in any::<u64>()) {
        let train = corpus_with_counts(&counts);
        let mut prev: Option<BTreeSet<String>> = None;
        for p in PROPORTIONS {
            let sub = subset_proportion(&train, p, seed).unwrap();
            prop_assert_eq!(sub.len(), (train.len() * p as usize).div_ceil(100));
            let s = ids(&sub);
            if let Some(prev) = &prev {
                prop_assert!(prev.is_subset(&s));
            }
            prev = Some(s);
        }
        prop_assert_eq!(prev.unwrap(), ids(&train));
    }

    #[test]
    fn lr_matches_tabulated_schedule(t in 10usize..3000, lr_max in 1e-5f64..1.0, min_frac in 0.0f64..0.9) {
        let lr_min = lr_max * min_frac;
        let plan = PhasePlan::new(t).with_lr(lr_max, lr_min);
        let table = lr_table(t, plan.warmup_steps, lr_max, lr_min);
        let f = t * 8 / 10;
        for (s, want) in table.iter().enumerate() {
            let got = plan.lr_at(s).unwrap();
            prop_assert!((got - want).abs() <= 1e-12 * lr_max, "step {}: {} vs {}", s, got, want);
            prop_assert!(got >= lr_min - 1e-15 || s < plan.warmup_steps);
        }
        // Non-increasing after warmup, and steps never jump more than the
        // steepest slope allows.
        for s in plan.warmup_steps..t - 1 {
            prop_assert!(table[s + 1] <= table[s] + 1e-15);
        }
        let max_jump = (lr_max / plan.warmup_steps as f64).max((lr_max - lr_min) * PI / (2.0 * (f - plan.warmup_steps) as f64));
        for s in 0..t - 1 {
            prop_assert!((plan.lr_at(s + 1).unwrap() - plan.lr_at(s).unwrap()).abs() <= max_jump + 1e-12);
        }
    }

    #[test]
    fn phases_partition_steps(t in 1usize..5000) {
        let plan = PhasePlan::new(t);
        let mut n = BTreeMap::new();
        for s in 0..t {
            *n.entry(plan.phase_of(s).unwrap()).or_insert(0usize) += 1;
        }
        let (i, f) = (t * 2 / 10, t * 8 / 10);
        prop_assert_eq!(n.get(&Phase::Init).copied().unwrap_or(0), i);
        prop_assert_eq!(n.get(&Phase::Balanced).copied().unwrap_or(0), f - i);
        prop_assert_eq!(n.get(&Phase::Final).copied().unwrap_or(0), t - f);
        prop_assert!(plan.phase_of(t).is_err());
    }

    #[test]
    fn early_stop_follows_reference(
        scores in prop::collection::vec(0.0f64..=1.0, 1..40),
        patience in 0usize..5,
        min_delta in 0.0f64..0.05,
    ) {
        let d = DomainId::new("x");
        let mut state = EarlyStopState::new(EarlyStopConfig { patience, min_delta });
        let (mut best, mut since, mut frozen) = (None::<f64>, 0usize, false);
        for s in scores {
            let got = state.update(&d, s).unwrap();
            if frozen {
                prop_assert_eq!(got, StopUpdate::AlreadyFrozen);
                continue;
            }
            let improved = best.is_none_or(|b| s > b + min_delta);
            if improved {
                best = Some(s);
                since = 0;
                prop_assert_eq!(got, StopUpdate::Improved);
            } else {
                since += 1;
                frozen = since >= patience;
                prop_assert_eq!(got, if frozen { StopUpdate::Frozen } else { StopUpdate::NoImprovement });
            }
            prop_assert_eq!(state.is_frozen(&d), frozen);
        }
    }

    #[test]
    fn macro_f1_ignores_order(
        pairs in prop::collection::vec((0usize..3, 0usize..4), 1..40),
        shuffle_seed in any::<u64>(),
    ) {
        let to_parsed = |p: usize| if p == 3 { ParsedLabel::Unparseable } else { LABELS[p].into() };
        let truth: Vec<_> = pairs.iter().map(|(t, _)| LABELS[*t]).collect();
        let preds: Vec<_> = pairs.iter().map(|(_, p)| to_parsed(*p)).collect();
        let base = score_labels(&truth, &preds, &LABELS, RunMeta::default()).unwrap();

        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        idx.shuffle(&mut seed::rng(shuffle_seed));
        let t2: Vec<_> = idx.iter().map(|&i| truth[i]).collect();
        let p2: Vec<_> = idx.iter().map(|&i| preds[i]).collect();
        let shuffled = score_labels(&t2, &p2, &LABELS, RunMeta::default()).unwrap();
        prop_assert_eq!(base.confusion, shuffled.confusion);
        prop_assert!((base.macro_f1 - shuffled.macro_f1).abs() < 1e-15);
        prop_assert!((base.accuracy - shuffled.accuracy).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&base.macro_f1));
    }

    #[test]
    fn weights_are_distributions(sizes in prop::collection::vec(1usize..100_000, 1..8)) {
        let domains: Vec<_> = sizes.iter().enumerate().map(|(i, &n)| (DomainId::new(format!("d{i}")), n)).collect();
        let inv_total: f64 = sizes.iter().map(|&n| 1.0 / n as f64).sum();
        let total: usize = sizes.iter().sum();
        for mode in [WeightMode::Balanced, WeightMode::Proportional, WeightMode::InitPriority] {
            let w = compute_weights(&domains, mode).unwrap();
            let sum: f64 = w.entries().iter().map(|(_, v)| v).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (i, (d, n)) in domains.iter().enumerate() {
                let want = match mode {
                    WeightMode::Balanced => 1.0 / sizes.len() as f64,
                    WeightMode::Proportional => *n as f64 / total as f64,
                    WeightMode::InitPriority => (1.0 / sizes[i] as f64) / inv_total,
                };
                prop_assert!((w.get(d).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parser_never_leaves_the_label_set(raw in "\\PC{0,40}", k in 1usize..=3) {
        let allowed = &LABELS[..k];
        for lang in [Language::En, Language::Zh] {
            if let Some(l) = parse_label(&raw, allowed, lang).label() {
                prop_assert!(allowed.contains(&l));
            }
        }
    }
}

#[test]
fn manifests_validate_and_roundtrip() {
    let set: CorpusSet = SyntheticSpec {
        domains: vec![SyntheticDomain::english("a", 300), SyntheticDomain::chinese("b", 90)],
        ..Default::default()
    }
    .build(9)
    .unwrap();
    let plan = PhasePlan::new(137).with_lr(0.3, 0.01);
    let m = emit_manifest(&set, &plan, 8, 4).unwrap();
    m.validate(&set).unwrap();
    for s in &m.steps {
        assert_eq!(s.lr, plan.lr_at(s.step).unwrap());
        assert_eq!(s.layer_scales, plan.scales_at(s.step).unwrap());
        assert_eq!(s.example_ids.len(), 8);
    }
    let mut buf = Vec::new();
    m.write_to(&mut buf).unwrap();
    let back = TrainingManifest::read_from(buf.as_slice()).unwrap();
    assert_eq!(back, m);
    assert_eq!(emit_manifest(&set, &plan, 8, 4).unwrap(), m);
    assert_ne!(emit_manifest(&set, &plan, 8, 5).unwrap(), m);
}
