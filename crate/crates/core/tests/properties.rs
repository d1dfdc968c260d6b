mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use dualfuzz::constraints::{sat_explicit, sat_implicit, DependencyIndex, EnumerationOptions, GroupEnumerator};
use dualfuzz::driver_sched::{
    apply_slice_result, roulette_select, selection_probabilities, DriverRecord, DriverState, EnergyConfig,
};
use dualfuzz::executor::{CoverageMap, SimAdapter, SimAdapterConfig, SliceReport, ToyToolchain};
use dualfuzz::factory::classify::{
    classify_failure, FailureCategory, CORRUPTED_CODE, LANGUAGE_BASICS, NON_EXISTING_IDENTIFIER, OUT_OF_SPACE, TYPE_ERROR,
};
use dualfuzz::factory::client::ScriptedClient;
use dualfuzz::factory::filter::static_api_check;
use dualfuzz::factory::implicit::parse_implicit_constraints;
use dualfuzz::factory::prompt::PromptTemplates;
use dualfuzz::factory::{generate_driver, DriverLanguage, DriverSource, GenerationContext, GenerationResult, GenerationSettings};
use dualfuzz::group_sched::{jaccard, pareto_rank, pool_entropy, similarity_score, GroupRecord, GroupScheduler, GroupStatus, SelectionPolicy};
use dualfuzz::model::{ApiGroup, ImplicitConstraint};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn name_set() -> impl Strategy<Value = BTreeSet<String>> {
    proptest::collection::btree_set((0u8..12).prop_map(|i| format!("f{i}")), 0..6)
}

fn toy_driver(id: &str, created: u64) -> DriverRecord {
    let source = DriverSource {
        id: id.into(),
        group: ApiGroup::new(["a", "b"]),
        language: DriverLanguage::Toy,
        text: String::new(),
        generation: 0,
    };
    DriverRecord::new(source, PathBuf::from(id), Some(1000), 10, created)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Constraint satisfaction depends only on the member set.
    #[test]
    fn sat_is_order_free(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::random_spec(&mut rng, 8, 5);
        let index = DependencyIndex::build(&spec, false);
        let mut names: Vec<String> = spec.apis.iter().map(|a| a.name.clone()).collect();
        names.truncate(4);
        let forward = ApiGroup::new(names.clone());
        names.shuffle(&mut rng);
        let shuffled = ApiGroup::new(names.into_iter().rev());
        prop_assert_eq!(sat_explicit(&forward, &index), sat_explicit(&shuffled, &index));
        prop_assert_eq!(sat_implicit(&forward, &spec.implicit), sat_implicit(&shuffled, &spec.implicit));
    }

    // A member sharing no type with anyone breaks the type rule.
    #[test]
    fn unrelated_member_breaks_explicit(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = common::random_spec(&mut rng, 8, 0);
        spec.apis.push(common::api("lonely", "Island *", &["Reef"]));
        let index = DependencyIndex::build(&spec, false);
        let groups: Vec<ApiGroup> = GroupEnumerator::new(&spec, EnumerationOptions { max_size: 4, ..Default::default() })
            .unwrap()
            .take(20)
            .collect();
        for g in groups {
            prop_assert!(sat_explicit(&g, &index));
            let mut members = g.members.clone();
            members.insert("lonely".into());
            prop_assert!(!sat_explicit(&ApiGroup::new(members), &index));
        }
    }

    // Adding any constraint never admits new groups.
    #[test]
    fn constraints_only_filter(seed in 0u64..10_000, conflict in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::random_spec(&mut rng, 8, 3);
        prop_assume!(spec.apis.len() >= 2);
        let before: BTreeSet<ApiGroup> = GroupEnumerator::new(&spec, EnumerationOptions::default()).unwrap().collect();
        let (a, b) = (&spec.apis[0].name, &spec.apis[1].name);
        let mut tighter = spec.clone();
        tighter.implicit.push(if conflict { ImplicitConstraint::conflict(a, b) } else { ImplicitConstraint::imply(a, b) });
        let after: BTreeSet<ApiGroup> = GroupEnumerator::new(&tighter, EnumerationOptions::default()).unwrap().collect();
        prop_assert!(after.is_subset(&before));
    }

    #[test]
    fn jaccard_symmetric_and_reflexive(a in name_set(), b in name_set()) {
        prop_assert_eq!(jaccard(&a, &b), jaccard(&b, &a));
        let j = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        if !a.is_empty() {
            prop_assert_eq!(jaccard(&a, &a), 1.0);
        }
    }

    #[test]
    fn similarity_scales_with_coverage(
        hist in proptest::collection::vec((name_set(), 0.0f64..1.0), 1..8),
        cands in proptest::collection::vec(name_set(), 1..6),
        lambda in 0.0f64..4.0,
    ) {
        let records: Vec<GroupRecord> = hist
            .iter()
            .map(|(g, c)| GroupRecord { observed_coverage: *c, ..GroupRecord::candidate(ApiGroup::new(g.clone())) })
            .collect();
        let scaled: Vec<GroupRecord> =
            records.iter().map(|r| GroupRecord { observed_coverage: r.observed_coverage * lambda, ..r.clone() }).collect();
        let base: Vec<f64> = cands.iter().map(|c| similarity_score(&ApiGroup::new(c.clone()), &records)).collect();
        let after: Vec<f64> = cands.iter().map(|c| similarity_score(&ApiGroup::new(c.clone()), &scaled)).collect();
        for (x, y) in base.iter().zip(&after) {
            prop_assert!((x * lambda - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
        if lambda > 0.0 {
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i);
            let (i, j) = (argmax(&base).unwrap(), argmax(&after).unwrap());
            prop_assert!((base[i] - base[j]).abs() <= 1e-9 * (1.0 + base[i].abs()));
        }
    }

    #[test]
    fn entropy_peaks_at_uniform(counts in proptest::collection::vec(1u64..20, 1..8)) {
        let k = counts.len();
        let skewed: BTreeMap<String, u64> = counts.iter().enumerate().map(|(i, c)| (format!("f{i}"), *c)).collect();
        let uniform: BTreeMap<String, u64> = (0..k).map(|i| (format!("f{i}"), 3)).collect();
        let h = pool_entropy(&skewed);
        prop_assert!(h <= (k as f64).log2() + 1e-12);
        prop_assert!((pool_entropy(&uniform) - (k as f64).log2()).abs() < 1e-12);
        if counts.iter().any(|&c| c != counts[0]) {
            prop_assert!(h < (k as f64).log2());
        }
    }

    #[test]
    fn pareto_rank_commutes_with_permutation(seed in 0u64..10_000, size in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = common::random_population(&mut rng, size);
        let ranks = pareto_rank(&pop);
        prop_assert_eq!(&ranks, &common::brute_force_ranks(&pop));
        let mut perm: Vec<usize> = (0..size).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<_> = perm.iter().map(|&i| pop[i]).collect();
        let permuted_ranks = pareto_rank(&permuted);
        for (pos, &i) in perm.iter().enumerate() {
            prop_assert_eq!(permuted_ranks[pos], ranks[i]);
        }
    }

    #[test]
    fn batches_are_fresh_candidates(seed in 0u64..10_000, k in 1usize..6, rounds in 1usize..8, pareto in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::random_spec(&mut rng, 9, 3);
        let stream = GroupEnumerator::new(&spec, EnumerationOptions { order_seed: seed, ..Default::default() }).unwrap();
        let policy = if pareto { SelectionPolicy::Pareto } else { SelectionPolicy::Random };
        let mut s = GroupScheduler::new(stream, 16, policy);
        let mut seen = BTreeSet::new();
        for round in 0..rounds {
            let batch = s.select_group_batch(k, &mut rng);
            prop_assert!(batch.len() <= k);
            for g in &batch {
                prop_assert!(seen.insert(g.clone()), "reselected {}", g);
                prop_assert_eq!(s.record(g).unwrap().status, GroupStatus::Generating);
                s.finish_generation(g, 1, dualfuzz::group_sched::GenerationResultKind::Accepted);
                s.record_execution(g, (round as f64 * 0.1).min(1.0));
            }
        }
    }

    #[test]
    fn query_count_never_exceeds_cap(script in proptest::collection::vec(0usize..4, 1..8), retries in 1u32..6) {
        let spec = common::kv_spec();
        let replies = ["call kv_open p\n", "call kv_open p 0\n", "call kv_nope\ncall kv_close h\n", "garbage ((\n"];
        let mut client = ScriptedClient::new(script.iter().map(|&i| replies[i]));
        let toolchain = ToyToolchain::new(spec.clone());
        let adapter = SimAdapter::new(1, spec.clone(), SimAdapterConfig::default());
        let settings = GenerationSettings { language: DriverLanguage::Toy, max_retries: retries, ..Default::default() };
        let templates = PromptTemplates::default();
        let ctx = GenerationContext { spec: &spec, toolchain: &toolchain, adapter: &adapter, templates: &templates, hints: &[], settings: &settings };
        let out = generate_driver(&ApiGroup::new(["kv_open", "kv_close"]), "d", &ctx, &mut client).unwrap();
        prop_assert!(out.queries <= retries);
        prop_assert_eq!(out.result, GenerationResult::ExhaustedRetries);
        prop_assert_eq!(out.queries, retries);
    }

    #[test]
    fn accepted_drivers_pass_static_check(seed in 0u64..500) {
        let spec = common::kv_spec();
        let replies = ["call kv_open p 0\n", "call kv_open p 0\ncall kv_close h\n"];
        let mut order = [0usize, 1];
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut client = ScriptedClient::new(order.iter().map(|&i| replies[i]));
        let toolchain = ToyToolchain::new(spec.clone());
        let adapter = SimAdapter::new(seed, spec.clone(), SimAdapterConfig { spurious_early_crash: 0.0, ..Default::default() });
        let settings = GenerationSettings { language: DriverLanguage::Toy, ..Default::default() };
        let templates = PromptTemplates::default();
        let ctx = GenerationContext { spec: &spec, toolchain: &toolchain, adapter: &adapter, templates: &templates, hints: &[], settings: &settings };
        let group = ApiGroup::new(["kv_open", "kv_close"]);
        let out = generate_driver(&group, "d", &ctx, &mut client).unwrap();
        prop_assert_eq!(out.result, GenerationResult::Accepted);
        prop_assert!(static_api_check(out.driver.as_ref().unwrap(), &group));
    }

    #[test]
    fn classification_ignores_line_order(
        picks in proptest::collection::vec((0usize..5, 0usize..64), 1..5),
        noise in proptest::collection::vec("[a-z ]{0,20}", 0..4),
        seed in any::<u64>(),
    ) {
        let lists: [(&[&str], FailureCategory); 5] = [
            (CORRUPTED_CODE, FailureCategory::Corrupted),
            (LANGUAGE_BASICS, FailureCategory::LanguageBasics),
            (NON_EXISTING_IDENTIFIER, FailureCategory::NonExistingIdentifier),
            (TYPE_ERROR, FailureCategory::TypeError),
            (OUT_OF_SPACE, FailureCategory::OutOfSpace),
        ];
        let mut lines: Vec<String> = picks.iter().map(|&(c, i)| lists[c].0[i % lists[c].0.len()].to_string()).collect();
        lines.extend(noise.iter().map(|n| format!("note: {n}")));
        let first = classify_failure(&lines.join("\n"));
        let best = picks.iter().map(|&(c, _)| c).min().unwrap();
        prop_assert!(first <= lists[best].1, "{:?} for {:?}", first, lines);
        lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(classify_failure(&lines.join("\n")), first);
    }

    #[test]
    fn parsed_constraints_name_known_apis(lines in proptest::collection::vec(("(imply|conflict)", "kv_[a-z]{1,6}", "kv_[a-z]{1,6}"), 0..10)) {
        let spec = common::kv_spec();
        let text: String = lines.iter().map(|(k, a, b)| format!("- {k}({a}, {b})\n")).collect();
        let (found, _) = parse_implicit_constraints(&text, &spec);
        for c in found {
            prop_assert!(spec.contains(&c.first) && spec.contains(&c.second) && c.first != c.second);
        }
    }

    #[test]
    fn scheduler_bookkeeping(seed in any::<u64>(), steps in 1usize..60) {
        let first = simulate_pool(seed, steps)?;
        prop_assert_eq!(first, simulate_pool(seed, steps)?);
    }
}

/// Runs a toy driver pool for `steps` rounds, checking the scheduling
/// invariants along the way, and returns every selection made.
fn simulate_pool(seed: u64, steps: usize) -> Result<Vec<Vec<String>>, TestCaseError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let energy = EnergyConfig::default();
    let mut pool: Vec<DriverRecord> = (0..6).map(|i| toy_driver(&format!("d{i}"), i)).collect();
    let mut global = CoverageMap::new(Some(1000));
    let mut retired = BTreeSet::new();
    let mut history = Vec::new();
    for step in 0..steps {
        let before = global.len();
        let picks = roulette_select(&pool, 2, energy.initial, &mut rng);
        for id in &picks {
            prop_assert!(!retired.contains(id));
            let r = pool.iter_mut().find(|r| &r.driver.id == id).unwrap();
            r.state = DriverState::Running;
            let found: BTreeSet<String> = (0..rng.random_range(0..4)).map(|_| format!("r{}", rng.random_range(0..60))).collect();
            let crashed = rng.random_bool(0.05);
            let report = SliceReport { driver: id.clone(), new_regions: found, exec_seconds: 1.0, crashed, crash_info: None, crash_input: None };
            apply_slice_result(r, &report, &mut global, energy).unwrap();
            prop_assert!(r.energy <= energy.initial);
            if crashed {
                retired.insert(id.clone());
            }
        }
        prop_assert!(global.len() >= before);
        let probs = selection_probabilities(&pool, energy.initial);
        let fresh = pool.iter().any(|r| r.state == DriverState::Idle && r.exec_seconds == 0.0);
        if !probs.is_empty() && !fresh {
            let total: f64 = probs.iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "step {}: {}", step, total);
        }
        history.push(picks);
    }
    Ok(history)
}
