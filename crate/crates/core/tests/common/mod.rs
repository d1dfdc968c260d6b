#![allow(dead_code)]

use std::collections::BTreeSet;

use dualfuzz::executor::{SimAdapter, SimAdapterConfig, ToyToolchain};
use dualfuzz::factory::prompt::PromptTemplates;
use dualfuzz::factory::{DriverLanguage, GenerationContext, GenerationSettings};
use dualfuzz::group_sched::ObjectiveVector;
use dualfuzz::model::{normalize_type, ApiFunction, ConstraintKind, ImplicitConstraint, LibrarySpec, Parameter};
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn api(name: &str, ret: &str, params: &[&str]) -> ApiFunction {
    ApiFunction {
        name: name.to_string(),
        signature: format!("{ret} {name}({})", params.join(", ")),
        return_type: normalize_type(ret).unwrap(),
        parameters: params
            .iter()
            .enumerate()
            .map(|(i, p)| Parameter { name: format!("a{i}"), ty: normalize_type(p).unwrap() })
            .collect(),
    }
}

/// The small key-value store used across the integration tests.
pub fn kv_spec() -> LibrarySpec {
    LibrarySpec {
        library_name: "kvstore".into(),
        apis: vec![
            api("kv_open", "KvHandle *", &["const char *", "int"]),
            api("kv_put", "int", &["KvHandle *", "const uint8_t *", "size_t"]),
            api("kv_get", "int", &["KvHandle *", "const uint8_t *", "KvValue *"]),
            api("kv_value_free", "void", &["KvValue *"]),
            api("kv_close", "void", &["KvHandle *"]),
            api("kv_destroy", "void", &["KvHandle *"]),
        ],
        implicit: vec![ImplicitConstraint::imply("kv_open", "kv_close"), ImplicitConstraint::conflict("kv_close", "kv_destroy")],
        source_root: None,
    }
}

/// A toy driver that calls `kv_open` and `kv_close` correctly.
pub const GOOD: &str = "```\ncall kv_open path 0\ncall kv_close h\n```";

/// Generation context over the kv library with the toy toolchain and a
/// simulated target.
pub struct Rig {
    pub spec: LibrarySpec,
    pub toolchain: ToyToolchain,
    pub adapter: SimAdapter,
    pub templates: PromptTemplates,
    pub hints: Vec<String>,
    pub settings: GenerationSettings,
}

impl Rig {
    pub fn new(adapter: SimAdapterConfig) -> Self {
        let spec = kv_spec();
        Rig {
            toolchain: ToyToolchain::new(spec.clone()),
            adapter: SimAdapter::new(5, spec.clone(), adapter),
            spec,
            templates: PromptTemplates::default(),
            hints: vec!["Use the fuzz input for every argument.".into()],
            settings: GenerationSettings { language: DriverLanguage::Toy, ..Default::default() },
        }
    }

    /// No spurious crashes and no bugs.
    pub fn calm() -> Self {
        Rig::new(SimAdapterConfig { spurious_early_crash: 0.0, bug_probability: 0.0, ..Default::default() })
    }

    pub fn ctx(&self) -> GenerationContext<'_> {
        GenerationContext {
            spec: &self.spec,
            toolchain: &self.toolchain,
            adapter: &self.adapter,
            templates: &self.templates,
            hints: &self.hints,
            settings: &self.settings,
        }
    }
}

const TYPES: [&str; 9] = ["void", "int", "size_t", "Ctx *", "Buf *", "const Buf *", "Node **", "char *", "Stream *"];

/// Random library with up to `max_apis` functions and `max_constraints`
/// imply/conflict rules.
pub fn random_spec<R: Rng>(rng: &mut R, max_apis: usize, max_constraints: usize) -> LibrarySpec {
    let n = rng.random_range(1..=max_apis);
    let apis: Vec<ApiFunction> = (0..n)
        .map(|i| {
            let ret = *TYPES.choose(rng).unwrap();
            let k = rng.random_range(0..=3);
            let params: Vec<&str> = (0..k).map(|_| *TYPES[1..].choose(rng).unwrap()).collect();
            api(&format!("fn{i}"), ret, &params)
        })
        .collect();
    let mut implicit = Vec::new();
    if n >= 2 {
        for _ in 0..rng.random_range(0..=max_constraints) {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n);
            while b == a {
                b = rng.random_range(0..n);
            }
            let (a, b) = (format!("fn{a}"), format!("fn{b}"));
            let c = if rng.random_bool(0.5) { ImplicitConstraint::imply(&a, &b) } else { ImplicitConstraint::conflict(&a, &b) };
            if !implicit.contains(&c) {
                implicit.push(c);
            }
        }
    }
    LibrarySpec { library_name: "random".into(), apis, implicit, source_root: None }
}

/// Two APIs can exchange data when a non-void parameter type of one is a
/// parameter or return type of the other.
fn linked(f: &ApiFunction, g: &ApiFunction) -> bool {
    let f_params = f.parameters.iter().map(|p| &p.ty).filter(|t| !t.is_void());
    let g_params: Vec<_> = g.parameters.iter().map(|p| &p.ty).filter(|t| !t.is_void()).collect();
    let f_takes = f_params.into_iter().any(|t| g_params.contains(&t) || (!g.return_type.is_void() && *t == g.return_type));
    let g_takes = !f.return_type.is_void() && g_params.contains(&&f.return_type);
    f_takes || g_takes
}

/// Every subset with size in `min..=max` whose members each link to another
/// member and which honors the imply/conflict rules, by exhaustive search.
pub fn brute_force_groups(spec: &LibrarySpec, min: usize, max: usize, implicit: bool) -> BTreeSet<BTreeSet<String>> {
    let n = spec.apis.len();
    assert!(n <= 20);
    let mut out = BTreeSet::new();
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size < min || size > max {
            continue;
        }
        let members: Vec<&ApiFunction> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| &spec.apis[i]).collect();
        let explicit_ok = members
            .iter()
            .all(|f| members.iter().any(|g| g.name != f.name && linked(f, g)));
        if !explicit_ok {
            continue;
        }
        let names: BTreeSet<String> = members.iter().map(|f| f.name.clone()).collect();
        let implicit_ok = !implicit
            || spec.implicit.iter().all(|c| {
                let (a, b) = (names.contains(&c.first), names.contains(&c.second));
                match c.kind {
                    ConstraintKind::Imply => !a || b,
                    ConstraintKind::Conflict => !(a && b),
                }
            });
        if implicit_ok {
            out.insert(names);
        }
    }
    out
}

fn dominates_bf(a: &[f64; 4], b: &[f64; 4]) -> bool {
    let mut strictly = false;
    for i in 0..4 {
        if a[i] < b[i] {
            return false;
        }
        if a[i] > b[i] {
            strictly = true;
        }
    }
    strictly
}

/// Rank by repeated O(n^2) scans: rank r holds everything not dominated once
/// ranks below r are removed.
pub fn brute_force_ranks(vs: &[ObjectiveVector]) -> Vec<usize> {
    let comps: Vec<[f64; 4]> = vs.iter().map(|v| v.components()).collect();
    let mut rank = vec![usize::MAX; vs.len()];
    let mut level = 0;
    while rank.contains(&usize::MAX) {
        let current: Vec<usize> = (0..vs.len())
            .filter(|&i| rank[i] == usize::MAX)
            .filter(|&i| !(0..vs.len()).any(|j| rank[j] == usize::MAX && dominates_bf(&comps[j], &comps[i])))
            .collect();
        for i in current {
            rank[i] = level;
        }
        level += 1;
    }
    rank
}

pub fn random_population<R: Rng>(rng: &mut R, size: usize) -> Vec<ObjectiveVector> {
    // Coarse values so that ties and shared coordinates are common.
    (0..size)
        .map(|_| ObjectiveVector {
            similarity: rng.random_range(0..5) as f64 * 0.25,
            predicted_coverage: rng.random_range(0..5) as f64 * 0.1,
            neg_length: -rng.random_range(2..=5),
            entropy_gain: rng.random_range(-2..5) as f64 * 0.5,
        })
        .collect()
}
