//! Explicit (type-sharing) and implicit (imply/conflict) constraint solving,
//! plus a streaming enumerator of groups that satisfy both.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ApiGroup, ConstraintKind, ImplicitConstraint, LibrarySpec, TypeName, DEFAULT_MAX_GROUP_LEN};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("unknown api `{0}`")]
    UnknownApi(String),
    #[error("invalid size range {min}..={max} (limit {limit})")]
    InvalidRange { min: usize, max: usize, limit: usize },
    #[error("cap must be at least 1")]
    ZeroCap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Signature {
    params: BTreeSet<TypeName>,
    ret: Option<TypeName>,
}

/// Parameter- and return-type lookup tables built from a [`LibrarySpec`].
///
/// `void` is excluded from both tables, so it never links two APIs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyIndex {
    pub by_param_type: BTreeMap<TypeName, BTreeSet<String>>,
    pub by_return_type: BTreeMap<TypeName, BTreeSet<String>>,
    signatures: HashMap<String, Signature>,
    loose_pointer_match: bool,
}

impl DependencyIndex {
    pub fn build(spec: &LibrarySpec, loose_pointer_match: bool) -> Self {
        let key = |t: &TypeName| -> Option<TypeName> {
            if t.is_void() {
                return None;
            }
            let mut k = t.clone();
            if loose_pointer_match {
                k.pointer_depth = 0;
            }
            Some(k)
        };
        let mut by_param_type: BTreeMap<TypeName, BTreeSet<String>> = BTreeMap::new();
        let mut by_return_type: BTreeMap<TypeName, BTreeSet<String>> = BTreeMap::new();
        let mut signatures = HashMap::new();
        for api in &spec.apis {
            let params: BTreeSet<TypeName> = api.parameters.iter().filter_map(|p| key(&p.ty)).collect();
            let ret = key(&api.return_type);
            for t in &params {
                by_param_type.entry(t.clone()).or_default().insert(api.name.clone());
            }
            if let Some(r) = &ret {
                by_return_type.entry(r.clone()).or_default().insert(api.name.clone());
            }
            signatures.insert(api.name.clone(), Signature { params, ret });
        }
        DependencyIndex { by_param_type, by_return_type, signatures, loose_pointer_match }
    }

    pub fn loose_pointer_match(&self) -> bool {
        self.loose_pointer_match
    }

    pub fn contains(&self, name: &str) -> bool {
        self.signatures.contains_key(name)
    }

    /// APIs linked to `name` by any `depends` clause, in either direction.
    pub fn neighbors(&self, name: &str) -> Result<BTreeSet<&str>, ConstraintError> {
        let sig = self.signatures.get(name).ok_or_else(|| ConstraintError::UnknownApi(name.to_string()))?;
        let mut out = BTreeSet::new();
        for t in &sig.params {
            for table in [&self.by_return_type, &self.by_param_type] {
                if let Some(names) = table.get(t) {
                    out.extend(names.iter().map(String::as_str));
                }
            }
        }
        if let Some(r) = &sig.ret {
            if let Some(names) = self.by_param_type.get(r) {
                out.extend(names.iter().map(String::as_str));
            }
        }
        out.remove(name);
        Ok(out)
    }
}

fn any_in(table: &BTreeMap<TypeName, BTreeSet<String>>, t: &TypeName, rest: &BTreeSet<&str>) -> bool {
    table.get(t).is_some_and(|names| names.iter().any(|n| rest.contains(n.as_str())))
}

/// Whether `f` can exchange data with some member of `rest`: one of its
/// parameter types is returned or taken by a member of `rest`, or its return
/// type is taken as a parameter by a member of `rest`.
pub fn depends(f: &str, rest: &BTreeSet<&str>, index: &DependencyIndex) -> Result<bool, ConstraintError> {
    let sig = index.signatures.get(f).ok_or_else(|| ConstraintError::UnknownApi(f.to_string()))?;
    if let Some(unknown) = rest.iter().find(|n| !index.contains(n)) {
        return Err(ConstraintError::UnknownApi(unknown.to_string()));
    }
    let rest_without_self;
    let rest = if rest.contains(f) {
        rest_without_self = rest.iter().copied().filter(|n| *n != f).collect::<BTreeSet<_>>();
        &rest_without_self
    } else {
        rest
    };
    let via_params = sig
        .params
        .iter()
        .any(|t| any_in(&index.by_return_type, t, rest) || any_in(&index.by_param_type, t, rest));
    let via_return = sig.ret.as_ref().is_some_and(|r| any_in(&index.by_param_type, r, rest));
    Ok(via_params || via_return)
}

/// Every member depends on the rest of the group. Groups naming unknown APIs
/// are never satisfied.
pub fn sat_explicit(group: &ApiGroup, index: &DependencyIndex) -> bool {
    let all: BTreeSet<&str> = group.iter().collect();
    if all.is_empty() {
        return false;
    }
    group.iter().all(|f| {
        let mut rest = all.clone();
        rest.remove(f);
        depends(f, &rest, index).unwrap_or(false)
    })
}

/// `imply(a, b)`: if `a` is in the group so is `b`. `conflict(a, b)`: not
/// both, in either order.
pub fn sat_implicit(group: &ApiGroup, constraints: &[ImplicitConstraint]) -> bool {
    constraints.iter().all(|c| match c.kind {
        ConstraintKind::Imply => !group.contains(&c.first) || group.contains(&c.second),
        ConstraintKind::Conflict => !(group.contains(&c.first) && group.contains(&c.second)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnumerationOptions {
    pub min_size: usize,
    pub max_size: usize,
    pub cap: Option<u64>,
    pub order_seed: u64,
    /// Apply the type-sharing rule. When off, every subset in the size range
    /// qualifies and the range may start at 0.
    pub explicit: bool,
    /// Apply imply/conflict constraints.
    pub implicit: bool,
    pub loose_pointer_match: bool,
    pub size_limit: usize,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            min_size: 2,
            max_size: DEFAULT_MAX_GROUP_LEN,
            cap: None,
            order_seed: 0,
            explicit: true,
            implicit: true,
            loose_pointer_match: false,
            size_limit: DEFAULT_MAX_GROUP_LEN,
        }
    }
}

impl EnumerationOptions {
    fn check(&self) -> Result<(), ConstraintError> {
        if self.cap == Some(0) {
            return Err(ConstraintError::ZeroCap);
        }
        let bad = if self.explicit {
            self.min_size < 2 || self.min_size > self.max_size || self.max_size > self.size_limit
        } else {
            self.min_size > self.max_size
        };
        if bad {
            return Err(ConstraintError::InvalidRange {
                min: self.min_size,
                max: self.max_size,
                limit: self.size_limit,
            });
        }
        Ok(())
    }
}

/// Row-major symmetric adjacency bitmap over API positions.
#[derive(Debug, Clone)]
struct Adjacency {
    words: usize,
    bits: Vec<u64>,
}

impl Adjacency {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Adjacency { words, bits: vec![0; words * n] }
    }

    fn set(&mut self, a: usize, b: usize) {
        self.bits[a * self.words + b / 64] |= 1 << (b % 64);
        self.bits[b * self.words + a / 64] |= 1 << (a % 64);
    }

    fn get(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.words + b / 64] & (1 << (b % 64)) != 0
    }
}

/// Streams groups in increasing size; within one size, combinations are
/// visited depth-first over a seeded permutation of the sorted API names.
///
/// A partial combination is abandoned as soon as one of its members lacks a
/// neighbor both inside it and among the positions still to come.
#[derive(Debug, Clone)]
pub struct GroupEnumerator {
    order: Vec<String>,
    adj: Adjacency,
    last_neighbor: Vec<Option<usize>>,
    constraints: Vec<(ConstraintKind, usize, usize)>,
    opts: EnumerationOptions,
    size: usize,
    stack: Vec<usize>,
    fresh: bool,
    yielded: u64,
    done: bool,
}

impl GroupEnumerator {
    pub fn new(spec: &LibrarySpec, opts: EnumerationOptions) -> Result<Self, ConstraintError> {
        opts.check()?;
        let index = DependencyIndex::build(spec, opts.loose_pointer_match);
        let mut order: Vec<String> = spec.apis.iter().map(|a| a.name.clone()).collect();
        order.sort();
        order.dedup();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.order_seed));
        let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

        let n = order.len();
        let mut adj = Adjacency::new(n);
        for (i, name) in order.iter().enumerate() {
            for nb in index.neighbors(name)? {
                adj.set(i, pos[nb]);
            }
        }
        let last_neighbor = (0..n).map(|i| (0..n).rev().find(|&j| adj.get(i, j))).collect();
        let constraints = spec
            .implicit
            .iter()
            .filter_map(|c| Some((c.kind, *pos.get(c.first.as_str())?, *pos.get(c.second.as_str())?)))
            .collect();
        let size = opts.min_size;
        Ok(GroupEnumerator {
            order,
            adj,
            last_neighbor,
            constraints,
            opts,
            size,
            stack: Vec::new(),
            fresh: true,
            yielded: 0,
            done: false,
        })
    }

    pub fn yielded(&self) -> u64 {
        self.yielded
    }

    fn has_neighbor_in(&self, member: usize, within: &[usize]) -> bool {
        within.iter().any(|&o| o != member && self.adj.get(member, o))
    }

    /// Every member still lacking a neighbor can find one after `after`.
    fn can_complete(&self, members: &[usize], after: usize) -> bool {
        !self.opts.explicit
            || members.iter().all(|&m| {
                self.has_neighbor_in(m, members) || self.last_neighbor[m].is_some_and(|l| l > after)
            })
    }

    fn accepts(&self, members: &[usize]) -> bool {
        if self.opts.explicit && !members.iter().all(|&m| self.has_neighbor_in(m, members)) {
            return false;
        }
        if self.opts.implicit {
            let has = |p: usize| members.contains(&p);
            for &(kind, a, b) in &self.constraints {
                let ok = match kind {
                    ConstraintKind::Imply => !has(a) || has(b),
                    ConstraintKind::Conflict => !(has(a) && has(b)),
                };
                if !ok {
                    return false;
                }
            }
        }
        true
    }

    /// Moves the stack to the next node of the exact-size DFS. Returns false
    /// when the current size is exhausted.
    fn advance(&mut self) -> bool {
        let n = self.order.len();
        let size = self.size;
        if let Some(&last) = self.stack.last() {
            if self.stack.len() < size && last + 1 + (size - self.stack.len()) <= n && self.can_complete(&self.stack, last) {
                self.stack.push(last + 1);
                return true;
            }
        }
        while let Some(p) = self.stack.pop() {
            let next = p + 1;
            // Remaining slots after `next` must fit.
            if next + (size - self.stack.len() - 1) >= n {
                continue;
            }
            let prefix_ok = !self.opts.explicit
                || self.stack.iter().all(|&m| {
                    self.has_neighbor_in(m, &self.stack) || self.last_neighbor[m].is_some_and(|l| l >= next)
                });
            if !prefix_ok {
                continue;
            }
            self.stack.push(next);
            return true;
        }
        false
    }

    fn next_members(&mut self) -> Option<Vec<usize>> {
        loop {
            if self.done {
                return None;
            }
            if self.size > self.opts.max_size || self.size > self.order.len() {
                self.done = true;
                return None;
            }
            if self.fresh {
                self.fresh = false;
                self.stack.clear();
                if self.size == 0 {
                    self.size += 1;
                    self.fresh = true;
                    if self.accepts(&[]) {
                        return Some(Vec::new());
                    }
                    continue;
                }
                self.stack.push(0);
            } else if !self.advance() {
                self.size += 1;
                self.fresh = true;
                continue;
            }
            if self.stack.len() == self.size && self.accepts(&self.stack) {
                return Some(self.stack.clone());
            }
        }
    }
}

impl Iterator for GroupEnumerator {
    type Item = ApiGroup;

    fn next(&mut self) -> Option<ApiGroup> {
        if self.opts.cap.is_some_and(|cap| self.yielded >= cap) {
            return None;
        }
        let members = self.next_members()?;
        self.yielded += 1;
        Some(ApiGroup::new(members.into_iter().map(|p| self.order[p].clone())))
    }
}

/// Convenience wrapper matching the `solve` command.
pub fn enumerate_groups(
    spec: &LibrarySpec,
    min_size: usize,
    max_size: usize,
    cap: Option<u64>,
    order_seed: u64,
) -> Result<GroupEnumerator, ConstraintError> {
    GroupEnumerator::new(spec, EnumerationOptions { min_size, max_size, cap, order_seed, ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize_type, ApiFunction, Parameter};

    fn api(name: &str, ret: &str, params: &[&str]) -> ApiFunction {
        ApiFunction {
            name: name.into(),
            signature: format!("{ret} {name}({})", params.join(", ")),
            return_type: normalize_type(ret).unwrap(),
            parameters: params
                .iter()
                .enumerate()
                .map(|(i, p)| Parameter { name: format!("arg{i}"), ty: normalize_type(p).unwrap() })
                .collect(),
        }
    }

    fn toy() -> LibrarySpec {
        LibrarySpec {
            library_name: "kv".into(),
            apis: vec![
                api("kv_open", "Handle*", &[]),
                api("kv_close", "void", &["Handle*"]),
                api("kv_put", "int", &["Handle*", "const Key*"]),
                api("kv_get", "int", &["Handle*", "Key*"]),
                api("kv_destroy", "void", &["Handle*"]),
                api("unrelated_math_fn", "double", &["double"]),
            ],
            implicit: vec![],
            source_root: None,
        }
    }

    fn set<'a>(names: &[&'a str]) -> BTreeSet<&'a str> {
        names.iter().copied().collect()
    }

    #[test]
    fn depends_clauses() {
        let idx = DependencyIndex::build(&toy(), false);
        assert!(depends("kv_put", &set(&["kv_open"]), &idx).unwrap());
        assert!(depends("kv_open", &set(&["kv_close"]), &idx).unwrap());
        assert!(depends("kv_put", &set(&["kv_get"]), &idx).unwrap());
        assert!(!depends("kv_open", &set(&[]), &idx).unwrap());
        assert!(!depends("unrelated_math_fn", &set(&["kv_open", "kv_put"]), &idx).unwrap());
        assert_eq!(
            depends("ghost", &set(&["kv_open"]), &idx),
            Err(ConstraintError::UnknownApi("ghost".into()))
        );
    }

    #[test]
    fn void_returns_do_not_link() {
        let spec = LibrarySpec {
            library_name: "v".into(),
            apis: vec![api("a", "void", &["int"]), api("b", "void", &["long"])],
            implicit: vec![],
            source_root: None,
        };
        let idx = DependencyIndex::build(&spec, false);
        assert!(!sat_explicit(&ApiGroup::new(["a", "b"]), &idx));
    }

    #[test]
    fn explicit_examples() {
        let idx = DependencyIndex::build(&toy(), false);
        assert!(sat_explicit(&ApiGroup::new(["kv_open", "kv_put"]), &idx));
        assert!(!sat_explicit(&ApiGroup::new(["kv_put", "unrelated_math_fn"]), &idx));
        assert!(!sat_explicit(&ApiGroup::new(["kv_open"]), &idx));
        assert!(!sat_explicit(&ApiGroup::new(Vec::<String>::new()), &idx));
    }

    #[test]
    fn implicit_examples() {
        let imply = [ImplicitConstraint::imply("kv_open", "kv_close")];
        assert!(!sat_implicit(&ApiGroup::new(["kv_open", "kv_put"]), &imply));
        assert!(sat_implicit(&ApiGroup::new(["kv_put", "kv_get"]), &imply));
        assert!(sat_implicit(&ApiGroup::new(["kv_open", "kv_close"]), &imply));
        let conflict = [ImplicitConstraint::conflict("kv_close", "kv_destroy")];
        assert!(!sat_implicit(&ApiGroup::new(["kv_close", "kv_destroy"]), &conflict));
        let reversed = [ImplicitConstraint::conflict("kv_destroy", "kv_close")];
        assert!(!sat_implicit(&ApiGroup::new(["kv_close", "kv_destroy"]), &reversed));
    }

    #[test]
    fn cap_bounds_the_stream() {
        let groups: Vec<_> = enumerate_groups(&toy(), 2, 5, Some(3), 0).unwrap().collect();
        assert_eq!(groups.len(), 3);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(matches!(enumerate_groups(&toy(), 1, 5, None, 0), Err(ConstraintError::InvalidRange { .. })));
        assert!(matches!(enumerate_groups(&toy(), 3, 2, None, 0), Err(ConstraintError::InvalidRange { .. })));
        assert!(matches!(enumerate_groups(&toy(), 2, 6, None, 0), Err(ConstraintError::InvalidRange { .. })));
        assert_eq!(enumerate_groups(&toy(), 2, 5, Some(0), 0).err(), Some(ConstraintError::ZeroCap));
    }

    #[test]
    fn sizes_are_nondecreasing_and_unique() {
        let groups: Vec<_> = enumerate_groups(&toy(), 2, 5, None, 9).unwrap().collect();
        assert!(groups.windows(2).all(|w| w[0].size() <= w[1].size()));
        let unique: BTreeSet<_> = groups.iter().collect();
        assert_eq!(unique.len(), groups.len());
        assert!(groups.iter().all(|g| !g.contains("unrelated_math_fn")));
    }

    #[test]
    fn seed_changes_order_not_content() {
        let a: Vec<_> = enumerate_groups(&toy(), 2, 5, None, 1).unwrap().collect();
        let b: Vec<_> = enumerate_groups(&toy(), 2, 5, None, 2).unwrap().collect();
        let a2: Vec<_> = enumerate_groups(&toy(), 2, 5, None, 1).unwrap().collect();
        assert_eq!(a, a2);
        assert_eq!(a.iter().collect::<BTreeSet<_>>(), b.iter().collect::<BTreeSet<_>>());
    }

    #[test]
    fn loose_pointer_match_links_value_and_pointer() {
        let spec = LibrarySpec {
            library_name: "p".into(),
            apis: vec![api("make", "Obj", &[]), api("use_ptr", "int", &["Obj*"])],
            implicit: vec![],
            source_root: None,
        };
        assert!(!sat_explicit(&ApiGroup::new(["make", "use_ptr"]), &DependencyIndex::build(&spec, false)));
        assert!(sat_explicit(&ApiGroup::new(["make", "use_ptr"]), &DependencyIndex::build(&spec, true)));
    }
}
