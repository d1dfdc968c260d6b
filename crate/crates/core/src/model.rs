//! Library API model: types, functions, implicit constraints and groups.
//!
//! Everything here is immutable once loaded. The JSON layout of
//! [`LibrarySpec`] is fixed; raw type spellings are stored on disk and
//! normalized on load.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on group size.
pub const DEFAULT_MAX_GROUP_LEN: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed type `{0}`")]
    MalformedType(String),
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid library spec: {}", .0.join("; "))]
    Validation(Vec<String>),
}

/// A canonicalized C/C++ type: cv-qualifiers and reference sigils removed,
/// pointer levels counted separately from the base spelling.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeName {
    pub base: String,
    pub pointer_depth: u32,
}

impl TypeName {
    pub fn void() -> Self {
        TypeName { base: "void".to_string(), pointer_depth: 0 }
    }

    /// The bare `void` type. It never participates in type matching.
    pub fn is_void(&self) -> bool {
        self.pointer_depth == 0 && self.base == "void"
    }

    /// Type equality used by the constraint rules. With `loose_pointer_match`
    /// the pointer depth is ignored.
    pub fn matches(&self, other: &TypeName, loose_pointer_match: bool) -> bool {
        if self.is_void() || other.is_void() {
            return false;
        }
        self.base == other.base && (loose_pointer_match || self.pointer_depth == other.pointer_depth)
    }
}

impl fmt::Display for TypeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base)?;
        for _ in 0..self.pointer_depth {
            f.write_str("*")?;
        }
        Ok(())
    }
}

/// Canonicalizes a raw type spelling.
///
/// `const Handle *` becomes `Handle` at pointer depth 1; `int &&` becomes
/// `int` at depth 0.
pub fn normalize_type(raw: &str) -> Result<TypeName, ModelError> {
    let mut pointer_depth = 0u32;
    let mut cleaned = String::with_capacity(raw.len());
    for ch in raw.chars() {
        match ch {
            '*' => {
                pointer_depth += 1;
                cleaned.push(' ');
            }
            '&' => cleaned.push(' '),
            c => cleaned.push(c),
        }
    }
    let base = cleaned
        .split_whitespace()
        .filter(|tok| !matches!(*tok, "const" | "volatile"))
        .collect::<Vec<_>>()
        .join(" ");
    if base.is_empty() {
        return Err(ModelError::MalformedType(raw.to_string()));
    }
    Ok(TypeName { base, pointer_depth })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parameter {
    pub name: String,
    pub ty: TypeName,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiFunction {
    pub name: String,
    pub signature: String,
    pub return_type: TypeName,
    pub parameters: Vec<Parameter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Imply,
    Conflict,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintKind::Imply => f.write_str("imply"),
            ConstraintKind::Conflict => f.write_str("conflict"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImplicitConstraint {
    pub kind: ConstraintKind,
    pub first: String,
    pub second: String,
}

impl ImplicitConstraint {
    pub fn imply(first: &str, second: &str) -> Self {
        ImplicitConstraint { kind: ConstraintKind::Imply, first: first.into(), second: second.into() }
    }

    pub fn conflict(first: &str, second: &str) -> Self {
        ImplicitConstraint { kind: ConstraintKind::Conflict, first: first.into(), second: second.into() }
    }
}

impl fmt::Display for ImplicitConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{})", self.kind, self.first, self.second)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibrarySpec {
    pub library_name: String,
    pub apis: Vec<ApiFunction>,
    pub implicit: Vec<ImplicitConstraint>,
    pub source_root: Option<PathBuf>,
}

impl LibrarySpec {
    pub fn api(&self, name: &str) -> Option<&ApiFunction> {
        self.apis.iter().find(|a| a.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.api(name).is_some()
    }

    pub fn api_names(&self) -> impl Iterator<Item = &str> {
        self.apis.iter().map(|a| a.name.as_str())
    }
}

/// An unordered set of API names meant to be exercised by one driver.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ApiGroup {
    pub members: BTreeSet<String>,
}

impl ApiGroup {
    pub fn new<I, S>(members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ApiGroup { members: members.into_iter().map(Into::into).collect() }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.members.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(String::as_str)
    }

    /// Checks the group invariants against a spec: `2 <= size <= max_len`
    /// and every member is an API of the spec.
    pub fn violations(&self, spec: &LibrarySpec, max_len: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.size() < 2 || self.size() > max_len {
            out.push(format!("group size {} outside 2..={max_len}", self.size()));
        }
        for m in &self.members {
            if !spec.contains(m) {
                out.push(format!("unknown api in group: {m}"));
            }
        }
        out
    }
}

impl fmt::Display for ApiGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.members.iter().cloned().collect::<Vec<_>>().join(", "))
    }
}

// On-disk layout.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    library: String,
    apis: Vec<RawApi>,
    #[serde(default)]
    implicit: Vec<ImplicitConstraint>,
    #[serde(default)]
    source_root: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawApi {
    name: String,
    signature: String,
    return_type: String,
    #[serde(default)]
    params: Vec<RawParam>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParam {
    #[serde(default)]
    name: String,
    #[serde(rename = "type")]
    ty: String,
}

/// Parses and validates a library spec document.
pub fn load_library_spec(text: &str) -> Result<LibrarySpec, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawSpec = serde_path_to_error::deserialize(de).map_err(|e| ModelError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let mut apis = Vec::with_capacity(raw.apis.len());
    for (i, api) in raw.apis.into_iter().enumerate() {
        let return_type = normalize_type(&api.return_type).map_err(|e| ModelError::Schema {
            path: format!("apis[{i}].return_type"),
            message: e.to_string(),
        })?;
        let mut parameters = Vec::with_capacity(api.params.len());
        for (j, p) in api.params.into_iter().enumerate() {
            let ty = normalize_type(&p.ty).map_err(|e| ModelError::Schema {
                path: format!("apis[{i}].params[{j}].type"),
                message: e.to_string(),
            })?;
            let name = if p.name.trim().is_empty() { format!("arg{j}") } else { p.name };
            parameters.push(Parameter { name, ty });
        }
        apis.push(ApiFunction { name: api.name, signature: api.signature, return_type, parameters });
    }

    let spec = LibrarySpec {
        library_name: raw.library,
        apis,
        implicit: raw.implicit,
        source_root: raw.source_root.map(PathBuf::from),
    };
    let violations = validate_spec(&spec);
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(ModelError::Validation(violations))
    }
}

/// Serializes a spec into the on-disk layout. Types are written in their
/// canonical spelling, so `load_library_spec(&save_library_spec(s)) == s`.
pub fn save_library_spec(spec: &LibrarySpec) -> String {
    let raw = RawSpec {
        library: spec.library_name.clone(),
        apis: spec
            .apis
            .iter()
            .map(|a| RawApi {
                name: a.name.clone(),
                signature: a.signature.clone(),
                return_type: a.return_type.to_string(),
                params: a
                    .parameters
                    .iter()
                    .map(|p| RawParam { name: p.name.clone(), ty: p.ty.to_string() })
                    .collect(),
            })
            .collect(),
        implicit: spec.implicit.clone(),
        source_root: spec.source_root.as_ref().map(|p| p.to_string_lossy().into_owned()),
    };
    serde_json::to_string_pretty(&raw).expect("spec serialization is infallible")
}

/// Lists every invariant violation of `spec`. Empty means well-formed.
pub fn validate_spec(spec: &LibrarySpec) -> Vec<String> {
    let mut out = Vec::new();
    if spec.library_name.trim().is_empty() {
        out.push("empty library name".to_string());
    }
    let mut seen = HashSet::new();
    for api in &spec.apis {
        if api.name.is_empty() {
            out.push(format!("empty api name (signature `{}`)", api.signature));
            continue;
        }
        if !seen.insert(api.name.as_str()) {
            out.push(format!("duplicate api: {}", api.name));
        }
        let mut params = HashSet::new();
        for p in &api.parameters {
            if !params.insert(p.name.as_str()) {
                out.push(format!("duplicate parameter `{}` in api {}", p.name, api.name));
            }
        }
        for ty in std::iter::once(&api.return_type).chain(api.parameters.iter().map(|p| &p.ty)) {
            if ty.base.is_empty() || ty.base.trim() != ty.base {
                out.push(format!("malformed type `{ty}` in api {}", api.name));
            }
        }
    }
    for c in &spec.implicit {
        if c.first == c.second {
            out.push(format!("self-referential constraint: {c}"));
        }
        for name in [&c.first, &c.second] {
            if !seen.contains(name.as_str()) {
                out.push(format!("unknown api in constraint {c}: {name}"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const KV: &str = r#"{
        "library": "kv",
        "apis": [
            {"name": "kv_open", "signature": "Handle *kv_open(void)", "return_type": "Handle *", "params": []},
            {"name": "kv_close", "signature": "void kv_close(Handle *h)", "return_type": "void",
             "params": [{"name": "h", "type": "Handle *"}]},
            {"name": "kv_put", "signature": "int kv_put(Handle *, const Key *)", "return_type": "int",
             "params": [{"name": "", "type": "Handle *"}, {"name": "", "type": "const Key *"}]},
            {"name": "kv_get", "signature": "int kv_get(const Handle *h, Key *k)", "return_type": "int",
             "params": [{"name": "h", "type": "const Handle*"}, {"name": "k", "type": "Key*"}]}
        ],
        "implicit": [{"kind": "imply", "first": "kv_open", "second": "kv_close"}],
        "source_root": null
    }"#;

    #[test]
    fn normalizes_cv_and_pointers() {
        assert_eq!(normalize_type("const Handle *").unwrap(), TypeName { base: "Handle".into(), pointer_depth: 1 });
        assert_eq!(normalize_type("size_t").unwrap(), TypeName { base: "size_t".into(), pointer_depth: 0 });
        assert_eq!(
            normalize_type("snappy::Source*").unwrap(),
            TypeName { base: "snappy::Source".into(), pointer_depth: 1 }
        );
        assert_eq!(
            normalize_type("const char * const *").unwrap(),
            TypeName { base: "char".into(), pointer_depth: 2 }
        );
        assert_eq!(normalize_type("std::string &&").unwrap().base, "std::string");
        assert_eq!(normalize_type("unsigned    long\tint").unwrap().base, "unsigned long int");
    }

    #[test]
    fn empty_type_is_malformed() {
        assert!(matches!(normalize_type(""), Err(ModelError::MalformedType(_))));
        assert!(matches!(normalize_type("  const *"), Err(ModelError::MalformedType(_))));
    }

    #[test]
    fn void_never_matches() {
        let v = TypeName::void();
        assert!(!v.matches(&v, false));
        assert!(!v.matches(&v, true));
        let vp = normalize_type("void *").unwrap();
        assert!(vp.matches(&vp, false));
    }

    #[test]
    fn loose_pointer_match_ignores_depth() {
        let a = normalize_type("Handle*").unwrap();
        let b = normalize_type("Handle").unwrap();
        assert!(!a.matches(&b, false));
        assert!(a.matches(&b, true));
    }

    #[test]
    fn loads_kv_spec() {
        let spec = load_library_spec(KV).unwrap();
        assert_eq!(spec.apis.len(), 4);
        assert_eq!(spec.implicit.len(), 1);
        assert_eq!(spec.implicit[0].kind, ConstraintKind::Imply);
        let put = spec.api("kv_put").unwrap();
        assert_eq!(put.parameters[0].name, "arg0");
        assert_eq!(put.parameters[1].name, "arg1");
        assert_eq!(put.parameters[1].ty, TypeName { base: "Key".into(), pointer_depth: 1 });
        assert_eq!(spec.api("kv_close").unwrap().return_type, TypeName::void());
    }

    #[test]
    fn minimal_document() {
        let spec = load_library_spec(
            r#"{"library":"m","apis":[{"name":"f","signature":"int f(void)","return_type":"int","params":[]}],"implicit":[],"source_root":null}"#,
        )
        .unwrap();
        assert_eq!(spec.apis.len(), 1);
        assert!(spec.implicit.is_empty());
    }

    #[test]
    fn dangling_constraint_names_the_api() {
        let text = KV.replace(r#""second": "kv_close""#, r#""second": "ghost""#);
        match load_library_spec(&text) {
            Err(ModelError::Validation(v)) => assert!(v.iter().any(|s| s.contains("ghost")), "{v:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_a_path() {
        let text = KV.replace(r#""return_type": "int","#, r#""return_type": 3,"#);
        match load_library_spec(&text) {
            Err(ModelError::Schema { path, .. }) => assert_eq!(path, "apis[2].return_type"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn validate_reports_duplicates_and_self_constraints() {
        let mut spec = load_library_spec(KV).unwrap();
        assert!(validate_spec(&spec).is_empty());
        spec.apis.push(spec.apis[0].clone());
        assert_eq!(validate_spec(&spec), vec!["duplicate api: kv_open".to_string()]);
        spec.apis.pop();
        spec.implicit.push(ImplicitConstraint::conflict("kv_get", "kv_get"));
        assert_eq!(validate_spec(&spec).len(), 1);
    }

    #[test]
    fn save_load_round_trip() {
        let spec = load_library_spec(KV).unwrap();
        let again = load_library_spec(&save_library_spec(&spec)).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn group_violations() {
        let spec = load_library_spec(KV).unwrap();
        assert!(ApiGroup::new(["kv_open", "kv_close"]).violations(&spec, 5).is_empty());
        assert_eq!(ApiGroup::new(["kv_open"]).violations(&spec, 5).len(), 1);
        assert_eq!(ApiGroup::new(["kv_open", "nope"]).violations(&spec, 5).len(), 1);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn raw_type() -> impl Strategy<Value = String> {
            (
                prop::bool::ANY,
                prop::sample::select(vec!["int", "Handle", "snappy::Source", "unsigned char", "size_t"]),
                0usize..3,
                prop::bool::ANY,
            )
                .prop_map(|(c, base, ptr, r)| {
                    let mut s = String::new();
                    if c {
                        s.push_str("const ");
                    }
                    s.push_str(base);
                    s.push(' ');
                    s.push_str(&"*".repeat(ptr));
                    if r {
                        s.push('&');
                    }
                    s
                })
        }

        proptest! {
            #[test]
            fn normalize_is_idempotent(raw in raw_type()) {
                let once = normalize_type(&raw).unwrap();
                let twice = normalize_type(&once.to_string()).unwrap();
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn round_trip_random_specs(
                apis in prop::collection::btree_map("[a-z]{1,6}", prop::collection::vec(raw_type(), 0..4), 1..6),
                ret in raw_type(),
            ) {
                let apis: Vec<ApiFunction> = apis.into_iter().map(|(name, params)| ApiFunction {
                    signature: format!("{ret} {name}(...)"),
                    return_type: normalize_type(&ret).unwrap(),
                    parameters: params.iter().enumerate().map(|(i, p)| Parameter {
                        name: format!("p{i}"),
                        ty: normalize_type(p).unwrap(),
                    }).collect(),
                    name,
                }).collect();
                let implicit = if apis.len() >= 2 {
                    vec![ImplicitConstraint::imply(&apis[0].name, &apis[1].name)]
                } else { vec![] };
                let spec = LibrarySpec { library_name: "p".into(), apis, implicit, source_root: Some("/tmp/src".into()) };
                prop_assert!(validate_spec(&spec).is_empty());
                prop_assert_eq!(load_library_spec(&save_library_spec(&spec)).unwrap(), spec);
            }
        }
    }
}
