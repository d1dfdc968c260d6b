//! Parsing of imply/conflict lines returned by constraint analysis.

use std::sync::OnceLock;

use regex::Regex;

use crate::model::{ImplicitConstraint, LibrarySpec};

fn line_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:[-*]\s*|\d+[.)]\s*)?(imply|conflict)\s*\(\s*([A-Za-z_~][\w:~]*)\s*,\s*([A-Za-z_~][\w:~]*)\s*\)\s*[.;,]?$",
        )
        .expect("valid constraint line pattern")
    })
}

/// Splits model output into accepted constraints and rejected lines. Blank
/// lines are ignored; anything else that is not a well-formed constraint over
/// two distinct spec functions is rejected. Duplicates are kept once.
pub fn parse_implicit_constraints(text: &str, spec: &LibrarySpec) -> (Vec<ImplicitConstraint>, Vec<String>) {
    let mut accepted: Vec<ImplicitConstraint> = Vec::new();
    let mut rejected = Vec::new();
    for raw in text.lines() {
        let cleaned = raw.replace('`', "");
        let line = cleaned.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line_pattern().captures(line).and_then(|c| {
            let (a, b) = (&c[2], &c[3]);
            if a == b || !spec.contains(a) || !spec.contains(b) {
                return None;
            }
            Some(if &c[1] == "imply" { ImplicitConstraint::imply(a, b) } else { ImplicitConstraint::conflict(a, b) })
        });
        match parsed {
            Some(c) => {
                if !accepted.contains(&c) {
                    accepted.push(c);
                }
            }
            None => rejected.push(raw.to_string()),
        }
    }
    (accepted, rejected)
}

/// Adds constraints not already present (conflicts compared in either order).
pub fn merge_constraints(spec: &mut LibrarySpec, extra: &[ImplicitConstraint]) -> usize {
    use crate::model::ConstraintKind;
    let mut added = 0;
    for c in extra {
        let dup = spec.implicit.iter().any(|e| {
            e == c
                || (c.kind == ConstraintKind::Conflict
                    && e.kind == ConstraintKind::Conflict
                    && e.first == c.second
                    && e.second == c.first)
        });
        if !dup {
            spec.implicit.push(c.clone());
            added += 1;
        }
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize_type, ApiFunction};

    fn spec() -> LibrarySpec {
        let api = |n: &str| ApiFunction {
            name: n.into(),
            signature: format!("void {n}(void)"),
            return_type: normalize_type("void").unwrap(),
            parameters: vec![],
        };
        LibrarySpec {
            library_name: "kv".into(),
            apis: vec![api("kv_open"), api("kv_close"), api("kv_destroy")],
            implicit: vec![],
            source_root: None,
        }
    }

    #[test]
    fn accepts_and_rejects() {
        let out = "imply(kv_open, kv_close)\n\
                   conflict(kv_close, NOT_A_FUNCTION)\n\
                   - `conflict(kv_close,kv_destroy)`\n\
                   \n\
                   These functions should be used carefully.\n\
                   imply(kv_open, kv_open)\n\
                   imply(kv_open, kv_close)";
        let (cs, rej) = parse_implicit_constraints(out, &spec());
        assert_eq!(cs, vec![ImplicitConstraint::imply("kv_open", "kv_close"), ImplicitConstraint::conflict("kv_close", "kv_destroy")]);
        assert_eq!(rej.len(), 3);
        assert!(rej[0].contains("NOT_A_FUNCTION"));
    }

    #[test]
    fn prose_is_all_rejected() {
        let text = "The library opens handles with kv_open and\ncloses them with kv_close, imply(x).";
        let (cs, rej) = parse_implicit_constraints(text, &spec());
        assert!(cs.is_empty());
        assert_eq!(rej.len(), 2);
    }

    #[test]
    fn merge_skips_duplicates() {
        let mut s = spec();
        s.implicit.push(ImplicitConstraint::conflict("kv_close", "kv_destroy"));
        let n = merge_constraints(
            &mut s,
            &[ImplicitConstraint::conflict("kv_destroy", "kv_close"), ImplicitConstraint::imply("kv_open", "kv_close")],
        );
        assert_eq!(n, 1);
        assert_eq!(s.implicit.len(), 2);
    }
}
