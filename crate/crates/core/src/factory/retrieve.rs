//! Pulls identifiers out of compiler errors and looks up their definitions
//! in the library sources, to give repair prompts something concrete.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

pub const DEFAULT_MAX_SNIPPETS: usize = 8;

/// Identifier-capturing patterns, applied in this order to every line.
pub const RETRIEVER_PATTERNS: [&str; 7] = [
    r"error: no matching function for call to '([^']*)'",
    r"error: use of undeclared identifier '([^']*)'",
    r"error: use of undeclared identifier ([^']*); did you mean '([^']*)'\?",
    r"error: assigning to '([^']*)'(?: \(aka '[^']*'\))? from incompatible type '[^']*'(?: \(aka '[^']*'\))?",
    r"error: unknown type name '([^']*)'",
    r"error: no member named '[^']*' in '([^']*)'",
    r"error: field designator '[^']*' does not refer to any field in type '([^']*)'(?: \(aka '[^']*'\))?",
];

const SOURCE_EXTENSIONS: [&str; 5] = ["h", "hpp", "c", "cpp", "cc"];
const MAX_SNIPPET_LINES: usize = 200;

fn compiled() -> &'static [Regex] {
    static CELL: OnceLock<Vec<Regex>> = OnceLock::new();
    CELL.get_or_init(|| RETRIEVER_PATTERNS.iter().map(|p| Regex::new(p).expect("valid pattern")).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub identifier: String,
    /// Path relative to the source root.
    pub file: PathBuf,
    /// 1-based line where the definition starts.
    pub line: usize,
    pub text: String,
}

/// Every captured identifier, in line order then pattern order, without
/// duplicates.
pub fn extract_identifiers(diagnostics: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in diagnostics.lines() {
        for re in compiled() {
            for caps in re.captures_iter(line) {
                for m in caps.iter().skip(1).flatten() {
                    let s = m.as_str().to_string();
                    if !s.is_empty() && !out.contains(&s) {
                        out.push(s);
                    }
                }
            }
        }
    }
    out
}

/// Reduces a captured type or call spelling to the bare name to search for:
/// `struct KvHandle *` becomes `KvHandle`, `snappy::Source` becomes `Source`.
fn search_name(captured: &str) -> Option<String> {
    let cleaned: String = captured.chars().map(|c| if matches!(c, '*' | '&') { ' ' } else { c }).collect();
    let words: Vec<&str> = cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "struct" | "class" | "union" | "enum" | "const" | "volatile"))
        .collect();
    let last = words.last()?;
    let base = last.split('<').next().unwrap_or(last);
    let name = base.rsplit("::").next().unwrap_or(base);
    let valid = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    valid.then(|| name.to_string())
}

struct SourceFile {
    rel: PathBuf,
    lines: Vec<String>,
}

fn load_sources(root: &Path) -> Vec<SourceFile> {
    let mut files: Vec<SourceFile> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter(|e| {
            e.path().extension().and_then(|x| x.to_str()).is_some_and(|x| SOURCE_EXTENSIONS.contains(&x))
        })
        .filter_map(|e| {
            let text = std::fs::read_to_string(e.path()).ok()?;
            let rel = e.path().strip_prefix(root).unwrap_or(e.path()).to_path_buf();
            Some(SourceFile { rel, lines: text.lines().map(str::to_string).collect() })
        })
        .collect();
    files.sort_by(|a, b| a.rel.cmp(&b.rel));
    files
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Strength {
    Strong,
    Weak,
}

struct DefinitionMatchers {
    aggregate: Regex,
    typedef_close: Regex,
    define: Regex,
    constant: Regex,
    function: Regex,
    alias: Regex,
}

impl DefinitionMatchers {
    fn new(name: &str) -> Self {
        let n = regex::escape(name);
        let re = |p: String| Regex::new(&p).expect("valid definition pattern");
        DefinitionMatchers {
            aggregate: re(format!(r"^\s*(typedef\s+)?(struct|class|union|enum)\s+{n}\b[^;]*$")),
            typedef_close: re(format!(r"^\s*\}}\s*{n}\s*;")),
            define: re(format!(r"^\s*#\s*define\s+{n}\b")),
            constant: re(format!(r"(\bconst\b.*\b{n}\s*=)|(^\s*{n}\s*=)")),
            function: re(format!(r"^[A-Za-z_][^;=]*\b{n}\s*\(")),
            alias: re(format!(r"^\s*typedef\b.*\b{n}\s*;")),
        }
    }
}

fn statement_from(lines: &[String], start: usize) -> (usize, String) {
    let mut depth = 0i32;
    let mut seen_brace = false;
    let mut end = start;
    for (i, line) in lines.iter().enumerate().skip(start).take(MAX_SNIPPET_LINES) {
        end = i;
        for ch in line.chars() {
            match ch {
                '{' => {
                    depth += 1;
                    seen_brace = true;
                }
                '}' => depth -= 1,
                _ => {}
            }
        }
        if seen_brace && depth <= 0 {
            break;
        }
        if !seen_brace && line.contains(';') {
            break;
        }
        if line.trim_start().starts_with('#') && !line.trim_end().ends_with('\\') {
            break;
        }
    }
    (start, lines[start..=end].join("\n"))
}

/// Walks back from a `} Name;` line to the line that opened the block.
fn block_start(lines: &[String], close: usize) -> usize {
    let mut depth = 0i32;
    for i in (0..=close).rev() {
        for ch in lines[i].chars().rev() {
            match ch {
                '}' => depth += 1,
                '{' => depth -= 1,
                _ => {}
            }
        }
        if depth <= 0 {
            return i;
        }
    }
    close
}

fn find_definition(name: &str, files: &[SourceFile]) -> Option<(PathBuf, usize, String)> {
    let m = DefinitionMatchers::new(name);
    for pass in [Strength::Strong, Strength::Weak] {
        for file in files {
            for (i, line) in file.lines.iter().enumerate() {
                let hit = match pass {
                    Strength::Strong => {
                        if m.typedef_close.is_match(line) {
                            let s = block_start(&file.lines, i);
                            let text = file.lines[s..=i].join("\n");
                            return Some((file.rel.clone(), s + 1, text));
                        }
                        if m.define.is_match(line) || m.constant.is_match(line) || m.aggregate.is_match(line) {
                            Some(i)
                        } else if m.function.is_match(line) {
                            let (_, text) = statement_from(&file.lines, i);
                            // A body, not a prototype.
                            let brace = text.find('{');
                            let semi = text.find(';');
                            match (brace, semi) {
                                (Some(b), Some(s)) if b < s => Some(i),
                                (Some(_), None) => Some(i),
                                _ => None,
                            }
                        } else {
                            None
                        }
                    }
                    Strength::Weak => (m.function.is_match(line) || m.alias.is_match(line)).then_some(i),
                };
                if let Some(start) = hit {
                    let (s, text) = statement_from(&file.lines, start);
                    return Some((file.rel.clone(), s + 1, text));
                }
            }
        }
    }
    None
}

/// Finds definitions for the identifiers named in `diagnostics`. Matching is
/// exact on the bare name; misspelled identifiers yield nothing.
pub fn retrieve_context(diagnostics: &str, source_root: Option<&Path>, max_snippets: usize) -> Vec<Snippet> {
    let Some(root) = source_root else { return Vec::new() };
    if !root.is_dir() {
        return Vec::new();
    }
    let identifiers = extract_identifiers(diagnostics);
    if identifiers.is_empty() {
        return Vec::new();
    }
    let files = load_sources(root);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for ident in identifiers {
        if out.len() >= max_snippets {
            break;
        }
        let Some(name) = search_name(&ident) else { continue };
        if let Some((file, line, text)) = find_definition(&name, &files) {
            if seen.insert((file.clone(), line)) {
                out.push(Snippet { identifier: name, file, line, text });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_captures() {
        let cases: [(&str, &[&str]); 8] = [
            ("kv.c:3:5: error: no matching function for call to 'kv_open'", &["kv_open"]),
            ("kv.c:4:5: error: use of undeclared identifier 'kv_opn'", &["kv_opn"]),
            ("kv.c:4:5: error: use of undeclared identifier kv_opn; did you mean 'kv_open'?", &["kv_opn", "kv_open"]),
            (
                "kv.c:7:9: error: assigning to 'KvHandle *' (aka 'struct kv_handle *') from incompatible type 'int'",
                &["KvHandle *"],
            ),
            ("kv.c:2:1: error: unknown type name 'KvCursor'", &["KvCursor"]),
            ("kv.c:9:8: error: no member named 'foo' in 'KvHandle'", &["KvHandle"]),
            (
                "kv.c:5:20: error: field designator 'size' does not refer to any field in type 'KvOptions' (aka 'struct kv_options')",
                &["KvOptions"],
            ),
            ("kv.c:1:1: error: expected ')'", &[]),
        ];
        for (line, want) in cases {
            let got = extract_identifiers(line);
            assert_eq!(got, want.iter().map(|s| s.to_string()).collect::<Vec<_>>(), "{line}");
        }
    }

    #[test]
    fn search_names() {
        assert_eq!(search_name("struct KvHandle *").as_deref(), Some("KvHandle"));
        assert_eq!(search_name("snappy::Source").as_deref(), Some("Source"));
        assert_eq!(search_name("std::vector<int>").as_deref(), Some("vector"));
        assert_eq!(search_name("  ").as_deref(), None);
    }

    #[test]
    fn no_root_means_nothing() {
        assert!(retrieve_context("error: unknown type name 'X'", None, 8).is_empty());
        assert!(retrieve_context("error: unknown type name 'X'", Some(Path::new("/nonexistent/dir")), 8).is_empty());
    }
}
