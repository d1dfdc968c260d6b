//! Prompt templates for driver generation, driver repair and constraint
//! analysis.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ApiGroup, LibrarySpec};

use super::retrieve::Snippet;
use super::{DriverLanguage, DriverSource};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("group is empty")]
    EmptyGroup,
    #[error("unknown api in group: {0}")]
    UnknownApi(String),
    #[error("header text is empty: {0}")]
    EmptyHeader(String),
    #[error("no header given")]
    NoHeaders,
    #[error("diagnostics are empty")]
    EmptyDiagnostics,
    #[error("cannot read template {path}: {message}")]
    Template { path: String, message: String },
}

pub const DEFAULT_HINTS: [&str; 9] = [
    "Use the exact entry point signature required by the fuzzing engine.",
    "Derive every input value from the fuzz data buffer; do not read other input.",
    "Check the return value of every API call and bail out cleanly on failure.",
    "Release every resource you acquire (close, free, destroy) before returning.",
    "Do not write to the file system.",
    "Do not write loops whose bound does not come from the input size.",
    "When one API requires another (for example open before close), call them in that order.",
    "Check the remaining input length before consuming bytes and cast them with explicit sizes.",
    "Keep no global state between invocations of the entry point.",
];

/// Default budget, in characters, for compiler output quoted in a repair
/// prompt.
pub const DEFAULT_DIAGNOSTICS_BUDGET: usize = 4_000;

const GENERATION_TEMPLATE: &str = "\
### Instruction
You are writing a fuzz driver for the {project} library. Write a complete {language} fuzz driver whose entry point is {entry}. \
The driver must call every API listed below and pass them values derived from the fuzz input. \
Reply with the driver source only, inside one code block.

### Given API
Project: {project}
Group: {group}
{signature}

### Hint
{hints}
";

const REPAIR_TEMPLATE: &str = "\
### Instruction
The fuzz driver below for the {project} library was rejected. Fix it so that it compiles, calls every API of the group \
and does not crash on its own. Reply with the full corrected driver only, inside one code block.

Project: {project}
Group: {group}

### Error
{error}
{target}
### Driver
{driver}
";

const CONSTRAINT_TEMPLATE: &str = "\
### Instruction
Read the header files of the {project} library below and list usage constraints between its functions. \
Write one constraint per line and nothing else, in one of these forms:
imply(a, b)      a driver that calls a must also call b (for example an open function and its close function)
conflict(a, b)   a and b must never be called in the same driver (for example two functions that both free the same object)
Use only names of functions declared in the headers.

### Header
{header}
";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub generation: String,
    pub repair: String,
    pub constraint: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            generation: GENERATION_TEMPLATE.to_string(),
            repair: REPAIR_TEMPLATE.to_string(),
            constraint: CONSTRAINT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads `generation.txt`, `repair.txt` and `constraint.txt` from `dir`;
    /// missing files keep the built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = PromptTemplates::default();
        for (file, slot) in [
            ("generation.txt", &mut t.generation),
            ("repair.txt", &mut t.repair),
            ("constraint.txt", &mut t.constraint),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|e| PromptError::Template {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            }
        }
        Ok(t)
    }
}

/// Single-pass placeholder substitution, so inserted text is never rescanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find(|(k, _)| {
            tail.len() > k.len() + 1 && tail[1..].starts_with(k) && tail[1 + k.len()..].starts_with('}')
        });
        match hit {
            Some((k, v)) => {
                out.push_str(v);
                rest = &tail[k.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn group_line(group: &ApiGroup) -> String {
    group.iter().collect::<Vec<_>>().join(", ")
}

fn language_words(lang: DriverLanguage) -> (&'static str, &'static str) {
    match lang {
        DriverLanguage::C => ("C", "`int LLVMFuzzerTestOneInput(const uint8_t *data, size_t size)`"),
        DriverLanguage::Cpp => ("C++", "`extern \"C\" int LLVMFuzzerTestOneInput(const uint8_t *data, size_t size)`"),
        DriverLanguage::Toy => ("call-script", "a script with one `call <api> [args]` line per invocation, where `$input` names the fuzz data"),
    }
}

pub fn numbered_hints<S: AsRef<str>>(hints: &[S]) -> String {
    hints.iter().enumerate().map(|(i, h)| format!("{}. {}", i + 1, h.as_ref())).collect::<Vec<_>>().join("\n")
}

pub fn build_generation_prompt<S: AsRef<str>>(
    spec: &LibrarySpec,
    group: &ApiGroup,
    hints: &[S],
    language: DriverLanguage,
    templates: &PromptTemplates,
) -> Result<String, PromptError> {
    if group.size() == 0 {
        return Err(PromptError::EmptyGroup);
    }
    let mut sigs = Vec::new();
    for name in group.iter() {
        let api = spec.api(name).ok_or_else(|| PromptError::UnknownApi(name.to_string()))?;
        sigs.push(format!("- {}", api.signature));
    }
    let (lang, entry) = language_words(language);
    Ok(fill(
        &templates.generation,
        &[
            ("project", &spec.library_name),
            ("group", &group_line(group)),
            ("signature", &sigs.join("\n")),
            ("hints", &numbered_hints(hints)),
            ("language", lang),
            ("entry", entry),
        ],
    ))
}

/// Keeps the first `budget` characters and notes how many were dropped.
pub fn truncate_diagnostics(text: &str, budget: usize) -> String {
    let total = text.chars().count();
    if total <= budget {
        return text.to_string();
    }
    let head: String = text.chars().take(budget).collect();
    format!("{head}\n[... {} characters truncated ...]", total - budget)
}

pub fn format_snippets(snippets: &[Snippet]) -> String {
    if snippets.is_empty() {
        return String::new();
    }
    let mut s = String::from("\n### Relevant definitions\n");
    for sn in snippets {
        s.push_str(&format!("// {}:{}\n{}\n", sn.file.display(), sn.line, sn.text));
    }
    s
}

pub fn build_repair_prompt(
    project: &str,
    driver: &DriverSource,
    diagnostics: &str,
    retrieved: &[Snippet],
    budget_chars: usize,
    templates: &PromptTemplates,
) -> Result<String, PromptError> {
    if diagnostics.trim().is_empty() {
        return Err(PromptError::EmptyDiagnostics);
    }
    Ok(fill(
        &templates.repair,
        &[
            ("project", project),
            ("group", &group_line(&driver.group)),
            ("error", &truncate_diagnostics(diagnostics, budget_chars)),
            ("target", &format_snippets(retrieved)),
            ("driver", &driver.text),
        ],
    ))
}

/// A header file handed to constraint analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderText {
    pub name: String,
    pub text: String,
}

/// Builds one constraint-analysis prompt over all headers, in the given order.
pub fn build_constraint_prompt(
    project: &str,
    headers: &[HeaderText],
    templates: &PromptTemplates,
) -> Result<String, PromptError> {
    if headers.is_empty() {
        return Err(PromptError::NoHeaders);
    }
    let mut body = String::new();
    for h in headers {
        if h.text.trim().is_empty() {
            return Err(PromptError::EmptyHeader(h.name.clone()));
        }
        body.push_str(&format!("// file: {}\n{}", h.name, h.text));
        if !h.text.ends_with('\n') {
            body.push('\n');
        }
    }
    Ok(fill(&templates.constraint, &[("project", project), ("header", &body)]))
}
