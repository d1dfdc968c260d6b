//! Static checks on generated driver text.

use std::collections::BTreeSet;

use crate::model::ApiGroup;

use super::{DriverLanguage, DriverSource};

/// Replaces comments and string/char literals with spaces, keeping newlines
/// so line numbers survive.
pub fn strip_comments_and_literals(src: &str) -> String {
    #[derive(PartialEq)]
    enum St {
        Code,
        Line,
        Block,
        Str(char),
    }
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len());
    let mut st = St::Code;
    let mut i = 0;
    let blank = |c: char| if c == '\n' { '\n' } else { ' ' };
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match st {
            St::Code => match (c, next) {
                ('/', Some('/')) => {
                    st = St::Line;
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                ('/', Some('*')) => {
                    st = St::Block;
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                ('"', _) | ('\'', _) => {
                    st = St::Str(c);
                    out.push(' ');
                }
                _ => out.push(c),
            },
            St::Line => {
                if c == '\n' {
                    st = St::Code;
                }
                out.push(blank(c));
            }
            St::Block => {
                if c == '*' && next == Some('/') {
                    st = St::Code;
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                out.push(blank(c));
            }
            St::Str(q) => {
                if c == '\\' {
                    out.push(' ');
                    if let Some(n) = next {
                        out.push(blank(n));
                    }
                    i += 2;
                    continue;
                }
                if c == q || c == '\n' {
                    st = St::Code;
                }
                out.push(blank(c));
            }
        }
        i += 1;
    }
    out
}

/// One `call NAME args...` statement of a toy driver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyCall {
    pub line: usize,
    pub name: String,
    pub args: Vec<String>,
}

/// Parses the call statements of a toy driver; other lines are ignored.
pub fn toy_calls(text: &str) -> Vec<ToyCall> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let code = line.split('#').next().unwrap_or("");
            let mut words = code.split_whitespace();
            if words.next() != Some("call") {
                return None;
            }
            let name = words.next()?.to_string();
            Some(ToyCall { line: i + 1, name, args: words.map(str::to_string).collect() })
        })
        .collect()
}

fn c_call_sites(text: &str) -> BTreeSet<String> {
    let code = strip_comments_and_literals(text);
    let bytes = code.as_bytes();
    let mut out = BTreeSet::new();
    let mut i = 0;
    let is_start = |b: u8| b.is_ascii_alphabetic() || b == b'_';
    let is_ident = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    while i < bytes.len() {
        if !is_start(bytes[i]) || (i > 0 && is_ident(bytes[i - 1])) {
            i += 1;
            continue;
        }
        // Take a possibly qualified name a::b::c.
        let start = i;
        let mut last;
        loop {
            last = i;
            while i < bytes.len() && is_ident(bytes[i]) {
                i += 1;
            }
            if i + 2 < bytes.len() && &bytes[i..i + 2] == b"::" && is_start(bytes[i + 2]) {
                i += 2;
                continue;
            }
            break;
        }
        let mut j = i;
        while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t') {
            j += 1;
        }
        if j < bytes.len() && bytes[j] == b'(' {
            out.insert(code[start..i].to_string());
            out.insert(code[last..i].to_string());
        }
    }
    out
}

/// Names the driver invokes. For C/C++ this includes qualified spellings and
/// their final segments.
pub fn called_functions(driver: &DriverSource) -> BTreeSet<String> {
    match driver.language {
        DriverLanguage::Toy => toy_calls(&driver.text).into_iter().map(|c| c.name).collect(),
        DriverLanguage::C | DriverLanguage::Cpp => c_call_sites(&driver.text),
    }
}

/// Group members the driver never calls.
pub fn missing_apis(driver: &DriverSource, group: &ApiGroup) -> Vec<String> {
    let called = called_functions(driver);
    group
        .iter()
        .filter(|m| {
            let bare = m.rsplit("::").next().unwrap_or(m);
            !called.contains(*m) && !called.contains(bare)
        })
        .map(str::to_string)
        .collect()
}

pub fn static_api_check(driver: &DriverSource, group: &ApiGroup) -> bool {
    missing_apis(driver, group).is_empty()
}
