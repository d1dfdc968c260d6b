//! Substring-pattern classification of driver build failures.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureCategory {
    #[serde(rename = "G1_corrupted")]
    Corrupted,
    #[serde(rename = "G2_language_basics")]
    LanguageBasics,
    #[serde(rename = "G3_nonexisting_identifier")]
    NonExistingIdentifier,
    #[serde(rename = "G4_type_error")]
    TypeError,
    #[serde(rename = "G5_token_limit")]
    TokenLimit,
    #[serde(rename = "G6_out_of_space")]
    OutOfSpace,
    #[serde(rename = "unknown")]
    Unknown,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 7] = [
        FailureCategory::Corrupted,
        FailureCategory::LanguageBasics,
        FailureCategory::NonExistingIdentifier,
        FailureCategory::TypeError,
        FailureCategory::TokenLimit,
        FailureCategory::OutOfSpace,
        FailureCategory::Unknown,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FailureCategory::Corrupted => "G1_corrupted",
            FailureCategory::LanguageBasics => "G2_language_basics",
            FailureCategory::NonExistingIdentifier => "G3_nonexisting_identifier",
            FailureCategory::TypeError => "G4_type_error",
            FailureCategory::TokenLimit => "G5_token_limit",
            FailureCategory::OutOfSpace => "G6_out_of_space",
            FailureCategory::Unknown => "unknown",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.tag() == tag)
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

pub const CORRUPTED_CODE: &[&str] = &[
    "is an abstract class",
    "error: no viable conversion from",
    "error: variable has incomplete type",
    "error: expected '}'",
    "error: expected ')'",
    "error: expected ';' after expression",
    "error: expected expression",
    "error: expected '>'",
    "error: extraneous closing brace",
    "named in nested name specifier",
    "error: a type specifier is required for all declarations",
    "error: C++ requires a type specifier",
    "error: expected unqualified-id",
    "error: extraneous ')' before ';'",
    "error: variable declaration in condition cannot have a parenthesized initializer",
    "does not name a template but is followed by template arguments",
    "error: templates must have C++ linkage",
    "tag to refer to type",
    "does not refer to a value",
];

pub const LANGUAGE_BASICS: &[&str] = &[
    "multiple definition of",
    "error: calling a protected constructor",
    "error: attempt to use a deleted function",
    "error: overload resolution selected deleted operator",
    "cannot be implicitly captured in a lambda with no capture-default specified",
    "error: redefinition of",
    "discards qualifiers",
    "error: invalid application of",
    "error: cannot jump from this goto statement to its label",
    "is ambiguous",
    "error: function definition is not allowed here",
    "has a different language linkage",
    "error: typedef redefinition with different types",
    "error: illegal initializer",
    "error: excess elements in scalar initializer",
    "error: call to non-static member function",
    "is a private member of",
    "error: multiple overloads of",
    "is a protected member of",
    "error: call to implicitly-deleted default constructor of",
    "error: reference to non-static member function",
    "error: expression is not assignable",
    "error: call to implicitly-deleted",
    "could not bind to an rvalue of type",
    "is neither visible in the template definition nor found by argument-dependent lookup",
    "error: ambiguous conversion",
    "error: no viable overloaded",
    "error: calling a private",
    "error: allocating an object of abstract class type",
    "is a pointer; did you mean to use",
    "error: only virtual member functions",
    "error: cannot jump from",
    "error: cannot delete",
    "does not provide a call operator",
    "error: excess elements in struct initializer",
    "error: taking the address of a temporary objec",
    "used in function with fixed args",
    "error: reference to overloaded function could not be resolved",
    "variables must have global storage",
    "conflicts with typedef of the same name",
    "error: call to deleted",
    "error: cannot create a non-constant pointer to member function",
];

pub const NON_EXISTING_IDENTIFIER: &[&str] = &[
    "no matching function for call to",
    "error: use of undeclared identifier",
    "undefined reference to",
    "error: no member named",
    "no matching constructor for initialization",
    "error: no matching member",
    "error: field designator",
];

pub const TYPE_ERROR: &[&str] = &[
    "error: no type named",
    "error: unknown type name",
    "invalid operands to binary expression",
    "error: unexpected type name",
    "error: member reference base type",
    "error: cannot initialize a",
    "error: reinterpret_cast from",
    "error: member access into",
    "error: incompatible integer to pointer conversion",
    "from incompatible type",
    "error: cast from pointer to smaller type",
    "error: incompatible pointer types",
    "is not a function or function pointe",
    "error: non-constant-expression cannot be narrowed from type",
    "error: invalid use of incomplete type",
    "error: cannot cast from type",
    "has incompatible initializer of type",
    "error: const_cast from",
    "error: static_cast from",
    "cannot be narrowed to",
    "error: invalid argument type",
    "error: incompatible pointer to integer conversion",
    "error: too few arguments to function call",
    "error: invalid range expression of type",
    "s not a pointer; did you mean to use",
    "error: conflicting types",
    "error: non-const lvalue reference to typ",
    "error: no matching conversion for",
    "error: too many arguments to function call",
    "error: arithmetic on a pointer",
    "error: comparison between",
    "error: C-style cast from",
    "error: incompatible operand types",
    "could not bind to an lvalue of type",
    "error: cannot take the address of an rvalue of type",
    "error: too many arguments provided",
    "error: cannot initialize an",
    "is not assignable",
    "error: functional-style cast",
    "must match previous return type",
    "error: cannot compile this lambda conversion to variadic function yet",
    "is not contextually convertible",
    "cannot be referenced with a struct specifier",
    "error: cannot convert",
    "error: indirection requires pointer operand",
    "error: functions that differ only in their return type cannot be overloaded",
];

/// Messages from text-generation endpoints rejecting an overlong request.
pub const TOKEN_LIMIT: &[&str] = &[
    "maximum context length",
    "context_length_exceeded",
    "exceeds the token limit",
    "too many tokens",
];

/// Storage exhaustion signals, including the executor's own quota abort.
pub const OUT_OF_SPACE: &[&str] = &[
    "No space left on device",
    "out of space",
    "Disk quota exceeded",
    "ENOSPC",
    "working directory quota exceeded",
];

/// Default diagnostic length (characters) above which the text cannot be
/// fed back to the client; roughly a 16k-token context.
pub const DEFAULT_TOKEN_BUDGET_CHARS: usize = 65_536;

fn pattern_groups() -> [(FailureCategory, &'static [&'static str]); 6] {
    [
        (FailureCategory::Corrupted, CORRUPTED_CODE),
        (FailureCategory::LanguageBasics, LANGUAGE_BASICS),
        (FailureCategory::NonExistingIdentifier, NON_EXISTING_IDENTIFIER),
        (FailureCategory::TypeError, TYPE_ERROR),
        (FailureCategory::TokenLimit, TOKEN_LIMIT),
        (FailureCategory::OutOfSpace, OUT_OF_SPACE),
    ]
}

/// Classifies build or execution diagnostics.
///
/// Text longer than `token_budget_chars` is a token-limit failure outright.
/// Otherwise the first category, in G1..G6 order, with any pattern occurring
/// as a substring wins.
pub fn classify_failure_with_budget(diagnostics: &str, token_budget_chars: usize) -> FailureCategory {
    if diagnostics.chars().count() > token_budget_chars {
        return FailureCategory::TokenLimit;
    }
    for (cat, patterns) in pattern_groups() {
        if patterns.iter().any(|p| diagnostics.contains(p)) {
            return cat;
        }
    }
    FailureCategory::Unknown
}

pub fn classify_failure(diagnostics: &str) -> FailureCategory {
    classify_failure_with_budget(diagnostics, DEFAULT_TOKEN_BUDGET_CHARS)
}
