//! Driver generation: prompting, filtering, repair and failure bookkeeping.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{CompileResult, ExecError, ExecutionAdapter, Toolchain};
use crate::model::{ApiGroup, LibrarySpec};

pub mod classify;
pub mod client;
pub mod filter;
pub mod implicit;
pub mod prompt;
pub mod retrieve;

use classify::{classify_failure_with_budget, FailureCategory, DEFAULT_TOKEN_BUDGET_CHARS};
use client::{ClientError, TextGenClient};
use prompt::{build_generation_prompt, build_repair_prompt, PromptError, PromptTemplates, DEFAULT_DIAGNOSTICS_BUDGET};
use retrieve::{retrieve_context, DEFAULT_MAX_SNIPPETS};

pub const DEFAULT_MAX_RETRIES: u32 = 4;
pub const DEFAULT_COST_BUDGET: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverLanguage {
    C,
    Cpp,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverSource {
    pub id: String,
    pub group: ApiGroup,
    pub language: DriverLanguage,
    pub text: String,
    /// Index of the query that produced this text (0 = first generation).
    pub generation: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationResult {
    Accepted,
    RejectedMissingApi,
    RejectedCompile,
    RejectedEarlyCrash,
    ExhaustedRetries,
    BudgetExhausted,
}

/// Where an attempt failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    MissingApi,
    Compile,
    EarlyCrash,
    /// The client refused the request.
    Client,
    /// The execution environment failed during the short run.
    Execution,
}

impl FailureStage {
    fn result(self) -> GenerationResult {
        match self {
            FailureStage::MissingApi => GenerationResult::RejectedMissingApi,
            FailureStage::EarlyCrash => GenerationResult::RejectedEarlyCrash,
            _ => GenerationResult::RejectedCompile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub attempt: u32,
    pub stage: FailureStage,
    pub category: Option<FailureCategory>,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub result: GenerationResult,
    pub driver: Option<DriverSource>,
    pub binary: Option<PathBuf>,
    /// Diagnostics of the last failure, if any.
    pub diagnostics: String,
    /// Category of the last compile-stage failure.
    pub category: Option<FailureCategory>,
    pub queries: u32,
    pub cost: f64,
    pub failures: Vec<FailureRecord>,
    /// Attempts whose driver compiled.
    pub compiled: u32,
    pub early_crashes: u32,
}

impl GenerationOutcome {
    fn empty() -> Self {
        GenerationOutcome {
            result: GenerationResult::ExhaustedRetries,
            driver: None,
            binary: None,
            diagnostics: String::new(),
            category: None,
            queries: 0,
            cost: 0.0,
            failures: Vec::new(),
            compiled: 0,
            early_crashes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    /// Total client queries per group, first generation included.
    pub max_retries: u32,
    pub temperature: f64,
    /// Client spending limit for the whole library.
    pub cost_budget: f64,
    /// Characters of compiler output quoted back in repair prompts.
    pub diagnostics_budget: usize,
    /// Diagnostics longer than this are a token-limit failure.
    pub token_budget_chars: usize,
    pub max_snippets: usize,
    pub language: DriverLanguage,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            max_retries: DEFAULT_MAX_RETRIES,
            temperature: 1.0,
            cost_budget: DEFAULT_COST_BUDGET,
            diagnostics_budget: DEFAULT_DIAGNOSTICS_BUDGET,
            token_budget_chars: DEFAULT_TOKEN_BUDGET_CHARS,
            max_snippets: DEFAULT_MAX_SNIPPETS,
            language: DriverLanguage::C,
        }
    }
}

pub struct GenerationContext<'a> {
    pub spec: &'a LibrarySpec,
    pub toolchain: &'a dyn Toolchain,
    pub adapter: &'a dyn ExecutionAdapter,
    pub templates: &'a PromptTemplates,
    pub hints: &'a [String],
    pub settings: &'a GenerationSettings,
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Environment(#[from] ExecError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Pulls driver source out of a model reply: the first fenced block if there
/// is one, otherwise the whole reply.
pub fn extract_code(response: &str) -> String {
    let mut lines = response.lines();
    if lines.by_ref().any(|l| l.trim_start().starts_with("```")) {
        let body: Vec<&str> = lines.take_while(|l| !l.trim_start().starts_with("```")).collect();
        let mut s = body.join("\n");
        s.push('\n');
        return s;
    }
    response.trim().to_string()
}

fn query<C: TextGenClient + ?Sized>(client: &mut C, prompt: &str, temperature: f64) -> Result<String, ClientError> {
    match client.complete(prompt, temperature) {
        Err(ClientError::Transport(_)) => client.complete(prompt, temperature),
        other => other,
    }
}

/// Runs the generate / filter / repair loop for one group.
pub fn generate_driver<C: TextGenClient + ?Sized>(
    group: &ApiGroup,
    driver_id: &str,
    ctx: &GenerationContext<'_>,
    client: &mut C,
) -> Result<GenerationOutcome, GenerationError> {
    let settings = ctx.settings;
    let mut out = GenerationOutcome::empty();
    let mut previous: Option<(DriverSource, String)> = None;
    let start_cost = client.accumulated_cost();
    for attempt in 0..settings.max_retries {
        let prompt = match &previous {
            None => build_generation_prompt(ctx.spec, group, ctx.hints, settings.language, ctx.templates)?,
            Some((driver, diag)) => {
                let snippets = retrieve_context(diag, ctx.spec.source_root.as_deref(), settings.max_snippets);
                build_repair_prompt(
                    &ctx.spec.library_name,
                    driver,
                    diag,
                    &snippets,
                    settings.diagnostics_budget,
                    ctx.templates,
                )?
            }
        };
        // A zero budget forbids querying even when queries are free.
        if settings.cost_budget <= 0.0
            || client.accumulated_cost() + client.max_query_cost(&prompt) > settings.cost_budget
        {
            out.result = GenerationResult::BudgetExhausted;
            out.cost = client.accumulated_cost() - start_cost;
            return Ok(out);
        }
        let reply = query(client, &prompt, settings.temperature);
        out.queries += 1;
        out.cost = client.accumulated_cost() - start_cost;
        let reply = match reply {
            Ok(r) => r,
            Err(ClientError::Rejected { status, body }) => {
                let diag = format!("status {status}: {body}");
                let cat = classify_failure_with_budget(&diag, settings.token_budget_chars);
                out.record(attempt, FailureStage::Client, Some(cat), diag);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let driver = DriverSource {
            id: driver_id.to_string(),
            group: group.clone(),
            language: settings.language,
            text: extract_code(&reply),
            generation: attempt,
        };
        let missing = filter::missing_apis(&driver, group);
        if !missing.is_empty() {
            let diag = format!("the driver never calls: {}", missing.join(", "));
            out.record(attempt, FailureStage::MissingApi, None, diag.clone());
            previous = Some((driver, diag));
            continue;
        }
        let binary = match ctx.toolchain.compile(&driver)? {
            CompileResult::Failed(diag) => {
                let cat = classify_failure_with_budget(&diag, settings.token_budget_chars);
                out.record(attempt, FailureStage::Compile, Some(cat), diag.clone());
                previous = Some((driver, diag));
                continue;
            }
            CompileResult::Binary(b) => b,
        };
        out.compiled += 1;
        let short = match ctx.adapter.short_run(&driver, &binary) {
            Ok(s) => s,
            Err(e @ ExecError::OutOfSpace { .. }) => {
                let diag = e.to_string();
                out.record(attempt, FailureStage::Execution, Some(FailureCategory::OutOfSpace), diag.clone());
                previous = Some((driver, diag));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if short.crashed {
            out.early_crashes += 1;
            let diag = if short.diagnostics.is_empty() { "the driver crashed during the short run".into() } else { short.diagnostics };
            out.record(attempt, FailureStage::EarlyCrash, None, diag.clone());
            previous = Some((driver, diag));
            continue;
        }
        out.result = GenerationResult::Accepted;
        out.driver = Some(driver);
        out.binary = Some(binary);
        return Ok(out);
    }
    out.result = GenerationResult::ExhaustedRetries;
    Ok(out)
}

impl GenerationOutcome {
    fn record(&mut self, attempt: u32, stage: FailureStage, category: Option<FailureCategory>, diagnostics: String) {
        if matches!(stage, FailureStage::Compile | FailureStage::Client | FailureStage::Execution) {
            self.category = category;
        }
        self.diagnostics = diagnostics.clone();
        self.result = stage.result();
        self.failures.push(FailureRecord { attempt, stage, category, diagnostics });
    }
}
