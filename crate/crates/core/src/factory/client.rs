//! Text-generation clients: an HTTP chat-completion client, a scripted
//! client for tests, and a seeded simulator used for desk-scale campaigns.

use std::path::Path;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LibrarySpec;
use crate::seed;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("client configuration: {0}")]
    Config(String),
    #[error("malformed response: {0}")]
    Response(String),
    /// The endpoint answered but refused the request (for example an
    /// overlong prompt). Counts as a query.
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
}

/// Counters a client carries across a saved campaign.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub queries: u64,
    pub accumulated_cost: f64,
}

pub trait TextGenClient {
    fn complete(&mut self, prompt: &str, temperature: f64) -> Result<String, ClientError>;
    /// Total spent so far; never decreases.
    fn accumulated_cost(&self) -> f64;
    /// Upper bound on what one query with this prompt may cost.
    fn max_query_cost(&self, prompt: &str) -> f64;
    fn state(&self) -> ClientState;
    fn resume(&mut self, state: ClientState);
}

/// Per-token prices, in currency units per 1,000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pricing {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
    pub max_completion_tokens: u64,
}

impl Default for Pricing {
    fn default() -> Self {
        Pricing { prompt_per_1k: 0.0025, completion_per_1k: 0.01, max_completion_tokens: 2048 }
    }
}

/// Rough token count used when the endpoint does not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

impl Pricing {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        prompt_tokens as f64 / 1000.0 * self.prompt_per_1k + completion_tokens as f64 / 1000.0 * self.completion_per_1k
    }

    pub fn bound(&self, prompt: &str) -> f64 {
        self.cost(estimate_tokens(prompt), self.max_completion_tokens)
    }
}

/// Replays canned responses in order, cycling when they run out.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    responses: Vec<String>,
    cost_per_query: f64,
    state: ClientState,
    prompts: Vec<String>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedClient {
            responses: responses.into_iter().map(Into::into).collect(),
            cost_per_query: 0.0,
            state: ClientState::default(),
            prompts: Vec::new(),
        }
    }

    /// Reads every regular file in `dir`, in file-name order.
    pub fn from_dir(dir: &Path) -> Result<Self, ClientError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| ClientError::Config(format!("{}: {e}", dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(ClientError::Config(format!("no responses in {}", dir.display())));
        }
        let responses = paths
            .iter()
            .map(|p| std::fs::read_to_string(p).map_err(|e| ClientError::Config(format!("{}: {e}", p.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(responses))
    }

    pub fn with_cost(mut self, cost_per_query: f64) -> Self {
        self.cost_per_query = cost_per_query;
        self
    }

    /// Prompts received so far, oldest first.
    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }
}

impl TextGenClient for ScriptedClient {
    fn complete(&mut self, prompt: &str, _temperature: f64) -> Result<String, ClientError> {
        if self.responses.is_empty() {
            return Err(ClientError::Config("scripted client has no responses".into()));
        }
        let i = (self.state.queries % self.responses.len() as u64) as usize;
        self.state.queries += 1;
        self.state.accumulated_cost += self.cost_per_query;
        self.prompts.push(prompt.to_string());
        Ok(self.responses[i].clone())
    }

    fn accumulated_cost(&self) -> f64 {
        self.state.accumulated_cost
    }

    fn max_query_cost(&self, _prompt: &str) -> f64 {
        self.cost_per_query
    }

    fn state(&self) -> ClientState {
        self.state
    }

    fn resume(&mut self, state: ClientState) {
        self.state = state;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    /// Chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_seconds: u64,
    pub pricing: Pricing,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "DUALFUZZ_API_KEY".into(),
            timeout_seconds: 300,
            pricing: Pricing::default(),
        }
    }
}

pub struct HttpClient {
    config: HttpClientConfig,
    api_key: String,
    agent: ureq::Agent,
    state: ClientState,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Result<Self, ClientError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| ClientError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_seconds)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient { config, api_key, agent, state: ClientState::default() })
    }
}

impl TextGenClient for HttpClient {
    fn complete(&mut self, prompt: &str, temperature: f64) -> Result<String, ClientError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": temperature,
            "max_tokens": self.config.pricing.max_completion_tokens,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            self.state.queries += 1;
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Rejected { status, body });
        }
        let value: serde_json::Value =
            resp.body_mut().read_json().map_err(|e| ClientError::Response(e.to_string()))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ClientError::Response("missing choices[0].message.content".into()))?
            .to_string();
        let usage = &value["usage"];
        let pt = usage["prompt_tokens"].as_u64().unwrap_or_else(|| estimate_tokens(prompt));
        let ct = usage["completion_tokens"].as_u64().unwrap_or_else(|| estimate_tokens(&text));
        self.state.queries += 1;
        self.state.accumulated_cost += self.config.pricing.cost(pt, ct);
        Ok(text)
    }

    fn accumulated_cost(&self) -> f64 {
        self.state.accumulated_cost
    }

    fn max_query_cost(&self, prompt: &str) -> f64 {
        self.config.pricing.bound(prompt)
    }

    fn state(&self) -> ClientState {
        self.state
    }

    fn resume(&mut self, state: ClientState) {
        self.state = state;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimClientConfig {
    /// Success probability of a first attempt on a 2-API group.
    pub base_success: f64,
    /// Subtracted per member beyond two.
    pub length_penalty: f64,
    /// Added for each repair round already taken.
    pub repair_bonus: f64,
    pub pricing: Pricing,
}

impl Default for SimClientConfig {
    fn default() -> Self {
        SimClientConfig { base_success: 0.6, length_penalty: 0.1, repair_bonus: 0.15, pricing: Pricing::default() }
    }
}

/// Produces call-script drivers for the group named in the prompt. Each query
/// draws from its own seeded stream, so results depend only on the seed and
/// the query index.
pub struct SimClient {
    seed: u64,
    config: SimClientConfig,
    spec: LibrarySpec,
    state: ClientState,
}

impl SimClient {
    pub fn new(seed: u64, spec: LibrarySpec, config: SimClientConfig) -> Self {
        SimClient { seed, config, spec, state: ClientState::default() }
    }

    fn respond<R: Rng>(&self, prompt: &str, rng: &mut R) -> String {
        let Some(members) = group_from_prompt(prompt) else {
            return "I could not find the API group in the request.".into();
        };
        let repairs = prompt.matches("### Driver").count() as f64;
        let extra = members.len().saturating_sub(2) as f64;
        let p = (self.config.base_success - self.config.length_penalty * extra + self.config.repair_bonus * repairs)
            .clamp(0.02, 0.98);
        let mut lines = vec![format!("# driver for {}", members.join(", "))];
        let arity = |name: &str| self.spec.api(name).map(|a| a.parameters.len()).unwrap_or(1);
        let call = |name: &str, n: usize| {
            let args = vec!["$input"; n];
            format!("call {name} {}", args.join(" ")).trim_end().to_string()
        };
        let mut body: Vec<String> = members.iter().map(|m| call(m, arity(m))).collect();
        if !rng.random_bool(p) {
            let victim = rng.random_range(0..body.len());
            match rng.random_range(0..4u8) {
                0 => {
                    body.remove(victim);
                }
                1 => {
                    let m = &members[victim];
                    body[victim] = call(&format!("{}x", m), arity(m));
                }
                2 => body.insert(victim, "call(".into()),
                _ => {
                    let m = &members[victim];
                    body[victim] = call(m, arity(m) + 2);
                }
            }
        }
        lines.extend(body);
        format!("```\n{}\n```\n", lines.join("\n"))
    }
}

/// Members listed on the first `Group:` line of a prompt.
pub fn group_from_prompt(prompt: &str) -> Option<Vec<String>> {
    let line = prompt.lines().find_map(|l| l.trim().strip_prefix("Group:"))?;
    let members: Vec<String> = line.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    (!members.is_empty()).then_some(members)
}

impl TextGenClient for SimClient {
    fn complete(&mut self, prompt: &str, _temperature: f64) -> Result<String, ClientError> {
        let mut rng = seed::stream(self.seed, &format!("query/{}", self.state.queries));
        let text = self.respond(prompt, &mut rng);
        self.state.queries += 1;
        self.state.accumulated_cost += self.config.pricing.cost(estimate_tokens(prompt), estimate_tokens(&text));
        Ok(text)
    }

    fn accumulated_cost(&self) -> f64 {
        self.state.accumulated_cost
    }

    fn max_query_cost(&self, prompt: &str) -> f64 {
        self.config.pricing.bound(prompt)
    }

    fn state(&self) -> ClientState {
        self.state
    }

    fn resume(&mut self, state: ClientState) {
        self.state = state;
    }
}
