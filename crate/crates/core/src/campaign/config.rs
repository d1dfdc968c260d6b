use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver_sched::EnergyConfig;
use crate::executor::{CommandToolchainConfig, ExternalAdapterConfig, SimAdapterConfig};
use crate::factory::client::{HttpClientConfig, SimClientConfig};
use crate::factory::{DriverLanguage, GenerationSettings};
use crate::group_sched::{DEFAULT_BATCH, DEFAULT_WINDOW};
use crate::model::DEFAULT_MAX_GROUP_LEN;

use super::CampaignError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Deterministic, single-threaded; one slice lasts one tick.
    #[default]
    Sim,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Ignore imply/conflict constraints when enumerating and prompting.
    pub no_implicit: bool,
    /// Uniform random group choice instead of nondominated sorting.
    pub random_groups: bool,
    /// Round-robin driver choice instead of the roulette wheel.
    pub round_robin_drivers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientConfig {
    Sim(SimClientConfig),
    Scripted {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        responses: Vec<String>,
        #[serde(default)]
        cost_per_query: f64,
    },
    Http(HttpClientConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolchainConfig {
    Toy,
    Command(CommandToolchainConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterConfig {
    Sim(SimAdapterConfig),
    External(ExternalAdapterConfig),
}

/// A driver placed in the pool before the campaign starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreseededDriver {
    pub id: String,
    /// Group the driver stands for; inferred from its calls when empty.
    #[serde(default)]
    pub members: Vec<String>,
    pub language: DriverLanguage,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// LibrarySpec JSON file.
    pub spec: Option<PathBuf>,
    /// Use a generated library of this many APIs instead of `spec`.
    pub synthetic_apis: Option<usize>,
    pub mode: Mode,
    pub seed: u64,
    /// Number of scheduling rounds.
    pub max_ticks: u64,
    pub wall_clock_seconds: Option<u64>,
    /// Groups picked per round.
    pub batch_groups: usize,
    /// Drivers run per round.
    pub batch_drivers: usize,
    pub window: usize,
    pub max_group_len: usize,
    pub loose_pointer_match: bool,
    /// Length of one slice; defaults to 60 s in real mode and 1 in sim mode,
    /// where it is only recorded as execution time.
    pub slice_seconds: Option<f64>,
    pub workers: usize,
    pub energy: EnergyConfig,
    pub generation: GenerationSettings,
    pub hints: Option<Vec<String>>,
    pub templates_dir: Option<PathBuf>,
    pub ablation: Ablation,
    pub client: ClientConfig,
    pub toolchain: ToolchainConfig,
    pub adapter: AdapterConfig,
    pub work_dir: PathBuf,
    /// Where the campaign state is saved.
    pub state_file: Option<PathBuf>,
    /// Save every this many rounds (0 = only at the end).
    pub checkpoint_every: u64,
    pub preseeded_drivers: Vec<PreseededDriver>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            spec: None,
            synthetic_apis: None,
            mode: Mode::Sim,
            seed: 0,
            max_ticks: 200,
            wall_clock_seconds: None,
            batch_groups: DEFAULT_BATCH,
            batch_drivers: 4,
            window: DEFAULT_WINDOW,
            max_group_len: DEFAULT_MAX_GROUP_LEN,
            loose_pointer_match: false,
            slice_seconds: None,
            workers: 4,
            energy: EnergyConfig::default(),
            generation: GenerationSettings { language: DriverLanguage::Toy, ..Default::default() },
            hints: None,
            templates_dir: None,
            ablation: Ablation::default(),
            client: ClientConfig::Sim(SimClientConfig::default()),
            toolchain: ToolchainConfig::Toy,
            adapter: AdapterConfig::Sim(SimAdapterConfig::default()),
            work_dir: PathBuf::from("campaign-work"),
            state_file: None,
            checkpoint_every: 0,
            preseeded_drivers: Vec::new(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl CampaignConfig {
    /// Parses TOML or JSON (chosen by extension, JSON for `.json`) and
    /// resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path).map_err(|e| CampaignError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str::<CampaignConfig>(&text).map_err(|e| CampaignError::Config(e.to_string()))?
        } else {
            toml::from_str::<CampaignConfig>(&text).map_err(|e| CampaignError::Config(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = self.spec.as_mut() {
            rebase(base, p);
        }
        if let Some(p) = self.templates_dir.as_mut() {
            rebase(base, p);
        }
        if let Some(p) = self.state_file.as_mut() {
            rebase(base, p);
        }
        rebase(base, &mut self.work_dir);
        if let ClientConfig::Scripted { dir: Some(d), .. } = &mut self.client {
            rebase(base, d);
        }
        match &mut self.toolchain {
            ToolchainConfig::Command(c) => rebase(base, &mut c.build_dir),
            ToolchainConfig::Toy => {}
        }
        match &mut self.adapter {
            AdapterConfig::External(c) => rebase(base, &mut c.work_dir),
            AdapterConfig::Sim(_) => {}
        }
        for d in &mut self.preseeded_drivers {
            if let Some(p) = d.path.as_mut() {
                rebase(base, p);
            }
        }
    }

    pub fn slice_seconds(&self) -> f64 {
        self.slice_seconds.unwrap_or(match self.mode {
            Mode::Real => 60.0,
            Mode::Sim => 1.0,
        })
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let mut problems = Vec::new();
        match (&self.spec, self.synthetic_apis) {
            (Some(_), Some(_)) => problems.push("set only one of spec and synthetic_apis".to_string()),
            (None, None) => problems.push("one of spec or synthetic_apis is required".to_string()),
            _ => {}
        }
        if self.max_ticks == 0 {
            problems.push("max_ticks must be positive".into());
        }
        if self.batch_groups == 0 || self.batch_drivers == 0 || self.window == 0 || self.workers == 0 {
            problems.push("batch sizes, window and workers must be positive".into());
        }
        if self.slice_seconds.is_some_and(|s| s.is_nan() || s <= 0.0) {
            problems.push("slice_seconds must be positive".into());
        }
        if self.generation.max_retries == 0 {
            problems.push("generation.max_retries must be positive".into());
        }
        if self.generation.cost_budget.is_nan() || self.generation.cost_budget < 0.0 {
            problems.push("generation.cost_budget must not be negative".into());
        }
        if self.max_group_len < 2 {
            problems.push("max_group_len must be at least 2".into());
        }
        if self.energy.initial == 0 {
            problems.push("energy.initial must be positive".into());
        }
        for d in &self.preseeded_drivers {
            if d.path.is_some() == d.text.is_some() {
                problems.push(format!("preseeded driver {} needs exactly one of path and text", d.id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CampaignError::Config(problems.join("; ")))
        }
    }
}
