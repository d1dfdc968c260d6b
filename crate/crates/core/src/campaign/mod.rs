//! The dual-scheduling campaign loop, its persisted state and reporting.
//!
//! Each round runs the group path (pick groups, generate drivers, admit the
//! accepted ones) and then the driver path (pick drivers, run one slice each,
//! fold the results back). Rounds are strictly alternated so that a run is a
//! pure function of its configuration and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{ConstraintError, EnumerationOptions, GroupEnumerator};
use crate::driver_sched::{
    apply_slice_result, round_robin_select, roulette_select, DriverRecord, DriverState, SchedError,
};
use crate::executor::{
    CommandToolchain, CompileResult, CoverageMap, ExecError, ExecutionAdapter, ExternalFuzzerAdapter, SimAdapter,
    SliceReport, SliceRequest, Toolchain, ToyToolchain,
};
use crate::factory::classify::FailureCategory;
use crate::factory::client::{ClientError, ClientState, HttpClient, ScriptedClient, SimClient, TextGenClient};
use crate::factory::prompt::{PromptError, PromptTemplates, DEFAULT_HINTS};
use crate::factory::{
    filter, generate_driver, DriverSource, FailureStage, GenerationContext, GenerationError, GenerationResult,
};
use crate::group_sched::{GenerationResultKind, GroupScheduler, GroupSchedulerState, SelectionPolicy};
use crate::model::{load_library_spec, validate_spec, ApiGroup, LibrarySpec, ModelError};
use crate::seed;
use crate::synth::synthetic_library;

pub mod config;
pub mod report;

pub use config::{Ablation, AdapterConfig, CampaignConfig, ClientConfig, Mode, PreseededDriver, ToolchainConfig};
pub use report::{coverage_csv, render, report, CampaignReport, ReportFormat};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("cannot parse campaign state: {0}")]
    StateParse(String),
    #[error("state schema version {found} is not supported (expected {expected}); migrate the state first")]
    Version { found: u32, expected: u32 },
    #[error("state was recorded with seed {state}, not {requested}")]
    SeedMismatch { state: u64, requested: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

impl From<GenerationError> for CampaignError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Environment(x) => CampaignError::Exec(x),
            GenerationError::Client(x) => CampaignError::Client(x),
            GenerationError::Prompt(x) => CampaignError::Prompt(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub slice_index: u64,
    pub cumulative_regions: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub queries: u64,
    /// Attempts whose driver compiled.
    pub compilable: u64,
    /// Generated drivers admitted to the pool.
    pub accepted: u64,
    pub early_crashes: u64,
    pub missing_api: u64,
    pub failures: BTreeMap<FailureCategory, u64>,
    pub groups_selected: u64,
    pub bugs: u64,
    pub slices: u64,
    pub failed_slices: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub schema_version: u32,
    pub config: CampaignConfig,
    pub library: String,
    pub tick: u64,
    pub rng: ChaCha8Rng,
    pub groups: GroupSchedulerState,
    pub pool: Vec<DriverRecord>,
    pub global: CoverageMap,
    pub counters: Counters,
    pub client: ClientState,
    pub budget_exhausted: bool,
    pub rr_cursor: u64,
    pub next_driver: u64,
    pub coverage_series: Vec<SeriesPoint>,
    /// Driver ids run in each round.
    pub selections: Vec<Vec<String>>,
}

impl CampaignState {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CampaignError> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CampaignError::StateParse(e.to_string()))?;
        let found = probe.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(CampaignError::Version { found, expected: SCHEMA_VERSION });
        }
        serde_json::from_value(probe).map_err(|e| CampaignError::StateParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path).map_err(|e| CampaignError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Writes through a temporary file and a rename, so a crash never leaves
    /// a half-written state behind.
    pub fn save(&self, path: &Path) -> Result<(), CampaignError> {
        let io = |e: std::io::Error| CampaignError::Io(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}

/// Library as seen by the campaign, plus the ground truth the simulator uses.
fn load_libraries(config: &CampaignConfig) -> Result<(LibrarySpec, LibrarySpec), CampaignError> {
    let truth = match (&config.spec, config.synthetic_apis) {
        (Some(path), None) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CampaignError::Io(format!("{}: {e}", path.display())))?;
            load_library_spec(&text)?
        }
        (None, Some(n)) => synthetic_library(n),
        _ => return Err(CampaignError::Config("one of spec or synthetic_apis is required".into())),
    };
    let problems = validate_spec(&truth);
    if !problems.is_empty() {
        return Err(ModelError::Validation(problems).into());
    }
    let mut seen = truth.clone();
    if config.ablation.no_implicit {
        seen.implicit.clear();
    }
    Ok((seen, truth))
}

fn build_client(config: &CampaignConfig, spec: &LibrarySpec) -> Result<Box<dyn TextGenClient>, CampaignError> {
    Ok(match &config.client {
        ClientConfig::Sim(c) => Box::new(SimClient::new(seed::derive_seed(config.seed, "client"), spec.clone(), c.clone())),
        ClientConfig::Scripted { dir: Some(d), cost_per_query, .. } => {
            Box::new(ScriptedClient::from_dir(d)?.with_cost(*cost_per_query))
        }
        ClientConfig::Scripted { dir: None, responses, cost_per_query } => {
            if responses.is_empty() {
                return Err(CampaignError::Config("scripted client needs dir or responses".into()));
            }
            Box::new(ScriptedClient::new(responses.clone()).with_cost(*cost_per_query))
        }
        ClientConfig::Http(c) => Box::new(HttpClient::new(c.clone())?),
    })
}

fn build_toolchain(config: &CampaignConfig, spec: &LibrarySpec) -> Box<dyn Toolchain> {
    match &config.toolchain {
        ToolchainConfig::Toy => Box::new(ToyToolchain::new(spec.clone())),
        ToolchainConfig::Command(c) => Box::new(CommandToolchain::new(c.clone())),
    }
}

fn build_adapter(config: &CampaignConfig, truth: &LibrarySpec) -> Box<dyn ExecutionAdapter> {
    match &config.adapter {
        AdapterConfig::Sim(c) => {
            Box::new(SimAdapter::new(seed::derive_seed(config.seed, "target"), truth.clone(), c.clone()))
        }
        AdapterConfig::External(c) => Box::new(ExternalFuzzerAdapter::new(c.clone())),
    }
}

fn enumerator(config: &CampaignConfig, spec: &LibrarySpec) -> Result<GroupEnumerator, CampaignError> {
    let opts = EnumerationOptions {
        min_size: 2,
        max_size: config.max_group_len,
        cap: None,
        order_seed: seed::derive_seed(config.seed, "enumeration"),
        explicit: true,
        implicit: !config.ablation.no_implicit,
        loose_pointer_match: config.loose_pointer_match,
        size_limit: config.max_group_len.max(crate::model::DEFAULT_MAX_GROUP_LEN),
    };
    Ok(GroupEnumerator::new(spec, opts)?)
}

pub struct Campaign {
    state: CampaignState,
    spec: LibrarySpec,
    scheduler: GroupScheduler,
    client: Box<dyn TextGenClient>,
    toolchain: Box<dyn Toolchain>,
    adapter: Box<dyn ExecutionAdapter>,
    templates: PromptTemplates,
    hints: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ResumeOptions {
    /// Must match the recorded seed when given.
    pub seed: Option<u64>,
    /// Extends or shortens the run.
    pub max_ticks: Option<u64>,
}

impl Campaign {
    pub fn new(config: CampaignConfig) -> Result<Self, CampaignError> {
        config.validate()?;
        let (spec, truth) = load_libraries(&config)?;
        let policy = if config.ablation.random_groups { SelectionPolicy::Random } else { SelectionPolicy::Pareto };
        let scheduler = GroupScheduler::new(enumerator(&config, &spec)?, config.window, policy);
        let adapter = build_adapter(&config, &truth);
        let state = CampaignState {
            schema_version: SCHEMA_VERSION,
            library: spec.library_name.clone(),
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(seed::derive_seed(config.seed, "campaign")),
            groups: scheduler.state().clone(),
            pool: Vec::new(),
            global: CoverageMap::new(adapter.total_regions()),
            counters: Counters::default(),
            client: ClientState::default(),
            budget_exhausted: false,
            rr_cursor: 0,
            next_driver: 0,
            coverage_series: Vec::new(),
            selections: Vec::new(),
            config,
        };
        let mut c = Self::assemble(state, spec, scheduler, adapter)?;
        c.admit_preseeded()?;
        Ok(c)
    }

    fn assemble(
        state: CampaignState,
        spec: LibrarySpec,
        scheduler: GroupScheduler,
        adapter: Box<dyn ExecutionAdapter>,
    ) -> Result<Self, CampaignError> {
        let config = &state.config;
        let mut client = build_client(config, &spec)?;
        client.resume(state.client);
        let toolchain = build_toolchain(config, &spec);
        let templates = match &config.templates_dir {
            Some(d) => PromptTemplates::load_dir(d)?,
            None => PromptTemplates::default(),
        };
        let hints = config.hints.clone().unwrap_or_else(|| DEFAULT_HINTS.iter().map(|s| s.to_string()).collect());
        Ok(Campaign { state, spec, scheduler, client, toolchain, adapter, templates, hints })
    }

    /// Rebuilds a campaign from saved state.
    pub fn from_state(mut state: CampaignState, opts: ResumeOptions) -> Result<Self, CampaignError> {
        if let Some(s) = opts.seed {
            if s != state.config.seed {
                return Err(CampaignError::SeedMismatch { state: state.config.seed, requested: s });
            }
        }
        if let Some(k) = opts.max_ticks {
            state.config.max_ticks = k;
        }
        let (spec, truth) = load_libraries(&state.config)?;
        let scheduler = GroupScheduler::restore(state.groups.clone(), enumerator(&state.config, &spec)?);
        let adapter = build_adapter(&state.config, &truth);
        Self::assemble(state, spec, scheduler, adapter)
    }

    pub fn resume(path: &Path, opts: ResumeOptions) -> Result<Self, CampaignError> {
        Self::from_state(CampaignState::load(path)?, opts)
    }

    pub fn spec(&self) -> &LibrarySpec {
        &self.spec
    }

    /// Current state, with scheduler and client counters synchronized.
    pub fn state(&mut self) -> &CampaignState {
        self.sync();
        &self.state
    }

    pub fn into_state(mut self) -> CampaignState {
        self.sync();
        self.state
    }

    fn sync(&mut self) {
        self.state.groups = self.scheduler.state().clone();
        self.state.client = self.client.state();
    }

    pub fn report(&mut self) -> CampaignReport {
        report(self.state())
    }

    pub fn finished(&self) -> bool {
        self.state.tick >= self.state.config.max_ticks
    }

    /// Next driver id and its creation serial.
    fn new_driver_id(&mut self) -> (String, u64) {
        let serial = self.state.next_driver;
        self.state.next_driver += 1;
        (format!("d{serial:05}"), serial)
    }

    fn admit_preseeded(&mut self) -> Result<(), CampaignError> {
        let seeds = self.state.config.preseeded_drivers.clone();
        for p in seeds {
            let text = match (&p.text, &p.path) {
                (Some(t), _) => t.clone(),
                (None, Some(path)) => {
                    std::fs::read_to_string(path).map_err(|e| CampaignError::Io(format!("{}: {e}", path.display())))?
                }
                (None, None) => return Err(CampaignError::Config(format!("preseeded driver {} has no source", p.id))),
            };
            let mut driver =
                DriverSource { id: p.id.clone(), group: ApiGroup::new(p.members.clone()), language: p.language, text, generation: 0 };
            if p.members.is_empty() {
                let calls: BTreeSet<String> =
                    filter::called_functions(&driver).into_iter().filter(|c| self.spec.contains(c)).collect();
                driver.group = ApiGroup::new(calls);
            }
            let binary = match self.toolchain.compile(&driver)? {
                CompileResult::Binary(b) => b,
                CompileResult::Failed(diag) => {
                    return Err(CampaignError::Config(format!("preseeded driver {} does not compile:\n{diag}", p.id)));
                }
            };
            self.scheduler.ensure_record(&driver.group);
            self.scheduler.finish_generation(&driver.group, 0, GenerationResultKind::Accepted);
            let created = self.state.next_driver;
            self.state.next_driver += 1;
            let energy = self.state.config.energy.initial;
            self.state.pool.push(DriverRecord::new(driver, binary, self.adapter.total_regions(), energy, created));
        }
        Ok(())
    }

    fn group_round(&mut self) -> Result<(), CampaignError> {
        if self.state.budget_exhausted {
            return Ok(());
        }
        let k = self.state.config.batch_groups;
        let batch = self.scheduler.select_group_batch(k, &mut self.state.rng);
        self.state.counters.groups_selected += batch.len() as u64;
        let settings = self.state.config.generation.clone();
        for group in batch {
            if self.state.budget_exhausted {
                self.scheduler.finish_generation(&group, 0, GenerationResultKind::Deferred);
                continue;
            }
            let (id, serial) = self.new_driver_id();
            let ctx = GenerationContext {
                spec: &self.spec,
                toolchain: self.toolchain.as_ref(),
                adapter: self.adapter.as_ref(),
                templates: &self.templates,
                hints: &self.hints,
                settings: &settings,
            };
            let outcome = generate_driver(&group, &id, &ctx, self.client.as_mut())?;
            let c = &mut self.state.counters;
            c.queries += outcome.queries as u64;
            c.compilable += outcome.compiled as u64;
            c.early_crashes += outcome.early_crashes as u64;
            for f in &outcome.failures {
                match (f.stage, f.category) {
                    (FailureStage::MissingApi, _) => c.missing_api += 1,
                    (_, Some(cat)) => *c.failures.entry(cat).or_insert(0) += 1,
                    _ => {}
                }
            }
            let kind = match outcome.result {
                GenerationResult::Accepted => GenerationResultKind::Accepted,
                GenerationResult::BudgetExhausted => {
                    self.state.budget_exhausted = true;
                    if outcome.queries == 0 {
                        GenerationResultKind::Deferred
                    } else {
                        GenerationResultKind::Failed
                    }
                }
                _ => GenerationResultKind::Failed,
            };
            self.scheduler.finish_generation(&group, outcome.queries, kind);
            if let (Some(driver), Some(binary)) = (outcome.driver, outcome.binary) {
                self.state.counters.accepted += 1;
                let energy = self.state.config.energy.initial;
                self.state.pool.push(DriverRecord::new(driver, binary, self.adapter.total_regions(), energy, serial));
            }
        }
        Ok(())
    }

    fn select_drivers(&mut self) -> Vec<String> {
        let n = self.state.config.batch_drivers;
        if self.state.config.ablation.round_robin_drivers {
            round_robin_select(&self.state.pool, n, &mut self.state.rr_cursor)
        } else {
            roulette_select(&self.state.pool, n, self.state.config.energy.initial, &mut self.state.rng)
        }
    }

    fn run_slices(&self, picks: &[usize]) -> Vec<Result<SliceReport, ExecError>> {
        let seconds = self.state.config.slice_seconds();
        let request = |i: usize| {
            let r = &self.state.pool[i];
            SliceRequest { driver: &r.driver, binary: &r.binary, prior: &r.coverage, slice_index: r.slices + 1, seconds }
        };
        let parallel = self.state.config.mode == Mode::Real && self.state.config.workers > 1 && picks.len() > 1;
        if !parallel {
            return picks.iter().map(|&i| self.adapter.run_slice(&request(i))).collect();
        }
        let adapter = self.adapter.as_ref();
        let mut results: Vec<Option<Result<SliceReport, ExecError>>> = (0..picks.len()).map(|_| None).collect();
        for (chunk_idx, chunk) in picks.chunks(self.state.config.workers).enumerate() {
            let outs: Vec<Result<SliceReport, ExecError>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&i| {
                        let req = request(i);
                        s.spawn(move || adapter.run_slice(&req))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(ExecError::Environment("slice worker panicked".into()))))
                    .collect()
            });
            for (j, o) in outs.into_iter().enumerate() {
                results[chunk_idx * self.state.config.workers + j] = Some(o);
            }
        }
        results.into_iter().map(|r| r.expect("every slice ran")).collect()
    }

    fn store_artifact(&self, report: &SliceReport) -> Result<PathBuf, CampaignError> {
        let rel = PathBuf::from("artifacts").join(&report.driver);
        let dir = self.state.config.work_dir.join(&rel);
        let io = |e: std::io::Error| CampaignError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(&dir).map_err(io)?;
        std::fs::write(dir.join("crash.txt"), report.crash_info.as_deref().unwrap_or("")).map_err(io)?;
        if let Some(input) = &report.crash_input {
            std::fs::write(dir.join("input.bin"), input).map_err(io)?;
        }
        Ok(rel)
    }

    fn driver_round(&mut self) -> Result<(), CampaignError> {
        let ids = self.select_drivers();
        let picks: Vec<usize> = ids
            .iter()
            .filter_map(|id| self.state.pool.iter().position(|r| &r.driver.id == id))
            .collect();
        for &i in &picks {
            self.state.pool[i].state = DriverState::Running;
        }
        let results = self.run_slices(&picks);
        let energy = self.state.config.energy;
        let seconds = self.state.config.slice_seconds();
        for (&i, result) in picks.iter().zip(results) {
            self.state.counters.slices += 1;
            let group = self.state.pool[i].driver.group.clone();
            match result {
                Ok(rep) => {
                    let eff = apply_slice_result(&mut self.state.pool[i], &rep, &mut self.state.global, energy)?;
                    let frac = self.state.pool[i].coverage.fraction();
                    self.scheduler.record_execution(&group, frac);
                    if eff.retired {
                        self.state.counters.bugs += 1;
                        let rel = self.store_artifact(&rep)?;
                        self.state.pool[i].crash_artifact = Some(rel);
                        self.scheduler.driver_left_pool(&group);
                    }
                }
                Err(ExecError::OutOfSpace { .. }) => {
                    *self.state.counters.failures.entry(FailureCategory::OutOfSpace).or_insert(0) += 1;
                    self.state.pool[i].state = DriverState::RetiredExhausted;
                    self.scheduler.driver_left_pool(&group);
                }
                Err(ExecError::CoverageParse(_)) => {
                    self.state.counters.failed_slices += 1;
                    let r = &mut self.state.pool[i];
                    r.exec_seconds += seconds;
                    r.slices += 1;
                    r.state = DriverState::Idle;
                }
                Err(e) => {
                    for &j in &picks {
                        if self.state.pool[j].state == DriverState::Running {
                            self.state.pool[j].state = DriverState::Idle;
                        }
                    }
                    return Err(e.into());
                }
            }
        }
        self.state.selections.push(ids);
        Ok(())
    }

    /// One round: group path, then driver path.
    pub fn step(&mut self) -> Result<(), CampaignError> {
        self.group_round()?;
        self.driver_round()?;
        self.state.tick += 1;
        self.state.coverage_series.push(SeriesPoint {
            slice_index: self.state.tick,
            cumulative_regions: self.state.global.len() as u64,
        });
        Ok(())
    }

    /// Runs until `max_ticks` rounds (or the wall-clock limit in real mode),
    /// saving to the configured state file at checkpoints and at the end. On
    /// an unrecoverable error the last consistent state is saved first.
    pub fn run(&mut self) -> Result<CampaignReport, CampaignError> {
        self.run_until(self.state.config.max_ticks)
    }

    /// Like `run`, but stops after round `stop_tick` (never past `max_ticks`).
    pub fn run_until(&mut self, stop_tick: u64) -> Result<CampaignReport, CampaignError> {
        let start = Instant::now();
        let stop = stop_tick.min(self.state.config.max_ticks);
        while self.state.tick < stop {
            if self.state.config.mode == Mode::Real {
                if let Some(limit) = self.state.config.wall_clock_seconds {
                    if start.elapsed().as_secs() >= limit {
                        break;
                    }
                }
            }
            if let Err(e) = self.step() {
                self.checkpoint()?;
                return Err(e);
            }
            let every = self.state.config.checkpoint_every;
            if every > 0 && self.state.tick.is_multiple_of(every) {
                self.checkpoint()?;
            }
        }
        self.checkpoint()?;
        Ok(self.report())
    }

    fn checkpoint(&mut self) -> Result<(), CampaignError> {
        if let Some(path) = self.state.config.state_file.clone() {
            self.state().save(&path)?;
        }
        Ok(())
    }
}

/// Runs a campaign from scratch to completion.
pub fn run_campaign(config: CampaignConfig) -> Result<CampaignReport, CampaignError> {
    Campaign::new(config)?.run()
}
