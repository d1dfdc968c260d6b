//! Deterministic stand-in for a library under fuzzing.
//!
//! Every API owns a block of regions, and every pair of type-linked APIs owns
//! a smaller block reachable only when a driver calls both. A driver reaches a
//! random part of the blocks for the APIs it calls and discovers the rest of
//! them slice by slice. Drivers whose calls break one of the library's true
//! usage constraints crash, usually right away.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::constraints::{sat_implicit, DependencyIndex};
use crate::factory::filter::called_functions;
use crate::factory::DriverSource;
use crate::model::{ApiGroup, LibrarySpec};
use crate::seed;

use super::{ExecError, ExecutionAdapter, ShortRun, SliceReport, SliceRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimAdapterConfig {
    /// Median block size of an API; actual sizes spread log-uniformly by
    /// `api_weight_spread` either way, since APIs own very different
    /// amounts of code.
    pub regions_per_api: u64,
    pub api_weight_spread: f64,
    pub regions_per_link: u64,
    /// Range of the fraction of each block a driver can reach.
    pub reach_min: f64,
    pub reach_max: f64,
    /// Range of the per-slice probability of discovering a reachable region.
    pub rate_min: f64,
    pub rate_max: f64,
    /// Chance that a driver breaking a usage constraint crashes in tick 1;
    /// otherwise it crashes later, within `late_crash_max_tick`.
    pub irrational_crash: f64,
    pub late_crash_max_tick: u64,
    /// Chance that a well-formed driver crashes in tick 1 anyway.
    pub spurious_early_crash: f64,
    /// Chance that a well-formed driver hits a genuine bug, within `bug_max_tick`.
    pub bug_probability: f64,
    pub bug_max_tick: u64,
}

impl Default for SimAdapterConfig {
    fn default() -> Self {
        SimAdapterConfig {
            regions_per_api: 24,
            api_weight_spread: 4.0,
            regions_per_link: 8,
            reach_min: 0.5,
            reach_max: 1.0,
            rate_min: 0.05,
            rate_max: 0.3,
            irrational_crash: 0.7,
            late_crash_max_tick: 30,
            spurious_early_crash: 0.03,
            bug_probability: 0.05,
            bug_max_tick: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTargetModel {
    pub reachable_regions: BTreeSet<String>,
    pub discovery_rate: f64,
    pub crash_tick: Option<u64>,
}

pub struct SimAdapter {
    seed: u64,
    config: SimAdapterConfig,
    truth: LibrarySpec,
    /// Start and length of each API's block.
    api_block: BTreeMap<String, (u64, u64)>,
    link_block: BTreeMap<(String, String), u64>,
    total: u64,
}

fn region(k: u64) -> String {
    format!("r{k}")
}

impl SimAdapter {
    /// `truth` supplies the real usage constraints, independent of whatever
    /// the campaign itself was told.
    pub fn new(seed: u64, truth: LibrarySpec, config: SimAdapterConfig) -> Self {
        let names: BTreeSet<String> = truth.api_names().map(str::to_string).collect();
        let mut next = 0u64;
        let mut api_block = BTreeMap::new();
        let mut layout = seed::stream(seed, "layout");
        let spread = config.api_weight_spread.max(1.0).log2();
        for n in &names {
            let w = if spread > 0.0 { layout.random_range(-spread..=spread).exp2() } else { 1.0 };
            let len = ((config.regions_per_api as f64 * w).round() as u64).max(1);
            api_block.insert(n.clone(), (next, len));
            next += len;
        }
        let index = DependencyIndex::build(&truth, false);
        let mut link_block = BTreeMap::new();
        for a in &names {
            for b in index.neighbors(a).unwrap_or_default() {
                if a.as_str() < b {
                    link_block.insert((a.clone(), b.to_string()), next);
                    next += config.regions_per_link;
                }
            }
        }
        SimAdapter { seed, config, truth, api_block, link_block, total: next }
    }

    pub fn config(&self) -> &SimAdapterConfig {
        &self.config
    }

    fn pick_block<R: Rng>(&self, start: u64, len: u64, rng: &mut R, out: &mut BTreeSet<String>) {
        if len == 0 {
            return;
        }
        let f = rng.random_range(self.config.reach_min..=self.config.reach_max);
        let take = ((f * len as f64).ceil() as usize).clamp(1, len as usize);
        for i in index::sample(rng, len as usize, take) {
            out.insert(region(start + i as u64));
        }
    }

    pub fn model(&self, driver: &DriverSource) -> SimTargetModel {
        let mut rng = seed::stream(self.seed, &format!("model/{}", driver.id));
        let calls: BTreeSet<String> = called_functions(driver).into_iter().filter(|c| self.truth.contains(c)).collect();
        let mut reachable = BTreeSet::new();
        for c in &calls {
            let (start, len) = self.api_block[c];
            self.pick_block(start, len, &mut rng, &mut reachable);
        }
        for ((a, b), &start) in &self.link_block {
            if calls.contains(a) && calls.contains(b) {
                self.pick_block(start, self.config.regions_per_link, &mut rng, &mut reachable);
            }
        }
        let discovery_rate = rng.random_range(self.config.rate_min..=self.config.rate_max);
        let rational = sat_implicit(&ApiGroup::new(calls.iter().cloned()), &self.truth.implicit);
        let crash_tick = if !rational {
            if rng.random_bool(self.config.irrational_crash) {
                Some(1)
            } else {
                Some(rng.random_range(2..=self.config.late_crash_max_tick.max(2)))
            }
        } else if rng.random_bool(self.config.spurious_early_crash) {
            Some(1)
        } else if rng.random_bool(self.config.bug_probability) {
            Some(rng.random_range(2..=self.config.bug_max_tick.max(2)))
        } else {
            None
        };
        SimTargetModel { reachable_regions: reachable, discovery_rate, crash_tick }
    }
}

impl ExecutionAdapter for SimAdapter {
    fn total_regions(&self) -> Option<u64> {
        Some(self.total)
    }

    fn run_slice(&self, req: &SliceRequest<'_>) -> Result<SliceReport, ExecError> {
        if req.slice_index == 0 {
            return Err(ExecError::Contract("slice indices start at 1".into()));
        }
        let model = self.model(req.driver);
        let unseen: Vec<&String> = model.reachable_regions.iter().filter(|r| !req.prior.regions.contains(*r)).collect();
        let mut rng = seed::stream(self.seed, &format!("slice/{}/{}", req.driver.id, req.slice_index));
        let k = Binomial::new(unseen.len() as u64, model.discovery_rate)
            .map_err(|e| ExecError::Contract(e.to_string()))?
            .sample(&mut rng) as usize;
        let new_regions = index::sample(&mut rng, unseen.len(), k).into_iter().map(|i| unseen[i].clone()).collect();
        let crashed = model.crash_tick == Some(req.slice_index);
        let (crash_info, crash_input) = if crashed {
            let input: Vec<u8> = (0..16).map(|_| rng.random()).collect();
            (Some(format!("simulated crash in slice {} of driver {}", req.slice_index, req.driver.id)), Some(input))
        } else {
            (None, None)
        };
        Ok(SliceReport {
            driver: req.driver.id.clone(),
            new_regions,
            exec_seconds: req.seconds,
            crashed,
            crash_info,
            crash_input,
        })
    }

    fn short_run(&self, driver: &DriverSource, _binary: &Path) -> Result<ShortRun, ExecError> {
        let model = self.model(driver);
        Ok(if model.crash_tick == Some(1) {
            ShortRun { crashed: true, diagnostics: format!("driver {} crashed during the first tick", driver.id) }
        } else {
            ShortRun { crashed: false, diagnostics: String::new() }
        })
    }
}
