//! Driver pool: saturation scores, roulette-wheel batch selection and slice
//! feedback.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{CoverageMap, SliceReport};
use crate::factory::DriverSource;

/// Slices of credit a fresh driver starts with.
pub const DEFAULT_ENERGY: u32 = 10;
/// Credit returned when a slice finds new coverage.
pub const DEFAULT_REFUND: u32 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("stillborn rate is undefined without queries")]
    NoQueries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverState {
    Idle,
    Running,
    RetiredBug,
    RetiredExhausted,
}

impl DriverState {
    pub fn is_retired(self) -> bool {
        matches!(self, DriverState::RetiredBug | DriverState::RetiredExhausted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverRecord {
    pub driver: DriverSource,
    pub binary: PathBuf,
    pub energy: u32,
    pub coverage: CoverageMap,
    pub exec_seconds: f64,
    pub slices: u64,
    pub state: DriverState,
    pub crash_artifact: Option<PathBuf>,
    /// Admission order; lower is older.
    pub created: u64,
}

impl DriverRecord {
    pub fn new(driver: DriverSource, binary: PathBuf, total_regions: Option<u64>, energy: u32, created: u64) -> Self {
        DriverRecord {
            driver,
            binary,
            energy,
            coverage: CoverageMap::new(total_regions),
            exec_seconds: 0.0,
            slices: 0,
            state: DriverState::Idle,
            crash_artifact: None,
            created,
        }
    }

    pub fn id(&self) -> &str {
        &self.driver.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    /// Never executed; goes ahead of every scored driver.
    Fresh,
    Scored(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    pub initial: u32,
    pub refund: u32,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig { initial: DEFAULT_ENERGY, refund: DEFAULT_REFUND }
    }
}

/// Energy weight in (0, 1]: remaining slices over the starting energy, with
/// exhausted drivers kept at the weight of one slice.
pub fn energy_weight(energy: u32, initial: u32) -> f64 {
    energy.max(1) as f64 / initial.max(1) as f64
}

/// Coverage per second of execution, scaled by the energy weight.
pub fn driver_score(record: &DriverRecord, initial_energy: u32) -> Score {
    if record.exec_seconds <= 0.0 {
        return Score::Fresh;
    }
    let rate = record.coverage.len() as f64 / record.exec_seconds;
    Score::Scored(rate * energy_weight(record.energy, initial_energy))
}

fn selectable(r: &DriverRecord) -> bool {
    r.state == DriverState::Idle
}

/// Fresh drivers first, oldest first; remaining slots by roulette wheel over
/// the scores, without replacement. When every remaining score is zero the
/// draw is uniform.
pub fn roulette_select<R: Rng + ?Sized>(pool: &[DriverRecord], n: usize, initial_energy: u32, rng: &mut R) -> Vec<String> {
    let mut fresh: Vec<&DriverRecord> = Vec::new();
    let mut scored: Vec<(&DriverRecord, f64)> = Vec::new();
    for r in pool.iter().filter(|r| selectable(r)) {
        match driver_score(r, initial_energy) {
            Score::Fresh => fresh.push(r),
            Score::Scored(v) => scored.push((r, v.max(0.0))),
        }
    }
    fresh.sort_by_key(|r| r.created);
    let mut out: Vec<String> = fresh.iter().take(n).map(|r| r.id().to_string()).collect();
    while out.len() < n && !scored.is_empty() {
        let total: f64 = scored.iter().map(|(_, v)| v).sum();
        let pick = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut chosen = scored.len() - 1;
            for (i, (_, v)) in scored.iter().enumerate() {
                if x < *v {
                    chosen = i;
                    break;
                }
                x -= v;
            }
            // Floating leftovers must not land on a zero-weight entry.
            while scored[chosen].1 == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..scored.len())
        };
        out.push(scored.remove(pick).0.id().to_string());
    }
    out
}

/// Selection probabilities of a single roulette draw over scored drivers.
pub fn selection_probabilities(pool: &[DriverRecord], initial_energy: u32) -> Vec<(String, f64)> {
    let scored: Vec<(&DriverRecord, f64)> = pool
        .iter()
        .filter(|r| selectable(r))
        .filter_map(|r| match driver_score(r, initial_energy) {
            Score::Scored(v) => Some((r, v.max(0.0))),
            Score::Fresh => None,
        })
        .collect();
    let total: f64 = scored.iter().map(|(_, v)| v).sum();
    let n = scored.len() as f64;
    scored
        .into_iter()
        .map(|(r, v)| (r.id().to_string(), if total > 0.0 { v / total } else { 1.0 / n }))
        .collect()
}

/// Cycles through selectable drivers in admission order, ignoring scores.
pub fn round_robin_select(pool: &[DriverRecord], n: usize, cursor: &mut u64) -> Vec<String> {
    let mut eligible: Vec<&DriverRecord> = pool.iter().filter(|r| selectable(r)).collect();
    eligible.sort_by_key(|r| r.created);
    if eligible.is_empty() {
        return Vec::new();
    }
    let start = eligible.iter().position(|r| r.created >= *cursor).unwrap_or(0);
    let take = n.min(eligible.len());
    let picked: Vec<&DriverRecord> = (0..take).map(|i| eligible[(start + i) % eligible.len()]).collect();
    *cursor = picked.last().map_or(*cursor, |r| r.created + 1);
    picked.into_iter().map(|r| r.id().to_string()).collect()
}

/// What a slice changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceEffect {
    pub new_for_driver: usize,
    pub new_global: usize,
    pub retired: bool,
}

/// Folds a finished slice into the driver and the campaign-wide coverage.
pub fn apply_slice_result(
    record: &mut DriverRecord,
    report: &SliceReport,
    global: &mut CoverageMap,
    energy: EnergyConfig,
) -> Result<SliceEffect, SchedError> {
    if report.driver != record.driver.id {
        return Err(SchedError::Contract(format!(
            "slice report for {} applied to {}",
            report.driver, record.driver.id
        )));
    }
    if record.state != DriverState::Running {
        return Err(SchedError::Contract(format!("driver {} is not running", record.driver.id)));
    }
    let new_for_driver = record.coverage.absorb(&report.new_regions);
    let new_global = global.absorb(&report.new_regions);
    record.exec_seconds += report.exec_seconds.max(0.0);
    record.slices += 1;
    record.energy = record.energy.saturating_sub(1);
    if new_for_driver > 0 {
        record.energy = (record.energy + energy.refund).min(energy.initial);
    }
    record.state = if report.crashed { DriverState::RetiredBug } else { DriverState::Idle };
    Ok(SliceEffect { new_for_driver, new_global, retired: report.crashed })
}

/// Fraction of queries that did not yield a usable driver.
pub fn stillborn_rate(usable: u64, queries: u64) -> Result<f64, SchedError> {
    if queries == 0 {
        return Err(SchedError::NoQueries);
    }
    if usable > queries {
        return Err(SchedError::Contract(format!("{usable} usable drivers from {queries} queries")));
    }
    Ok(1.0 - usable as f64 / queries as f64)
}
