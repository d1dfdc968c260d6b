//! Driver compilation and time-sliced execution behind adapter traits.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factory::DriverSource;

pub mod external;
pub mod sim;
pub mod toolchain;

pub use external::{parse_region_lines, ExternalAdapterConfig, ExternalFuzzerAdapter};
pub use sim::{SimAdapter, SimAdapterConfig, SimTargetModel};
pub use toolchain::{CommandToolchain, CommandToolchainConfig, ToyToolchain};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("environment error: {0}")]
    Environment(String),
    #[error("coverage export could not be parsed: {0}")]
    CoverageParse(String),
    #[error("working directory quota exceeded for driver {driver}: {used} > {quota} bytes")]
    OutOfSpace { driver: String, used: u64, quota: u64 },
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Covered region identifiers plus the instrumented total, when known.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMap {
    pub regions: BTreeSet<String>,
    pub total_regions: Option<u64>,
}

impl CoverageMap {
    pub fn new(total_regions: Option<u64>) -> Self {
        CoverageMap { regions: BTreeSet::new(), total_regions }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Covered fraction of the instrumented total; 0 when the total is unknown.
    pub fn fraction(&self) -> f64 {
        match self.total_regions {
            Some(t) if t > 0 => self.regions.len() as f64 / t as f64,
            _ => 0.0,
        }
    }

    /// Unions `regions` in place and returns how many were not present before.
    pub fn absorb<'a, I: IntoIterator<Item = &'a String>>(&mut self, regions: I) -> usize {
        regions.into_iter().filter(|r| self.regions.insert((*r).clone())).count()
    }
}

fn combined_total(a: Option<u64>, b: Option<u64>) -> Result<Option<u64>, ExecError> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => Err(ExecError::Contract(format!("conflicting region totals {x} and {y}"))),
        (x, y) => Ok(x.or(y)),
    }
}

pub fn merge_coverage(a: &CoverageMap, b: &CoverageMap) -> Result<CoverageMap, ExecError> {
    let total_regions = combined_total(a.total_regions, b.total_regions)?;
    Ok(CoverageMap { regions: a.regions.union(&b.regions).cloned().collect(), total_regions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub driver: String,
    /// Regions first reached by this driver during the slice.
    pub new_regions: BTreeSet<String>,
    pub exec_seconds: f64,
    pub crashed: bool,
    pub crash_info: Option<String>,
    /// The crashing input, when the adapter can recover it.
    #[serde(default)]
    pub crash_input: Option<Vec<u8>>,
}

pub struct SliceRequest<'a> {
    pub driver: &'a DriverSource,
    pub binary: &'a Path,
    /// Regions the driver already reached.
    pub prior: &'a CoverageMap,
    /// 1-based index of this slice among the driver's slices.
    pub slice_index: u64,
    pub seconds: f64,
}

/// Result of the short pre-admission run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortRun {
    pub crashed: bool,
    pub diagnostics: String,
}

pub trait ExecutionAdapter: Sync {
    fn total_regions(&self) -> Option<u64>;
    fn run_slice(&self, req: &SliceRequest<'_>) -> Result<SliceReport, ExecError>;
    /// Brief run used to reject drivers that crash on their own.
    fn short_run(&self, driver: &DriverSource, binary: &Path) -> Result<ShortRun, ExecError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompileResult {
    Binary(PathBuf),
    Failed(String),
}

pub trait Toolchain {
    /// `Err` only for problems with the toolchain itself; rejected source
    /// comes back as `CompileResult::Failed` with the diagnostics.
    fn compile(&self, driver: &DriverSource) -> Result<CompileResult, ExecError>;
}
