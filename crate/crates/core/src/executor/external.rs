//! Adapter for an external coverage-guided fuzzer driven by shell templates.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::factory::DriverSource;

use super::{ExecError, ExecutionAdapter, ShortRun, SliceReport, SliceRequest};

const CRASH_PREFIXES: [&str; 4] = ["crash-", "leak-", "timeout-", "oom-"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalAdapterConfig {
    /// Fuzzer invocation with `{bin}`, `{corpus}` and `{seconds}` placeholders.
    pub run_command: String,
    /// Coverage export with `{bin}` and `{corpus}` placeholders; must print
    /// one `<file>:<region-id>` per covered region.
    pub coverage_command: String,
    pub work_dir: PathBuf,
    /// Per-driver working directory limit.
    pub quota_bytes: u64,
    pub short_run_seconds: u64,
    pub total_regions: Option<u64>,
}

impl Default for ExternalAdapterConfig {
    fn default() -> Self {
        ExternalAdapterConfig {
            run_command: "{bin} -max_total_time={seconds} {corpus}".into(),
            coverage_command: "dualfuzz-coverage {bin} {corpus}".into(),
            work_dir: PathBuf::from("fuzz-work"),
            quota_bytes: 1 << 30,
            short_run_seconds: 15,
            total_regions: None,
        }
    }
}

/// Parses one covered region per line. Blank lines are skipped; a line
/// without a `file:id` shape fails the whole export.
pub fn parse_region_lines(text: &str) -> Result<BTreeSet<String>, ExecError> {
    let mut out = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match line.rsplit_once(':') {
            Some((file, id)) if !file.is_empty() && !id.is_empty() && !id.contains(char::is_whitespace) => {
                out.insert(line.to_string());
            }
            _ => return Err(ExecError::CoverageParse(format!("line {}: {line:?}", i + 1))),
        }
    }
    Ok(out)
}

pub struct ExternalFuzzerAdapter {
    config: ExternalAdapterConfig,
}

fn dir_size(dir: &Path) -> u64 {
    WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter_map(|e| e.metadata().ok())
        .filter(|m| m.is_file())
        .map(|m| m.len())
        .sum()
}

fn crash_files(dir: &Path) -> BTreeSet<PathBuf> {
    std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| CRASH_PREFIXES.iter().any(|pre| n.starts_with(pre)))
                })
                .collect()
        })
        .unwrap_or_default()
}

fn tail(text: &str, max: usize) -> String {
    let n = text.chars().count();
    text.chars().skip(n.saturating_sub(max)).collect()
}

struct RunOutcome {
    seconds: f64,
    crash: Option<(String, Option<Vec<u8>>)>,
}

impl ExternalFuzzerAdapter {
    pub fn new(config: ExternalAdapterConfig) -> Self {
        ExternalFuzzerAdapter { config }
    }

    fn driver_dir(&self, driver: &DriverSource) -> PathBuf {
        self.config.work_dir.join(&driver.id)
    }

    fn shell(&self, cmd: &str, cwd: &Path) -> Result<std::process::Output, ExecError> {
        let out = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .current_dir(cwd)
            .output()
            .map_err(|e| ExecError::Environment(format!("cannot run `{cmd}`: {e}")))?;
        if out.status.code() == Some(127) {
            return Err(ExecError::Environment(format!(
                "command not found: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(out)
    }

    fn fill(template: &str, bin: &Path, corpus: &Path, seconds: u64) -> String {
        template
            .replace("{bin}", &bin.display().to_string())
            .replace("{corpus}", &corpus.display().to_string())
            .replace("{seconds}", &seconds.to_string())
    }

    fn run(&self, driver: &DriverSource, binary: &Path, seconds: u64) -> Result<RunOutcome, ExecError> {
        let dir = self.driver_dir(driver);
        let corpus = dir.join("corpus");
        std::fs::create_dir_all(&corpus).map_err(|e| ExecError::Environment(format!("{}: {e}", corpus.display())))?;
        let before = crash_files(&dir);
        let bin = std::fs::canonicalize(binary).unwrap_or_else(|_| binary.to_path_buf());
        let cmd = Self::fill(&self.config.run_command, &bin, &corpus, seconds);
        let start = Instant::now();
        let out = self.shell(&cmd, &dir)?;
        let elapsed = start.elapsed().as_secs_f64().max(1e-3);
        let used = dir_size(&dir);
        if used > self.config.quota_bytes {
            return Err(ExecError::OutOfSpace { driver: driver.id.clone(), used, quota: self.config.quota_bytes });
        }
        let fresh: Vec<PathBuf> = crash_files(&dir).difference(&before).cloned().collect();
        let crash = if let Some(first) = fresh.first() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            Some((format!("{}\n{}", first.display(), tail(&stderr, 8_000)), std::fs::read(first).ok()))
        } else {
            None
        };
        Ok(RunOutcome { seconds: elapsed, crash })
    }
}

impl ExecutionAdapter for ExternalFuzzerAdapter {
    fn total_regions(&self) -> Option<u64> {
        self.config.total_regions
    }

    fn run_slice(&self, req: &SliceRequest<'_>) -> Result<SliceReport, ExecError> {
        let seconds = req.seconds.ceil().max(1.0) as u64;
        let outcome = self.run(req.driver, req.binary, seconds)?;
        let dir = self.driver_dir(req.driver);
        let bin = std::fs::canonicalize(req.binary).unwrap_or_else(|_| req.binary.to_path_buf());
        let cov_cmd = Self::fill(&self.config.coverage_command, &bin, &dir.join("corpus"), seconds);
        let cov = self.shell(&cov_cmd, &dir)?;
        if !cov.status.success() {
            return Err(ExecError::CoverageParse(format!(
                "coverage export failed: {}",
                String::from_utf8_lossy(&cov.stderr).trim()
            )));
        }
        let covered = parse_region_lines(&String::from_utf8_lossy(&cov.stdout))?;
        let new_regions = covered.into_iter().filter(|r| !req.prior.regions.contains(r)).collect();
        let (crashed, crash_info, crash_input) = match outcome.crash {
            Some((info, input)) => (true, Some(info), input),
            None => (false, None, None),
        };
        Ok(SliceReport {
            driver: req.driver.id.clone(),
            new_regions,
            exec_seconds: outcome.seconds,
            crashed,
            crash_info,
            crash_input,
        })
    }

    fn short_run(&self, driver: &DriverSource, binary: &Path) -> Result<ShortRun, ExecError> {
        let outcome = self.run(driver, binary, self.config.short_run_seconds)?;
        Ok(match outcome.crash {
            Some((info, _)) => ShortRun { crashed: true, diagnostics: info },
            None => ShortRun { crashed: false, diagnostics: String::new() },
        })
    }
}
