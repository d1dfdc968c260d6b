use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::driver_sched::{stillborn_rate, DriverState};
use crate::factory::classify::FailureCategory;
use crate::group_sched::{GroupStatus, GroupSchedulerState};

use super::{CampaignState, SeriesPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverRow {
    pub id: String,
    pub group: Vec<String>,
    pub generation: u32,
    pub state: DriverState,
    pub slices: u64,
    pub exec_seconds: f64,
    pub energy: u32,
    pub regions: usize,
    pub artifact: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub members: Vec<String>,
    pub status: GroupStatus,
    pub attempts: u32,
    pub observed_coverage: f64,
    pub executed_slices: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub library: String,
    pub seed: u64,
    pub ticks: u64,
    pub groups_enumerated: u64,
    pub groups_selected: u64,
    pub drivers_accepted: u64,
    pub drivers_in_pool: u64,
    pub bugs: u64,
    pub queries: u64,
    pub compilable: u64,
    /// Undefined until the first query.
    pub stillborn_rate: Option<f64>,
    pub query_cost: f64,
    pub budget_exhausted: bool,
    pub failures: BTreeMap<String, u64>,
    pub missing_api_rejections: u64,
    pub early_crashes: u64,
    pub failed_slices: u64,
    pub total_regions: Option<u64>,
    pub final_coverage: u64,
    pub coverage_series: Vec<SeriesPoint>,
    pub drivers: Vec<DriverRow>,
    pub groups: Vec<GroupRow>,
}

fn group_rows(state: &GroupSchedulerState) -> Vec<GroupRow> {
    state
        .records
        .iter()
        .filter(|r| r.status != GroupStatus::Candidate || r.attempts > 0)
        .map(|r| GroupRow {
            members: r.group.iter().map(str::to_string).collect(),
            status: r.status,
            attempts: r.attempts,
            observed_coverage: r.observed_coverage,
            executed_slices: r.executed_slices,
        })
        .collect()
}

pub fn report(state: &CampaignState) -> CampaignReport {
    let c = &state.counters;
    let mut failures: BTreeMap<String, u64> = FailureCategory::ALL.iter().map(|f| (f.tag().to_string(), 0)).collect();
    for (k, v) in &c.failures {
        *failures.entry(k.tag().to_string()).or_insert(0) += v;
    }
    CampaignReport {
        library: state.library.clone(),
        seed: state.config.seed,
        ticks: state.tick,
        groups_enumerated: state.groups.pulled,
        groups_selected: c.groups_selected,
        drivers_accepted: c.accepted,
        drivers_in_pool: state.pool.iter().filter(|d| !d.state.is_retired()).count() as u64,
        bugs: c.bugs,
        queries: c.queries,
        compilable: c.compilable,
        stillborn_rate: stillborn_rate(c.accepted, c.queries).ok(),
        query_cost: state.client.accumulated_cost,
        budget_exhausted: state.budget_exhausted,
        failures,
        missing_api_rejections: c.missing_api,
        early_crashes: c.early_crashes,
        failed_slices: c.failed_slices,
        total_regions: state.global.total_regions,
        final_coverage: state.global.len() as u64,
        coverage_series: state.coverage_series.clone(),
        drivers: state
            .pool
            .iter()
            .map(|d| DriverRow {
                id: d.driver.id.clone(),
                group: d.driver.group.iter().map(str::to_string).collect(),
                generation: d.driver.generation,
                state: d.state,
                slices: d.slices,
                exec_seconds: d.exec_seconds,
                energy: d.energy,
                regions: d.coverage.len(),
                artifact: d.crash_artifact.clone(),
            })
            .collect(),
        groups: group_rows(&state.groups),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (json, table, csv)")),
        }
    }
}

/// `slice_index,cumulative_regions` rows.
pub fn coverage_csv(report: &CampaignReport) -> String {
    let mut s = String::from("slice_index,cumulative_regions\n");
    for p in &report.coverage_series {
        let _ = writeln!(s, "{},{}", p.slice_index, p.cumulative_regions);
    }
    s
}

pub fn render(report: &CampaignReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => coverage_csv(report),
        ReportFormat::Table => table(report),
    }
}

fn table(r: &CampaignReport) -> String {
    let mut s = String::new();
    let sr = r.stillborn_rate.map_or("n/a".to_string(), |v| format!("{:.2}%", v * 100.0));
    let cov = match r.total_regions {
        Some(t) if t > 0 => format!("{} / {} ({:.2}%)", r.final_coverage, t, r.final_coverage as f64 * 100.0 / t as f64),
        _ => r.final_coverage.to_string(),
    };
    let rows: [(&str, String); 13] = [
        ("library", r.library.clone()),
        ("seed", r.seed.to_string()),
        ("ticks", r.ticks.to_string()),
        ("groups enumerated", r.groups_enumerated.to_string()),
        ("groups selected", r.groups_selected.to_string()),
        ("drivers accepted", r.drivers_accepted.to_string()),
        ("drivers in pool", r.drivers_in_pool.to_string()),
        ("queries", r.queries.to_string()),
        ("stillborn rate", sr),
        ("query cost", format!("{:.4}", r.query_cost)),
        ("early crashes", r.early_crashes.to_string()),
        ("bugs", r.bugs.to_string()),
        ("coverage", cov),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<18} {v}");
    }
    let _ = writeln!(s, "\nfailures");
    for (k, v) in &r.failures {
        let _ = writeln!(s, "  {k:<26} {v}");
    }
    let _ = writeln!(s, "  {:<26} {}", "missing_api", r.missing_api_rejections);
    if !r.drivers.is_empty() {
        let _ = writeln!(s, "\n{:<10} {:<18} {:>6} {:>8} {:>6} {:>8}  group", "driver", "state", "slices", "seconds", "energy", "regions");
        for d in &r.drivers {
            let state = serde_json::to_value(d.state).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:<10} {:<18} {:>6} {:>8.1} {:>6} {:>8}  {}",
                d.id,
                state,
                d.slices,
                d.exec_seconds,
                d.energy,
                d.regions,
                d.group.join(", ")
            );
        }
    }
    s
}
