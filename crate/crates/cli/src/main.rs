use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dualfuzz::campaign::{render, Campaign, CampaignConfig, CampaignState, ReportFormat, ResumeOptions};
use dualfuzz::constraints::{EnumerationOptions, GroupEnumerator};
use dualfuzz::factory::classify::{classify_failure_with_budget, DEFAULT_TOKEN_BUDGET_CHARS};
use dualfuzz::factory::implicit::{merge_constraints, parse_implicit_constraints};
use dualfuzz::model::{load_library_spec, save_library_spec, LibrarySpec, DEFAULT_MAX_GROUP_LEN};

#[derive(Parser)]
#[command(name = "dualfuzz", version, about = "API-group driver generation and dual-scheduled library fuzzing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate valid and rational API groups as JSON lines.
    Solve(SolveArgs),
    /// Print the failure category of a diagnostics text.
    Classify(ClassifyArgs),
    /// Parse imply/conflict lines from a model response and optionally merge them into a spec.
    Constraints(ConstraintArgs),
    #[command(subcommand)]
    Campaign(CampaignCommand),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 2)]
    min: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_GROUP_LEN)]
    max: usize,
    /// Stop after this many groups.
    #[arg(long)]
    cap: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ignore the spec's imply/conflict constraints.
    #[arg(long)]
    no_implicit: bool,
    /// Let `T*` and `T` share a dependency edge.
    #[arg(long)]
    loose_pointer_match: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Diagnostics file; stdin when omitted.
    file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOKEN_BUDGET_CHARS)]
    token_budget: usize,
}

#[derive(Args)]
struct ConstraintArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Response text holding `imply(a, b)` / `conflict(a, b)` lines.
    #[arg(long)]
    response: PathBuf,
    /// Write the spec with the new constraints merged in.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CampaignCommand {
    /// Start a campaign from a TOML or JSON config.
    Run(RunArgs),
    /// Continue a campaign from its saved state.
    Resume(ResumeArgs),
    /// Render the report of a saved state.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Where to save the state; overrides the config.
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_ticks: Option<u64>,
    /// Save and stop after this many rounds.
    #[arg(long)]
    stop_after: Option<u64>,
    #[arg(long)]
    no_implicit: bool,
    #[arg(long)]
    random_groups: bool,
    #[arg(long)]
    round_robin_drivers: bool,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Args)]
struct ResumeArgs {
    #[arg(long)]
    state: PathBuf,
    /// Must match the seed recorded in the state.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_ticks: Option<u64>,
    #[arg(long)]
    stop_after: Option<u64>,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_spec(path: &Path) -> Result<LibrarySpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_library_spec(&text).with_context(|| format!("loading {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn solve(args: SolveArgs) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    let opts = EnumerationOptions {
        min_size: args.min,
        max_size: args.max,
        cap: args.cap,
        order_seed: args.seed,
        implicit: !args.no_implicit,
        loose_pointer_match: args.loose_pointer_match,
        ..Default::default()
    };
    let groups = GroupEnumerator::new(&spec, opts)?;
    let mut out = output(args.out.as_deref())?;
    let mut n = 0u64;
    for g in groups {
        let members: Vec<&str> = g.iter().collect();
        writeln!(out, "{}", serde_json::to_string(&members)?)?;
        n += 1;
    }
    out.flush()?;
    eprintln!("{n} groups");
    Ok(())
}

fn classify(args: ClassifyArgs) -> Result<()> {
    let mut text = String::new();
    match &args.file {
        Some(p) => text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            std::io::stdin().read_to_string(&mut text)?;
        }
    }
    println!("{}", classify_failure_with_budget(&text, args.token_budget).tag());
    Ok(())
}

fn constraints(args: ConstraintArgs) -> Result<()> {
    let mut spec = read_spec(&args.spec)?;
    let text = std::fs::read_to_string(&args.response).with_context(|| format!("reading {}", args.response.display()))?;
    let (found, rejected) = parse_implicit_constraints(&text, &spec);
    for c in &found {
        println!("{}", serde_json::to_string(c)?);
    }
    for line in &rejected {
        eprintln!("rejected: {line}");
    }
    if let Some(out) = &args.out {
        let added = merge_constraints(&mut spec, &found);
        std::fs::write(out, save_library_spec(&spec)).with_context(|| format!("writing {}", out.display()))?;
        eprintln!("{added} constraints added, spec written to {}", out.display());
    }
    Ok(())
}

fn finish(mut campaign: Campaign, stop_after: Option<u64>, format: ReportFormat) -> Result<()> {
    let stop = stop_after.unwrap_or(u64::MAX);
    let report = campaign.run_until(stop)?;
    print!("{}", render(&report, format));
    Ok(())
}

fn campaign(cmd: CampaignCommand) -> Result<()> {
    match cmd {
        CampaignCommand::Run(args) => {
            let mut cfg = CampaignConfig::load(&args.config)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(k) = args.max_ticks {
                cfg.max_ticks = k;
            }
            cfg.ablation.no_implicit |= args.no_implicit;
            cfg.ablation.random_groups |= args.random_groups;
            cfg.ablation.round_robin_drivers |= args.round_robin_drivers;
            if let Some(p) = args.state {
                cfg.state_file = Some(p);
            }
            if cfg.state_file.is_none() {
                cfg.state_file = Some(cfg.work_dir.join("state.json"));
            }
            let state_file = cfg.state_file.clone();
            let campaign = Campaign::new(cfg)?;
            let r = finish(campaign, args.stop_after, args.format);
            if let Some(p) = state_file {
                eprintln!("state: {}", p.display());
            }
            r
        }
        CampaignCommand::Resume(args) => {
            let mut state = CampaignState::load(&args.state)?;
            // Keep saving next to the file we resumed from.
            state.config.state_file = Some(args.state.clone());
            let campaign = Campaign::from_state(state, ResumeOptions { seed: args.seed, max_ticks: args.max_ticks })?;
            finish(campaign, args.stop_after, args.format)
        }
        CampaignCommand::Report(args) => {
            let state = CampaignState::load(&args.state)?;
            let report = dualfuzz::campaign::report(&state);
            let mut out = output(args.out.as_deref())?;
            out.write_all(render(&report, args.format).as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Classify(a) => classify(a),
        Command::Constraints(a) => constraints(a),
        Command::Campaign(c) => campaign(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
