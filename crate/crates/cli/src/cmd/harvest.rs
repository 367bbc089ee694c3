use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Subcommand};
use serde::Serialize;

use emoevent_core::event::{EmotionalEvent, EventKind, EventStatus};
use emoevent_core::harvest::{
    harvest_all, ingest_implicit, triage_bei_neutral, BatchSummary, HarvestOptions, IndicatorFailure,
};
use emoevent_core::indicator::load_registry;
use emoevent_core::prompt::PackLibrary;

use super::{events_jsonl, load_events};
use crate::config::Settings;

#[derive(Subcommand, Debug)]
pub enum HarvestCmd {
    /// Query every harvestable indicator once.
    Run(RunArgs),
    /// Like `run`, but continue from an existing checkpoint.
    Resume(RunArgs),
    /// Drop 被 events the provider judges emotionally neutral.
    Triage(TriageArgs),
}

#[derive(Args, Debug)]
pub struct TriageArgs {
    /// Harvested events (JSONL).
    #[arg(long)]
    events: PathBuf,
    /// Kept events, including the non-被 ones passed through untouched.
    #[arg(long)]
    out: PathBuf,
    /// Discarded neutral events.
    #[arg(long)]
    discarded: Option<PathBuf>,
    /// Counts and query errors as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Pruned registry TSV.
    #[arg(long)]
    registry: PathBuf,
    /// Prompt pack directory.
    #[arg(long, default_value = "data/packs")]
    packs: PathBuf,
    /// Harvested events (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Completed batches are recorded here; indicators already in it are not re-queried.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manually curated implicit events (`surface<TAB>polarity`) appended to the output.
    #[arg(long)]
    implicit: Option<PathBuf>,
    /// Per-batch accounting as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    batches: &'a [BatchSummary],
    failures: &'a [IndicatorFailure],
    skipped: &'a [String],
    cross_indicator_collisions: usize,
    implicit_events: usize,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct TriageReport<'a> {
    triaged: usize,
    kept: usize,
    discarded: usize,
    errors: &'a [IndicatorFailure],
}

fn run_harvest(args: RunArgs, resume: bool, settings: &Settings) -> Result<()> {
    if resume {
        match &args.checkpoint {
            Some(p) if p.exists() => {}
            Some(p) => bail!("checkpoint {} does not exist; use `harvest run` to start", p.display()),
            None => bail!("`harvest resume` needs --checkpoint"),
        }
    }
    let registry = load_registry(&args.registry)?;
    let packs = PackLibrary::load_dir(&args.packs)?;
    let implicit = match &args.implicit {
        Some(p) => ingest_implicit(p)?,
        None => Vec::new(),
    };
    let label = settings.provider_label()?;
    let harvestable = registry.iter().filter(|i| i.is_harvestable()).count();
    if settings.dry_run {
        println!(
            "dry run: would harvest {harvestable} of {} indicators via {label} and add {} implicit events",
            registry.len(),
            implicit.len()
        );
        return Ok(());
    }
    let Some(gateway) = settings.gateway()? else {
        unreachable!("a gateway is always built outside dry runs")
    };
    let options = HarvestOptions {
        workers: gateway.workers(),
        checkpoint: args.checkpoint.clone(),
        clock: settings.clock.clone(),
        ..HarvestOptions::default()
    };
    let report = harvest_all(&registry, &packs, &gateway, &settings.params(), &options)?;
    let mut events = report.events.clone();
    events.extend(implicit.iter().cloned());
    settings.write(&args.out, &events_jsonl(&events)?)?;
    if let Some(path) = &args.report {
        settings.write_json(
            path,
            &RunReport {
                batches: &report.batches,
                failures: &report.failures,
                skipped: &report.skipped,
                cross_indicator_collisions: report.cross_indicator_collisions,
                implicit_events: implicit.len(),
                warnings: &report.warnings,
            },
        )?;
    }
    let resumed = report.batches.iter().filter(|b| b.from_checkpoint).count();
    println!(
        "harvested {} events from {} indicators ({} from checkpoint, {} failed, {} skipped, {} cross-indicator duplicates); {} implicit events added",
        report.events.len(),
        report.batches.len(),
        resumed,
        report.failures.len(),
        report.skipped.len(),
        report.cross_indicator_collisions,
        implicit.len()
    );
    Ok(())
}

fn run_triage(paths: TriageArgs, settings: &Settings) -> Result<()> {
    let all = load_events(&paths.events)?;
    let (bei, rest): (Vec<EmotionalEvent>, Vec<EmotionalEvent>) = all
        .into_iter()
        .partition(|e| e.kind == EventKind::Bei && e.status == EventStatus::Raw);
    let Some(gateway) = settings.gateway()? else {
        println!(
            "dry run: would ask {} about {} 被 events",
            settings.provider_label()?,
            bei.len()
        );
        return Ok(());
    };
    let triaged = bei.len();
    let outcome = triage_bei_neutral(bei, &gateway, &settings.params())?;
    let kept_count = outcome.kept.len();
    let mut kept = rest;
    kept.extend(outcome.kept);
    settings.write(&paths.out, &events_jsonl(&kept)?)?;
    if let Some(path) = &paths.discarded {
        settings.write(path, &events_jsonl(&outcome.discarded)?)?;
    }
    let report = TriageReport {
        triaged,
        kept: kept_count,
        discarded: outcome.discarded.len(),
        errors: &outcome.errors,
    };
    if let Some(path) = &paths.report {
        settings.write_json(path, &report)?;
    }
    println!(
        "triaged {} 被 events: kept {}, discarded {} as neutral, {} query errors",
        report.triaged,
        report.kept,
        report.discarded,
        report.errors.len()
    );
    Ok(())
}

pub fn run(cmd: HarvestCmd, settings: &Settings) -> Result<()> {
    match cmd {
        HarvestCmd::Run(args) => run_harvest(args, false, settings),
        HarvestCmd::Resume(args) => run_harvest(args, true, settings),
        HarvestCmd::Triage(args) => run_triage(args, settings),
    }
}
