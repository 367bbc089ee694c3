use std::path::PathBuf;

use anyhow::Result;
use clap::Subcommand;

use emoevent_core::event::EventKind;
use emoevent_core::indicator::load_registry;
use emoevent_core::polarity::{assign_all, ImplicitTable, PolaritySources};

use super::{events_jsonl, load_events};
use crate::config::Settings;

#[derive(Subcommand, Debug)]
pub enum PolarityCmd {
    /// Label accepted events: explicit ones by indicator, 被 ones by the provider, implicit ones by table.
    Assign {
        /// Accepted events (JSONL).
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        /// Implicit-event polarity table (`surface<TAB>polarity`).
        #[arg(long)]
        implicit_table: PathBuf,
        /// Labelled events.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cmd: PolarityCmd, settings: &Settings) -> Result<()> {
    let PolarityCmd::Assign {
        events,
        registry,
        implicit_table,
        out,
    } = cmd;
    let events = load_events(&events)?;
    let registry = load_registry(&registry)?;
    let implicit = ImplicitTable::load(&implicit_table)?;
    let bei = events.iter().filter(|e| e.kind == EventKind::Bei).count();
    let gateway = if bei > 0 { settings.gateway()? } else { None };
    if bei > 0 && gateway.is_none() {
        println!(
            "dry run: would label {} events, asking {} about {bei} 被 events",
            events.len(),
            settings.provider_label()?
        );
        return Ok(());
    }
    let params = settings.params();
    let sources = PolaritySources {
        registry: &registry,
        implicit: &implicit,
        gateway: gateway.as_ref(),
        params: &params,
        clock: &settings.clock,
    };
    let report = assign_all(&events, &sources)?;
    settings.write(&out, &events_jsonl(&report.events)?)?;
    println!(
        "labelled {} events: {} positive, {} negative, {} need review",
        report.events.len(),
        report.positive,
        report.negative,
        report.needs_review
    );
    Ok(())
}
