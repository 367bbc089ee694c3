use std::path::PathBuf;

use anyhow::Result;
use clap::Subcommand;

use emoevent_core::event::{EventKind, EventPolarity};
use emoevent_core::kb::{check_storable, coverage, kb_stats, read_node_list, KbFilter, KbStore, KnowledgeBase, Matcher};

use super::load_events;
use crate::config::Settings;

#[derive(Subcommand, Debug)]
pub enum KbCmd {
    /// Add labelled events; surfaces already stored are left alone.
    Append {
        /// Knowledge base JSONL (created if missing).
        #[arg(long)]
        kb: PathBuf,
        /// Labelled events (JSONL). Unlabelled or unaccepted ones are skipped.
        #[arg(long)]
        events: PathBuf,
    },
    /// Counts by kind and polarity.
    Stats {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print matching events as JSONL.
    Query {
        #[arg(long)]
        kb: PathBuf,
        /// explicit_nonneutral, bei or implicit.
        #[arg(long)]
        kind: Option<EventKind>,
        /// positive or negative.
        #[arg(long)]
        polarity: Option<EventPolarity>,
        #[arg(long)]
        indicator: Option<String>,
        /// Substring of the event surface.
        #[arg(long)]
        contains: Option<String>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the knowledge base in surface order.
    Export {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep events flagged for review.
        #[arg(long)]
        include_needs_review: bool,
    },
    /// Share of an external node list found in the knowledge base.
    Coverage {
        #[arg(long)]
        kb: PathBuf,
        /// One node per line.
        #[arg(long)]
        nodes: PathBuf,
        /// exact or normalized-exact.
        #[arg(long, default_value = "exact")]
        matcher: Matcher,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cmd: KbCmd, settings: &Settings) -> Result<()> {
    match cmd {
        KbCmd::Append { kb, events } => {
            let (storable, skipped): (Vec<_>, Vec<_>) =
                load_events(&events)?.into_iter().partition(|e| check_storable(e).is_ok());
            let mut store = KbStore::open(&kb)?;
            let report = if settings.dry_run {
                let mut preview = store.kb().clone();
                preview.append(&storable)?
            } else {
                store.append(&storable)?
            };
            println!(
                "inserted {} events, {} already present, {} skipped as unlabelled or unaccepted",
                report.inserted.len(),
                report.collisions.len(),
                skipped.len()
            );
        }
        KbCmd::Stats { kb, out } => {
            let stats = kb_stats(&KnowledgeBase::load(&kb)?);
            if let Some(path) = out {
                settings.write_json(&path, &stats)?;
            }
            let k = &stats.by_kind;
            println!(
                "{} events: {} explicit, {} 被, {} implicit; {} positive, {} negative",
                stats.total, k.explicit_nonneutral, k.bei, k.implicit, stats.positive, stats.negative
            );
        }
        KbCmd::Query {
            kb,
            kind,
            polarity,
            indicator,
            contains,
            out,
        } => {
            let kb = KnowledgeBase::load(&kb)?;
            let filter = KbFilter {
                kind,
                polarity,
                indicator,
                substring: contains,
            };
            let hits: Vec<_> = kb.query(&filter).into_iter().cloned().collect();
            let text = super::events_jsonl(&hits)?;
            match out {
                Some(path) => {
                    settings.write(&path, &text)?;
                    println!("{} of {} events match", hits.len(), kb.len());
                }
                None => print!("{text}"),
            }
        }
        KbCmd::Export {
            kb,
            out,
            include_needs_review,
        } => {
            let kb = KnowledgeBase::load(&kb)?;
            let text = kb.to_jsonl(include_needs_review)?;
            settings.write(&out, &text)?;
            println!("exported {} of {} events", text.lines().count(), kb.len());
        }
        KbCmd::Coverage { kb, nodes, matcher, out } => {
            let kb = KnowledgeBase::load(&kb)?;
            let cov = coverage(&read_node_list(&nodes)?, matcher, &kb)?;
            if let Some(path) = out {
                settings.write_json(&path, &cov)?;
            }
            println!(
                "{} of {} nodes found ({}, ratio {:.5})",
                cov.matched,
                cov.total,
                cov.percent(),
                cov.ratio
            );
        }
    }
    Ok(())
}
