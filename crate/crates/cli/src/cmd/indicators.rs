use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use serde::Serialize;

use emoevent_core::indicator::{
    compose_bei_indicators, expand_template, load_registry, parse_surface_list, prune, registry_stats,
    Excluded, IndicatorRegistry, PatternClass, VerbLexicon,
};

use crate::config::Settings;

#[derive(Subcommand, Debug)]
pub enum IndicatorsCmd {
    /// Count indicators per pattern class and polarity.
    Stats {
        #[arg(long)]
        registry: PathBuf,
        /// Write the full report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instantiate a template class (bai_V, V_po, cuo_V, V_cuo, V_dui, lou_V) over a verb lexicon.
    Expand {
        #[arg(long)]
        class: PatternClass,
        #[arg(long)]
        verbs: PathBuf,
        /// Registry TSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Prefix every verb of a lexicon with 被.
    Compose {
        #[arg(long)]
        verbs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop weak and ambiguous indicators.
    Prune {
        #[arg(long)]
        registry: PathBuf,
        /// One surface per line.
        #[arg(long)]
        weak: Option<PathBuf>,
        /// One surface per line.
        #[arg(long)]
        ambiguous: Option<PathBuf>,
        /// Pruned registry TSV.
        #[arg(long)]
        out: PathBuf,
        /// Excluded entries and warnings as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct PruneReport<'a> {
    kept: usize,
    excluded: &'a [Excluded],
    warnings: &'a [String],
}

fn surface_list(path: Option<&Path>) -> Result<BTreeSet<String>> {
    match path {
        Some(p) => Ok(parse_surface_list(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )),
        None => Ok(BTreeSet::new()),
    }
}

fn registry_tsv(indicators: Vec<emoevent_core::indicator::Indicator>) -> Result<String> {
    Ok(IndicatorRegistry::from_indicators(indicators)?.to_tsv())
}

pub fn run(cmd: IndicatorsCmd, settings: &Settings) -> Result<()> {
    match cmd {
        IndicatorsCmd::Stats { registry, out } => {
            let stats = registry_stats(&load_registry(&registry)?);
            if let Some(out) = out {
                settings.write_json(&out, &stats)?;
            }
            let classes: Vec<String> = stats
                .by_class
                .iter()
                .filter(|c| c.count > 0)
                .map(|c| format!("{} {}", c.class, c.count))
                .collect();
            let p = &stats.by_polarity;
            println!(
                "{} indicators: {} positive, {} neutral, {} negative ({})",
                stats.total,
                p.positive,
                p.neutral,
                p.negative,
                classes.join(", ")
            );
            if !stats.mismatches.is_empty() {
                bail!("counts differ from the registry's expected counts: {}", stats.mismatches.join("; "));
            }
        }
        IndicatorsCmd::Expand { class, verbs, out } => {
            let lexicon = VerbLexicon::load(&verbs)?;
            let expanded = expand_template(class, &lexicon)?;
            let n = expanded.len();
            settings.write(&out, &registry_tsv(expanded)?)?;
            println!("expanded {n} {class} indicators from {} verbs", lexicon.len());
        }
        IndicatorsCmd::Compose { verbs, out } => {
            let lexicon = VerbLexicon::load(&verbs)?;
            let composed = compose_bei_indicators(&lexicon)?;
            let n = composed.len();
            settings.write(&out, &registry_tsv(composed)?)?;
            println!("composed {n} 被 indicators");
        }
        IndicatorsCmd::Prune {
            registry,
            weak,
            ambiguous,
            out,
            report,
        } => {
            let registry = load_registry(&registry)?;
            let outcome = prune(&registry, &surface_list(weak.as_deref())?, &surface_list(ambiguous.as_deref())?);
            settings.write(&out, &outcome.registry.to_tsv())?;
            if let Some(path) = report {
                settings.write_json(
                    &path,
                    &PruneReport {
                        kept: outcome.registry.len(),
                        excluded: &outcome.excluded,
                        warnings: &outcome.warnings,
                    },
                )?;
            }
            println!(
                "kept {} of {} indicators, excluded {}, {} list warnings",
                outcome.registry.len(),
                registry.len(),
                outcome.excluded.len(),
                outcome.warnings.len()
            );
        }
    }
    Ok(())
}
