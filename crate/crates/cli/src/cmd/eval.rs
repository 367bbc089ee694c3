use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use serde::Serialize;

use emoevent_core::eval::{
    ece_metrics, fleiss_kappa, parse_ece_corpus, planted_corpus, read_ece_corpus, read_gold, run_ece_ablation,
    sample_precision, AblationConfig, AblationReport, EceInstance, IndicatorMatcher, KappaResult, PlantedCorpusSpec,
    DEFAULT_DELIMITERS,
};
use emoevent_core::filter::merge_annotations;
use emoevent_core::indicator::load_registry;

use super::filter::{annotator_sheets, load_labeled};
use crate::config::Settings;

#[derive(Subcommand, Debug)]
pub enum EvalCmd {
    /// Fleiss' kappa across annotators' sheets.
    Kappa {
        #[arg(long = "annotations", required = true, num_args = 2..)]
        annotations: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample precision valid / (valid + invalid).
    Precision {
        /// Labelled sheets (merged by majority vote when several).
        #[arg(long = "annotations", num_args = 1.., conflicts_with_all = ["valid", "invalid"])]
        annotations: Vec<PathBuf>,
        #[arg(long, requires = "invalid")]
        valid: Option<u64>,
        #[arg(long, requires = "valid")]
        invalid: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clause-level precision, recall and F of proposed cause clauses.
    Ece {
        /// JSON array of [instance, clause] pairs.
        #[arg(long)]
        proposed: PathBuf,
        /// Gold instances (JSONL).
        #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus")]
        gold: Option<PathBuf>,
        /// Gold corpus in inline <cause>/<keyword> markup.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated cause classification with and without the indicator feature.
    Ablation {
        /// Corpus in inline markup.
        #[arg(long, required_unless_present = "planted", conflicts_with = "planted")]
        corpus: Option<PathBuf>,
        /// Generate a synthetic corpus of this many instances with indicators planted in cause clauses.
        #[arg(long)]
        planted: Option<usize>,
        /// Registry whose surfaces drive the indicator feature.
        #[arg(long)]
        registry: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct KappaReport {
    items: usize,
    raters: usize,
    kappa: KappaResult,
}

#[derive(Serialize)]
struct PrecisionReport {
    valid: u64,
    invalid: u64,
    precision: f64,
}

#[derive(Serialize)]
struct AblationPair {
    instances: usize,
    with_feature: AblationReport,
    without_feature: AblationReport,
}

fn ece_gold(gold: Option<PathBuf>, corpus: Option<PathBuf>) -> Result<Vec<EceInstance>> {
    match (gold, corpus) {
        (Some(path), _) => Ok(read_gold(&path)?),
        (None, Some(path)) => Ok(read_ece_corpus(&path, &DEFAULT_DELIMITERS)?),
        (None, None) => bail!("pass --gold or --corpus"),
    }
}

pub fn run(cmd: EvalCmd, settings: &Settings) -> Result<()> {
    match cmd {
        EvalCmd::Kappa { annotations, out } => {
            let merged = merge_annotations(&annotator_sheets(&annotations)?)?;
            if merged.ratings.is_empty() {
                bail!("no event was labelled by every annotator");
            }
            let report = KappaReport {
                items: merged.ratings.len(),
                raters: annotations.len(),
                kappa: fleiss_kappa(&merged.ratings)?,
            };
            if let Some(path) = out {
                settings.write_json(&path, &report)?;
            }
            let value = report.kappa.value().map_or("undefined".to_string(), |k| format!("{k:.4}"));
            println!("Fleiss' kappa {value} over {} items, {} raters", report.items, report.raters);
        }
        EvalCmd::Precision {
            annotations,
            valid,
            invalid,
            out,
        } => {
            let (valid, invalid) = match (valid, invalid) {
                (Some(v), Some(i)) => (v, i),
                _ if !annotations.is_empty() => {
                    let labeled = load_labeled(&annotations)?;
                    let v = labeled.iter().filter(|s| s.label.is_valid()).count() as u64;
                    (v, labeled.len() as u64 - v)
                }
                _ => bail!("pass --annotations or both --valid and --invalid"),
            };
            let report = PrecisionReport {
                valid,
                invalid,
                precision: sample_precision(valid, invalid)?,
            };
            if let Some(path) = out {
                settings.write_json(&path, &report)?;
            }
            println!("precision {:.4} ({valid} valid of {})", report.precision, valid + invalid);
        }
        EvalCmd::Ece {
            proposed,
            gold,
            corpus,
            out,
        } => {
            let gold = ece_gold(gold, corpus)?;
            let text = std::fs::read_to_string(&proposed).with_context(|| format!("reading {}", proposed.display()))?;
            let pairs: BTreeSet<(usize, usize)> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", proposed.display()))?;
            let metrics = ece_metrics(&pairs, &gold)?;
            if let Some(path) = out {
                settings.write_json(&path, &metrics)?;
            }
            println!(
                "P {:.4} R {:.4} F {:.4} ({} correct, {} proposed, {} annotated)",
                metrics.precision, metrics.recall, metrics.f_score, metrics.correct, metrics.proposed, metrics.annotated
            );
        }
        EvalCmd::Ablation {
            corpus,
            planted,
            registry,
            folds,
            out,
        } => {
            let surfaces: Vec<String> = load_registry(&registry)?.iter().map(|i| i.surface.clone()).collect();
            let instances = match (corpus, planted) {
                (Some(path), _) => read_ece_corpus(&path, &DEFAULT_DELIMITERS)?,
                (None, Some(n)) => {
                    let spec = PlantedCorpusSpec {
                        instances: n,
                        seed: settings.seed,
                        ..PlantedCorpusSpec::default()
                    };
                    parse_ece_corpus(&planted_corpus(&spec, &surfaces)?, "planted corpus", &DEFAULT_DELIMITERS)?
                }
                (None, None) => bail!("pass --corpus or --planted"),
            };
            let matcher = IndicatorMatcher::new(&surfaces)?;
            let config = AblationConfig {
                folds,
                seed: settings.seed,
                ..AblationConfig::default()
            };
            let pair = AblationPair {
                instances: instances.len(),
                with_feature: run_ece_ablation(&instances, &matcher, true, &config)?,
                without_feature: run_ece_ablation(&instances, &matcher, false, &config)?,
            };
            if let Some(path) = out {
                settings.write_json(&path, &pair)?;
            }
            let (w, wo) = (&pair.with_feature, &pair.without_feature);
            println!(
                "{} instances, {} folds: with indicator feature F {:.4} (P {:.4} R {:.4}), without F {:.4} (P {:.4} R {:.4})",
                pair.instances, w.folds_used, w.f_score, w.precision, w.recall, wo.f_score, wo.precision, wo.recall
            );
        }
    }
    Ok(())
}
