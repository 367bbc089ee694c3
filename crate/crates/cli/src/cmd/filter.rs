use std::io::BufReader;
use std::os::unix::net::UnixListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::Serialize;

use emoevent_core::event::EventStatus;
use emoevent_core::filter::{
    annotation_sheet, apply_filter, labeled_samples, merge_annotations, parse_annotation_sheet, pr_curve,
    slice_curves, split, train_filter, FilterModel, Label, LabeledSample, PRCurve, Scorer, SliceCurves, TrainConfig,
    TrainingMeta, DEFAULT_RECALL_FLOOR, DEFAULT_SAMPLES_PER_INDICATOR,
};
use emoevent_core::scorer::{run_conformance, serve, serve_socket, stub_score, ConformanceReport, ExternalScorer, ScorerEndpoint};

use super::{events_jsonl, load_events};
use crate::config::Settings;

#[derive(Subcommand, Debug)]
pub enum FilterCmd {
    /// Draw events per indicator into an annotation sheet.
    Sample {
        /// Raw events (JSONL).
        #[arg(long)]
        events: PathBuf,
        /// Events per indicator [config: filter.samples_per_indicator, default 10].
        #[arg(long)]
        per_indicator: Option<usize>,
        /// Sheet TSV with an empty label column.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the linear validity filter on labelled sheets.
    Train {
        /// One sheet, or several annotators' sheets merged by majority vote.
        #[arg(long = "annotations", required = true, num_args = 1..)]
        annotations: Vec<PathBuf>,
        /// Model JSON.
        #[arg(long)]
        out: PathBuf,
        /// Training summary and test-split curve as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Minimum validation recall for the threshold [config: filter.recall_floor, default 0.8].
        #[arg(long)]
        recall_floor: Option<f64>,
    },
    /// Precision-recall curve of a scorer on labelled sheets.
    PrCurve {
        #[command(flatten)]
        scorer: ScorerArgs,
        #[arg(long = "annotations", required = true, num_args = 1..)]
        annotations: Vec<PathBuf>,
        /// Curve JSON, overall and split into explicit and 被 slices.
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep events scoring at or above the threshold.
    Apply {
        #[command(flatten)]
        scorer: ScorerArgs,
        /// Overrides the model's threshold; required with --scorer.
        #[arg(long)]
        threshold: Option<f64>,
        /// Triaged events (JSONL).
        #[arg(long)]
        events: PathBuf,
        /// Accepted events.
        #[arg(long)]
        out: PathBuf,
        /// Filtered-out events.
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Answer scorer-protocol requests on stdin/stdout or a Unix socket.
    Serve {
        /// Answer with a fixed hash-derived score per text.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        stub: bool,
        /// Score with a trained model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Listen here instead of using the standard streams.
        #[arg(long)]
        socket: Option<PathBuf>,
    },
    /// Check an external scorer against the protocol.
    Conformance {
        /// `unix:<path>` or a command line, e.g. "emoevent filter serve --stub".
        #[arg(long)]
        scorer: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct ScorerArgs {
    /// Trained model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// External scorer: `unix:<path>` or a command line.
    #[arg(long)]
    scorer: Option<String>,
}

enum LoadedScorer {
    Model(FilterModel),
    External(ExternalScorer),
}

impl LoadedScorer {
    fn load(args: &ScorerArgs) -> Result<Self> {
        match (&args.model, &args.scorer) {
            (Some(path), _) => Ok(LoadedScorer::Model(load_model(path)?)),
            (None, Some(spec)) => Ok(LoadedScorer::External(ExternalScorer {
                endpoint: ScorerEndpoint::parse(spec)?,
            })),
            (None, None) => bail!("pass --model or --scorer"),
        }
    }

    fn as_scorer(&self) -> &dyn Scorer {
        match self {
            LoadedScorer::Model(m) => m,
            LoadedScorer::External(e) => e,
        }
    }
}

fn load_model(path: &Path) -> Result<FilterModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn read_sheet(path: &Path) -> Result<Vec<(String, Option<Label>)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_annotation_sheet(&text, &path.display().to_string())?)
}

/// A single sheet as is, or several merged by majority vote.
pub fn load_labeled(paths: &[PathBuf]) -> Result<Vec<LabeledSample>> {
    if let [single] = paths {
        return Ok(labeled_samples(&read_sheet(single)?));
    }
    Ok(merge_annotations(&annotator_sheets(paths)?)?.samples)
}

pub fn annotator_sheets(paths: &[PathBuf]) -> Result<Vec<(String, Vec<(String, Option<Label>)>)>> {
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((id, read_sheet(p)?))
        })
        .collect()
}

#[derive(Serialize)]
struct SplitSizes {
    train: usize,
    validation: usize,
    test: usize,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    threshold: f64,
    split: SplitSizes,
    training: Option<&'a TrainingMeta>,
    test_average_precision: f64,
    test_curve: &'a PRCurve,
}

#[derive(Serialize)]
struct CurveReport {
    samples: usize,
    average_precision: f64,
    overall: PRCurve,
    slices: SliceCurves,
}

fn serve_with<F>(socket: Option<&Path>, score: F) -> Result<()>
where
    F: FnMut(&str) -> emoevent_core::Result<f64>,
{
    let stats = match socket {
        Some(path) => {
            let listener = UnixListener::bind(path).with_context(|| format!("binding {}", path.display()))?;
            serve_socket(&listener, None, score)?
        }
        None => serve(BufReader::new(std::io::stdin().lock()), std::io::stdout().lock(), score)?,
    };
    tracing::info!("answered {} requests, {} error records", stats.answered, stats.errors);
    Ok(())
}

pub fn run(cmd: FilterCmd, settings: &Settings) -> Result<()> {
    match cmd {
        FilterCmd::Sample {
            events,
            per_indicator,
            out,
        } => {
            let k = per_indicator
                .or(settings.file.filter.samples_per_indicator)
                .unwrap_or(DEFAULT_SAMPLES_PER_INDICATOR);
            let events = load_events(&events)?;
            let sample = emoevent_core::filter::sample_for_annotation(&events, k, settings.seed)?;
            settings.write(&out, &annotation_sheet(&sample))?;
            println!("sampled {} of {} events for annotation (up to {k} per indicator)", sample.len(), events.len());
        }
        FilterCmd::Train {
            annotations,
            out,
            report,
            recall_floor,
        } => {
            let labeled = load_labeled(&annotations)?;
            let parts = split(&labeled, settings.seed)?;
            let config = TrainConfig {
                recall_floor: recall_floor
                    .or(settings.file.filter.recall_floor)
                    .unwrap_or(DEFAULT_RECALL_FLOOR),
                ..TrainConfig::default()
            };
            let model = train_filter(&parts.train, &parts.validation, &config, settings.seed)?;
            let test_curve = model.curve(&parts.test)?;
            settings.write_json(&out, &model)?;
            let summary = TrainReport {
                threshold: model.threshold,
                split: SplitSizes {
                    train: parts.train.len(),
                    validation: parts.validation.len(),
                    test: parts.test.len(),
                },
                training: model.training_meta.as_ref(),
                test_average_precision: test_curve.average_precision(),
                test_curve: &test_curve,
            };
            if let Some(path) = report {
                settings.write_json(&path, &summary)?;
            }
            let (p, r) = model
                .training_meta
                .as_ref()
                .map_or((f64::NAN, f64::NAN), |m| (m.validation_precision, m.validation_recall));
            println!(
                "trained on {} samples (validation {}, test {}): threshold {:.4}, validation precision {p:.4} recall {r:.4}, test AP {:.4}",
                summary.split.train, summary.split.validation, summary.split.test, model.threshold, summary.test_average_precision
            );
        }
        FilterCmd::PrCurve {
            scorer,
            annotations,
            out,
        } => {
            let labeled = load_labeled(&annotations)?;
            let loaded = LoadedScorer::load(&scorer)?;
            let overall = pr_curve(loaded.as_scorer(), &labeled)?;
            let report = CurveReport {
                samples: labeled.len(),
                average_precision: overall.average_precision(),
                slices: slice_curves(loaded.as_scorer(), &labeled)?,
                overall,
            };
            settings.write_json(&out, &report)?;
            let slice_ap = |c: &Option<PRCurve>| c.as_ref().map_or("n/a".to_string(), |c| format!("{:.4}", c.average_precision()));
            println!(
                "{} points over {} samples: AP {:.4} (explicit {}, 被 {})",
                report.overall.points.len(),
                report.samples,
                report.average_precision,
                slice_ap(&report.slices.explicit),
                slice_ap(&report.slices.bei)
            );
        }
        FilterCmd::Apply {
            scorer,
            threshold,
            events,
            out,
            rejected,
        } => {
            let loaded = LoadedScorer::load(&scorer)?;
            let threshold = match (&loaded, threshold) {
                (_, Some(t)) => t,
                (LoadedScorer::Model(m), None) => m.threshold,
                (LoadedScorer::External(_), None) => bail!("--threshold is required with --scorer"),
            };
            if !(0.0..=1.0).contains(&threshold) {
                bail!("threshold {threshold} is outside [0,1]");
            }
            let events: Vec<_> = load_events(&events)?
                .into_iter()
                .filter(|e| e.status != EventStatus::TriagedOutNeutral)
                .collect();
            let outcome = apply_filter(loaded.as_scorer(), threshold, events)?;
            settings.write(&out, &events_jsonl(&outcome.accepted)?)?;
            if let Some(path) = rejected {
                settings.write(&path, &events_jsonl(&outcome.filtered_out)?)?;
            }
            println!(
                "accepted {} events, filtered out {} at threshold {threshold:.4}",
                outcome.accepted.len(),
                outcome.filtered_out.len()
            );
        }
        FilterCmd::Serve { stub, model, socket } => {
            if stub {
                serve_with(socket.as_deref(), |t| Ok(stub_score(t)))?;
            } else {
                let model = load_model(model.as_deref().expect("clap requires --model without --stub"))?;
                serve_with(socket.as_deref(), |t| Ok(model.score(t)))?;
            }
        }
        FilterCmd::Conformance { scorer, out } => {
            let report: ConformanceReport = run_conformance(&ScorerEndpoint::parse(&scorer)?);
            if let Some(path) = out {
                settings.write_json(&path, &report)?;
            }
            for check in &report.checks {
                eprintln!("{} {}: {}", if check.passed { "ok  " } else { "FAIL" }, check.name, check.detail);
            }
            let passed = report.checks.iter().filter(|c| c.passed).count();
            println!("{passed}/{} conformance checks passed", report.checks.len());
            if !report.passed() {
                bail!("scorer does not conform to the protocol");
            }
        }
    }
    Ok(())
}
