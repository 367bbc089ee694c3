//! Per-indicator generation with cap and dedup, whole-registry harvest with a
//! resumable checkpoint, 被-event neutrality triage, and implicit-event intake.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::error::{read_to_string, Error, Result};
use crate::event::{EmotionalEvent, EventKind, EventPolarity, EventStatus, GeneratedProvenance};
use crate::gateway::{
    parse_phrase_text, query_neutrality, CompletionParams, Gateway, RejectReason, RejectedLine,
};
use crate::indicator::{Indicator, IndicatorRegistry};
use crate::par::parallel_map;
use crate::prompt::{render_prompt, PackLibrary, PromptTemplate, REQUESTED_PHRASES};
use crate::text::nfc;

/// Outcome of one generation call for one indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationBatch {
    pub indicator_surface: String,
    pub requested: usize,
    pub raw_line_count: usize,
    pub accepted_events: Vec<EmotionalEvent>,
    pub duplicate_count: usize,
    pub rejected_count: usize,
    pub blank_line_count: usize,
    pub rejected: Vec<RejectedLine>,
    /// Set when nothing was accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl GenerationBatch {
    /// raw lines = accepted + duplicates + rejected + blank.
    pub fn reconciles(&self) -> bool {
        self.raw_line_count
            == self.accepted_events.len() + self.duplicate_count + self.rejected_count + self.blank_line_count
    }

    /// SHA-256 over the indicator, the accepted surfaces and the counts.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.indicator_surface.as_bytes());
        for event in &self.accepted_events {
            h.update(b"\n");
            h.update(event.surface.as_bytes());
        }
        h.update(
            format!(
                "|{}|{}|{}|{}",
                self.raw_line_count, self.duplicate_count, self.rejected_count, self.blank_line_count
            )
            .as_bytes(),
        );
        hex::encode(h.finalize())
    }
}

/// Renders, completes, parses, dedups and caps one indicator's batch.
pub fn harvest_indicator(
    indicator: &Indicator,
    examples: &crate::prompt::ExampleSet,
    template: &PromptTemplate,
    gateway: &Gateway,
    params: &CompletionParams,
    clock: &Clock,
) -> Result<GenerationBatch> {
    if !indicator.is_harvestable() {
        return Err(Error::Precondition(format!(
            "indicator `{}` is weak or ambiguous",
            indicator.surface
        )));
    }
    let prompt = render_prompt(indicator, examples, template)?;
    let raw = gateway.complete(&prompt, params)?;
    let parsed = parse_phrase_text(&raw.text, &indicator.surface);

    let provenance = GeneratedProvenance {
        prompt_hash: prompt.hash(),
        provider_id: raw.provider_id.clone(),
        timestamp: clock.now(),
        polarity_query: None,
    };
    let kind = EventKind::for_class(indicator.pattern_class);
    let mut seen = HashSet::new();
    let mut accepted = Vec::new();
    let mut duplicate_count = 0;
    let mut rejected = parsed.rejected;
    for phrase in parsed.accepted {
        if !seen.insert(phrase.clone()) {
            duplicate_count += 1;
        } else if accepted.len() >= REQUESTED_PHRASES {
            rejected.push(RejectedLine {
                line: phrase,
                reason: RejectReason::OverCap,
            });
        } else {
            let theme = &phrase[indicator.surface.len()..];
            accepted.push(EmotionalEvent::generated(&indicator.surface, theme, kind, provenance.clone()));
        }
    }
    let warning = accepted
        .is_empty()
        .then(|| format!("no usable phrases for `{}`", indicator.surface));
    if let Some(w) = &warning {
        tracing::warn!("{w}");
    }
    Ok(GenerationBatch {
        indicator_surface: indicator.surface.clone(),
        requested: REQUESTED_PHRASES,
        raw_line_count: raw.text.lines().count(),
        accepted_events: accepted,
        duplicate_count,
        rejected_count: rejected.len(),
        blank_line_count: parsed.blank_lines,
        rejected,
        warning,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointRecord {
    indicator: String,
    digest: String,
    batch: GenerationBatch,
}

/// Append-only JSONL of completed batches.
struct Checkpoint {
    file: Mutex<File>,
    path: PathBuf,
}

impl Checkpoint {
    /// Opens `path` for appending and returns the intact records already in it.
    /// A torn final line from a crash is ignored.
    fn open(path: &Path) -> Result<(Self, BTreeMap<String, GenerationBatch>)> {
        let mut done = BTreeMap::new();
        let mut torn_tail = false;
        if path.exists() {
            let text = read_to_string(path)?;
            torn_tail = !text.is_empty() && !text.ends_with('\n');
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CheckpointRecord>(line) {
                    Ok(rec) if rec.digest == rec.batch.digest() => {
                        done.insert(rec.indicator, rec.batch);
                    }
                    Ok(rec) => tracing::warn!("checkpoint digest mismatch for `{}`; will re-query", rec.indicator),
                    Err(e) => tracing::warn!("ignoring unreadable checkpoint line {}: {e}", i + 1),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if torn_tail {
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok((
            Checkpoint {
                file: Mutex::new(file),
                path: path.to_path_buf(),
            },
            done,
        ))
    }

    fn record(&self, batch: &GenerationBatch) -> Result<()> {
        let rec = CheckpointRecord {
            indicator: batch.indicator_surface.clone(),
            digest: batch.digest(),
            batch: batch.clone(),
        };
        let mut line = serde_json::to_string(&rec)?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone)]
pub struct HarvestOptions {
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    pub clock: Clock,
    pub template: PromptTemplate,
}

impl Default for HarvestOptions {
    fn default() -> Self {
        HarvestOptions {
            workers: 1,
            checkpoint: None,
            clock: Clock::System,
            template: PromptTemplate::v1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub indicator: String,
    pub raw_line_count: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub blank_lines: usize,
    pub digest: String,
    pub from_checkpoint: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorFailure {
    pub indicator: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub events: Vec<EmotionalEvent>,
    pub batches: Vec<BatchSummary>,
    pub failures: Vec<IndicatorFailure>,
    pub skipped: Vec<String>,
    /// Events dropped because an earlier indicator already produced the surface.
    pub cross_indicator_collisions: usize,
    pub warnings: Vec<String>,
}

impl HarvestReport {
    pub fn queried(&self) -> impl Iterator<Item = &BatchSummary> {
        self.batches.iter().filter(|b| !b.from_checkpoint)
    }
}

/// Harvests every non-weak, non-ambiguous indicator in registry order.
///
/// Indicators already recorded in the checkpoint are not re-queried. Per-indicator
/// failures are recorded and skipped; the call fails only if every queried
/// indicator failed.
pub fn harvest_all(
    registry: &IndicatorRegistry,
    packs: &PackLibrary,
    gateway: &Gateway,
    params: &CompletionParams,
    options: &HarvestOptions,
) -> Result<HarvestReport> {
    let (checkpoint, mut done) = match &options.checkpoint {
        Some(path) => {
            let (cp, done) = Checkpoint::open(path)?;
            (Some(cp), done)
        }
        None => (None, BTreeMap::new()),
    };

    let mut warnings = Vec::new();
    let skipped: Vec<String> = registry
        .iter()
        .filter(|i| !i.is_harvestable())
        .map(|i| i.surface.clone())
        .collect();
    let targets: Vec<&Indicator> = registry.iter().filter(|i| i.is_harvestable()).collect();
    if targets.is_empty() {
        warnings.push("no harvestable indicators in registry".to_string());
        tracing::warn!("no harvestable indicators in registry");
    }
    let todo: Vec<&Indicator> = targets
        .iter()
        .copied()
        .filter(|i| !done.contains_key(&i.surface))
        .collect();

    let fresh = parallel_map(&todo, options.workers, |indicator| -> Result<GenerationBatch> {
        let examples = packs.examples_for(indicator)?;
        let batch = harvest_indicator(indicator, &examples, &options.template, gateway, params, &options.clock)?;
        if let Some(cp) = &checkpoint {
            cp.record(&batch)?;
        }
        Ok(batch)
    });

    let mut failures = Vec::new();
    let mut fresh_batches = BTreeMap::new();
    for (indicator, result) in todo.iter().zip(fresh) {
        match result {
            Ok(batch) => {
                fresh_batches.insert(indicator.surface.clone(), batch);
            }
            Err(e) => {
                tracing::warn!("harvest of `{}` failed: {e}", indicator.surface);
                failures.push(IndicatorFailure {
                    indicator: indicator.surface.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if !todo.is_empty() && failures.len() == todo.len() && done.is_empty() {
        return Err(Error::AllIndicatorsFailed(todo.len()));
    }

    let mut seen = HashSet::new();
    let mut events = Vec::new();
    let mut batches = Vec::new();
    let mut collisions = 0;
    for indicator in &targets {
        let (batch, from_checkpoint) = match fresh_batches.remove(&indicator.surface) {
            Some(b) => (b, false),
            None => match done.remove(&indicator.surface) {
                Some(b) => (b, true),
                None => continue,
            },
        };
        if let Some(w) = &batch.warning {
            warnings.push(w.clone());
        }
        batches.push(BatchSummary {
            indicator: batch.indicator_surface.clone(),
            raw_line_count: batch.raw_line_count,
            accepted: batch.accepted_events.len(),
            duplicates: batch.duplicate_count,
            rejected: batch.rejected_count,
            blank_lines: batch.blank_line_count,
            digest: batch.digest(),
            from_checkpoint,
        });
        for event in batch.accepted_events {
            if seen.insert(event.surface.clone()) {
                events.push(event);
            } else {
                collisions += 1;
            }
        }
    }
    Ok(HarvestReport {
        events,
        batches,
        failures,
        skipped,
        cross_indicator_collisions: collisions,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageOutcome {
    pub kept: Vec<EmotionalEvent>,
    pub discarded: Vec<EmotionalEvent>,
    /// Events whose query failed; they stay in `kept` flagged needs-review.
    pub errors: Vec<IndicatorFailure>,
}

/// Drops 被 events the provider judges neutral.
pub fn triage_bei_neutral(
    events: Vec<EmotionalEvent>,
    gateway: &Gateway,
    params: &CompletionParams,
) -> Result<TriageOutcome> {
    if let Some(e) = events.iter().find(|e| e.kind != EventKind::Bei) {
        return Err(Error::Precondition(format!("`{}` is not a 被 event", e.surface)));
    }
    let answers = parallel_map(&events, gateway.workers(), |event| query_neutrality(event, gateway, params));
    let mut out = TriageOutcome {
        kept: Vec::new(),
        discarded: Vec::new(),
        errors: Vec::new(),
    };
    for (mut event, answer) in events.into_iter().zip(answers) {
        match answer {
            Ok(true) => {
                event.status = EventStatus::TriagedOutNeutral;
                out.discarded.push(event);
            }
            Ok(false) => out.kept.push(event),
            Err(e) => {
                out.errors.push(IndicatorFailure {
                    indicator: event.surface.clone(),
                    error: e.to_string(),
                });
                event.flag_needs_review();
                out.kept.push(event);
            }
        }
    }
    Ok(out)
}

pub const IMPLICIT_HEADER: &str = "surface\tpolarity";

/// Implicit-event TSV (`surface<TAB>polarity`, optional header). Polarity must
/// be positive or negative.
pub fn parse_implicit(text: &str, file: &str) -> Result<Vec<EmotionalEvent>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') || (i == 0 && line == IMPLICIT_HEADER) {
            continue;
        }
        let (surface, polarity) = line
            .split_once('\t')
            .ok_or_else(|| Error::malformed(file, i + 1, "expected `surface<TAB>polarity`"))?;
        let surface = nfc(surface.trim());
        if surface.is_empty() {
            return Err(Error::malformed(file, i + 1, "empty surface"));
        }
        let polarity = match polarity.trim() {
            "positive" => EventPolarity::Positive,
            "negative" => EventPolarity::Negative,
            other => {
                return Err(Error::malformed(
                    file,
                    i + 1,
                    format!("implicit events are positive or negative, got `{other}`"),
                ))
            }
        };
        if !seen.insert(surface.clone()) {
            return Err(Error::DuplicateSurface(surface));
        }
        out.push(EmotionalEvent::implicit(&surface, polarity));
    }
    Ok(out)
}

pub fn ingest_implicit(path: &Path) -> Result<Vec<EmotionalEvent>> {
    parse_implicit(&read_to_string(path)?, &path.display().to_string())
}

/// Event counts by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub explicit_nonneutral: usize,
    pub bei: usize,
    pub implicit: usize,
    pub total: usize,
}

impl KindCounts {
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a EmotionalEvent>) -> Self {
        let mut c = KindCounts::default();
        for e in events {
            c.add(e.kind);
        }
        c
    }

    pub fn add(&mut self, kind: EventKind) {
        match kind {
            EventKind::ExplicitNonneutral => self.explicit_nonneutral += 1,
            EventKind::Bei => self.bei += 1,
            EventKind::Implicit => self.implicit += 1,
        }
        self.total += 1;
    }

    pub fn is_consistent(&self) -> bool {
        self.explicit_nonneutral + self.bei + self.implicit == self.total
    }
}
