//! The emotional event record carried through harvest, filtering, labeling and storage.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicator::PatternClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ExplicitNonneutral,
    Bei,
    Implicit,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::ExplicitNonneutral, EventKind::Bei, EventKind::Implicit];

    /// Kind of the events harvested from an indicator of the given class.
    pub fn for_class(class: PatternClass) -> EventKind {
        match class {
            PatternClass::NeutralBei | PatternClass::BeiComposed => EventKind::Bei,
            _ => EventKind::ExplicitNonneutral,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ExplicitNonneutral => "explicit_nonneutral",
            EventKind::Bei => "bei",
            EventKind::Implicit => "implicit",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "event kind",
                token: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventPolarity {
    Positive,
    Negative,
    Unassigned,
}

impl EventPolarity {
    pub fn as_str(self) -> &'static str {
        match self {
            EventPolarity::Positive => "positive",
            EventPolarity::Negative => "negative",
            EventPolarity::Unassigned => "unassigned",
        }
    }

    pub fn is_assigned(self) -> bool {
        self != EventPolarity::Unassigned
    }
}

impl fmt::Display for EventPolarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventPolarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(EventPolarity::Positive),
            "negative" => Ok(EventPolarity::Negative),
            "unassigned" => Ok(EventPolarity::Unassigned),
            other => Err(Error::UnknownToken {
                kind: "event polarity",
                token: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Raw,
    TriagedOutNeutral,
    FilteredOutInvalid,
    Accepted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventFlag {
    NeedsReview,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityQuery {
    pub model_id: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedProvenance {
    pub prompt_hash: String,
    pub provider_id: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity_query: Option<PolarityQuery>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManualTag {
    #[serde(rename = "manual")]
    Manual,
}

/// Where an event came from: an LLM completion, or the manual implicit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Provenance {
    Generated(GeneratedProvenance),
    Manual(ManualTag),
}

impl Provenance {
    pub fn manual() -> Self {
        Provenance::Manual(ManualTag::Manual)
    }

    pub fn is_manual(&self) -> bool {
        matches!(self, Provenance::Manual(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionalEvent {
    pub surface: String,
    pub indicator_surface: Option<String>,
    pub theme: String,
    pub kind: EventKind,
    pub polarity: EventPolarity,
    pub validity_score: Option<f64>,
    pub status: EventStatus,
    pub provenance: Provenance,
    #[serde(default)]
    pub flags: BTreeSet<EventFlag>,
}

impl EmotionalEvent {
    /// A freshly harvested event `indicator + theme`.
    pub fn generated(indicator: &str, theme: &str, kind: EventKind, provenance: GeneratedProvenance) -> Self {
        EmotionalEvent {
            surface: format!("{indicator}{theme}"),
            indicator_surface: Some(indicator.to_string()),
            theme: theme.to_string(),
            kind,
            polarity: EventPolarity::Unassigned,
            validity_score: None,
            status: EventStatus::Raw,
            provenance: Provenance::Generated(provenance),
            flags: BTreeSet::new(),
        }
    }

    pub fn implicit(surface: &str, polarity: EventPolarity) -> Self {
        EmotionalEvent {
            surface: surface.to_string(),
            indicator_surface: None,
            theme: String::new(),
            kind: EventKind::Implicit,
            polarity,
            validity_score: None,
            status: EventStatus::Accepted,
            provenance: Provenance::manual(),
            flags: BTreeSet::new(),
        }
    }

    pub fn needs_review(&self) -> bool {
        self.flags.contains(&EventFlag::NeedsReview)
    }

    pub fn flag_needs_review(&mut self) {
        self.flags.insert(EventFlag::NeedsReview);
    }

    /// Structural invariants that hold at every pipeline stage.
    pub fn check(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Invariant(format!("event `{}`: {msg}", self.surface)));
        if let Some(score) = self.validity_score {
            if !(0.0..=1.0).contains(&score) {
                return fail("validity score outside [0,1]");
            }
        }
        match self.kind {
            EventKind::ExplicitNonneutral | EventKind::Bei => {
                let Some(indicator) = &self.indicator_surface else {
                    return fail("explicit event without indicator");
                };
                if self.theme.is_empty() {
                    return fail("empty theme");
                }
                if self.surface != format!("{indicator}{}", self.theme) {
                    return fail("surface is not indicator + theme");
                }
                if self.kind == EventKind::Bei && !indicator.starts_with('被') {
                    return fail("bei event whose indicator lacks 被");
                }
            }
            EventKind::Implicit => {
                if self.indicator_surface.is_some() {
                    return fail("implicit event with an indicator");
                }
            }
        }
        Ok(())
    }
}

/// One JSON object per line, trailing newline after each.
pub fn events_to_jsonl(events: &[EmotionalEvent]) -> Result<String> {
    let mut out = String::new();
    for event in events {
        out.push_str(&serde_json::to_string(event)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_events_jsonl(text: &str, file: &str) -> Result<Vec<EmotionalEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::malformed(file, i + 1, e.to_string())))
        .collect()
}

pub fn read_events(path: &std::path::Path) -> Result<Vec<EmotionalEvent>> {
    parse_events_jsonl(&crate::error::read_to_string(path)?, &path.display().to_string())
}

pub fn write_events(path: &std::path::Path, events: &[EmotionalEvent]) -> Result<()> {
    std::fs::write(path, events_to_jsonl(events)?).map_err(|e| Error::io(path, e))
}
