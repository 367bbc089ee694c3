//! Positive/negative labels for accepted events.
//!
//! Explicit events inherit their indicator's polarity, 被 events are asked of
//! the provider, and implicit events are looked up in a manual table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{read_to_string, Error, Result};
use crate::event::{EmotionalEvent, EventKind, EventPolarity, EventStatus, PolarityQuery, Provenance};
use crate::gateway::{query_polarity, CompletionParams, Gateway};
use crate::harvest::parse_implicit;
use crate::indicator::{IndicatorRegistry, Polarity};
use crate::par::parallel_map;

pub fn assign_by_indicator(event: &EmotionalEvent, registry: &IndicatorRegistry) -> Result<EmotionalEvent> {
    if event.kind != EventKind::ExplicitNonneutral {
        return Err(Error::Precondition(format!(
            "`{}` is a {} event; indicator propagation covers explicit non-neutral events only",
            event.surface, event.kind
        )));
    }
    let surface = event
        .indicator_surface
        .as_deref()
        .ok_or_else(|| Error::Invariant(format!("event `{}` has no indicator", event.surface)))?;
    let indicator = registry
        .get(surface)
        .ok_or_else(|| Error::Precondition(format!("indicator `{surface}` is not in the registry")))?;
    let polarity = match indicator.polarity {
        Polarity::Positive => EventPolarity::Positive,
        Polarity::Negative => EventPolarity::Negative,
        Polarity::Neutral => {
            return Err(Error::Precondition(format!(
                "indicator `{surface}` is neutral; its events must be routed as 被 events"
            )))
        }
    };
    let mut out = event.clone();
    out.polarity = polarity;
    Ok(out)
}

/// Asks the provider for a 被 event's polarity. A failed query leaves the
/// polarity unassigned and flags the event for review instead of erroring.
pub fn assign_bei(
    event: &EmotionalEvent,
    gateway: &Gateway,
    params: &CompletionParams,
    clock: &Clock,
) -> Result<EmotionalEvent> {
    if event.kind != EventKind::Bei || event.status != EventStatus::Accepted {
        return Err(Error::Precondition(format!(
            "`{}` must be an accepted 被 event",
            event.surface
        )));
    }
    let mut out = event.clone();
    match query_polarity(event, gateway, params) {
        Ok(polarity) => {
            out.polarity = polarity;
            if let Provenance::Generated(p) = &mut out.provenance {
                p.polarity_query = Some(PolarityQuery {
                    model_id: params.model_id.clone(),
                    timestamp: clock.now(),
                });
            }
        }
        Err(e) => {
            tracing::warn!("polarity query for `{}` failed: {e}", event.surface);
            out.polarity = EventPolarity::Unassigned;
            out.flag_needs_review();
        }
    }
    Ok(out)
}

/// Manual surface → polarity table for implicit events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitTable {
    entries: BTreeMap<String, EventPolarity>,
}

impl ImplicitTable {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let entries = parse_implicit(text, file)?
            .into_iter()
            .map(|e| (e.surface, e.polarity))
            .collect();
        Ok(ImplicitTable { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn get(&self, surface: &str) -> Option<EventPolarity> {
        self.entries.get(surface).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn assign_implicit(event: &EmotionalEvent, table: &ImplicitTable) -> Result<EmotionalEvent> {
    if event.kind != EventKind::Implicit {
        return Err(Error::Precondition(format!("`{}` is not an implicit event", event.surface)));
    }
    let polarity = table
        .get(&event.surface)
        .ok_or_else(|| Error::Precondition(format!("`{}` is not in the implicit polarity table", event.surface)))?;
    let mut out = event.clone();
    out.polarity = polarity;
    Ok(out)
}

pub struct PolaritySources<'a> {
    pub registry: &'a IndicatorRegistry,
    pub implicit: &'a ImplicitTable,
    /// Needed only when 被 events are present.
    pub gateway: Option<&'a Gateway>,
    pub params: &'a CompletionParams,
    pub clock: &'a Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarityReport {
    pub events: Vec<EmotionalEvent>,
    pub positive: usize,
    pub negative: usize,
    pub needs_review: usize,
}

/// Routes each accepted event to exactly one assigner by kind. Output keeps
/// input order.
pub fn assign_all(events: &[EmotionalEvent], sources: &PolaritySources<'_>) -> Result<PolarityReport> {
    if let Some(e) = events.iter().find(|e| e.status != EventStatus::Accepted) {
        return Err(Error::Precondition(format!("`{}` has not been accepted by the filter", e.surface)));
    }
    let bei: Vec<&EmotionalEvent> = events.iter().filter(|e| e.kind == EventKind::Bei).collect();
    let bei_results = if bei.is_empty() {
        Vec::new()
    } else {
        let gateway = sources
            .gateway
            .ok_or_else(|| Error::Precondition("被 events need a provider for polarity queries".into()))?;
        parallel_map(&bei, gateway.workers(), |e| {
            assign_bei(e, gateway, sources.params, sources.clock)
        })
    };
    let mut bei_results = bei_results.into_iter();
    let mut out = Vec::with_capacity(events.len());
    for event in events {
        let assigned = match event.kind {
            EventKind::ExplicitNonneutral => assign_by_indicator(event, sources.registry)?,
            EventKind::Bei => bei_results.next().expect("one result per 被 event")?,
            EventKind::Implicit => assign_implicit(event, sources.implicit)?,
        };
        out.push(assigned);
    }
    let count = |p| out.iter().filter(|e| e.polarity == p).count();
    Ok(PolarityReport {
        positive: count(EventPolarity::Positive),
        negative: count(EventPolarity::Negative),
        needs_review: out.iter().filter(|e| e.needs_review()).count(),
        events: out,
    })
}
