pub mod eval;
pub mod filter;
pub mod harvest;
pub mod indicators;
pub mod kb;
pub mod polarity;

use std::path::Path;

use anyhow::{Context, Result};

use emoevent_core::event::{read_events, EmotionalEvent};

pub fn load_events(path: &Path) -> Result<Vec<EmotionalEvent>> {
    read_events(path).with_context(|| format!("loading events from {}", path.display()))
}

pub fn events_jsonl(events: &[EmotionalEvent]) -> Result<String> {
    Ok(emoevent_core::event::events_to_jsonl(events)?)
}
