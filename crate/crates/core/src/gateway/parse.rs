use regex::Regex;
use serde::{Deserialize, Serialize};

use super::RawCompletion;
use crate::indicator::Indicator;
use crate::text::{char_len, normalize_event};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotNumbered,
    MissingIndicator,
    EmptyTheme,
    /// Set by the harvester for lines past the per-batch cap.
    OverCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: String,
    pub reason: RejectReason,
}

/// Every non-blank input line lands in exactly one of `accepted` or `rejected`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseList {
    pub accepted: Vec<String>,
    pub rejected: Vec<RejectedLine>,
    pub blank_lines: usize,
}

fn numbered_line() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.．、)）]\s*(.*)$").expect("valid regex"))
}

pub fn parse_phrase_list(raw: &RawCompletion, indicator: &Indicator) -> PhraseList {
    parse_phrase_text(&raw.text, &indicator.surface)
}

/// Parses a numbered list such as `1. 遭受挫折;`. A phrase is accepted only if
/// it starts with `indicator` and has a non-empty theme after it.
pub fn parse_phrase_text(text: &str, indicator: &str) -> PhraseList {
    let mut out = PhraseList::default();
    for line in text.lines() {
        if line.trim().is_empty() {
            out.blank_lines += 1;
            continue;
        }
        let reject = |reason| RejectedLine {
            line: line.to_string(),
            reason,
        };
        let Some(caps) = numbered_line().captures(line) else {
            out.rejected.push(reject(RejectReason::NotNumbered));
            continue;
        };
        let phrase = normalize_event(caps.get(1).map_or("", |m| m.as_str()));
        if !phrase.starts_with(indicator) {
            out.rejected.push(reject(RejectReason::MissingIndicator));
        } else if char_len(&phrase) <= char_len(indicator) {
            out.rejected.push(reject(RejectReason::EmptyTheme));
        } else {
            out.accepted.push(phrase);
        }
    }
    out
}
