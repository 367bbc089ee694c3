//! The knowledge base of accepted, polarity-labelled events.
//!
//! Kept in memory as a surface-keyed map and persisted as an append-only JSONL
//! file with one event per line.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::event::{parse_events_jsonl, EmotionalEvent, EventKind, EventPolarity, EventStatus};
use crate::harvest::KindCounts;
use crate::text::nfc_without_whitespace;

pub const KB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub format_version: u32,
    events: BTreeMap<String, EmotionalEvent>,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        KnowledgeBase {
            format_version: KB_FORMAT_VERSION,
            events: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendReport {
    pub inserted: Vec<String>,
    /// Surfaces already present (or repeated within the call); the stored event wins.
    pub collisions: Vec<String>,
}

/// Every stored event is accepted and carries a positive or negative label.
pub fn check_storable(event: &EmotionalEvent) -> Result<()> {
    event.check()?;
    if event.status != EventStatus::Accepted {
        return Err(Error::Invariant(format!("`{}` is not accepted", event.surface)));
    }
    if !event.polarity.is_assigned() {
        return Err(Error::Invariant(format!("`{}` has no polarity", event.surface)));
    }
    Ok(())
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<&EmotionalEvent> {
        self.events.get(surface)
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.events.contains_key(surface)
    }

    /// Events in surface order.
    pub fn iter(&self) -> impl Iterator<Item = &EmotionalEvent> {
        self.events.values()
    }

    /// Which of `events` would be inserted, validating all of them first.
    fn plan<'a>(&self, events: &'a [EmotionalEvent]) -> Result<(Vec<&'a EmotionalEvent>, AppendReport)> {
        for e in events {
            check_storable(e)?;
        }
        let mut seen = HashSet::new();
        let mut fresh = Vec::new();
        let mut report = AppendReport::default();
        for e in events {
            if self.events.contains_key(&e.surface) || !seen.insert(e.surface.as_str()) {
                report.collisions.push(e.surface.clone());
            } else {
                report.inserted.push(e.surface.clone());
                fresh.push(e);
            }
        }
        Ok((fresh, report))
    }

    /// Inserts new surfaces; nothing is inserted if any event is invalid.
    pub fn append(&mut self, events: &[EmotionalEvent]) -> Result<AppendReport> {
        let (fresh, report) = self.plan(events)?;
        for e in fresh {
            self.events.insert(e.surface.clone(), e.clone());
        }
        Ok(report)
    }

    pub fn from_events(events: Vec<EmotionalEvent>) -> Result<Self> {
        let mut kb = KnowledgeBase::new();
        for e in events {
            check_storable(&e)?;
            if kb.events.contains_key(&e.surface) {
                return Err(Error::DuplicateSurface(e.surface));
            }
            kb.events.insert(e.surface.clone(), e);
        }
        Ok(kb)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_events(parse_events_jsonl(&text, &path.display().to_string())?)
    }

    /// JSONL in surface order. Events flagged needs-review are left out unless asked for.
    pub fn to_jsonl(&self, include_needs_review: bool) -> Result<String> {
        let mut out = String::new();
        for e in self.iter().filter(|e| include_needs_review || !e.needs_review()) {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn export(&self, path: &Path, include_needs_review: bool) -> Result<usize> {
        let text = self.to_jsonl(include_needs_review)?;
        std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
        Ok(text.lines().count())
    }

    pub fn query(&self, filter: &KbFilter) -> Vec<&EmotionalEvent> {
        self.iter().filter(|e| filter.matches(e)).collect()
    }
}

/// Append-only JSONL file backing a [`KnowledgeBase`].
#[derive(Debug)]
pub struct KbStore {
    path: PathBuf,
    kb: KnowledgeBase,
}

impl KbStore {
    /// Opens the store, starting empty if the file does not exist yet.
    pub fn open(path: &Path) -> Result<Self> {
        let kb = if path.exists() {
            KnowledgeBase::load(path)?
        } else {
            KnowledgeBase::new()
        };
        Ok(KbStore {
            path: path.to_path_buf(),
            kb,
        })
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All-or-nothing: on a storage failure the file is truncated back and
    /// the in-memory view is left untouched.
    pub fn append(&mut self, events: &[EmotionalEvent]) -> Result<AppendReport> {
        let (fresh, report) = self.kb.plan(events)?;
        if fresh.is_empty() {
            return Ok(report);
        }
        let mut buf = String::new();
        for e in &fresh {
            buf.push_str(&serde_json::to_string(e)?);
            buf.push('\n');
        }
        let io = |e| Error::io(&self.path, e);
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        let original_len = file.metadata().map_err(io)?.len();
        if let Err(e) = file.write_all(buf.as_bytes()).and_then(|_| file.sync_data()) {
            if let Err(undo) = file.set_len(original_len) {
                tracing::error!("could not roll back {}: {undo}", self.path.display());
            }
            return Err(io(e));
        }
        for e in fresh {
            self.kb.events.insert(e.surface.clone(), e.clone());
        }
        Ok(report)
    }
}

/// Conjunctive filter; unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbFilter {
    pub kind: Option<EventKind>,
    pub polarity: Option<EventPolarity>,
    pub indicator: Option<String>,
    pub substring: Option<String>,
}

impl KbFilter {
    pub fn matches(&self, e: &EmotionalEvent) -> bool {
        self.kind.is_none_or(|k| e.kind == k)
            && self.polarity.is_none_or(|p| e.polarity == p)
            && self
                .indicator
                .as_deref()
                .is_none_or(|i| e.indicator_surface.as_deref() == Some(i))
            && self.substring.as_deref().is_none_or(|s| e.surface.contains(s))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbStats {
    pub by_kind: KindCounts,
    pub positive: usize,
    pub negative: usize,
    pub total: usize,
}

impl KbStats {
    pub fn is_consistent(&self) -> bool {
        self.by_kind.is_consistent() && self.by_kind.total == self.total && self.positive + self.negative == self.total
    }
}

pub fn kb_stats(kb: &KnowledgeBase) -> KbStats {
    let mut stats = KbStats {
        by_kind: KindCounts::from_events(kb.iter()),
        total: kb.len(),
        ..KbStats::default()
    };
    for e in kb.iter() {
        match e.polarity {
            EventPolarity::Positive => stats.positive += 1,
            EventPolarity::Negative => stats.negative += 1,
            EventPolarity::Unassigned => unreachable!("stored events are labelled"),
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matcher {
    Exact,
    NormalizedExact,
}

impl std::str::FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Matcher::Exact),
            "normalized-exact" => Ok(Matcher::NormalizedExact),
            other => Err(Error::UnknownToken {
                kind: "matcher",
                token: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub matched: usize,
    pub total: usize,
    pub ratio: f64,
}

impl Coverage {
    pub fn from_counts(matched: usize, total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::Empty("node list"));
        }
        if matched > total {
            return Err(Error::Precondition(format!("{matched} matched of only {total} nodes")));
        }
        Ok(Coverage {
            matched,
            total,
            ratio: matched as f64 / total as f64,
        })
    }

    /// Whole-percent rendering, e.g. `1%`.
    pub fn percent(&self) -> String {
        format!("{:.0}%", self.ratio * 100.0)
    }
}

/// Share of `nodes` equal (under `matcher`) to some stored surface.
pub fn coverage(nodes: &[String], matcher: Matcher, kb: &KnowledgeBase) -> Result<Coverage> {
    let matched = match matcher {
        Matcher::Exact => nodes.iter().filter(|n| kb.contains(n)).count(),
        Matcher::NormalizedExact => {
            let surfaces: HashSet<String> = kb.iter().map(|e| nfc_without_whitespace(&e.surface)).collect();
            nodes
                .iter()
                .filter(|n| surfaces.contains(&nfc_without_whitespace(n)))
                .count()
        }
    };
    Coverage::from_counts(matched, nodes.len())
}

/// One node per line; blank lines skipped.
pub fn parse_node_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

pub fn read_node_list(path: &Path) -> Result<Vec<String>> {
    Ok(parse_node_list(&read_to_string(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::GeneratedProvenance;
    use proptest::prelude::*;

    fn accepted(indicator: &str, theme: &str, polarity: EventPolarity) -> EmotionalEvent {
        let kind = if indicator.starts_with('被') { EventKind::Bei } else { EventKind::ExplicitNonneutral };
        let mut e = EmotionalEvent::generated(
            indicator,
            theme,
            kind,
            GeneratedProvenance {
                prompt_hash: "0f".into(),
                provider_id: "mock".into(),
                timestamp: "2024-01-01T00:00:00Z".into(),
                polarity_query: None,
            },
        );
        e.status = EventStatus::Accepted;
        e.polarity = polarity;
        e.validity_score = Some(0.9);
        e
    }

    fn three() -> Vec<EmotionalEvent> {
        vec![
            accepted("丢失", "钱包", EventPolarity::Negative),
            accepted("获得", "家人的理解", EventPolarity::Positive),
            accepted("被没收", "手机", EventPolarity::Negative),
        ]
    }

    #[test]
    fn append_and_collide() {
        let mut kb = KnowledgeBase::new();
        let r = kb.append(&three()).unwrap();
        assert_eq!(r.inserted.len(), 3);
        assert_eq!(kb.len(), 3);
        let r = kb.append(&three()).unwrap();
        assert_eq!(r.collisions.len(), 3);
        assert_eq!(kb.len(), 3);

        let mut bad = three();
        bad.push(accepted("遭受", "挫折", EventPolarity::Unassigned));
        let mut fresh = KnowledgeBase::new();
        assert!(matches!(fresh.append(&bad), Err(Error::Invariant(_))));
        assert!(fresh.is_empty());
    }

    #[test]
    fn first_writer_wins() {
        let mut kb = KnowledgeBase::new();
        let first = accepted("丢失", "钱包", EventPolarity::Negative);
        let mut second = first.clone();
        second.validity_score = Some(0.5);
        let r = kb.append(&[first.clone(), second]).unwrap();
        assert_eq!(r.collisions, vec!["丢失钱包".to_string()]);
        assert_eq!(kb.get("丢失钱包"), Some(&first));
    }

    #[test]
    fn query_filters() {
        let kb = KnowledgeBase::from_events(three()).unwrap();
        let f = KbFilter {
            polarity: Some(EventPolarity::Negative),
            indicator: Some("丢失".into()),
            ..KbFilter::default()
        };
        let hits: Vec<_> = kb.query(&f).iter().map(|e| e.surface.as_str()).collect();
        assert_eq!(hits, ["丢失钱包"]);
        assert_eq!(kb.query(&KbFilter::default()).len(), 3);
        let surfaces: Vec<_> = kb.query(&KbFilter::default()).iter().map(|e| e.surface.clone()).collect();
        let mut sorted = surfaces.clone();
        sorted.sort();
        assert_eq!(surfaces, sorted);
    }

    #[test]
    fn stats_tally() {
        assert_eq!(kb_stats(&KnowledgeBase::new()), KbStats::default());
        let mut events = three();
        events.push(EmotionalEvent::implicit("中奖", EventPolarity::Positive));
        events.push(accepted("获得", "博士学位", EventPolarity::Positive));
        let stats = kb_stats(&KnowledgeBase::from_events(events).unwrap());
        assert_eq!(
            (stats.by_kind.explicit_nonneutral, stats.by_kind.bei, stats.by_kind.implicit),
            (3, 1, 1)
        );
        assert_eq!((stats.positive, stats.negative, stats.total), (3, 2, 5));
        assert!(stats.is_consistent());
    }

    #[test]
    fn coverage_counts() {
        let c = Coverage::from_counts(2571, 260_662).unwrap();
        assert!((0.00986..=0.00987).contains(&c.ratio));
        assert_eq!(c.percent(), "1%");
        assert!(Coverage::from_counts(0, 0).is_err());

        let kb = KnowledgeBase::from_events(three()).unwrap();
        let own: Vec<String> = kb.iter().map(|e| e.surface.clone()).collect();
        for m in [Matcher::Exact, Matcher::NormalizedExact] {
            assert_eq!(coverage(&own, m, &kb).unwrap().ratio, 1.0);
        }
        let mut nodes: Vec<String> = (0..9).map(|i| format!("节点{i}")).collect();
        nodes.push("丢失钱包".into());
        assert_eq!(coverage(&nodes, Matcher::Exact, &kb).unwrap().ratio, 0.1);
        nodes[9] = " 丢失 钱包".into();
        assert_eq!(coverage(&nodes, Matcher::Exact, &kb).unwrap().matched, 0);
        assert_eq!(coverage(&nodes, Matcher::NormalizedExact, &kb).unwrap().matched, 1);
        assert!(coverage(&[], Matcher::Exact, &kb).is_err());
    }

    #[test]
    fn store_persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        let mut store = KbStore::open(&path).unwrap();
        store.append(&three()).unwrap();
        store.append(&three()).unwrap();
        store.append(&[EmotionalEvent::implicit("中奖", EventPolarity::Positive)]).unwrap();
        let reopened = KbStore::open(&path).unwrap();
        assert_eq!(reopened.kb(), store.kb());
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
    }

    #[test]
    fn failed_write_leaves_store_unchanged() {
        let full = Path::new("/dev/full");
        if !full.exists() {
            return;
        }
        let mut store = KbStore {
            path: full.to_path_buf(),
            kb: KnowledgeBase::new(),
        };
        assert!(matches!(store.append(&three()), Err(Error::Io { .. })));
        assert!(store.kb().is_empty());
    }

    #[test]
    fn export_honours_review_flag() {
        let mut events = three();
        events[0].flag_needs_review();
        let kb = KnowledgeBase::from_events(events).unwrap();
        assert_eq!(kb.to_jsonl(false).unwrap().lines().count(), 2);
        let all = kb.to_jsonl(true).unwrap();
        assert_eq!(all.lines().count(), 3);
        assert!(all.contains("needs_review"));
        assert_eq!(KnowledgeBase::new().to_jsonl(true).unwrap(), "");
    }

    fn arb_event() -> impl Strategy<Value = EmotionalEvent> {
        (
            prop::sample::select(vec!["遭受", "获得", "被没收", "丢失"]),
            "[\\u4e00-\\u4e20a-z ]{1,6}",
            any::<bool>(),
            prop::option::of(0.0f64..=1.0),
            any::<bool>(),
        )
            .prop_map(|(ind, theme, pos, score, review)| {
                let mut e = accepted(ind, &theme, if pos { EventPolarity::Positive } else { EventPolarity::Negative });
                e.validity_score = score;
                if review {
                    e.flag_needs_review();
                }
                e
            })
    }

    proptest! {
        #[test]
        fn export_load_round_trip(events in prop::collection::vec(arb_event(), 0..30)) {
            let mut kb = KnowledgeBase::new();
            kb.append(&events).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("kb.jsonl");
            kb.export(&path, true).unwrap();
            let back = KnowledgeBase::load(&path).unwrap();
            prop_assert_eq!(&back, &kb);
            prop_assert_eq!(back.to_jsonl(true).unwrap(), std::fs::read_to_string(&path).unwrap());
            let again = kb.append(&events).unwrap();
            prop_assert!(again.inserted.is_empty());
            if !kb.is_empty() {
                let own: Vec<String> = kb.iter().map(|e| e.surface.clone()).collect();
                prop_assert_eq!(coverage(&own, Matcher::NormalizedExact, &kb).unwrap().ratio, 1.0);
            }
        }
    }
}
