use std::collections::BTreeSet;
use std::path::Path;

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::indicator::IndicatorRegistry;

pub const DEFAULT_DELIMITERS: [char; 5] = ['，', '。', '！', '？', '；'];

/// Byte ranges of the non-empty, whitespace-trimmed segments between delimiters.
pub fn clause_spans(text: &str, delimiters: &[char]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut push = |start: usize, end: usize| {
        let seg = &text[start..end];
        let lead = seg.len() - seg.trim_start().len();
        let trimmed = seg.trim();
        if !trimmed.is_empty() {
            spans.push((start + lead, start + lead + trimmed.len()));
        }
    };
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if delimiters.contains(&c) {
            push(start, i);
            start = i + c.len_utf8();
        }
    }
    push(start, text.len());
    spans
}

pub fn segment_clauses_with(text: &str, delimiters: &[char]) -> Vec<String> {
    clause_spans(text, delimiters)
        .into_iter()
        .map(|(s, e)| text[s..e].to_string())
        .collect()
}

pub fn segment_clauses(text: &str) -> Vec<String> {
    segment_clauses_with(text, &DEFAULT_DELIMITERS)
}

/// One annotated document: its clauses, the clause holding the emotion
/// keyword, and the clauses overlapping a cause span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EceInstance {
    pub text: String,
    pub clauses: Vec<String>,
    pub keyword: String,
    pub keyword_clause: usize,
    pub cause_clauses: BTreeSet<usize>,
}

impl EceInstance {
    pub fn check(&self) -> Result<()> {
        let n = self.clauses.len();
        if self.keyword_clause >= n {
            return Err(Error::Invariant(format!("keyword clause {} of {n}", self.keyword_clause)));
        }
        if self.cause_clauses.is_empty() {
            return Err(Error::Invariant("no cause clause".into()));
        }
        if let Some(&c) = self.cause_clauses.iter().find(|&&c| c >= n) {
            return Err(Error::Invariant(format!("cause clause {c} of {n}")));
        }
        Ok(())
    }
}

enum Open {
    Cause(usize),
    Keyword(usize),
}

/// Parses one record of inline markup with `<cause>` spans and a single `<keyword>` span.
pub fn parse_ece_instance(record: &str, delimiters: &[char]) -> std::result::Result<EceInstance, String> {
    const TAGS: [&str; 4] = ["<cause>", "</cause>", "<keyword>", "</keyword>"];
    let mut plain = String::with_capacity(record.len());
    let mut causes: Vec<(usize, usize)> = Vec::new();
    let mut keywords: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<Open> = None;
    let mut rest = record;
    while !rest.is_empty() {
        let Some(tag) = TAGS.iter().find(|t| rest.starts_with(**t)) else {
            let c = rest.chars().next().expect("non-empty");
            plain.push(c);
            rest = &rest[c.len_utf8()..];
            continue;
        };
        rest = &rest[tag.len()..];
        let at = plain.len();
        open = match (*tag, open) {
            ("<cause>", None) => Some(Open::Cause(at)),
            ("<keyword>", None) => Some(Open::Keyword(at)),
            ("</cause>", Some(Open::Cause(s))) => {
                causes.push((s, at));
                None
            }
            ("</keyword>", Some(Open::Keyword(s))) => {
                keywords.push((s, at));
                None
            }
            (t, Some(_)) if !t.starts_with("</") => return Err(format!("unbalanced tags: `{t}` inside another span")),
            (t, _) => return Err(format!("unbalanced tags: unexpected `{t}`")),
        };
    }
    if open.is_some() {
        return Err("unbalanced tags: span never closed".into());
    }
    match keywords.len() {
        0 => return Err("no keyword".into()),
        1 => {}
        k => return Err(format!("{k} keywords; exactly one expected")),
    }
    if causes.is_empty() {
        return Err("no cause span".into());
    }
    let spans = clause_spans(&plain, delimiters);
    let overlapping = |(a, b): (usize, usize)| -> Vec<usize> {
        spans
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| s < b && a < e)
            .map(|(i, _)| i)
            .collect()
    };
    let (ks, ke) = keywords[0];
    let keyword_clauses = overlapping((ks, ke));
    let keyword_clause = match keyword_clauses.as_slice() {
        [k] => *k,
        [] => return Err("keyword lies outside every clause".into()),
        _ => return Err("keyword crosses a clause boundary".into()),
    };
    let mut cause_clauses = BTreeSet::new();
    for span in causes {
        let hit = overlapping(span);
        if hit.is_empty() {
            return Err("cause span lies outside every clause".into());
        }
        cause_clauses.extend(hit);
    }
    let instance = EceInstance {
        clauses: spans.iter().map(|&(s, e)| plain[s..e].to_string()).collect(),
        keyword: plain[ks..ke].to_string(),
        text: plain,
        keyword_clause,
        cause_clauses,
    };
    instance.check().map_err(|e| e.to_string())?;
    Ok(instance)
}

/// Records are separated by blank lines; lines within a record are joined as-is.
pub fn parse_ece_corpus(text: &str, file: &str, delimiters: &[char]) -> Result<Vec<EceInstance>> {
    let mut out = Vec::new();
    let mut record = String::new();
    let mut first_line = 0;
    let mut flush = |record: &mut String, line: usize| -> Result<()> {
        if record.trim().is_empty() {
            record.clear();
            return Ok(());
        }
        let instance = parse_ece_instance(record.trim(), delimiters).map_err(|m| Error::malformed(file, line, m))?;
        out.push(instance);
        record.clear();
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut record, first_line)?;
        } else {
            if record.is_empty() {
                first_line = i + 1;
            }
            record.push_str(line.trim_end_matches('\r'));
        }
    }
    flush(&mut record, first_line)?;
    if out.is_empty() {
        return Err(Error::Empty("ECE corpus"));
    }
    Ok(out)
}

pub fn read_ece_corpus(path: &Path, delimiters: &[char]) -> Result<Vec<EceInstance>> {
    parse_ece_corpus(&read_to_string(path)?, &path.display().to_string(), delimiters)
}

pub fn write_gold(path: &Path, instances: &[EceInstance]) -> Result<()> {
    let mut out = String::new();
    for i in instances {
        out.push_str(&serde_json::to_string(i)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_gold(path: &Path) -> Result<Vec<EceInstance>> {
    let file = path.display().to_string();
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let inst: EceInstance = serde_json::from_str(l).map_err(|e| Error::malformed(&file, i + 1, e.to_string()))?;
            inst.check().map_err(|e| Error::malformed(&file, i + 1, e.to_string()))?;
            Ok(inst)
        })
        .collect()
}

/// Substring matcher over indicator surfaces.
#[derive(Debug, Clone)]
pub struct IndicatorMatcher {
    automaton: AhoCorasick,
    patterns: usize,
}

impl IndicatorMatcher {
    pub fn new<I, S>(surfaces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let surfaces: Vec<String> = surfaces
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let automaton = AhoCorasick::new(&surfaces).map_err(|e| Error::Precondition(e.to_string()))?;
        Ok(IndicatorMatcher {
            automaton,
            patterns: surfaces.len(),
        })
    }

    pub fn from_registry(registry: &IndicatorRegistry) -> Result<Self> {
        Self::new(registry.iter().map(|i| i.surface.as_str()))
    }

    pub fn len(&self) -> usize {
        self.patterns
    }

    pub fn is_empty(&self) -> bool {
        self.patterns == 0
    }

    pub fn contains_indicator(&self, clause: &str) -> bool {
        self.patterns > 0 && self.automaton.is_match(clause)
    }
}

/// 1 iff the clause contains some indicator surface.
pub fn indicator_feature(clause: &str, matcher: &IndicatorMatcher) -> u8 {
    u8::from(matcher.contains_indicator(clause))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClauseVector {
    pub values: Vec<f64>,
}

impl ClauseVector {
    /// A copy with `bit` appended as one extra dimension.
    pub fn augment(&self, bit: u8) -> Result<ClauseVector> {
        if bit > 1 {
            return Err(Error::Precondition(format!("feature bit must be 0 or 1, got {bit}")));
        }
        let mut values = Vec::with_capacity(self.values.len() + 1);
        values.extend_from_slice(&self.values);
        values.push(f64::from(bit));
        Ok(ClauseVector { values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub correct: usize,
    pub proposed: usize,
    pub annotated: usize,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Clause-level precision, recall and F over `(instance, clause)` pairs.
/// Empty denominators give 0.
pub fn ece_metrics(proposed: &BTreeSet<(usize, usize)>, gold: &[EceInstance]) -> Result<MetricsReport> {
    for &(i, c) in proposed {
        let inst = gold
            .get(i)
            .ok_or_else(|| Error::Precondition(format!("proposed instance {i} of {}", gold.len())))?;
        if c >= inst.clauses.len() {
            return Err(Error::Precondition(format!(
                "proposed clause {c} of {} in instance {i}",
                inst.clauses.len()
            )));
        }
    }
    let correct = proposed
        .iter()
        .filter(|(i, c)| gold[*i].cause_clauses.contains(c))
        .count();
    let annotated: usize = gold.iter().map(|g| g.cause_clauses.len()).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(correct, proposed.len());
    let recall = ratio(correct, annotated);
    Ok(MetricsReport {
        precision,
        recall,
        f_score: f_score(precision, recall),
        correct,
        proposed: proposed.len(),
        annotated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WORKED: &str = "1999年春天，平邑县白彦镇大营村支部书记王某因与村主任桂某关系不和，<cause>遭到桂某等人殴打</cause>，王某的儿子心生<keyword>怨恨</keyword>，又伙同他人将桂某殴打致轻伤，随后，桂向法院提起自诉，但因事实不清、证据不足而撤诉";

    #[test]
    fn segmentation_examples() {
        assert_eq!(segment_clauses("王某的儿子心生怨恨，又伙同他人将桂某殴打致轻伤").len(), 2);
        assert!(segment_clauses("").is_empty());
        assert_eq!(segment_clauses("随后"), vec!["随后"]);
        assert_eq!(segment_clauses(" 甲 ，，乙。 "), vec!["甲", "乙"]);
    }

    proptest! {
        #[test]
        fn segment_reassemble(
            clauses in prop::collection::vec("[a-z\\u4e00-\\u4e10]([a-z \\u4e00-\\u4e10]{0,5}[a-z\\u4e00-\\u4e10])?", 0..8),
            delims in prop::collection::vec(prop::sample::select(DEFAULT_DELIMITERS.to_vec()), 8),
            pad in prop::collection::vec(prop::sample::select(vec!["", " ", "  "]), 8),
        ) {
            let mut text = String::new();
            for (i, c) in clauses.iter().enumerate() {
                text.push_str(pad[i]);
                text.push_str(c);
                text.push_str(pad[7 - i]);
                text.push(delims[i]);
            }
            prop_assert_eq!(segment_clauses(&text), clauses);
        }
    }

    #[test]
    fn worked_instance_cause_is_the_zaodao_clause() {
        let inst = parse_ece_instance(WORKED, &DEFAULT_DELIMITERS).unwrap();
        assert_eq!(inst.keyword, "怨恨");
        assert_eq!(inst.clauses[inst.keyword_clause], "王某的儿子心生怨恨");
        let causes: Vec<&str> = inst.cause_clauses.iter().map(|&c| inst.clauses[c].as_str()).collect();
        assert_eq!(causes, ["遭到桂某等人殴打"]);
        assert_eq!(inst.cause_clauses, BTreeSet::from([2]));
    }

    #[test]
    fn markup_errors() {
        let d = &DEFAULT_DELIMITERS;
        assert!(parse_ece_instance("<cause>甲</cause>，乙", d).unwrap_err().contains("no keyword"));
        assert!(parse_ece_instance("<cause>甲</cause>，<keyword>乙</keyword><keyword>丙</keyword>", d)
            .unwrap_err()
            .contains("keywords"));
        assert!(parse_ece_instance("甲，<keyword>乙</keyword>", d).unwrap_err().contains("cause"));
        assert!(parse_ece_instance("<cause>甲，<keyword>乙</keyword>", d).unwrap_err().contains("unbalanced"));
        assert!(parse_ece_instance("<cause>甲</keyword>", d).unwrap_err().contains("unbalanced"));
        assert!(parse_ece_instance("<cause>甲", d).unwrap_err().contains("unbalanced"));
    }

    #[test]
    fn cause_across_boundary_marks_both_clauses() {
        let inst = parse_ece_instance("前面<cause>受到批评，丢失</cause>工作，他很<keyword>难过</keyword>", &DEFAULT_DELIMITERS).unwrap();
        assert_eq!(inst.cause_clauses, BTreeSet::from([0, 1]));
        assert_eq!(inst.keyword_clause, 2);
    }

    #[test]
    fn corpus_records_and_line_numbers() {
        let text = format!("{WORKED}\n\n甲<cause>乙</cause>，\n丙<keyword>怒</keyword>\n\n\n");
        let corpus = parse_ece_corpus(&text, "c", &DEFAULT_DELIMITERS).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[1].clauses, vec!["甲乙", "丙怒"]);
        let bad = format!("{WORKED}\n\n甲，乙\n");
        match parse_ece_corpus(&bad, "c", &DEFAULT_DELIMITERS) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_ece_corpus("\n\n", "c", &DEFAULT_DELIMITERS).is_err());
    }

    #[test]
    fn indicator_features() {
        let m = IndicatorMatcher::new(["遭到", "获得"]).unwrap();
        assert_eq!(indicator_feature("遭到桂某等人殴打", &m), 1);
        assert_eq!(indicator_feature("随后", &m), 0);
        assert_eq!(indicator_feature("获得", &m), 1);
        let empty = IndicatorMatcher::new(Vec::<String>::new()).unwrap();
        assert_eq!(indicator_feature("遭到", &empty), 0);
    }

    #[test]
    fn augmentation() {
        let v = ClauseVector {
            values: vec![0.5, 1.5, 2.5],
        };
        assert_eq!(v.augment(1).unwrap().values, vec![0.5, 1.5, 2.5, 1.0]);
        assert_eq!(v.values.len(), 3);
        assert_eq!(ClauseVector::default().augment(0).unwrap().values, vec![0.0]);
        assert!(ClauseVector { values: vec![0.0] }.augment(2).is_err());
    }

    proptest! {
        #[test]
        fn augment_properties(values in prop::collection::vec(-1e6f64..1e6, 0..20), bit in 0u8..=1) {
            let v = ClauseVector { values: values.clone() };
            let a = v.augment(bit).unwrap();
            prop_assert_eq!(a.values.len(), values.len() + 1);
            prop_assert_eq!(a.values[values.len()], f64::from(bit));
            prop_assert_eq!(&a.values[..values.len()], &values[..]);
        }
    }

    fn instance(clauses: usize, causes: &[usize]) -> EceInstance {
        EceInstance {
            text: String::new(),
            clauses: (0..clauses).map(|i| format!("c{i}")).collect(),
            keyword: "k".into(),
            keyword_clause: 0,
            cause_clauses: causes.iter().copied().collect(),
        }
    }

    #[test]
    fn metric_conventions() {
        let gold = vec![instance(3, &[1]), instance(2, &[0, 1])];
        let exact: BTreeSet<_> = [(0, 1), (1, 0), (1, 1)].into();
        let r = ece_metrics(&exact, &gold).unwrap();
        assert_eq!((r.precision, r.recall, r.f_score), (1.0, 1.0, 1.0));
        let r = ece_metrics(&BTreeSet::new(), &gold).unwrap();
        assert_eq!((r.precision, r.recall, r.f_score), (0.0, 0.0, 0.0));
        assert!((f_score(0.75, 0.60) - 0.6667).abs() < 5e-5);
        assert!(ece_metrics(&[(5, 0)].into(), &gold).is_err());
        assert!(ece_metrics(&[(0, 3)].into(), &gold).is_err());
    }

    /// Every subset of candidate pairs on a small fixture, counted by hand.
    #[test]
    fn metrics_match_brute_force_counts() {
        let gold = vec![instance(3, &[1]), instance(2, &[0, 1]), instance(2, &[0])];
        let pairs: Vec<(usize, usize)> = gold
            .iter()
            .enumerate()
            .flat_map(|(i, g)| (0..g.clauses.len()).map(move |c| (i, c)))
            .collect();
        for mask in 0u32..(1 << pairs.len()) {
            let proposed: BTreeSet<_> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, p)| *p)
                .collect();
            let mut correct = 0;
            for &(i, c) in &proposed {
                for &g in &gold[i].cause_clauses {
                    if g == c {
                        correct += 1;
                    }
                }
            }
            let r = ece_metrics(&proposed, &gold).unwrap();
            assert_eq!(r.correct, correct);
            assert_eq!(r.annotated, 4);
            let p = if proposed.is_empty() { 0.0 } else { correct as f64 / proposed.len() as f64 };
            assert_eq!(r.precision, p);
            assert_eq!(r.recall, correct as f64 / 4.0);
        }
    }

    proptest! {
        #[test]
        fn f_is_the_harmonic_mean(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let f = f_score(p, r);
            prop_assert!((f * (p + r) - 2.0 * p * r).abs() <= 1e-12);
        }
    }
}
