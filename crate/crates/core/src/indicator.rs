//! Emotional event indicators: the registry file, template expansion, 被
//! composition, pruning of weak and ambiguous cues, and count statistics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::text::{char_len, nfc};

pub const REGISTRY_HEADER: &str = "surface\tpolarity\tclass\torigin\tflags";
const EXPECTED_CLASS_KEY: &str = "expected-class-counts:";
const EXPECTED_POLARITY_KEY: &str = "expected-polarity-counts:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Polarity::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "polarity",
                token: s.to_string(),
            })
    }
}

/// Morphological family of an indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternClass {
    #[serde(rename = "classic")]
    Classic,
    #[serde(rename = "neutral_bei")]
    NeutralBei,
    #[serde(rename = "resultative_verb")]
    ResultativeVerb,
    #[serde(rename = "bai_V")]
    BaiV,
    #[serde(rename = "V_po")]
    VPo,
    #[serde(rename = "cuo_V")]
    CuoV,
    #[serde(rename = "V_cuo")]
    VCuo,
    #[serde(rename = "V_dui")]
    VDui,
    #[serde(rename = "lou_V")]
    LouV,
    #[serde(rename = "other")]
    Other,
    #[serde(rename = "bei_composed")]
    BeiComposed,
}

/// Where the marker sits relative to the verb in a template class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Prefix(char),
    Suffix(char),
}

impl Template {
    pub fn apply(self, verb: &str) -> String {
        match self {
            Template::Prefix(marker) => format!("{marker}{verb}"),
            Template::Suffix(marker) => format!("{verb}{marker}"),
        }
    }
}

impl PatternClass {
    /// Table order used by every report.
    pub const ALL: [PatternClass; 11] = [
        PatternClass::Classic,
        PatternClass::NeutralBei,
        PatternClass::ResultativeVerb,
        PatternClass::BaiV,
        PatternClass::VPo,
        PatternClass::CuoV,
        PatternClass::VCuo,
        PatternClass::VDui,
        PatternClass::LouV,
        PatternClass::Other,
        PatternClass::BeiComposed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternClass::Classic => "classic",
            PatternClass::NeutralBei => "neutral_bei",
            PatternClass::ResultativeVerb => "resultative_verb",
            PatternClass::BaiV => "bai_V",
            PatternClass::VPo => "V_po",
            PatternClass::CuoV => "cuo_V",
            PatternClass::VCuo => "V_cuo",
            PatternClass::VDui => "V_dui",
            PatternClass::LouV => "lou_V",
            PatternClass::Other => "other",
            PatternClass::BeiComposed => "bei_composed",
        }
    }

    pub fn template(self) -> Option<Template> {
        match self {
            PatternClass::BaiV => Some(Template::Prefix('白')),
            PatternClass::CuoV => Some(Template::Prefix('错')),
            PatternClass::LouV => Some(Template::Prefix('漏')),
            PatternClass::VPo => Some(Template::Suffix('破')),
            PatternClass::VCuo => Some(Template::Suffix('错')),
            PatternClass::VDui => Some(Template::Suffix('对')),
            _ => None,
        }
    }

    /// Fixed polarity of a template class.
    pub fn template_polarity(self) -> Option<Polarity> {
        self.template().map(|_| {
            if self == PatternClass::VDui {
                Polarity::Positive
            } else {
                Polarity::Negative
            }
        })
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "pattern class",
                token: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Literature,
    TemplateExpanded,
    BeiComposed,
    Manual,
}

impl Origin {
    pub const ALL: [Origin; 4] = [Origin::Literature, Origin::TemplateExpanded, Origin::BeiComposed, Origin::Manual];

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Literature => "literature",
            Origin::TemplateExpanded => "template_expanded",
            Origin::BeiComposed => "bei_composed",
            Origin::Manual => "manual",
        }
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Origin::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "origin",
                token: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicator {
    pub surface: String,
    pub polarity: Polarity,
    pub pattern_class: PatternClass,
    pub origin: Origin,
    pub weak: bool,
    pub ambiguous: bool,
}

impl Indicator {
    pub fn new(surface: &str, polarity: Polarity, pattern_class: PatternClass, origin: Origin) -> Result<Self> {
        let indicator = Indicator {
            surface: nfc(surface),
            polarity,
            pattern_class,
            origin,
            weak: false,
            ambiguous: false,
        };
        indicator.check()?;
        Ok(indicator)
    }

    pub fn check(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Invariant(format!("indicator `{}`: {msg}", self.surface)));
        if self.surface.is_empty() {
            return fail("empty surface");
        }
        if self.pattern_class == PatternClass::NeutralBei && self.surface != "被" {
            return fail("neutral_bei class is reserved for 被");
        }
        if self.pattern_class == PatternClass::BeiComposed
            && (!self.surface.starts_with('被') || char_len(&self.surface) < 2)
        {
            return fail("bei_composed surface must be 被 followed by a verb");
        }
        if self.polarity == Polarity::Neutral
            && !matches!(self.pattern_class, PatternClass::NeutralBei | PatternClass::BeiComposed)
        {
            return fail("only 被 indicators may be neutral");
        }
        Ok(())
    }

    /// Weak and ambiguous indicators are never harvested.
    pub fn is_harvestable(&self) -> bool {
        !self.weak && !self.ambiguous
    }

    fn flags_token(&self) -> String {
        let mut flags = Vec::new();
        if self.weak {
            flags.push("weak");
        }
        if self.ambiguous {
            flags.push("ambiguous");
        }
        if flags.is_empty() {
            "-".to_string()
        } else {
            flags.join(",")
        }
    }

    fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.surface,
            self.polarity,
            self.pattern_class,
            self.origin.as_str(),
            self.flags_token()
        )
    }
}

/// Expected counts attached to a registry file through `#` metadata lines.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub by_class: Vec<(PatternClass, usize)>,
    pub by_polarity: Vec<(Polarity, usize)>,
}

#[derive(Debug, Clone, Default)]
pub struct IndicatorRegistry {
    indicators: Vec<Indicator>,
    index: HashMap<String, usize>,
    expected: Option<ExpectedCounts>,
}

impl PartialEq for IndicatorRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.indicators == other.indicators
    }
}

impl IndicatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_indicators(indicators: impl IntoIterator<Item = Indicator>) -> Result<Self> {
        let mut registry = Self::new();
        for indicator in indicators {
            registry.insert(indicator)?;
        }
        Ok(registry)
    }

    pub fn insert(&mut self, indicator: Indicator) -> Result<()> {
        indicator.check()?;
        if self.index.contains_key(&indicator.surface) {
            return Err(Error::DuplicateSurface(indicator.surface));
        }
        self.index.insert(indicator.surface.clone(), self.indicators.len());
        self.indicators.push(indicator);
        Ok(())
    }

    pub fn get(&self, surface: &str) -> Option<&Indicator> {
        self.index.get(surface).map(|&i| &self.indicators[i])
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index.contains_key(surface)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Indicator> {
        self.indicators.iter()
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn expected(&self) -> Option<&ExpectedCounts> {
        self.expected.as_ref()
    }

    pub fn set_expected(&mut self, expected: Option<ExpectedCounts>) {
        self.expected = expected;
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut registry = Self::new();
        let mut expected = ExpectedCounts::default();
        let mut saw_expected = false;
        let mut saw_header = false;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(rest) = comment.strip_prefix(EXPECTED_CLASS_KEY) {
                    expected.by_class = parse_count_list(rest, file, line_no)?;
                    saw_expected = true;
                } else if let Some(rest) = comment.strip_prefix(EXPECTED_POLARITY_KEY) {
                    expected.by_polarity = parse_count_list(rest, file, line_no)?;
                    saw_expected = true;
                }
                continue;
            }
            if !saw_header {
                if line != REGISTRY_HEADER {
                    return Err(Error::malformed(file, line_no, format!("expected header `{REGISTRY_HEADER}`")));
                }
                saw_header = true;
                continue;
            }
            let indicator = parse_row(line, file, line_no)?;
            match registry.insert(indicator) {
                Err(Error::Invariant(msg)) => return Err(Error::malformed(file, line_no, msg)),
                other => other?,
            }
        }
        if saw_expected {
            registry.expected = Some(expected);
        }
        Ok(registry)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some(expected) = &self.expected {
            if !expected.by_class.is_empty() {
                out.push_str(&format!("# {EXPECTED_CLASS_KEY} {}\n", format_count_list(&expected.by_class)));
            }
            if !expected.by_polarity.is_empty() {
                out.push_str(&format!(
                    "# {EXPECTED_POLARITY_KEY} {}\n",
                    format_count_list(&expected.by_polarity)
                ));
            }
        }
        out.push_str(REGISTRY_HEADER);
        out.push('\n');
        for indicator in &self.indicators {
            out.push_str(&indicator.to_tsv_row());
            out.push('\n');
        }
        out
    }
}

impl<'a> IntoIterator for &'a IndicatorRegistry {
    type Item = &'a Indicator;
    type IntoIter = std::slice::Iter<'a, Indicator>;

    fn into_iter(self) -> Self::IntoIter {
        self.iter()
    }
}

fn parse_row(line: &str, file: &str, line_no: usize) -> Result<Indicator> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 5 {
        return Err(Error::malformed(file, line_no, format!("expected 5 columns, found {}", cols.len())));
    }
    let bad = |e: Error| Error::malformed(file, line_no, e.to_string());
    let surface = nfc(cols[0].trim());
    if surface.is_empty() {
        return Err(Error::malformed(file, line_no, "empty surface"));
    }
    let polarity: Polarity = cols[1].trim().parse().map_err(bad)?;
    let pattern_class: PatternClass = cols[2].trim().parse().map_err(bad)?;
    let origin: Origin = cols[3].trim().parse().map_err(bad)?;
    let mut indicator = Indicator {
        surface,
        polarity,
        pattern_class,
        origin,
        weak: false,
        ambiguous: false,
    };
    let flags = cols[4].trim();
    if flags != "-" {
        for flag in flags.split(',') {
            match flag.trim() {
                "weak" => indicator.weak = true,
                "ambiguous" => indicator.ambiguous = true,
                other => {
                    return Err(bad(Error::UnknownToken {
                        kind: "flag",
                        token: other.to_string(),
                    }))
                }
            }
        }
    }
    Ok(indicator)
}

fn parse_count_list<T: FromStr<Err = Error>>(rest: &str, file: &str, line_no: usize) -> Result<Vec<(T, usize)>> {
    rest.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::malformed(file, line_no, format!("bad count entry `{pair}`")))?;
            let key = key.trim().parse().map_err(|e: Error| Error::malformed(file, line_no, e.to_string()))?;
            let value = value
                .trim()
                .parse()
                .map_err(|_| Error::malformed(file, line_no, format!("bad count `{value}`")))?;
            Ok((key, value))
        })
        .collect()
}

fn format_count_list<T: fmt::Display>(counts: &[(T, usize)]) -> String {
    counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn load_registry(path: &Path) -> Result<IndicatorRegistry> {
    let text = read_to_string(path)?;
    IndicatorRegistry::parse(&text, &path.display().to_string())
}

/// Ordered, duplicate-free list of verbs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbLexicon {
    verbs: Vec<String>,
}

impl VerbLexicon {
    /// Verbs are NFC-normalized and trimmed. Empty entries and duplicates are
    /// rejected. 被-prefixed verbs are admitted here and rejected by
    /// [`compose_bei_indicators`].
    pub fn new<I, S>(verbs: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for verb in verbs {
            let verb = nfc(verb.as_ref().trim());
            if verb.is_empty() {
                return Err(Error::Invariant("empty verb in lexicon".into()));
            }
            if !seen.insert(verb.clone()) {
                return Err(Error::DuplicateSurface(verb));
            }
            out.push(verb);
        }
        Ok(VerbLexicon { verbs: out })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.verbs.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }
}

/// One indicator per verb, built from a template class such as `V错` or `漏V`.
pub fn expand_template(pattern_class: PatternClass, verbs: &VerbLexicon) -> Result<Vec<Indicator>> {
    let (Some(template), Some(polarity)) = (pattern_class.template(), pattern_class.template_polarity()) else {
        return Err(Error::NotTemplateClass(pattern_class.to_string()));
    };
    if verbs.is_empty() {
        return Err(Error::Empty("verb lexicon"));
    }
    let out: Vec<Indicator> = verbs
        .iter()
        .map(|verb| Indicator::new(&template.apply(verb), polarity, pattern_class, Origin::TemplateExpanded))
        .collect::<Result<_>>()?;
    ensure_distinct(&out)?;
    Ok(out)
}

/// 被 + verb for every verb in the lexicon.
pub fn compose_bei_indicators(verbs: &VerbLexicon) -> Result<Vec<Indicator>> {
    if verbs.is_empty() {
        return Err(Error::Empty("verb lexicon"));
    }
    let out: Vec<Indicator> = verbs
        .iter()
        .map(|verb| {
            if verb.starts_with('被') {
                return Err(Error::AlreadyBeiPrefixed(verb.to_string()));
            }
            Indicator::new(&format!("被{verb}"), Polarity::Neutral, PatternClass::BeiComposed, Origin::BeiComposed)
        })
        .collect::<Result<_>>()?;
    ensure_distinct(&out)?;
    Ok(out)
}

fn ensure_distinct(indicators: &[Indicator]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for indicator in indicators {
        if !seen.insert(indicator.surface.as_str()) {
            return Err(Error::DuplicateSurface(indicator.surface.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneReason {
    Weak,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub surface: String,
    pub reason: PruneReason,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub registry: IndicatorRegistry,
    pub excluded: Vec<Excluded>,
    /// List entries that matched nothing in the registry.
    pub warnings: Vec<String>,
}

pub fn prune(registry: &IndicatorRegistry, weak: &BTreeSet<String>, ambiguous: &BTreeSet<String>) -> PruneOutcome {
    let mut kept = IndicatorRegistry::new();
    kept.expected = registry.expected.clone();
    let mut excluded = Vec::new();
    for indicator in registry {
        let reason = if weak.contains(&indicator.surface) {
            Some(PruneReason::Weak)
        } else if ambiguous.contains(&indicator.surface) {
            Some(PruneReason::Ambiguous)
        } else {
            None
        };
        match reason {
            Some(reason) => excluded.push(Excluded {
                surface: indicator.surface.clone(),
                reason,
            }),
            None => {
                kept.index.insert(indicator.surface.clone(), kept.indicators.len());
                kept.indicators.push(indicator.clone());
            }
        }
    }
    let warnings = [("weak", weak), ("ambiguous", ambiguous)]
        .into_iter()
        .flat_map(|(list, entries)| {
            entries
                .iter()
                .filter(|s| !registry.contains(s))
                .map(move |s| format!("{list} list entry `{s}` is not in the registry"))
        })
        .collect::<Vec<_>>();
    for warning in &warnings {
        tracing::warn!("{warning}");
    }
    PruneOutcome {
        registry: kept,
        excluded,
        warnings,
    }
}

/// One surface per line; blank lines and `#` comments ignored.
pub fn parse_surface_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(nfc)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: PatternClass,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityCounts {
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
}

impl PolarityCounts {
    pub fn get(&self, polarity: Polarity) -> usize {
        match polarity {
            Polarity::Positive => self.positive,
            Polarity::Neutral => self.neutral,
            Polarity::Negative => self.negative,
        }
    }

    pub fn total(&self) -> usize {
        self.positive + self.neutral + self.negative
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub by_class: Vec<ClassCount>,
    pub by_polarity: PolarityCounts,
    pub total: usize,
    /// Differences against the registry's expected-count metadata, if any.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mismatches: Vec<String>,
}

impl StatsReport {
    pub fn class_count(&self, class: PatternClass) -> usize {
        self.by_class
            .iter()
            .find(|c| c.class == class)
            .map_or(0, |c| c.count)
    }
}

pub fn registry_stats(registry: &IndicatorRegistry) -> StatsReport {
    let mut by_class: Vec<ClassCount> = PatternClass::ALL
        .iter()
        .map(|&class| ClassCount { class, count: 0 })
        .collect();
    let mut by_polarity = PolarityCounts::default();
    for indicator in registry {
        let slot = PatternClass::ALL
            .iter()
            .position(|&c| c == indicator.pattern_class)
            .expect("every class is listed");
        by_class[slot].count += 1;
        match indicator.polarity {
            Polarity::Positive => by_polarity.positive += 1,
            Polarity::Neutral => by_polarity.neutral += 1,
            Polarity::Negative => by_polarity.negative += 1,
        }
    }
    let mut report = StatsReport {
        by_class,
        by_polarity,
        total: registry.len(),
        mismatches: Vec::new(),
    };
    if let Some(expected) = registry.expected() {
        for &(class, want) in &expected.by_class {
            let got = report.class_count(class);
            if got != want {
                report.mismatches.push(format!("class {class}: expected {want}, found {got}"));
            }
        }
        for &(polarity, want) in &expected.by_polarity {
            let got = report.by_polarity.get(polarity);
            if got != want {
                report.mismatches.push(format!("polarity {polarity}: expected {want}, found {got}"));
            }
        }
    }
    report
}
