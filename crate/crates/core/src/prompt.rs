//! Few-shot generation prompts: the template asset, per-indicator example
//! packs with class-level fallbacks, rendering and the inverse parse.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_to_string, Error, Result};
use crate::indicator::{Indicator, PatternClass};
use crate::text::nfc;

pub const EXAMPLES_PER_PROMPT: usize = 8;
pub const REQUESTED_PHRASES: usize = 100;

const INDICATOR_SLOT: &str = "[INDICATOR]";
const EXAMPLES_SLOT: &str = "{EXAMPLES}";
const TEMPLATE_V1: &str = include_str!("../assets/prompt_template_v1.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    body: String,
}

impl PromptTemplate {
    pub fn new(version: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let body = nfc(&body.into());
        for slot in [INDICATOR_SLOT, EXAMPLES_SLOT] {
            if !body.contains(slot) {
                return Err(Error::Invariant(format!("prompt template lacks the {slot} placeholder")));
            }
        }
        if !body.contains(&REQUESTED_PHRASES.to_string()) {
            return Err(Error::Invariant("prompt template does not request 100 phrases".into()));
        }
        Ok(PromptTemplate {
            version: version.into(),
            body,
        })
    }

    /// The bundled Chinese template.
    pub fn v1() -> Self {
        Self::new("v1", TEMPLATE_V1).expect("bundled template is valid")
    }

    pub fn load(path: &Path, version: impl Into<String>) -> Result<Self> {
        Self::new(version, read_to_string(path)?)
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::v1()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub indicator_surface: String,
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum ExampleIssue {
    WrongCount { found: usize },
    MissingPrefix { index: usize, example: String },
    Duplicate { first: usize, second: usize, example: String },
}

impl fmt::Display for ExampleIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExampleIssue::WrongCount { found } => {
                write!(f, "expected {EXAMPLES_PER_PROMPT} examples, found {found}")
            }
            ExampleIssue::MissingPrefix { index, example } => {
                write!(f, "example {} `{example}` does not start with the indicator", index + 1)
            }
            ExampleIssue::Duplicate { first, second, example } => {
                write!(f, "examples {} and {} are both `{example}`", first + 1, second + 1)
            }
        }
    }
}

impl ExampleSet {
    pub fn new<S: AsRef<str>>(indicator_surface: &str, examples: impl IntoIterator<Item = S>) -> Self {
        ExampleSet {
            indicator_surface: nfc(indicator_surface),
            examples: examples.into_iter().map(|e| nfc(e.as_ref().trim())).collect(),
        }
    }

    /// Pack file: indicator surface on the first line, one example per following line.
    pub fn parse_pack(text: &str, file: &str) -> Result<Self> {
        let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
        let surface = lines
            .next()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::malformed(file, 1, "missing indicator surface"))?;
        let mut examples: Vec<&str> = lines.map(str::trim).collect();
        while examples.last().is_some_and(|l| l.is_empty()) {
            examples.pop();
        }
        if let Some(pos) = examples.iter().position(|l| l.is_empty()) {
            return Err(Error::malformed(file, pos + 2, "blank example line"));
        }
        Ok(ExampleSet::new(surface, examples))
    }

    pub fn to_pack(&self) -> String {
        let mut out = format!("{}\n", self.indicator_surface);
        for example in &self.examples {
            out.push_str(example);
            out.push('\n');
        }
        out
    }

    /// The same themes attached to another indicator.
    pub fn reanchor(&self, surface: &str) -> Result<ExampleSet> {
        let examples = self
            .examples
            .iter()
            .map(|e| {
                e.strip_prefix(self.indicator_surface.as_str())
                    .map(|theme| format!("{surface}{theme}"))
                    .ok_or_else(|| {
                        Error::Invariant(format!(
                            "default pack example `{e}` does not start with `{}`",
                            self.indicator_surface
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExampleSet::new(surface, examples))
    }
}

/// Every violated invariant of the set; empty iff the set is usable.
pub fn validate_example_set(set: &ExampleSet) -> Vec<ExampleIssue> {
    let mut issues = Vec::new();
    if set.examples.len() != EXAMPLES_PER_PROMPT {
        issues.push(ExampleIssue::WrongCount {
            found: set.examples.len(),
        });
    }
    for (index, example) in set.examples.iter().enumerate() {
        if !example.starts_with(set.indicator_surface.as_str()) {
            issues.push(ExampleIssue::MissingPrefix {
                index,
                example: example.clone(),
            });
        }
    }
    for (second, example) in set.examples.iter().enumerate() {
        if let Some(first) = set.examples[..second].iter().position(|e| e == example) {
            issues.push(ExampleIssue::Duplicate {
                first,
                second,
                example: example.clone(),
            });
        }
    }
    issues
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub indicator_surface: String,
    pub rendered_text: String,
    pub template_version: String,
}

impl Prompt {
    /// Hex SHA-256 of the rendered text.
    pub fn hash(&self) -> String {
        text_hash(&self.rendered_text)
    }
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn render_prompt(indicator: &Indicator, examples: &ExampleSet, template: &PromptTemplate) -> Result<Prompt> {
    if examples.indicator_surface != indicator.surface {
        return Err(Error::Precondition(format!(
            "example set is for `{}`, not `{}`",
            examples.indicator_surface, indicator.surface
        )));
    }
    let issues = validate_example_set(examples);
    if !issues.is_empty() {
        return Err(Error::InvalidExampleSet {
            surface: indicator.surface.clone(),
            problems: issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        });
    }
    let numbered = examples
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let end = if i + 1 == examples.examples.len() { '。' } else { '；' };
            format!("{}. {e}{end}", i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let rendered_text = template
        .body
        .replace(INDICATOR_SLOT, &indicator.surface)
        .replace(EXAMPLES_SLOT, &numbered);
    Ok(Prompt {
        indicator_surface: indicator.surface.clone(),
        rendered_text,
        template_version: template.version.clone(),
    })
}

/// Indicator named in a rendered generation prompt: the text between the
/// opening quote and the `{}` theme slot.
pub fn extract_indicator(rendered: &str) -> Option<&str> {
    let slot = rendered.find("{}”")?;
    let open = rendered[..slot].rfind('“')?;
    let surface = &rendered[open + '“'.len_utf8()..slot];
    (!surface.is_empty()).then_some(surface)
}

fn numbered_example_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)\. (.+)[；。]$").expect("valid regex"))
}

/// Inverse of [`render_prompt`]: recovers the indicator and examples.
pub fn parse_prompt(rendered: &str) -> Option<ExampleSet> {
    let surface = extract_indicator(rendered)?;
    let examples: Vec<&str> = rendered
        .lines()
        .filter_map(|l| numbered_example_re().captures(l).map(|c| c.get(2).map_or("", |m| m.as_str())))
        .collect();
    Some(ExampleSet::new(surface, examples))
}

/// Example packs keyed by indicator surface, plus one default per pattern class.
#[derive(Debug, Clone, Default)]
pub struct PackLibrary {
    per_indicator: HashMap<String, ExampleSet>,
    class_defaults: HashMap<PatternClass, ExampleSet>,
}

impl PackLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, set: ExampleSet) {
        self.per_indicator.insert(set.indicator_surface.clone(), set);
    }

    pub fn insert_default(&mut self, class: PatternClass, set: ExampleSet) {
        self.class_defaults.insert(class, set);
    }

    /// Reads `<dir>/*.txt` as per-indicator packs and `<dir>/default/<class>.txt`
    /// as class defaults.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut library = Self::new();
        for path in sorted_txt_files(dir)? {
            let set = ExampleSet::parse_pack(&read_to_string(&path)?, &path.display().to_string())?;
            library.insert(set);
        }
        let defaults = dir.join("default");
        if defaults.is_dir() {
            for path in sorted_txt_files(&defaults)? {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let class: PatternClass = stem.parse()?;
                let set = ExampleSet::parse_pack(&read_to_string(&path)?, &path.display().to_string())?;
                library.insert_default(class, set);
            }
        }
        Ok(library)
    }

    pub fn len(&self) -> usize {
        self.per_indicator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_indicator.is_empty() && self.class_defaults.is_empty()
    }

    /// Curated pack for the indicator, else its class default re-anchored on it.
    pub fn examples_for(&self, indicator: &Indicator) -> Result<ExampleSet> {
        if let Some(set) = self.per_indicator.get(&indicator.surface) {
            return Ok(set.clone());
        }
        match self.class_defaults.get(&indicator.pattern_class) {
            Some(default) => default.reanchor(&indicator.surface),
            None => Err(Error::MissingPromptPack(indicator.surface.clone())),
        }
    }
}

fn sorted_txt_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicator::{Origin, Polarity};

    pub(crate) fn zaoshou_set() -> ExampleSet {
        ExampleSet::new(
            "遭受",
            [
                "遭受挫折",
                "遭受好朋友的背叛",
                "遭受陌生人的袭击",
                "遭受校园暴力",
                "遭受无端的网络暴力",
                "遭受社会的不公正对待",
                "遭受灭顶之灾",
                "遭受失眠的困扰",
            ],
        )
    }

    fn zaoshou() -> Indicator {
        Indicator::new("遭受", Polarity::Negative, PatternClass::Classic, Origin::Literature).unwrap()
    }

    #[test]
    fn renders_the_zaoshou_prompt() {
        let prompt = render_prompt(&zaoshou(), &zaoshou_set(), &PromptTemplate::v1()).unwrap();
        let expected = "任务是填写短语模板“遭受{}”中的“{}”。需要保证生成短语的正确性和多样性。然后，请输出100个短语。下面是一些例子：\n\
1. 遭受挫折；\n\
2. 遭受好朋友的背叛；\n\
3. 遭受陌生人的袭击；\n\
4. 遭受校园暴力；\n\
5. 遭受无端的网络暴力；\n\
6. 遭受社会的不公正对待；\n\
7. 遭受灭顶之灾；\n\
8. 遭受失眠的困扰。\n";
        assert_eq!(prompt.rendered_text, expected);
        assert_eq!(prompt.template_version, "v1");
    }

    #[test]
    fn render_rejects_bad_sets() {
        let mut seven = zaoshou_set();
        seven.examples.pop();
        assert!(matches!(
            render_prompt(&zaoshou(), &seven, &PromptTemplate::v1()),
            Err(Error::InvalidExampleSet { .. })
        ));
        let mut other = zaoshou_set();
        other.indicator_surface = "获得".into();
        assert!(render_prompt(&zaoshou(), &other, &PromptTemplate::v1()).is_err());
    }

    #[test]
    fn validation_reports_each_problem() {
        assert!(validate_example_set(&zaoshou_set()).is_empty());

        let mut dup = zaoshou_set();
        dup.examples[7] = dup.examples[0].clone();
        assert_eq!(
            validate_example_set(&dup),
            vec![ExampleIssue::Duplicate {
                first: 0,
                second: 7,
                example: "遭受挫折".into()
            }]
        );

        let mut bad_prefix = zaoshou_set();
        bad_prefix.examples[2] = "挫折遭受X".into();
        assert!(matches!(
            validate_example_set(&bad_prefix).as_slice(),
            [ExampleIssue::MissingPrefix { index: 2, .. }]
        ));
    }

    #[test]
    fn rendered_prompt_parses_back() {
        let prompt = render_prompt(&zaoshou(), &zaoshou_set(), &PromptTemplate::v1()).unwrap();
        assert_eq!(extract_indicator(&prompt.rendered_text), Some("遭受"));
        assert_eq!(parse_prompt(&prompt.rendered_text).unwrap(), zaoshou_set());
    }

    #[test]
    fn template_requires_placeholders() {
        assert!(PromptTemplate::new("x", "请输出100个短语 {EXAMPLES}").is_err());
        assert!(PromptTemplate::new("x", "[INDICATOR] 请输出100个短语").is_err());
        assert!(PromptTemplate::new("x", "[INDICATOR] {EXAMPLES}").is_err());
    }

    #[test]
    fn class_default_is_reanchored() {
        let mut lib = PackLibrary::new();
        lib.insert_default(PatternClass::Classic, zaoshou_set());
        let ind = Indicator::new("遭到", Polarity::Negative, PatternClass::Classic, Origin::Literature).unwrap();
        let set = lib.examples_for(&ind).unwrap();
        assert_eq!(set.indicator_surface, "遭到");
        assert_eq!(set.examples[0], "遭到挫折");
        assert!(validate_example_set(&set).is_empty());
        let other = Indicator::new("获得", Polarity::Positive, PatternClass::Other, Origin::Literature).unwrap();
        assert!(matches!(lib.examples_for(&other), Err(Error::MissingPromptPack(_))));
    }

    #[test]
    fn pack_file_round_trip() {
        let set = zaoshou_set();
        assert_eq!(ExampleSet::parse_pack(&set.to_pack(), "p").unwrap(), set);
        assert!(ExampleSet::parse_pack("", "p").is_err());
    }
}
