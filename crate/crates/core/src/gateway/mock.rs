//! Deterministic offline provider.
//!
//! Generation prompts are answered with a numbered list of `indicator + theme`
//! phrases drawn from a bundled theme bank, with a configurable number of
//! duplicate, garbage and blank lines mixed in. Constrained triage/polarity
//! prompts are answered from an answer book, falling back to a seeded hash.
//! Output is a pure function of (prompt text, seed, config).

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::constrained::{detect_query, QueryKind};
use super::{CompletionParams, Provider, ProviderError};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, fnv1a};
use crate::prompt::extract_indicator;

const THEME_BANK: &str = include_str!("../../assets/theme_bank.txt");
const FREE_TEXT: [&str; 3] = ["好的，以下是生成的短语：", "以上短语仅供参考。", "抱歉，部分短语可能重复。"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    /// Distinct well-formed phrases per generation (capped by the theme bank).
    pub unique: usize,
    /// Extra lines repeating an earlier phrase.
    pub duplicates: usize,
    /// Lines that fail parsing: bare themes, bare indicators, free text.
    pub garbage: usize,
    pub blanks: usize,
    /// Fraction of unlisted 被 events the mock calls neutral.
    pub neutral_rate: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            unique: 100,
            duplicates: 0,
            garbage: 0,
            blanks: 0,
            neutral_rate: 0.1,
        }
    }
}

impl MockConfig {
    /// Splits `lines` non-blank lines by the given duplicate and garbage rates.
    pub fn with_rates(lines: usize, duplicate_rate: f64, garbage_rate: f64) -> Self {
        let duplicates = (lines as f64 * duplicate_rate).round() as usize;
        let garbage = (lines as f64 * garbage_rate).round() as usize;
        MockConfig {
            unique: lines.saturating_sub(duplicates + garbage),
            duplicates,
            garbage,
            ..Self::default()
        }
    }
}

/// What the mock actually emitted for one generation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockLedger {
    pub unique: usize,
    pub duplicates: usize,
    pub garbage: usize,
    pub blanks: usize,
    pub lines: usize,
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    config: MockConfig,
    themes: Arc<Vec<String>>,
    neutrality: HashMap<String, String>,
    polarity: HashMap<String, String>,
}

enum Line {
    Phrase(String),
    Free(String),
    Blank,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self::with_config(seed, MockConfig::default())
    }

    pub fn with_config(seed: u64, config: MockConfig) -> Self {
        let themes = THEME_BANK
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        MockProvider {
            seed,
            config,
            themes: Arc::new(themes),
            neutrality: HashMap::new(),
            polarity: HashMap::new(),
        }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn theme_count(&self) -> usize {
        self.themes.len()
    }

    /// Raw reply for a constrained query about `event`.
    pub fn with_answer(mut self, kind: QueryKind, event: &str, answer: &str) -> Self {
        let book = match kind {
            QueryKind::Neutrality => &mut self.neutrality,
            QueryKind::Polarity => &mut self.polarity,
        };
        book.insert(event.to_string(), answer.to_string());
        self
    }

    /// Answer book TSV: `event<TAB>neutral-answer<TAB>polarity-answer`; `-` leaves a column unset.
    pub fn with_answer_book(mut self, text: &str) -> Result<Self> {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::malformed("answer book", i + 1, "expected 3 columns"));
            }
            let event = cols[0].trim();
            if cols[1].trim() != "-" {
                self.neutrality.insert(event.to_string(), cols[1].trim().to_string());
            }
            if cols[2].trim() != "-" {
                self.polarity.insert(event.to_string(), cols[2].trim().to_string());
            }
        }
        Ok(self)
    }

    fn rng_for(&self, prompt: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, fnv1a(prompt.as_bytes())))
    }

    fn answer(&self, kind: QueryKind, event: &str) -> String {
        let book = match kind {
            QueryKind::Neutrality => &self.neutrality,
            QueryKind::Polarity => &self.polarity,
        };
        if let Some(answer) = book.get(event) {
            return answer.clone();
        }
        let h = derive_seed(self.seed, fnv1a(event.as_bytes()));
        match kind {
            QueryKind::Neutrality => {
                let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
                if unit < self.config.neutral_rate { "是" } else { "否" }.to_string()
            }
            QueryKind::Polarity => if h & 1 == 0 { "正面" } else { "负面" }.to_string(),
        }
    }

    /// The reply to a generation prompt and the ledger of what it contains.
    pub fn generate(&self, prompt: &str) -> (String, MockLedger) {
        let mut rng = self.rng_for(prompt);
        let Some(indicator) = extract_indicator(prompt) else {
            let ledger = MockLedger {
                garbage: 1,
                lines: 1,
                ..MockLedger::default()
            };
            return ("抱歉，我无法理解这个任务。".to_string(), ledger);
        };
        let cfg = &self.config;
        let unique = cfg.unique.min(self.themes.len());
        let chosen = rand::seq::index::sample(&mut rng, self.themes.len(), unique);
        let phrases: Vec<String> = chosen
            .iter()
            .map(|i| format!("{indicator}{}", self.themes[i]))
            .collect();

        let mut lines: Vec<Line> = phrases.iter().cloned().map(Line::Phrase).collect();
        let duplicates = if phrases.is_empty() { 0 } else { cfg.duplicates };
        for _ in 0..duplicates {
            let pick = rng.random_range(0..phrases.len());
            lines.push(Line::Phrase(phrases[pick].clone()));
        }
        for _ in 0..cfg.garbage {
            let line = match rng.random_range(0..3u8) {
                0 => {
                    let theme = &self.themes[rng.random_range(0..self.themes.len())];
                    if theme.starts_with(indicator) {
                        Line::Free(FREE_TEXT[0].to_string())
                    } else {
                        Line::Phrase(theme.clone())
                    }
                }
                1 => Line::Phrase(indicator.to_string()),
                _ => Line::Free(FREE_TEXT[rng.random_range(0..FREE_TEXT.len())].to_string()),
            };
            lines.push(line);
        }
        lines.extend((0..cfg.blanks).map(|_| Line::Blank));
        lines.shuffle(&mut rng);

        let mut number = 0;
        let text = lines
            .iter()
            .map(|line| match line {
                Line::Phrase(p) => {
                    number += 1;
                    format!("{number}. {p}；")
                }
                Line::Free(t) => t.clone(),
                Line::Blank => String::new(),
            })
            .collect::<Vec<_>>()
            .join("\n");
        let ledger = MockLedger {
            unique,
            duplicates,
            garbage: cfg.garbage,
            blanks: cfg.blanks,
            lines: lines.len(),
        };
        (text, ledger)
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<String, ProviderError> {
        if let Some((kind, event)) = detect_query(prompt) {
            return Ok(self.answer(kind, event));
        }
        Ok(self.generate(prompt).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{neutrality_prompt, parse_phrase_text, polarity_prompt};

    const PROMPT: &str = "任务是填写短语模板“遭受{}”中的“{}”。请输出100个短语。";

    #[test]
    fn same_seed_same_text() {
        let a = MockProvider::new(7);
        let b = MockProvider::new(7);
        let params = CompletionParams::default();
        assert_eq!(a.complete(PROMPT, &params), b.complete(PROMPT, &params));
        assert_ne!(
            MockProvider::new(8).complete(PROMPT, &params),
            a.complete(PROMPT, &params)
        );
    }

    #[test]
    fn ledger_matches_parsed_output() {
        let cfg = MockConfig {
            unique: 90,
            duplicates: 30,
            garbage: 7,
            blanks: 3,
            neutral_rate: 0.0,
        };
        let mock = MockProvider::with_config(11, cfg);
        let (text, ledger) = mock.generate(PROMPT);
        assert_eq!(ledger.lines, 130);
        assert_eq!(text.lines().count(), 130);
        let parsed = parse_phrase_text(&text, "遭受");
        assert_eq!(parsed.accepted.len(), 120);
        assert_eq!(parsed.rejected.len(), 7);
        assert_eq!(parsed.blank_lines, 3);
        let distinct: std::collections::BTreeSet<_> = parsed.accepted.iter().collect();
        assert_eq!(distinct.len(), 90);
    }

    #[test]
    fn unique_count_is_capped_by_theme_bank() {
        let mock = MockProvider::with_config(
            1,
            MockConfig {
                unique: 10_000,
                ..MockConfig::default()
            },
        );
        let (_, ledger) = mock.generate(PROMPT);
        assert_eq!(ledger.unique, mock.theme_count());
        assert!(mock.theme_count() >= 150);
    }

    #[test]
    fn answer_book_overrides_hash() {
        let mock = MockProvider::new(3)
            .with_answer_book("被安排参加会议\t是\t-\n被没收手机\t否\t负面\n")
            .unwrap()
            .with_answer(QueryKind::Polarity, "被善待", "正面");
        let params = CompletionParams::default();
        assert_eq!(mock.complete(&neutrality_prompt("被安排参加会议"), &params).unwrap(), "是");
        assert_eq!(mock.complete(&neutrality_prompt("被没收手机"), &params).unwrap(), "否");
        assert_eq!(mock.complete(&polarity_prompt("被没收手机"), &params).unwrap(), "负面");
        assert_eq!(mock.complete(&polarity_prompt("被善待"), &params).unwrap(), "正面");
        let fallback = mock.complete(&polarity_prompt("被表扬"), &params).unwrap();
        assert!(fallback == "正面" || fallback == "负面");
    }

    #[test]
    fn rates_split_lines() {
        let cfg = MockConfig::with_rates(120, 0.25, 0.05);
        assert_eq!((cfg.unique, cfg.duplicates, cfg.garbage), (84, 30, 6));
    }
}
