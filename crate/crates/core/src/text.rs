//! Unicode normalization helpers shared by every stage that compares surfaces.

use unicode_normalization::UnicodeNormalization;

/// Punctuation that may trail a generated phrase and is not part of the event.
const TERMINAL_PUNCT: &[char] = &[
    ';', '；', '.', '。', ',', '，', '、', '!', '！', '?', '？', ':', '：', '…',
];

pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Canonical form of an event surface: NFC, outer whitespace trimmed, terminal
/// punctuation stripped. Idempotent.
pub fn normalize_event(s: &str) -> String {
    let composed = nfc(s);
    composed
        .trim_matches(|c: char| c.is_whitespace() || TERMINAL_PUNCT.contains(&c))
        .to_string()
}

/// NFC with every whitespace character removed.
pub fn nfc_without_whitespace(s: &str) -> String {
    s.nfc().filter(|c| !c.is_whitespace()).collect()
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}
