//! One-token answer prompts for 被-event neutrality triage and polarity.
//! Any reply other than the two allowed tokens is an error.

use super::{CompletionParams, Gateway, GatewayError};
use crate::error::{Error, Result};
use crate::event::{EmotionalEvent, EventKind, EventPolarity};

const NEUTRALITY_MARKER: &str = "的情感极性是否为中性";
const POLARITY_MARKER: &str = "的情感极性是正面还是负面";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Neutrality,
    Polarity,
}

pub fn neutrality_prompt(event: &str) -> String {
    format!("请判断事件“{event}”{NEUTRALITY_MARKER}。只回答“是”或“否”，不要输出其他内容。")
}

pub fn polarity_prompt(event: &str) -> String {
    format!("请判断事件“{event}”{POLARITY_MARKER}。只回答“正面”或“负面”，不要输出其他内容。")
}

/// Recognizes a prompt built by [`neutrality_prompt`] or [`polarity_prompt`].
pub fn detect_query(prompt: &str) -> Option<(QueryKind, &str)> {
    let kind = if prompt.contains(NEUTRALITY_MARKER) {
        QueryKind::Neutrality
    } else if prompt.contains(POLARITY_MARKER) {
        QueryKind::Polarity
    } else {
        return None;
    };
    let rest = prompt.strip_prefix("请判断事件“")?;
    let end = rest.find('”')?;
    Some((kind, &rest[..end]))
}

fn clean(answer: &str) -> &str {
    answer.trim_matches(|c: char| c.is_whitespace() || "。.！!“”\"'「」".contains(c))
}

pub fn parse_yes_no(answer: &str) -> Result<bool, GatewayError> {
    match clean(answer) {
        "是" => Ok(true),
        "否" => Ok(false),
        _ => Err(GatewayError::UnparseableAnswer(answer.to_string())),
    }
}

pub fn parse_polarity_answer(answer: &str) -> Result<EventPolarity, GatewayError> {
    match clean(answer) {
        "正面" => Ok(EventPolarity::Positive),
        "负面" => Ok(EventPolarity::Negative),
        _ => Err(GatewayError::UnparseableAnswer(answer.to_string())),
    }
}

fn require_bei(event: &EmotionalEvent) -> Result<()> {
    if event.kind != EventKind::Bei {
        return Err(Error::Precondition(format!("`{}` is not a 被 event", event.surface)));
    }
    Ok(())
}

/// True iff the provider judges the event sentiment-neutral.
pub fn query_neutrality(event: &EmotionalEvent, gateway: &Gateway, params: &CompletionParams) -> Result<bool> {
    require_bei(event)?;
    let raw = gateway.complete_text(&neutrality_prompt(&event.surface), &event.surface, params)?;
    Ok(parse_yes_no(&raw.text)?)
}

pub fn query_polarity(event: &EmotionalEvent, gateway: &Gateway, params: &CompletionParams) -> Result<EventPolarity> {
    require_bei(event)?;
    let raw = gateway.complete_text(&polarity_prompt(&event.surface), &event.surface, params)?;
    Ok(parse_polarity_answer(&raw.text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompts_are_detectable() {
        assert_eq!(
            detect_query(&neutrality_prompt("被安排参加会议")),
            Some((QueryKind::Neutrality, "被安排参加会议"))
        );
        assert_eq!(detect_query(&polarity_prompt("被善待")), Some((QueryKind::Polarity, "被善待")));
        assert_eq!(detect_query("任务是填写短语模板“遭受{}”"), None);
    }

    #[test]
    fn answers_are_strict() {
        assert_eq!(parse_yes_no("是"), Ok(true));
        assert_eq!(parse_yes_no(" 否。\n"), Ok(false));
        assert!(parse_yes_no("maybe").is_err());
        assert!(parse_yes_no("是的，这是中性事件").is_err());
        assert_eq!(parse_polarity_answer("正面"), Ok(EventPolarity::Positive));
        assert_eq!(parse_polarity_answer("“负面”"), Ok(EventPolarity::Negative));
        assert!(parse_polarity_answer("").is_err());
        assert!(parse_polarity_answer("中性").is_err());
    }
}
