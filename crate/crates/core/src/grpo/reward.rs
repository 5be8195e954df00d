use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<answer>\s*(.*?)\s*</answer>").unwrap());
static TEMPLATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)^\s*<think>.+?</think>\s*<answer>\s*\S.*?</answer>\s*$").unwrap());

/// Full template: `<think>…</think>` followed by `<answer>…</answer>` and
/// nothing else.
pub fn is_well_formed(response: &str) -> bool {
    TEMPLATE.is_match(response)
}

/// Content of the first non-empty `<answer>` tag, trimmed.
pub fn extract_answer(response: &str) -> Option<&str> {
    ANSWER
        .captures(response)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
        .filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub accuracy: f64,
}

impl RewardBreakdown {
    /// `(format + accuracy) / 2`, in `[0, 1]`.
    pub fn total(&self) -> f64 {
        0.5 * (self.format + self.accuracy)
    }
}

/// Format reward (template match) plus accuracy reward (extracted answer
/// equals the key, case-insensitive). An unextractable answer scores zero
/// on both.
pub fn rule_based_reward(response: &str, expected: &str) -> RewardBreakdown {
    let Some(answer) = extract_answer(response) else {
        return RewardBreakdown {
            format: 0.0,
            accuracy: 0.0,
        };
    };
    RewardBreakdown {
        format: if is_well_formed(response) { 1.0 } else { 0.0 },
        accuracy: if answer.eq_ignore_ascii_case(expected.trim()) { 1.0 } else { 0.0 },
    }
}

/// How the toy policy lays out a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseStyle {
    /// Reasoning block then answer tag.
    Templated,
    /// Bare answer tag; extractable but off-template.
    Bare,
}

impl ResponseStyle {
    pub const ALL: [ResponseStyle; 2] = [ResponseStyle::Templated, ResponseStyle::Bare];
}

pub fn render_response(style: ResponseStyle, answer: &str) -> String {
    match style {
        ResponseStyle::Templated => format!("<think>weigh each option against the clip</think> <answer>{answer}</answer>"),
        ResponseStyle::Bare => format!("<answer>{answer}</answer>"),
    }
}
