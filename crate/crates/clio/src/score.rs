//! Pass@1 scoring: normalized exact match, with letter extraction for
//! multiple-choice answers.

use std::sync::LazyLock;

use regex::Regex;

use crate::questions::AnswerType;

/// Trim, case-fold, collapse whitespace and strip trailing punctuation.
pub fn normalize(s: &str) -> String {
    let folded = s.trim().to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim_end()
        .to_string()
}

static BARE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?([a-z])\)?$").unwrap());
static STATED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:answer|option|choice)\s*(?:is|:|=)?\s*(?:option\s+|choice\s+)?\(?([a-z])\)?(?:[^a-z0-9]|$)").unwrap()
});
static LEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?([a-z])\)\s").unwrap());

/// The option letter an answer commits to, upper-cased: `"B"`, `"(b)"`,
/// `"The answer is (b)."` and `"b) because ..."` all give `'B'`.
pub fn extract_choice(text: &str) -> Option<char> {
    let t = normalize(text);
    let caps = BARE
        .captures(&t)
        .or_else(|| STATED.captures(&t))
        .or_else(|| LEADING.captures(&t))?;
    caps[1].chars().next().map(|c| c.to_ascii_uppercase())
}

pub fn score_answer(prediction: &str, gold: &str, answer_type: AnswerType) -> bool {
    if answer_type == AnswerType::MultipleChoice {
        if let (Some(p), Some(g)) = (extract_choice(prediction), extract_choice(gold)) {
            return p == g;
        }
    }
    let p = normalize(prediction);
    !p.is_empty() && p == normalize(gold)
}
