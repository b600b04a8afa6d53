//! Query and interpretation prompt templates, response parsing and cost estimation.

use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::Answer;
use crate::error::{invalid, Result};

pub const QUERY_TEMPLATE_VERSION: &str = "query-v1";
pub const INTERPRET_TEMPLATE_VERSION: &str = "interpret-v1";

const QUERY_INSTRUCTION: &str =
    "Select the sentence that better corresponds with the query sentence in terms of intents or categories.";
const INTERPRET_INSTRUCTION: &str = "Given the following sentences, return a word or a phrase to summarize the common intent or category of these sentences without explanation.";

/// Number of representatives the interpretation template takes.
pub const INTERPRET_ARITY: usize = 3;

fn enumerate_sentences(texts: &[&str]) -> String {
    let body: Vec<String> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("Sentence {}: {}", i + 1, t))
        .collect();
    body.join("; ")
}

/// Renders the scalable query prompt for one query and its ordered candidates.
pub fn build_query_prompt(query_text: &str, candidate_texts: &[&str]) -> Result<String> {
    if query_text.is_empty() {
        return invalid("refusing to render a query prompt with empty query text");
    }
    if candidate_texts.len() < 2 {
        return invalid("a query prompt needs at least two candidates");
    }
    let options: Vec<String> = (1..=candidate_texts.len())
        .map(|i| format!("'Sentence {i}'"))
        .collect();
    Ok(format!(
        "{QUERY_INSTRUCTION} Please respond with {} without explanation.\n\nQuery: {query_text}. {}.",
        options.join(" or "),
        enumerate_sentences(candidate_texts)
    ))
}

/// Renders the interpretation prompt over exactly three representative texts.
pub fn build_interpret_prompt(texts: &[&str]) -> Result<String> {
    if texts.len() != INTERPRET_ARITY {
        return invalid(format!(
            "interpretation prompt takes exactly {INTERPRET_ARITY} texts, got {}",
            texts.len()
        ));
    }
    Ok(format!("{INTERPRET_INSTRUCTION}\n\n{}.", enumerate_sentences(texts)))
}

fn choice_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)sentence\s*(\d+)").expect("valid regex"))
}

/// Finds `sentence <n>` mentions; exactly one distinct in-range number is a choice.
pub fn parse_choice(response: &str, q_size: usize) -> Answer {
    let mut found: Option<usize> = None;
    for cap in choice_pattern().captures_iter(response) {
        let Ok(n) = cap[1].parse::<usize>() else { continue };
        if n == 0 || n > q_size {
            continue;
        }
        match found {
            None => found = Some(n),
            Some(prev) if prev != n => return Answer::Abstain,
            _ => {}
        }
    }
    found.map_or(Answer::Abstain, Answer::Choice)
}

/// Whitespace words × 4/3, rounded up.
pub fn estimate_tokens(prompt: &str) -> u64 {
    let words = prompt.split_whitespace().count() as u64;
    (words * 4).div_ceil(3)
}

/// Stable hex digest over the template version and the texts, in order.
pub fn cache_key(version: &str, texts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(version.as_bytes());
    for t in texts {
        h.update([0x1f]);
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    hex::encode(h.finalize())
}
