//! Canonical answer/question normalization.
//!
//! Lowercase, drop every Unicode punctuation character (general category `P*`),
//! drop the English articles "a", "an", "the", then split on whitespace. The
//! same routine feeds keyword routing, name reconciliation and the EM/F1
//! metrics, so all three agree on what "the same text" means.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").expect("static regex"))
}

/// Token sequence produced by [`normalize`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct NormalizedText {
    tokens: Vec<String>,
}

impl NormalizedText {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Tokens joined by single spaces.
    pub fn render(&self) -> String {
        self.tokens.join(" ")
    }

    /// True when `needle` (already normalized) occurs in the rendered text
    /// starting on a token boundary. The match may end mid-token, so
    /// "institution" fires on "institutions" but "h index" does not fire
    /// inside "which index".
    pub fn contains_at_token_start(&self, needle: &str) -> bool {
        token_start_match(&self.render(), needle)
    }
}

/// [`NormalizedText::contains_at_token_start`] on an already rendered text.
pub fn token_start_match(rendered: &str, needle: &str) -> bool {
    !needle.is_empty()
        && rendered
            .match_indices(needle)
            .any(|(i, _)| i == 0 || rendered.as_bytes()[i - 1] == b' ')
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<NormalizedText> for Vec<String> {
    fn from(t: NormalizedText) -> Self {
        t.tokens
    }
}

pub fn normalize(raw: &str) -> NormalizedText {
    let lowered = raw.to_lowercase();
    let stripped = punctuation().replace_all(&lowered, "");
    let tokens = stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect();
    NormalizedText { tokens }
}
