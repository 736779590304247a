//! Exact Match and token-level F1 scoring.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::text::normalize;

pub fn exact_match(pred: &str, gold: &str) -> u8 {
    u8::from(normalize(pred) == normalize(gold))
}

/// Size of the multiset intersection of two token lists.
pub(crate) fn token_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in a {
        *counts.entry(t).or_default() += 1;
    }
    b.iter()
        .filter(|t| match counts.get_mut(t.as_str()) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Harmonic mean of token precision and recall over normalized multisets.
/// Two empty sides score 1, exactly one empty side scores 0.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize(pred);
    let g = normalize(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let overlap = token_overlap(p.tokens(), g.tokens());
    // 2PR/(P+R) with P = o/|p|, R = o/|g| reduces to 2o/(|p|+|g|).
    (2 * overlap) as f64 / (p.len() + g.len()) as f64
}

/// A gold answer; lists are joined with spaces before scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldAnswer(pub String);

impl<'de> Deserialize<'de> for GoldAnswer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(String),
            Many(Vec<String>),
        }
        Ok(GoldAnswer(match Raw::deserialize(d)? {
            Raw::One(s) => s,
            Raw::Many(v) => v.join(" "),
        }))
    }
}

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("malformed gold file at line {line}, column {column}: {source}")]
    Json {
        line: usize,
        column: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate gold id {0:?}")]
    DuplicateId(String),
    #[error("gold file has no entries")]
    Empty,
}

/// Parses the gold file: a JSON array of `{"id", "answer"}` where `answer`
/// is a string or an array of strings.
pub fn parse_gold(text: &str) -> Result<BTreeMap<String, String>, GoldError> {
    #[derive(Deserialize)]
    struct Entry {
        id: String,
        answer: GoldAnswer,
    }
    let entries: Vec<Entry> = serde_json::from_str(text).map_err(|e| GoldError::Json {
        line: e.line(),
        column: e.column(),
        source: e,
    })?;
    let mut gold = BTreeMap::new();
    for e in entries {
        if gold.insert(e.id.clone(), e.answer.0).is_some() {
            return Err(GoldError::DuplicateId(e.id));
        }
    }
    if gold.is_empty() {
        return Err(GoldError::Empty);
    }
    Ok(gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub em: u8,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub em_mean: f64,
    pub f1_mean: f64,
    pub answered: usize,
    pub missing: usize,
    /// Predictions whose id is not in the gold set; ignored for scoring.
    pub ignored_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_question: BTreeMap<String, QuestionScore>,
    pub aggregate: Aggregate,
}

/// Scores predictions against every gold id. Missing predictions score 0.
pub fn score<'a, P>(preds: P, gold: &BTreeMap<String, String>) -> EvalReport
where
    P: IntoIterator<Item = (&'a str, &'a str)>,
{
    let preds: HashMap<&str, &str> = preds.into_iter().collect();
    let ignored_predictions = preds.keys().filter(|id| !gold.contains_key(**id)).count();
    if ignored_predictions > 0 {
        log::warn!("{ignored_predictions} prediction(s) have no gold answer and were ignored");
    }
    let mut per_question = BTreeMap::new();
    let (mut em_sum, mut f1_sum, mut answered) = (0.0, 0.0, 0);
    for (id, gold_answer) in gold {
        let s = match preds.get(id.as_str()) {
            Some(pred) => {
                answered += 1;
                QuestionScore {
                    em: exact_match(pred, gold_answer),
                    f1: token_f1(pred, gold_answer),
                }
            }
            None => QuestionScore { em: 0, f1: 0.0 },
        };
        em_sum += f64::from(s.em);
        f1_sum += s.f1;
        per_question.insert(id.clone(), s);
    }
    let n = gold.len().max(1) as f64;
    EvalReport {
        per_question,
        aggregate: Aggregate {
            em_mean: em_sum / n,
            f1_mean: f1_sum / n,
            answered,
            missing: gold.len() - answered,
            ignored_predictions,
        },
    }
}

impl EvalReport {
    /// Plain-text table for terminals.
    pub fn render_table(&self) -> String {
        let width = self
            .per_question
            .keys()
            .map(|k| k.chars().count())
            .max()
            .unwrap_or(2)
            .max(2);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>2}  {:>6}", "id", "EM", "F1");
        for (id, s) in &self.per_question {
            let _ = writeln!(out, "{id:<width$}  {:>2}  {:>6.4}", s.em, s.f1);
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "\nEM {:.4}  F1 {:.4}  answered {}  missing {}  ignored {}",
            a.em_mean, a.f1_mean, a.answered, a.missing, a.ignored_predictions
        );
        out
    }
}
