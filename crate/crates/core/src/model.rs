//! Shared domain types: questions, breakdown sets, routing decisions and
//! answer records.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::iri::is_absolute_iri;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("question at index {index} has an empty id")]
    EmptyId { index: usize },
    #[error("question {id}: text is empty")]
    EmptyText { id: String },
    #[error("question {id}: no author URIs")]
    NoAuthors { id: String },
    #[error("question {id}: author URI {uri:?} is not an absolute IRI")]
    InvalidAuthorUri { id: String, uri: String },
    #[error("duplicate question id {0:?}")]
    DuplicateId(String),
    #[error("malformed questions file at line {line}, column {column}: {source}")]
    Json {
        line: usize,
        column: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown breakdown set {0:?}")]
    UnknownBreakdown(String),
}

impl From<serde_json::Error> for ModelError {
    fn from(e: serde_json::Error) -> Self {
        ModelError::Json {
            line: e.line(),
            column: e.column(),
            source: e,
        }
    }
}

/// One challenge item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Question {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    #[serde(rename = "author_dblp_uri")]
    pub author_uris: Vec<String>,
}

impl Question {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        author_uris: Vec<String>,
    ) -> Result<Self, ModelError> {
        let q = Question {
            id: id.into(),
            text: text.into(),
            author_uris,
        };
        q.validate(0)?;
        Ok(q)
    }

    fn validate(&self, index: usize) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::EmptyId { index });
        }
        if self.text.trim().is_empty() {
            return Err(ModelError::EmptyText { id: self.id.clone() });
        }
        if self.author_uris.is_empty() {
            return Err(ModelError::NoAuthors { id: self.id.clone() });
        }
        if let Some(bad) = self.author_uris.iter().find(|u| !is_absolute_iri(u)) {
            return Err(ModelError::InvalidAuthorUri {
                id: self.id.clone(),
                uri: bad.clone(),
            });
        }
        Ok(())
    }

    pub fn is_multi_author(&self) -> bool {
        self.author_uris.len() > 1
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum UriField {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct RawQuestion {
    id: String,
    question: String,
    author_dblp_uri: UriField,
}

/// Splits a raw `author_dblp_uri` value into individual URIs.
///
/// Accepts newline- or semicolon-separated lists, a bracketed `[a, b]` list,
/// and entries wrapped in `<...>`.
pub fn split_author_uris(raw: &str) -> Vec<String> {
    let trimmed = raw.trim();
    let (body, bracketed) = match trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        Some(inner) => (inner, true),
        None => (trimmed, false),
    };
    body.split(|c| c == '\n' || c == ';' || (bracketed && c == ','))
        .map(clean_uri)
        .filter(|s| !s.is_empty())
        .collect()
}

fn clean_uri(s: &str) -> String {
    let s = s.trim().trim_matches(|c| c == '\'' || c == '"').trim();
    s.strip_prefix('<')
        .and_then(|s| s.strip_suffix('>'))
        .unwrap_or(s)
        .trim()
        .to_owned()
}

impl<'de> Deserialize<'de> for Question {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawQuestion::deserialize(d)?;
        let author_uris = match raw.author_dblp_uri {
            UriField::One(s) => split_author_uris(&s),
            UriField::Many(v) => v
                .iter()
                .flat_map(|s| split_author_uris(s))
                .collect(),
        };
        Ok(Question {
            id: raw.id,
            text: raw.question,
            author_uris,
        })
    }
}

/// An ordered collection of questions with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuestionSet(Vec<Question>);

impl QuestionSet {
    pub fn new(questions: Vec<Question>) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for (i, q) in questions.iter().enumerate() {
            q.validate(i)?;
            if !seen.insert(q.id.as_str()) {
                return Err(ModelError::DuplicateId(q.id.clone()));
            }
        }
        Ok(QuestionSet(questions))
    }

    /// Parses the questions input file (a JSON array).
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        if text.trim().is_empty() {
            return Ok(QuestionSet::default());
        }
        let questions: Vec<Question> = serde_json::from_str(text)?;
        QuestionSet::new(questions)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Question> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Question] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<Question> {
        self.0
    }

    // Subsets of a valid set are valid, so these skip re-validation.
    pub(crate) fn from_valid(questions: Vec<Question>) -> Self {
        QuestionSet(questions)
    }
}

impl<'a> IntoIterator for &'a QuestionSet {
    type Item = &'a Question;
    type IntoIter = std::slice::Iter<'a, Question>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Orders questions by case-insensitive text; equal texts keep input order.
pub fn sort_questions_alphabetically(qs: QuestionSet) -> QuestionSet {
    let mut v = qs.0;
    v.sort_by_cached_key(|q| q.text.to_lowercase());
    QuestionSet(v)
}

/// Question categories produced by divide-and-conquer routing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BreakdownSet {
    ListAuthorDblpUri,
    Authors,
    Institution,
    HIndex,
    I10Index,
    Acronym,
    CitedByCount,
    PublicationDetails,
    Other(String),
}

impl BreakdownSet {
    pub fn unmatched() -> Self {
        BreakdownSet::Other("unmatched".to_owned())
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for BreakdownSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BreakdownSet::ListAuthorDblpUri => "listAuthorDblpUri",
            BreakdownSet::Authors => "authors",
            BreakdownSet::Institution => "institution",
            BreakdownSet::HIndex => "hIndex",
            BreakdownSet::I10Index => "i10Index",
            BreakdownSet::Acronym => "acronym",
            BreakdownSet::CitedByCount => "citedByCount",
            BreakdownSet::PublicationDetails => "publicationDetails",
            BreakdownSet::Other(label) => return write!(f, "other:{label}"),
        };
        f.write_str(s)
    }
}

impl FromStr for BreakdownSet {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "listAuthorDblpUri" => BreakdownSet::ListAuthorDblpUri,
            "authors" => BreakdownSet::Authors,
            "institution" => BreakdownSet::Institution,
            "hIndex" => BreakdownSet::HIndex,
            "i10Index" => BreakdownSet::I10Index,
            "acronym" => BreakdownSet::Acronym,
            "citedByCount" => BreakdownSet::CitedByCount,
            "publicationDetails" => BreakdownSet::PublicationDetails,
            other => match other.strip_prefix("other:") {
                Some(label) if !label.is_empty() => BreakdownSet::Other(label.to_owned()),
                _ => return Err(ModelError::UnknownBreakdown(s.to_owned())),
            },
        })
    }
}

impl Serialize for BreakdownSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BreakdownSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Author,
    Institution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub question_id: String,
    pub multi_author: bool,
    pub scope: Scope,
    pub breakdown: BreakdownSet,
    pub matched_keywords: Vec<String>,
}

/// Provenance of an answer. Declaration order is merge precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stream {
    #[serde(rename = "local")]
    Local,
    #[serde(rename = "llm")]
    Llm,
    #[serde(rename = "dnc")]
    DncCombined,
}

/// A resolved answer. An empty `answer` marks an unresolved outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(rename = "id")]
    pub question_id: String,
    pub answer: String,
    pub stream: Stream,
}

impl AnswerRecord {
    pub fn new(question_id: impl Into<String>, answer: impl Into<String>, stream: Stream) -> Self {
        AnswerRecord {
            question_id: question_id.into(),
            answer: answer.into(),
            stream,
        }
    }

    pub fn is_resolved(&self) -> bool {
        !self.answer.is_empty()
    }
}
