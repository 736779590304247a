//! Three-stage divide-and-conquer routing: author-link cardinality, then
//! author/institution scope, then the fine-grained breakdown set.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BreakdownSet, Question, QuestionSet, RoutingDecision, Scope};
use crate::text::{normalize, token_start_match};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("keyword {raw:?} is empty after normalization")]
    EmptyKeyword { raw: String },
    #[error("institution scope keywords must include {0:?}")]
    MissingInstitutionKeyword(&'static str),
    #[error("breakdown set {0} listed more than once")]
    DuplicateSet(String),
    #[error("breakdown set {0} cannot carry keywords")]
    OtherSet(String),
    #[error("unknown breakdown set {0:?}")]
    UnknownSet(String),
    #[error("cannot read lexicon: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed lexicon: {0}")]
    Json(#[from] serde_json::Error),
}

pub const REQUIRED_INSTITUTION_KEYWORDS: [&str; 3] = ["organizations", "affiliations", "institution"];

/// Default breakdown precedence and keywords. First match wins.
const DEFAULT_BREAKDOWN: &[(BreakdownSet, &[&str])] = &[
    (BreakdownSet::HIndex, &["hindex", "h index"]),
    (BreakdownSet::I10Index, &["i10index", "i10 index", "i 10 index"]),
    (BreakdownSet::CitedByCount, &["cited", "citation", "citedby"]),
    (BreakdownSet::Acronym, &["acronym", "abbreviation", "short name"]),
    (
        BreakdownSet::Institution,
        &[
            "institution",
            "organization",
            "organisation",
            "affiliation",
            "affiliated",
            "university",
            "employer",
        ],
    ),
    (
        BreakdownSet::PublicationDetails,
        &["publication", "published", "paper", "article", "works", "written"],
    ),
    (
        BreakdownSet::ListAuthorDblpUri,
        &["dblp", "these authors", "both authors", "all authors", "each author", "coauthor"],
    ),
    (BreakdownSet::Authors, &["name", "who", "called"]),
];

const DEFAULT_INSTITUTION_SCOPE: &[&str] = &[
    "organizations",
    "affiliations",
    "institution",
    "organization",
    "organisation",
    "affiliation",
    "affiliated",
    "university",
    "employer",
];

/// Keyword tables driving scope and breakdown classification. Keywords are
/// stored normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordLexicon {
    scope_keywords: BTreeMap<Scope, Vec<String>>,
    breakdown_keywords: Vec<(BreakdownSet, Vec<String>)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LexiconFile {
    scope: BTreeMap<Scope, Vec<String>>,
    breakdown: Vec<LexiconEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LexiconEntry {
    set: String,
    keywords: Vec<String>,
}

fn normalize_keywords<S: AsRef<str>>(raw: &[S]) -> Result<Vec<String>, LexiconError> {
    raw.iter()
        .map(|k| {
            let n = normalize(k.as_ref()).render();
            if n.is_empty() {
                Err(LexiconError::EmptyKeyword { raw: k.as_ref().to_owned() })
            } else {
                Ok(n)
            }
        })
        .collect()
}

impl KeywordLexicon {
    pub fn new<S: AsRef<str>>(
        institution_keywords: &[S],
        breakdown: Vec<(BreakdownSet, Vec<String>)>,
    ) -> Result<Self, LexiconError> {
        let institution = normalize_keywords(institution_keywords)?;
        for required in REQUIRED_INSTITUTION_KEYWORDS {
            if !institution.iter().any(|k| k == required) {
                return Err(LexiconError::MissingInstitutionKeyword(required));
            }
        }
        let mut seen = HashSet::new();
        let mut table = Vec::with_capacity(breakdown.len());
        for (set, keywords) in breakdown {
            if let BreakdownSet::Other(_) = set {
                return Err(LexiconError::OtherSet(set.label()));
            }
            if !seen.insert(set.clone()) {
                return Err(LexiconError::DuplicateSet(set.label()));
            }
            table.push((set, normalize_keywords(&keywords)?));
        }
        let mut scope_keywords = BTreeMap::new();
        scope_keywords.insert(Scope::Institution, institution);
        Ok(KeywordLexicon {
            scope_keywords,
            breakdown_keywords: table,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile = serde_json::from_str(text)?;
        let institution = file.scope.get(&Scope::Institution).cloned().unwrap_or_default();
        let breakdown = file
            .breakdown
            .into_iter()
            .map(|e| {
                let set = e
                    .set
                    .parse::<BreakdownSet>()
                    .map_err(|_| LexiconError::UnknownSet(e.set.clone()))?;
                Ok((set, e.keywords))
            })
            .collect::<Result<Vec<_>, LexiconError>>()?;
        let mut lex = KeywordLexicon::new(&institution, breakdown)?;
        if let Some(author) = file.scope.get(&Scope::Author) {
            lex.scope_keywords.insert(Scope::Author, normalize_keywords(author)?);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Serializes to the lexicon config format.
    pub fn to_json(&self) -> String {
        let file = LexiconFile {
            scope: self.scope_keywords.clone(),
            breakdown: self
                .breakdown_keywords
                .iter()
                .map(|(set, kw)| LexiconEntry {
                    set: set.label(),
                    keywords: kw.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("lexicon serializes")
    }

    pub fn institution_keywords(&self) -> &[String] {
        self.scope_keywords
            .get(&Scope::Institution)
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    /// Breakdown sets with their keywords, in match precedence order.
    pub fn breakdown_keywords(&self) -> &[(BreakdownSet, Vec<String>)] {
        &self.breakdown_keywords
    }
}

impl Default for KeywordLexicon {
    fn default() -> Self {
        let breakdown = DEFAULT_BREAKDOWN
            .iter()
            .map(|(set, kw)| (set.clone(), kw.iter().map(|s| s.to_string()).collect()))
            .collect();
        KeywordLexicon::new(DEFAULT_INSTITUTION_SCOPE, breakdown).expect("default lexicon is valid")
    }
}

/// Stage 1: questions with several author links vs. a single one.
pub fn split_by_author_cardinality(qs: &QuestionSet) -> (QuestionSet, QuestionSet) {
    let (multi, single): (Vec<_>, Vec<_>) = qs.iter().cloned().partition(Question::is_multi_author);
    (QuestionSet::from_valid(multi), QuestionSet::from_valid(single))
}

fn scope_of(rendered: &str, lex: &KeywordLexicon) -> Scope {
    if lex
        .institution_keywords()
        .iter()
        .any(|k| token_start_match(rendered, k))
    {
        Scope::Institution
    } else {
        Scope::Author
    }
}

/// Stage 2: author vs. institution scope.
pub fn classify_scope(q: &Question, lex: &KeywordLexicon) -> Scope {
    scope_of(&normalize(&q.text).render(), lex)
}

/// Stage 3: full routing decision for one question.
pub fn classify_breakdown(q: &Question, lex: &KeywordLexicon) -> RoutingDecision {
    let text = normalize(&q.text).render();
    let mut breakdown = None;
    let mut matched_keywords: Vec<String> = Vec::new();
    for (set, keywords) in lex.breakdown_keywords() {
        for kw in keywords {
            if token_start_match(&text, kw) {
                breakdown.get_or_insert_with(|| set.clone());
                if !matched_keywords.contains(kw) {
                    matched_keywords.push(kw.clone());
                }
            }
        }
    }
    RoutingDecision {
        question_id: q.id.clone(),
        multi_author: q.is_multi_author(),
        scope: scope_of(&text, lex),
        breakdown: breakdown.unwrap_or_else(BreakdownSet::unmatched),
        matched_keywords,
    }
}

pub fn route_all(qs: &QuestionSet, lex: &KeywordLexicon) -> Vec<RoutingDecision> {
    qs.iter().map(|q| classify_breakdown(q, lex)).collect()
}

/// Groups questions into breakdown-set cells, preserving input order inside
/// each cell.
pub fn partition(qs: &QuestionSet, lex: &KeywordLexicon) -> BTreeMap<BreakdownSet, QuestionSet> {
    let mut cells: BTreeMap<BreakdownSet, Vec<Question>> = BTreeMap::new();
    for q in qs {
        let decision = classify_breakdown(q, lex);
        cells.entry(decision.breakdown).or_default().push(q.clone());
    }
    cells
        .into_iter()
        .map(|(k, v)| (k, QuestionSet::from_valid(v)))
        .collect()
}
