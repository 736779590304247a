//! Context generation from SPARQL results and extractive QA backends.
//!
//! [`build_context`] renders bound facts as fixed English sentences.
//! [`predict`] sends a question plus that context to either the built-in
//! deterministic stub or a remote extractive QA service speaking
//! `POST /answer` with `{"question", "context"}` and replying
//! `{"answer", "score", "start", "end"}` (character offsets).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Question;
use crate::query::var;
use crate::sparql::SparqlResultSet;
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContextDocument {
    pub question_id: String,
    pub sentences: Vec<String>,
    pub facts: BTreeMap<String, String>,
}

impl ContextDocument {
    /// The passage handed to a QA backend.
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    fn add_fact(&mut self, key: &str, value: &str) {
        if self.facts.get(key).is_some_and(|v| v == value) {
            return;
        }
        let mut slot = key.to_owned();
        let mut n = 1;
        while let Some(existing) = self.facts.get(&slot) {
            if existing == value {
                return;
            }
            n += 1;
            slot = format!("{key}_{n}");
        }
        self.facts.insert(slot, value.to_owned());
    }

    fn say(&mut self, sentence: String) {
        self.sentences.push(sentence);
    }
}

type Phrase = fn(&str, &str) -> String;

/// Renders the bound facts of `results` as sentences. Result sets are walked
/// in order; a row binding `name` becomes the subject of the author facts
/// and affiliation sentences that follow it.
pub fn build_context(q: &Question, results: &[SparqlResultSet]) -> ContextDocument {
    let mut doc = ContextDocument {
        question_id: q.id.clone(),
        ..Default::default()
    };
    let mut subject: Option<String> = None;
    for rs in results {
        for row in &rs.rows {
            let get = |v: &str| row.get(v).map(|b| b.value.as_str()).filter(|s| !s.is_empty());
            if let Some(inst) = get(var::INSTITUTION_NAME) {
                let who = subject
                    .clone()
                    .unwrap_or_else(|| q.author_uris[0].clone());
                doc.add_fact(var::INSTITUTION_NAME, inst);
                doc.say(format!("{who} is affiliated with {inst}."));
                if let Some(acr) = get(var::ACRONYM) {
                    doc.add_fact(var::ACRONYM, acr);
                    doc.say(format!("{acr} is the acronym of {inst}."));
                }
                if let Some(home) = get(var::HOMEPAGE) {
                    doc.add_fact(var::HOMEPAGE, home);
                    doc.say(format!("The homepage of {inst} is {home}."));
                }
                if let Some(c) = get(var::CITED_BY_COUNT) {
                    doc.add_fact("institutionCitedByCount", c);
                    doc.say(format!("{inst} has been cited {c} times."));
                }
                continue;
            }
            if let Some(name) = get(var::NAME) {
                subject = Some(name.to_owned());
                doc.add_fact(var::NAME, name);
            }
            let who = subject
                .clone()
                .unwrap_or_else(|| q.author_uris[0].clone());
            let before = doc.sentences.len();
            let metric_sentences: [(&str, Phrase); 5] = [
                (var::WORKS_COUNT, |w, v| format!("{w} has {v} works.")),
                (var::CITED_BY_COUNT, |w, v| format!("{w} has been cited {v} times.")),
                (var::H_INDEX, |w, v| format!("{w} has an h-index of {v}.")),
                (var::I10_INDEX, |w, v| format!("{w} has an i10-index of {v}.")),
                (var::ORCID, |w, v| format!("{w} has the ORCID {v}.")),
            ];
            for (key, render) in metric_sentences {
                if let Some(v) = get(key) {
                    doc.add_fact(key, v);
                    doc.say(render(&who, v));
                }
            }
            if doc.sentences.len() == before && get(var::NAME).is_some() {
                doc.say(format!("{who} is an author."));
            }
        }
    }
    doc
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRequest {
    pub question: String,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaResponse {
    pub answer: String,
    pub score: f64,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QaError {
    #[error("context is empty")]
    EmptyContext,
    #[error("QA backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("QA backend returned an invalid response: {0}")]
    InvalidResponse(String),
}

fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut idx = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let b0 = idx.nth(start)?;
    let b1 = if end == start { b0 } else { idx.nth(end - start - 1)? };
    Some(&s[b0..b1])
}

impl QaResponse {
    /// Builds a response whose answer is `context[start..end]` (char offsets).
    pub fn extract(context: &str, start: usize, end: usize, score: f64) -> Option<Self> {
        let answer = char_slice(context, start, end)?.to_owned();
        Some(QaResponse { answer, score, start, end })
    }

    /// Checks `answer == context[start..end]`, the score range and the offsets.
    pub fn is_extractive(&self, context: &str) -> bool {
        (0.0..=1.0).contains(&self.score)
            && char_slice(context, self.start, self.end).is_some_and(|s| s == self.answer)
    }
}

fn is_punct(c: char) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\p{P}$").expect("static regex"));
    let mut buf = [0u8; 4];
    re.is_match(c.encode_utf8(&mut buf))
}

/// Sentence spans in char offsets: a sentence ends at a '.' followed by
/// whitespace or the end of the text.
fn sentence_spans(chars: &[char]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &c) in chars.iter().enumerate() {
        if start.is_none() && !c.is_whitespace() {
            start = Some(i);
        }
        let boundary = c == '.' && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if boundary {
            if let Some(s) = start.take() {
                spans.push((s, i + 1));
            }
        }
    }
    if let Some(s) = start {
        let mut end = chars.len();
        while end > s && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        spans.push((s, end));
    }
    spans
}

/// Whitespace-separated words inside `[from, to)`, each trimmed of leading
/// and trailing punctuation. Empty cores are dropped.
fn word_cores(chars: &[char], from: usize, to: usize) -> Vec<(usize, usize)> {
    let mut words = Vec::new();
    let mut i = from;
    while i < to {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < to && !chars[j].is_whitespace() {
            j += 1;
        }
        let (mut s, mut e) = (i, j);
        while s < e && is_punct(chars[s]) {
            s += 1;
        }
        while e > s && is_punct(chars[e - 1]) {
            e -= 1;
        }
        if s < e {
            words.push((s, e));
        }
        i = j;
    }
    words
}

fn is_numeric(word: &[char]) -> bool {
    word.first().is_some_and(char::is_ascii_digit)
        && word.last().is_some_and(char::is_ascii_digit)
        && word.iter().all(|c| c.is_ascii_digit() || *c == '.' || *c == ',')
}

/// Deterministic extractive answerer used in place of a model.
///
/// Picks the sentence sharing the most distinct normalized tokens with the
/// question (earliest on ties). Count-style questions ("how many ...", or
/// mentioning "count"/"index") get the first numeric word of that sentence;
/// all others get the longest run of capitalized words, by character length,
/// earliest on ties. Score is the fraction of distinct question tokens found
/// in the chosen sentence. No candidate yields an empty answer.
pub fn stub_answer(req: &QaRequest) -> QaResponse {
    let chars: Vec<char> = req.context.chars().collect();
    let question = normalize(&req.question);
    let q_tokens: HashSet<&str> = question.tokens().iter().map(String::as_str).collect();

    let spans = sentence_spans(&chars);
    let mut best: Option<((usize, usize), usize)> = None;
    for &(s, e) in &spans {
        let text: String = chars[s..e].iter().collect();
        let norm = normalize(&text);
        let s_tokens: HashSet<&str> = norm.tokens().iter().map(String::as_str).collect();
        let overlap = q_tokens.intersection(&s_tokens).count();
        if best.is_none_or(|(_, b)| overlap > b) {
            best = Some(((s, e), overlap));
        }
    }
    let Some(((s, e), overlap)) = best else {
        return QaResponse { answer: String::new(), score: 0.0, start: 0, end: 0 };
    };
    let score = if q_tokens.is_empty() {
        0.0
    } else {
        overlap as f64 / q_tokens.len() as f64
    };

    let rendered = question.render();
    let wants_number = question.tokens().starts_with(&["how".to_owned(), "many".to_owned()])
        || rendered.contains("count")
        || rendered.contains("index");
    let words = word_cores(&chars, s, e);
    let span = if wants_number {
        words
            .iter()
            .copied()
            .find(|&(ws, we)| is_numeric(&chars[ws..we]))
    } else {
        let mut best_run: Option<(usize, usize)> = None;
        let mut run: Option<(usize, usize)> = None;
        for &(ws, we) in &words {
            if chars[ws].is_uppercase() {
                run = Some(run.map_or((ws, we), |(rs, _)| (rs, we)));
            } else {
                run = None;
            }
            if let Some((rs, re)) = run {
                if best_run.is_none_or(|(bs, be)| re - rs > be - bs) {
                    best_run = Some((rs, re));
                }
            }
        }
        best_run
    };
    let (start, end) = span.unwrap_or((s, s));
    QaResponse {
        answer: chars[start..end].iter().collect(),
        score,
        start,
        end,
    }
}

/// Where extractive answers come from.
#[derive(Clone)]
pub enum QaBackend {
    Stub,
    Remote { base_url: String, agent: ureq::Agent },
}

impl fmt::Debug for QaBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QaBackend::Stub => f.write_str("Stub"),
            QaBackend::Remote { base_url, .. } => f.debug_struct("Remote").field("base_url", base_url).finish(),
        }
    }
}

impl QaBackend {
    pub fn remote(base_url: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        QaBackend::Remote {
            base_url: base_url.trim_end_matches('/').to_owned(),
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

fn remote_answer(base_url: &str, agent: &ureq::Agent, req: &QaRequest) -> Result<QaResponse, QaError> {
    let body = serde_json::to_vec(req).expect("request serializes");
    let mut resp = agent
        .post(format!("{base_url}/answer"))
        .header("Content-Type", "application/json")
        .header("Accept", "application/json")
        .send(&body[..])
        .map_err(|e| QaError::BackendUnavailable(e.to_string()))?;
    let status = resp.status().as_u16();
    let bytes = resp
        .body_mut()
        .read_to_vec()
        .map_err(|e| QaError::BackendUnavailable(e.to_string()))?;
    match status {
        200..=299 => {}
        503 => return Err(QaError::BackendUnavailable("model not ready (503)".into())),
        s => {
            return Err(QaError::InvalidResponse(format!(
                "status {s}: {}",
                String::from_utf8_lossy(&bytes)
            )))
        }
    }
    let parsed: QaResponse =
        serde_json::from_slice(&bytes).map_err(|e| QaError::InvalidResponse(e.to_string()))?;
    if !parsed.is_extractive(&req.context) {
        return Err(QaError::InvalidResponse(format!(
            "answer {:?} is not context[{}..{}]",
            parsed.answer, parsed.start, parsed.end
        )));
    }
    Ok(parsed)
}

pub fn predict(backend: &QaBackend, req: &QaRequest) -> Result<QaResponse, QaError> {
    if req.context.trim().is_empty() {
        return Err(QaError::EmptyContext);
    }
    match backend {
        QaBackend::Stub => Ok(stub_answer(req)),
        QaBackend::Remote { base_url, agent } => remote_answer(base_url, agent, req),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::{Binding, Row};
    use proptest::prelude::*;

    fn question() -> Question {
        Question::new("q1", "How many works?", vec!["https://dblp.org/pid/1/1".into()]).unwrap()
    }

    fn rs(pairs: &[&[(&str, &str)]]) -> SparqlResultSet {
        let mut vars: Vec<String> = Vec::new();
        let rows = pairs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|(k, v)| {
                        if !vars.iter().any(|x| x == k) {
                            vars.push(k.to_string());
                        }
                        (k.to_string(), Binding::literal(*v))
                    })
                    .collect::<Row>()
            })
            .collect();
        SparqlResultSet::new(vars, rows).unwrap()
    }

    fn req(q: &str, c: &str) -> QaRequest {
        QaRequest { question: q.into(), context: c.into() }
    }

    #[test]
    fn works_sentence() {
        let doc = build_context(&question(), &[rs(&[&[("name", "Jane Roe"), ("worksCount", "42")]])]);
        assert_eq!(doc.sentences, ["Jane Roe has 42 works."]);
        assert_eq!(doc.facts["worksCount"], "42");
    }

    #[test]
    fn empty_results_no_sentences() {
        let doc = build_context(&question(), &[]);
        assert!(doc.is_empty());
        let doc = build_context(&question(), &[SparqlResultSet::default()]);
        assert!(doc.is_empty() && doc.facts.is_empty());
    }

    #[test]
    fn metric_sentences_carry_values() {
        let doc = build_context(
            &question(),
            &[rs(&[&[("name", "Jane Roe"), ("hIndex", "9"), ("citedByCount", "137")]])],
        );
        assert_eq!(doc.sentences.len(), 2);
        assert!(doc.sentences.iter().any(|s| s.contains("137")));
        assert!(doc.sentences.iter().any(|s| s.contains("9")));
    }

    #[test]
    fn institutions_follow_the_last_named_subject() {
        let doc = build_context(
            &question(),
            &[
                rs(&[&[("name", "Jane Roe")]]),
                rs(&[
                    &[("institutionName", "Acme University"), ("acronym", "AU")],
                    &[("institutionName", "Nordic Lab"), ("citedByCount", "12")],
                ]),
            ],
        );
        assert_eq!(
            doc.sentences,
            [
                "Jane Roe is an author.",
                "Jane Roe is affiliated with Acme University.",
                "AU is the acronym of Acme University.",
                "Jane Roe is affiliated with Nordic Lab.",
                "Nordic Lab has been cited 12 times.",
            ]
        );
        assert_eq!(doc.facts["institutionName_2"], "Nordic Lab");
    }

    #[test]
    fn stub_examples() {
        let r = stub_answer(&req("How many works does Jane Roe have?", "Jane Roe has 42 works."));
        assert_eq!(r.answer, "42");
        let r = stub_answer(&req("What is the h-index of Jane Roe?", "Jane Roe has an h-index of 9."));
        assert_eq!(r.answer, "9");
        // q tokens {what,is,hindex,of,jane,roe}, sentence shares 4
        assert!((r.score - 4.0 / 6.0).abs() < 1e-12);
        let r = stub_answer(&req(
            "Which institution is Jane Roe affiliated with?",
            "Jane Roe is affiliated with Acme University.",
        ));
        assert_eq!(r.answer, "Acme University");
    }

    #[test]
    fn stub_zero_overlap_uses_first_sentence() {
        let c = "Zed Bar has 7 works.";
        let r = stub_answer(&req("Quux?", c));
        assert_eq!(r.answer, "Zed Bar");
        assert_eq!(r.score, 0.0);
        assert!(r.is_extractive(c));
    }

    #[test]
    fn stub_picks_best_sentence_and_char_offsets() {
        let c = "Zoë Ångström has 3 works. Zoë Ångström has an h-index of 11.";
        let r = stub_answer(&req("What is Zoë's h-index?", c));
        assert_eq!(r.answer, "11");
        assert!(r.is_extractive(c));
        assert_eq!(c.chars().skip(r.start).take(2).collect::<String>(), "11");
    }

    #[test]
    fn stub_no_candidate_is_empty() {
        let c = "nothing capitalized here.";
        let r = stub_answer(&req("Who?", c));
        assert_eq!((r.answer.as_str(), r.start, r.end), ("", 0, 0));
    }

    #[test]
    fn predict_rejects_empty_context() {
        assert_eq!(predict(&QaBackend::Stub, &req("q", "  ")), Err(QaError::EmptyContext));
    }

    #[test]
    fn remote_unreachable() {
        // port 9 on localhost: nothing listens
        let backend = QaBackend::remote("http://127.0.0.1:9", Duration::from_secs(2));
        assert!(matches!(
            predict(&backend, &req("q", "Jane Roe has 1 works.")),
            Err(QaError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn extractivity_check() {
        let c = "Jane Roe has 42 works.";
        assert!(QaResponse::extract(c, 13, 15, 0.5).unwrap().is_extractive(c));
        assert!(QaResponse::extract(c, 0, 99, 0.5).is_none());
        let bad = QaResponse { answer: "43".into(), score: 0.5, start: 13, end: 15 };
        assert!(!bad.is_extractive(c));
        let bad = QaResponse { answer: "42".into(), score: 1.5, start: 13, end: 15 };
        assert!(!bad.is_extractive(c));
    }

    proptest! {
        #[test]
        fn stub_is_extractive_and_deterministic(q in "\\PC{0,30}", c in "[A-Za-z0-9 .,é-]{1,60}") {
            let r = stub_answer(&req(&q, &c));
            prop_assert!(r.is_extractive(&c), "{:?}", r);
            prop_assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&stub_answer(&req(&q, &c))).unwrap());
        }

        #[test]
        fn facts_recoverable(name in "[A-Z][a-z]{1,8} [A-Z][a-z]{1,8}", works in "[0-9]{1,4}", h in "[0-9]{1,3}") {
            let doc = build_context(&question(), &[rs(&[&[("name", &name), ("worksCount", &works), ("hIndex", &h)]])]);
            let text = doc.text();
            for v in doc.facts.values() {
                prop_assert!(text.contains(v.as_str()));
            }
            for s in &doc.sentences {
                prop_assert!(s.ends_with('.') && !s.is_empty());
            }
        }
    }
}
