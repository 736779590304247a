use std::collections::{BTreeMap, HashMap};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use scholqa_core::aggregate;
use scholqa_core::context::{self, QaRequest};
use scholqa_core::eval;
use scholqa_core::query;
use scholqa_core::router::{self, KeywordLexicon};
use scholqa_core::sparql;
use scholqa_core::{AnswerRecord, Question, QuestionSet, RoutingDecision, Stream};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Question", frozen, from_py_object)]
#[derive(Clone)]
struct PyQuestion(Question);

#[pymethods]
impl PyQuestion {
    #[new]
    fn new(id: String, text: String, author_uris: Vec<String>) -> PyResult<Self> {
        Question::new(id, text, author_uris).map(PyQuestion).map_err(value_err)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.0.id
    }

    #[getter]
    fn text(&self) -> &str {
        &self.0.text
    }

    #[getter]
    fn author_uris(&self) -> Vec<String> {
        self.0.author_uris.clone()
    }

    fn is_multi_author(&self) -> bool {
        self.0.is_multi_author()
    }

    fn __repr__(&self) -> String {
        format!("Question({:?}, {:?})", self.0.id, self.0.text)
    }
}

#[pyclass(name = "RoutingDecision", frozen)]
struct PyRoutingDecision(RoutingDecision);

#[pymethods]
impl PyRoutingDecision {
    #[getter]
    fn question_id(&self) -> &str {
        &self.0.question_id
    }

    #[getter]
    fn multi_author(&self) -> bool {
        self.0.multi_author
    }

    #[getter]
    fn scope(&self) -> &'static str {
        match self.0.scope {
            scholqa_core::Scope::Author => "author",
            scholqa_core::Scope::Institution => "institution",
        }
    }

    #[getter]
    fn breakdown(&self) -> String {
        self.0.breakdown.label()
    }

    #[getter]
    fn matched_keywords(&self) -> Vec<String> {
        self.0.matched_keywords.clone()
    }

    fn __repr__(&self) -> String {
        format!("RoutingDecision({:?}, {})", self.0.question_id, self.0.breakdown)
    }
}

/// Normalized tokens used by the matcher and the metrics.
#[pyfunction]
fn normalize(text: &str) -> Vec<String> {
    scholqa_core::normalize(text).tokens().to_vec()
}

#[pyfunction]
fn exact_match(pred: &str, gold: &str) -> u8 {
    eval::exact_match(pred, gold)
}

#[pyfunction]
fn token_f1(pred: &str, gold: &str) -> f64 {
    eval::token_f1(pred, gold)
}

/// Splits an author_dblp_uri field (plain, comma list, bracketed list, <iri>).
#[pyfunction]
fn split_author_uris(raw: &str) -> Vec<String> {
    scholqa_core::model::split_author_uris(raw)
}

/// Routes questions with the default lexicon, or one given as JSON.
#[pyfunction]
#[pyo3(signature = (questions, lexicon_json=None))]
fn classify(questions: Vec<PyQuestion>, lexicon_json: Option<&str>) -> PyResult<Vec<PyRoutingDecision>> {
    let lex = match lexicon_json {
        Some(text) => KeywordLexicon::from_json(text).map_err(value_err)?,
        None => KeywordLexicon::default(),
    };
    let set = QuestionSet::new(questions.into_iter().map(|q| q.0).collect()).map_err(value_err)?;
    Ok(router::route_all(&set, &lex).into_iter().map(PyRoutingDecision).collect())
}

#[pyclass(name = "QueryForge", frozen)]
struct PyQueryForge(query::QueryForge);

#[pymethods]
impl PyQueryForge {
    #[new]
    #[pyo3(signature = (overrides_json=None))]
    fn new(overrides_json: Option<&str>) -> PyResult<Self> {
        match overrides_json {
            Some(text) => query::QueryForge::with_overrides_json(text).map(PyQueryForge).map_err(value_err),
            None => Ok(PyQueryForge(query::QueryForge::default())),
        }
    }

    fn author_name_query(&self, author_uri: &str) -> PyResult<String> {
        self.0.author_name_query(author_uri).map_err(value_err)
    }

    fn author_info_query(&self, author_name: &str) -> PyResult<String> {
        self.0.author_info_query(author_name).map_err(value_err)
    }

    fn institution_query(&self, author_uri: &str) -> PyResult<String> {
        self.0.institution_query(author_uri).map_err(value_err)
    }
}

type Table = (Vec<String>, Vec<HashMap<String, String>>);

/// Returns (variables, rows) where each row maps a bound variable to its value.
#[pyfunction]
fn parse_sparql_json(body: &[u8]) -> PyResult<Table> {
    let rs = sparql::parse_results_json(body).map_err(value_err)?;
    let rows = rs
        .rows
        .iter()
        .map(|r| r.iter().map(|(k, b)| (k.clone(), b.value.clone())).collect())
        .collect();
    Ok((rs.variables, rows))
}

/// Offline extractive answer: (answer, score, start, end).
#[pyfunction]
fn stub_answer(question: String, context: String) -> (String, f64, usize, usize) {
    let r = context::stub_answer(&QaRequest { question, context });
    (r.answer, r.score, r.start, r.end)
}

fn records(pairs: Vec<(String, String)>, stream: Stream) -> Vec<AnswerRecord> {
    pairs.into_iter().map(|(id, a)| AnswerRecord::new(id, a, stream)).collect()
}

/// Merges (id, answer) streams; returns (id, answer, stream) sorted by id.
#[pyfunction]
fn merge_streams(
    local: Vec<(String, String)>,
    llm: Vec<(String, String)>,
    dnc: Vec<(String, String)>,
) -> PyResult<Vec<(String, String, String)>> {
    let merged = aggregate::merge_streams(
        &records(local, Stream::Local),
        &records(llm, Stream::Llm),
        &records(dnc, Stream::DncCombined),
    )
    .map_err(value_err)?;
    Ok(merged
        .records()
        .map(|r| {
            let tag = match r.stream {
                Stream::Local => "local",
                Stream::Llm => "llm",
                Stream::DncCombined => "dnc",
            };
            (r.question_id.clone(), r.answer.clone(), tag.to_owned())
        })
        .collect())
}

/// Returns (em_mean, f1_mean, answered, missing).
#[pyfunction]
fn score(preds: HashMap<String, String>, gold: BTreeMap<String, String>) -> (f64, f64, usize, usize) {
    let r = eval::score(preds.iter().map(|(k, v)| (k.as_str(), v.as_str())), &gold);
    (r.aggregate.em_mean, r.aggregate.f1_mean, r.aggregate.answered, r.aggregate.missing)
}

#[pymodule]
fn scholqa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuestion>()?;
    m.add_class::<PyRoutingDecision>()?;
    m.add_class::<PyQueryForge>()?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(split_author_uris, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(parse_sparql_json, m)?)?;
    m.add_function(wrap_pyfunction!(stub_answer, m)?)?;
    m.add_function(wrap_pyfunction!(merge_streams, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    Ok(())
}
