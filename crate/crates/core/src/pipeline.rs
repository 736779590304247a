//! File-coupled pipeline stages.
//!
//! Each stage reads its predecessor's files from the work directory and
//! writes its own atomically, so any stage can be rerun alone and an
//! interrupted `run` resumes from the first stage whose outputs are missing
//! or older than its inputs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{self, AggregateError, MergedAnswerSet, RetrievalTable};
use crate::config::{ConfigError, PipelineConfig};
use crate::context::{build_context, predict, ContextDocument, QaBackend, QaRequest};
use crate::eval::{self, EvalReport, GoldError};
use crate::model::{
    AnswerRecord, BreakdownSet, ModelError, Question, QuestionSet, RoutingDecision, Scope, Stream,
};
use crate::query::{dblp_display_name, reconcile_author_names, var, QueryForge, TemplateId};
use crate::router::{route_all, KeywordLexicon};
use crate::sparql::{
    EndpointConfig, Gateway, HttpTransport, QueryCache, ReplayFirst, ReplayTransport, Row,
    SparqlResultSet, Transport,
};

/// Stage file names inside the work directory.
pub mod files {
    pub const ROUTING: &str = "routing.jsonl";
    pub const RETRIEVAL: &str = "retrieval.jsonl";
    pub const RETRIEVAL_CSV: &str = "retrieval.csv";
    pub const CONTEXTS: &str = "contexts.jsonl";
    pub const LOCAL: &str = "local.jsonl";
    pub const LLM: &str = "llm.jsonl";
    pub const DNC: &str = "dnc.jsonl";
    pub const MERGED: &str = "merged.jsonl";
    pub const REPORT: &str = "eval.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Classify,
    Fetch,
    Context,
    Predict,
    Merge,
    Emit,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Classify => "classify",
            Stage::Fetch => "fetch",
            Stage::Context => "context",
            Stage::Predict => "predict",
            Stage::Merge => "merge",
            Stage::Emit => "emit",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Input { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Questions { path: PathBuf, source: ModelError },
    #[error("{path}: {source}")]
    Aggregate { path: PathBuf, source: AggregateError },
    #[error("{path}: {source}")]
    Gold { path: PathBuf, source: GoldError },
    #[error("every query failed ({0} attempted)")]
    TotalFetchFailure(usize),
    #[error("every QA request failed; first error: {0}")]
    QaFailed(String),
    #[error("[{}] {source}", stage.name())]
    Stage { stage: Stage, source: Box<PipelineError> },
}

impl PipelineError {
    fn at(self, stage: Stage) -> Self {
        match self {
            e @ PipelineError::Stage { .. } => e,
            e => PipelineError::Stage { stage, source: Box::new(e) },
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::fsutil::write_atomic(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Input {
                path: path.to_owned(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("stage record serializes"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn read_stream(path: &Path) -> Result<Vec<AnswerRecord>> {
    aggregate::parse_stream_file(&read_text(path)?).map_err(|source| PipelineError::Aggregate {
        path: path.to_owned(),
        source,
    })
}

/// A question together with its routing decision; one line of the routing
/// file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutedQuestion {
    pub id: String,
    pub question: String,
    pub author_dblp_uri: Vec<String>,
    pub multi_author: bool,
    pub scope: Scope,
    pub breakdown: BreakdownSet,
    pub matched_keywords: Vec<String>,
}

impl RoutedQuestion {
    pub fn new(q: &Question, d: RoutingDecision) -> Self {
        RoutedQuestion {
            id: q.id.clone(),
            question: q.text.clone(),
            author_dblp_uri: q.author_uris.clone(),
            multi_author: d.multi_author,
            scope: d.scope,
            breakdown: d.breakdown,
            matched_keywords: d.matched_keywords,
        }
    }

    pub fn to_question(&self) -> Result<Question, ModelError> {
        Question::new(&self.id, &self.question, self.author_dblp_uri.clone())
    }

    pub fn decision(&self) -> RoutingDecision {
        RoutingDecision {
            question_id: self.id.clone(),
            multi_author: self.multi_author,
            scope: self.scope,
            breakdown: self.breakdown.clone(),
            matched_keywords: self.matched_keywords.clone(),
        }
    }
}

/// Per-breakdown-set question counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassifySummary {
    pub counts: BTreeMap<String, usize>,
}

impl ClassifySummary {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn load_questions(path: &Path) -> Result<QuestionSet> {
    QuestionSet::from_json(&read_text(path)?).map_err(|source| PipelineError::Questions {
        path: path.to_owned(),
        source,
    })
}

pub fn classify(qs: &QuestionSet, lex: &KeywordLexicon) -> Vec<RoutedQuestion> {
    qs.iter()
        .zip(route_all(qs, lex))
        .map(|(q, d)| RoutedQuestion::new(q, d))
        .collect()
}

pub fn summarize(routed: &[RoutedQuestion]) -> ClassifySummary {
    let mut counts = BTreeMap::new();
    for r in routed {
        *counts.entry(r.breakdown.label()).or_insert(0) += 1;
    }
    ClassifySummary { counts }
}

/// One query and what came back. Exactly one of `result` and `error` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub endpoint: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<SparqlResultSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QueryOutcome {
    fn failed(endpoint: &str, query: String, error: String) -> Self {
        QueryOutcome {
            endpoint: endpoint.to_owned(),
            query,
            result: None,
            error: Some(error),
        }
    }
}

/// Everything retrieved for one author of one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorRetrieval {
    pub author_uri: String,
    pub dblp_name: QueryOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<QueryOutcome>,
    /// SemOpenAlex author matched to the DBLP name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semoa_author: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semoa_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub institutions: Option<QueryOutcome>,
}

impl AuthorRetrieval {
    fn outcomes(&self) -> impl Iterator<Item = &QueryOutcome> {
        std::iter::once(&self.dblp_name)
            .chain(self.info.as_ref())
            .chain(self.institutions.as_ref())
    }

    fn name(&self) -> Option<&str> {
        self.dblp_name
            .result
            .as_ref()?
            .column(var::NAME)
            .find(|n| !n.trim().is_empty())
    }

    /// The info row of the matched SemOpenAlex author.
    pub fn info_row(&self) -> Option<&Row> {
        let rs = self.info.as_ref()?.result.as_ref()?;
        let (uri, name) = (self.semoa_author.as_deref()?, self.semoa_name.as_deref()?);
        rs.rows.iter().find(|r| {
            r.get(var::AUTHOR).is_some_and(|b| b.value == uri)
                && r.get(var::NAME).is_some_and(|b| b.value == name)
        })
    }

    /// Result sets describing this author, in context order.
    pub fn result_sets(&self) -> Vec<SparqlResultSet> {
        let mut out = Vec::new();
        match (self.info_row(), &self.info) {
            (Some(row), Some(info)) => out.push(SparqlResultSet {
                variables: info.result.as_ref().map(|r| r.variables.clone()).unwrap_or_default(),
                rows: vec![row.clone()],
            }),
            _ => out.extend(self.dblp_name.result.clone()),
        }
        if let Some(rs) = self.institutions.as_ref().and_then(|o| o.result.clone()) {
            out.push(rs);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRetrieval {
    pub id: String,
    pub authors: Vec<AuthorRetrieval>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FetchSummary {
    pub questions: usize,
    pub queries: usize,
    pub failed: usize,
}

impl FetchSummary {
    pub fn of(retrieval: &[QuestionRetrieval]) -> Self {
        let outcomes = || retrieval.iter().flat_map(|q| &q.authors).flat_map(|a| a.outcomes());
        FetchSummary {
            questions: retrieval.len(),
            queries: outcomes().count(),
            failed: outcomes().filter(|o| o.error.is_some()).count(),
        }
    }
}

/// Runs one wave of queries for `idents`, batched per endpoint. Returns the
/// outcome per identifier; identical identifiers share one query.
fn wave(
    gw: &Gateway,
    ep: &EndpointConfig,
    idents: &[String],
    build: impl Fn(&str) -> Result<String, crate::query::QueryError>,
) -> HashMap<String, QueryOutcome> {
    let mut out = HashMap::new();
    let mut pending: Vec<(String, String)> = Vec::new();
    for ident in idents {
        if out.contains_key(ident) || pending.iter().any(|(i, _)| i == ident) {
            continue;
        }
        match build(ident) {
            Ok(q) => pending.push((ident.clone(), q)),
            Err(e) => {
                out.insert(ident.clone(), QueryOutcome::failed(&ep.name, String::new(), e.to_string()));
            }
        }
    }
    let queries: Vec<String> = pending.iter().map(|(_, q)| q.clone()).collect();
    for ((ident, _), (query, res)) in pending.into_iter().zip(gw.execute_batch(ep, &queries)) {
        let outcome = match res {
            Ok(rs) => QueryOutcome {
                endpoint: ep.name.clone(),
                query,
                result: Some(rs),
                error: None,
            },
            Err(e) => QueryOutcome::failed(&ep.name, query, e.to_string()),
        };
        out.insert(ident, outcome);
    }
    out
}

fn endpoint<'a>(cfg: &'a PipelineConfig, forge: &QueryForge, id: TemplateId) -> Result<&'a EndpointConfig> {
    let name = forge.endpoint_for(id);
    cfg.endpoint(name).ok_or_else(|| {
        PipelineError::Config(ConfigError::UnknownEndpoint {
            template: id.as_str(),
            endpoint: name.to_owned(),
        })
    })
}

/// Fetches names, metrics and affiliations for every author of every
/// question in three waves: DBLP names, SemOpenAlex authors by name, then
/// institutions of the matched SemOpenAlex authors.
pub fn retrieve(
    gw: &Gateway,
    forge: &QueryForge,
    cfg: &PipelineConfig,
    routed: &[RoutedQuestion],
) -> Result<Vec<QuestionRetrieval>> {
    let ep_name = endpoint(cfg, forge, TemplateId::AuthorName)?;
    let ep_info = endpoint(cfg, forge, TemplateId::AuthorInfo)?;
    let ep_inst = endpoint(cfg, forge, TemplateId::AuthorInstitution)?;

    let uris: Vec<String> = routed.iter().flat_map(|r| r.author_dblp_uri.iter().cloned()).collect();
    let names = wave(gw, ep_name, &uris, |u| forge.author_name_query(u));

    let mut authors: BTreeMap<String, AuthorRetrieval> = BTreeMap::new();
    for uri in &uris {
        authors.entry(uri.clone()).or_insert_with(|| AuthorRetrieval {
            author_uri: uri.clone(),
            dblp_name: names[uri].clone(),
            info: None,
            semoa_author: None,
            semoa_name: None,
            institutions: None,
        });
    }

    let display: Vec<String> = authors
        .values()
        .filter_map(|a| a.name().map(|n| dblp_display_name(n).to_owned()))
        .collect();
    let infos = wave(gw, ep_info, &display, |n| forge.author_info_query(n));
    for a in authors.values_mut() {
        let Some(dblp) = a.name().map(str::to_owned) else { continue };
        let info = infos[dblp_display_name(&dblp)].clone();
        if let Some(rs) = &info.result {
            let candidates: Vec<&str> = rs.column(var::NAME).collect();
            if let Some(name) = reconcile_author_names(&dblp, &candidates) {
                let row = rs
                    .rows
                    .iter()
                    .find(|r| r.get(var::NAME).is_some_and(|b| b.value == name));
                a.semoa_author = row.and_then(|r| r.get(var::AUTHOR)).map(|b| b.value.clone());
                a.semoa_name = a.semoa_author.as_ref().map(|_| name.to_owned());
            }
        }
        a.info = Some(info);
    }

    let semoa: Vec<String> = authors.values().filter_map(|a| a.semoa_author.clone()).collect();
    let insts = wave(gw, ep_inst, &semoa, |u| forge.institution_query(u));
    for a in authors.values_mut() {
        if let Some(s) = &a.semoa_author {
            a.institutions = Some(insts[s].clone());
        }
    }

    Ok(routed
        .iter()
        .map(|r| QuestionRetrieval {
            id: r.id.clone(),
            authors: r.author_dblp_uri.iter().map(|u| authors[u].clone()).collect(),
        })
        .collect())
}

/// Columns of the flattened retrieval table.
pub const CSV_COLUMNS: [&str; 15] = [
    "id",
    "author_uri",
    "dblp_name",
    "semoa_author",
    var::NAME,
    var::WORKS_COUNT,
    var::CITED_BY_COUNT,
    var::H_INDEX,
    var::I10_INDEX,
    var::ORCID,
    var::INSTITUTION,
    var::INSTITUTION_NAME,
    var::ACRONYM,
    var::HOMEPAGE,
    INSTITUTION_CITED_BY_COUNT,
];

pub const INSTITUTION_CITED_BY_COUNT: &str = "institutionCitedByCount";

/// One row per question, author and institution.
pub fn retrieval_table(retrieval: &[QuestionRetrieval]) -> RetrievalTable {
    let mut rows = Vec::new();
    for q in retrieval {
        for a in &q.authors {
            let info = a.info_row();
            let get = |r: Option<&Row>, v: &str| {
                r.and_then(|r| r.get(v)).map(|b| b.value.clone()).unwrap_or_default()
            };
            let mut base = vec![
                q.id.clone(),
                a.author_uri.clone(),
                a.name().unwrap_or_default().to_owned(),
                a.semoa_author.clone().unwrap_or_default(),
            ];
            for v in [var::NAME, var::WORKS_COUNT, var::CITED_BY_COUNT, var::H_INDEX, var::I10_INDEX, var::ORCID] {
                base.push(get(info, v));
            }
            let inst_rows: Vec<&Row> = a
                .institutions
                .as_ref()
                .and_then(|o| o.result.as_ref())
                .map(|rs| rs.rows.iter().collect())
                .unwrap_or_default();
            if inst_rows.is_empty() {
                let mut row = base.clone();
                row.resize(CSV_COLUMNS.len(), String::new());
                rows.push(row);
            }
            for ir in inst_rows {
                let mut row = base.clone();
                for v in [var::INSTITUTION, var::INSTITUTION_NAME, var::ACRONYM, var::HOMEPAGE, var::CITED_BY_COUNT] {
                    row.push(get(Some(ir), v));
                }
                rows.push(row);
            }
        }
    }
    RetrievalTable {
        header: CSV_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}

/// The retrieval column answering a question of this routing, if any.
pub fn answer_column(r: &RoutedQuestion) -> Option<&'static str> {
    Some(match &r.breakdown {
        BreakdownSet::HIndex => var::H_INDEX,
        BreakdownSet::I10Index => var::I10_INDEX,
        BreakdownSet::CitedByCount if r.scope == Scope::Institution => INSTITUTION_CITED_BY_COUNT,
        BreakdownSet::CitedByCount => var::CITED_BY_COUNT,
        BreakdownSet::Acronym => var::ACRONYM,
        BreakdownSet::Institution => var::INSTITUTION_NAME,
        BreakdownSet::PublicationDetails => var::WORKS_COUNT,
        BreakdownSet::Authors | BreakdownSet::ListAuthorDblpUri => var::NAME,
        BreakdownSet::Other(_) => return None,
    })
}

/// Direct answers for single-author questions: the facts of the answering
/// kind in the question's own context, joined by ", ".
pub fn local_answers(routed: &[RoutedQuestion], contexts: &[ContextDocument]) -> Vec<AnswerRecord> {
    let by_id: HashMap<&str, &ContextDocument> =
        contexts.iter().map(|c| (c.question_id.as_str(), c)).collect();
    routed
        .iter()
        .filter(|r| !r.multi_author)
        .map(|r| {
            let answer = match (answer_column(r), by_id.get(r.id.as_str())) {
                (Some(col), Some(ctx)) => fact_values(&ctx.facts, col).join(", "),
                _ => String::new(),
            };
            AnswerRecord::new(&r.id, answer, Stream::Local)
        })
        .collect()
}

/// Values stored under `key`, `key_2`, `key_3`, ... in insertion order.
fn fact_values<'a>(facts: &'a BTreeMap<String, String>, key: &str) -> Vec<&'a str> {
    let first = facts.get(key).map(String::as_str);
    first
        .into_iter()
        .chain((2..).map_while(|n| facts.get(&format!("{key}_{n}")).map(String::as_str)))
        .collect()
}

/// Combined answers from the retrieval table: per author in question order,
/// the distinct non-empty values of the answering column, joined by ", ".
pub fn dnc_answers(routed: &[RoutedQuestion], table: &RetrievalTable) -> Result<Vec<AnswerRecord>, AggregateError> {
    let records = aggregate::dedupe(aggregate::csv_to_records(table)?);
    let mut by_id: HashMap<&str, Vec<&aggregate::Record>> = HashMap::new();
    for rec in &records {
        by_id.entry(rec[aggregate::ID_COLUMN].as_str()).or_default().push(rec);
    }
    Ok(routed
        .iter()
        .map(|r| {
            let mut values: Vec<&str> = Vec::new();
            if let Some(col) = answer_column(r) {
                let recs = by_id.get(r.id.as_str()).map(Vec::as_slice).unwrap_or_default();
                for uri in &r.author_dblp_uri {
                    for rec in recs.iter().filter(|x| x.get("author_uri") == Some(uri)) {
                        match rec.get(col).map(String::as_str) {
                            Some(v) if !v.is_empty() && !values.contains(&v) => values.push(v),
                            _ => {}
                        }
                    }
                }
            }
            AnswerRecord::new(&r.id, values.join(", "), Stream::DncCombined)
        })
        .collect())
}

/// Questions handed to the QA backend: author-scope questions the router
/// could not place, or whose context lacks a fact of the answering kind.
pub fn needs_llm(r: &RoutedQuestion, ctx: &ContextDocument) -> bool {
    r.scope == Scope::Author
        && match answer_column(r) {
            None => true,
            Some(col) => fact_values(&ctx.facts, col).is_empty(),
        }
}

pub fn llm_answers(
    backend: &QaBackend,
    max_in_flight: usize,
    routed: &[RoutedQuestion],
    contexts: &[ContextDocument],
) -> Result<Vec<AnswerRecord>> {
    let ctx: HashMap<&str, &ContextDocument> = contexts.iter().map(|c| (c.question_id.as_str(), c)).collect();
    let jobs: Vec<(&str, QaRequest)> = routed
        .iter()
        .filter_map(|r| {
            let c = ctx.get(r.id.as_str()).filter(|c| !c.is_empty() && needs_llm(r, c))?;
            Some((r.id.as_str(), QaRequest { question: r.question.clone(), context: c.text() }))
        })
        .collect();
    let results = crate::par::bounded_map(&jobs, max_in_flight, |(_, req)| predict(backend, req));
    let mut out = Vec::new();
    let mut first_err = None;
    for ((id, _), res) in jobs.iter().zip(results) {
        match res {
            Ok(resp) => out.push(AnswerRecord::new(*id, resp.answer, Stream::Llm)),
            Err(e) => {
                log::warn!("{id}: {e}");
                first_err.get_or_insert(e.to_string());
            }
        }
    }
    match first_err {
        Some(e) if out.is_empty() => Err(PipelineError::QaFailed(e)),
        _ => Ok(out),
    }
}

pub fn contexts_for(routed: &[RoutedQuestion], retrieval: &[QuestionRetrieval]) -> Result<Vec<ContextDocument>> {
    let by_id: HashMap<&str, &QuestionRetrieval> = retrieval.iter().map(|r| (r.id.as_str(), r)).collect();
    routed
        .iter()
        .map(|r| {
            let q = r.to_question().map_err(|source| PipelineError::Questions {
                path: PathBuf::from(files::ROUTING),
                source,
            })?;
            let results: Vec<SparqlResultSet> = by_id
                .get(r.id.as_str())
                .map(|qr| qr.authors.iter().flat_map(|a| a.result_sets()).collect())
                .unwrap_or_default();
            Ok(build_context(&q, &results))
        })
        .collect()
}

/// Options for [`Pipeline::run`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Rerun every stage even when its outputs are up to date.
    pub fresh: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub classify: Option<ClassifySummary>,
    pub fetch: Option<FetchSummary>,
    pub skipped: Vec<Stage>,
    pub answers: usize,
    pub report: Option<EvalReport>,
}

/// The configured pipeline with its network transport.
pub struct Pipeline {
    pub config: PipelineConfig,
    network: Arc<dyn Transport>,
    backoff: Duration,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self::with_transport(config, Arc::new(HttpTransport::new()))
    }

    /// Uses `network` for every query not answered by the cache or the
    /// replay directory.
    pub fn with_transport(config: PipelineConfig, network: Arc<dyn Transport>) -> Self {
        Pipeline {
            config,
            network,
            backoff: Duration::from_secs(1),
        }
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn work(&self, name: &str) -> PathBuf {
        self.config.work_dir.join(name)
    }

    pub fn gateway(&self) -> Gateway {
        let transport: Arc<dyn Transport> = match &self.config.replay_dir {
            Some(dir) => Arc::new(ReplayFirst::new(ReplayTransport::new(dir), self.network.clone())),
            None => self.network.clone(),
        };
        Gateway::new(transport, self.config.cache_dir.as_ref().map(QueryCache::new)).with_backoff_base(self.backoff)
    }

    pub fn classify(&self, questions: &Path) -> Result<ClassifySummary> {
        let qs = load_questions(questions)?;
        let routed = classify(&qs, &self.config.lexicon()?);
        write_jsonl(&self.work(files::ROUTING), &routed)?;
        Ok(summarize(&routed))
    }

    pub fn fetch(&self) -> Result<FetchSummary> {
        let routed: Vec<RoutedQuestion> = read_jsonl(&self.work(files::ROUTING))?;
        let retrieval = retrieve(&self.gateway(), &self.config.forge()?, &self.config, &routed)?;
        let summary = FetchSummary::of(&retrieval);
        if summary.queries > 0 && summary.failed == summary.queries {
            return Err(PipelineError::TotalFetchFailure(summary.queries));
        }
        let csv = retrieval_table(&retrieval).to_csv().map_err(|source| PipelineError::Aggregate {
            path: self.work(files::RETRIEVAL_CSV),
            source,
        })?;
        write_jsonl(&self.work(files::RETRIEVAL), &retrieval)?;
        write_file(&self.work(files::RETRIEVAL_CSV), &csv)?;
        Ok(summary)
    }

    pub fn context(&self) -> Result<()> {
        let routed: Vec<RoutedQuestion> = read_jsonl(&self.work(files::ROUTING))?;
        let retrieval: Vec<QuestionRetrieval> = read_jsonl(&self.work(files::RETRIEVAL))?;
        let csv_path = self.work(files::RETRIEVAL_CSV);
        let table = RetrievalTable::from_csv(read_text(&csv_path)?.as_bytes())
            .and_then(|t| dnc_answers(&routed, &t))
            .map_err(|source| PipelineError::Aggregate { path: csv_path, source })?;
        let contexts = contexts_for(&routed, &retrieval)?;
        let local = local_answers(&routed, &contexts);
        write_jsonl(&self.work(files::CONTEXTS), &contexts)?;
        write_file(&self.work(files::LOCAL), aggregate::render_stream_file(&local).as_bytes())?;
        write_file(&self.work(files::DNC), aggregate::render_stream_file(&table).as_bytes())?;
        Ok(())
    }

    pub fn predict(&self) -> Result<usize> {
        let routed: Vec<RoutedQuestion> = read_jsonl(&self.work(files::ROUTING))?;
        let contexts: Vec<ContextDocument> = read_jsonl(&self.work(files::CONTEXTS))?;
        let llm = llm_answers(&self.config.qa()?, self.config.qa_backend.max_in_flight, &routed, &contexts)?;
        write_file(&self.work(files::LLM), aggregate::render_stream_file(&llm).as_bytes())?;
        Ok(llm.len())
    }

    pub fn merge(&self) -> Result<usize> {
        let [local, llm, dnc] = [files::LOCAL, files::LLM, files::DNC].map(|f| read_stream(&self.work(f)));
        let merged = aggregate::merge_streams(&local?, &llm?, &dnc?).map_err(|source| PipelineError::Aggregate {
            path: self.config.work_dir.clone(),
            source,
        })?;
        let records: Vec<AnswerRecord> = merged.records().cloned().collect();
        write_file(&self.work(files::MERGED), aggregate::render_stream_file(&records).as_bytes())?;
        Ok(records.len())
    }

    pub fn emit(&self) -> Result<usize> {
        let path = self.work(files::MERGED);
        let merged = MergedAnswerSet::from_records(read_stream(&path)?)
            .map_err(|source| PipelineError::Aggregate { path, source })?;
        aggregate::emit_answers_file(&merged, &self.config.output).map_err(|source| PipelineError::Aggregate {
            path: self.config.output.clone(),
            source,
        })?;
        Ok(merged.len())
    }

    pub fn evaluate(&self, answers: &Path, gold: &Path) -> Result<EvalReport> {
        let sheet = aggregate::parse_answers(&read_text(answers)?).map_err(|source| PipelineError::Aggregate {
            path: answers.to_owned(),
            source,
        })?;
        let gold_map = eval::parse_gold(&read_text(gold)?).map_err(|source| PipelineError::Gold {
            path: gold.to_owned(),
            source,
        })?;
        let report = eval::score(sheet.iter().map(|(k, v)| (k.as_str(), v.as_str())), &gold_map);
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_file(&self.work(files::REPORT), json.as_bytes())?;
        Ok(report)
    }

    /// Runs every stage in order, skipping stages whose outputs are newer
    /// than their inputs unless `opts.fresh` is set.
    pub fn run(&self, opts: RunOptions) -> Result<RunSummary> {
        self.config.validate()?;
        let questions = self.config.questions_path()?.to_owned();
        let w = |f: &str| self.work(f);
        let mut summary = RunSummary::default();

        let mut classify_in = vec![questions.clone()];
        classify_in.extend(self.config.lexicon.clone());
        let plan: [(Stage, Vec<PathBuf>, Vec<PathBuf>); 6] = [
            (Stage::Classify, classify_in, vec![w(files::ROUTING)]),
            (Stage::Fetch, vec![w(files::ROUTING)], vec![w(files::RETRIEVAL), w(files::RETRIEVAL_CSV)]),
            (
                Stage::Context,
                vec![w(files::ROUTING), w(files::RETRIEVAL), w(files::RETRIEVAL_CSV)],
                vec![w(files::CONTEXTS), w(files::LOCAL), w(files::DNC)],
            ),
            (Stage::Predict, vec![w(files::ROUTING), w(files::CONTEXTS)], vec![w(files::LLM)]),
            (Stage::Merge, vec![w(files::LOCAL), w(files::LLM), w(files::DNC)], vec![w(files::MERGED)]),
            (Stage::Emit, vec![w(files::MERGED)], vec![self.config.output.clone()]),
        ];
        for (stage, inputs, outputs) in plan {
            if !opts.fresh && up_to_date(&inputs, &outputs) {
                log::info!("{}: up to date", stage.name());
                summary.skipped.push(stage);
                continue;
            }
            log::info!("{}: running", stage.name());
            let res = match stage {
                Stage::Classify => self.classify(&questions).map(|s| summary.classify = Some(s)),
                Stage::Fetch => self.fetch().map(|s| summary.fetch = Some(s)),
                Stage::Context => self.context(),
                Stage::Predict => self.predict().map(drop),
                Stage::Merge => self.merge().map(drop),
                Stage::Emit => self.emit().map(|n| summary.answers = n),
                Stage::Evaluate => unreachable!("evaluate is not part of the resumable plan"),
            };
            res.map_err(|e| e.at(stage))?;
        }
        if let Some(gold) = &self.config.gold {
            let report = self
                .evaluate(&self.config.output, gold)
                .map_err(|e| e.at(Stage::Evaluate))?;
            summary.report = Some(report);
        }
        Ok(summary)
    }
}

fn mtime(p: &Path) -> Option<SystemTime> {
    std::fs::metadata(p).and_then(|m| m.modified()).ok()
}

/// True when every output exists and none is older than any input.
fn up_to_date(inputs: &[PathBuf], outputs: &[PathBuf]) -> bool {
    let Some(oldest_out) = outputs.iter().map(|p| mtime(p)).collect::<Option<Vec<_>>>().and_then(|v| v.into_iter().min())
    else {
        return false;
    };
    inputs.iter().all(|p| mtime(p).is_some_and(|t| t <= oldest_out))
}

/// Distinct authors referenced by a routing file, in first-seen order.
pub fn distinct_authors(routed: &[RoutedQuestion]) -> Vec<&str> {
    let mut seen = HashSet::new();
    routed
        .iter()
        .flat_map(|r| r.author_dblp_uri.iter().map(String::as_str))
        .filter(|u| seen.insert(*u))
        .collect()
}
