//! Recorded endpoint responses for offline runs.
//!
//! A recording directory has the cache layout
//! (`<dir>/<endpoint>/<sha256 of query>.json`), so it can be used as a
//! replay directory or copied into a cache.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::pipeline::{retrieve, PipelineError, QuestionRetrieval, RoutedQuestion};
use crate::sparql::{Gateway, OfflineTransport, QueryCache, ReplayTransport, Transport};

pub const GAPS_FILE: &str = "gaps.json";

/// A query whose response is not recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub question_ids: Vec<String>,
    pub endpoint: String,
    pub query: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    /// Distinct (endpoint, query) pairs the fetch stage issued.
    pub queries: usize,
    pub gaps: Vec<Gap>,
}

impl Coverage {
    pub fn is_complete(&self) -> bool {
        self.gaps.is_empty()
    }

    fn of(retrieval: &[QuestionRetrieval]) -> Self {
        let mut seen: Vec<(String, String)> = Vec::new();
        let mut gaps: Vec<Gap> = Vec::new();
        for q in retrieval {
            for a in &q.authors {
                for o in std::iter::once(&a.dblp_name).chain(&a.info).chain(&a.institutions) {
                    let key = (o.endpoint.clone(), o.query.clone());
                    if !seen.contains(&key) {
                        seen.push(key);
                    }
                    let Some(err) = &o.error else { continue };
                    match gaps.iter_mut().find(|g| g.endpoint == o.endpoint && g.query == o.query) {
                        Some(g) if !g.question_ids.contains(&q.id) => g.question_ids.push(q.id.clone()),
                        Some(_) => {}
                        None => gaps.push(Gap {
                            question_ids: vec![q.id.clone()],
                            endpoint: o.endpoint.clone(),
                            query: o.query.clone(),
                            error: err.clone(),
                        }),
                    }
                }
            }
        }
        Coverage { queries: seen.len(), gaps }
    }
}

/// Replays the fetch stage against `recordings` alone and lists every
/// generated query without a recorded response.
pub fn check_completeness(
    cfg: &PipelineConfig,
    routed: &[RoutedQuestion],
    recordings: &Path,
) -> Result<Coverage, PipelineError> {
    let gw = Gateway::new(Arc::new(ReplayTransport::new(recordings)), None);
    let retrieval = retrieve(&gw, &cfg.forge()?, cfg, routed)?;
    Ok(Coverage::of(&retrieval))
}

/// Runs the fetch stage through `network` one request at a time, storing
/// every successful response under `out_dir`. Failed queries are listed in
/// `out_dir/gaps.json`.
pub fn record_fixtures(
    cfg: &PipelineConfig,
    routed: &[RoutedQuestion],
    network: Arc<dyn Transport>,
    out_dir: &Path,
) -> Result<Coverage, PipelineError> {
    let mut cfg = cfg.clone();
    for ep in &mut cfg.endpoints {
        ep.max_parallel = 1;
    }
    let gw = Gateway::new(network, Some(QueryCache::new(out_dir)));
    let retrieval = retrieve(&gw, &cfg.forge()?, &cfg, routed)?;
    let coverage = Coverage::of(&retrieval);
    let json = serde_json::to_string_pretty(&coverage.gaps).expect("gaps serialize") + "\n";
    let path = out_dir.join(GAPS_FILE);
    crate::fsutil::write_atomic(&path, json.as_bytes()).map_err(|source| PipelineError::Io { path, source })?;
    Ok(coverage)
}

/// A transport for runs that must never reach the network.
pub fn offline() -> Arc<dyn Transport> {
    Arc::new(OfflineTransport)
}
