//! SPARQL gateway: executes SELECT queries over HTTP with a disk cache,
//! bounded batch parallelism and retry with exponential backoff.

pub mod cache;
pub mod results;
pub mod transport;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iri::is_absolute_iri;
pub use cache::{CacheError, QueryCache, QueryCacheKey};
pub use results::{parse_results_json, Binding, BindingKind, ParseError, Row, SparqlResultSet};
pub use transport::{
    CountingTransport, HttpReply, HttpTransport, OfflineTransport, ReplayFirst, ReplayTransport, Transport,
    TransportError,
};

#[derive(Debug, Error)]
pub enum EndpointConfigError {
    #[error("endpoint name {0:?} must be non-empty and use only [A-Za-z0-9_-]")]
    BadName(String),
    #[error("endpoint {name}: url {url:?} is not an absolute http(s) URL")]
    BadUrl { name: String, url: String },
    #[error("endpoint {0}: timeout must be positive")]
    BadTimeout(String),
    #[error("endpoint {0}: max_parallel must be at least 1")]
    BadParallelism(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub name: String,
    pub url: String,
    #[serde(rename = "timeout_s", default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    3
}

fn default_parallel() -> usize {
    4
}

impl EndpointConfig {
    pub fn new(name: &str, url: &str) -> Self {
        EndpointConfig {
            name: name.to_owned(),
            url: url.to_owned(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_parallel: default_parallel(),
        }
    }

    pub fn validate(&self) -> Result<(), EndpointConfigError> {
        let name_ok = !self.name.is_empty()
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !name_ok {
            return Err(EndpointConfigError::BadName(self.name.clone()));
        }
        let scheme_ok = self.url.starts_with("http://") || self.url.starts_with("https://");
        if !scheme_ok || !is_absolute_iri(&self.url) {
            return Err(EndpointConfigError::BadUrl {
                name: self.name.clone(),
                url: self.url.clone(),
            });
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(EndpointConfigError::BadTimeout(self.name.clone()));
        }
        if self.max_parallel == 0 {
            return Err(EndpointConfigError::BadParallelism(self.name.clone()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("not a SELECT query")]
    MalformedQuery,
    #[error("network error after {attempts} attempt(s): {source}")]
    Network {
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("HTTP status {status}")]
    Http { status: u16 },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("endpoint rejected the query: {0}")]
    QueryRejected(String),
}

fn select_shape() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?is)^\s*(?:(?:PREFIX\s+[^\s:]*:\s*<[^>]*>|BASE\s+<[^>]*>)\s*)*SELECT[\s?*(]",
        )
        .expect("static regex")
    })
}

/// Shallow well-formedness check: optional PREFIX/BASE declarations, then
/// SELECT.
pub fn is_select_query(query: &str) -> bool {
    select_shape().is_match(query)
}

const REJECTION_SNIPPET: usize = 500;

/// Executes queries through a transport, consulting and filling the cache.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    cache: Option<QueryCache>,
    backoff_base: Duration,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>, cache: Option<QueryCache>) -> Self {
        Gateway {
            transport,
            cache,
            backoff_base: Duration::from_secs(1),
        }
    }

    /// First retry waits `base`, then `2*base`, `4*base`, ...
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn cache(&self) -> Option<&QueryCache> {
        self.cache.as_ref()
    }

    pub fn cache_lookup(&self, key: &QueryCacheKey) -> Option<SparqlResultSet> {
        self.cache.as_ref().and_then(|c| c.lookup(key))
    }

    pub fn execute(&self, ep: &EndpointConfig, query: &str) -> Result<SparqlResultSet, GatewayError> {
        if !is_select_query(query) {
            return Err(GatewayError::MalformedQuery);
        }
        let key = QueryCacheKey::new(&ep.name, query);
        if let Some(hit) = self.cache_lookup(&key) {
            return Ok(hit);
        }
        let body = self.fetch_with_retries(ep, query)?;
        let rs = parse_results_json(&body)?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.store(&key, &body) {
                log::warn!("{e}");
            }
        }
        Ok(rs)
    }

    fn fetch_with_retries(&self, ep: &EndpointConfig, query: &str) -> Result<Vec<u8>, GatewayError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let retryable = match self.transport.post_query(ep, query) {
                Ok(reply) if (200..300).contains(&reply.status) => return Ok(reply.body),
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    GatewayError::Http { status: reply.status }
                }
                Ok(reply) if reply.status == 400 => {
                    let text = String::from_utf8_lossy(&reply.body);
                    let snippet: String = text.chars().take(REJECTION_SNIPPET).collect();
                    return Err(GatewayError::QueryRejected(snippet));
                }
                Ok(reply) => return Err(GatewayError::Http { status: reply.status }),
                Err(e) if e.is_retryable() => GatewayError::Network {
                    attempts: attempt,
                    source: e,
                },
                Err(e) => {
                    return Err(GatewayError::Network {
                        attempts: attempt,
                        source: e,
                    })
                }
            };
            if attempt > ep.max_retries {
                return Err(retryable);
            }
            let delay = self.backoff_base.saturating_mul(1 << (attempt - 1).min(16));
            log::debug!("{}: attempt {attempt} failed ({retryable}); retrying in {delay:?}", ep.name);
            std::thread::sleep(delay);
        }
    }

    /// Runs a batch with at most `ep.max_parallel` requests in flight.
    /// Identical queries are executed once. Output order follows input order.
    pub fn execute_batch(
        &self,
        ep: &EndpointConfig,
        queries: &[String],
    ) -> Vec<(String, Result<SparqlResultSet, GatewayError>)> {
        let mut unique: Vec<&str> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for q in queries {
            slot.entry(q.as_str()).or_insert_with(|| {
                unique.push(q);
                unique.len() - 1
            });
        }
        let results = crate::par::bounded_map(&unique, ep.max_parallel, |q| self.execute(ep, q));
        queries
            .iter()
            .map(|q| (q.clone(), results[slot[q.as_str()]].clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<HttpReply, TransportError>>>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<HttpReply, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Scripted {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
            })
        }
    }

    impl Transport for Scripted {
        fn post_query(&self, _: &EndpointConfig, _: &str) -> Result<HttpReply, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().pop().expect("script exhausted")
        }
    }

    const OK_BODY: &str = r#"{"head":{"vars":["name"]},"results":{"bindings":[{"name":{"type":"literal","value":"Ada Lovelace"}}]}}"#;

    fn ok() -> Result<HttpReply, TransportError> {
        Ok(HttpReply { status: 200, body: OK_BODY.into() })
    }

    fn status(s: u16) -> Result<HttpReply, TransportError> {
        Ok(HttpReply { status: s, body: b"boom".to_vec() })
    }

    fn ep(retries: u32) -> EndpointConfig {
        EndpointConfig {
            max_retries: retries,
            ..EndpointConfig::new("dblp", "https://dblp.example/sparql")
        }
    }

    fn gw(t: Arc<Scripted>) -> Gateway {
        Gateway::new(t, None).with_backoff_base(Duration::ZERO)
    }

    const Q: &str = "SELECT ?name WHERE { ?s ?p ?name }";

    #[test]
    fn select_shape_check() {
        assert!(is_select_query(Q));
        assert!(is_select_query(
            "PREFIX dblp: <https://dblp.org/rdf/schema#>\nprefix : <x:y>\n select * where {}"
        ));
        assert!(is_select_query("BASE <https://x.org/> SELECT DISTINCT ?a {}"));
        assert!(!is_select_query("ASK {}"));
        assert!(!is_select_query("CONSTRUCT {} WHERE {}"));
        assert!(!is_select_query("SELECTION"));
        assert!(!is_select_query(""));
    }

    #[test]
    fn malformed_query_never_hits_transport() {
        let t = Scripted::new(vec![]);
        assert_eq!(gw(t.clone()).execute(&ep(0), "DROP ALL"), Err(GatewayError::MalformedQuery));
        assert_eq!(t.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn retries_on_5xx_and_timeouts_then_succeeds() {
        let t = Scripted::new(vec![status(503), Err(TransportError::Timeout), status(429), ok()]);
        let rs = gw(t.clone()).execute(&ep(3), Q).unwrap();
        assert_eq!(rs.value(0, "name"), Some("Ada Lovelace"));
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let t = Scripted::new(vec![Err(TransportError::Timeout), Err(TransportError::Timeout)]);
        let err = gw(t.clone()).execute(&ep(1), Q).unwrap_err();
        assert!(matches!(err, GatewayError::Network { attempts: 2, .. }));

        let t = Scripted::new(vec![status(500)]);
        assert_eq!(gw(t).execute(&ep(0), Q), Err(GatewayError::Http { status: 500 }));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted::new(vec![status(400)]);
        let err = gw(t.clone()).execute(&ep(3), Q).unwrap_err();
        assert_eq!(err, GatewayError::QueryRejected("boom".into()));
        let t = Scripted::new(vec![status(404)]);
        assert_eq!(gw(t.clone()).execute(&ep(3), Q), Err(GatewayError::Http { status: 404 }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
        let err = Gateway::new(Arc::new(OfflineTransport), None)
            .execute(&ep(3), Q)
            .unwrap_err();
        assert!(matches!(err, GatewayError::Network { attempts: 1, .. }));
    }

    #[test]
    fn backoff_doubles() {
        let t = Scripted::new(vec![status(503), status(503), ok()]);
        let start = std::time::Instant::now();
        Gateway::new(t, None)
            .with_backoff_base(Duration::from_millis(20))
            .execute(&ep(2), Q)
            .unwrap();
        assert!(start.elapsed() >= Duration::from_millis(60));
    }

    #[test]
    fn bad_body_is_parse_error() {
        let t = Scripted::new(vec![Ok(HttpReply { status: 200, body: b"not json".to_vec() })]);
        assert!(matches!(gw(t).execute(&ep(0), Q), Err(GatewayError::Parse(_))));
    }

    #[test]
    fn cache_hit_skips_transport() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![ok()]);
        let g = Gateway::new(t.clone(), Some(QueryCache::new(dir.path())));
        let first = g.execute(&ep(0), Q).unwrap();
        let second = g.execute(&ep(0), Q).unwrap();
        assert_eq!(first, second);
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn batch_coalesces_and_isolates_errors() {
        let t = Scripted::new(vec![ok()]);
        let queries = vec![Q.to_owned(); 10];
        let out = gw(t.clone()).execute_batch(&ep(0), &queries);
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|(q, r)| q == Q && r.is_ok()));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);

        let t = Scripted::new(vec![ok()]);
        let out = gw(t).execute_batch(&ep(0), &[Q.to_owned(), "nonsense".to_owned()]);
        assert!(out[0].1.is_ok());
        assert_eq!(out[1].1, Err(GatewayError::MalformedQuery));

        assert!(gw(Scripted::new(vec![])).execute_batch(&ep(0), &[]).is_empty());
    }

    struct Gauge {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Transport for Gauge {
        fn post_query(&self, _: &EndpointConfig, _: &str) -> Result<HttpReply, TransportError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(15));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            ok()
        }
    }

    #[test]
    fn batch_respects_max_parallel_and_order() {
        let gauge = Arc::new(Gauge {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let queries: Vec<String> = (0..12).map(|i| format!("SELECT ?name WHERE {{ # {i}\n}}")).collect();
        let endpoint = EndpointConfig { max_parallel: 3, ..ep(0) };
        let out = Gateway::new(gauge.clone(), None).execute_batch(&endpoint, &queries);
        let got: Vec<_> = out.iter().map(|(q, _)| q.clone()).collect();
        assert_eq!(got, queries);
        let peak = gauge.peak.load(Ordering::SeqCst);
        assert!((1..=3).contains(&peak), "peak {peak}");
    }

    #[test]
    fn endpoint_validation() {
        assert!(ep(0).validate().is_ok());
        let bad = |f: fn(&mut EndpointConfig)| {
            let mut e = ep(0);
            f(&mut e);
            e.validate().is_err()
        };
        assert!(bad(|e| e.name = "a/b".into()));
        assert!(bad(|e| e.name = String::new()));
        assert!(bad(|e| e.url = "ftp://x.org".into()));
        assert!(bad(|e| e.timeout_secs = 0.0));
        assert!(bad(|e| e.max_parallel = 0));
        let parsed: EndpointConfig = serde_json::from_str(
            r#"{"name":"semopenalex","url":"https://semoa.skynet.coypu.org/sparql","timeout_s":60,"max_retries":3,"max_parallel":2}"#,
        )
        .unwrap();
        assert_eq!(parsed.timeout(), Duration::from_secs(60));
    }
}
