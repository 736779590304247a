//! HTTP transports for SPARQL protocol requests.
//!
//! [`HttpTransport`] talks to live endpoints. [`ReplayTransport`] serves
//! recorded responses from a fixture directory laid out like the cache.
//! [`CountingTransport`] wraps any transport and counts calls, which is how
//! tests assert that a run stayed offline.

use std::fmt;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use super::cache::QueryCacheKey;
use super::EndpointConfig;

pub const SPARQL_RESULTS_JSON: &str = "application/sparql-results+json";

/// Largest response body accepted from an endpoint.
const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    /// Not retried: the transport refuses to touch the network at all.
    #[error("network access disabled: {0}")]
    Offline(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, TransportError::Offline(_))
    }
}

pub trait Transport: Send + Sync {
    /// POSTs `query` form-encoded to the endpoint and returns the raw reply.
    fn post_query(&self, endpoint: &EndpointConfig, query: &str) -> Result<HttpReply, TransportError>;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn post_query(&self, endpoint: &EndpointConfig, query: &str) -> Result<HttpReply, TransportError> {
        (**self).post_query(endpoint, query)
    }
}

/// Live HTTP via `ureq`.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new() -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .user_agent(concat!("scholqa/", env!("CARGO_PKG_VERSION")))
            .build();
        HttpTransport {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpTransport").finish_non_exhaustive()
    }
}

pub(crate) fn map_ureq_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::Io(ref io) if io.kind() == io::ErrorKind::TimedOut => TransportError::Timeout,
        other => TransportError::Connect(other.to_string()),
    }
}

impl Transport for HttpTransport {
    fn post_query(&self, endpoint: &EndpointConfig, query: &str) -> Result<HttpReply, TransportError> {
        let mut resp = self
            .agent
            .post(&endpoint.url)
            .config()
            .timeout_global(Some(endpoint.timeout()))
            .build()
            .header("Accept", SPARQL_RESULTS_JSON)
            .send_form([("query", query)])
            .map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_vec()
            .map_err(map_ureq_error)?;
        Ok(HttpReply { status, body })
    }
}

/// Serves recorded bodies from `<dir>/<endpoint>/<hash>.json`; unrecorded
/// queries get a 404.
#[derive(Debug, Clone)]
pub struct ReplayTransport {
    dir: PathBuf,
}

impl ReplayTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayTransport { dir: dir.into() }
    }
}

impl Transport for ReplayTransport {
    fn post_query(&self, endpoint: &EndpointConfig, query: &str) -> Result<HttpReply, TransportError> {
        let key = QueryCacheKey::new(&endpoint.name, query);
        let path = self
            .dir
            .join(&key.endpoint_name)
            .join(format!("{}.json", key.hex()));
        match fs::read(&path) {
            Ok(body) => Ok(HttpReply { status: 200, body }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(HttpReply {
                status: 404,
                body: format!("no recording for {}", path.display()).into_bytes(),
            }),
            Err(e) => Err(TransportError::Connect(e.to_string())),
        }
    }
}

/// Refuses every request.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn post_query(&self, endpoint: &EndpointConfig, _query: &str) -> Result<HttpReply, TransportError> {
        Err(TransportError::Offline(endpoint.name.clone()))
    }
}

/// Counts calls that reach the inner transport.
#[derive(Debug, Default)]
pub struct CountingTransport<T> {
    inner: T,
    calls: AtomicUsize,
}

impl<T> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        CountingTransport {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn post_query(&self, endpoint: &EndpointConfig, query: &str) -> Result<HttpReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.post_query(endpoint, query)
    }
}

/// Serves recorded responses first and sends only unrecorded queries to
/// `network`.
pub struct ReplayFirst {
    replay: ReplayTransport,
    network: std::sync::Arc<dyn Transport>,
}

impl ReplayFirst {
    pub fn new(replay: ReplayTransport, network: std::sync::Arc<dyn Transport>) -> Self {
        ReplayFirst { replay, network }
    }
}

impl Transport for ReplayFirst {
    fn post_query(&self, endpoint: &EndpointConfig, query: &str) -> Result<HttpReply, TransportError> {
        match self.replay.post_query(endpoint, query)? {
            reply if reply.status == 404 => self.network.post_query(endpoint, query),
            reply => Ok(reply),
        }
    }
}
