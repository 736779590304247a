//! On-disk response cache, one file per (endpoint, query) under
//! `<dir>/<endpoint>/<sha256-hex>.json`. The file holds the raw response body,
//! so a populated cache directory doubles as a fixture bundle.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::results::{parse_results_json, ParseError, SparqlResultSet};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("corrupt cache entry {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("cache io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryCacheKey {
    pub endpoint_name: String,
    pub query_hash: [u8; 32],
}

impl QueryCacheKey {
    pub fn new(endpoint_name: &str, query: &str) -> Self {
        QueryCacheKey {
            endpoint_name: endpoint_name.to_owned(),
            query_hash: Sha256::digest(query.as_bytes()).into(),
        }
    }

    pub fn hex(&self) -> String {
        hex::encode(self.query_hash)
    }
}

#[derive(Debug, Clone)]
pub struct QueryCache {
    dir: PathBuf,
}

impl QueryCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        QueryCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &QueryCacheKey) -> PathBuf {
        self.dir
            .join(&key.endpoint_name)
            .join(format!("{}.json", key.hex()))
    }

    pub fn contains(&self, key: &QueryCacheKey) -> bool {
        self.path_for(key).is_file()
    }

    /// Looks up a stored result. A file that no longer parses is evicted and
    /// reported as [`CacheError::Corrupt`]; callers treat that as a miss.
    pub fn try_lookup(&self, key: &QueryCacheKey) -> Result<Option<SparqlResultSet>, CacheError> {
        let path = self.path_for(key);
        let body = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        match parse_results_json(&body) {
            Ok(rs) => Ok(Some(rs)),
            Err(source) => {
                if let Err(e) = fs::remove_file(&path) {
                    log::warn!("could not evict {}: {e}", path.display());
                }
                Err(CacheError::Corrupt { path, source })
            }
        }
    }

    /// Like [`try_lookup`](Self::try_lookup) but folds every failure into a miss.
    pub fn lookup(&self, key: &QueryCacheKey) -> Option<SparqlResultSet> {
        match self.try_lookup(key) {
            Ok(hit) => hit,
            Err(e) => {
                log::warn!("{e}; treating as cache miss");
                None
            }
        }
    }

    /// Atomically stores a raw response body (write to a temp file, then rename).
    pub fn store(&self, key: &QueryCacheKey, body: &[u8]) -> Result<(), CacheError> {
        let path = self.path_for(key);
        let parent = path.parent().expect("cache path has a parent");
        let io_err = |source| CacheError::Io { path: path.clone(), source };
        fs::create_dir_all(parent).map_err(io_err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io_err)?;
        tmp.write_all(body).map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        Ok(())
    }

    pub fn store_result(&self, key: &QueryCacheKey, rs: &SparqlResultSet) -> Result<(), CacheError> {
        self.store(key, rs.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::results::{Binding, Row};
    use proptest::prelude::*;

    fn sample() -> SparqlResultSet {
        let mut row = Row::new();
        row.insert("name".into(), Binding::literal("Ada Lovelace"));
        SparqlResultSet::new(vec!["name".into()], vec![row]).unwrap()
    }

    #[test]
    fn key_is_stable_and_content_addressed() {
        let a = QueryCacheKey::new("dblp", "SELECT ?x WHERE {}");
        assert_eq!(a, QueryCacheKey::new("dblp", "SELECT ?x WHERE {}"));
        assert_ne!(a, QueryCacheKey::new("dblp", "SELECT ?y WHERE {}"));
        assert_ne!(a, QueryCacheKey::new("semopenalex", "SELECT ?x WHERE {}"));
        assert_eq!(a.hex().len(), 64);
    }

    #[test]
    fn store_then_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let cache = QueryCache::new(dir.path());
        let key = QueryCacheKey::new("dblp", "SELECT ?name WHERE {}");
        assert!(cache.lookup(&key).is_none());
        cache.store_result(&key, &sample()).unwrap();
        assert_eq!(cache.lookup(&key), Some(sample()));
        assert!(cache.path_for(&key).starts_with(dir.path().join("dblp")));
    }

    #[test]
    fn truncated_entry_is_evicted() {
        let dir = tempfile::tempdir().unwrap();
        let cache = QueryCache::new(dir.path());
        let key = QueryCacheKey::new("dblp", "SELECT ?name WHERE {}");
        let body = sample().to_json();
        cache.store(&key, &body.as_bytes()[..body.len() / 2]).unwrap();
        assert!(matches!(cache.try_lookup(&key), Err(CacheError::Corrupt { .. })));
        assert!(!cache.contains(&key));
        assert!(matches!(cache.try_lookup(&key), Ok(None)));
    }

    fn arb_binding() -> impl Strategy<Value = Binding> {
        prop_oneof![
            "[a-z]{1,8}".prop_map(|s| Binding::uri(format!("https://example.org/{s}"))),
            "\\PC{0,12}".prop_map(Binding::literal),
            ("[0-9]{1,6}").prop_map(|s| Binding::typed(s, "http://www.w3.org/2001/XMLSchema#integer")),
            ("\\PC{0,8}", "[a-z]{2}").prop_map(|(v, l)| Binding {
                language: Some(l),
                ..Binding::literal(v)
            }),
            "[a-z0-9]{1,6}".prop_map(|s| Binding {
                kind: crate::sparql::results::BindingKind::Blank,
                value: s,
                datatype: None,
                language: None,
            }),
        ]
    }

    fn arb_result_set() -> impl Strategy<Value = SparqlResultSet> {
        proptest::collection::btree_set("[a-zA-Z][a-zA-Z0-9_]{0,6}", 1..4).prop_flat_map(|vars| {
            let vars: Vec<String> = vars.into_iter().collect();
            let row = proptest::collection::vec(proptest::option::of(arb_binding()), vars.len())
                .prop_map({
                    let vars = vars.clone();
                    move |cells| {
                        vars.iter()
                            .cloned()
                            .zip(cells)
                            .filter_map(|(v, c)| c.map(|c| (v, c)))
                            .collect::<Row>()
                    }
                });
            proptest::collection::vec(row, 0..5)
                .prop_map(move |rows| SparqlResultSet::new(vars.clone(), rows).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_randomized(rs in arb_result_set(), query in "\\PC{1,30}") {
            let dir = tempfile::tempdir().unwrap();
            let cache = QueryCache::new(dir.path());
            let key = QueryCacheKey::new("semopenalex", &query);
            cache.store_result(&key, &rs).unwrap();
            prop_assert_eq!(cache.lookup(&key), Some(rs));
        }
    }
}
