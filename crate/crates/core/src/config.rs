//! Pipeline configuration: one JSON document, every value overridable by a
//! command-line flag. Relative paths in the file resolve against the file's
//! directory; paths given as flags resolve against the working directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::QaBackend;
use crate::query::{QueryForge, TemplateId};
use crate::router::KeywordLexicon;
use crate::sparql::EndpointConfig;

pub const DEFAULT_QA_TIMEOUT_SECS: f64 = 30.0;
pub const DEFAULT_QA_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Syntax { path: PathBuf, source: serde_json::Error },
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("no {0} configured")]
    Unset(&'static str),
    #[error(transparent)]
    Endpoint(#[from] crate::sparql::EndpointConfigError),
    #[error("endpoint {0:?} is configured twice")]
    DuplicateEndpoint(String),
    #[error("template {template} targets endpoint {endpoint:?}, which is not configured")]
    UnknownEndpoint { template: &'static str, endpoint: String },
    #[error("lexicon: {0}")]
    Lexicon(#[from] crate::router::LexiconError),
    #[error("templates: {0}")]
    Templates(#[from] crate::query::QueryError),
    #[error("remote QA backend needs an http(s) url, got {0:?}")]
    BadBackendUrl(String),
    #[error("cannot create {path}: {source}")]
    CreateDir { path: PathBuf, source: std::io::Error },
    #[error("unknown backend kind {0:?} (expected stub or remote)")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Stub,
    Remote,
}

impl FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stub" => Ok(BackendKind::Stub),
            "remote" => Ok(BackendKind::Remote),
            other => Err(ConfigError::UnknownBackend(other.to_owned())),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Stub => "stub",
            BackendKind::Remote => "remote",
        })
    }
}

fn default_qa_timeout() -> f64 {
    DEFAULT_QA_TIMEOUT_SECS
}

fn default_in_flight() -> usize {
    DEFAULT_QA_IN_FLIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaBackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default = "default_qa_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl Default for QaBackendConfig {
    fn default() -> Self {
        QaBackendConfig {
            kind: BackendKind::Stub,
            url: None,
            timeout_s: DEFAULT_QA_TIMEOUT_SECS,
            max_in_flight: DEFAULT_QA_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    endpoints: Option<Vec<EndpointConfig>>,
    lexicon: Option<PathBuf>,
    templates: Option<PathBuf>,
    qa_backend: Option<QaBackendConfig>,
    cache_dir: Option<PathBuf>,
    replay_dir: Option<PathBuf>,
    questions: Option<PathBuf>,
    gold: Option<PathBuf>,
    output: Option<PathBuf>,
    work_dir: Option<PathBuf>,
}

/// Command-line values that replace config file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub cache_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub qa_url: Option<String>,
    pub gold: Option<PathBuf>,
    pub replay_dir: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub endpoints: Vec<EndpointConfig>,
    pub lexicon: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub qa_backend: QaBackendConfig,
    /// Disk cache of endpoint responses; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Read-only recorded responses served before any network request.
    pub replay_dir: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    /// The answers file.
    pub output: PathBuf,
    /// Directory holding the intermediate stage files.
    pub work_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            endpoints: default_endpoints(),
            lexicon: None,
            templates: None,
            qa_backend: QaBackendConfig::default(),
            cache_dir: Some(PathBuf::from("cache")),
            replay_dir: None,
            questions: None,
            gold: None,
            output: PathBuf::from("answers.jsonl"),
            work_dir: PathBuf::from("work"),
        }
    }
}

/// The public DBLP and SemOpenAlex SPARQL endpoints.
pub fn default_endpoints() -> Vec<EndpointConfig> {
    vec![
        EndpointConfig::new(crate::query::vocab::DBLP_ENDPOINT, "https://sparql.dblp.org/sparql"),
        EndpointConfig::new(crate::query::vocab::SEMOPENALEX_ENDPOINT, "https://semopenalex.org/sparql"),
    ]
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Parses a config document; relative paths are joined onto `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|source| ConfigError::Syntax {
            path: origin.to_owned(),
            source,
        })?;
        let d = PipelineConfig::default();
        let r = |p: PathBuf| resolve(base_dir, p);
        Ok(PipelineConfig {
            endpoints: raw.endpoints.unwrap_or(d.endpoints),
            lexicon: raw.lexicon.map(r),
            templates: raw.templates.map(r),
            qa_backend: raw.qa_backend.unwrap_or_default(),
            cache_dir: raw.cache_dir.or(d.cache_dir).map(r),
            replay_dir: raw.replay_dir.map(r),
            questions: raw.questions.map(r),
            gold: raw.gold.map(r),
            output: r(raw.output.unwrap_or(d.output)),
            work_dir: r(raw.work_dir.unwrap_or(d.work_dir)),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base, path)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(p) = o.cache_dir {
            self.cache_dir = Some(p);
        }
        if let Some(k) = o.backend {
            self.qa_backend.kind = k;
        }
        if let Some(u) = o.qa_url {
            self.qa_backend.url = Some(u);
        }
        if let Some(p) = o.gold {
            self.gold = Some(p);
        }
        if let Some(p) = o.replay_dir {
            self.replay_dir = Some(p);
        }
        if let Some(p) = o.questions {
            self.questions = Some(p);
        }
        if let Some(p) = o.output {
            self.output = p;
        }
        if let Some(p) = o.work_dir {
            self.work_dir = p;
        }
    }

    pub fn endpoint(&self, name: &str) -> Option<&EndpointConfig> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    pub fn lexicon(&self) -> Result<KeywordLexicon, ConfigError> {
        match &self.lexicon {
            Some(p) => Ok(KeywordLexicon::load(p)?),
            None => Ok(KeywordLexicon::default()),
        }
    }

    pub fn forge(&self) -> Result<QueryForge, ConfigError> {
        match &self.templates {
            Some(p) => Ok(QueryForge::load(p)?),
            None => Ok(QueryForge::default()),
        }
    }

    pub fn qa(&self) -> Result<QaBackend, ConfigError> {
        match self.qa_backend.kind {
            BackendKind::Stub => Ok(QaBackend::Stub),
            BackendKind::Remote => {
                let url = self.qa_backend.url.clone().unwrap_or_default();
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    return Err(ConfigError::BadBackendUrl(url));
                }
                Ok(QaBackend::remote(&url, Duration::from_secs_f64(self.qa_backend.timeout_s.max(0.001))))
            }
        }
    }

    pub fn questions_path(&self) -> Result<&Path, ConfigError> {
        self.questions.as_deref().ok_or(ConfigError::Unset("questions file"))
    }

    /// Checks everything a full run needs, without touching the network:
    /// endpoints, lexicon, templates, backend, input paths, and that the
    /// cache and work directories can be created.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut names = HashSet::new();
        for ep in &self.endpoints {
            ep.validate()?;
            if !names.insert(ep.name.as_str()) {
                return Err(ConfigError::DuplicateEndpoint(ep.name.clone()));
            }
        }
        self.lexicon()?;
        let forge = self.forge()?;
        for id in TemplateId::ALL {
            let ep = forge.endpoint_for(id);
            if self.endpoint(ep).is_none() {
                return Err(ConfigError::UnknownEndpoint {
                    template: id.as_str(),
                    endpoint: ep.to_owned(),
                });
            }
        }
        self.qa()?;
        let must_exist = [
            ("questions file", self.questions.as_ref()),
            ("gold file", self.gold.as_ref()),
            ("replay directory", self.replay_dir.as_ref()),
        ];
        for (what, path) in must_exist {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::MissingPath { what, path: p.clone() });
                }
            }
        }
        self.questions_path()?;
        for dir in self.cache_dir.iter().chain([&self.work_dir]) {
            std::fs::create_dir_all(dir).map_err(|source| ConfigError::CreateDir {
                path: dir.clone(),
                source,
            })?;
        }
        Ok(())
    }
}
