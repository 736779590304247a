//! SPARQL query families: author name (DBLP), author metrics (SemOpenAlex)
//! and affiliated institutions (SemOpenAlex), plus DBLP/SemOpenAlex name
//! reconciliation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::token_f1;
use crate::iri::is_absolute_iri;
use crate::sparql::is_select_query;
use crate::text::normalize;

/// Vocabulary used by the default templates. Schema drift on either graph
/// means editing this module only.
pub mod vocab {
    pub const DBLP_ENDPOINT: &str = "dblp";
    pub const SEMOPENALEX_ENDPOINT: &str = "semopenalex";

    pub const DBLP_SCHEMA: &str = "https://dblp.org/rdf/schema#";
    pub const SOA: &str = "https://semopenalex.org/ontology/";
    pub const FOAF: &str = "http://xmlns.com/foaf/0.1/";
    pub const ORG: &str = "http://www.w3.org/ns/org#";
    pub const DBO: &str = "https://dbpedia.org/ontology/";
    pub const SKOS: &str = "http://www.w3.org/2004/02/skos/core#";

    /// DBLP person label.
    pub const DBLP_NAME: &str = "dblp:primaryCreatorName";
    pub const SOA_AUTHOR_CLASS: &str = "soa:Author";
    pub const SOA_WORKS_COUNT: &str = "soa:worksCount";
    pub const SOA_CITED_BY_COUNT: &str = "soa:citedByCount";
    pub const SOA_H_INDEX: &str = "soa:hIndex";
    pub const SOA_I10_INDEX: &str = "soa:i10Index";
    pub const ORCID: &str = "dbo:orcidId";
    pub const AFFILIATION: &str = "org:memberOf";
    pub const NAME: &str = "foaf:name";
    pub const HOMEPAGE: &str = "foaf:homepage";
    pub const ACRONYM: &str = "skos:altLabel";
}

/// Result variables bound by the templates.
pub mod var {
    pub const NAME: &str = "name";
    pub const AUTHOR: &str = "author";
    pub const WORKS_COUNT: &str = "worksCount";
    pub const CITED_BY_COUNT: &str = "citedByCount";
    pub const H_INDEX: &str = "hIndex";
    pub const I10_INDEX: &str = "i10Index";
    pub const ORCID: &str = "orcid";
    pub const INSTITUTION: &str = "institution";
    pub const INSTITUTION_NAME: &str = "institutionName";
    pub const ACRONYM: &str = "acronym";
    pub const HOMEPAGE: &str = "homepage";
}

/// Minimum token F1 for a fuzzy name match.
pub const NAME_MATCH_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("{0:?} is not an absolute IRI")]
    InvalidUri(String),
    #[error("author identifier is empty")]
    EmptyIdentifier,
    #[error("template {id}: placeholders {found:?} do not match required {required:?}")]
    PlaceholderMismatch {
        id: &'static str,
        found: BTreeSet<String>,
        required: BTreeSet<String>,
    },
    #[error("template {0} does not instantiate to a SELECT query")]
    NotSelect(&'static str),
    #[error("unknown template id {0:?}")]
    UnknownTemplate(String),
    #[error("cannot read templates file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    AuthorName,
    AuthorInfo,
    AuthorInstitution,
}

impl TemplateId {
    pub const ALL: [TemplateId; 3] = [
        TemplateId::AuthorName,
        TemplateId::AuthorInfo,
        TemplateId::AuthorInstitution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::AuthorName => "author_name",
            TemplateId::AuthorInfo => "author_info",
            TemplateId::AuthorInstitution => "author_institution",
        }
    }

    fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::AuthorName | TemplateId::AuthorInstitution => &["author_uri"],
            TemplateId::AuthorInfo => &["author_pattern"],
        }
    }

    fn default_endpoint(self) -> &'static str {
        match self {
            TemplateId::AuthorName => vocab::DBLP_ENDPOINT,
            _ => vocab::SEMOPENALEX_ENDPOINT,
        }
    }
}

const AUTHOR_NAME: &str = "PREFIX dblp: <https://dblp.org/rdf/schema#>
SELECT DISTINCT ?name WHERE {
  <{author_uri}> dblp:primaryCreatorName ?name .
}";

const AUTHOR_INFO: &str = "PREFIX foaf: <http://xmlns.com/foaf/0.1/>
PREFIX soa: <https://semopenalex.org/ontology/>
PREFIX dbo: <https://dbpedia.org/ontology/>
SELECT DISTINCT ?author ?name ?worksCount ?citedByCount ?hIndex ?i10Index ?orcid WHERE {
  {author_pattern}
  ?author a soa:Author ;
          foaf:name ?name .
  OPTIONAL { ?author soa:worksCount ?worksCount }
  OPTIONAL { ?author soa:citedByCount ?citedByCount }
  OPTIONAL { ?author soa:hIndex ?hIndex }
  OPTIONAL { ?author soa:i10Index ?i10Index }
  OPTIONAL { ?author dbo:orcidId ?orcid }
}
ORDER BY ?author
LIMIT 50";

const AUTHOR_INSTITUTION: &str = "PREFIX foaf: <http://xmlns.com/foaf/0.1/>
PREFIX soa: <https://semopenalex.org/ontology/>
PREFIX org: <http://www.w3.org/ns/org#>
PREFIX skos: <http://www.w3.org/2004/02/skos/core#>
SELECT DISTINCT ?institution ?institutionName ?acronym ?homepage ?citedByCount WHERE {
  <{author_uri}> org:memberOf ?institution .
  ?institution foaf:name ?institutionName .
  OPTIONAL { ?institution skos:altLabel ?acronym }
  OPTIONAL { ?institution foaf:homepage ?homepage }
  OPTIONAL { ?institution soa:citedByCount ?citedByCount }
}
ORDER BY ?institutionName ?institution";

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTemplate {
    pub id: TemplateId,
    pub text: String,
    pub required_placeholders: BTreeSet<String>,
    pub target_endpoint: String,
}

impl QueryTemplate {
    pub fn new(id: TemplateId, text: impl Into<String>) -> Result<Self, QueryError> {
        let text = text.into();
        let found: BTreeSet<String> = placeholder_re()
            .captures_iter(&text)
            .map(|c| c[1].to_owned())
            .collect();
        let required: BTreeSet<String> = id.placeholders().iter().map(|s| s.to_string()).collect();
        if found != required {
            return Err(QueryError::PlaceholderMismatch {
                id: id.as_str(),
                found,
                required,
            });
        }
        let tpl = QueryTemplate {
            id,
            text,
            required_placeholders: required,
            target_endpoint: id.default_endpoint().to_owned(),
        };
        let probe = tpl.instantiate(&[(id.placeholders()[0], "<urn:probe>")]);
        if !is_select_query(&probe) {
            return Err(QueryError::NotSelect(id.as_str()));
        }
        Ok(tpl)
    }

    /// Substitutes every `{placeholder}`. Values are inserted verbatim; callers
    /// validate or escape them first.
    fn instantiate(&self, bindings: &[(&str, &str)]) -> String {
        placeholder_re()
            .replace_all(&self.text, |c: &regex::Captures| {
                bindings
                    .iter()
                    .find(|(k, _)| *k == &c[1])
                    .map(|(_, v)| v.to_string())
                    .unwrap_or_else(|| c[0].to_owned())
            })
            .into_owned()
    }
}

/// Escapes a string for a double-quoted SPARQL literal.
pub fn escape_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

/// Strips DBLP's homonym suffix ("Wei Chen 0001" -> "Wei Chen").
pub fn dblp_display_name(name: &str) -> &str {
    let trimmed = name.trim();
    match trimmed.rsplit_once(' ') {
        Some((head, tail)) if tail.len() == 4 && tail.bytes().all(|b| b.is_ascii_digit()) => head.trim_end(),
        _ => trimmed,
    }
}

/// The three query families with their current templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryForge {
    templates: BTreeMap<TemplateId, QueryTemplate>,
}

impl Default for QueryForge {
    fn default() -> Self {
        let templates = [
            (TemplateId::AuthorName, AUTHOR_NAME),
            (TemplateId::AuthorInfo, AUTHOR_INFO),
            (TemplateId::AuthorInstitution, AUTHOR_INSTITUTION),
        ]
        .into_iter()
        .map(|(id, text)| (id, QueryTemplate::new(id, text).expect("default template is valid")))
        .collect();
        QueryForge { templates }
    }
}

impl QueryForge {
    /// Defaults overridden by a JSON object mapping template id to query text.
    pub fn with_overrides_json(text: &str) -> Result<Self, QueryError> {
        let overrides: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| QueryError::Io(e.to_string()))?;
        let mut forge = QueryForge::default();
        for (key, body) in overrides {
            let id = TemplateId::ALL
                .into_iter()
                .find(|t| t.as_str() == key)
                .ok_or_else(|| QueryError::UnknownTemplate(key.clone()))?;
            forge.templates.insert(id, QueryTemplate::new(id, body)?);
        }
        Ok(forge)
    }

    pub fn load(path: &Path) -> Result<Self, QueryError> {
        let text = std::fs::read_to_string(path).map_err(|e| QueryError::Io(e.to_string()))?;
        Self::with_overrides_json(&text)
    }

    pub fn template(&self, id: TemplateId) -> &QueryTemplate {
        &self.templates[&id]
    }

    pub fn endpoint_for(&self, id: TemplateId) -> &str {
        &self.template(id).target_endpoint
    }

    fn with_uri(&self, id: TemplateId, uri: &str) -> Result<String, QueryError> {
        if !is_absolute_iri(uri) {
            return Err(QueryError::InvalidUri(uri.to_owned()));
        }
        Ok(self.template(id).instantiate(&[("author_uri", uri)]))
    }

    /// SELECT binding `?name` to the DBLP label of `author_uri`.
    pub fn author_name_query(&self, author_uri: &str) -> Result<String, QueryError> {
        self.with_uri(TemplateId::AuthorName, author_uri)
    }

    /// SELECT binding author metrics. An absolute IRI selects that author
    /// directly, anything else is matched as an exact `foaf:name`.
    pub fn author_info_query(&self, author_name_or_uri: &str) -> Result<String, QueryError> {
        let ident = author_name_or_uri.trim();
        if ident.is_empty() {
            return Err(QueryError::EmptyIdentifier);
        }
        let pattern = if is_absolute_iri(ident) {
            format!("VALUES ?author {{ <{ident}> }}")
        } else if ident.contains(':') && !ident.contains(' ') {
            // looks like an IRI attempt, not a person name
            return Err(QueryError::InvalidUri(ident.to_owned()));
        } else {
            format!("?author {} \"{}\" .", vocab::NAME, escape_literal(ident))
        };
        Ok(self
            .template(TemplateId::AuthorInfo)
            .instantiate(&[("author_pattern", &pattern)]))
    }

    /// SELECT binding the affiliated institutions of a SemOpenAlex author.
    pub fn institution_query(&self, author_uri: &str) -> Result<String, QueryError> {
        self.with_uri(TemplateId::AuthorInstitution, author_uri)
    }
}

/// Picks the SemOpenAlex name matching a DBLP name: exact normalized-token
/// equality first, else the best token F1 at or above
/// [`NAME_MATCH_THRESHOLD`] (earliest candidate on ties).
pub fn reconcile_author_names<'a, S: AsRef<str>>(dblp_name: &str, semoa_names: &'a [S]) -> Option<&'a str> {
    let wanted = normalize(dblp_display_name(dblp_name));
    if let Some(exact) = semoa_names.iter().find(|c| normalize(c.as_ref()) == wanted) {
        return Some(exact.as_ref());
    }
    let wanted = wanted.render();
    let mut best: Option<(&str, f64)> = None;
    for c in semoa_names {
        let f = token_f1(&wanted, c.as_ref());
        if f >= NAME_MATCH_THRESHOLD && best.is_none_or(|(_, b)| f > b) {
            best = Some((c.as_ref(), f));
        }
    }
    best.map(|(name, _)| name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn name_query_substitutes_uri() {
        let q = QueryForge::default()
            .author_name_query("https://dblp.org/pid/11/1112")
            .unwrap();
        assert!(q.contains("<https://dblp.org/pid/11/1112>"));
        assert!(q.contains("?name"));
        assert!(!q.contains("{author_uri}"));
        assert!(is_select_query(&q));
    }

    #[test]
    fn invalid_uris_rejected() {
        let f = QueryForge::default();
        assert!(matches!(
            f.author_name_query("https://dblp.org/pid/1>"),
            Err(QueryError::InvalidUri(_))
        ));
        assert!(matches!(f.institution_query("not a uri"), Err(QueryError::InvalidUri(_))));
        assert_eq!(f.author_info_query("  "), Err(QueryError::EmptyIdentifier));
        assert!(matches!(f.author_info_query("https:>x"), Err(QueryError::InvalidUri(_))));
    }

    #[test]
    fn info_query_projects_all_metrics() {
        let f = QueryForge::default();
        for ident in ["Jane Roe", "https://semopenalex.org/author/A1"] {
            let q = f.author_info_query(ident).unwrap();
            for v in ["?worksCount", "?citedByCount", "?hIndex", "?i10Index", "?orcid"] {
                assert!(q.contains(v), "{v} missing");
            }
            assert!(is_select_query(&q));
            assert!(!q.contains("{author_pattern}"));
        }
        let q = f.author_info_query("O\"Brien \\ Jr").unwrap();
        assert!(q.contains(r#"foaf:name "O\"Brien \\ Jr" ."#));
        assert!(f
            .author_info_query("https://semopenalex.org/author/A1")
            .unwrap()
            .contains("VALUES ?author { <https://semopenalex.org/author/A1> }"));
    }

    #[test]
    fn institution_query_is_fully_instantiated() {
        let q = QueryForge::default()
            .institution_query("https://semopenalex.org/author/A1")
            .unwrap();
        assert!(!q.contains("{author_uri}"));
        assert!(q.contains("?institutionName"));
        assert!(q.contains("<https://semopenalex.org/author/A1> org:memberOf"));
    }

    #[test]
    fn template_placeholder_contract() {
        assert!(matches!(
            QueryTemplate::new(TemplateId::AuthorName, "SELECT ?name WHERE { <{author_uri}> ?p ?name . {extra} }"),
            Err(QueryError::PlaceholderMismatch { .. })
        ));
        assert!(matches!(
            QueryTemplate::new(TemplateId::AuthorName, "SELECT ?name WHERE { ?s ?p ?name }"),
            Err(QueryError::PlaceholderMismatch { .. })
        ));
        assert_eq!(
            QueryTemplate::new(TemplateId::AuthorName, "ASK { <{author_uri}> ?p ?o }"),
            Err(QueryError::NotSelect("author_name"))
        );
    }

    #[test]
    fn overrides_replace_one_template() {
        let json = r#"{"author_name": "SELECT ?name WHERE { <{author_uri}> <http://www.w3.org/2000/01/rdf-schema#label> ?name }"}"#;
        let forge = QueryForge::with_overrides_json(json).unwrap();
        assert!(forge.author_name_query("https://dblp.org/pid/1/1").unwrap().contains("rdf-schema#label"));
        assert_eq!(forge.template(TemplateId::AuthorInfo), QueryForge::default().template(TemplateId::AuthorInfo));
        assert_eq!(forge.endpoint_for(TemplateId::AuthorName), "dblp");
        assert!(matches!(
            QueryForge::with_overrides_json(r#"{"bogus": "SELECT * {}"}"#),
            Err(QueryError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn distinct_uris_distinct_queries() {
        let f = QueryForge::default();
        let a = f.author_name_query("https://dblp.org/pid/1/1").unwrap();
        let b = f.author_name_query("https://dblp.org/pid/1/11").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn homonym_suffix() {
        assert_eq!(dblp_display_name("Wei Chen 0001"), "Wei Chen");
        assert_eq!(dblp_display_name("Wei Chen"), "Wei Chen");
        assert_eq!(dblp_display_name("Agent 47"), "Agent 47");
    }

    #[test]
    fn reconciliation() {
        assert_eq!(reconcile_author_names("Jane Roe", &["Jane Roe", "J. Smith"]), Some("Jane Roe"));
        // tokens {jane, p, roe} vs {jane, roe}: 2*2/(3+2) = 0.8
        assert_eq!(reconcile_author_names("Jane P. Roe", &["Jane Roe"]), Some("Jane Roe"));
        assert_eq!(reconcile_author_names("Jane Roe", &["Wei Chen"]), None);
        assert_eq!(reconcile_author_names("Wei Chen 0002", &["Wei Chen"]), Some("Wei Chen"));
        // exact beats a higher-ranked fuzzy candidate
        assert_eq!(
            reconcile_author_names("jane roe", &["Jane X. Roe", "JANE ROE"]),
            Some("JANE ROE")
        );
        let none: [&str; 0] = [];
        assert_eq!(reconcile_author_names("Jane Roe", &none), None);
    }

    #[test]
    fn reconciliation_order_independent_with_unique_max() {
        let a = ["Jane Q. Roe Smith", "Jane Q. Roe", "Wei Chen"];
        let b = ["Wei Chen", "Jane Q. Roe", "Jane Q. Roe Smith"];
        assert_eq!(reconcile_author_names("Jane Roe", &a), reconcile_author_names("Jane Roe", &b));
    }
}
