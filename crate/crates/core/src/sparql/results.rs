//! W3C `application/sparql-results+json` for SELECT results.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::iri::is_absolute_iri;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed SPARQL JSON results: {0}")]
pub struct ParseError(pub String);

fn fail<T>(msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BindingKind {
    Uri,
    Literal,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Binding {
    pub kind: BindingKind,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datatype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

impl Binding {
    pub fn uri(value: impl Into<String>) -> Self {
        Binding {
            kind: BindingKind::Uri,
            value: value.into(),
            datatype: None,
            language: None,
        }
    }

    pub fn literal(value: impl Into<String>) -> Self {
        Binding {
            kind: BindingKind::Literal,
            value: value.into(),
            datatype: None,
            language: None,
        }
    }

    pub fn typed(value: impl Into<String>, datatype: impl Into<String>) -> Self {
        Binding {
            datatype: Some(datatype.into()),
            ..Binding::literal(value)
        }
    }
}

pub type Row = BTreeMap<String, Binding>;

/// Tabular result of a SELECT query. Unbound variables are absent from a row.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SparqlResultSet {
    pub variables: Vec<String>,
    pub rows: Vec<Row>,
}

impl SparqlResultSet {
    pub fn new(variables: Vec<String>, rows: Vec<Row>) -> Result<Self, ParseError> {
        let rs = SparqlResultSet { variables, rows };
        rs.check()?;
        Ok(rs)
    }

    fn check(&self) -> Result<(), ParseError> {
        let mut seen = HashSet::new();
        for v in &self.variables {
            if v.is_empty() || !seen.insert(v.as_str()) {
                return fail(format!("bad or duplicate variable {v:?}"));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            for (var, b) in row {
                if !seen.contains(var.as_str()) {
                    return fail(format!("row {i} binds undeclared variable {var:?}"));
                }
                if b.kind == BindingKind::Uri && !is_absolute_iri(&b.value) {
                    return fail(format!("row {i}: {var} is not an absolute IRI"));
                }
                if b.datatype.as_deref().is_some_and(|d| !is_absolute_iri(d)) {
                    return fail(format!("row {i}: {var} has a malformed datatype"));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Value of `var` in row `row`, if bound.
    pub fn value(&self, row: usize, var: &str) -> Option<&str> {
        self.rows.get(row)?.get(var).map(|b| b.value.as_str())
    }

    /// Bound values of `var`, in row order.
    pub fn column(&self, var: &str) -> impl Iterator<Item = &str> + '_ {
        let var = var.to_owned();
        self.rows
            .iter()
            .filter_map(move |r| r.get(&var).map(|b| b.value.as_str()))
    }

    /// Serializes to the standard JSON results format.
    pub fn to_json(&self) -> String {
        let bindings: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = row
                    .iter()
                    .map(|(var, b)| (var.clone(), binding_to_json(b)))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let doc = serde_json::json!({
            "head": { "vars": self.variables },
            "results": { "bindings": bindings },
        });
        doc.to_string()
    }
}

fn binding_to_json(b: &Binding) -> Value {
    let mut obj = Map::new();
    let kind = match b.kind {
        BindingKind::Uri => "uri",
        BindingKind::Literal => "literal",
        BindingKind::Blank => "bnode",
    };
    obj.insert("type".into(), kind.into());
    obj.insert("value".into(), b.value.clone().into());
    if let Some(lang) = &b.language {
        obj.insert("xml:lang".into(), lang.clone().into());
    }
    if let Some(dt) = &b.datatype {
        obj.insert("datatype".into(), dt.clone().into());
    }
    Value::Object(obj)
}

fn get_str<'a>(obj: &'a Map<String, Value>, key: &str, ctx: &str) -> Result<Option<&'a str>, ParseError> {
    match obj.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => fail(format!("{ctx}: {key:?} must be a string")),
    }
}

fn parse_binding(v: &Value, ctx: &str) -> Result<Binding, ParseError> {
    let Value::Object(obj) = v else {
        return fail(format!("{ctx}: binding must be an object"));
    };
    let kind = match get_str(obj, "type", ctx)? {
        Some("uri") => BindingKind::Uri,
        Some("literal") | Some("typed-literal") => BindingKind::Literal,
        Some("bnode") => BindingKind::Blank,
        Some(other) => return fail(format!("{ctx}: unsupported term type {other:?}")),
        None => return fail(format!("{ctx}: missing \"type\"")),
    };
    let Some(value) = get_str(obj, "value", ctx)? else {
        return fail(format!("{ctx}: missing \"value\""));
    };
    let language = get_str(obj, "xml:lang", ctx)?.map(str::to_owned);
    let datatype = get_str(obj, "datatype", ctx)?.map(str::to_owned);
    if kind != BindingKind::Literal && (language.is_some() || datatype.is_some()) {
        return fail(format!("{ctx}: only literals carry a language or datatype"));
    }
    Ok(Binding {
        kind,
        value: value.to_owned(),
        datatype,
        language,
    })
}

/// Parses a SELECT result document. Every input either yields a valid
/// result set or a [`ParseError`].
pub fn parse_results_json(body: &[u8]) -> Result<SparqlResultSet, ParseError> {
    let doc: Value = serde_json::from_slice(body).map_err(|e| ParseError(e.to_string()))?;
    let Value::Object(top) = doc else {
        return fail("document must be an object");
    };
    if top.contains_key("boolean") {
        return fail("ASK results are not supported");
    }
    let Some(Value::Object(head)) = top.get("head") else {
        return fail("missing \"head\" object");
    };
    let Some(Value::Array(vars)) = head.get("vars") else {
        return fail("missing \"head.vars\" array");
    };
    let variables = vars
        .iter()
        .map(|v| match v {
            Value::String(s) => Ok(s.clone()),
            _ => fail("variable names must be strings"),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let Some(Value::Object(results)) = top.get("results") else {
        return fail("missing \"results\" object");
    };
    let Some(Value::Array(bindings)) = results.get("bindings") else {
        return fail("missing \"results.bindings\" array");
    };
    let mut rows = Vec::with_capacity(bindings.len());
    for (i, b) in bindings.iter().enumerate() {
        let Value::Object(obj) = b else {
            return fail(format!("row {i} must be an object"));
        };
        let mut row = Row::new();
        for (var, term) in obj {
            row.insert(var.clone(), parse_binding(term, &format!("row {i}, {var}"))?);
        }
        rows.push(row);
    }
    SparqlResultSet::new(variables, rows)
}
