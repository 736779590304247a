//! Regenerates `fixtures/recorded` from `fixtures/world.json`.
//!
//! The world file describes a tiny DBLP and SemOpenAlex. For every query
//! the pipeline issues for those authors this writes the response a
//! conforming endpoint would return, in the cache layout.
//!
//!     cargo run -p scholqa-core --example seed_fixtures -- fixtures/world.json fixtures/recorded

use std::collections::BTreeMap;
use std::path::PathBuf;

use scholqa_core::query::{dblp_display_name, var, QueryForge, TemplateId};
use scholqa_core::sparql::{Binding, QueryCache, QueryCacheKey, Row, SparqlResultSet};
use serde::Deserialize;

const XSD_INTEGER: &str = "http://www.w3.org/2001/XMLSchema#integer";

#[derive(Deserialize)]
struct World {
    dblp: Vec<DblpAuthor>,
    authors: Vec<SoaAuthor>,
    institutions: Vec<Institution>,
}

#[derive(Deserialize)]
struct DblpAuthor {
    uri: String,
    name: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct SoaAuthor {
    uri: String,
    names: Vec<String>,
    works_count: u64,
    cited_by_count: u64,
    h_index: u64,
    i10_index: u64,
    orcid: Option<String>,
    institutions: Vec<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Institution {
    uri: String,
    name: String,
    acronym: Option<String>,
    homepage: Option<String>,
    cited_by_count: Option<u64>,
}

fn vars(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn int(n: u64) -> Binding {
    Binding::typed(n.to_string(), XSD_INTEGER)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let world_path = PathBuf::from(args.next().unwrap_or_else(|| "fixtures/world.json".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "fixtures/recorded".into()));
    let world: World = serde_json::from_str(&std::fs::read_to_string(&world_path)?)?;
    let forge = QueryForge::default();
    let cache = QueryCache::new(&out);
    let mut index = Vec::new();
    let mut store = |id: TemplateId, query: String, rs: SparqlResultSet| -> Result<(), Box<dyn std::error::Error>> {
        let key = QueryCacheKey::new(forge.endpoint_for(id), &query);
        cache.store(&key, rs.to_json().as_bytes())?;
        index.push(serde_json::json!({"endpoint": key.endpoint_name, "hash": key.hex(), "template": id.as_str(), "query": query}));
        Ok(())
    };

    for a in &world.dblp {
        let row: Row = [(var::NAME.to_string(), Binding::literal(&a.name))].into();
        let rs = SparqlResultSet::new(vars(&[var::NAME]), vec![row])?;
        store(TemplateId::AuthorName, forge.author_name_query(&a.uri)?, rs)?;
    }

    let mut by_author: Vec<&SoaAuthor> = world.authors.iter().collect();
    by_author.sort_by(|a, b| a.uri.cmp(&b.uri));
    let mut display: Vec<&str> = world.dblp.iter().map(|a| dblp_display_name(&a.name)).collect();
    display.dedup();
    for name in display {
        let mut rows = Vec::new();
        for a in by_author.iter().filter(|a| a.names.iter().any(|n| n == name)) {
            for n in &a.names {
                let mut row: Row = BTreeMap::new();
                row.insert(var::AUTHOR.into(), Binding::uri(&a.uri));
                row.insert(var::NAME.into(), Binding::literal(n));
                row.insert(var::WORKS_COUNT.into(), int(a.works_count));
                row.insert(var::CITED_BY_COUNT.into(), int(a.cited_by_count));
                row.insert(var::H_INDEX.into(), int(a.h_index));
                row.insert(var::I10_INDEX.into(), int(a.i10_index));
                if let Some(o) = &a.orcid {
                    row.insert(var::ORCID.into(), Binding::literal(o));
                }
                rows.push(row);
            }
        }
        let v = vars(&[var::AUTHOR, var::NAME, var::WORKS_COUNT, var::CITED_BY_COUNT, var::H_INDEX, var::I10_INDEX, var::ORCID]);
        store(TemplateId::AuthorInfo, forge.author_info_query(name)?, SparqlResultSet::new(v, rows)?)?;
    }

    for a in &by_author {
        let mut insts: Vec<&Institution> = world
            .institutions
            .iter()
            .filter(|i| a.institutions.contains(&i.uri))
            .collect();
        insts.sort_by(|x, y| (&x.name, &x.uri).cmp(&(&y.name, &y.uri)));
        let rows = insts
            .into_iter()
            .map(|i| {
                let mut row: Row = BTreeMap::new();
                row.insert(var::INSTITUTION.into(), Binding::uri(&i.uri));
                row.insert(var::INSTITUTION_NAME.into(), Binding::literal(&i.name));
                if let Some(x) = &i.acronym {
                    row.insert(var::ACRONYM.into(), Binding::literal(x));
                }
                if let Some(x) = &i.homepage {
                    row.insert(var::HOMEPAGE.into(), Binding::uri(x));
                }
                if let Some(n) = i.cited_by_count {
                    row.insert(var::CITED_BY_COUNT.into(), int(n));
                }
                row
            })
            .collect();
        let v = vars(&[var::INSTITUTION, var::INSTITUTION_NAME, var::ACRONYM, var::HOMEPAGE, var::CITED_BY_COUNT]);
        store(TemplateId::AuthorInstitution, forge.institution_query(&a.uri)?, SparqlResultSet::new(v, rows)?)?;
    }

    let lines: String = index.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(out.join("index.jsonl"), lines)?;
    eprintln!("wrote {} recordings to {}", index.len(), out.display());
    Ok(())
}
