//! Retrieval tables, deduplication, stream merging and the answers file.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{AnswerRecord, Stream};

/// Column holding the question id in retrieval tables.
pub const ID_COLUMN: &str = "id";

/// Merge precedence, highest first.
pub const PRECEDENCE: [Stream; 3] = [Stream::Local, Stream::Llm, Stream::DncCombined];

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("retrieval table has no {ID_COLUMN:?} column")]
    Schema,
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("stream {stream:?} repeats question id {id:?}")]
    DuplicateInStream { stream: Stream, id: String },
    #[error("record for {0:?} has an empty answer")]
    EmptyAnswer(String),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Every candidate response, one row per question/author/institution.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RetrievalTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub type Record = BTreeMap<String, String>;

impl RetrievalTable {
    /// Reads CSV with a mandatory header row. Ragged rows are kept so that
    /// [`csv_to_records`] can report them.
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self, AggregateError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr.headers()?.iter().map(str::to_owned).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_owned).collect()))
            .collect::<Result<_, _>>()?;
        Ok(RetrievalTable { header, rows })
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, AggregateError> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| AggregateError::Io(e.into_error()))
    }
}

pub fn csv_to_records(t: &RetrievalTable) -> Result<Vec<Record>, AggregateError> {
    if !t.header.iter().any(|h| h == ID_COLUMN) {
        return Err(AggregateError::Schema);
    }
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != t.header.len() {
                return Err(AggregateError::RaggedRow {
                    row: i + 1,
                    expected: t.header.len(),
                    found: row.len(),
                });
            }
            Ok(t.header.iter().cloned().zip(row.iter().cloned()).collect())
        })
        .collect()
}

/// Drops records identical in every field, keeping first occurrences.
pub fn dedupe(records: Vec<Record>) -> Vec<Record> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(r.clone()))
        .collect()
}

/// At most one resolved answer per question id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergedAnswerSet {
    records: BTreeMap<String, AnswerRecord>,
}

impl MergedAnswerSet {
    pub fn get(&self, id: &str) -> Option<&AnswerRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in id order.
    pub fn records(&self) -> impl Iterator<Item = &AnswerRecord> {
        self.records.values()
    }

    /// `(id, answer)` pairs in id order.
    pub fn answers(&self) -> impl Iterator<Item = (&str, &str)> {
        self.records
            .iter()
            .map(|(k, r)| (k.as_str(), r.answer.as_str()))
    }

    pub fn from_records(records: Vec<AnswerRecord>) -> Result<Self, AggregateError> {
        let mut map = BTreeMap::new();
        for r in records {
            if !r.is_resolved() {
                return Err(AggregateError::EmptyAnswer(r.question_id));
            }
            if map.contains_key(&r.question_id) {
                return Err(AggregateError::DuplicateInStream {
                    stream: r.stream,
                    id: r.question_id,
                });
            }
            map.insert(r.question_id.clone(), r);
        }
        Ok(MergedAnswerSet { records: map })
    }
}

fn check_unique(records: &[AnswerRecord], stream: Stream) -> Result<(), AggregateError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.question_id.as_str()) {
            return Err(AggregateError::DuplicateInStream {
                stream,
                id: r.question_id.clone(),
            });
        }
    }
    Ok(())
}

/// Merges the three answer streams. For each id the highest-precedence
/// stream with a non-empty answer wins; records are tagged with the stream
/// they were passed in as.
pub fn merge_streams(
    local: &[AnswerRecord],
    llm: &[AnswerRecord],
    dnc: &[AnswerRecord],
) -> Result<MergedAnswerSet, AggregateError> {
    let streams = [local, llm, dnc];
    for (records, stream) in streams.iter().zip(PRECEDENCE) {
        check_unique(records, stream)?;
    }
    let mut merged: BTreeMap<String, AnswerRecord> = BTreeMap::new();
    for (records, stream) in streams.iter().zip(PRECEDENCE) {
        for r in records.iter().filter(|r| r.is_resolved()) {
            merged
                .entry(r.question_id.clone())
                .or_insert_with(|| AnswerRecord::new(&r.question_id, &r.answer, stream));
        }
    }
    Ok(MergedAnswerSet { records: merged })
}

/// Answers keyed by question id, as read back from an answers file.
pub type AnswerSheet = BTreeMap<String, String>;

/// Renders the answers file: one `{"id": ..., "answer": ...}` object per
/// line, sorted by id bytes, LF-terminated.
pub fn render_answers<'a, I>(entries: I) -> Result<String, AggregateError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let sorted: BTreeMap<&str, &str> = entries.into_iter().collect();
    let mut out = String::new();
    for (id, answer) in sorted {
        if answer.is_empty() {
            return Err(AggregateError::EmptyAnswer(id.to_owned()));
        }
        let id = serde_json::to_string(id).expect("string serializes");
        let answer = serde_json::to_string(answer).expect("string serializes");
        out.push_str(&format!("{{\"id\": {id}, \"answer\": {answer}}}\n"));
    }
    Ok(out)
}

pub fn emit_answers_file(m: &MergedAnswerSet, path: &Path) -> Result<(), AggregateError> {
    let text = render_answers(m.answers())?;
    crate::fsutil::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, AggregateError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AggregateError::Line {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn parse_answers(text: &str) -> Result<AnswerSheet, AggregateError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Line {
        id: String,
        answer: String,
    }
    let mut sheet = AnswerSheet::new();
    for (i, l) in parse_lines::<Line>(text)?.into_iter().enumerate() {
        if l.answer.is_empty() {
            return Err(AggregateError::EmptyAnswer(l.id));
        }
        if sheet.insert(l.id.clone(), l.answer).is_some() {
            return Err(AggregateError::Line {
                line: i + 1,
                msg: format!("duplicate id {:?}", l.id),
            });
        }
    }
    Ok(sheet)
}

/// Reads a stream file: JSON Lines of `{"id", "answer", "stream"}`.
pub fn parse_stream_file(text: &str) -> Result<Vec<AnswerRecord>, AggregateError> {
    parse_lines(text)
}

pub fn render_stream_file(records: &[AnswerRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(header: &[&str], rows: &[&[&str]]) -> RetrievalTable {
        RetrievalTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    #[test]
    fn csv_records() {
        let t = table(&["id", "name", "worksCount"], &[&["q1", "A", "1"], &["q2", "B", "2"]]);
        let recs = csv_to_records(&t).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.len() == 3));
        assert_eq!(recs[1]["name"], "B");

        let t = table(&["qid", "name"], &[]);
        assert!(matches!(csv_to_records(&t), Err(AggregateError::Schema)));

        let t = table(&["id", "name", "worksCount"], &[&["q1", "A"]]);
        assert!(matches!(
            csv_to_records(&t),
            Err(AggregateError::RaggedRow { row: 1, expected: 3, found: 2 })
        ));
    }

    #[test]
    fn csv_io_round_trip() {
        let t = table(&["id", "name"], &[&["q1", "Roe, Jane"], &["q2", "\"Q\""]]);
        let bytes = t.to_csv().unwrap();
        assert_eq!(RetrievalTable::from_csv(&bytes[..]).unwrap(), t);
        let ragged = RetrievalTable::from_csv("id,name\nq1\n".as_bytes()).unwrap();
        assert!(matches!(csv_to_records(&ragged), Err(AggregateError::RaggedRow { .. })));
    }

    #[test]
    fn dedupe_exact_only() {
        let r = |id: &str, n: &str| -> Record {
            [("id".to_string(), id.to_string()), ("name".to_string(), n.to_string())].into()
        };
        assert_eq!(dedupe(vec![r("1", "a"), r("1", "a"), r("2", "b")]), vec![r("1", "a"), r("2", "b")]);
        assert!(dedupe(vec![]).is_empty());
        assert_eq!(dedupe(vec![r("1", "a"), r("1", "b")]).len(), 2);
    }

    fn rec(id: &str, a: &str, s: Stream) -> AnswerRecord {
        AnswerRecord::new(id, a, s)
    }

    #[test]
    fn merge_example() {
        let m = merge_streams(
            &[rec("q1", "A", Stream::Local)],
            &[rec("q1", "B", Stream::Llm), rec("q2", "C", Stream::Llm)],
            &[rec("q3", "D", Stream::DncCombined)],
        )
        .unwrap();
        let got: Vec<_> = m.records().map(|r| (r.question_id.as_str(), r.answer.as_str(), r.stream)).collect();
        assert_eq!(
            got,
            [("q1", "A", Stream::Local), ("q2", "C", Stream::Llm), ("q3", "D", Stream::DncCombined)]
        );
        assert!(merge_streams(&[], &[], &[]).unwrap().is_empty());
    }

    #[test]
    fn empty_answers_fall_through() {
        let m = merge_streams(
            &[rec("q1", "", Stream::Local)],
            &[rec("q1", "", Stream::Llm)],
            &[rec("q1", "D", Stream::DncCombined), rec("q2", "", Stream::DncCombined)],
        )
        .unwrap();
        assert_eq!(m.get("q1").unwrap().stream, Stream::DncCombined);
        assert!(m.get("q2").is_none());
    }

    #[test]
    fn duplicate_in_stream() {
        let err = merge_streams(&[], &[rec("q", "a", Stream::Llm), rec("q", "b", Stream::Llm)], &[]);
        assert!(matches!(err, Err(AggregateError::DuplicateInStream { stream: Stream::Llm, .. })));
    }

    #[test]
    fn answers_file_format() {
        let m = merge_streams(&[rec("q2", "B \"x\"", Stream::Local), rec("q1", "Å", Stream::Local)], &[], &[]).unwrap();
        let text = render_answers(m.answers()).unwrap();
        assert_eq!(text, "{\"id\": \"q1\", \"answer\": \"Å\"}\n{\"id\": \"q2\", \"answer\": \"B \\\"x\\\"\"}\n");
        assert_eq!(render_answers(MergedAnswerSet::default().answers()).unwrap(), "");
        let sheet = parse_answers(&text).unwrap();
        assert_eq!(sheet["q2"], "B \"x\"");
        assert_eq!(render_answers(sheet.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap(), text);
    }

    #[test]
    fn emit_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let m = merge_streams(&[rec("b", "2", Stream::Local), rec("a", "1", Stream::Local)], &[], &[]).unwrap();
        let (p1, p2) = (dir.path().join("1.jsonl"), dir.path().join("2.jsonl"));
        emit_answers_file(&m, &p1).unwrap();
        emit_answers_file(&m, &p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        assert_eq!(a, std::fs::read(&p2).unwrap());
        assert!(String::from_utf8(a).unwrap().starts_with("{\"id\": \"a\""));
    }

    #[test]
    fn answers_parse_errors() {
        assert!(matches!(parse_answers("{\"id\": \"a\"}\n"), Err(AggregateError::Line { line: 1, .. })));
        assert!(matches!(
            parse_answers("{\"id\": \"a\", \"answer\": \"x\"}\n{\"id\": \"a\", \"answer\": \"y\"}\n"),
            Err(AggregateError::Line { line: 2, .. })
        ));
        assert!(matches!(parse_answers("{\"id\": \"a\", \"answer\": \"\"}"), Err(AggregateError::EmptyAnswer(_))));
    }

    #[test]
    fn stream_file_round_trip() {
        let recs = vec![rec("q1", "A", Stream::Local), rec("q2", "", Stream::DncCombined)];
        let text = render_stream_file(&recs);
        assert!(text.contains("\"stream\":\"dnc\""));
        assert_eq!(parse_stream_file(&text).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn answers_round_trip(entries in proptest::collection::btree_map("\\PC{1,6}", "\\PC{1,10}", 0..20)) {
            let text = render_answers(entries.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap();
            let back = parse_answers(&text).unwrap();
            prop_assert_eq!(&back, &entries);
            prop_assert_eq!(render_answers(back.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap(), text);
        }
    }
}
