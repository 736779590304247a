//! Hybrid question answering over scholarly knowledge graphs.
//!
//! Questions about authors and institutions are routed by keyword
//! divide-and-conquer ([`router`]), answered through templated SPARQL queries
//! against DBLP and SemOpenAlex ([`query`], [`sparql`]) and an extractive QA
//! backend ([`context`]), merged under a fixed stream precedence
//! ([`aggregate`]) and scored with Exact Match and token F1 ([`eval`]).

pub mod aggregate;
pub mod config;
pub mod context;
pub mod eval;
pub mod fixtures;
pub mod fsutil;
pub mod iri;
pub mod model;
pub mod pipeline;
mod par;
pub mod query;
pub mod router;
pub mod sparql;
pub mod text;

pub use model::{AnswerRecord, BreakdownSet, Question, QuestionSet, RoutingDecision, Scope, Stream};
pub use text::{normalize, NormalizedText};
