//! Query planning over registered producers and combination of their
//! answers.
//!
//! Which producer kinds serve which query types:
//!
//! | kind             | HISTORY | LATEST | CONTINUOUS |
//! |------------------|---------|--------|------------|
//! | STREAM           |         |        | yes        |
//! | RESILIENT_STREAM |         |        | yes        |
//! | DATABASE         | yes     |        |            |
//! | LATEST           |         | yes    |            |
//! | CANONICAL        | yes     | yes    |            |
//!
//! Two-table queries go only to DATABASE producers that publish both
//! tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::registry::ProducerEntry;
use crate::sql::{bind_view, predicate_consistent, BoundSelect};
use crate::tuple::{latest_merge, Tuple};
use crate::types::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProducerKind {
    Stream,
    ResilientStream,
    Database,
    Latest,
    Canonical,
}

impl ProducerKind {
    pub const ALL: [ProducerKind; 5] = [
        ProducerKind::Stream,
        ProducerKind::ResilientStream,
        ProducerKind::Database,
        ProducerKind::Latest,
        ProducerKind::Canonical,
    ];

    /// Accepts INSERT statements.
    pub fn is_insertable(self) -> bool {
        self != ProducerKind::Canonical
    }

    pub fn is_stream(self) -> bool {
        matches!(self, ProducerKind::Stream | ProducerKind::ResilientStream)
    }

    /// Keeps a queryable store (and so may have cleanup rules).
    pub fn has_store(self) -> bool {
        matches!(self, ProducerKind::Database | ProducerKind::Latest)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProducerKind::Stream => "STREAM",
            ProducerKind::ResilientStream => "RESILIENT_STREAM",
            ProducerKind::Database => "DATABASE",
            ProducerKind::Latest => "LATEST",
            ProducerKind::Canonical => "CANONICAL",
        }
    }
}

impl fmt::Display for ProducerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProducerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        ProducerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| format!("unknown producer kind {s}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QueryType {
    History,
    Latest,
    Continuous,
}

impl QueryType {
    pub const ALL: [QueryType; 3] = [QueryType::History, QueryType::Latest, QueryType::Continuous];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::History => "HISTORY",
            QueryType::Latest => "LATEST",
            QueryType::Continuous => "CONTINUOUS",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase();
        QueryType::ALL.into_iter().find(|q| q.as_str() == norm).ok_or_else(|| format!("unknown query type {s}"))
    }
}

/// Whether producers of `kind` answer queries of type `query`.
pub fn serves(kind: ProducerKind, query: QueryType) -> bool {
    use ProducerKind as K;
    use QueryType as Q;
    match (kind, query) {
        (K::Stream | K::ResilientStream, Q::Continuous) => true,
        (K::Database, Q::History) => true,
        (K::Latest, Q::Latest) => true,
        (K::Canonical, Q::History | Q::Latest) => true,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Combine {
    UnionAll,
    LatestMerge,
    Interleave,
}

impl Combine {
    pub fn for_query(query: QueryType) -> Self {
        match query {
            QueryType::History => Combine::UnionAll,
            QueryType::Latest => Combine::LatestMerge,
            QueryType::Continuous => Combine::Interleave,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Target {
    pub producer_id: String,
    pub endpoint: String,
    pub kind: ProducerKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPlan {
    pub query_type: QueryType,
    pub targets: Vec<Target>,
    pub combine: Combine,
}

/// Whether `entry` may hold rows relevant to `query`: its kind serves the
/// query type and its view does not contradict the filter.
pub fn eligible(query: &BoundSelect, query_type: QueryType, entry: &ProducerEntry) -> bool {
    if !serves(entry.kind, query_type) {
        return false;
    }
    let Some(pos) = query.tables.iter().position(|d| d.is_named(&entry.table)) else {
        return false;
    };
    match bind_view(&entry.view, &query.tables[pos]) {
        Ok(view) => predicate_consistent(&view, pos, query.filter.as_ref()),
        Err(_) => false,
    }
}

/// Chooses the producers to contact. Every eligible producer is targeted;
/// there is no cost model.
pub fn plan(query: &BoundSelect, query_type: QueryType, candidates: &[ProducerEntry]) -> QueryPlan {
    let passing: Vec<&ProducerEntry> = candidates.iter().filter(|e| eligible(query, query_type, e)).collect();
    let mut targets: Vec<Target> = Vec::new();
    for e in &passing {
        if targets.iter().any(|t| t.producer_id == e.producer_id) {
            continue;
        }
        if query.is_join() {
            let covers_all = e.kind == ProducerKind::Database
                && query
                    .tables
                    .iter()
                    .all(|d| passing.iter().any(|o| o.producer_id == e.producer_id && d.is_named(&o.table)));
            if !covers_all {
                continue;
            }
        }
        targets.push(Target { producer_id: e.producer_id.clone(), endpoint: e.endpoint.clone(), kind: e.kind });
    }
    QueryPlan { query_type, targets, combine: Combine::for_query(query_type) }
}

/// Rows answered by one producer, or by the mediator after combining.
#[derive(Debug, Clone, PartialEq)]
pub enum Rows {
    Single(Vec<Tuple>),
    Joined(Vec<(Tuple, Tuple)>),
}

impl Rows {
    pub fn len(&self) -> usize {
        match self {
            Rows::Single(v) => v.len(),
            Rows::Joined(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn retain(&mut self, query: &BoundSelect) {
        match self {
            Rows::Single(v) => v.retain(|t| query.accepts(&[t])),
            Rows::Joined(v) => v.retain(|(a, b)| query.accepts(&[a, b])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Warning {
    pub producer_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub rows: Rows,
    pub warnings: Vec<Warning>,
}

/// Combines per-target answers. A failed target becomes a warning.
///
/// The query filter is applied after combining, so a LATEST query first
/// computes current values across all targets and only then filters them.
pub fn combine(plan: &QueryPlan, query: &BoundSelect, outcomes: Vec<(Target, Result<Rows, String>)>) -> Combined {
    let mut warnings = Vec::new();
    let mut singles = Vec::new();
    let mut pairs = Vec::new();
    for (target, outcome) in outcomes {
        match outcome {
            Ok(Rows::Single(v)) => singles.extend(v),
            Ok(Rows::Joined(v)) => pairs.extend(v),
            Err(message) => warnings.push(Warning { producer_id: target.producer_id, message }),
        }
    }
    let mut rows = if query.is_join() {
        Rows::Joined(pairs)
    } else if plan.combine == Combine::LatestMerge {
        Rows::Single(latest_merge(singles, &query.tables[0]))
    } else {
        Rows::Single(singles)
    };
    rows.retain(query);
    Combined { rows, warnings }
}

/// A projected query answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub warnings: Vec<Warning>,
}

impl ResultSet {
    pub fn new(query: &BoundSelect, combined: Combined) -> Self {
        let rows = match &combined.rows {
            Rows::Single(v) => v.iter().map(|t| query.project(&[t])).collect(),
            Rows::Joined(v) => v.iter().map(|(a, b)| query.project(&[a, b])).collect(),
        };
        ResultSet { columns: query.column_names(), rows, warnings: combined.warnings }
    }
}
