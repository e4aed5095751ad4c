//! Archiver specification, batching and progress accounting. An archiver
//! consumes the streams of some tables and re-publishes every tuple, with
//! its original timestamp, into a target producer it owns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mediator::ProducerKind;
use crate::sql::{bind_where, WhereExpr};
use crate::tuple::Tuple;
use crate::types::TableDef;

pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const DEFAULT_BATCH_MS: u64 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedTable {
    pub table: String,
    #[serde(default, rename = "where", skip_serializing_if = "Option::is_none")]
    pub filter: Option<WhereExpr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArchiverSpec {
    pub target_producer_id: String,
    pub tables: Vec<ArchivedTable>,
    /// Restricts the inputs to these producers. By default every matching
    /// stream producer except the target is an input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<String>>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_batch_ms")]
    pub batch_ms: u64,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_batch_ms() -> u64 {
    DEFAULT_BATCH_MS
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchiverError {
    #[error("an archiver needs at least one table")]
    NoTables,
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("target {0} is not an insertable producer")]
    NotInsertable(ProducerKind),
    #[error("target does not publish table {0}")]
    TableNotInTarget(String),
    #[error("table {0} is archived twice")]
    DuplicateTable(String),
    #[error("filter for {table}: {message}")]
    Filter { table: String, message: String },
}

impl ArchiverSpec {
    pub fn new(target: impl Into<String>, tables: Vec<ArchivedTable>) -> Self {
        ArchiverSpec {
            target_producer_id: target.into(),
            tables,
            sources: None,
            batch_size: DEFAULT_BATCH_SIZE,
            batch_ms: DEFAULT_BATCH_MS,
        }
    }

    /// Checks the spec against the target's kind and table definitions.
    pub fn validate(&self, target_kind: ProducerKind, target_defs: &[TableDef]) -> Result<(), ArchiverError> {
        if self.tables.is_empty() {
            return Err(ArchiverError::NoTables);
        }
        if self.batch_size == 0 {
            return Err(ArchiverError::BatchSize);
        }
        if !target_kind.is_insertable() {
            return Err(ArchiverError::NotInsertable(target_kind));
        }
        for (i, t) in self.tables.iter().enumerate() {
            if self.tables[..i].iter().any(|o| o.table.eq_ignore_ascii_case(&t.table)) {
                return Err(ArchiverError::DuplicateTable(t.table.clone()));
            }
            let def = target_defs
                .iter()
                .find(|d| d.is_named(&t.table))
                .ok_or_else(|| ArchiverError::TableNotInTarget(t.table.clone()))?;
            if let Some(f) = &t.filter {
                bind_where(f, def, 0)
                    .map_err(|e| ArchiverError::Filter { table: t.table.clone(), message: e.to_string() })?;
            }
        }
        Ok(())
    }

    pub fn accepts_source(&self, producer_id: &str) -> bool {
        producer_id != self.target_producer_id
            && self.sources.as_ref().is_none_or(|s| s.iter().any(|id| id == producer_id))
    }
}

/// Groups tuples into vector inserts of at most `size` tuples, releasing a
/// partial batch once its oldest member has waited `max_age_ms`.
#[derive(Debug)]
pub struct Batcher {
    size: usize,
    max_age_ms: i64,
    pending: Vec<Tuple>,
    since: Option<i64>,
}

impl Batcher {
    pub fn new(size: usize, max_age_ms: u64) -> Self {
        assert!(size >= 1, "batch size must be positive");
        Batcher { size, max_age_ms: max_age_ms as i64, pending: Vec::new(), since: None }
    }

    /// Adds tuples and returns the full batches now ready.
    pub fn push(&mut self, tuples: impl IntoIterator<Item = Tuple>, now_ms: i64) -> Vec<Vec<Tuple>> {
        let mut ready = Vec::new();
        for t in tuples {
            if self.pending.is_empty() {
                self.since = Some(now_ms);
            }
            self.pending.push(t);
            if self.pending.len() == self.size {
                ready.push(self.take());
            }
        }
        ready
    }

    pub fn is_due(&self, now_ms: i64) -> bool {
        self.since.is_some_and(|s| now_ms - s >= self.max_age_ms)
    }

    /// Milliseconds until the pending batch is due, if any.
    pub fn due_in(&self, now_ms: i64) -> Option<i64> {
        self.since.map(|s| (s + self.max_age_ms - now_ms).max(0))
    }

    pub fn take(&mut self) -> Vec<Tuple> {
        self.since = None;
        std::mem::take(&mut self.pending)
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TableProgress {
    pub table: String,
    pub archived: u64,
    pub max_timestamp: Option<i64>,
    /// `now - max_timestamp` when reported.
    pub lag_ms: Option<i64>,
}

impl TableProgress {
    pub fn new(table: impl Into<String>) -> Self {
        TableProgress { table: table.into(), archived: 0, max_timestamp: None, lag_ms: None }
    }

    pub fn record(&mut self, tuples: &[Tuple]) {
        self.archived += tuples.len() as u64;
        if let Some(m) = tuples.iter().map(Tuple::timestamp).max() {
            self.max_timestamp = Some(self.max_timestamp.map_or(m, |c| c.max(m)));
        }
    }

    pub fn at(&self, now_ms: i64) -> Self {
        TableProgress { lag_ms: self.max_timestamp.map(|m| now_ms - m), ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_create_table;

    fn t(ts: i64) -> Tuple {
        Tuple::new_unchecked("T", vec![ts.into()], ts)
    }

    #[test]
    fn batches_by_size_and_age() {
        let mut b = Batcher::new(3, 200);
        assert!(b.push([t(1), t(2)], 0).is_empty());
        assert!(!b.is_due(199));
        assert_eq!(b.due_in(150), Some(50));
        assert!(b.is_due(200));
        let ready = b.push([t(3), t(4)], 210);
        assert_eq!(ready, vec![vec![t(1), t(2), t(3)]]);
        assert_eq!(b.pending(), 1);
        assert_eq!(b.due_in(210), Some(200));
        assert_eq!(b.take(), vec![t(4)]);
        assert_eq!(b.due_in(0), None);
    }

    #[test]
    fn validation() {
        let def = parse_create_table("CREATE TABLE T (a INT, PRIMARY KEY (a))").unwrap();
        let ok = ArchiverSpec::new("lp", vec![ArchivedTable { table: "t".into(), filter: None }]);
        assert_eq!(ok.validate(ProducerKind::Latest, std::slice::from_ref(&def)), Ok(()));
        assert_eq!(ok.validate(ProducerKind::ResilientStream, std::slice::from_ref(&def)), Ok(()));
        assert_eq!(
            ok.validate(ProducerKind::Canonical, std::slice::from_ref(&def)),
            Err(ArchiverError::NotInsertable(ProducerKind::Canonical))
        );
        assert_eq!(ok.validate(ProducerKind::Latest, &[]), Err(ArchiverError::TableNotInTarget("t".into())));
        assert_eq!(ArchiverSpec::new("lp", vec![]).validate(ProducerKind::Latest, &[]), Err(ArchiverError::NoTables));
    }

    #[test]
    fn sources() {
        let mut s = ArchiverSpec::new("lp", vec![]);
        assert!(s.accepts_source("sp"));
        assert!(!s.accepts_source("lp"));
        s.sources = Some(vec!["a".into()]);
        assert!(s.accepts_source("a"));
        assert!(!s.accepts_source("sp"));
    }

    #[test]
    fn progress() {
        let mut p = TableProgress::new("T");
        p.record(&[t(5), t(3)]);
        p.record(&[t(4)]);
        let r = p.at(10);
        assert_eq!((r.archived, r.max_timestamp, r.lag_ms), (3, Some(5), Some(5)));
    }
}
