//! The producer engines.
//!
//! A producer publishes one or more tables, each restricted to a view.
//! DATABASE keeps every tuple, LATEST keeps the newest tuple per defining
//! key, STREAM and RESILIENT_STREAM hold nothing queryable and only feed
//! subscriptions (the resilient kind logs to disk first), and CANONICAL
//! answers queries by calling user code.

mod log;
mod store;
mod subscription;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use log::{LogError, ResilientLog};
pub use store::Store;
pub use subscription::{DropOldest, Subscription, SubscriptionStats};

use crate::clock::Clock;
use crate::mediator::{serves, ProducerKind, QueryType, Rows};
use crate::sql::{
    bind_select, bind_view, bind_where, parse_insert, BoundExpr, BoundOperand, BoundSelect, BoundView, CmpOp,
    SelectQuery, SqlError, ViewPredicate, WhereExpr,
};
use crate::tuple::{insert_to_raw, validate_tuple, RawTuple, Tuple, TupleError};
use crate::types::{TableDef, Value};

pub const DEFAULT_BUFFER_CAPACITY: usize = 10_000;
pub const DEFAULT_REPLAY_WINDOW: usize = 10_000;
pub const DEFAULT_CANONICAL_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub def: TableDef,
    pub view: ViewPredicate,
}

/// Periodically deletes the rows of `table` matching `filter`. `NOW()` in
/// the filter is evaluated at each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CleanupRule {
    pub table: String,
    #[serde(rename = "where")]
    pub filter: WhereExpr,
    pub interval_sec: u32,
}

#[derive(Debug, Clone)]
pub struct ProducerConfig {
    pub kind: ProducerKind,
    pub tables: Vec<TableSpec>,
    /// Per subscription.
    pub stream_buffer_capacity: usize,
    pub resilient_log_path: Option<PathBuf>,
    pub replay_window: usize,
    pub cleanup: Vec<CleanupRule>,
    pub canonical_timeout: Duration,
}

impl ProducerConfig {
    pub fn new(kind: ProducerKind, tables: Vec<TableSpec>) -> Self {
        ProducerConfig {
            kind,
            tables,
            stream_buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            resilient_log_path: None,
            replay_window: DEFAULT_REPLAY_WINDOW,
            cleanup: Vec::new(),
            canonical_timeout: DEFAULT_CANONICAL_TIMEOUT,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProducerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{0} producers do not accept inserts")]
    NotInsertable(ProducerKind),
    #[error("producer does not publish table {0}")]
    UnknownTable(String),
    #[error("tuple {index}: {source}")]
    Invalid { index: usize, source: TupleError },
    #[error("tuple {index} lies outside the producer's view {view}")]
    ViewViolation { index: usize, view: String },
    #[error("producer is owned by an archiver")]
    Owned,
    #[error("{kind} producers do not answer {query_type} queries")]
    KindMismatch { kind: ProducerKind, query_type: QueryType },
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("no canonical handler registered")]
    NoHandler,
    #[error("canonical handler timed out after {0:?}")]
    HandlerTimeout(Duration),
    #[error("canonical handler failed: {0}")]
    Handler(String),
    #[error("canonical handler returned an invalid tuple: {0}")]
    HandlerInvalid(String),
}

/// User code answering queries for a CANONICAL producer. Returned tuples
/// without a timestamp are stamped with the current time.
pub trait CanonicalHandler: Send + Sync + 'static {
    fn answer(&self, query: &SelectQuery) -> Result<Vec<RawTuple>, String>;
}

impl<F> CanonicalHandler for F
where
    F: Fn(&SelectQuery) -> Result<Vec<RawTuple>, String> + Send + Sync + 'static,
{
    fn answer(&self, query: &SelectQuery) -> Result<Vec<RawTuple>, String> {
        self(query)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TableStats {
    pub table: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProducerStats {
    pub kind: ProducerKind,
    pub inserted: u64,
    pub superseded: u64,
    pub tables: Vec<TableStats>,
    pub subscriptions: Vec<SubscriptionStats>,
    pub dropped: u64,
    pub log_bytes: Option<u64>,
    pub log_records: Option<u64>,
    pub replay_window: usize,
    pub owned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InsertOutcome {
    /// Tuples processed, including LATEST tuples superseded by a newer one.
    pub accepted: usize,
    pub superseded: usize,
}

struct Published {
    def: TableDef,
    view: ViewPredicate,
    bound_view: BoundView,
}

struct Inner {
    stores: Vec<Store>,
    subs: BTreeMap<String, Arc<Subscription>>,
    log: Option<ResilientLog>,
    replay: VecDeque<Tuple>,
    inserted: u64,
    superseded: u64,
    /// Drops from subscriptions that have since closed.
    retired_drops: u64,
}

pub struct Producer {
    kind: ProducerKind,
    tables: Vec<Published>,
    defs: Vec<TableDef>,
    capacity: usize,
    replay_window: usize,
    cleanup: Vec<(usize, CleanupRule)>,
    canonical_timeout: Duration,
    handler: RwLock<Option<Arc<dyn CanonicalHandler>>>,
    owner: Mutex<Option<String>>,
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
    next_sub: AtomicU64,
}

impl std::fmt::Debug for Producer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Producer").field("kind", &self.kind).field("defs", &self.defs).finish_non_exhaustive()
    }
}

fn config_err(msg: impl Into<String>) -> ProducerError {
    ProducerError::Config(msg.into())
}

impl Producer {
    /// Builds the engine. A resilient producer replays its existing log into
    /// the replay window.
    pub fn create(config: ProducerConfig, clock: Arc<dyn Clock>) -> Result<Self, ProducerError> {
        let kind = config.kind;
        if config.tables.is_empty() {
            return Err(config_err("a producer must publish at least one table"));
        }
        if config.stream_buffer_capacity == 0 {
            return Err(config_err("stream buffer capacity must be at least 1"));
        }
        if config.resilient_log_path.is_some() != (kind == ProducerKind::ResilientStream) {
            return Err(config_err("a log path is required for, and only for, RESILIENT_STREAM producers"));
        }
        let mut tables = Vec::with_capacity(config.tables.len());
        for spec in config.tables {
            if tables.iter().any(|p: &Published| p.def.is_named(spec.def.name())) {
                return Err(config_err(format!("table {} listed twice", spec.def.name())));
            }
            let bound_view = bind_view(&spec.view, &spec.def)?;
            tables.push(Published { def: spec.def, view: spec.view, bound_view });
        }
        let defs: Vec<TableDef> = tables.iter().map(|p| p.def.clone()).collect();
        let mut cleanup = Vec::new();
        for rule in config.cleanup {
            if !kind.has_store() {
                return Err(config_err(format!("{kind} producers hold no store to clean up")));
            }
            if rule.interval_sec == 0 {
                return Err(config_err("cleanup interval must be at least 1 second"));
            }
            let idx = defs
                .iter()
                .position(|d| d.is_named(&rule.table))
                .ok_or_else(|| ProducerError::UnknownTable(rule.table.clone()))?;
            bind_where(&rule.filter, &defs[idx], 0)?;
            cleanup.push((idx, rule));
        }
        let stores = defs
            .iter()
            .map(|d| if kind == ProducerKind::Latest { Store::latest(d.clone()) } else { Store::history(d.clone()) })
            .collect();
        let mut replay = VecDeque::new();
        let log = match &config.resilient_log_path {
            Some(path) => {
                let (log, recovered) = ResilientLog::open(path, &defs)?;
                let skip = recovered.len().saturating_sub(config.replay_window);
                replay.extend(recovered.into_iter().skip(skip));
                Some(log)
            }
            None => None,
        };
        Ok(Producer {
            kind,
            tables,
            defs,
            capacity: config.stream_buffer_capacity,
            replay_window: config.replay_window,
            cleanup,
            canonical_timeout: config.canonical_timeout,
            handler: RwLock::new(None),
            owner: Mutex::new(None),
            inner: Mutex::new(Inner {
                stores,
                subs: BTreeMap::new(),
                log,
                replay,
                inserted: 0,
                superseded: 0,
                retired_drops: 0,
            }),
            clock,
            next_sub: AtomicU64::new(1),
        })
    }

    pub fn kind(&self) -> ProducerKind {
        self.kind
    }

    pub fn defs(&self) -> &[TableDef] {
        &self.defs
    }

    pub fn views(&self) -> impl Iterator<Item = (&TableDef, &ViewPredicate)> {
        self.tables.iter().map(|p| (&p.def, &p.view))
    }

    pub fn cleanup_rules(&self) -> impl Iterator<Item = &CleanupRule> {
        self.cleanup.iter().map(|(_, r)| r)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn table_index(&self, name: &str) -> Result<usize, ProducerError> {
        self.defs.iter().position(|d| d.is_named(name)).ok_or_else(|| ProducerError::UnknownTable(name.to_owned()))
    }

    /// Claims exclusive insert rights. Fails if another owner holds them.
    pub fn acquire(&self, token: &str) -> Result<(), ProducerError> {
        let mut owner = self.owner.lock().unwrap_or_else(|p| p.into_inner());
        match owner.as_deref() {
            Some(t) if t != token => Err(ProducerError::Owned),
            _ => {
                *owner = Some(token.to_owned());
                Ok(())
            }
        }
    }

    pub fn release(&self, token: &str) {
        let mut owner = self.owner.lock().unwrap_or_else(|p| p.into_inner());
        if owner.as_deref() == Some(token) {
            *owner = None;
        }
    }

    pub fn is_owned(&self) -> bool {
        self.owner.lock().unwrap_or_else(|p| p.into_inner()).is_some()
    }

    /// Validates the whole batch, then applies it atomically.
    pub fn insert(&self, raws: Vec<RawTuple>, owner: Option<&str>) -> Result<InsertOutcome, ProducerError> {
        if !self.kind.is_insertable() {
            return Err(ProducerError::NotInsertable(self.kind));
        }
        {
            let held = self.owner.lock().unwrap_or_else(|p| p.into_inner());
            if held.is_some() && held.as_deref() != owner {
                return Err(ProducerError::Owned);
            }
        }
        let now = self.clock.now_ms();
        let mut batch = Vec::with_capacity(raws.len());
        for (index, raw) in raws.into_iter().enumerate() {
            let t = self.table_index(&raw.table)?;
            let published = &self.tables[t];
            let tuple = validate_tuple(&published.def, raw, now).map_err(|source| ProducerError::Invalid { index, source })?;
            if !published.bound_view.matches(&tuple) {
                return Err(ProducerError::ViewViolation { index, view: published.view.to_string() });
            }
            batch.push((t, tuple));
        }
        let tuples: Vec<Tuple> = batch.iter().map(|(_, t)| t.clone()).collect();
        self.apply(batch, &tuples)
    }

    /// Parses and inserts an INSERT statement.
    pub fn insert_sql(&self, sql: &str, owner: Option<&str>) -> Result<InsertOutcome, ProducerError> {
        let stmt = parse_insert(sql)?;
        self.insert(insert_to_raw(&stmt, self.clock.now_ms()), owner)
    }

    fn apply(&self, batch: Vec<(usize, Tuple)>, tuples: &[Tuple]) -> Result<InsertOutcome, ProducerError> {
        let mut inner = self.lock();
        if let Some(log) = &mut inner.log {
            log.append(&self.defs, tuples)?;
        }
        let accepted = batch.len();
        let mut superseded = 0;
        match self.kind {
            ProducerKind::Database | ProducerKind::Latest => {
                for (t, tuple) in batch {
                    if !inner.stores[t].put(tuple) {
                        superseded += 1;
                    }
                }
            }
            ProducerKind::Stream | ProducerKind::ResilientStream => {
                for tuple in tuples {
                    for sub in inner.subs.values() {
                        sub.offer(tuple);
                    }
                }
                for sub in inner.subs.values() {
                    sub.wake();
                }
                if self.kind == ProducerKind::ResilientStream && self.replay_window > 0 {
                    for (_, tuple) in batch {
                        if inner.replay.len() == self.replay_window {
                            inner.replay.pop_front();
                        }
                        inner.replay.push_back(tuple);
                    }
                }
            }
            ProducerKind::Canonical => unreachable!("checked by insert"),
        }
        inner.inserted += accepted as u64;
        inner.superseded += superseded as u64;
        Ok(InsertOutcome { accepted, superseded: superseded as usize })
    }

    /// Answers a one-shot query with full (unprojected) tuples, or tuple
    /// pairs for a join.
    pub fn answer_query(&self, query: &SelectQuery, query_type: QueryType) -> Result<Rows, ProducerError> {
        if !serves(self.kind, query_type) {
            return Err(ProducerError::KindMismatch { kind: self.kind, query_type });
        }
        let now = self.clock.now_ms();
        let bound = bind_select(query, &self.defs, now)?;
        if bound.is_join() && self.kind != ProducerKind::Database {
            return Err(ProducerError::KindMismatch { kind: self.kind, query_type });
        }
        if self.kind == ProducerKind::Canonical {
            return self.answer_canonical(&bound, now);
        }
        let inner = self.lock();
        let store = |def: &TableDef| &inner.stores[self.table_index(def.name()).expect("bound against own tables")];
        if bound.is_join() {
            let (left, right) = (store(&bound.tables[0]).scan(), store(&bound.tables[1]).scan());
            Ok(Rows::Joined(hash_join(&bound, left, right)))
        } else {
            let rows = store(&bound.tables[0]).scan().iter().filter(|t| bound.accepts(&[t])).cloned().collect();
            Ok(Rows::Single(rows))
        }
    }

    pub fn set_handler(&self, handler: Arc<dyn CanonicalHandler>) -> Result<(), ProducerError> {
        if self.kind != ProducerKind::Canonical {
            return Err(config_err("only CANONICAL producers take a handler"));
        }
        *self.handler.write().unwrap_or_else(|p| p.into_inner()) = Some(handler);
        Ok(())
    }

    fn answer_canonical(&self, bound: &BoundSelect, now: i64) -> Result<Rows, ProducerError> {
        let handler = self.handler.read().unwrap_or_else(|p| p.into_inner()).clone().ok_or(ProducerError::NoHandler)?;
        let (tx, rx) = std::sync::mpsc::channel();
        let query = bound.query.clone();
        std::thread::spawn(move || {
            let _ = tx.send(handler.answer(&query));
        });
        let raws = match rx.recv_timeout(self.canonical_timeout) {
            Ok(r) => r.map_err(ProducerError::Handler)?,
            Err(_) => return Err(ProducerError::HandlerTimeout(self.canonical_timeout)),
        };
        let published = &self.tables[self.table_index(bound.tables[0].name())?];
        let mut rows = Vec::with_capacity(raws.len());
        for raw in raws {
            let t = validate_tuple(&published.def, raw, now)
                .map_err(|e| ProducerError::HandlerInvalid(e.to_string()))?;
            if !published.bound_view.matches(&t) {
                return Err(ProducerError::HandlerInvalid(format!("tuple outside view {}", published.view)));
            }
            if bound.accepts(&[&t]) {
                rows.push(t);
            }
        }
        Ok(Rows::Single(rows))
    }

    /// Opens a continuous subscription. With `replay`, a resilient producer
    /// first queues the matching tuples of its replay window.
    pub fn subscribe(&self, query: &SelectQuery, sink: &str, replay: bool) -> Result<Arc<Subscription>, ProducerError> {
        if !self.kind.is_stream() {
            return Err(ProducerError::KindMismatch { kind: self.kind, query_type: QueryType::Continuous });
        }
        let bound = bind_select(query, &self.defs, self.clock.now_ms())?;
        if bound.is_join() {
            return Err(ProducerError::KindMismatch { kind: self.kind, query_type: QueryType::Continuous });
        }
        let id = format!("s-{}", self.next_sub.fetch_add(1, Ordering::Relaxed));
        let sub = Arc::new(Subscription::new(id.clone(), bound, sink.to_owned(), self.capacity));
        let mut inner = self.lock();
        if replay {
            for t in &inner.replay {
                sub.offer(t);
            }
            sub.wake();
        }
        inner.subs.insert(id, sub.clone());
        Ok(sub)
    }

    pub fn unsubscribe(&self, id: &str) -> bool {
        let mut inner = self.lock();
        match inner.subs.remove(id) {
            Some(sub) => {
                inner.retired_drops += sub.dropped();
                sub.close();
                true
            }
            None => false,
        }
    }

    pub fn subscription(&self, id: &str) -> Option<Arc<Subscription>> {
        self.lock().subs.get(id).cloned()
    }

    pub fn subscriptions(&self) -> Vec<Arc<Subscription>> {
        self.lock().subs.values().cloned().collect()
    }

    /// The resilient replay window, oldest first.
    pub fn replay_window(&self) -> Vec<Tuple> {
        self.lock().replay.iter().cloned().collect()
    }

    /// Runs every cleanup rule once with `NOW()` = `now`.
    pub fn run_cleanup(&self, now: i64) -> usize {
        (0..self.cleanup.len()).map(|i| self.run_cleanup_rule(i, now)).sum()
    }

    pub fn run_cleanup_rule(&self, rule: usize, now: i64) -> usize {
        let (table, rule) = &self.cleanup[rule];
        let filter = bind_where(&rule.filter, &self.defs[*table], now).expect("checked at create");
        let deleted = self.lock().stores[*table].delete_where(|t| filter.matches(t));
        if deleted > 0 {
            tracing::debug!(table = %rule.table, deleted, "cleanup");
        }
        deleted
    }

    /// A copy of the stored rows of `table` (DATABASE and LATEST).
    pub fn rows(&self, table: &str) -> Result<Vec<Tuple>, ProducerError> {
        let t = self.table_index(table)?;
        Ok(self.lock().stores[t].scan().to_vec())
    }

    pub fn stats(&self) -> ProducerStats {
        let inner = self.lock();
        let subscriptions: Vec<SubscriptionStats> = inner.subs.values().map(|s| s.stats()).collect();
        ProducerStats {
            kind: self.kind,
            inserted: inner.inserted,
            superseded: inner.superseded,
            tables: inner
                .stores
                .iter()
                .map(|s| TableStats { table: s.def().name().to_owned(), rows: s.len() })
                .collect(),
            dropped: inner.retired_drops + subscriptions.iter().map(|s| s.dropped).sum::<u64>(),
            subscriptions,
            log_bytes: inner.log.as_ref().map(|l| l.bytes()),
            log_records: inner.log.as_ref().map(|l| l.records()),
            replay_window: inner.replay.len(),
            owned: self.is_owned(),
        }
    }

    /// Closes every subscription.
    pub fn close(&self) {
        let mut inner = self.lock();
        for (_, sub) in std::mem::take(&mut inner.subs) {
            sub.close();
        }
    }
}

/// Equi-join on the first top-level cross-table equality, with the full
/// filter applied to each candidate pair.
fn hash_join(bound: &BoundSelect, left: &[Tuple], right: &[Tuple]) -> Vec<(Tuple, Tuple)> {
    let conjuncts: &[BoundExpr] = match &bound.filter {
        Some(BoundExpr::And(xs)) => xs,
        Some(e) => std::slice::from_ref(e),
        None => &[],
    };
    let key = conjuncts.iter().find_map(|c| match c {
        BoundExpr::Cmp { left: BoundOperand::Column(l), op: CmpOp::Eq, right: BoundOperand::Column(r) }
            if l.table != r.table =>
        {
            Some(if l.table == 0 { (l.column, r.column) } else { (r.column, l.column) })
        }
        _ => None,
    });
    let Some((lcol, rcol)) = key else {
        return Vec::new();
    };
    // Numeric keys compare across INT and REAL, so index them by f64 bits.
    let norm = |v: Value| match v {
        Value::Int(i) => Value::Real(i as f64),
        v => v,
    };
    let mut index: HashMap<Value, Vec<usize>> = HashMap::new();
    for (i, r) in right.iter().enumerate() {
        index.entry(norm(r.value(rcol))).or_default().push(i);
    }
    let mut out = Vec::new();
    for l in left {
        if let Some(matches) = index.get(&norm(l.value(lcol))) {
            for &i in matches {
                if bound.accepts(&[l, &right[i]]) {
                    out.push((l.clone(), right[i].clone()));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::sql::{parse_create_table, parse_select, parse_view_predicate, parse_where};

    fn cpu() -> TableDef {
        parse_create_table("CREATE TABLE CpuLoad (host STRING(16), site STRING(16), load1 REAL, PRIMARY KEY (host))")
            .unwrap()
    }

    fn make(kind: ProducerKind, view: &str) -> (Arc<ManualClock>, Producer) {
        let clock = Arc::new(ManualClock::new(1_000));
        let cfg = ProducerConfig::new(kind, vec![TableSpec { def: cpu(), view: parse_view_predicate(view).unwrap() }]);
        (clock.clone(), Producer::create(cfg, clock).unwrap())
    }

    fn row(host: &str, site: &str, load: f64, ts: i64) -> RawTuple {
        RawTuple::new("CpuLoad").field("host", host).field("site", site).field("load1", load).at(ts)
    }

    fn sel(sql: &str) -> SelectQuery {
        parse_select(sql).unwrap()
    }

    #[test]
    fn latest_keeps_newest_or_equal() {
        let (_, p) = make(ProducerKind::Latest, "");
        p.insert(vec![row("n1", "RAL", 0.1, 10)], None).unwrap();
        p.insert(vec![row("n1", "RAL", 0.9, 20)], None).unwrap();
        let out = p.insert(vec![row("n1", "RAL", 0.5, 10)], None).unwrap();
        assert_eq!(out, InsertOutcome { accepted: 1, superseded: 1 });
        let rows = p.rows("CpuLoad").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].timestamp(), 20);
    }

    #[test]
    fn view_violation_rejects_whole_batch() {
        let (_, p) = make(ProducerKind::Database, "WHERE site='RAL'");
        let err = p.insert(vec![row("n1", "RAL", 0.1, 1), row("n2", "CERN", 0.1, 1)], None).unwrap_err();
        assert!(matches!(err, ProducerError::ViewViolation { index: 1, .. }));
        assert!(p.rows("CpuLoad").unwrap().is_empty());
    }

    #[test]
    fn missing_timestamp_is_stamped_by_the_clock() {
        let (clock, p) = make(ProducerKind::Database, "");
        clock.set(4242);
        p.insert_sql("INSERT INTO CpuLoad (host, site, load1) VALUES ('n1', 'RAL', 0.5)", None).unwrap();
        assert_eq!(p.rows("CpuLoad").unwrap()[0].timestamp(), 4242);
    }

    #[test]
    fn kind_mismatch() {
        let (_, p) = make(ProducerKind::Database, "");
        assert!(matches!(
            p.answer_query(&sel("SELECT * FROM CpuLoad"), QueryType::Latest),
            Err(ProducerError::KindMismatch { .. })
        ));
        assert!(p.subscribe(&sel("SELECT * FROM CpuLoad"), "x", false).is_err());
    }

    #[test]
    fn history_filter() {
        let (_, p) = make(ProducerKind::Database, "");
        for (i, l) in [0.2, 0.6, 0.9].into_iter().enumerate() {
            p.insert(vec![row(&format!("n{i}"), "RAL", l, 1)], None).unwrap();
        }
        let Rows::Single(rows) = p.answer_query(&sel("SELECT host FROM CpuLoad WHERE load1 > 0.5"), QueryType::History).unwrap()
        else {
            panic!("single-table answer expected")
        };
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn subscription_delivery_and_overflow() {
        let clock = Arc::new(ManualClock::new(0));
        let mut cfg = ProducerConfig::new(ProducerKind::Stream, vec![TableSpec { def: cpu(), view: ViewPredicate::whole_table() }]);
        cfg.stream_buffer_capacity = 2;
        let p = Producer::create(cfg, clock).unwrap();
        let all = p.subscribe(&sel("SELECT * FROM CpuLoad"), "sink", false).unwrap();
        let ral = p.subscribe(&sel("SELECT * FROM CpuLoad WHERE site = 'RAL'"), "sink", false).unwrap();
        p.insert(vec![row("a", "RAL", 0.0, 1), row("b", "CERN", 0.0, 2), row("c", "RAL", 0.0, 3)], None).unwrap();
        assert_eq!(all.dropped(), 1);
        assert_eq!(all.drain(10).iter().map(|t| t.timestamp()).collect::<Vec<_>>(), [2, 3]);
        assert_eq!(ral.dropped(), 0);
        assert_eq!(ral.drain(10).iter().map(|t| t.timestamp()).collect::<Vec<_>>(), [1, 3]);
        assert!(p.unsubscribe(all.id()));
        assert!(all.is_closed());
        assert_eq!(p.stats().dropped, 1);
    }

    #[test]
    fn cleanup_deletes_week_old_rows() {
        let day = 86_400_000;
        let now = 100 * day;
        let clock = Arc::new(ManualClock::new(now));
        let mut cfg = ProducerConfig::new(ProducerKind::Database, vec![TableSpec { def: cpu(), view: ViewPredicate::whole_table() }]);
        cfg.cleanup.push(CleanupRule {
            table: "CpuLoad".into(),
            filter: parse_where("RgmaTimestamp < NOW() - 604800000").unwrap(),
            interval_sec: 60,
        });
        let p = Producer::create(cfg, clock).unwrap();
        p.insert(vec![row("old", "RAL", 0.0, now - 8 * day), row("new", "RAL", 0.0, now - 2 * day)], None).unwrap();
        assert_eq!(p.run_cleanup(now), 1);
        assert_eq!(p.run_cleanup(now), 0);
        assert_eq!(p.rows("CpuLoad").unwrap()[0].get(&cpu(), "host"), Some("new".into()));
    }

    #[test]
    fn cleanup_on_stream_is_a_config_error() {
        let mut cfg = ProducerConfig::new(ProducerKind::Stream, vec![TableSpec { def: cpu(), view: ViewPredicate::whole_table() }]);
        cfg.cleanup.push(CleanupRule { table: "CpuLoad".into(), filter: parse_where("load1 > 1").unwrap(), interval_sec: 1 });
        assert!(matches!(Producer::create(cfg, Arc::new(ManualClock::new(0))), Err(ProducerError::Config(_))));
    }

    #[test]
    fn ownership_blocks_other_writers() {
        let (_, p) = make(ProducerKind::Latest, "");
        p.acquire("arch").unwrap();
        assert!(matches!(p.acquire("other"), Err(ProducerError::Owned)));
        assert!(matches!(p.insert(vec![row("n", "RAL", 0.0, 1)], None), Err(ProducerError::Owned)));
        p.insert(vec![row("n", "RAL", 0.0, 1)], Some("arch")).unwrap();
        p.release("arch");
        p.insert(vec![row("n", "RAL", 0.0, 2)], None).unwrap();
    }

    #[test]
    fn canonical_handler_contract() {
        let clock = Arc::new(ManualClock::new(77));
        let cfg = ProducerConfig::new(
            ProducerKind::Canonical,
            vec![TableSpec { def: cpu(), view: parse_view_predicate("WHERE site='RAL'").unwrap() }],
        );
        let p = Producer::create(cfg, clock).unwrap();
        let q = sel("SELECT * FROM CpuLoad");
        assert!(matches!(p.answer_query(&q, QueryType::Latest), Err(ProducerError::NoHandler)));
        assert!(matches!(p.insert(vec![row("n", "RAL", 0.0, 1)], None), Err(ProducerError::NotInsertable(_))));
        p.set_handler(Arc::new(|_: &SelectQuery| {
            Ok(vec![RawTuple::new("CpuLoad").field("host", "n1").field("site", "RAL").field("load1", 0.5)])
        }))
        .unwrap();
        let Rows::Single(rows) = p.answer_query(&q, QueryType::History).unwrap() else { panic!() };
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].timestamp(), 77);
        p.set_handler(Arc::new(|_: &SelectQuery| {
            Ok(vec![RawTuple::new("CpuLoad").field("host", "n1").field("site", "CERN").field("load1", 0.5)])
        }))
        .unwrap();
        assert!(matches!(p.answer_query(&q, QueryType::History), Err(ProducerError::HandlerInvalid(_))));
    }

    #[test]
    fn canonical_timeout() {
        let mut cfg = ProducerConfig::new(ProducerKind::Canonical, vec![TableSpec { def: cpu(), view: ViewPredicate::whole_table() }]);
        cfg.canonical_timeout = Duration::from_millis(50);
        let p = Producer::create(cfg, Arc::new(ManualClock::new(0))).unwrap();
        p.set_handler(Arc::new(|_: &SelectQuery| {
            std::thread::sleep(Duration::from_millis(500));
            Ok(vec![])
        }))
        .unwrap();
        assert!(matches!(
            p.answer_query(&sel("SELECT * FROM CpuLoad"), QueryType::History),
            Err(ProducerError::HandlerTimeout(_))
        ));
    }

    #[test]
    fn join_on_database() {
        let svc = parse_create_table("CREATE TABLE Service (uri STRING(64), type STRING(16), PRIMARY KEY (uri))").unwrap();
        let st = parse_create_table("CREATE TABLE ServiceStatus (uri STRING(64), status STRING(8), PRIMARY KEY (uri))")
            .unwrap();
        let cfg = ProducerConfig::new(
            ProducerKind::Database,
            vec![
                TableSpec { def: svc, view: ViewPredicate::whole_table() },
                TableSpec { def: st, view: ViewPredicate::whole_table() },
            ],
        );
        let p = Producer::create(cfg, Arc::new(ManualClock::new(0))).unwrap();
        p.insert_sql("INSERT INTO Service (uri, type) VALUES ('a', 'CE'), ('b', 'SE')", None).unwrap();
        p.insert_sql("INSERT INTO ServiceStatus (uri, status) VALUES ('a', 'OK'), ('b', 'DOWN'), ('c', 'OK')", None)
            .unwrap();
        let q = sel("SELECT s.uri, st.status FROM Service s, ServiceStatus st WHERE s.uri = st.uri AND st.status = 'OK'");
        let Rows::Joined(pairs) = p.answer_query(&q, QueryType::History).unwrap() else { panic!() };
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].0.values()[0], Value::from("a"));
    }
}
