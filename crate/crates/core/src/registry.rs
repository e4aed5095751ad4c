//! The soft-state registry and the schema it is co-located with.
//!
//! Registrations carry a termination interval; an entry not refreshed by a
//! heartbeat within that interval is swept. The registry stores only
//! descriptions of producers and consumers, never tuples.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::mediator::{eligible, ProducerKind, QueryType};
use crate::sql::{bind_select, bind_view, BoundSelect, SelectQuery, SqlError, ViewPredicate, WhereExpr};
use crate::types::TableDef;

pub const DEFAULT_TERMINATION_INTERVAL_SEC: u32 = 60;
pub const MAX_TERMINATION_INTERVAL_SEC: u32 = 86_400;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("table {0} already exists with a different definition")]
    TableClash(String),
    #[error("termination interval must be between 1 and {MAX_TERMINATION_INTERVAL_SEC} seconds, got {0}")]
    InvalidInterval(u32),
    #[error("a producer must publish at least one table")]
    NoTables,
    #[error("view for {table} does not bind: {source}")]
    View { table: String, source: SqlError },
    #[error(transparent)]
    Query(SqlError),
    #[error("unknown id {0}")]
    UnknownId(String),
}

impl RegistryError {
    fn query(e: SqlError) -> Self {
        match e {
            SqlError::UnknownTable(t) => RegistryError::UnknownTable(t),
            e => RegistryError::Query(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SchemaEntry {
    pub def: TableDef,
    pub created_at: i64,
}

/// One published (table, view) pair of a producer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProducerEntry {
    pub producer_id: String,
    pub endpoint: String,
    pub table: String,
    pub view: ViewPredicate,
    pub kind: ProducerKind,
    pub termination_time: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableView {
    pub table: String,
    #[serde(default = "ViewPredicate::whole_table")]
    pub view: ViewPredicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProducerRegistration {
    /// Re-registering an existing id replaces its entries. A fresh id is
    /// generated when absent.
    #[serde(default)]
    pub producer_id: Option<String>,
    pub endpoint: String,
    pub kind: ProducerKind,
    pub tables: Vec<TableView>,
    #[serde(default = "default_interval")]
    pub termination_interval_sec: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsumerRegistration {
    #[serde(default)]
    pub consumer_id: Option<String>,
    pub endpoint: String,
    pub query: SelectQuery,
    pub query_type: QueryType,
    #[serde(default = "default_interval")]
    pub termination_interval_sec: u32,
}

fn default_interval() -> u32 {
    DEFAULT_TERMINATION_INTERVAL_SEC
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsumerEntry {
    pub consumer_id: String,
    pub endpoint: String,
    pub query: SelectQuery,
    pub query_type: QueryType,
    pub termination_time: i64,
}

/// A newly registered producer entry to be announced to a consumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Notification {
    pub consumer_id: String,
    pub consumer_endpoint: String,
    pub producer: ProducerEntry,
}

struct ProducerRecord {
    interval_ms: i64,
    entries: Vec<ProducerEntry>,
}

struct ConsumerRecord {
    interval_ms: i64,
    entry: ConsumerEntry,
    bound: BoundSelect,
}

#[derive(Default)]
struct State {
    tables: BTreeMap<String, SchemaEntry>,
    producers: HashMap<String, ProducerRecord>,
    consumers: HashMap<String, ConsumerRecord>,
}

impl State {
    fn defs(&self) -> Vec<TableDef> {
        self.tables.values().map(|e| e.def.clone()).collect()
    }

    fn sweep(&mut self, now: i64) -> Vec<String> {
        let mut gone: Vec<String> = Vec::new();
        self.producers.retain(|id, r| {
            let live = r.entries.first().is_some_and(|e| e.termination_time >= now);
            if !live {
                gone.push(id.clone());
            }
            live
        });
        self.consumers.retain(|id, r| {
            let live = r.entry.termination_time >= now;
            if !live {
                gone.push(id.clone());
            }
            live
        });
        gone.sort();
        gone
    }
}

pub struct Registry {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
    next_id: AtomicU64,
}

fn check_interval(sec: u32) -> Result<i64, RegistryError> {
    if (1..=MAX_TERMINATION_INTERVAL_SEC).contains(&sec) {
        Ok(i64::from(sec) * 1000)
    } else {
        Err(RegistryError::InvalidInterval(sec))
    }
}

fn key(name: &str) -> String {
    name.to_ascii_lowercase()
}

impl Registry {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Registry { state: Mutex::new(State::default()), clock, next_id: AtomicU64::new(1) }
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{:x}-{}", self.clock.now_ms(), self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Declares a table. Re-declaring an identical definition succeeds and
    /// returns the original entry.
    pub fn create_table(&self, def: TableDef) -> Result<SchemaEntry, RegistryError> {
        let mut st = self.lock();
        match st.tables.get(&key(def.name())) {
            Some(existing) if existing.def.same_definition(&def) => Ok(existing.clone()),
            Some(_) => Err(RegistryError::TableClash(def.name().to_owned())),
            None => {
                let entry = SchemaEntry { def, created_at: self.clock.now_ms() };
                st.tables.insert(key(entry.def.name()), entry.clone());
                Ok(entry)
            }
        }
    }

    pub fn tables(&self) -> Vec<SchemaEntry> {
        self.lock().tables.values().cloned().collect()
    }

    pub fn table(&self, name: &str) -> Option<SchemaEntry> {
        self.lock().tables.get(&key(name)).cloned()
    }

    /// Registers (or replaces) a producer and returns its stored entries
    /// together with the notifications owed to live consumers. Delivering
    /// them is the caller's job.
    pub fn register_producer(
        &self,
        reg: ProducerRegistration,
    ) -> Result<(Vec<ProducerEntry>, Vec<Notification>), RegistryError> {
        let interval_ms = check_interval(reg.termination_interval_sec)?;
        if reg.tables.is_empty() {
            return Err(RegistryError::NoTables);
        }
        let now = self.clock.now_ms();
        let mut st = self.lock();
        st.sweep(now);
        let id = reg.producer_id.clone().unwrap_or_else(|| self.fresh_id("p"));
        let mut entries = Vec::with_capacity(reg.tables.len());
        for tv in &reg.tables {
            let schema = st.tables.get(&key(&tv.table)).ok_or_else(|| RegistryError::UnknownTable(tv.table.clone()))?;
            bind_view(&tv.view, &schema.def)
                .map_err(|source| RegistryError::View { table: tv.table.clone(), source })?;
            entries.push(ProducerEntry {
                producer_id: id.clone(),
                endpoint: reg.endpoint.clone(),
                table: schema.def.name().to_owned(),
                view: tv.view.clone(),
                kind: reg.kind,
                termination_time: now + interval_ms,
            });
        }
        let mut notes = Vec::new();
        let mut consumers: Vec<&ConsumerRecord> = st.consumers.values().collect();
        consumers.sort_by(|a, b| a.entry.consumer_id.cmp(&b.entry.consumer_id));
        for c in consumers {
            for e in &entries {
                if eligible(&c.bound, c.entry.query_type, e) {
                    notes.push(Notification {
                        consumer_id: c.entry.consumer_id.clone(),
                        consumer_endpoint: c.entry.endpoint.clone(),
                        producer: e.clone(),
                    });
                }
            }
        }
        st.producers.insert(id, ProducerRecord { interval_ms, entries: entries.clone() });
        Ok((entries, notes))
    }

    /// Registers (or replaces) a consumer and returns the producers that
    /// currently match its query.
    pub fn register_consumer(
        &self,
        reg: ConsumerRegistration,
    ) -> Result<(ConsumerEntry, Vec<ProducerEntry>), RegistryError> {
        let interval_ms = check_interval(reg.termination_interval_sec)?;
        let now = self.clock.now_ms();
        let mut st = self.lock();
        st.sweep(now);
        let bound = bind_select(&reg.query, &st.defs(), now).map_err(RegistryError::query)?;
        let entry = ConsumerEntry {
            consumer_id: reg.consumer_id.clone().unwrap_or_else(|| self.fresh_id("c")),
            endpoint: reg.endpoint,
            query: reg.query,
            query_type: reg.query_type,
            termination_time: now + interval_ms,
        };
        let matching = matching(&st, &bound, reg.query_type);
        st.consumers
            .insert(entry.consumer_id.clone(), ConsumerRecord { interval_ms, entry: entry.clone(), bound });
        Ok((entry, matching))
    }

    /// Extends a registration by its original interval and returns the new
    /// termination time.
    pub fn heartbeat(&self, id: &str) -> Result<i64, RegistryError> {
        let now = self.clock.now_ms();
        let mut st = self.lock();
        st.sweep(now);
        if let Some(r) = st.producers.get_mut(id) {
            let t = now + r.interval_ms;
            for e in &mut r.entries {
                e.termination_time = t;
            }
            return Ok(t);
        }
        if let Some(r) = st.consumers.get_mut(id) {
            r.entry.termination_time = now + r.interval_ms;
            return Ok(r.entry.termination_time);
        }
        Err(RegistryError::UnknownId(id.to_owned()))
    }

    pub fn unregister_producer(&self, id: &str) -> bool {
        self.lock().producers.remove(id).is_some()
    }

    pub fn unregister_consumer(&self, id: &str) -> bool {
        self.lock().consumers.remove(id).is_some()
    }

    /// Removes every entry whose termination time is before `now` and
    /// returns the removed ids.
    pub fn sweep_at(&self, now: i64) -> Vec<String> {
        self.lock().sweep(now)
    }

    pub fn sweep(&self) -> Vec<String> {
        self.sweep_at(self.clock.now_ms())
    }

    /// Live producers whose kind serves `query_type` and whose views do not
    /// contradict the query's filter.
    pub fn lookup(&self, query: &SelectQuery, query_type: QueryType) -> Result<Vec<ProducerEntry>, RegistryError> {
        let now = self.clock.now_ms();
        let mut st = self.lock();
        st.sweep(now);
        let bound = bind_select(query, &st.defs(), now).map_err(RegistryError::query)?;
        Ok(matching(&st, &bound, query_type))
    }

    pub fn lookup_table(
        &self,
        table: &str,
        query_type: QueryType,
        filter: Option<WhereExpr>,
    ) -> Result<Vec<ProducerEntry>, RegistryError> {
        self.lookup(&SelectQuery::star(table, filter), query_type)
    }

    pub fn producer(&self, id: &str) -> Option<Vec<ProducerEntry>> {
        let now = self.clock.now_ms();
        let mut st = self.lock();
        st.sweep(now);
        st.producers.get(id).map(|r| r.entries.clone())
    }

    pub fn consumer(&self, id: &str) -> Option<ConsumerEntry> {
        let now = self.clock.now_ms();
        let mut st = self.lock();
        st.sweep(now);
        st.consumers.get(id).map(|r| r.entry.clone())
    }

    /// Every live producer entry, in id order.
    pub fn producers(&self) -> Vec<ProducerEntry> {
        let now = self.clock.now_ms();
        let mut st = self.lock();
        st.sweep(now);
        let mut all: Vec<ProducerEntry> = st.producers.values().flat_map(|r| r.entries.iter().cloned()).collect();
        all.sort_by(|a, b| (&a.producer_id, &a.table).cmp(&(&b.producer_id, &b.table)));
        all
    }
}

fn matching(st: &State, bound: &BoundSelect, query_type: QueryType) -> Vec<ProducerEntry> {
    let mut out: Vec<ProducerEntry> = st
        .producers
        .values()
        .flat_map(|r| r.entries.iter())
        .filter(|e| eligible(bound, query_type, e))
        .cloned()
        .collect();
    out.sort_by(|a, b| (&a.producer_id, &a.table).cmp(&(&b.producer_id, &b.table)));
    out
}
