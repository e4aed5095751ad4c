//! Consumer-side state for continuous queries: the set of producers a
//! query has subscribed to and the buffer tuples wait in until popped.

use std::collections::HashMap;
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use crate::mediator::{eligible, QueryType};
use crate::producer::DropOldest;
use crate::registry::ProducerEntry;
use crate::sql::BoundSelect;
use crate::tuple::Tuple;

pub const DEFAULT_CONSUMER_CAPACITY: usize = 10_000;

/// Tuples delivered to a continuous query, waiting to be popped.
#[derive(Debug)]
pub struct ContinuousBuffer {
    buf: Mutex<DropOldest<Tuple>>,
    wake: Notify,
}

impl ContinuousBuffer {
    pub fn new(capacity: usize) -> Self {
        ContinuousBuffer { buf: Mutex::new(DropOldest::new(capacity)), wake: Notify::new() }
    }

    fn lock(&self) -> MutexGuard<'_, DropOldest<Tuple>> {
        self.buf.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn push_all(&self, tuples: impl IntoIterator<Item = Tuple>) {
        let mut buf = self.lock();
        for t in tuples {
            buf.push(t);
        }
        drop(buf);
        self.wake.notify_one();
    }

    pub fn try_pop(&self, max: usize) -> Vec<Tuple> {
        self.lock().take(max)
    }

    /// Waits up to `timeout` for at least one tuple, then returns up to
    /// `max` of them in arrival order.
    pub async fn pop(&self, max: usize, timeout: Duration) -> Vec<Tuple> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let got = self.try_pop(max);
            if !got.is_empty() || max == 0 {
                return got;
            }
            if tokio::time::timeout_at(deadline, self.wake.notified()).await.is_err() {
                return self.try_pop(max);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.lock().dropped()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    /// Not yet subscribed: the caller should open a subscription.
    New,
    Known,
    Ineligible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Source {
    pub producer_id: String,
    pub endpoint: String,
    pub subscription_id: Option<String>,
}

/// The producers feeding one continuous query.
#[derive(Debug)]
pub struct ContinuousQuery {
    query: BoundSelect,
    sources: Mutex<HashMap<String, Source>>,
}

impl ContinuousQuery {
    pub fn new(query: BoundSelect) -> Self {
        ContinuousQuery { query, sources: Mutex::new(HashMap::new()) }
    }

    pub fn query(&self) -> &BoundSelect {
        &self.query
    }

    fn lock(&self) -> MutexGuard<'_, HashMap<String, Source>> {
        self.sources.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Records `entry` as a source if the plan would include it. Duplicate
    /// announcements of the same producer return [`Admission::Known`], also
    /// while the first subscription attempt is still in flight.
    pub fn admit(&self, entry: &ProducerEntry) -> Admission {
        if !eligible(&self.query, QueryType::Continuous, entry) {
            return Admission::Ineligible;
        }
        let mut sources = self.lock();
        if sources.contains_key(&entry.producer_id) {
            return Admission::Known;
        }
        sources.insert(
            entry.producer_id.clone(),
            Source { producer_id: entry.producer_id.clone(), endpoint: entry.endpoint.clone(), subscription_id: None },
        );
        Admission::New
    }

    /// Marks a source as subscribed. A failed subscription should instead be
    /// [`forget`](Self::forget)-ten so a later announcement retries it.
    pub fn subscribed(&self, producer_id: &str, subscription_id: String) {
        if let Some(s) = self.lock().get_mut(producer_id) {
            s.subscription_id = Some(subscription_id);
        }
    }

    pub fn forget(&self, producer_id: &str) -> Option<Source> {
        self.lock().remove(producer_id)
    }

    pub fn sources(&self) -> Vec<Source> {
        let mut v: Vec<Source> = self.lock().values().cloned().collect();
        v.sort_by(|a, b| a.producer_id.cmp(&b.producer_id));
        v
    }

    pub fn source_for_subscription(&self, subscription_id: &str) -> Option<Source> {
        self.lock().values().find(|s| s.subscription_id.as_deref() == Some(subscription_id)).cloned()
    }
}
