use std::collections::VecDeque;
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use crate::sql::BoundSelect;
use crate::tuple::Tuple;

/// A bounded FIFO that drops its oldest entry on overflow.
#[derive(Debug)]
pub struct DropOldest<T> {
    items: VecDeque<T>,
    capacity: usize,
    dropped: u64,
}

impl<T> DropOldest<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "capacity must be positive");
        DropOldest { items: VecDeque::new(), capacity, dropped: 0 }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.dropped += 1;
        }
        self.items.push_back(item);
    }

    pub fn take(&mut self, max: usize) -> Vec<T> {
        let n = max.min(self.items.len());
        self.items.drain(..n).collect()
    }

    /// Puts items taken earlier back at the front, as if never taken. Items
    /// that no longer fit count as dropped.
    pub fn restore(&mut self, items: Vec<T>) {
        for item in items.into_iter().rev() {
            if self.items.len() == self.capacity {
                self.dropped += 1;
            } else {
                self.items.push_front(item);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

#[derive(Debug)]
struct State {
    buf: DropOldest<Tuple>,
    delivered: u64,
    closed: bool,
}

/// A continuous query attached to a stream producer. Matching inserts are
/// buffered here until the transport drains them.
#[derive(Debug)]
pub struct Subscription {
    id: String,
    query: BoundSelect,
    sink: String,
    state: Mutex<State>,
    wake: Notify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubscriptionStats {
    pub id: String,
    pub sink: String,
    pub depth: usize,
    pub dropped: u64,
    pub delivered: u64,
}

impl Subscription {
    pub(crate) fn new(id: String, query: BoundSelect, sink: String, capacity: usize) -> Self {
        Subscription {
            id,
            query,
            sink,
            state: Mutex::new(State { buf: DropOldest::new(capacity), delivered: 0, closed: false }),
            wake: Notify::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sink(&self) -> &str {
        &self.sink
    }

    pub fn query(&self) -> &BoundSelect {
        &self.query
    }

    pub fn wants(&self, t: &Tuple) -> bool {
        self.query.tables[0].is_named(t.table()) && self.query.accepts(&[t])
    }

    pub(crate) fn offer(&self, t: &Tuple) {
        if self.wants(t) {
            let mut st = self.lock();
            if !st.closed {
                st.buf.push(t.clone());
            }
        }
    }

    pub(crate) fn wake(&self) {
        self.wake.notify_one();
    }

    /// Removes up to `max` buffered tuples in insert order.
    pub fn drain(&self, max: usize) -> Vec<Tuple> {
        let mut st = self.lock();
        let out = st.buf.take(max);
        st.delivered += out.len() as u64;
        out
    }

    /// Returns tuples that could not be delivered to the front of the buffer.
    pub fn undrain(&self, tuples: Vec<Tuple>) {
        let mut st = self.lock();
        st.delivered -= tuples.len() as u64;
        st.buf.restore(tuples);
    }

    /// Resolves when tuples may be available or the subscription closed.
    pub async fn changed(&self) {
        self.wake.notified().await
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.wake.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn depth(&self) -> usize {
        self.lock().buf.len()
    }

    pub fn dropped(&self) -> u64 {
        self.lock().buf.dropped()
    }

    pub fn stats(&self) -> SubscriptionStats {
        let st = self.lock();
        SubscriptionStats {
            id: self.id.clone(),
            sink: self.sink.clone(),
            depth: st.buf.len(),
            dropped: st.buf.dropped(),
            delivered: st.delivered,
        }
    }
}
