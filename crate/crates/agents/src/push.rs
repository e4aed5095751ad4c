//! Stream delivery from a producer subscription to its consumer sink.
//!
//! One task per subscription drains the buffer and posts batches as chunked
//! bodies of canonical lines, so delivery order is insert order. A failed
//! batch is put back and retried; after too many consecutive failures the
//! subscription is dropped, which is how subscriptions of vanished
//! consumers are collected.

use std::sync::Arc;
use std::time::Duration;

use rgma_core::codec::encode_tuple;
use rgma_core::producer::{Producer, Subscription};
use tokio::task::JoinHandle;

use crate::client::Http;
use crate::config::AgentConfig;

pub(crate) fn spawn(producer: Arc<Producer>, sub: Arc<Subscription>, http: Http, config: &AgentConfig) -> JoinHandle<()> {
    let idle = Duration::from_millis(config.push_idle_ms);
    let max_failures = config.push_max_failures;
    let batch = config.push_batch;
    tokio::spawn(async move {
        let def = sub.query().tables[0].clone();
        let mut failures = 0u32;
        loop {
            let tuples = sub.drain(batch);
            let lines: Vec<String> = if tuples.is_empty() {
                if sub.is_closed() {
                    return;
                }
                tokio::select! {
                    _ = sub.changed() => continue,
                    _ = tokio::time::sleep(idle) => vec!["# idle\n".to_string()],
                }
            } else {
                tuples.iter().map(|t| encode_tuple(&def, t) + "\n").collect()
            };
            match http.post_lines(sub.sink(), lines).await {
                Ok(_) => failures = 0,
                Err(e) => {
                    failures += 1;
                    sub.undrain(tuples);
                    tracing::debug!(sub = sub.id(), failures, "push failed: {e}");
                    if failures >= max_failures {
                        tracing::info!(sub = sub.id(), sink = sub.sink(), "dropping subscription after {failures} failed pushes");
                        producer.unsubscribe(sub.id());
                        return;
                    }
                    tokio::time::sleep(Duration::from_millis(100 * u64::from(failures))).await;
                }
            }
        }
    })
}
