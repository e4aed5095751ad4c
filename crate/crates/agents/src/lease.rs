//! Heartbeat loop keeping a registration alive.

use std::sync::Arc;

use futures::future::BoxFuture;
use tokio::task::JoinHandle;

use crate::client::{ClientError, RegistryClient};
use crate::config::AgentConfig;

/// A registered client whose registration can be renewed or redone.
pub(crate) trait LeaseHolder: Send + Sync + 'static {
    fn lease_id(&self) -> &str;

    /// Registers again under the same id, after the registry forgot it.
    fn reregister(self: Arc<Self>) -> BoxFuture<'static, Result<(), ClientError>>;

    /// Called after every successful heartbeat.
    fn renewed(self: Arc<Self>) -> BoxFuture<'static, ()> {
        Box::pin(async {})
    }
}

pub(crate) fn spawn<H: LeaseHolder>(
    holder: Arc<H>,
    registry: RegistryClient,
    config: &AgentConfig,
    interval_sec: u32,
) -> JoinHandle<()> {
    let period = config.heartbeat_period(interval_sec);
    let config = config.clone();
    tokio::spawn(async move {
        let mut failures = 0u32;
        let mut delay = period;
        loop {
            tokio::time::sleep(delay).await;
            let outcome = match registry.heartbeat(holder.lease_id()).await {
                Ok(_) => {
                    holder.clone().renewed().await;
                    Ok(())
                }
                Err(e) if e.is_not_found() => {
                    tracing::info!(id = holder.lease_id(), "registry forgot us, registering again");
                    holder.clone().reregister().await
                }
                Err(e) => Err(e),
            };
            match outcome {
                Ok(()) => {
                    failures = 0;
                    delay = period;
                }
                Err(e) => {
                    failures += 1;
                    delay = config.backoff(period, failures);
                    tracing::warn!(id = holder.lease_id(), failures, "heartbeat failed: {e}");
                }
            }
        }
    })
}
