//! One agent process: an HTTP server hosting any mix of a registry,
//! producers, consumers and archivers.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::routing::{delete, get, post};
use axum::Router;
use rgma_core::registry::Registry;
use rgma_core::{Clock, SystemClock};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::archiver_host::{self, ArchiverHost};
use crate::client::{AgentClient, Http, RegistryClient};
use crate::config::AgentConfig;
use crate::consumer_host::{self, ConsumerHost};
use crate::producer_host::{self, ProducerHost};
use crate::registry_host;

pub struct Agent {
    pub(crate) config: AgentConfig,
    pub(crate) base_url: String,
    pub(crate) registry_url: String,
    pub(crate) http: Http,
    pub(crate) registry: Option<Arc<Registry>>,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) producers: RwLock<HashMap<String, Arc<ProducerHost>>>,
    pub(crate) consumers: RwLock<HashMap<String, Arc<ConsumerHost>>>,
    pub(crate) archivers: RwLock<HashMap<String, Arc<ArchiverHost>>>,
    tasks: Mutex<Vec<JoinHandle<()>>>,
}

fn read<T>(l: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(|p| p.into_inner())
}

fn write<T>(l: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(|p| p.into_inner())
}

impl Agent {
    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn registry_url(&self) -> &str {
        &self.registry_url
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    pub fn registry_client(&self) -> RegistryClient {
        RegistryClient::new(self.http.clone(), self.registry_url.clone())
    }

    pub fn client(&self) -> AgentClient {
        AgentClient::new(self.http.clone(), self.base_url.clone())
    }

    /// The hosted registry engine, if any.
    pub fn registry(&self) -> Option<&Arc<Registry>> {
        self.registry.as_ref()
    }

    pub(crate) fn producer(&self, id: &str) -> Option<Arc<ProducerHost>> {
        read(&self.producers).get(id).cloned()
    }

    pub(crate) fn consumer(&self, id: &str) -> Option<Arc<ConsumerHost>> {
        read(&self.consumers).get(id).cloned()
    }

    pub(crate) fn archiver(&self, id: &str) -> Option<Arc<ArchiverHost>> {
        read(&self.archivers).get(id).cloned()
    }

    pub(crate) fn add_producer(&self, host: Arc<ProducerHost>) {
        write(&self.producers).insert(host.id.clone(), host);
    }

    pub(crate) fn add_consumer(&self, host: Arc<ConsumerHost>) {
        write(&self.consumers).insert(host.id.clone(), host);
    }

    pub(crate) fn add_archiver(&self, host: Arc<ArchiverHost>) {
        write(&self.archivers).insert(host.id.clone(), host);
    }

    pub(crate) fn remove_producer(&self, id: &str) -> Option<Arc<ProducerHost>> {
        write(&self.producers).remove(id)
    }

    pub(crate) fn remove_consumer(&self, id: &str) -> Option<Arc<ConsumerHost>> {
        write(&self.consumers).remove(id)
    }

    pub(crate) fn remove_archiver(&self, id: &str) -> Option<Arc<ArchiverHost>> {
        write(&self.archivers).remove(id)
    }

    pub fn producer_ids(&self) -> Vec<String> {
        let mut v: Vec<String> = read(&self.producers).keys().cloned().collect();
        v.sort();
        v
    }

    pub fn consumer_ids(&self) -> Vec<String> {
        let mut v: Vec<String> = read(&self.consumers).keys().cloned().collect();
        v.sort();
        v
    }

    pub(crate) fn producer_endpoint(&self, id: &str) -> String {
        format!("{}/producer/{id}", self.base_url)
    }

    pub(crate) fn consumer_endpoint(&self, id: &str) -> String {
        format!("{}/consumer/{id}", self.base_url)
    }

    fn stop_background(&self) {
        for t in self.tasks.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            t.abort();
        }
        let archivers: Vec<_> = write(&self.archivers).drain().map(|(_, a)| a).collect();
        for a in archivers {
            a.abort();
        }
        let consumers: Vec<_> = write(&self.consumers).drain().map(|(_, c)| c).collect();
        for c in consumers {
            c.abort();
        }
        let producers: Vec<_> = write(&self.producers).drain().map(|(_, p)| p).collect();
        for p in producers {
            p.abort();
        }
    }

    /// Closes every hosted component cleanly: archivers flush, consumers
    /// unsubscribe, and everything unregisters.
    async fn close_all(self: &Arc<Self>) {
        let archivers: Vec<String> = read(&self.archivers).keys().cloned().collect();
        for id in archivers {
            let _ = archiver_host::stop(self, &id).await;
        }
        for id in self.consumer_ids() {
            let _ = consumer_host::close(self, &id).await;
        }
        for id in self.producer_ids() {
            let _ = producer_host::close(self, &id).await;
        }
    }
}

pub fn router(agent: Arc<Agent>) -> Router {
    Router::new()
        .route("/registry/tables", post(registry_host::create_table).get(registry_host::tables))
        .route("/registry/tables/{name}", get(registry_host::table))
        .route("/registry/producers", post(registry_host::register_producer).get(registry_host::lookup))
        .route("/registry/producers/{id}", get(registry_host::producer).delete(registry_host::unregister_producer))
        .route("/registry/consumers", post(registry_host::register_consumer))
        .route("/registry/consumers/{id}", get(registry_host::consumer).delete(registry_host::unregister_consumer))
        .route("/registry/heartbeat", post(registry_host::heartbeat))
        .route("/producer", post(producer_host::create))
        .route("/producer/{id}", delete(producer_host::delete))
        .route("/producer/{id}/insert", post(producer_host::insert))
        .route("/producer/{id}/query", post(producer_host::query))
        .route("/producer/{id}/subscribe", post(producer_host::subscribe))
        .route("/producer/{id}/subscribe/{sid}", delete(producer_host::unsubscribe))
        .route("/producer/{id}/stats", get(producer_host::stats))
        .route("/producer/{id}/owner", post(producer_host::owner))
        .route("/consumer", post(consumer_host::create))
        .route("/consumer/{id}", delete(consumer_host::delete))
        .route("/consumer/{id}/pop", get(consumer_host::pop))
        .route("/consumer/{id}/notify", post(consumer_host::notify))
        .route("/consumer/{id}/push", post(consumer_host::push))
        .route("/consumer/{id}/stats", get(consumer_host::stats))
        .route("/archiver", post(archiver_host::create))
        .route("/archiver/{id}", delete(archiver_host::delete))
        .route("/archiver/{id}/stats", get(archiver_host::stats))
        .with_state(agent)
}

/// A running agent.
pub struct AgentHandle {
    agent: Arc<Agent>,
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    server: Option<JoinHandle<()>>,
}

impl AgentHandle {
    pub async fn start(config: AgentConfig) -> std::io::Result<AgentHandle> {
        Self::start_with_clock(config, Arc::new(SystemClock)).await
    }

    pub async fn start_with_clock(config: AgentConfig, clock: Arc<dyn Clock>) -> std::io::Result<AgentHandle> {
        config.validate().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        let listener = tokio::net::TcpListener::bind(config.listen_address).await?;
        let addr = listener.local_addr()?;
        let base_url = config.public_url.clone().unwrap_or_else(|| format!("http://{addr}"));
        let registry_url = match (&config.registry_url, config.host_registry) {
            (Some(url), _) => url.clone(),
            (None, true) => base_url.clone(),
            (None, false) => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    "no registry: set registryUrl or host one",
                ))
            }
        };
        let registry = config.host_registry.then(|| Arc::new(Registry::new(clock.clone())));
        let agent = Arc::new(Agent {
            http: Http::new(config.request_timeout()),
            config,
            base_url,
            registry_url,
            registry,
            clock,
            producers: RwLock::default(),
            consumers: RwLock::default(),
            archivers: RwLock::default(),
            tasks: Mutex::default(),
        });
        if let Some(reg) = &agent.registry {
            let task = registry_host::spawn_sweeper(reg.clone(), Duration::from_millis(agent.config.sweep_interval_ms));
            agent.tasks.lock().unwrap_or_else(|p| p.into_inner()).push(task);
        }
        let (stop, stopped) = oneshot::channel::<()>();
        let app = router(agent.clone());
        let server = tokio::spawn(async move {
            let served = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = stopped.await;
            });
            if let Err(e) = served.await {
                tracing::error!("server stopped: {e}");
            }
        });
        tracing::info!(url = %agent.base_url, registry = %agent.registry_url, "agent listening");
        Ok(AgentHandle { agent, addr, stop: Some(stop), server: Some(server) })
    }

    pub fn agent(&self) -> &Arc<Agent> {
        &self.agent
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> &str {
        &self.agent.base_url
    }

    pub fn client(&self) -> AgentClient {
        self.agent.client()
    }

    pub fn registry_client(&self) -> RegistryClient {
        self.agent.registry_client()
    }

    /// Closes hosted components cleanly, then stops serving.
    pub async fn shutdown(mut self) {
        self.agent.close_all().await;
        self.stop_server().await;
    }

    /// Stops abruptly, as a crash would: nothing is unregistered and
    /// background work is dropped mid-flight.
    pub async fn kill(mut self) {
        self.agent.stop_background();
        self.stop_server().await;
    }

    async fn stop_server(&mut self) {
        self.agent.stop_background();
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(mut server) = self.server.take() {
            if tokio::time::timeout(Duration::from_secs(2), &mut server).await.is_err() {
                server.abort();
            }
        }
    }

    /// Serves until the process is stopped.
    pub async fn wait(mut self) {
        if let Some(server) = self.server.take() {
            let _ = server.await;
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        if self.server.is_some() {
            self.agent.stop_background();
            if let Some(stop) = self.stop.take() {
                let _ = stop.send(());
            }
        }
    }
}
