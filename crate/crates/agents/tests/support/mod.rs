#![allow(dead_code)]

use std::future::Future;
use std::time::{Duration, Instant};

use rgma_agents::protocol::{CreateProducerRequest, TableDecl};
use rgma_agents::{AgentConfig, AgentHandle};
use rgma_core::ProducerKind;

pub const CPU: &str = "CREATE TABLE CpuLoad (host STRING(16), site STRING(16), load1 REAL, PRIMARY KEY (host))";

pub fn fast_config() -> AgentConfig {
    AgentConfig {
        request_timeout_ms: 2000,
        sweep_interval_ms: 200,
        notify_retry_ms: 200,
        ..AgentConfig::default()
    }
}

pub async fn registry_agent() -> AgentHandle {
    AgentHandle::start(AgentConfig { host_registry: true, ..fast_config() }).await.unwrap()
}

pub async fn agent_for(registry: &str) -> AgentHandle {
    AgentHandle::start(AgentConfig { registry_url: Some(registry.into()), ..fast_config() }).await.unwrap()
}

pub fn producer(kind: ProducerKind, ddl: &str, view: &str) -> CreateProducerRequest {
    CreateProducerRequest::new(kind, vec![TableDecl { ddl: ddl.into(), view: view.into() }])
}

/// Polls `check` until it yields a value or `limit` passes.
pub async fn eventually<T, F, Fut>(limit: Duration, mut check: F) -> Option<T>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Option<T>>,
{
    let start = Instant::now();
    loop {
        if let Some(v) = check().await {
            return Some(v);
        }
        if start.elapsed() > limit {
            return None;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

/// A TCP forwarder that can be cut and healed, to simulate a partition.
pub struct Proxy {
    pub addr: std::net::SocketAddr,
    open: std::sync::Arc<std::sync::atomic::AtomicBool>,
    conns: std::sync::Arc<std::sync::Mutex<Vec<tokio::task::JoinHandle<()>>>>,
    accept: tokio::task::JoinHandle<()>,
}

impl Proxy {
    pub async fn start(target: std::net::SocketAddr) -> Proxy {
        use std::sync::atomic::Ordering;
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let open = std::sync::Arc::new(std::sync::atomic::AtomicBool::new(true));
        let conns = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let (o, c) = (open.clone(), conns.clone());
        let accept = tokio::spawn(async move {
            loop {
                let Ok((mut inbound, _)) = listener.accept().await else { continue };
                if !o.load(Ordering::SeqCst) {
                    continue;
                }
                let task = tokio::spawn(async move {
                    if let Ok(mut outbound) = tokio::net::TcpStream::connect(target).await {
                        let _ = tokio::io::copy_bidirectional(&mut inbound, &mut outbound).await;
                    }
                });
                c.lock().unwrap().push(task);
            }
        });
        Proxy { addr, open, conns, accept }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn cut(&self) {
        self.open.store(false, std::sync::atomic::Ordering::SeqCst);
        for t in self.conns.lock().unwrap().drain(..) {
            t.abort();
        }
    }

    pub fn heal(&self) {
        self.open.store(true, std::sync::atomic::Ordering::SeqCst);
    }
}

impl Drop for Proxy {
    fn drop(&mut self) {
        self.cut();
        self.accept.abort();
    }
}
