//! Archiver endpoints. An archiver owns its target producer and runs one
//! pipeline per table: a hosted continuous consumer feeding a batcher whose
//! batches are inserted into the target with their original timestamps.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use rgma_core::archiver::{ArchiverSpec, Batcher, TableProgress};
use rgma_core::codec::encode_tuple;
use rgma_core::consumer::DEFAULT_CONSUMER_CAPACITY;
use rgma_core::registry::DEFAULT_TERMINATION_INTERVAL_SEC;
use rgma_core::sql::SelectQuery;
use rgma_core::{Clock, TableDef, Tuple};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::agent::Agent;
use crate::client::AgentClient;
use crate::consumer_host::{self, ConsumerHost, ContinuousOptions};
use crate::error::{ApiError, ApiResult};
use crate::protocol::*;

/// Input buffer per archived table. Large, so that bursts are absorbed
/// rather than dropped while a batch is being inserted.
const INPUT_CAPACITY: usize = 10 * DEFAULT_CONSUMER_CAPACITY;

struct Progress {
    tables: Vec<TableProgress>,
    batched: Vec<usize>,
    insert_failures: u64,
}

pub struct ArchiverHost {
    pub id: String,
    spec: ArchiverSpec,
    target_endpoint: String,
    inputs: Vec<Arc<ConsumerHost>>,
    progress: Arc<Mutex<Progress>>,
    clock: Arc<dyn Clock>,
    stop: watch::Sender<bool>,
    pipelines: Mutex<Vec<JoinHandle<()>>>,
    client: AgentClient,
}

impl ArchiverHost {
    fn progress(&self) -> std::sync::MutexGuard<'_, Progress> {
        self.progress.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn stats(&self, running: bool) -> ArchiverStats {
        let now = self.clock.now_ms();
        let p = self.progress();
        ArchiverStats {
            id: self.id.clone(),
            target_producer_id: self.spec.target_producer_id.clone(),
            running,
            tables: p.tables.iter().map(|t| t.at(now)).collect(),
            pending: self.inputs.iter().map(|c| c.buffer.len()).sum::<usize>() + p.batched.iter().sum::<usize>(),
            dropped: self.inputs.iter().map(|c| c.buffer.dropped()).sum(),
            insert_failures: p.insert_failures,
        }
    }

    pub(crate) fn abort(&self) {
        for t in self.pipelines.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            t.abort();
        }
        for c in &self.inputs {
            c.abort();
        }
    }
}

struct Pipeline {
    index: usize,
    def: TableDef,
    input: Arc<ConsumerHost>,
    batch_size: usize,
    batch_ms: u64,
    owner: String,
    target: String,
    client: AgentClient,
    progress: Arc<Mutex<Progress>>,
    clock: Arc<dyn Clock>,
}

impl Pipeline {
    async fn insert(&self, batch: Vec<Tuple>, stopping: bool) {
        let req = InsertRequest {
            tuples: batch.iter().map(|t| encode_tuple(&self.def, t)).collect(),
            owner: Some(self.owner.clone()),
            ..Default::default()
        };
        let mut attempt = 0u32;
        loop {
            match self.client.insert(&self.target, &req).await {
                Ok(_) => {
                    let mut p = self.progress.lock().unwrap_or_else(|p| p.into_inner());
                    p.tables[self.index].record(&batch);
                    return;
                }
                Err(e) => {
                    attempt += 1;
                    self.progress.lock().unwrap_or_else(|p| p.into_inner()).insert_failures += 1;
                    tracing::warn!(target = %self.target, attempt, "archive insert failed: {e}");
                    // A rejected batch will not improve with retries.
                    if e.status().is_some_and(|s| (400..500).contains(&s)) || (stopping && attempt >= 3) {
                        return;
                    }
                    tokio::time::sleep(Duration::from_millis((50 * u64::from(attempt)).min(1000))).await;
                }
            }
        }
    }

    fn set_batched(&self, n: usize) {
        self.progress.lock().unwrap_or_else(|p| p.into_inner()).batched[self.index] = n;
    }

    async fn run(self, mut stop: watch::Receiver<bool>) {
        let mut batcher = Batcher::new(self.batch_size, self.batch_ms);
        loop {
            let stopping = *stop.borrow();
            let now = self.clock.now_ms();
            let wait = batcher.due_in(now).map_or(self.batch_ms, |d| d.max(0) as u64);
            let tuples = if stopping {
                self.input.buffer.try_pop(usize::MAX)
            } else {
                tokio::select! {
                    t = self.input.buffer.pop(self.batch_size, Duration::from_millis(wait)) => t,
                    _ = stop.changed() => Vec::new(),
                }
            };
            let now = self.clock.now_ms();
            let mut ready = batcher.push(tuples, now);
            if batcher.is_due(now) || (stopping && batcher.pending() > 0) {
                ready.push(batcher.take());
            }
            self.set_batched(batcher.pending());
            for batch in ready {
                self.insert(batch, stopping).await;
            }
            if stopping && batcher.pending() == 0 && self.input.buffer.is_empty() {
                return;
            }
        }
    }
}

pub(crate) async fn create(
    State(agent): State<Arc<Agent>>,
    Json(spec): Json<CreateArchiverRequest>,
) -> ApiResult<ArchiverCreated> {
    let registry = agent.registry_client();
    let entries = registry.producer(&spec.target_producer_id).await?;
    let first = entries.first().ok_or_else(|| ApiError::not_found("target publishes nothing"))?;
    let (kind, target_endpoint) = (first.kind, first.endpoint.clone());
    let mut target_defs = Vec::new();
    for e in &entries {
        target_defs.push(registry.table(&e.table).await?.def);
    }
    spec.validate(kind, &target_defs)?;

    let id = format!("a-{}", uuid::Uuid::new_v4().simple());
    let client = agent.client();
    client.owner(&target_endpoint, &OwnerRequest { token: id.clone(), release: false }).await?;

    let mut inputs = Vec::new();
    for t in &spec.tables {
        let query = SelectQuery::star(t.table.clone(), t.filter.clone());
        let (target, chosen) = (spec.target_producer_id.clone(), spec.sources.clone());
        let opts = ContinuousOptions {
            replay: false,
            interval_sec: DEFAULT_TERMINATION_INTERVAL_SEC,
            capacity: INPUT_CAPACITY,
            accept_source: Some(Box::new(move |e| {
                e.producer_id != target && chosen.as_ref().is_none_or(|ids| ids.contains(&e.producer_id))
            })),
        };
        match consumer_host::start_continuous(&agent, query, opts).await {
            Ok(c) => inputs.push(c),
            Err(e) => {
                for c in &inputs {
                    let _ = consumer_host::close(&agent, &c.id).await;
                }
                let _ = client.owner(&target_endpoint, &OwnerRequest { token: id.clone(), release: true }).await;
                return Err(e);
            }
        }
    }

    let n = spec.tables.len();
    let progress = Arc::new(Mutex::new(Progress {
        tables: spec.tables.iter().map(|t| TableProgress::new(t.table.clone())).collect(),
        batched: vec![0; n],
        insert_failures: 0,
    }));
    let (stop, stopped) = watch::channel(false);
    let mut pipelines = Vec::new();
    for (index, input) in inputs.iter().enumerate() {
        let def = target_defs.iter().find(|d| d.is_named(&spec.tables[index].table)).expect("validated").clone();
        let p = Pipeline {
            index,
            def,
            input: input.clone(),
            batch_size: spec.batch_size,
            batch_ms: spec.batch_ms,
            owner: id.clone(),
            target: target_endpoint.clone(),
            client: client.clone(),
            progress: progress.clone(),
            clock: agent.clock.clone(),
        };
        pipelines.push(tokio::spawn(p.run(stopped.clone())));
    }
    let host = Arc::new(ArchiverHost {
        id: id.clone(),
        spec,
        target_endpoint,
        inputs,
        progress,
        clock: agent.clock.clone(),
        stop,
        pipelines: Mutex::new(pipelines),
        client,
    });
    agent.add_archiver(host);
    tracing::info!(%id, "archiver started");
    Ok(Json(ArchiverCreated { id }))
}

/// Stops input, flushes everything received, releases the target.
pub(crate) async fn stop(agent: &Arc<Agent>, id: &str) -> Result<ArchiverStats, ApiError> {
    let host = agent.remove_archiver(id).ok_or_else(|| ApiError::not_found(format!("no archiver {id} here")))?;
    for c in &host.inputs {
        let _ = consumer_host::close(agent, &c.id).await;
    }
    let _ = host.stop.send(true);
    let pipelines: Vec<_> = host.pipelines.lock().unwrap_or_else(|p| p.into_inner()).drain(..).collect();
    for p in pipelines {
        if let Err(e) = p.await {
            tracing::warn!(%id, "pipeline ended abnormally: {e}");
        }
    }
    let release = OwnerRequest { token: host.id.clone(), release: true };
    if let Err(e) = host.client.owner(&host.target_endpoint, &release).await {
        tracing::warn!(%id, "release failed: {e}");
    }
    Ok(host.stats(false))
}

pub(crate) async fn delete(State(agent): State<Arc<Agent>>, Path(id): Path<String>) -> ApiResult<ArchiverStats> {
    Ok(Json(stop(&agent, &id).await?))
}

pub(crate) async fn stats(State(agent): State<Arc<Agent>>, Path(id): Path<String>) -> ApiResult<ArchiverStats> {
    let host = agent.archiver(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no archiver {id} here")))?;
    Ok(Json(host.stats(true)))
}
