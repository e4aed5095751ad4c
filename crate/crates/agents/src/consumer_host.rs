//! Consumer endpoints. HISTORY and LATEST queries are mediated and answered
//! in the request; a CONTINUOUS query becomes a hosted consumer that
//! registers, subscribes to its producers and buffers what they push.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::response::{IntoResponse, Response};
use axum::Json;
use futures::future::{join_all, BoxFuture};
use rgma_core::codec::{decode_any, decode_tuple};
use rgma_core::consumer::{Admission, ContinuousBuffer, ContinuousQuery, DEFAULT_CONSUMER_CAPACITY};
use rgma_core::mediator::{combine, plan, ResultSet, Rows, Target};
use rgma_core::registry::{ConsumerRegistration, ProducerEntry, DEFAULT_TERMINATION_INTERVAL_SEC};
use rgma_core::sql::{bind_select, parse_select, BoundSelect, Projection, SelectQuery};
use rgma_core::{QueryType, TableDef, Tuple};
use serde::Deserialize;
use tokio::task::JoinHandle;

use crate::agent::Agent;
use crate::client::{AgentClient, ClientError, RegistryClient};
use crate::error::{ApiError, ApiResult};
use crate::lease::{self, LeaseHolder};
use crate::protocol::*;

type SourceFilter = Box<dyn Fn(&ProducerEntry) -> bool + Send + Sync>;

pub struct ConsumerHost {
    pub id: String,
    pub endpoint: String,
    query: SelectQuery,
    cq: ContinuousQuery,
    pub(crate) buffer: ContinuousBuffer,
    replay: bool,
    interval_sec: u32,
    accept_source: Option<SourceFilter>,
    registry: RegistryClient,
    client: AgentClient,
    received: AtomicU64,
    tasks: Mutex<Vec<JoinHandle<()>>>,
}

impl ConsumerHost {
    pub fn bound(&self) -> &BoundSelect {
        self.cq.query()
    }

    fn registration(&self) -> ConsumerRegistration {
        ConsumerRegistration {
            consumer_id: Some(self.id.clone()),
            endpoint: self.endpoint.clone(),
            query: self.query.clone(),
            query_type: QueryType::Continuous,
            termination_interval_sec: self.interval_sec,
        }
    }

    /// Subscribes to `entry` unless it is ineligible, filtered out or
    /// already a source. Returns whether a subscription was opened.
    pub(crate) async fn offer(&self, entry: &ProducerEntry) -> bool {
        if self.accept_source.as_ref().is_some_and(|f| !f(entry)) {
            return false;
        }
        if self.cq.admit(entry) != Admission::New {
            return false;
        }
        let req = SubscribeRequest {
            query: self.query.to_string(),
            sink: format!("{}/push?producer={}", self.endpoint, entry.producer_id),
            replay: self.replay,
        };
        match self.client.subscribe(&entry.endpoint, &req).await {
            Ok(r) => {
                tracing::debug!(consumer = %self.id, producer = %entry.producer_id, "subscribed");
                self.cq.subscribed(&entry.producer_id, r.subscription_id);
                true
            }
            Err(e) => {
                tracing::warn!(consumer = %self.id, producer = %entry.producer_id, "subscribe failed: {e}");
                self.cq.forget(&entry.producer_id);
                false
            }
        }
    }

    async fn offer_all(&self, entries: &[ProducerEntry]) {
        join_all(entries.iter().map(|e| self.offer(e))).await;
    }

    fn accept_lines(&self, body: &str) -> Result<usize, ApiError> {
        let def = &self.bound().tables[0];
        let mut tuples: Vec<Tuple> = Vec::new();
        for line in body.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            tuples.push(decode_tuple(line, def)?);
        }
        let n = tuples.len();
        self.received.fetch_add(n as u64, Ordering::Relaxed);
        let query = self.bound();
        self.buffer.push_all(tuples.into_iter().filter(|t| query.accepts(&[t])));
        Ok(n)
    }

    pub(crate) fn stats(&self) -> ConsumerStats {
        ConsumerStats {
            id: self.id.clone(),
            query: self.query.to_string(),
            buffered: self.buffer.len(),
            dropped: self.buffer.dropped(),
            received: self.received.load(Ordering::Relaxed),
            sources: self
                .cq
                .sources()
                .into_iter()
                .map(|s| SourceInfo { producer_id: s.producer_id, subscription_id: s.subscription_id })
                .collect(),
        }
    }

    pub(crate) fn abort(&self) {
        for t in self.tasks.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            t.abort();
        }
    }
}

impl LeaseHolder for ConsumerHost {
    fn lease_id(&self) -> &str {
        &self.id
    }

    fn reregister(self: Arc<Self>) -> BoxFuture<'static, Result<(), ClientError>> {
        Box::pin(async move {
            for def in &self.bound().tables {
                self.registry.create_table(&def.to_string()).await?;
            }
            let registered = self.registry.register_consumer(&self.registration()).await?;
            self.offer_all(&registered.producers).await;
            Ok(())
        })
    }

    /// Polls the registry as a fallback for lost notifications.
    fn renewed(self: Arc<Self>) -> BoxFuture<'static, ()> {
        Box::pin(async move {
            match self.registry.lookup_query(&self.query.to_string(), QueryType::Continuous).await {
                Ok(entries) => self.offer_all(&entries).await,
                Err(e) => tracing::debug!(consumer = %self.id, "poll failed: {e}"),
            }
        })
    }
}

async fn fetch_defs(registry: &RegistryClient, query: &SelectQuery) -> Result<Vec<TableDef>, ApiError> {
    let mut defs: Vec<TableDef> = Vec::new();
    for t in &query.tables {
        if defs.iter().any(|d| d.is_named(&t.name)) {
            continue;
        }
        defs.push(registry.table(&t.name).await?.def);
    }
    Ok(defs)
}

/// Options for a hosted continuous consumer.
pub(crate) struct ContinuousOptions {
    pub replay: bool,
    pub interval_sec: u32,
    pub capacity: usize,
    pub accept_source: Option<SourceFilter>,
}

pub(crate) async fn start_continuous(
    agent: &Arc<Agent>,
    query: SelectQuery,
    opts: ContinuousOptions,
) -> Result<Arc<ConsumerHost>, ApiError> {
    if query.tables.len() != 1 {
        return Err(ApiError::bad_request("a continuous query reads exactly one table"));
    }
    let registry = agent.registry_client();
    let defs = fetch_defs(&registry, &query).await?;
    let bound = bind_select(&query, &defs, agent.now_ms())?;
    let id = format!("c-{}", uuid::Uuid::new_v4().simple());
    let endpoint = agent.consumer_endpoint(&id);
    let host = Arc::new(ConsumerHost {
        id: id.clone(),
        endpoint,
        query,
        cq: ContinuousQuery::new(bound),
        buffer: ContinuousBuffer::new(opts.capacity),
        replay: opts.replay,
        interval_sec: opts.interval_sec,
        accept_source: opts.accept_source,
        registry: registry.clone(),
        client: agent.client(),
        received: AtomicU64::new(0),
        tasks: Mutex::default(),
    });
    agent.add_consumer(host.clone());
    let registered = match registry.register_consumer(&host.registration()).await {
        Ok(r) => r,
        Err(e) => {
            agent.remove_consumer(&id);
            return Err(e.into());
        }
    };
    host.offer_all(&registered.producers).await;
    let lease = lease::spawn(host.clone(), registry, &agent.config, opts.interval_sec);
    host.tasks.lock().unwrap_or_else(|p| p.into_inner()).push(lease);
    tracing::info!(%id, query = %host.query, sources = host.cq.sources().len(), "continuous consumer started");
    Ok(host)
}

/// Mediates a HISTORY or LATEST query across the producers the registry
/// names, allowing each at most the request timeout.
pub async fn one_shot(agent: &Agent, sql: &str, query_type: QueryType) -> Result<ResultSet, ApiError> {
    if query_type == QueryType::Continuous {
        return Err(ApiError::bad_request("continuous queries are started, not answered"));
    }
    let query = parse_select(sql)?;
    let registry = agent.registry_client();
    let defs = fetch_defs(&registry, &query).await?;
    let bound = bind_select(&query, &defs, agent.now_ms())?;
    let entries = registry.lookup_query(&query.to_string(), query_type).await?;
    let plan = plan(&bound, query_type, &entries);
    // LATEST sources send their whole current set: the filter may only be
    // applied once current values are known across all of them.
    let sent = match query_type {
        QueryType::Latest => SelectQuery::star(query.tables[0].name.clone(), None),
        _ => SelectQuery { projection: Projection::Star, ..query.clone() },
    };
    let req = ProducerQueryRequest { query: sent.to_string(), query_type };
    let client = agent.client();
    let timeout = agent.config.request_timeout();
    let asks = plan.targets.iter().map(|t| {
        let (client, req, defs) = (&client, &req, &bound.tables);
        async move {
            let answer = tokio::time::timeout(timeout, client.query_producer(&t.endpoint, req)).await;
            let rows = match answer {
                Err(_) => Err(format!("no answer within {timeout:?}")),
                Ok(Err(e)) => Err(e.to_string()),
                Ok(Ok(r)) => decode_rows(r, defs),
            };
            (t.clone(), rows)
        }
    });
    let outcomes: Vec<(Target, Result<Rows, String>)> = join_all(asks).await;
    Ok(ResultSet::new(&bound, combine(&plan, &bound, outcomes)))
}

fn decode_rows(r: ProducerQueryResponse, defs: &[TableDef]) -> Result<Rows, String> {
    let dec = |l: &String| decode_any(l, defs).map_err(|e| e.to_string());
    match (r.tuples, r.pairs) {
        (Some(ts), None) => ts.iter().map(dec).collect::<Result<_, _>>().map(Rows::Single),
        (None, Some(ps)) => ps.iter().map(|(a, b)| Ok((dec(a)?, dec(b)?))).collect::<Result<_, _>>().map(Rows::Joined),
        _ => Err("answer has neither tuples nor pairs".into()),
    }
}

pub(crate) async fn create(State(agent): State<Arc<Agent>>, Json(req): Json<CreateConsumerRequest>) -> Result<Response, ApiError> {
    if req.query_type != QueryType::Continuous {
        return Ok(Json(one_shot(&agent, &req.query, req.query_type).await?).into_response());
    }
    let opts = ContinuousOptions {
        replay: req.replay,
        interval_sec: req.termination_interval_sec.unwrap_or(DEFAULT_TERMINATION_INTERVAL_SEC),
        capacity: req.buffer_capacity.unwrap_or(DEFAULT_CONSUMER_CAPACITY),
        accept_source: None,
    };
    let host = start_continuous(&agent, parse_select(&req.query)?, opts).await?;
    let created = ConsumerCreated { id: host.id.clone(), endpoint: host.endpoint.clone(), columns: host.bound().column_names() };
    Ok(Json(created).into_response())
}

fn hosted(agent: &Agent, id: &str) -> Result<Arc<ConsumerHost>, ApiError> {
    agent.consumer(id).ok_or_else(|| ApiError::not_found(format!("no consumer {id} here")))
}

/// Unsubscribes from every source and unregisters.
pub(crate) async fn close(agent: &Arc<Agent>, id: &str) -> Result<Arc<ConsumerHost>, ApiError> {
    let host = agent.remove_consumer(id).ok_or_else(|| ApiError::not_found(format!("no consumer {id} here")))?;
    host.abort();
    let sources = host.cq.sources();
    join_all(sources.iter().filter_map(|s| {
        let sid = s.subscription_id.as_ref()?;
        Some(host.client.unsubscribe(&s.endpoint, sid))
    }))
    .await;
    if let Err(e) = host.registry.unregister_consumer(id).await {
        tracing::warn!(%id, "unregister failed: {e}");
    }
    Ok(host)
}

pub(crate) async fn delete(State(agent): State<Arc<Agent>>, Path(id): Path<String>) -> ApiResult<Removed> {
    close(&agent, &id).await?;
    Ok(Json(Removed { removed: true }))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct PopParams {
    max: Option<usize>,
    timeout_ms: Option<u64>,
}

pub(crate) async fn pop(
    State(agent): State<Arc<Agent>>,
    Path(id): Path<String>,
    Query(p): Query<PopParams>,
) -> ApiResult<PopResponse> {
    let host = hosted(&agent, &id)?;
    let timeout = Duration::from_millis(p.timeout_ms.unwrap_or(0).min(60_000));
    let tuples = host.buffer.pop(p.max.unwrap_or(1000).max(1), timeout).await;
    let q = host.bound();
    Ok(Json(PopResponse {
        columns: q.column_names(),
        rows: tuples.iter().map(|t| q.project(&[t])).collect(),
        dropped: host.buffer.dropped(),
    }))
}

pub(crate) async fn notify(
    State(agent): State<Arc<Agent>>,
    Path(id): Path<String>,
    Json(req): Json<NotifyRequest>,
) -> ApiResult<Ack> {
    let host = hosted(&agent, &id)?;
    let opened = host.offer(&req.producer).await;
    Ok(Json(Ack { accepted: usize::from(opened) }))
}

pub(crate) async fn push(State(agent): State<Arc<Agent>>, Path(id): Path<String>, body: String) -> ApiResult<Ack> {
    let host = hosted(&agent, &id)?;
    Ok(Json(Ack { accepted: host.accept_lines(&body)? }))
}

pub(crate) async fn stats(State(agent): State<Arc<Agent>>, Path(id): Path<String>) -> ApiResult<ConsumerStats> {
    Ok(Json(hosted(&agent, &id)?.stats()))
}
