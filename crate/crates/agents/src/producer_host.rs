//! Producer endpoints. Each hosted producer keeps its registry lease, its
//! cleanup schedule and one push task per subscription.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::Json;
use futures::future::BoxFuture;
use rgma_core::codec::{decode_any, encode_tuple};
use rgma_core::mediator::Rows;
use rgma_core::producer::{InsertOutcome, Producer, ProducerConfig, TableSpec};
use rgma_core::registry::{ProducerRegistration, TableView, DEFAULT_TERMINATION_INTERVAL_SEC};
use rgma_core::sql::{parse_create_table, parse_select, parse_view_predicate, SelectQuery};
use rgma_core::{Clock, ProducerKind, RawTuple, TableDef, Value};
use tokio::task::JoinHandle;

use crate::agent::Agent;
use crate::client::{ClientError, Http, RegistryClient};
use crate::error::{ApiError, ApiResult};
use crate::lease::{self, LeaseHolder};
use crate::protocol::*;
use crate::push;

pub struct ProducerHost {
    pub id: String,
    pub producer: Arc<Producer>,
    registration: ProducerRegistration,
    registry: RegistryClient,
    http: Http,
    clock: Arc<dyn Clock>,
    access: Mutex<Vec<AccessRecord>>,
    tasks: Mutex<Vec<JoinHandle<()>>>,
    pushers: Mutex<HashMap<String, JoinHandle<()>>>,
}

impl ProducerHost {
    fn def(&self, table: &str) -> Option<&TableDef> {
        self.producer.defs().iter().find(|d| d.is_named(table))
    }

    fn record(&self, op: &str, query: &str) {
        let rec = AccessRecord { op: op.into(), query: query.into(), at: self.clock.now_ms() };
        self.access.lock().unwrap_or_else(|p| p.into_inner()).push(rec);
    }

    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.access.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub(crate) fn abort(&self) {
        for t in self.tasks.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            t.abort();
        }
        for (_, t) in self.pushers.lock().unwrap_or_else(|p| p.into_inner()).drain() {
            t.abort();
        }
    }

    fn encode(&self, t: &rgma_core::Tuple) -> String {
        encode_tuple(self.def(t.table()).expect("tuples come from own tables"), t)
    }
}

impl LeaseHolder for ProducerHost {
    fn lease_id(&self) -> &str {
        &self.id
    }

    fn reregister(self: Arc<Self>) -> BoxFuture<'static, Result<(), ClientError>> {
        Box::pin(async move {
            for def in self.producer.defs() {
                self.registry.create_table(&def.to_string()).await?;
            }
            self.registry.register_producer(&self.registration).await.map(|_| ())
        })
    }
}

fn handler_for(http: Http, url: String, def: TableDef) -> impl Fn(&SelectQuery) -> Result<Vec<RawTuple>, String> {
    let rt = tokio::runtime::Handle::current();
    move |query: &SelectQuery| {
        let body = serde_json::json!({ "query": query.to_string() });
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = rt
            .block_on(http.post::<_, CanonicalAnswer>(&url, &body))
            .map_err(|e| e.to_string())?
            .rows;
        rows.into_iter()
            .map(|row| {
                let mut raw = RawTuple::new(def.name());
                for (k, v) in row {
                    let v: Value = serde_json::from_value(v).map_err(|e| format!("{k}: {e}"))?;
                    raw = if k.eq_ignore_ascii_case(rgma_core::TIMESTAMP_COLUMN) {
                        raw.at(v.as_i64().ok_or("timestamp must be an integer")?)
                    } else {
                        raw.field(k, v)
                    };
                }
                Ok(raw)
            })
            .collect()
    }
}

#[derive(serde::Deserialize)]
struct CanonicalAnswer {
    rows: Vec<serde_json::Map<String, serde_json::Value>>,
}

pub(crate) async fn create(
    State(agent): State<Arc<Agent>>,
    Json(req): Json<CreateProducerRequest>,
) -> ApiResult<ProducerCreated> {
    let registry = agent.registry_client();
    let mut specs = Vec::new();
    for decl in &req.tables {
        let parsed = parse_create_table(&decl.ddl)?;
        let def = registry.create_table(&parsed.to_string()).await?.def;
        specs.push(TableSpec { def, view: parse_view_predicate(&decl.view)? });
    }
    let mut config = ProducerConfig::new(req.kind, specs);
    if let Some(c) = req.buffer_capacity {
        config.stream_buffer_capacity = c;
    }
    if let Some(w) = req.replay_window {
        config.replay_window = w;
    }
    config.resilient_log_path = req.log_path.as_ref().map(PathBuf::from);
    config.cleanup = req.cleanup.clone();
    config.canonical_timeout = agent.config.request_timeout();
    let clock = agent.clock.clone();
    let producer = tokio::task::spawn_blocking(move || Producer::create(config, clock))
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let producer = Arc::new(producer);
    match (&req.handler_url, req.kind) {
        (Some(url), ProducerKind::Canonical) => {
            let def = producer.defs()[0].clone();
            producer.set_handler(Arc::new(handler_for(agent.http.clone(), url.clone(), def)))?;
        }
        (Some(_), _) => return Err(ApiError::bad_request("handlerUrl is only for CANONICAL producers")),
        (None, _) => {}
    }

    let id = req.producer_id.clone().unwrap_or_else(|| format!("p-{}", uuid::Uuid::new_v4().simple()));
    if agent.producer(&id).is_some() {
        return Err(ApiError::new(axum::http::StatusCode::CONFLICT, format!("producer {id} already hosted here")));
    }
    let endpoint = agent.producer_endpoint(&id);
    let interval = req.termination_interval_sec.unwrap_or(DEFAULT_TERMINATION_INTERVAL_SEC);
    let registration = ProducerRegistration {
        producer_id: Some(id.clone()),
        endpoint: endpoint.clone(),
        kind: req.kind,
        tables: producer.views().map(|(d, v)| TableView { table: d.name().into(), view: v.clone() }).collect(),
        termination_interval_sec: interval,
    };
    let host = Arc::new(ProducerHost {
        id: id.clone(),
        producer: producer.clone(),
        registration,
        registry: registry.clone(),
        http: agent.http.clone(),
        clock: agent.clock.clone(),
        access: Mutex::default(),
        tasks: Mutex::default(),
        pushers: Mutex::default(),
    });
    agent.add_producer(host.clone());
    if let Err(e) = registry.register_producer(&host.registration).await {
        agent.remove_producer(&id);
        producer.close();
        return Err(e.into());
    }

    let mut tasks = vec![lease::spawn(host.clone(), registry, &agent.config, interval)];
    for (i, rule) in producer.cleanup_rules().enumerate() {
        let p = producer.clone();
        let clock = agent.clock.clone();
        let every = Duration::from_secs(u64::from(rule.interval_sec));
        tasks.push(tokio::spawn(async move {
            let mut tick = tokio::time::interval_at(tokio::time::Instant::now() + every, every);
            loop {
                tick.tick().await;
                let removed = p.run_cleanup_rule(i, clock.now_ms());
                tracing::debug!(rule = i, removed, "cleanup ran");
            }
        }));
    }
    host.tasks.lock().unwrap_or_else(|p| p.into_inner()).extend(tasks);
    tracing::info!(%id, kind = %req.kind, "producer created");
    Ok(Json(ProducerCreated { id, endpoint, tables: producer.defs().to_vec() }))
}

fn hosted(agent: &Agent, id: &str) -> Result<Arc<ProducerHost>, ApiError> {
    agent.producer(id).ok_or_else(|| ApiError::not_found(format!("no producer {id} here")))
}

pub(crate) async fn close(agent: &Arc<Agent>, id: &str) -> Result<(), ApiError> {
    let host = agent.remove_producer(id).ok_or_else(|| ApiError::not_found(format!("no producer {id} here")))?;
    host.abort();
    host.producer.close();
    if let Err(e) = host.registry.unregister_producer(id).await {
        tracing::warn!(%id, "unregister failed: {e}");
    }
    Ok(())
}

pub(crate) async fn delete(State(agent): State<Arc<Agent>>, Path(id): Path<String>) -> ApiResult<Removed> {
    close(&agent, &id).await?;
    Ok(Json(Removed { removed: true }))
}

pub(crate) async fn insert(
    State(agent): State<Arc<Agent>>,
    Path(id): Path<String>,
    Json(req): Json<InsertRequest>,
) -> ApiResult<InsertOutcome> {
    let host = hosted(&agent, &id)?;
    let outcome = match (req.sql, req.tuples.is_empty()) {
        (Some(sql), true) => {
            let p = host.producer.clone();
            let owner = req.owner;
            tokio::task::spawn_blocking(move || p.insert_sql(&sql, owner.as_deref())).await
        }
        (None, false) => {
            let defs = host.producer.defs();
            let mut raws = Vec::with_capacity(req.tuples.len());
            for line in &req.tuples {
                let t = decode_any(line, defs)?;
                let def = host.def(t.table()).expect("decoded against own tables");
                raws.push(RawTuple::from_tuple(def, &t));
            }
            let p = host.producer.clone();
            let owner = req.owner;
            tokio::task::spawn_blocking(move || p.insert(raws, owner.as_deref())).await
        }
        _ => return Err(ApiError::bad_request("give either sql or tuples")),
    };
    let outcome = outcome.map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(outcome?))
}

pub(crate) async fn query(
    State(agent): State<Arc<Agent>>,
    Path(id): Path<String>,
    Json(req): Json<ProducerQueryRequest>,
) -> ApiResult<ProducerQueryResponse> {
    let host = hosted(&agent, &id)?;
    host.record("query", &req.query);
    let q = parse_select(&req.query)?;
    let p = host.producer.clone();
    let rows = tokio::task::spawn_blocking(move || p.answer_query(&q, req.query_type))
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(match rows {
        Rows::Single(v) => ProducerQueryResponse { tuples: Some(v.iter().map(|t| host.encode(t)).collect()), pairs: None },
        Rows::Joined(v) => ProducerQueryResponse {
            tuples: None,
            pairs: Some(v.iter().map(|(a, b)| (host.encode(a), host.encode(b))).collect()),
        },
    }))
}

pub(crate) async fn subscribe(
    State(agent): State<Arc<Agent>>,
    Path(id): Path<String>,
    Json(req): Json<SubscribeRequest>,
) -> ApiResult<SubscribeResponse> {
    let host = hosted(&agent, &id)?;
    host.record("subscribe", &req.query);
    let sub = host.producer.subscribe(&parse_select(&req.query)?, &req.sink, req.replay)?;
    let task = push::spawn(host.producer.clone(), sub.clone(), host.http.clone(), &agent.config);
    let mut pushers = host.pushers.lock().unwrap_or_else(|p| p.into_inner());
    pushers.retain(|_, t| !t.is_finished());
    pushers.insert(sub.id().to_string(), task);
    Ok(Json(SubscribeResponse { subscription_id: sub.id().to_string() }))
}

pub(crate) async fn unsubscribe(
    State(agent): State<Arc<Agent>>,
    Path((id, sid)): Path<(String, String)>,
) -> ApiResult<Removed> {
    let host = hosted(&agent, &id)?;
    let removed = host.producer.unsubscribe(&sid);
    if let Some(t) = host.pushers.lock().unwrap_or_else(|p| p.into_inner()).remove(&sid) {
        t.abort();
    }
    Ok(Json(Removed { removed }))
}

pub(crate) async fn stats(State(agent): State<Arc<Agent>>, Path(id): Path<String>) -> ApiResult<ProducerStatsResponse> {
    let host = hosted(&agent, &id)?;
    Ok(Json(ProducerStatsResponse { id, stats: host.producer.stats(), access_log: host.access_log() }))
}

pub(crate) async fn owner(
    State(agent): State<Arc<Agent>>,
    Path(id): Path<String>,
    Json(req): Json<OwnerRequest>,
) -> ApiResult<OwnerResponse> {
    let host = hosted(&agent, &id)?;
    if req.release {
        host.producer.release(&req.token);
    } else {
        host.producer.acquire(&req.token)?;
    }
    Ok(Json(OwnerResponse { owned: host.producer.is_owned() }))
}
