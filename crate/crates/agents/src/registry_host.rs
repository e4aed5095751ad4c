//! Registry endpoints, the periodic sweep and notification delivery.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::Json;
use rgma_core::registry::{
    ConsumerEntry, ConsumerRegistration, Notification, ProducerRegistration, Registry, RegistryError, SchemaEntry,
};
use rgma_core::sql::{parse_create_table, parse_select, parse_where};
use tokio::task::JoinHandle;

use crate::agent::Agent;
use crate::client::Http;
use crate::error::{ApiError, ApiResult};
use crate::protocol::*;

fn hosted(agent: &Agent) -> Result<&Arc<Registry>, ApiError> {
    agent.registry.as_ref().ok_or_else(|| ApiError::not_found("this agent hosts no registry"))
}

pub(crate) fn spawn_sweeper(registry: Arc<Registry>, every: Duration) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let gone = registry.sweep();
            if !gone.is_empty() {
                tracing::info!(?gone, "expired registrations swept");
            }
        }
    })
}

/// Delivers notifications in the background, each with bounded retries.
fn dispatch(agent: &Agent, notes: Vec<Notification>) {
    if notes.is_empty() {
        return;
    }
    let http = agent.http.clone();
    let attempts = agent.config.notify_attempts;
    let pause = Duration::from_millis(agent.config.notify_retry_ms);
    for note in notes {
        let http: Http = http.clone();
        tokio::spawn(async move {
            let url = format!("{}/notify", note.consumer_endpoint);
            let body = NotifyRequest { producer: note.producer };
            for attempt in 1..=attempts {
                match http.post::<_, serde_json::Value>(&url, &body).await {
                    Ok(_) => return,
                    Err(e) if e.is_not_found() => return,
                    Err(e) => {
                        tracing::debug!(consumer = %note.consumer_id, attempt, "notification failed: {e}");
                        if attempt < attempts {
                            tokio::time::sleep(pause).await;
                        }
                    }
                }
            }
            tracing::warn!(consumer = %note.consumer_id, "notification dropped after {attempts} attempts");
        });
    }
}

pub(crate) async fn create_table(
    State(agent): State<Arc<Agent>>,
    Json(req): Json<CreateTableRequest>,
) -> ApiResult<SchemaEntry> {
    let reg = hosted(&agent)?;
    let def = parse_create_table(&req.ddl)?;
    Ok(Json(reg.create_table(def)?))
}

pub(crate) async fn tables(State(agent): State<Arc<Agent>>) -> ApiResult<TablesResponse> {
    Ok(Json(TablesResponse { tables: hosted(&agent)?.tables() }))
}

pub(crate) async fn table(State(agent): State<Arc<Agent>>, Path(name): Path<String>) -> ApiResult<SchemaEntry> {
    hosted(&agent)?.table(&name).map(Json).ok_or_else(|| RegistryError::UnknownTable(name).into())
}

pub(crate) async fn register_producer(
    State(agent): State<Arc<Agent>>,
    Json(reg): Json<ProducerRegistration>,
) -> ApiResult<ProducersResponse> {
    let (producers, notes) = hosted(&agent)?.register_producer(reg)?;
    dispatch(&agent, notes);
    Ok(Json(ProducersResponse { producers }))
}

pub(crate) async fn producer(State(agent): State<Arc<Agent>>, Path(id): Path<String>) -> ApiResult<ProducersResponse> {
    let reg = hosted(&agent)?;
    reg.sweep();
    match reg.producer(&id) {
        Some(producers) => Ok(Json(ProducersResponse { producers })),
        None => Err(RegistryError::UnknownId(id).into()),
    }
}

pub(crate) async fn unregister_producer(
    State(agent): State<Arc<Agent>>,
    Path(id): Path<String>,
) -> ApiResult<Removed> {
    Ok(Json(Removed { removed: hosted(&agent)?.unregister_producer(&id) }))
}

pub(crate) async fn register_consumer(
    State(agent): State<Arc<Agent>>,
    Json(reg): Json<ConsumerRegistration>,
) -> ApiResult<ConsumerRegistered> {
    let (consumer, producers) = hosted(&agent)?.register_consumer(reg)?;
    Ok(Json(ConsumerRegistered { consumer, producers }))
}

pub(crate) async fn consumer(State(agent): State<Arc<Agent>>, Path(id): Path<String>) -> ApiResult<ConsumerEntry> {
    hosted(&agent)?.consumer(&id).map(Json).ok_or_else(|| RegistryError::UnknownId(id).into())
}

pub(crate) async fn unregister_consumer(
    State(agent): State<Arc<Agent>>,
    Path(id): Path<String>,
) -> ApiResult<Removed> {
    Ok(Json(Removed { removed: hosted(&agent)?.unregister_consumer(&id) }))
}

pub(crate) async fn heartbeat(
    State(agent): State<Arc<Agent>>,
    Json(req): Json<HeartbeatRequest>,
) -> ApiResult<HeartbeatResponse> {
    let termination_time = hosted(&agent)?.heartbeat(&req.id)?;
    Ok(Json(HeartbeatResponse { termination_time }))
}

pub(crate) async fn lookup(
    State(agent): State<Arc<Agent>>,
    Query(params): Query<LookupParams>,
) -> ApiResult<ProducersResponse> {
    let reg = hosted(&agent)?;
    let producers = match (params.query_type, &params.query, &params.table) {
        (Some(qt), Some(q), None) => reg.lookup(&parse_select(q)?, qt)?,
        (Some(qt), None, Some(t)) => {
            let filter = params.filter.as_deref().filter(|f| !f.trim().is_empty()).map(parse_where).transpose()?;
            reg.lookup_table(t, qt, filter)?
        }
        (None, None, table) => {
            reg.sweep();
            let mut all = reg.producers();
            if let Some(t) = table {
                all.retain(|e| e.table.eq_ignore_ascii_case(t));
            }
            all
        }
        _ => return Err(ApiError::bad_request("give type with exactly one of query or table, or neither")),
    };
    Ok(Json(ProducersResponse { producers }))
}
