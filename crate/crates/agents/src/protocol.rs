//! Request and response bodies shared by the hosts and the client.
//!
//! Every body is JSON. Tuples travel as canonical lines (see
//! `rgma_core::codec`) inside JSON string arrays, or as raw lines on the
//! stream push path.

use rgma_core::archiver::{ArchiverSpec, TableProgress};
use rgma_core::producer::{CleanupRule, InsertOutcome, ProducerStats};
use rgma_core::registry::{ConsumerEntry, ProducerEntry, SchemaEntry};
use rgma_core::{ProducerKind, QueryType, TableDef, Value};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateTableRequest {
    pub ddl: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TablesResponse {
    pub tables: Vec<SchemaEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeartbeatRequest {
    pub id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeartbeatResponse {
    pub termination_time: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProducersResponse {
    pub producers: Vec<ProducerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsumerRegistered {
    pub consumer: ConsumerEntry,
    pub producers: Vec<ProducerEntry>,
}

/// Query string of `GET /registry/producers`. With `query` the lookup is
/// planned for a full SELECT; with `table` (and optionally `where`) for one
/// table. Without `type` every live entry is listed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LookupParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, rename = "where", skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub query_type: Option<QueryType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDecl {
    pub ddl: String,
    /// `WHERE col = lit AND ...`, or empty for the whole table.
    #[serde(default)]
    pub view: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateProducerRequest {
    pub kind: ProducerKind,
    pub tables: Vec<TableDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination_interval_sec: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cleanup: Vec<CleanupRule>,
    /// CANONICAL only: queries are forwarded to this URL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handler_url: Option<String>,
    /// Reuse this id, for a restarted producer taking over its old identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer_id: Option<String>,
}

impl CreateProducerRequest {
    pub fn new(kind: ProducerKind, tables: Vec<TableDecl>) -> Self {
        CreateProducerRequest {
            kind,
            tables,
            termination_interval_sec: None,
            buffer_capacity: None,
            log_path: None,
            replay_window: None,
            cleanup: Vec::new(),
            handler_url: None,
            producer_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProducerCreated {
    pub id: String,
    pub endpoint: String,
    pub tables: Vec<TableDef>,
}

/// Either an INSERT statement or pre-encoded tuple lines.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InsertRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tuples: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
}

pub type InsertResponse = InsertOutcome;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProducerQueryRequest {
    pub query: String,
    pub query_type: QueryType,
}

/// `tuples` for single-table answers, `pairs` for joins.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProducerQueryResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(String, String)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscribeRequest {
    pub query: String,
    pub sink: String,
    #[serde(default)]
    pub replay: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubscribeResponse {
    pub subscription_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OwnerRequest {
    pub token: String,
    #[serde(default)]
    pub release: bool,
}

/// One request received by a producer, kept so tests can tell which
/// producers a consumer actually contacted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AccessRecord {
    pub op: String,
    pub query: String,
    pub at: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProducerStatsResponse {
    pub id: String,
    #[serde(flatten)]
    pub stats: ProducerStats,
    pub access_log: Vec<AccessRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateConsumerRequest {
    pub query: String,
    pub query_type: QueryType,
    #[serde(default)]
    pub replay: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination_interval_sec: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsumerCreated {
    pub id: String,
    pub endpoint: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopResponse {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub dropped: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsumerStats {
    pub id: String,
    pub query: String,
    pub buffered: usize,
    pub dropped: u64,
    pub received: u64,
    pub sources: Vec<SourceInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceInfo {
    pub producer_id: String,
    pub subscription_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NotifyRequest {
    pub producer: ProducerEntry,
}

pub type CreateArchiverRequest = ArchiverSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiverCreated {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArchiverStats {
    pub id: String,
    pub target_producer_id: String,
    pub running: bool,
    pub tables: Vec<TableProgress>,
    pub pending: usize,
    pub dropped: u64,
    pub insert_failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removed {
    pub removed: bool,
}

/// Reply to a stream push: tuple lines accepted into the consumer buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerResponse {
    pub owned: bool,
}
