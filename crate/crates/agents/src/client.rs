//! Typed HTTP client for registry and agent endpoints.

use std::time::Duration;

use reqwest::{Method, RequestBuilder};
use rgma_core::mediator::ResultSet;
use rgma_core::producer::InsertOutcome;
use rgma_core::registry::{ConsumerEntry, ConsumerRegistration, ProducerEntry, ProducerRegistration, SchemaEntry};
use rgma_core::QueryType;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::protocol::*;

#[derive(Debug, Clone, Error)]
pub enum ClientError {
    #[error("{message} (HTTP {status})")]
    Status { status: u16, message: String },
    #[error("request failed: {0}")]
    Transport(String),
    #[error("unreadable response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn is_not_found(&self) -> bool {
        self.status() == Some(404)
    }
}

fn transport(e: reqwest::Error) -> ClientError {
    ClientError::Transport(e.to_string())
}

#[derive(Clone, Debug)]
pub struct Http {
    client: reqwest::Client,
}

impl Http {
    /// `timeout` bounds each request unless overridden per call.
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .pool_idle_timeout(Duration::from_secs(30))
            .build()
            .expect("http client builds with static settings");
        Http { client }
    }

    async fn send<R: DeserializeOwned>(&self, req: RequestBuilder) -> Result<R, ClientError> {
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(transport)?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(ClientError::Status { status: status.as_u16(), message });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub async fn get<R: DeserializeOwned>(&self, url: &str) -> Result<R, ClientError> {
        self.send(self.client.get(url)).await
    }

    pub async fn get_with<R: DeserializeOwned>(
        &self,
        url: &str,
        query: &[(&str, String)],
        timeout: Option<Duration>,
    ) -> Result<R, ClientError> {
        let mut req = self.client.get(url).query(query);
        if let Some(t) = timeout {
            req = req.timeout(t);
        }
        self.send(req).await
    }

    pub async fn post<B: Serialize + ?Sized, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, ClientError> {
        self.send(self.client.post(url).json(body)).await
    }

    pub async fn delete<R: DeserializeOwned>(&self, url: &str) -> Result<R, ClientError> {
        self.send(self.client.request(Method::DELETE, url)).await
    }

    /// Sends newline-terminated lines as a chunked request body, one chunk
    /// per line.
    pub async fn post_lines(&self, url: &str, lines: Vec<String>) -> Result<Ack, ClientError> {
        let chunks = futures::stream::iter(lines.into_iter().map(Ok::<String, std::io::Error>));
        let req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "text/plain; charset=utf-8")
            .body(reqwest::Body::wrap_stream(chunks));
        self.send(req).await
    }
}

fn seg(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct RegistryClient {
    http: Http,
    base: String,
}

impl RegistryClient {
    pub fn new(http: Http, base: impl Into<String>) -> Self {
        RegistryClient { http, base: base.into().trim_end_matches('/').to_string() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}/registry{path}", self.base)
    }

    pub async fn create_table(&self, ddl: &str) -> Result<SchemaEntry, ClientError> {
        self.http.post(&self.url("/tables"), &CreateTableRequest { ddl: ddl.into() }).await
    }

    pub async fn tables(&self) -> Result<Vec<SchemaEntry>, ClientError> {
        Ok(self.http.get::<TablesResponse>(&self.url("/tables")).await?.tables)
    }

    pub async fn table(&self, name: &str) -> Result<SchemaEntry, ClientError> {
        self.http.get(&self.url(&format!("/tables/{}", seg(name)))).await
    }

    pub async fn register_producer(&self, reg: &ProducerRegistration) -> Result<Vec<ProducerEntry>, ClientError> {
        Ok(self.http.post::<_, ProducersResponse>(&self.url("/producers"), reg).await?.producers)
    }

    pub async fn producer(&self, id: &str) -> Result<Vec<ProducerEntry>, ClientError> {
        Ok(self.http.get::<ProducersResponse>(&self.url(&format!("/producers/{}", seg(id)))).await?.producers)
    }

    pub async fn unregister_producer(&self, id: &str) -> Result<bool, ClientError> {
        Ok(self.http.delete::<Removed>(&self.url(&format!("/producers/{}", seg(id)))).await?.removed)
    }

    pub async fn register_consumer(&self, reg: &ConsumerRegistration) -> Result<ConsumerRegistered, ClientError> {
        self.http.post(&self.url("/consumers"), reg).await
    }

    pub async fn consumer(&self, id: &str) -> Result<ConsumerEntry, ClientError> {
        self.http.get(&self.url(&format!("/consumers/{}", seg(id)))).await
    }

    pub async fn unregister_consumer(&self, id: &str) -> Result<bool, ClientError> {
        Ok(self.http.delete::<Removed>(&self.url(&format!("/consumers/{}", seg(id)))).await?.removed)
    }

    pub async fn heartbeat(&self, id: &str) -> Result<i64, ClientError> {
        let r: HeartbeatResponse = self.http.post(&self.url("/heartbeat"), &HeartbeatRequest { id: id.into() }).await?;
        Ok(r.termination_time)
    }

    pub async fn lookup(&self, params: &LookupParams) -> Result<Vec<ProducerEntry>, ClientError> {
        let mut q = Vec::new();
        if let Some(v) = &params.query {
            q.push(("query", v.clone()));
        }
        if let Some(v) = &params.table {
            q.push(("table", v.clone()));
        }
        if let Some(v) = &params.filter {
            q.push(("where", v.clone()));
        }
        if let Some(v) = params.query_type {
            q.push(("type", v.to_string()));
        }
        Ok(self.http.get_with::<ProducersResponse>(&self.url("/producers"), &q, None).await?.producers)
    }

    pub async fn lookup_query(&self, sql: &str, query_type: QueryType) -> Result<Vec<ProducerEntry>, ClientError> {
        self.lookup(&LookupParams { query: Some(sql.into()), query_type: Some(query_type), ..Default::default() }).await
    }
}

/// Client for the producer, consumer and archiver endpoints of one agent.
/// Methods taking an `endpoint` address a hosted component directly.
#[derive(Clone, Debug)]
pub struct AgentClient {
    http: Http,
    base: String,
}

impl AgentClient {
    pub fn new(http: Http, base: impl Into<String>) -> Self {
        AgentClient { http, base: base.into().trim_end_matches('/').to_string() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn http(&self) -> &Http {
        &self.http
    }

    pub async fn create_producer(&self, req: &CreateProducerRequest) -> Result<ProducerCreated, ClientError> {
        self.http.post(&format!("{}/producer", self.base), req).await
    }

    pub async fn close_producer(&self, endpoint: &str) -> Result<bool, ClientError> {
        Ok(self.http.delete::<Removed>(endpoint).await?.removed)
    }

    pub async fn insert(&self, endpoint: &str, req: &InsertRequest) -> Result<InsertOutcome, ClientError> {
        self.http.post(&format!("{endpoint}/insert"), req).await
    }

    pub async fn insert_sql(&self, endpoint: &str, sql: &str) -> Result<InsertOutcome, ClientError> {
        self.insert(endpoint, &InsertRequest { sql: Some(sql.into()), ..Default::default() }).await
    }

    pub async fn query_producer(
        &self,
        endpoint: &str,
        req: &ProducerQueryRequest,
    ) -> Result<ProducerQueryResponse, ClientError> {
        self.http.post(&format!("{endpoint}/query"), req).await
    }

    pub async fn subscribe(&self, endpoint: &str, req: &SubscribeRequest) -> Result<SubscribeResponse, ClientError> {
        self.http.post(&format!("{endpoint}/subscribe"), req).await
    }

    pub async fn unsubscribe(&self, endpoint: &str, subscription_id: &str) -> Result<bool, ClientError> {
        Ok(self.http.delete::<Removed>(&format!("{endpoint}/subscribe/{}", seg(subscription_id))).await?.removed)
    }

    pub async fn producer_stats(&self, endpoint: &str) -> Result<ProducerStatsResponse, ClientError> {
        self.http.get(&format!("{endpoint}/stats")).await
    }

    pub async fn owner(&self, endpoint: &str, req: &OwnerRequest) -> Result<OwnerResponse, ClientError> {
        self.http.post(&format!("{endpoint}/owner"), req).await
    }

    /// Runs a HISTORY or LATEST query to completion.
    pub async fn query(&self, sql: &str, query_type: QueryType) -> Result<ResultSet, ClientError> {
        let req = CreateConsumerRequest {
            query: sql.into(),
            query_type,
            replay: false,
            termination_interval_sec: None,
            buffer_capacity: None,
        };
        self.http.post(&format!("{}/consumer", self.base), &req).await
    }

    pub async fn start_continuous(&self, req: &CreateConsumerRequest) -> Result<ConsumerCreated, ClientError> {
        self.http.post(&format!("{}/consumer", self.base), req).await
    }

    pub async fn pop(&self, endpoint: &str, max: usize, timeout: Duration) -> Result<PopResponse, ClientError> {
        let q = [("max", max.to_string()), ("timeoutMs", timeout.as_millis().to_string())];
        self.http.get_with(&format!("{endpoint}/pop"), &q, Some(timeout + Duration::from_secs(5))).await
    }

    pub async fn consumer_stats(&self, endpoint: &str) -> Result<ConsumerStats, ClientError> {
        self.http.get(&format!("{endpoint}/stats")).await
    }

    pub async fn close_consumer(&self, endpoint: &str) -> Result<bool, ClientError> {
        Ok(self.http.delete::<Removed>(endpoint).await?.removed)
    }

    pub async fn create_archiver(&self, req: &CreateArchiverRequest) -> Result<ArchiverCreated, ClientError> {
        self.http.post(&format!("{}/archiver", self.base), req).await
    }

    pub async fn archiver_stats(&self, id: &str) -> Result<ArchiverStats, ClientError> {
        self.http.get(&format!("{}/archiver/{}/stats", self.base, seg(id))).await
    }

    /// Stops an archiver after flushing what it has received.
    pub async fn stop_archiver(&self, id: &str) -> Result<ArchiverStats, ClientError> {
        self.http.delete(&format!("{}/archiver/{}", self.base, seg(id))).await
    }
}
