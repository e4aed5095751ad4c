//! Site simulation. Every site runs one SE and several CE stream producers,
//! each restricted by a view to its own element. One archiver copies both
//! tables into a LatestProducer, which is queried while the run is going on
//! to see whether the archiver keeps up.
//!
//! All metrics come from API calls: insert acknowledgements, latest queries
//! and the stats endpoints.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use futures::stream::{self, StreamExt, TryStreamExt};
use rgma_agents::protocol::{CreateProducerRequest, InsertRequest, ProducerCreated, TableDecl};
use rgma_agents::{AgentClient, AgentConfig, AgentHandle, Http};
use rgma_core::archiver::{ArchivedTable, ArchiverSpec};
use rgma_core::codec::encode_tuple;
use rgma_core::sql::parse_create_table;
use rgma_core::{Clock, ProducerKind, QueryType, SystemClock, TableDef, Tuple, Value};
use serde::Serialize;

use crate::topology::Topology;

pub const CE_DDL: &str =
    "CREATE TABLE CE (ceId STRING(32), site STRING(32), runningJobs INT, totalCpus INT, PRIMARY KEY (ceId))";
pub const SE_DDL: &str =
    "CREATE TABLE SE (seId STRING(32), site STRING(32), usedGB REAL, totalGB REAL, PRIMARY KEY (seId))";

/// Consecutive over-limit lag samples that count as saturation.
pub const SATURATION_SAMPLES: usize = 3;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub topology: Topology,
    /// Vector inserts: the archiver writes batches of `batch_size` tuples
    /// rather than one tuple per insert.
    pub vector: bool,
    /// Use a running system. Without it the harness starts its own agents.
    pub registry_url: Option<String>,
    /// Agent hosting every component when `registry_url` is set. Defaults
    /// to the registry's agent.
    pub agent_url: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50: i64,
    pub p95: i64,
    pub p99: i64,
    pub max: i64,
}

impl Percentiles {
    /// Nearest-rank percentiles; all zero for no samples.
    pub fn of(mut xs: Vec<i64>) -> Self {
        if xs.is_empty() {
            return Percentiles::default();
        }
        xs.sort_unstable();
        let rank = |p: f64| xs[((p / 100.0 * xs.len() as f64).ceil() as usize).clamp(1, xs.len()) - 1];
        Percentiles { p50: rank(50.0), p95: rank(95.0), p99: rank(99.0), max: xs[xs.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SimReport {
    pub sites: usize,
    pub producers: usize,
    pub period_ms: u64,
    pub duration_sec: u64,
    pub vector: bool,
    pub batch_size: usize,
    pub published: u64,
    pub publish_errors: u64,
    pub throughput_per_sec: f64,
    pub archived: u64,
    pub drain_ms: u64,
    /// Per sample, the age of the oldest published tuple not yet visible
    /// in the LatestProducer.
    pub lag_ms: Percentiles,
    pub samples: usize,
    pub sample_errors: u64,
    /// Age of every row returned by the latest queries.
    pub staleness_ms: Percentiles,
    pub fresh_fraction: f64,
    pub producer_drops: u64,
    pub archiver_drops: u64,
    pub insert_failures: u64,
    pub saturated: bool,
    pub saturated_after_ms: Option<u64>,
    pub runtime_ms: u64,
}

impl SimReport {
    pub fn lag_limit_ms(&self) -> i64 {
        2 * self.period_ms as i64
    }

    pub fn drops(&self) -> u64 {
        self.producer_drops + self.archiver_drops
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let l = &self.lag_ms;
        let s = &self.staleness_ms;
        let mut out = format!(
            "simulate: {} sites ({} producers), period {} ms, {} s, vector inserts {} (batch {})\n",
            self.sites,
            self.producers,
            self.period_ms,
            self.duration_sec,
            if self.vector { "on" } else { "off" },
            self.batch_size
        );
        out += &format!(
            "  published  {} tuples ({:.1}/s), {} insert errors\n",
            self.published, self.throughput_per_sec, self.publish_errors
        );
        out += &format!("  archived   {} tuples, drained {} ms after the last publish\n", self.archived, self.drain_ms);
        out += &format!(
            "  lag        p50 {} ms, p95 {} ms, p99 {} ms, max {} ms over {} samples (limit {} ms)\n",
            l.p50,
            l.p95,
            l.p99,
            l.max,
            self.samples,
            self.lag_limit_ms()
        );
        out += &format!(
            "  staleness  p50 {} ms, p95 {} ms, max {} ms; {:.2}% of rows fresher than 2 periods\n",
            s.p50,
            s.p95,
            s.max,
            100.0 * self.fresh_fraction
        );
        out += &format!(
            "  drops      producers {}, archiver {}; archive insert failures {}\n",
            self.producer_drops, self.archiver_drops, self.insert_failures
        );
        out += &match self.saturated_after_ms {
            Some(t) => format!("  saturated  yes, after {:.1} s\n", t as f64 / 1000.0),
            None => "  saturated  no\n".to_owned(),
        };
        out += &format!("  runtime    {:.1} s\n", self.runtime_ms as f64 / 1000.0);
        out
    }
}

/// Side-by-side numbers for a vector-on and a vector-off run.
pub fn compare(on: &SimReport, off: &SimReport) -> String {
    format!(
        "vector inserts on vs off: throughput {:.1}/s vs {:.1}/s, lag p95 {} vs {} ms, max {} vs {} ms, drain {} vs {} ms\n",
        on.throughput_per_sec,
        off.throughput_per_sec,
        on.lag_ms.p95,
        off.lag_ms.p95,
        on.lag_ms.max,
        off.lag_ms.max,
        on.drain_ms,
        off.drain_ms
    )
}

struct Site {
    producer: ProducerCreated,
    client: AgentClient,
    def: TableDef,
    key: String,
    site: String,
}

impl Site {
    fn tuple(&self, tick: u64, ts: i64) -> Tuple {
        let n = tick as i64;
        let values = if self.def.is_named("CE") {
            let total = 64 + (self.key.len() as i64 % 5) * 16;
            vec![Value::from(self.key.as_str()), Value::from(self.site.as_str()), Value::Int((n * 7) % total), Value::Int(total)]
        } else {
            let total = 1000.0;
            vec![
                Value::from(self.key.as_str()),
                Value::from(self.site.as_str()),
                Value::Real((n % 1000) as f64),
                Value::Real(total),
            ]
        };
        Tuple::new_unchecked(self.def.name(), values, ts)
    }
}

/// Publish times of tuples not yet seen in the LatestProducer, per key.
#[derive(Default)]
struct Outstanding(Mutex<HashMap<String, VecDeque<i64>>>);

impl Outstanding {
    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, VecDeque<i64>>> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn push(&self, key: &str, ts: i64) {
        self.lock().entry(key.to_owned()).or_default().push_back(ts);
    }

    fn retract(&self, key: &str, ts: i64) {
        if let Some(q) = self.lock().get_mut(key) {
            q.retain(|&t| t != ts);
        }
    }

    /// Drops what `archived` covers and returns the oldest remaining age.
    fn settle(&self, archived: &HashMap<String, i64>, now: i64) -> i64 {
        let mut worst = 0;
        for (key, q) in self.lock().iter_mut() {
            let seen = archived.get(key).copied().unwrap_or(i64::MIN);
            while q.front().is_some_and(|&t| t <= seen) {
                q.pop_front();
            }
            if let Some(&t) = q.front() {
                worst = worst.max(now - t);
            }
        }
        worst
    }
}

struct Deployment {
    handles: Vec<AgentHandle>,
    registry: String,
    producer_clients: Vec<AgentClient>,
    archive_client: AgentClient,
}

async fn deploy(opts: &SimOptions) -> Result<Deployment> {
    let timeout = Duration::from_millis(AgentConfig::default().request_timeout_ms);
    if let Some(registry) = &opts.registry_url {
        let agent = opts.agent_url.clone().unwrap_or_else(|| registry.clone());
        let client = AgentClient::new(Http::new(timeout), agent);
        return Ok(Deployment {
            handles: Vec::new(),
            registry: registry.clone(),
            producer_clients: vec![client.clone()],
            archive_client: client,
        });
    }
    let reg = AgentHandle::start(AgentConfig { host_registry: true, ..AgentConfig::default() })
        .await
        .context("starting the registry agent")?;
    let registry = reg.base_url().to_owned();
    let mut handles = vec![reg];
    for _ in 0..opts.topology.producer_agents + 1 {
        let h = AgentHandle::start(AgentConfig { registry_url: Some(registry.clone()), ..AgentConfig::default() })
            .await
            .context("starting an agent")?;
        handles.push(h);
    }
    let archive_client = handles[1].client();
    let producer_clients = handles[2..].iter().map(AgentHandle::client).collect();
    Ok(Deployment { handles, registry, producer_clients, archive_client })
}

fn decl(ddl: &str, view: &str) -> TableDecl {
    TableDecl { ddl: ddl.into(), view: view.into() }
}

async fn create_sites(t: &Topology, clients: &[AgentClient]) -> Result<Vec<Arc<Site>>> {
    let (ce, se) = (parse_create_table(CE_DDL)?, parse_create_table(SE_DDL)?);
    let mut plan = Vec::new();
    for s in 0..t.sites {
        let site = format!("site{s}");
        plan.push((se.clone(), format!("se{s}"), site.clone()));
        for k in 0..t.ces_per_site {
            plan.push((ce.clone(), format!("ce{s}-{k}"), site.clone()));
        }
    }
    stream::iter(plan.into_iter().enumerate())
        .map(|(i, (def, key, site))| {
            let client = clients[i % clients.len()].clone();
            async move {
                let (ddl, col) = if def.is_named("CE") { (CE_DDL, "ceId") } else { (SE_DDL, "seId") };
                let view = format!("WHERE {col} = '{key}' AND site = '{site}'");
                let req = CreateProducerRequest::new(ProducerKind::Stream, vec![decl(ddl, &view)]);
                let producer = client.create_producer(&req).await.with_context(|| format!("creating producer for {key}"))?;
                Ok::<_, anyhow::Error>(Arc::new(Site { producer, client, def, key, site }))
            }
        })
        .buffered(16)
        .try_collect()
        .await
}

/// Waits until every site producer has a subscriber, which is the
/// archiver's input for its table.
async fn await_subscriptions(sites: &[Arc<Site>], limit: Duration) -> Result<()> {
    let start = Instant::now();
    loop {
        let pending: Vec<bool> = stream::iter(sites)
            .map(|s| async move {
                s.client.producer_stats(&s.producer.endpoint).await.map(|st| st.stats.subscriptions.is_empty()).unwrap_or(true)
            })
            .buffered(32)
            .collect()
            .await;
        let missing = pending.iter().filter(|p| **p).count();
        if missing == 0 {
            return Ok(());
        }
        if start.elapsed() > limit {
            bail!("{missing} producers still have no archiver subscription after {limit:?}");
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}

struct Sampler {
    client: AgentClient,
    clock: SystemClock,
    limit: i64,
    lags: Vec<i64>,
    staleness: Vec<i64>,
    fresh: u64,
    errors: u64,
    over: usize,
    saturated_after: Option<Instant>,
}

impl Sampler {
    /// Timestamps of the latest rows, keyed by defining value.
    async fn archived(&self) -> Result<HashMap<String, i64>> {
        let mut out = HashMap::new();
        for (table, key) in [("CE", "ceId"), ("SE", "seId")] {
            let rs = self.client.query(&format!("SELECT {key}, RgmaTimestamp FROM {table}"), QueryType::Latest).await?;
            for row in rs.rows {
                if let (Some(Value::Str(k)), Some(ts)) = (row.first(), row.get(1).and_then(Value::as_i64)) {
                    out.insert(k.clone(), ts);
                }
            }
        }
        Ok(out)
    }

    async fn sample(&mut self, outstanding: &Outstanding) -> Option<i64> {
        let archived = match self.archived().await {
            Ok(a) => a,
            Err(e) => {
                tracing::warn!("latest query failed: {e}");
                self.errors += 1;
                return None;
            }
        };
        let now = self.clock.now_ms();
        for ts in archived.values() {
            let age = now - ts;
            self.staleness.push(age);
            self.fresh += u64::from(age < self.limit);
        }
        Some(outstanding.settle(&archived, now))
    }

    fn record(&mut self, lag: i64) {
        self.lags.push(lag);
        self.over = if lag > self.limit { self.over + 1 } else { 0 };
        if self.over >= SATURATION_SAMPLES && self.saturated_after.is_none() {
            self.saturated_after = Some(Instant::now());
        }
    }
}

pub async fn run(opts: &SimOptions) -> Result<SimReport> {
    let t = &opts.topology;
    t.validate()?;
    let started = Instant::now();
    let dep = deploy(opts).await?;
    let result = run_on(opts, &dep, started).await;
    for h in dep.handles {
        h.shutdown().await;
    }
    result
}

async fn run_on(opts: &SimOptions, dep: &Deployment, started: Instant) -> Result<SimReport> {
    let t = &opts.topology;
    let clock = SystemClock;
    tracing::info!(registry = %dep.registry, "deploying {} sites", t.sites);

    let lp_req = CreateProducerRequest::new(ProducerKind::Latest, vec![decl(CE_DDL, ""), decl(SE_DDL, "")]);
    let lp = dep.archive_client.create_producer(&lp_req).await.context("creating the LatestProducer")?;
    let sites = create_sites(t, &dep.producer_clients).await?;
    let batch_size = if opts.vector { t.batch_size } else { 1 };
    let spec = ArchiverSpec {
        target_producer_id: lp.id.clone(),
        tables: ["CE", "SE"].iter().map(|n| ArchivedTable { table: (*n).into(), filter: None }).collect(),
        sources: Some(sites.iter().map(|s| s.producer.id.clone()).collect()),
        batch_size,
        batch_ms: t.batch_ms,
    };
    let archiver = dep.archive_client.create_archiver(&spec).await.context("creating the archiver")?;
    await_subscriptions(&sites, Duration::from_secs(30)).await?;

    let outstanding = Arc::new(Outstanding::default());
    let published = Arc::new(AtomicU64::new(0));
    let errors = Arc::new(AtomicU64::new(0));
    let period = Duration::from_millis(t.period_ms);
    let publish_start = tokio::time::Instant::now();
    let deadline = publish_start + Duration::from_secs(t.duration_sec);
    let n = sites.len() as u32;
    let mut publishers = Vec::new();
    for (i, site) in sites.iter().enumerate() {
        let (site, outstanding, published, errors) = (site.clone(), outstanding.clone(), published.clone(), errors.clone());
        let phase = period * i as u32 / n;
        publishers.push(tokio::spawn(async move {
            let mut tick = tokio::time::interval_at(publish_start + phase, period);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            let mut count = 0u64;
            loop {
                let at = tick.tick().await;
                if at >= deadline {
                    return;
                }
                let ts = clock.now_ms();
                let line = encode_tuple(&site.def, &site.tuple(count, ts));
                count += 1;
                outstanding.push(&site.key, ts);
                let req = InsertRequest { tuples: vec![line], ..Default::default() };
                match site.client.insert(&site.producer.endpoint, &req).await {
                    Ok(_) => {
                        published.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(e) => {
                        outstanding.retract(&site.key, ts);
                        errors.fetch_add(1, Ordering::Relaxed);
                        tracing::warn!(key = %site.key, "publish failed: {e}");
                    }
                }
            }
        }));
    }

    let mut sampler = Sampler {
        client: dep.archive_client.clone(),
        clock,
        limit: 2 * t.period_ms as i64,
        lags: Vec::new(),
        staleness: Vec::new(),
        fresh: 0,
        errors: 0,
        over: 0,
        saturated_after: None,
    };
    let mut every = tokio::time::interval_at(publish_start + period, Duration::from_millis(t.sample_ms));
    while every.tick().await < deadline {
        if let Some(lag) = sampler.sample(&outstanding).await {
            sampler.record(lag);
        }
    }
    for p in publishers {
        p.await.context("publisher task")?;
    }
    let publish_secs = publish_start.elapsed().as_secs_f64();

    // Quiesce: wait until every acknowledged tuple is visible downstream.
    let quiet = Instant::now();
    let drain_limit = Duration::from_secs(30).max(period * 10);
    loop {
        if sampler.sample(&outstanding).await == Some(0) {
            break;
        }
        if quiet.elapsed() > drain_limit {
            tracing::warn!("archiver did not drain within {drain_limit:?}");
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let drain_ms = quiet.elapsed().as_millis() as u64;

    let producer_drops: u64 = stream::iter(&sites)
        .map(|s| async move { s.client.producer_stats(&s.producer.endpoint).await.map(|st| st.stats.dropped) })
        .buffered(32)
        .try_collect::<Vec<u64>>()
        .await
        .context("reading producer stats")?
        .into_iter()
        .sum();
    let final_stats = dep.archive_client.stop_archiver(&archiver.id).await.context("stopping the archiver")?;

    for s in &sites {
        if let Err(e) = s.client.close_producer(&s.producer.endpoint).await {
            tracing::warn!(id = %s.producer.id, "close failed: {e}");
        }
    }
    let _ = dep.archive_client.close_producer(&lp.endpoint).await;

    let published = published.load(Ordering::Relaxed);
    let rows = sampler.staleness.len().max(1) as f64;
    Ok(SimReport {
        sites: t.sites,
        producers: sites.len(),
        period_ms: t.period_ms,
        duration_sec: t.duration_sec,
        vector: opts.vector,
        batch_size,
        published,
        publish_errors: errors.load(Ordering::Relaxed),
        throughput_per_sec: published as f64 / publish_secs,
        archived: final_stats.tables.iter().map(|p| p.archived).sum(),
        drain_ms,
        samples: sampler.lags.len(),
        sample_errors: sampler.errors,
        lag_ms: Percentiles::of(std::mem::take(&mut sampler.lags)),
        fresh_fraction: sampler.fresh as f64 / rows,
        staleness_ms: Percentiles::of(std::mem::take(&mut sampler.staleness)),
        producer_drops,
        archiver_drops: final_stats.dropped,
        insert_failures: final_stats.insert_failures,
        saturated: sampler.saturated_after.is_some(),
        saturated_after_ms: sampler.saturated_after.map(|at| at.duration_since(started).as_millis() as u64),
        runtime_ms: started.elapsed().as_millis() as u64,
    })
}
