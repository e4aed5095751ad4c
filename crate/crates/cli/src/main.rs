use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rgma_agents::protocol::{CreateConsumerRequest, CreateProducerRequest, TableDecl};
use rgma_agents::{AgentClient, AgentConfig, AgentHandle, Http, RegistryClient};
use rgma_cli::render;
use rgma_cli::session::{self, Session, SessionArchiver, SessionProducer};
use rgma_cli::simulate::{self, SimOptions};
use rgma_cli::topology::Topology;
use rgma_core::archiver::{ArchivedTable, ArchiverSpec};
use rgma_core::sql::{parse_create_table, parse_where};
use rgma_core::{ProducerKind, QueryType};

#[derive(Parser)]
#[command(name = "rgma", version, about = "Relational grid monitoring: run agents, publish, query and archive")]
struct Cli {
    /// Registry agent base URL.
    #[arg(long, global = true, env = "RGMA_REGISTRY_URL")]
    registry_url: Option<String>,
    /// Agent hosting this session's producers, consumers and archiver.
    /// Defaults to the registry URL.
    #[arg(long, global = true, env = "RGMA_AGENT_URL")]
    agent: Option<String>,
    /// Session file. Defaults to ~/.rgma-session.json.
    #[arg(long, global = true, env = "RGMA_SESSION")]
    session: Option<PathBuf>,
    /// Per-request timeout.
    #[arg(long, global = true, default_value_t = 5000)]
    timeout_ms: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an agent until interrupted.
    Agent(AgentArgs),
    /// Browse the schema.
    Tables {
        #[command(subcommand)]
        cmd: TablesCmd,
    },
    /// Manage this session's producers.
    Producer {
        #[command(subcommand)]
        cmd: ProducerCmd,
    },
    /// Run a query. Continuous queries stream rows until interrupted.
    Query(QueryArgs),
    /// Start, inspect or stop this session's archiver.
    Archive(ArchiveArgs),
    /// Show the statistics of a producer (p-), consumer (c-) or archiver (a-).
    Stats { id: String },
    /// Run the site simulation and print a metrics report.
    Simulate(SimArgs),
}

#[derive(Args)]
struct AgentArgs {
    /// Address to listen on.
    #[arg(long)]
    listen: Option<std::net::SocketAddr>,
    /// Host the registry in this agent.
    #[arg(long)]
    registry: bool,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// URL under which other agents reach this one.
    #[arg(long)]
    public_url: Option<String>,
    #[arg(long)]
    log_level: Option<String>,
}

#[derive(Subcommand)]
enum TablesCmd {
    List,
    Describe { name: String },
}

#[derive(Subcommand)]
enum ProducerCmd {
    /// Create a producer on the session agent.
    Create(CreateArgs),
    /// Publish with an INSERT statement.
    Insert {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ProducerKind>,
        sql: String,
    },
    /// Close a producer and forget it.
    Close {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ProducerKind>,
    },
    /// List the producers of this session.
    List,
}

#[derive(Args)]
struct CreateArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: ProducerKind,
    /// CREATE TABLE statement of the published table.
    #[arg(long)]
    table_ddl: String,
    /// View predicate, e.g. "WHERE site = 'RAL'".
    #[arg(long = "where", default_value = "")]
    view: String,
    /// Termination interval in seconds.
    #[arg(long)]
    interval: Option<u32>,
    /// RESILIENT_STREAM log file.
    #[arg(long)]
    log_path: Option<String>,
    #[arg(long)]
    replay_window: Option<usize>,
    /// CANONICAL query handler URL.
    #[arg(long)]
    handler_url: Option<String>,
    /// Reuse an identity, e.g. for a restarted resilient producer.
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long = "type", value_parser = parse_query_type)]
    query_type: QueryType,
    /// Continuous only: start with the producers' replay windows.
    #[arg(long)]
    replay: bool,
    /// Continuous only: stop after this many rows.
    #[arg(long)]
    max_rows: Option<usize>,
    /// Continuous only: stop after this many seconds.
    #[arg(long)]
    seconds: Option<u64>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    sql: String,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct ArchiveArgs {
    #[command(subcommand)]
    action: Option<ArchiveAction>,
    /// Target producer id.
    #[arg(long)]
    target: Option<String>,
    /// Table to archive, optionally followed by a filter: "T WHERE x > 1".
    #[arg(long = "table")]
    tables: Vec<String>,
    /// Restrict inputs to these producers.
    #[arg(long = "source")]
    sources: Vec<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    batch_ms: Option<u64>,
}

#[derive(Subcommand)]
enum ArchiveAction {
    /// Flush and stop the session's archiver.
    Stop,
}

#[derive(Clone, Copy, ValueEnum)]
enum Vector {
    On,
    Off,
    Both,
}

#[derive(Args)]
struct SimArgs {
    /// Topology file; flags below override it.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    period_ms: Option<u64>,
    #[arg(long)]
    duration_sec: Option<u64>,
    #[arg(long, value_enum, default_value = "on")]
    vector: Vector,
    /// Print the structured report instead of the summary.
    #[arg(long)]
    json: bool,
    /// Also write the structured report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<ProducerKind, String> {
    s.parse()
}

fn parse_query_type(s: &str) -> Result<QueryType, String> {
    s.parse()
}

struct Ctx {
    registry_url: Option<String>,
    agent: Option<String>,
    session_path: PathBuf,
    http: Http,
}

impl Ctx {
    fn registry(&self) -> Result<RegistryClient> {
        let url = self.registry_url.as_ref().ok_or_else(|| anyhow!("no registry: set RGMA_REGISTRY_URL or --registry-url"))?;
        Ok(RegistryClient::new(self.http.clone(), url.trim_end_matches('/')))
    }

    fn agent(&self) -> Result<AgentClient> {
        let url = self.agent.as_ref().or(self.registry_url.as_ref()).ok_or_else(|| {
            anyhow!("no agent: set RGMA_AGENT_URL or RGMA_REGISTRY_URL, or pass --agent")
        })?;
        Ok(AgentClient::new(self.http.clone(), url.trim_end_matches('/')))
    }

    fn session(&self) -> Result<Session> {
        Session::load(&self.session_path)
    }

    fn save(&self, s: &Session) -> Result<()> {
        s.save(&self.session_path)
    }
}

fn init_logging(level: &str) -> Result<()> {
    let level: tracing::Level = level.parse().map_err(|_| anyhow!("unknown log level {level}"))?;
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    Ok(())
}

async fn run_agent(cli_registry: Option<String>, args: AgentArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => AgentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => AgentConfig::default(),
    };
    if let Some(url) = cli_registry {
        cfg.registry_url = Some(url.trim_end_matches('/').into());
    }
    if let Some(addr) = args.listen {
        cfg.listen_address = addr;
    }
    cfg.host_registry |= args.registry;
    if let Some(url) = args.public_url {
        cfg.public_url = Some(url.trim_end_matches('/').into());
    }
    if let Some(level) = args.log_level {
        cfg.log_level = level;
    }
    cfg.validate()?;
    if !cfg.host_registry && cfg.registry_url.is_none() {
        bail!("an agent needs --registry or a registry URL");
    }
    init_logging(&cfg.log_level)?;
    let handle = AgentHandle::start(cfg).await.context("starting the agent")?;
    let mut out = std::io::stdout();
    writeln!(out, "listening on {}", handle.base_url())?;
    out.flush()?;
    shutdown_signal().await;
    handle.shutdown().await;
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

async fn tables(ctx: &Ctx, cmd: TablesCmd) -> Result<()> {
    let registry = ctx.registry()?;
    match cmd {
        TablesCmd::List => {
            let mut entries = registry.tables().await?;
            entries.sort_by(|a, b| a.def.name().cmp(b.def.name()));
            for e in entries {
                let key: Vec<&str> = e.def.defining_fields().collect();
                println!("{}  ({} columns, defining {})", e.def.name(), e.def.columns().len(), key.join(", "));
            }
        }
        TablesCmd::Describe { name } => print!("{}", render::describe(&registry.table(&name).await?.def)),
    }
    Ok(())
}

async fn producer(ctx: &Ctx, cmd: ProducerCmd) -> Result<()> {
    let mut session = ctx.session()?;
    match cmd {
        ProducerCmd::Create(a) => {
            if let Some(old) = session.producers.get(a.kind.as_str()) {
                bail!("this session already has a {} producer ({}); close it first", a.kind, old.id);
            }
            let def = parse_create_table(&a.table_ddl)?;
            let mut req = CreateProducerRequest::new(a.kind, vec![TableDecl { ddl: a.table_ddl, view: a.view }]);
            req.termination_interval_sec = a.interval;
            req.log_path = a.log_path;
            req.replay_window = a.replay_window;
            req.handler_url = a.handler_url;
            req.producer_id = a.id;
            let created = ctx.agent()?.create_producer(&req).await?;
            session.add_producer(
                a.kind,
                SessionProducer { id: created.id.clone(), endpoint: created.endpoint, tables: vec![def.name().to_owned()] },
            )?;
            ctx.save(&session)?;
            println!("{}", created.id);
        }
        ProducerCmd::Insert { kind, sql } => {
            let (_, p) = session.producer(kind)?;
            let outcome = ctx.agent()?.insert_sql(&p.endpoint, &sql).await?;
            println!("inserted {}", outcome.accepted);
        }
        ProducerCmd::Close { kind } => {
            let (kind, p) = session.producer(kind)?;
            let endpoint = p.endpoint.clone();
            let closed = ctx.agent()?.close_producer(&endpoint).await;
            session.remove_producer(kind);
            ctx.save(&session)?;
            match closed {
                Ok(_) => {}
                // Already gone on the agent side; forgetting it is all that is left.
                Err(e) if e.is_not_found() => eprintln!("rgma: producer was already closed"),
                Err(e) => return Err(e.into()),
            }
        }
        ProducerCmd::List => {
            for (kind, p) in &session.producers {
                println!("{kind}  {}  {}  {}", p.id, p.tables.join(","), p.endpoint);
            }
        }
    }
    Ok(())
}

async fn query(ctx: &Ctx, a: QueryArgs) -> Result<()> {
    let agent = ctx.agent()?;
    if a.query_type != QueryType::Continuous {
        let rs = agent.query(&a.sql, a.query_type).await?;
        for w in &rs.warnings {
            eprintln!("rgma: warning: producer {}: {}", w.producer_id, w.message);
        }
        if a.json {
            println!("{}", serde_json::to_string(&rs)?);
        } else {
            print!("{}", render::table(&rs.columns, &rs.rows));
        }
        return Ok(());
    }

    let req = CreateConsumerRequest {
        query: a.sql,
        query_type: QueryType::Continuous,
        replay: a.replay,
        termination_interval_sec: None,
        buffer_capacity: None,
    };
    let consumer = agent.start_continuous(&req).await?;
    if !a.json {
        print!("{}", render::table(&consumer.columns, &[]));
    }
    std::io::stdout().flush()?;
    let start = Instant::now();
    let mut seen = 0usize;
    let result: Result<()> = async {
        let interrupted = tokio::signal::ctrl_c();
        tokio::pin!(interrupted);
        loop {
            let left = a.max_rows.map_or(1000, |m| m.saturating_sub(seen).min(1000));
            if left == 0 || a.seconds.is_some_and(|s| start.elapsed() >= Duration::from_secs(s)) {
                return Ok(());
            }
            let wait = a.seconds.map_or(Duration::from_secs(1), |s| {
                Duration::from_secs(s).saturating_sub(start.elapsed()).min(Duration::from_secs(1))
            });
            let got = tokio::select! {
                got = agent.pop(&consumer.endpoint, left, wait) => got?,
                _ = &mut interrupted => return Ok(()),
            };
            seen += got.rows.len();
            let mut out = std::io::stdout();
            if a.json {
                for row in &got.rows {
                    writeln!(out, "{}", serde_json::to_string(row)?)?;
                }
            } else {
                write!(out, "{}", render::rows(&got.columns, &got.rows))?;
            }
            if got.dropped > 0 {
                eprintln!("rgma: {} rows dropped by a full buffer", got.dropped);
            }
            out.flush()?;
        }
    }
    .await;
    let closed = agent.close_consumer(&consumer.endpoint).await;
    result?;
    closed?;
    Ok(())
}

async fn archive(ctx: &Ctx, a: ArchiveArgs) -> Result<()> {
    let mut session = ctx.session()?;
    if let Some(ArchiveAction::Stop) = a.action {
        let arch = session.archiver.clone().ok_or_else(|| anyhow!("this session runs no archiver"))?;
        let client = AgentClient::new(ctx.http.clone(), arch.agent.clone());
        let stopped = client.stop_archiver(&arch.id).await;
        session.archiver = None;
        ctx.save(&session)?;
        match stopped {
            Ok(stats) => println!("{}", serde_json::to_string_pretty(&stats)?),
            Err(e) if e.is_not_found() => eprintln!("rgma: archiver was already gone"),
            Err(e) => return Err(e.into()),
        }
        return Ok(());
    }
    if let Some(old) = &session.archiver {
        bail!("this session already runs archiver {}; stop it first", old.id);
    }
    let target = a.target.ok_or_else(|| anyhow!("--target is required"))?;
    if a.tables.is_empty() {
        bail!("at least one --table is required");
    }
    let mut tables = Vec::new();
    for t in &a.tables {
        let t = t.trim();
        let (name, filter) = match t.find(char::is_whitespace) {
            Some(i) => (&t[..i], Some(parse_where(t[i..].trim())?)),
            None => (t, None),
        };
        tables.push(ArchivedTable { table: name.to_owned(), filter });
    }
    let mut spec = ArchiverSpec::new(target.clone(), tables);
    spec.sources = (!a.sources.is_empty()).then_some(a.sources);
    if let Some(n) = a.batch_size {
        spec.batch_size = n;
    }
    if let Some(ms) = a.batch_ms {
        spec.batch_ms = ms;
    }
    let agent = ctx.agent()?;
    let created = agent.create_archiver(&spec).await?;
    session.set_archiver(SessionArchiver { id: created.id.clone(), agent: agent.base().to_owned(), target })?;
    ctx.save(&session)?;
    println!("{}", created.id);
    Ok(())
}

async fn stats(ctx: &Ctx, id: &str) -> Result<()> {
    let json = if id.starts_with("a-") {
        let session = ctx.session()?;
        let client = match session.archiver.filter(|a| a.id == id) {
            Some(a) => AgentClient::new(ctx.http.clone(), a.agent),
            None => ctx.agent()?,
        };
        serde_json::to_string_pretty(&client.archiver_stats(id).await?)?
    } else if id.starts_with("c-") {
        let agent = ctx.agent()?;
        let endpoint = format!("{}/consumer/{id}", agent.base());
        serde_json::to_string_pretty(&agent.consumer_stats(&endpoint).await?)?
    } else {
        let entries = ctx.registry()?.producer(id).await?;
        let entry = entries.first().ok_or_else(|| anyhow!("producer {id} publishes nothing"))?;
        serde_json::to_string_pretty(&ctx.agent()?.producer_stats(&entry.endpoint).await?)?
    };
    println!("{json}");
    Ok(())
}

async fn simulate(ctx: &Ctx, a: SimArgs) -> Result<()> {
    let mut topology = match &a.topology {
        Some(p) => Topology::load(p)?,
        None => Topology::default(),
    };
    if let Some(n) = a.sites {
        topology.sites = n;
    }
    if let Some(ms) = a.period_ms {
        topology.period_ms = ms;
    }
    if let Some(s) = a.duration_sec {
        topology.duration_sec = s;
    }
    topology.validate()?;
    let flags: &[bool] = match a.vector {
        Vector::On => &[true],
        Vector::Off => &[false],
        Vector::Both => &[true, false],
    };
    let mut reports = Vec::new();
    for &vector in flags {
        let opts =
            SimOptions { topology: topology.clone(), vector, registry_url: ctx.registry_url.clone(), agent_url: ctx.agent.clone() };
        let report = simulate::run(&opts).await?;
        if !a.json {
            print!("{}", report.summary());
        }
        reports.push(report);
    }
    if let [on, off] = reports.as_slice() {
        if !a.json {
            print!("{}", simulate::compare(on, off));
        }
    }
    let structured = serde_json::to_string_pretty(&reports)?;
    if a.json {
        println!("{structured}");
    }
    if let Some(path) = a.report {
        std::fs::write(&path, structured).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        registry_url: cli.registry_url.clone(),
        agent: cli.agent,
        session_path: cli.session.unwrap_or_else(session::default_path),
        http: Http::new(Duration::from_millis(cli.timeout_ms)),
    };
    match cli.command {
        Command::Agent(a) => run_agent(cli.registry_url, a).await,
        Command::Tables { cmd } => tables(&ctx, cmd).await,
        Command::Producer { cmd } => producer(&ctx, cmd).await,
        Command::Query(a) => query(&ctx, a).await,
        Command::Archive(a) => archive(&ctx, a).await,
        Command::Stats { id } => stats(&ctx, &id).await,
        Command::Simulate(a) => {
            init_logging("warn")?;
            simulate(&ctx, a).await
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("rgma: cannot start the runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rgma: {e:#}");
            ExitCode::FAILURE
        }
    }
}
