mod support;

use std::time::{Duration, Instant};

use rgma_agents::protocol::*;
use rgma_agents::ClientError;
use rgma_core::archiver::{ArchivedTable, ArchiverSpec};
use rgma_core::{ProducerKind, QueryType, Value};
use support::*;

#[tokio::test(flavor = "multi_thread")]
async fn registry_tables_and_errors() {
    let reg = registry_agent().await;
    let rc = reg.registry_client();
    let entry = rc.create_table(CPU).await.unwrap();
    assert_eq!(entry.def.name(), "CpuLoad");
    // Same definition again is fine, a different one clashes.
    rc.create_table(&CPU.to_lowercase()).await.unwrap();
    let clash = rc.create_table("CREATE TABLE CpuLoad (host STRING(16), PRIMARY KEY (host))").await.unwrap_err();
    assert_eq!(clash.status(), Some(409));
    assert_eq!(rc.tables().await.unwrap().len(), 1);
    assert_eq!(rc.table("cpuload").await.unwrap().def, entry.def);
    assert_eq!(rc.table("Nope").await.unwrap_err().status(), Some(404));
    assert_eq!(rc.heartbeat("no-such-id").await.unwrap_err().status(), Some(404));
    assert_eq!(rc.consumer("no-such-id").await.unwrap_err().status(), Some(404));
    assert_eq!(rc.create_table("CREATE TABLE").await.unwrap_err().status(), Some(400));
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn history_and_latest_queries_across_agents() {
    let reg = registry_agent().await;
    let a = agent_for(reg.base_url()).await;
    let b = agent_for(reg.base_url()).await;
    let (ca, cb) = (a.client(), b.client());

    let db = ca.create_producer(&producer(ProducerKind::Database, CPU, "")).await.unwrap();
    let l1 = ca.create_producer(&producer(ProducerKind::Latest, CPU, "WHERE site = 'RAL'")).await.unwrap();
    let l2 = cb.create_producer(&producer(ProducerKind::Latest, CPU, "WHERE site = 'CERN'")).await.unwrap();

    for sql in [
        "INSERT INTO CpuLoad (host, site, load1, RgmaTimestamp) VALUES ('n1', 'RAL', 0.5, 10)",
        "INSERT INTO CpuLoad (host, site, load1, RgmaTimestamp) VALUES ('n1', 'RAL', 0.7, 20)",
        "INSERT INTO CpuLoad (host, site, load1, RgmaTimestamp) VALUES ('n2', 'RAL', 0.1, 10)",
    ] {
        ca.insert_sql(&db.endpoint, sql).await.unwrap();
        ca.insert_sql(&l1.endpoint, sql).await.unwrap();
    }
    cb.insert_sql(&l2.endpoint, "INSERT INTO CpuLoad (host, site, load1, RgmaTimestamp) VALUES ('n3', 'CERN', 0.9, 15)")
        .await
        .unwrap();

    let h = cb.query("SELECT host, load1 FROM CpuLoad WHERE load1 > 0.2", QueryType::History).await.unwrap();
    assert_eq!(h.columns, ["host", "load1"]);
    assert_eq!(h.rows, vec![vec![Value::from("n1"), Value::Real(0.5)], vec![Value::from("n1"), Value::Real(0.7)]]);
    assert!(h.warnings.is_empty());

    let mut l = ca.query("SELECT host, load1, RgmaTimestamp FROM CpuLoad", QueryType::Latest).await.unwrap();
    l.rows.sort_by(|x, y| x[0].to_string().cmp(&y[0].to_string()));
    assert_eq!(
        l.rows,
        vec![
            vec![Value::from("n1"), Value::Real(0.7), Value::Int(20)],
            vec![Value::from("n2"), Value::Real(0.1), Value::Int(10)],
            vec![Value::from("n3"), Value::Real(0.9), Value::Int(15)],
        ]
    );

    // Merge first, then filter: n1's current value is 0.7, so an old
    // matching value must not resurface.
    let only = ca.query("SELECT host FROM CpuLoad WHERE load1 < 0.6 AND site = 'RAL'", QueryType::Latest).await.unwrap();
    assert_eq!(only.rows, vec![vec![Value::from("n2")]]);

    // The CERN producer contradicts site = 'RAL' and is never asked.
    let log = cb.producer_stats(&l2.endpoint).await.unwrap().access_log;
    assert_eq!(log.len(), 1, "{log:?}");

    assert_eq!(cb.query("SELECT * FROM Missing", QueryType::History).await.unwrap_err().status(), Some(404));
    assert_eq!(cb.query("SELEKT", QueryType::History).await.unwrap_err().status(), Some(400));
    for h in [a, b, reg] {
        h.shutdown().await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn joins_go_to_a_database_holding_both_tables() {
    let reg = registry_agent().await;
    let a = agent_for(reg.base_url()).await;
    let c = a.client();
    let site = "CREATE TABLE Site (site STRING(16), country STRING(16), PRIMARY KEY (site))";
    let req = CreateProducerRequest::new(
        ProducerKind::Database,
        vec![TableDecl { ddl: CPU.into(), view: String::new() }, TableDecl { ddl: site.into(), view: String::new() }],
    );
    let db = c.create_producer(&req).await.unwrap();
    c.insert_sql(&db.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('n1', 'RAL', 0.5), ('n2', 'CERN', 0.2)")
        .await
        .unwrap();
    c.insert_sql(&db.endpoint, "INSERT INTO Site (site, country) VALUES ('RAL', 'UK'), ('CERN', 'CH')").await.unwrap();
    let r = c
        .query(
            "SELECT c.host, s.country FROM CpuLoad c, Site s WHERE c.site = s.site AND c.load1 > 0.3",
            QueryType::History,
        )
        .await
        .unwrap();
    assert_eq!(r.rows, vec![vec![Value::from("n1"), Value::from("UK")]]);
    a.shutdown().await;
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn continuous_stream_with_late_producer_and_views() {
    let reg = registry_agent().await;
    let pa = agent_for(reg.base_url()).await;
    let ca = agent_for(reg.base_url()).await;
    let (pc, cc) = (pa.client(), ca.client());

    let early = pc.create_producer(&producer(ProducerKind::Stream, CPU, "WHERE site = 'RAL'")).await.unwrap();
    let stream = cc
        .start_continuous(&CreateConsumerRequest {
            query: "SELECT host, load1 FROM CpuLoad WHERE site = 'RAL' AND load1 > 0.5".into(),
            query_type: QueryType::Continuous,
            replay: false,
            termination_interval_sec: None,
            buffer_capacity: None,
        })
        .await
        .unwrap();
    assert_eq!(stream.columns, ["host", "load1"]);

    // A silent stream times out empty after about the requested wait.
    let t0 = Instant::now();
    assert!(cc.pop(&stream.endpoint, 10, Duration::from_millis(100)).await.unwrap().rows.is_empty());
    assert!(t0.elapsed() >= Duration::from_millis(90));

    pc.insert_sql(&early.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('a', 'RAL', 0.9), ('b', 'RAL', 0.1)")
        .await
        .unwrap();
    let got = cc.pop(&stream.endpoint, 10, Duration::from_secs(3)).await.unwrap();
    assert_eq!(got.rows, vec![vec![Value::from("a"), Value::Real(0.9)]]);

    // Registered after the consumer: found by notification.
    let late = pc.create_producer(&producer(ProducerKind::Stream, CPU, "")).await.unwrap();
    let other = pc.create_producer(&producer(ProducerKind::Stream, CPU, "WHERE site = 'CERN'")).await.unwrap();
    let subscribed = eventually(Duration::from_secs(5), || async {
        let s = cc.consumer_stats(&stream.endpoint).await.unwrap();
        (s.sources.iter().filter(|s| s.subscription_id.is_some()).count() == 2).then_some(s)
    })
    .await
    .expect("late producer subscribed");
    assert!(subscribed.sources.iter().all(|s| s.producer_id != other.id));
    pc.insert_sql(&late.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('c', 'RAL', 0.8), ('d', 'CERN', 0.8)")
        .await
        .unwrap();
    let got = cc.pop(&stream.endpoint, 10, Duration::from_secs(3)).await.unwrap();
    assert_eq!(got.rows, vec![vec![Value::from("c"), Value::Real(0.8)]]);

    // A duplicate notification opens nothing new.
    let entry = reg.registry_client().producer(&late.id).await.unwrap().remove(0);
    let http = cc.http().clone();
    let ack: Ack = http.post(&format!("{}/notify", stream.endpoint), &NotifyRequest { producer: entry }).await.unwrap();
    assert_eq!(ack.accepted, 0);
    let stats = pc.producer_stats(&late.endpoint).await.unwrap();
    assert_eq!(stats.stats.subscriptions.len(), 1);
    // The contradicting producer was never contacted.
    assert!(pc.producer_stats(&other.endpoint).await.unwrap().access_log.is_empty());

    for h in [pa, ca, reg] {
        h.shutdown().await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn dead_consumer_subscriptions_are_collected() {
    let reg = registry_agent().await;
    let pa = agent_for(reg.base_url()).await;
    let ca = agent_for(reg.base_url()).await;
    let pc = pa.client();
    let p = pc.create_producer(&producer(ProducerKind::Stream, CPU, "")).await.unwrap();
    let req = CreateConsumerRequest {
        query: "SELECT * FROM CpuLoad".into(),
        query_type: QueryType::Continuous,
        replay: false,
        termination_interval_sec: None,
        buffer_capacity: None,
    };
    ca.client().start_continuous(&req).await.unwrap();
    assert_eq!(pc.producer_stats(&p.endpoint).await.unwrap().stats.subscriptions.len(), 1);
    ca.kill().await;
    pc.insert_sql(&p.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('a', 'RAL', 0.9)").await.unwrap();
    let gone = eventually(Duration::from_secs(10), || async {
        pc.producer_stats(&p.endpoint).await.unwrap().stats.subscriptions.is_empty().then_some(())
    })
    .await;
    assert!(gone.is_some(), "subscription survived a dead sink");
    pa.shutdown().await;
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_target_becomes_a_warning() {
    let reg = registry_agent().await;
    let a = agent_for(reg.base_url()).await;
    let rc = reg.registry_client();
    rc.create_table(CPU).await.unwrap();
    let dead = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap().local_addr().unwrap();
    rc.register_producer(&rgma_core::registry::ProducerRegistration {
        producer_id: Some("ghost".into()),
        endpoint: format!("http://{dead}/producer/ghost"),
        kind: ProducerKind::Database,
        tables: vec![rgma_core::registry::TableView {
            table: "CpuLoad".into(),
            view: rgma_core::sql::ViewPredicate::whole_table(),
        }],
        termination_interval_sec: 60,
    })
    .await
    .unwrap();
    let live = a.client().create_producer(&producer(ProducerKind::Database, CPU, "")).await.unwrap();
    a.client().insert_sql(&live.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('a', 'RAL', 1.0)").await.unwrap();
    let t0 = Instant::now();
    let r = a.client().query("SELECT host FROM CpuLoad", QueryType::History).await.unwrap();
    assert!(t0.elapsed() < Duration::from_secs(5));
    assert_eq!(r.rows, vec![vec![Value::from("a")]]);
    assert_eq!(r.warnings.len(), 1);
    assert_eq!(r.warnings[0].producer_id, "ghost");
    a.shutdown().await;
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn canonical_producer_forwards_to_its_handler() {
    use axum::routing::post;
    use axum::Json;
    let handler = axum::Router::new().route(
        "/answer",
        post(|Json(body): Json<serde_json::Value>| async move {
            assert!(body["query"].as_str().unwrap().starts_with("SELECT"));
            Json(serde_json::json!({ "rows": [
                { "uri": "gridftp://a", "status": "up", "RgmaTimestamp": 5 },
                { "uri": "gridftp://b", "status": "down" }
            ]}))
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}/answer", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, handler).await.unwrap() });

    let reg = registry_agent().await;
    let a = agent_for(reg.base_url()).await;
    let mut req = producer(
        ProducerKind::Canonical,
        "CREATE TABLE ServiceStatus (uri STRING(64), status STRING(8), PRIMARY KEY (uri))",
        "",
    );
    req.handler_url = Some(url);
    let c = a.client();
    let p = c.create_producer(&req).await.unwrap();
    let r = c.query("SELECT uri FROM ServiceStatus WHERE status = 'up'", QueryType::Latest).await.unwrap();
    assert_eq!(r.rows, vec![vec![Value::from("gridftp://a")]]);
    let r = c.query("SELECT uri FROM ServiceStatus", QueryType::History).await.unwrap();
    assert_eq!(r.rows.len(), 2);
    let err = c.insert_sql(&p.endpoint, "INSERT INTO ServiceStatus (uri, status) VALUES ('x', 'y')").await.unwrap_err();
    assert_eq!(err.status(), Some(400));
    a.shutdown().await;
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn archiver_copies_a_stream_into_a_database() {
    let reg = registry_agent().await;
    let a = agent_for(reg.base_url()).await;
    let c = a.client();
    let sp = c.create_producer(&producer(ProducerKind::Stream, CPU, "")).await.unwrap();
    let db = c.create_producer(&producer(ProducerKind::Database, CPU, "")).await.unwrap();
    let arch = c
        .create_archiver(&ArchiverSpec::new(db.id.clone(), vec![ArchivedTable { table: "CpuLoad".into(), filter: None }]))
        .await
        .unwrap();

    // The target is owned now.
    let err = c.insert_sql(&db.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('x', 'RAL', 1.0)").await.unwrap_err();
    assert_eq!(err.status(), Some(409));

    for i in 0..50 {
        let sql = format!("INSERT INTO CpuLoad (host, site, load1, RgmaTimestamp) VALUES ('n{i}', 'RAL', {i}.0, {i})");
        c.insert_sql(&sp.endpoint, &sql).await.unwrap();
    }
    let done = eventually(Duration::from_secs(5), || async {
        let s = c.archiver_stats(&arch.id).await.unwrap();
        (s.tables[0].archived == 50).then_some(s)
    })
    .await
    .expect("all tuples archived");
    assert_eq!(done.tables[0].max_timestamp, Some(49));
    let h = c.query("SELECT RgmaTimestamp FROM CpuLoad", QueryType::History).await.unwrap();
    let mut ts: Vec<i64> = h.rows.iter().map(|r| r[0].as_i64().unwrap()).collect();
    ts.sort();
    assert_eq!(ts, (0..50).collect::<Vec<_>>());

    let fin = c.stop_archiver(&arch.id).await.unwrap();
    assert!(!fin.running);
    assert_eq!(fin.tables[0].archived, 50);
    c.insert_sql(&db.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('x', 'RAL', 1.0)").await.unwrap();
    assert!(matches!(c.archiver_stats(&arch.id).await, Err(ClientError::Status { status: 404, .. })));
    a.shutdown().await;
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn producer_validation_errors_are_reported() {
    let reg = registry_agent().await;
    let a = agent_for(reg.base_url()).await;
    let c = a.client();
    let mut cleanup_on_stream = producer(ProducerKind::Stream, CPU, "");
    cleanup_on_stream.cleanup = vec![rgma_core::producer::CleanupRule {
        table: "CpuLoad".into(),
        filter: rgma_core::sql::parse_where("load1 > 1").unwrap(),
        interval_sec: 1,
    }];
    assert_eq!(c.create_producer(&cleanup_on_stream).await.unwrap_err().status(), Some(400));
    assert_eq!(c.create_producer(&producer(ProducerKind::Stream, CPU, "WHERE load1 > 1")).await.unwrap_err().status(), Some(400));
    let p = c.create_producer(&producer(ProducerKind::Stream, CPU, "WHERE site = 'RAL'")).await.unwrap();
    let err = c.insert_sql(&p.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('a', 'CERN', 1.0)").await.unwrap_err();
    assert_eq!(err.status(), Some(400));
    let err = c.query_producer(&p.endpoint, &ProducerQueryRequest { query: "SELECT * FROM CpuLoad".into(), query_type: QueryType::History }).await.unwrap_err();
    assert_eq!(err.status(), Some(400));
    assert_eq!(c.producer_stats(&format!("{}/producer/nope", a.base_url())).await.unwrap_err().status(), Some(404));
    a.shutdown().await;
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn cleanup_rule_runs_periodically() {
    let reg = registry_agent().await;
    let a = agent_for(reg.base_url()).await;
    let c = a.client();
    let mut req = producer(ProducerKind::Database, CPU, "");
    req.cleanup = vec![rgma_core::producer::CleanupRule {
        table: "CpuLoad".into(),
        filter: rgma_core::sql::parse_where("RgmaTimestamp < NOW() - 1000").unwrap(),
        interval_sec: 1,
    }];
    let p = c.create_producer(&req).await.unwrap();
    c.insert_sql(&p.endpoint, "INSERT INTO CpuLoad (host, site, load1, RgmaTimestamp) VALUES ('old', 'RAL', 1.0, 0)").await.unwrap();
    c.insert_sql(&p.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('new', 'RAL', 1.0)").await.unwrap();
    let rows = |n: usize| {
        let c = c.clone();
        async move {
            let r = c.query("SELECT host FROM CpuLoad", QueryType::History).await.unwrap();
            (r.rows.len() == n).then_some(r)
        }
    };
    assert!(rows(2).await.is_some());
    let left = eventually(Duration::from_secs(4), || rows(1)).await.expect("old row cleaned");
    assert_eq!(left.rows, vec![vec![Value::from("new")]]);
    a.shutdown().await;
    reg.shutdown().await;
}
