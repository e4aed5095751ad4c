mod support;

use std::time::{Duration, Instant};

use rgma_agents::protocol::CreateConsumerRequest;
use rgma_agents::{AgentConfig, AgentHandle, RegistryClient};
use rgma_core::{ProducerKind, QueryType, Value};
use support::*;

async fn listed(rc: &RegistryClient, id: &str) -> bool {
    rc.lookup(&Default::default()).await.unwrap().iter().any(|e| e.producer_id == id)
}

fn short_lease(kind: ProducerKind) -> rgma_agents::protocol::CreateProducerRequest {
    let mut req = producer(kind, CPU, "");
    req.termination_interval_sec = Some(1);
    req
}

#[tokio::test(flavor = "multi_thread")]
async fn heartbeats_keep_entries_and_silence_expires_them() {
    let reg = registry_agent().await;
    let rc = reg.registry_client();
    let a = agent_for(reg.base_url()).await;
    let p = a.client().create_producer(&short_lease(ProducerKind::Stream)).await.unwrap();
    let start = Instant::now();
    while start.elapsed() < Duration::from_secs(5) {
        assert!(listed(&rc, &p.id).await, "expired at {:?} despite heartbeats", start.elapsed());
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    a.kill().await;
    let killed = Instant::now();
    let gone = eventually(Duration::from_secs(3), || async { (!listed(&rc, &p.id).await).then_some(killed.elapsed()) })
        .await
        .expect("entry expired");
    assert!(gone <= Duration::from_millis(1200), "took {gone:?}");
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn partition_expires_then_reregisters_on_heal() {
    let reg = registry_agent().await;
    let rc = reg.registry_client();
    let proxy = Proxy::start(reg.addr()).await;
    let a = agent_for(&proxy.url()).await;
    let p = a.client().create_producer(&short_lease(ProducerKind::Database)).await.unwrap();
    assert!(listed(&rc, &p.id).await);
    proxy.cut();
    eventually(Duration::from_secs(3), || async { (!listed(&rc, &p.id).await).then_some(()) })
        .await
        .expect("expired during partition");
    proxy.heal();
    eventually(Duration::from_secs(8), || async { listed(&rc, &p.id).await.then_some(()) })
        .await
        .expect("re-registered after heal");
    // The table is still queryable through the registry after recovery.
    a.client().insert_sql(&p.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('a', 'RAL', 1.0)").await.unwrap();
    let r = a.client().query("SELECT host FROM CpuLoad", QueryType::History).await.unwrap();
    assert_eq!(r.rows, vec![vec![Value::from("a")]]);
    a.shutdown().await;
    reg.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn registry_restart_is_recovered_silently() {
    let reg = registry_agent().await;
    let addr = reg.addr();
    let url = reg.base_url().to_string();
    let a = agent_for(&url).await;
    let c = a.client();
    let early = c.create_producer(&short_lease(ProducerKind::Stream)).await.unwrap();
    let stream = c
        .start_continuous(&CreateConsumerRequest {
            query: "SELECT host FROM CpuLoad".into(),
            query_type: QueryType::Continuous,
            replay: false,
            termination_interval_sec: Some(1),
            buffer_capacity: None,
        })
        .await
        .unwrap();

    reg.kill().await;
    let reg = AgentHandle::start(AgentConfig { host_registry: true, listen_address: addr, ..fast_config() }).await.unwrap();
    let restarted = Instant::now();
    let rc = reg.registry_client();
    assert!(rc.tables().await.unwrap().is_empty());
    eventually(Duration::from_secs(3), || async {
        let consumer_back = rc.consumer(&stream.id).await.is_ok();
        (listed(&rc, &early.id).await && consumer_back).then_some(())
    })
    .await
    .expect("clients re-registered");
    assert!(restarted.elapsed() <= Duration::from_secs(1) + Duration::from_millis(300), "{:?}", restarted.elapsed());

    // Existing subscriptions kept flowing, and a producer that appears
    // after the restart reaches the consumer through the new registry.
    c.insert_sql(&early.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('old', 'RAL', 1.0)").await.unwrap();
    let late = c.create_producer(&short_lease(ProducerKind::Stream)).await.unwrap();
    eventually(Duration::from_secs(3), || async {
        let s = c.consumer_stats(&stream.endpoint).await.unwrap();
        s.sources.iter().any(|s| s.producer_id == late.id && s.subscription_id.is_some()).then_some(())
    })
    .await
    .expect("late producer subscribed");
    c.insert_sql(&late.endpoint, "INSERT INTO CpuLoad (host, site, load1) VALUES ('new', 'RAL', 1.0)").await.unwrap();
    let mut hosts = Vec::new();
    while hosts.len() < 2 {
        let got = c.pop(&stream.endpoint, 10, Duration::from_secs(3)).await.unwrap();
        assert!(!got.rows.is_empty(), "stream stalled with {hosts:?}");
        hosts.extend(got.rows.into_iter().map(|r| r[0].clone()));
    }
    hosts.sort_by_key(|v| v.to_string());
    assert_eq!(hosts, [Value::from("new"), Value::from("old")]);
    a.shutdown().await;
    reg.shutdown().await;
}
