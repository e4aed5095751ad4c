use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rgma_core::mediator::{plan, serves, Combine};
use rgma_core::registry::{ConsumerRegistration, ProducerRegistration, Registry, TableView};
use rgma_core::sql::{parse_create_table, SelectQuery, ViewPredicate};
use rgma_core::{ManualClock, ProducerKind, QueryType, TableDef};

fn table() -> TableDef {
    parse_create_table("CREATE TABLE T (i INT, j INT, s STRING(4), x REAL, PRIMARY KEY (i))").unwrap()
}

/// Serving matrix written out row by row.
const MATRIX: [(ProducerKind, [bool; 3]); 5] = [
    // HISTORY, LATEST, CONTINUOUS
    (ProducerKind::Stream, [false, false, true]),
    (ProducerKind::ResilientStream, [false, false, true]),
    (ProducerKind::Database, [true, false, false]),
    (ProducerKind::Latest, [false, true, false]),
    (ProducerKind::Canonical, [true, true, false]),
];

const TYPES: [QueryType; 3] = [QueryType::History, QueryType::Latest, QueryType::Continuous];

#[test]
fn all_fifteen_pairs() {
    for (kind, row) in MATRIX {
        for (qt, want) in TYPES.iter().zip(row) {
            assert_eq!(serves(kind, *qt), want, "{kind} x {qt}");
        }
    }
}

fn registration(id: String, kind: ProducerKind, view: ViewPredicate) -> ProducerRegistration {
    ProducerRegistration {
        producer_id: Some(id.clone()),
        endpoint: format!("http://h/producer/{id}"),
        kind,
        tables: vec![TableView { table: "T".into(), view }],
        termination_interval_sec: 60,
    }
}

#[test]
fn lookup_equals_brute_force() {
    let def = table();
    let mut rng = StdRng::seed_from_u64(3);
    for round in 0..100 {
        let reg = Registry::new(Arc::new(ManualClock::new(0)));
        reg.create_table(def.clone()).unwrap();
        let mut views = Vec::new();
        for n in 0..12 {
            let kind = MATRIX[rng.gen_range(0..5)].0;
            let mut conjuncts = Vec::new();
            for c in def.columns() {
                if rng.gen_bool(0.3) {
                    conjuncts.push((c.name.clone(), rgma_oracle::literal_for(&mut rng, c.ty)));
                }
            }
            let view = ViewPredicate { conjuncts };
            views.push((format!("p{n:02}"), kind, view.clone()));
            reg.register_producer(registration(format!("p{n:02}"), kind, view)).unwrap();
        }
        let filter = rgma_oracle::random_where(&mut rng, &def, 3);
        for qt in TYPES {
            let got: Vec<String> = reg
                .lookup_table("T", qt, Some(filter.clone()))
                .unwrap()
                .into_iter()
                .map(|e| e.producer_id)
                .collect();
            // Every returned producer serves the type and is satisfiable;
            // every live producer of a serving kind with a satisfiable view
            // is returned.
            for (id, kind, view) in &views {
                let feasible = rgma_oracle::satisfiable(&def, &view.conjuncts, &filter);
                if got.contains(id) {
                    assert!(serves(*kind, qt), "round {round}: {id} {kind} returned for {qt}");
                } else if serves(*kind, qt) {
                    assert!(!feasible, "round {round}: {id} dropped for {qt} although {view} AND {filter} is satisfiable");
                }
            }
        }
    }
}

#[test]
fn register_consumer_reports_the_same_list() {
    let def = table();
    let reg = Registry::new(Arc::new(ManualClock::new(0)));
    reg.create_table(def).unwrap();
    let view = |s: &str| rgma_core::sql::parse_view_predicate(s).unwrap();
    reg.register_producer(registration("a".into(), ProducerKind::Stream, view("WHERE s = 'a'"))).unwrap();
    reg.register_producer(registration("b".into(), ProducerKind::Stream, view("WHERE s = 'b'"))).unwrap();
    reg.register_producer(registration("c".into(), ProducerKind::Latest, view(""))).unwrap();
    let query = rgma_core::sql::parse_select("SELECT * FROM T WHERE s = 'a' AND x > 0").unwrap();
    let (_, list) = reg
        .register_consumer(ConsumerRegistration {
            consumer_id: None,
            endpoint: "http://h/consumer/c".into(),
            query: query.clone(),
            query_type: QueryType::Continuous,
            termination_interval_sec: 60,
        })
        .unwrap();
    assert_eq!(list, reg.lookup(&query, QueryType::Continuous).unwrap());
    assert_eq!(list.iter().map(|e| e.producer_id.as_str()).collect::<Vec<_>>(), ["a"]);
}

#[test]
fn plan_combine_follows_query_type() {
    let reg = Registry::new(Arc::new(ManualClock::new(0)));
    reg.create_table(table()).unwrap();
    let q = SelectQuery::star("T", None);
    let bound = rgma_core::sql::bind_select(&q, &[table()], 0).unwrap();
    for (qt, combine) in TYPES.iter().zip([Combine::UnionAll, Combine::LatestMerge, Combine::Interleave]) {
        assert_eq!(plan(&bound, *qt, &[]).combine, combine);
        assert!(plan(&bound, *qt, &[]).targets.is_empty());
    }
}
