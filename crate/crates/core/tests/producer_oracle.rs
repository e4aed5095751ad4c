use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rgma_core::mediator::Rows;
use rgma_core::producer::{Producer, ProducerConfig, ProducerError, TableSpec};
use rgma_core::sql::{
    bind_select, parse_create_table, ColumnRef, CmpOp, Operand, Projection, SelectQuery, TableRef, ViewPredicate,
    WhereExpr,
};
use rgma_core::{ManualClock, ProducerKind, QueryType, RawTuple, TableDef, Tuple, Value};

fn left() -> TableDef {
    parse_create_table("CREATE TABLE L (id INT, grp STRING(4), w REAL, PRIMARY KEY (id))").unwrap()
}

fn right() -> TableDef {
    parse_create_table("CREATE TABLE R (rid INT, ref INT, tag STRING(4), PRIMARY KEY (rid))").unwrap()
}

fn database(defs: &[TableDef]) -> Producer {
    let specs = defs.iter().map(|d| TableSpec { def: d.clone(), view: ViewPredicate::whole_table() }).collect();
    Producer::create(ProducerConfig::new(ProducerKind::Database, specs), Arc::new(ManualClock::new(0))).unwrap()
}

fn fill(rng: &mut StdRng, def: &TableDef, n: usize) -> Vec<Tuple> {
    (0..n).map(|i| rgma_oracle::random_tuple(rng, def, i as i64 % 7)).collect()
}

fn qualify(expr: &WhereExpr, alias: &str) -> WhereExpr {
    match expr {
        WhereExpr::And(xs) => WhereExpr::and(xs.iter().map(|x| qualify(x, alias))),
        WhereExpr::Or(xs) => WhereExpr::or(xs.iter().map(|x| qualify(x, alias))),
        WhereExpr::Cmp(c) => {
            let q = |o: &Operand| match o {
                Operand::Column(col) => Operand::Column(ColumnRef::qualified(alias, col.name.clone())),
                o => o.clone(),
            };
            WhereExpr::cmp(q(&c.left), c.op, q(&c.right))
        }
    }
}

fn project(bound: &rgma_core::sql::BoundSelect, rows: Rows) -> Vec<Vec<Value>> {
    match rows {
        Rows::Single(v) => v.iter().map(|t| bound.project(&[t])).collect(),
        Rows::Joined(v) => v.iter().map(|(a, b)| bound.project(&[a, b])).collect(),
    }
}

#[test]
fn database_matches_nested_loop_oracle() {
    let mut rng = StdRng::seed_from_u64(2024);
    let (l, r) = (left(), right());
    for round in 0..60 {
        let p = database(&[l.clone(), r.clone()]);
        let nl = rng.gen_range(0..=300);
        let lt = fill(&mut rng, &l, nl);
        let rt = fill(&mut rng, &r, 300 - nl);
        for chunk in lt.chunks(50) {
            p.insert(chunk.iter().map(|t| RawTuple::from_tuple(&l, t)).collect(), None).unwrap();
        }
        for chunk in rt.chunks(50) {
            p.insert(chunk.iter().map(|t| RawTuple::from_tuple(&r, t)).collect(), None).unwrap();
        }
        let query = if round % 2 == 0 {
            SelectQuery {
                projection: Projection::Star,
                tables: vec![TableRef { name: "L".into(), alias: None }],
                filter: rng.gen_bool(0.9).then(|| rgma_oracle::random_where(&mut rng, &l, 3)),
            }
        } else {
            let eq = WhereExpr::cmp(
                Operand::Column(ColumnRef::qualified("a", "id")),
                CmpOp::Eq,
                Operand::Column(ColumnRef::qualified("b", "ref")),
            );
            let mut parts = vec![eq];
            if rng.gen_bool(0.7) {
                parts.push(qualify(&rgma_oracle::random_where(&mut rng, &l, 2), "a"));
            }
            if rng.gen_bool(0.7) {
                parts.push(qualify(&rgma_oracle::random_where(&mut rng, &r, 2), "b"));
            }
            parts.shuffle(&mut rng);
            SelectQuery {
                projection: Projection::Columns(vec![
                    ColumnRef::qualified("a", "grp"),
                    ColumnRef::qualified("b", "tag"),
                    ColumnRef::qualified("b", "RgmaTimestamp"),
                ]),
                tables: vec![
                    TableRef { name: "L".into(), alias: Some("a".into()) },
                    TableRef { name: "R".into(), alias: Some("b".into()) },
                ],
                filter: Some(if parts.len() == 1 { parts.pop().unwrap() } else { WhereExpr::and(parts) }),
            }
        };
        let bound = bind_select(&query, &[l.clone(), r.clone()], 0).unwrap();
        let got = project(&bound, p.answer_query(&query, QueryType::History).unwrap());
        let want = rgma_oracle::select(&query, &[(&l, &lt), (&r, &rt)], 0);
        assert_eq!(got, want, "round {round}: {query}");
    }
}

fn stream_with_subs(kind: ProducerKind, log: Option<std::path::PathBuf>) -> (Producer, Vec<Arc<rgma_core::producer::Subscription>>) {
    let mut cfg = ProducerConfig::new(kind, vec![TableSpec { def: left(), view: ViewPredicate::whole_table() }]);
    cfg.resilient_log_path = log;
    let p = Producer::create(cfg, Arc::new(ManualClock::new(0))).unwrap();
    let subs = ["SELECT * FROM L", "SELECT * FROM L WHERE grp = 'a'", "SELECT * FROM L WHERE w > 0 OR id < 0"]
        .iter()
        .map(|q| p.subscribe(&rgma_core::sql::parse_select(q).unwrap(), "sink", false).unwrap())
        .collect();
    (p, subs)
}

#[test]
fn vector_insert_equals_sequential() {
    let mut rng = StdRng::seed_from_u64(5);
    let l = left();
    let tuples = fill(&mut rng, &l, 300);
    let raws: Vec<RawTuple> = tuples.iter().map(|t| RawTuple::from_tuple(&l, t)).collect();

    for kind in [ProducerKind::Database, ProducerKind::Latest] {
        let specs = vec![TableSpec { def: l.clone(), view: ViewPredicate::whole_table() }];
        let vector = Producer::create(ProducerConfig::new(kind, specs.clone()), Arc::new(ManualClock::new(0))).unwrap();
        let single = Producer::create(ProducerConfig::new(kind, specs), Arc::new(ManualClock::new(0))).unwrap();
        for chunk in raws.chunks(17) {
            vector.insert(chunk.to_vec(), None).unwrap();
        }
        for r in &raws {
            single.insert(vec![r.clone()], None).unwrap();
        }
        assert_eq!(vector.rows("L").unwrap(), single.rows("L").unwrap(), "{kind}");
    }

    let (vector, vsubs) = stream_with_subs(ProducerKind::Stream, None);
    let (single, ssubs) = stream_with_subs(ProducerKind::Stream, None);
    vector.insert(raws.clone(), None).unwrap();
    for r in &raws {
        single.insert(vec![r.clone()], None).unwrap();
    }
    for (v, s) in vsubs.iter().zip(&ssubs) {
        let (dv, ds) = (v.drain(usize::MAX), s.drain(usize::MAX));
        let want: Vec<Tuple> = tuples.iter().filter(|t| v.wants(t)).cloned().collect();
        assert_eq!(dv, ds);
        assert_eq!(dv, want);
    }
}

#[test]
fn delivered_tuples_satisfy_view_and_filter() {
    let mut rng = StdRng::seed_from_u64(9);
    let l = left();
    let mut cfg = ProducerConfig::new(
        ProducerKind::Stream,
        vec![TableSpec { def: l.clone(), view: rgma_core::sql::parse_view_predicate("WHERE grp = 'a'").unwrap() }],
    );
    cfg.stream_buffer_capacity = 100_000;
    let p = Producer::create(cfg, Arc::new(ManualClock::new(0))).unwrap();
    let filter = rgma_oracle::random_where(&mut rng, &l, 3);
    let sub = p.subscribe(&SelectQuery::star("L", Some(filter.clone())), "sink", false).unwrap();
    let mut accepted = Vec::new();
    for t in fill(&mut rng, &l, 500) {
        match p.insert(vec![RawTuple::from_tuple(&l, &t)], None) {
            Ok(_) => accepted.push(t),
            Err(ProducerError::ViewViolation { .. }) => assert_eq!(t.values()[1], Value::from("b")),
            Err(e) => panic!("{e}"),
        }
    }
    let want: Vec<Tuple> = accepted.into_iter().filter(|t| rgma_oracle::matches(&l, Some(&filter), t, 0)).collect();
    assert_eq!(sub.drain(usize::MAX), want);
}

#[test]
fn resilient_log_holds_exactly_the_acknowledged_inserts() {
    let mut rng = StdRng::seed_from_u64(77);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.log");
    let l = left();
    let mut acknowledged = Vec::new();
    for generation in 0..5 {
        let (p, _) = stream_with_subs(ProducerKind::ResilientStream, Some(path.clone()));
        assert_eq!(p.replay_window(), acknowledged, "generation {generation}");
        for _ in 0..rng.gen_range(1..40) {
            let n = rng.gen_range(1..5);
            let batch = fill(&mut rng, &l, n);
            p.insert(batch.iter().map(|t| RawTuple::from_tuple(&l, t)).collect(), None).unwrap();
            acknowledged.extend(batch);
        }
        // Crash: all in-memory state is dropped without any shutdown step.
        drop(p);
    }
    let (p, _) = stream_with_subs(ProducerKind::ResilientStream, Some(path));
    assert_eq!(p.stats().log_records, Some(acknowledged.len() as u64));
    let sub = p.subscribe(&SelectQuery::star("L", None), "sink", true).unwrap();
    assert_eq!(sub.drain(usize::MAX), acknowledged);
}

#[test]
fn replay_window_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.log");
    let l = left();
    let mut rng = StdRng::seed_from_u64(1);
    let tuples = fill(&mut rng, &l, 30);
    {
        let mut cfg = ProducerConfig::new(ProducerKind::ResilientStream, vec![TableSpec { def: l.clone(), view: ViewPredicate::whole_table() }]);
        cfg.resilient_log_path = Some(path.clone());
        let p = Producer::create(cfg, Arc::new(ManualClock::new(0))).unwrap();
        p.insert(tuples.iter().map(|t| RawTuple::from_tuple(&l, t)).collect(), None).unwrap();
    }
    let mut cfg = ProducerConfig::new(ProducerKind::ResilientStream, vec![TableSpec { def: l.clone(), view: ViewPredicate::whole_table() }]);
    cfg.resilient_log_path = Some(path);
    cfg.replay_window = 10;
    let p = Producer::create(cfg, Arc::new(ManualClock::new(0))).unwrap();
    assert_eq!(p.replay_window(), tuples[20..].to_vec());
}
