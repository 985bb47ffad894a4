use std::collections::HashMap;

use viewlet::ast::sql::{parse_catalog, parse_sql};
use viewlet::compiler::{compile, CompileOptions, TriggerProgram};
use viewlet::gmr::Gmr;
use viewlet::harness::{family_stream, find_query, BenchMode};
use viewlet::runtime::{Engine, StreamEvent};
use viewlet::value::{rat, Value};
use viewlet::Error;

fn program(decls: &str, sql: &str) -> TriggerProgram {
    let cat = parse_catalog(decls).unwrap();
    compile(
        &parse_sql(sql, &cat).unwrap(),
        &cat,
        &CompileOptions::default(),
    )
    .unwrap()
}

fn unary(col: &str, values: &[i64]) -> Gmr {
    Gmr::from_entries(
        vec![col.into()],
        values.iter().map(|v| (vec![Value::int(*v)], rat(1))),
    )
    .unwrap()
}

fn scalar(e: &Engine, view: &str) -> i64 {
    let v = e.snapshot(view).unwrap().scalar_value();
    assert!(v.is_integer());
    v.to_integer().try_into().unwrap()
}

fn inverse(ev: &StreamEvent) -> StreamEvent {
    match ev.sign {
        viewlet::delta::Sign::Insert => StreamEvent::delete(&ev.relation, ev.tuple.clone()),
        viewlet::delta::Sign::Delete => StreamEvent::insert(&ev.relation, ev.tuple.clone()),
    }
}

fn all_views(e: &Engine) -> Vec<(String, Gmr)> {
    e.view_names()
        .into_iter()
        .map(|n| (n.clone(), e.snapshot(&n).unwrap()))
        .collect()
}

#[test]
fn count_of_product_replays_the_worked_table() {
    let p = program(
        "CREATE STREAM R(a int); CREATE STREAM S(b int);",
        "SELECT count(*) FROM R, S",
    );
    let mut db = HashMap::new();
    db.insert("R".to_string(), unary("a", &[1, 2]));
    db.insert("S".to_string(), unary("b", &[1, 2, 3]));
    let mut e = Engine::new(p, &db).unwrap();
    let row = |e: &Engine| (scalar(e, "Q"), scalar(e, "Q_R"), scalar(e, "Q_S"));
    assert_eq!(row(&e), (6, 3, 2));
    let steps = [
        ("S", 10, (8, 4, 2)),
        ("R", 11, (12, 4, 3)),
        ("S", 12, (15, 5, 3)),
        ("S", 13, (18, 6, 3)),
    ];
    let mut per_event = Vec::new();
    for (rel, v, want) in steps {
        e.apply(&StreamEvent::insert(rel, vec![Value::int(v)]))
            .unwrap();
        assert_eq!(row(&e), want);
        per_event.push(e.counters().last_statements);
    }
    assert!(
        per_event.iter().all(|&n| n == per_event[0]),
        "{:?}",
        per_event
    );
}

#[test]
fn deleting_every_insert_restores_the_empty_state() {
    for name in ["Q18", "Q17", "VWAP", "AXF"] {
        let q = find_query(name).unwrap();
        let s = family_stream(q.family, 9, 400, true);
        for mode in BenchMode::ALL {
            let mut e = Engine::new(q.compile(mode).unwrap(), &s.initial).unwrap();
            let before = all_views(&e);
            e.apply_all(&s.events).unwrap();
            for ev in s.events.iter().rev() {
                e.apply(&inverse(ev)).unwrap();
            }
            let after = all_views(&e);
            for ((n, a), (_, b)) in before.iter().zip(&after) {
                assert_eq!(a, b, "{} {} view {}", name, mode, n);
            }
        }
    }
}

#[test]
fn failing_events_leave_no_trace() {
    let p = program(
        "CREATE STREAM R(a int, b int); CREATE STREAM S(b int, c int);",
        "SELECT R.a, sum(S.c / R.a) FROM R, S WHERE R.b = S.b GROUP BY R.a",
    );
    let mut e = Engine::new(p, &HashMap::new()).unwrap();
    e.apply(&StreamEvent::insert(
        "S",
        vec![Value::int(1), Value::int(4)],
    ))
    .unwrap();
    e.apply(&StreamEvent::insert(
        "R",
        vec![Value::int(2), Value::int(1)],
    ))
    .unwrap();
    let views = all_views(&e);
    let db = e.database();
    let counters = e.counters().events;
    let r = e.apply(&StreamEvent::insert(
        "R",
        vec![Value::int(0), Value::int(1)],
    ));
    assert!(matches!(r, Err(Error::Arithmetic(_))), "{:?}", r);
    assert_eq!(all_views(&e), views);
    assert_eq!(e.database(), db);
    assert_eq!(e.counters().events, counters);
    assert!(e
        .apply(&StreamEvent::insert("R", vec![Value::int(1)]))
        .is_err());
    assert!(matches!(
        e.apply(&StreamEvent::insert("T", vec![Value::int(1)])),
        Err(Error::UnknownRelation(_))
    ));
    assert_eq!(all_views(&e), views);
}

#[test]
fn increment_order_within_a_trigger_does_not_matter() {
    for q in viewlet::harness::workload() {
        let s = family_stream(q.family, 4, 300, true);
        let p = q.compile(BenchMode::Optimized).unwrap();
        let mut a = Engine::new(p.clone(), &s.initial).unwrap();
        let mut b = Engine::new(p, &s.initial).unwrap();
        b.set_reverse_increments(true);
        a.apply_all(&s.events).unwrap();
        b.apply_all(&s.events).unwrap();
        assert_eq!(all_views(&a), all_views(&b), "{}", q.name);
    }
}

#[test]
fn views_stay_consistent_with_their_definitions() {
    for name in ["Q18", "MST", "SSB4", "Q22"] {
        let q = find_query(name).unwrap();
        let s = family_stream(q.family, 2, 250, true);
        let mut e = Engine::new(q.compile(BenchMode::Optimized).unwrap(), &s.initial).unwrap();
        e.apply_all(&s.events).unwrap();
        assert!(e.stale_views().unwrap().is_empty(), "{}", name);
        let top = e.program().query.clone();
        let arity = e.program().view(&top).unwrap().columns().len();
        e.corrupt(&top, vec![Value::int(-7); arity], &rat(1))
            .unwrap();
        assert_eq!(e.stale_views().unwrap(), vec![top]);
    }
}

#[test]
fn static_relations_reject_updates() {
    let q = find_query("SSB4").unwrap();
    let s = family_stream(q.family, 1, 10, true);
    let mut e = Engine::new(q.compile(BenchMode::Optimized).unwrap(), &s.initial).unwrap();
    let r = e.apply(&StreamEvent::insert(
        "Nation",
        vec![Value::int(99), Value::int(1)],
    ));
    assert!(matches!(r, Err(Error::Unsupported(_))), "{:?}", r);
}
