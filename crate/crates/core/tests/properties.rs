mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use viewlet::ast::sql::parse_catalog;
use viewlet::ast::vtq::{parse_query, print_query};
use viewlet::compiler::viewlet_transform;
use viewlet::delta::{degree, delta, delta_poly};
use viewlet::gmr::{Gmr, Valuation};
use viewlet::harness::{oracle, oracle_in, replay_checked, BenchMode};
use viewlet::runtime::{evaluate, format_stream, parse_stream, Engine, MemorySource, StreamEvent};
use viewlet::value::{rat, Value};

const DECLS: &str =
    "CREATE STREAM R(x int, y int); CREATE STREAM S(x int, y int); CREATE STREAM T(x int);";

fn gmr_strategy() -> impl Strategy<Value = Gmr> {
    prop::collection::vec(((0i64..3, 0i64..3), -3i64..=3), 0..6).prop_map(|rows| {
        let mut g = Gmr::new(vec!["a".into(), "b".into()]).unwrap();
        for ((x, y), m) in rows {
            g.add(vec![Value::int(x), Value::int(y)], rat(m));
        }
        g
    })
}

fn renamed(g: &Gmr, a: &str, b: &str) -> Gmr {
    g.rename(&[("a".into(), a.into()), ("b".into(), b.into())])
        .unwrap()
}

fn random_stream(rng: &mut ChaCha8Rng, n: usize) -> Vec<StreamEvent> {
    let all: BTreeSet<String> = common::RELATIONS
        .iter()
        .map(|(r, _)| r.to_string())
        .collect();
    (0..n)
        .map(|_| {
            let (ev, tuple, _) = common::random_event(rng, &all);
            match ev.sign {
                viewlet::delta::Sign::Insert => StreamEvent::insert(&ev.relation, tuple),
                viewlet::delta::Sign::Delete => StreamEvent::delete(&ev.relation, tuple),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn union_is_commutative_and_associative(a in gmr_strategy(), b in gmr_strategy(), c in gmr_strategy()) {
        prop_assert_eq!(a.union(&b).unwrap(), b.union(&a).unwrap());
        prop_assert_eq!(
            a.union(&b).unwrap().union(&c).unwrap(),
            a.union(&b.union(&c).unwrap()).unwrap()
        );
        prop_assert!(a.union(&a.negate()).unwrap().is_empty());
    }

    #[test]
    fn join_distributes_over_union(a in gmr_strategy(), b in gmr_strategy(), c in gmr_strategy()) {
        let r = renamed(&a, "A", "B");
        let s = renamed(&b, "B", "C");
        let t = renamed(&c, "B", "C");
        let left = r.join(&s.union(&t).unwrap());
        let right = r.join(&s).union(&r.join(&t)).unwrap();
        prop_assert_eq!(left, right);
        prop_assert_eq!(r.join(&Gmr::scalar(rat(1))), r.clone());
        prop_assert_eq!(r.join(&s), s.join(&r));
    }

    #[test]
    fn scaling_is_linear(a in gmr_strategy(), b in gmr_strategy(), k in -4i64..=4) {
        let k = rat(k);
        prop_assert_eq!(
            a.union(&b).unwrap().scale(&k),
            a.scale(&k).union(&b.scale(&k)).unwrap()
        );
    }

    #[test]
    fn delta_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = common::random_query(&mut rng, 3, true);
        let q = common::parse(&src);
        let db = common::random_database(&mut rng);
        let (ev, tuple, env) = common::random_event(&mut rng, &q.relations());
        let before = oracle(&q, &db).unwrap();
        let after = oracle(&q, &common::apply(&db, &ev, &tuple)).unwrap();
        let d = oracle_in(&delta(&q, &ev).unwrap(), &db, &env).unwrap();
        prop_assert_eq!(before.union(&d.reorder(before.schema()).unwrap()).unwrap(), after, "{}", src);
    }

    #[test]
    fn delta_lowers_degree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = common::random_query(&mut rng, 4, false);
        let q = common::parse(&src);
        let (ev, _, _) = common::random_event(&mut rng, &q.relations());
        let d = delta_poly(&q, &ev, &BTreeSet::new()).unwrap();
        prop_assert_eq!(degree(&q).unwrap(), d.degree() + 1, "{}", src);
    }

    #[test]
    fn printed_queries_parse_back(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::parse(&common::random_query(&mut rng, 3, true));
        let printed = print_query(&q);
        prop_assert_eq!(print_query(&parse_query(&printed).unwrap()), printed);
    }

    #[test]
    fn runtime_evaluation_matches_the_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::parse(&common::random_query(&mut rng, 3, true));
        let db = common::random_database(&mut rng);
        let runtime = evaluate(&q, &MemorySource::new(&db), &Valuation::new()).unwrap();
        prop_assert_eq!(runtime, oracle(&q, &db).unwrap());
    }

    #[test]
    fn streams_round_trip(seed in any::<u64>(), n in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = random_stream(&mut rng, n);
        let catalog = parse_catalog(DECLS).unwrap();
        let decls: Vec<_> = catalog.in_order().cloned().collect();
        let text = format_stream(&events);
        prop_assert_eq!(parse_stream(&text, &decls).unwrap(), events);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn compiled_programs_track_the_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = common::random_query(&mut rng, 3, true);
        let q = common::parse(&src);
        let initial = common::random_database(&mut rng);
        let events = random_stream(&mut rng, 25);
        let catalog = parse_catalog(DECLS).unwrap();
        for mode in BenchMode::ALL {
            let p = viewlet_transform(&q, &catalog, &mode.options()).unwrap();
            let mut engine = Engine::new(p, &initial).unwrap();
            let d = replay_checked(&mut engine, &q, &initial, &events, 1).unwrap();
            prop_assert!(d.is_none(), "{} in {}: {}", src, mode, d.unwrap());
        }
    }
}
