//! Random nested-aggregate-free queries, databases and events.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use viewlet::ast::vtq::parse_query;
use viewlet::ast::QueryExpr;
use viewlet::delta::{Event, Sign};
use viewlet::gmr::{Gmr, Valuation};
use viewlet::harness::Database;
use viewlet::value::{rat, Value};

pub const RELATIONS: [(&str, usize); 3] = [("R", 2), ("S", 2), ("T", 1)];
const VARS: [&str; 3] = ["A", "B", "C"];
const DOMAIN: i64 = 3;

fn arity(rel: &str) -> usize {
    RELATIONS.iter().find(|(r, _)| *r == rel).unwrap().1
}

fn atom(rng: &mut impl Rng) -> (String, Vec<&'static str>) {
    let (rel, k) = *RELATIONS.choose(rng).unwrap();
    let mut vars: Vec<&str> = VARS.choose_multiple(rng, k).cloned().collect();
    if k > 1 && rng.gen_bool(0.15) {
        vars[1] = vars[0];
    }
    (format!("(rel {} {})", rel, vars.join(" ")), vars)
}

/// A sum aggregate over a join of one to `max_atoms` atoms, with an optional
/// inequality filter. With `unions`, one join operand may be a union of two
/// atoms over the same variables.
pub fn random_query(rng: &mut impl Rng, max_atoms: usize, unions: bool) -> String {
    let n = rng.gen_range(1..=max_atoms);
    let mut body = String::new();
    let mut vars: BTreeSet<&str> = BTreeSet::new();
    for i in 0..n {
        let (mut a, vs) = atom(rng);
        if unions && rng.gen_bool(0.3) {
            let other: Vec<&str> = RELATIONS
                .iter()
                .filter(|(_, k)| *k == vs.len())
                .map(|(r, _)| *r)
                .collect();
            let rel = other.choose(rng).unwrap();
            a = format!("(union {} (rel {} {}))", a, rel, vs.join(" "));
        }
        vars.extend(vs);
        body = if i == 0 {
            a
        } else {
            format!("(join {} {})", body, a)
        };
    }
    let vars: Vec<&str> = vars.into_iter().collect();
    if rng.gen_bool(0.4) {
        let x = vars.choose(rng).unwrap();
        let rhs = if rng.gen_bool(0.5) {
            vars.choose(rng).unwrap().to_string()
        } else {
            rng.gen_range(0..DOMAIN).to_string()
        };
        body = format!("(select (< {} {}) {})", x, rhs, body);
    }
    let group: Vec<&str> = vars.iter().filter(|_| rng.gen_bool(0.3)).cloned().collect();
    let x = vars.choose(rng).unwrap();
    let y = vars.choose(rng).unwrap();
    let term = match rng.gen_range(0..4) {
        0 => "1".to_string(),
        1 => x.to_string(),
        2 => format!("(* {} {})", x, y),
        _ => format!("(+ {} 1/2)", x),
    };
    format!("(sum ({}) {} {})", group.join(" "), term, body)
}

pub fn parse(src: &str) -> QueryExpr {
    parse_query(src).unwrap_or_else(|e| panic!("{}: {}", src, e))
}

/// Every relation with up to five tuples of non-zero multiplicity.
pub fn random_database(rng: &mut impl Rng) -> Database {
    let mut db = Database::new();
    for (rel, k) in RELATIONS {
        let schema: Vec<String> = (0..k).map(|i| format!("c{}", i)).collect();
        let mut g = Gmr::new(schema).unwrap();
        for _ in 0..rng.gen_range(0..=5) {
            let t: Vec<Value> = (0..k)
                .map(|_| Value::int(rng.gen_range(0..DOMAIN)))
                .collect();
            let m = *[-2i64, -1, 1, 2].choose(rng).unwrap();
            g.add(t, rat(m));
        }
        db.insert(rel.to_string(), g);
    }
    db
}

/// A single-tuple update on one of `rels`, with its parameter binding.
pub fn random_event(rng: &mut impl Rng, rels: &BTreeSet<String>) -> (Event, Vec<Value>, Valuation) {
    let rels: Vec<&String> = rels.iter().collect();
    let rel = rels.choose(rng).unwrap().as_str();
    let sign = if rng.gen_bool(0.5) {
        Sign::Insert
    } else {
        Sign::Delete
    };
    let params: Vec<String> = (0..arity(rel)).map(|i| format!("p{}", i)).collect();
    let refs: Vec<&str> = params.iter().map(String::as_str).collect();
    let tuple: Vec<Value> = (0..arity(rel))
        .map(|_| Value::int(rng.gen_range(0..DOMAIN)))
        .collect();
    let env = params.iter().cloned().zip(tuple.iter().cloned()).collect();
    (Event::new(rel, sign, &refs), tuple, env)
}

pub fn apply(db: &Database, ev: &Event, tuple: &[Value]) -> Database {
    let mut out = db.clone();
    out.get_mut(&ev.relation)
        .unwrap()
        .add(tuple.to_vec(), rat(ev.sign.mult()));
    out
}
