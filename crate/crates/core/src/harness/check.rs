//! Replaying a stream through an engine while comparing the maintained
//! result against the reference evaluator.

use std::fmt;

use crate::ast::QueryExpr;
use crate::delta::Sign;
use crate::error::Result;
use crate::gmr::Gmr;
use crate::runtime::{Engine, StreamEvent};
use crate::value::rat;

use super::oracle::{oracle, Database};

/// The first point at which the engine and the reference evaluator disagree.
#[derive(Clone, Debug)]
pub struct Divergence {
    /// Number of events applied when the disagreement was observed.
    pub events_applied: usize,
    pub expected: Gmr,
    pub actual: Gmr,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "divergence after event {}: expected {:?}, found {:?}",
            self.events_applied, self.expected, self.actual
        )
    }
}

/// Apply one event to a plain database.
pub fn apply_to_database(db: &mut Database, ev: &StreamEvent, arity: usize) {
    let g = db.entry(ev.relation.clone()).or_insert_with(|| {
        Gmr::new((0..arity).map(|i| format!("c{}", i)).collect()).expect("distinct columns")
    });
    let m = match ev.sign {
        Sign::Insert => rat(1),
        Sign::Delete => rat(-1),
    };
    g.add(ev.tuple.clone(), m);
}

/// The engine's result with its columns renamed positionally to `schema`.
pub fn result_as(engine: &Engine, schema: &[String]) -> Result<Gmr> {
    let r = engine.result()?;
    let mapping: Vec<(String, String)> = r
        .schema()
        .iter()
        .zip(schema)
        .map(|(a, b)| (a.clone(), b.clone()))
        .collect();
    r.rename(&mapping)
}

/// Compare the engine's result with a fresh evaluation of `q` on `db`.
pub fn compare(
    engine: &Engine,
    q: &QueryExpr,
    db: &Database,
    events_applied: usize,
) -> Result<Option<Divergence>> {
    let expected = oracle(q, db)?;
    let actual = result_as(engine, expected.schema())?;
    if expected == actual {
        Ok(None)
    } else {
        Ok(Some(Divergence {
            events_applied,
            expected,
            actual,
        }))
    }
}

/// Replay `events`, checking after every `every`-th event and after the last.
pub fn replay_checked(
    engine: &mut Engine,
    q: &QueryExpr,
    initial: &Database,
    events: &[StreamEvent],
    every: usize,
) -> Result<Option<Divergence>> {
    let mut db = initial.clone();
    for r in &engine.program().relations {
        db.entry(r.name.clone())
            .or_insert_with(|| Gmr::new(r.column_names()).expect("distinct columns"));
    }
    if let Some(d) = compare(engine, q, &db, 0)? {
        return Ok(Some(d));
    }
    let every = every.max(1);
    for (i, ev) in events.iter().enumerate() {
        engine.apply(ev)?;
        apply_to_database(&mut db, ev, ev.tuple.len());
        if (i + 1) % every == 0 || i + 1 == events.len() {
            if let Some(d) = compare(engine, q, &db, i + 1)? {
                return Ok(Some(d));
            }
        }
    }
    Ok(None)
}
