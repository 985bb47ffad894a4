//! The event loop: trigger statements run against in-memory view maps.
//!
//! An event is processed in three phases. Increments are evaluated against
//! the state before the event, then applied together with the base-relation
//! update, and finally re-evaluation statements recompute their targets from
//! the new state. Every write is logged so a failure anywhere rolls the state
//! back to exactly what it was before the event.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use num_traits::{One, Zero};

use super::eval::{AtomKind, MapRef, Plan, Source};
use super::stream::StreamEvent;
use super::view::ViewMap;
use crate::ast::sql::RelationDecl;
use crate::compiler::{StmtOp, TriggerProgram};
use crate::delta::Sign;
use crate::error::{Error, Result};
use crate::gmr::{Gmr, Tuple};
use crate::value::{Rational, Value};

struct CStmt {
    target: usize,
    op: StmtOp,
    plan: Plan,
    /// Number of cache parameters of the target.
    cache: usize,
    /// For each cache parameter, the event field it equals, if any.
    pinned: Vec<Option<usize>>,
}

enum Undo {
    Entry {
        view: usize,
        tuple: Tuple,
        old: Rational,
    },
    Rel {
        rel: usize,
        tuple: Tuple,
        old: Rational,
    },
    Fill {
        view: usize,
        key: Tuple,
    },
    Map {
        view: usize,
        old: ViewMap,
    },
}

/// Work counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Counters {
    pub events: u64,
    pub statements: u64,
    pub probes: u64,
    /// Statements and probes of the most recent event.
    pub last_statements: u64,
    pub last_probes: u64,
    /// Per trigger (`+R`, `-R`): events handled and time spent.
    pub trigger_time: BTreeMap<String, (u64, Duration)>,
    pub peak_entries: usize,
}

pub struct Engine {
    program: TriggerProgram,
    rel_index: HashMap<String, usize>,
    relations: Vec<ViewMap>,
    view_index: HashMap<String, usize>,
    views: Vec<RefCell<ViewMap>>,
    domains: Vec<RefCell<HashSet<Tuple>>>,
    def_plans: Vec<Plan>,
    triggers: HashMap<(String, Sign), Vec<CStmt>>,
    fills: RefCell<Vec<Undo>>,
    counters: Counters,
    reverse_increments: bool,
}

impl Source for Engine {
    fn relation(&self, name: &str) -> Result<MapRef<'_>> {
        let i = *self
            .rel_index
            .get(name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))?;
        Ok(MapRef::Plain(&self.relations[i]))
    }

    fn view(&self, name: &str, cache_key: &[Value]) -> Result<MapRef<'_>> {
        let i = *self
            .view_index
            .get(name)
            .ok_or_else(|| Error::UnknownView(name.to_string()))?;
        if !cache_key.is_empty() && !self.domains[i].borrow().contains(cache_key) {
            return self.fill(i, cache_key);
        }
        Ok(MapRef::Cell(self.views[i].borrow()))
    }
}

impl Engine {
    /// Build an engine for `program` and load `db` (relation name to
    /// contents, columns in declaration order).
    pub fn new(program: TriggerProgram, db: &HashMap<String, Gmr>) -> Result<Engine> {
        let rel_index: HashMap<String, usize> = program
            .relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.clone(), i))
            .collect();
        let mut relations: Vec<ViewMap> = program
            .relations
            .iter()
            .map(|r| ViewMap::new(r.arity()))
            .collect();
        for (name, g) in db {
            let i = *rel_index
                .get(name)
                .ok_or_else(|| Error::UnknownRelation(name.clone()))?;
            let arity = program.relations[i].arity();
            if g.schema().len() != arity {
                return Err(Error::Structural(format!(
                    "{} has {} columns, data has {}",
                    name,
                    arity,
                    g.schema().len()
                )));
            }
            relations[i] = ViewMap::from_gmr(g);
        }
        let view_index: HashMap<String, usize> = program
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.clone(), i))
            .collect();
        let caches: HashMap<String, usize> = program
            .views
            .iter()
            .filter(|v| v.is_cache())
            .map(|v| (v.name.clone(), v.params.len()))
            .collect();
        let mut def_plans = Vec::new();
        for v in &program.views {
            def_plans.push(Plan::with_caches(&v.definition, &v.params, &caches)?);
        }
        let mut triggers = HashMap::new();
        for t in &program.triggers {
            let mut stmts = Vec::new();
            for s in &t.statements {
                let target = *view_index
                    .get(&s.target)
                    .ok_or_else(|| Error::UnknownView(s.target.clone()))?;
                let cache = program.views[target].params.len();
                let mut inputs = s.params.clone();
                let mut pinned = Vec::new();
                for k in &s.keys[..cache] {
                    match s.params.iter().position(|p| p == k) {
                        Some(j) => pinned.push(Some(j)),
                        None => {
                            pinned.push(None);
                            inputs.push(k.clone());
                        }
                    }
                }
                let plan = Plan::with_caches(&s.rhs, &inputs, &caches)?;
                if plan.output().len() != program.views[target].columns().len() {
                    return Err(Error::Compile(format!(
                        "statement for {} has the wrong arity",
                        s.target
                    )));
                }
                stmts.push(CStmt {
                    target,
                    op: s.op,
                    plan,
                    cache,
                    pinned,
                });
            }
            triggers.insert((t.relation.clone(), t.sign), stmts);
        }
        let mut views: Vec<ViewMap> = program
            .views
            .iter()
            .map(|v| ViewMap::new(v.columns().len()))
            .collect();
        let patterns = def_plans
            .iter()
            .chain(triggers.values().flatten().map(|s| &s.plan))
            .flat_map(|p| p.access_patterns().iter().cloned())
            .collect::<Vec<_>>();
        for (kind, name, pos) in patterns {
            match kind {
                AtomKind::Relation => {
                    if let Some(&i) = rel_index.get(&name) {
                        relations[i].ensure_index(&pos);
                    }
                }
                AtomKind::View => {
                    if let Some(&i) = view_index.get(&name) {
                        views[i].ensure_index(&pos);
                    }
                }
            }
        }
        let n = views.len();
        let mut engine = Engine {
            program,
            rel_index,
            relations,
            view_index,
            views: views.into_iter().map(RefCell::new).collect(),
            domains: (0..n).map(|_| RefCell::new(HashSet::new())).collect(),
            def_plans,
            triggers,
            fills: RefCell::new(Vec::new()),
            counters: Counters::default(),
            reverse_increments: false,
        };
        for i in 0..n {
            if engine.program.views[i].is_cache() {
                continue;
            }
            let data = engine.def_plans[i].evaluate(&engine, &[])?;
            let mut v = engine.views[i].borrow_mut();
            for (t, m) in data {
                v.add(t, &m);
            }
        }
        engine.fills.borrow_mut().clear();
        engine.counters.peak_entries = engine.total_entries();
        Ok(engine)
    }

    /// An engine over empty relations.
    pub fn empty(program: TriggerProgram) -> Result<Engine> {
        Engine::new(program, &HashMap::new())
    }

    pub fn program(&self) -> &TriggerProgram {
        &self.program
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Evaluate increments in reverse statement order (for testing that the
    /// outcome does not depend on it).
    pub fn set_reverse_increments(&mut self, on: bool) {
        self.reverse_increments = on;
    }

    fn fill(&self, i: usize, key: &[Value]) -> Result<MapRef<'_>> {
        let data = self.def_plans[i].evaluate(self, key)?;
        match self.views[i].try_borrow_mut() {
            Ok(mut v) => {
                for (t, m) in data {
                    v.add(t, &m);
                }
                self.domains[i].borrow_mut().insert(key.to_vec());
                self.fills.borrow_mut().push(Undo::Fill {
                    view: i,
                    key: key.to_vec(),
                });
                drop(v);
                Ok(MapRef::Cell(self.views[i].borrow()))
            }
            // the view is being read further up: answer from a private copy
            Err(_) => {
                let mut m = ViewMap::new(self.program.views[i].columns().len());
                for (t, r) in data {
                    m.add(t, &r);
                }
                Ok(MapRef::Owned(Box::new(m)))
            }
        }
    }

    fn input_sets(&self, s: &CStmt, ev: &[Value]) -> Vec<Vec<Value>> {
        if s.cache == 0 {
            return vec![ev.to_vec()];
        }
        let mut keys: Vec<Tuple> = self.domains[s.target].borrow().iter().cloned().collect();
        keys.sort();
        keys.into_iter()
            .filter(|k| {
                s.pinned
                    .iter()
                    .zip(k)
                    .all(|(p, v)| p.is_none_or(|j| ev[j] == *v))
            })
            .map(|k| {
                let mut inputs = ev.to_vec();
                for (p, v) in s.pinned.iter().zip(k) {
                    if p.is_none() {
                        inputs.push(v);
                    }
                }
                inputs
            })
            .collect()
    }

    fn run_statement(
        &self,
        s: &CStmt,
        ev: &[Value],
        out: &mut Vec<(Tuple, Rational)>,
    ) -> Result<u64> {
        let mut probes = 0;
        let neg = s.op == StmtOp::Sub;
        for inputs in self.input_sets(s, ev) {
            probes += s.plan.execute(self, &inputs, &mut |t, m| {
                out.push((t, if neg { -m.clone() } else { m.clone() }));
                Ok(())
            })?;
        }
        Ok(probes)
    }

    /// Apply one event. On error the state is left exactly as it was.
    pub fn apply(&mut self, ev: &StreamEvent) -> Result<()> {
        let start = Instant::now();
        let rel = *self
            .rel_index
            .get(&ev.relation)
            .ok_or_else(|| Error::UnknownRelation(ev.relation.clone()))?;
        let decl = &self.program.relations[rel];
        if ev.tuple.len() != decl.arity() {
            return Err(Error::Structural(format!(
                "{} expects {} fields, event has {}",
                decl.name,
                decl.arity(),
                ev.tuple.len()
            )));
        }
        if decl.is_static {
            return Err(Error::Unsupported(format!(
                "update of static table {}",
                decl.name
            )));
        }
        let mut log: Vec<Undo> = Vec::new();
        let result = self.apply_logged(ev, rel, &mut log);
        let mut fills = std::mem::take(&mut *self.fills.borrow_mut());
        if let Err(e) = result {
            fills.extend(log);
            // entries after the fills that created them; undo newest first
            self.rollback(fills);
            return Err(e);
        }
        self.counters.events += 1;
        let entries = self.total_entries();
        if entries > self.counters.peak_entries {
            self.counters.peak_entries = entries;
        }
        let key = format!("{}{}", ev.sign.symbol(), ev.relation);
        let slot = self.counters.trigger_time.entry(key).or_default();
        slot.0 += 1;
        slot.1 += start.elapsed();
        Ok(())
    }

    fn apply_logged(&mut self, ev: &StreamEvent, rel: usize, log: &mut Vec<Undo>) -> Result<()> {
        let key = (ev.relation.clone(), ev.sign);
        let stmts = self.triggers.get(&key).map(|v| v.as_slice()).unwrap_or(&[]);
        let mut statements = 0u64;
        let mut probes = 0u64;

        // phase 1: increments against the old state
        let mut pending: Vec<(usize, Vec<(Tuple, Rational)>)> = Vec::new();
        let incs: Vec<&CStmt> = stmts.iter().filter(|s| s.op != StmtOp::Replace).collect();
        let order: Vec<&CStmt> = if self.reverse_increments {
            incs.into_iter().rev().collect()
        } else {
            incs
        };
        for s in order {
            let mut out = Vec::new();
            probes += self.run_statement(s, &ev.tuple, &mut out)?;
            statements += 1;
            pending.push((s.target, out));
        }

        // phase 2: writes
        for (target, out) in pending {
            let mut v = self.views[target].borrow_mut();
            for (t, m) in out {
                let old = v.add(t.clone(), &m);
                log.push(Undo::Entry {
                    view: target,
                    tuple: t,
                    old,
                });
            }
        }
        let m = match ev.sign {
            Sign::Insert => Rational::one(),
            Sign::Delete => -Rational::one(),
        };
        let old = self.relations[rel].add(ev.tuple.clone(), &m);
        log.push(Undo::Rel {
            rel,
            tuple: ev.tuple.clone(),
            old,
        });

        // phase 3: re-evaluation against the new state
        let stmts = self.triggers.get(&key).map(|v| v.as_slice()).unwrap_or(&[]);
        for s in stmts.iter().filter(|s| s.op == StmtOp::Replace) {
            let mut out = Vec::new();
            probes += self.run_statement(s, &ev.tuple, &mut out)?;
            statements += 1;
            let mut v = self.views[s.target].borrow_mut();
            let mut next = v.empty_like();
            for (t, m) in out {
                next.add(t, &m);
            }
            let old = std::mem::replace(&mut *v, next);
            log.push(Undo::Map {
                view: s.target,
                old,
            });
        }
        self.counters.statements += statements;
        self.counters.probes += probes;
        self.counters.last_statements = statements;
        self.counters.last_probes = probes;
        Ok(())
    }

    fn rollback(&mut self, log: Vec<Undo>) {
        for u in log.into_iter().rev() {
            match u {
                Undo::Entry { view, tuple, old } => self.views[view].get_mut().set(tuple, old),
                Undo::Rel { rel, tuple, old } => self.relations[rel].set(tuple, old),
                Undo::Map { view, old } => *self.views[view].get_mut() = old,
                Undo::Fill { view, key } => {
                    self.domains[view].get_mut().remove(&key);
                    let v = self.views[view].get_mut();
                    let doomed: Vec<Tuple> = v
                        .iter()
                        .filter(|(t, _)| t[..key.len()] == key[..])
                        .map(|(t, _)| t.clone())
                        .collect();
                    for t in doomed {
                        v.set(t, Rational::zero());
                    }
                }
            }
        }
    }

    /// Apply events in order, stopping at the first failure.
    pub fn apply_all(&mut self, events: &[StreamEvent]) -> Result<()> {
        for e in events {
            self.apply(e)?;
        }
        Ok(())
    }

    pub fn total_entries(&self) -> usize {
        self.views.iter().map(|v| v.borrow().len()).sum()
    }

    pub fn view_names(&self) -> Vec<String> {
        self.program.views.iter().map(|v| v.name.clone()).collect()
    }

    /// Contents of a view, columns named as in its declaration. For a cache
    /// only the filled cache keys are present.
    pub fn snapshot(&self, name: &str) -> Result<Gmr> {
        let i = *self
            .view_index
            .get(name)
            .ok_or_else(|| Error::UnknownView(name.to_string()))?;
        self.views[i]
            .borrow()
            .to_gmr(self.program.views[i].columns())
    }

    /// The query result.
    pub fn result(&self) -> Result<Gmr> {
        self.snapshot(&self.program.query)
    }

    /// Filled cache keys of a view, sorted.
    pub fn cache_domain(&self, name: &str) -> Result<Vec<Tuple>> {
        let i = *self
            .view_index
            .get(name)
            .ok_or_else(|| Error::UnknownView(name.to_string()))?;
        let mut d: Vec<Tuple> = self.domains[i].borrow().iter().cloned().collect();
        d.sort();
        Ok(d)
    }

    /// Current contents of the base relations.
    pub fn database(&self) -> HashMap<String, Gmr> {
        self.program
            .relations
            .iter()
            .zip(&self.relations)
            .map(|(d, m): (&RelationDecl, &ViewMap)| {
                let g = m
                    .to_gmr(d.column_names())
                    .expect("declared columns are distinct");
                (d.name.clone(), g)
            })
            .collect()
    }

    /// Add `m` to one entry of a view, bypassing the triggers.
    pub fn corrupt(&mut self, view: &str, tuple: Tuple, m: &Rational) -> Result<()> {
        let i = *self
            .view_index
            .get(view)
            .ok_or_else(|| Error::UnknownView(view.to_string()))?;
        self.views[i].get_mut().add(tuple, m);
        Ok(())
    }

    /// Views whose contents differ from their definitions evaluated on the
    /// current base relations.
    pub fn stale_views(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for (i, v) in self.program.views.iter().enumerate() {
            let keys: Vec<Tuple> = if v.is_cache() {
                self.cache_domain(&v.name)?
            } else {
                vec![Vec::new()]
            };
            let mut expected: HashMap<Tuple, Rational> = HashMap::new();
            for k in &keys {
                expected.extend(self.def_plans[i].evaluate(self, k)?);
            }
            let actual: HashMap<Tuple, Rational> = self.views[i]
                .borrow()
                .iter()
                .map(|(t, m)| (t.clone(), m.clone()))
                .collect();
            if expected != actual {
                out.push(v.name.clone());
            }
        }
        self.fills.borrow_mut().clear();
        Ok(out)
    }
}
