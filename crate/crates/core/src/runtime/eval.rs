//! Query planning and execution over stored relations and views.
//!
//! Variables are assigned fixed slots in an environment vector. Whether a slot
//! is bound at a given point is known when planning, so atoms compile to
//! lookups on their bound columns and joins are ordered so that every factor's
//! inputs are available when it runs.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{BTreeSet, HashMap};
use std::ops::Deref;

use num_traits::{One, Zero};

use super::view::ViewMap;
use crate::ast::{CmpOp, Condition, QueryExpr, Term};
use crate::error::{Error, Result};
use crate::gmr::{Gmr, Tuple, Valuation};
use crate::value::{Rational, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomKind {
    Relation,
    View,
}

/// A borrowed map, either plain or out of a `RefCell`.
pub enum MapRef<'a> {
    Plain(&'a ViewMap),
    Cell(Ref<'a, ViewMap>),
    Owned(Box<ViewMap>),
}

impl Deref for MapRef<'_> {
    type Target = ViewMap;
    fn deref(&self) -> &ViewMap {
        match self {
            MapRef::Plain(m) => m,
            MapRef::Cell(r) => r,
            MapRef::Owned(m) => m,
        }
    }
}

/// Read access to stored data.
pub trait Source {
    fn relation(&self, name: &str) -> Result<MapRef<'_>>;
    /// `cache_key` holds the values of the leading cache-parameter columns
    /// for views declared as caches, and is empty otherwise.
    fn view(&self, name: &str, cache_key: &[Value]) -> Result<MapRef<'_>>;
}

/// A `(kind, name, key positions)` triple describing a partial-key access.
pub type AccessPattern = (AtomKind, String, Vec<usize>);

#[derive(Clone, Debug)]
enum CTerm {
    Const(Value),
    Slot(usize),
    Add(Box<CTerm>, Box<CTerm>),
    Sub(Box<CTerm>, Box<CTerm>),
    Mul(Box<CTerm>, Box<CTerm>),
    Div(Box<CTerm>, Box<CTerm>),
    Neg(Box<CTerm>),
    /// A nested aggregate with the outer slots it reads; results are
    /// memoized per evaluation on the values of those slots.
    Agg(Box<Node>, Vec<usize>),
}

#[derive(Clone, Debug)]
enum CCond {
    True,
    False,
    Cmp(CTerm, CmpOp, CTerm),
    And(Vec<CCond>),
    Or(Vec<CCond>),
    Not(Box<CCond>),
}

#[derive(Clone, Debug)]
enum Node {
    Scan {
        kind: AtomKind,
        name: String,
        /// positions compared against bound slots, in ascending order
        lookup: Vec<usize>,
        lookup_slots: Vec<usize>,
        binds: Vec<(usize, usize)>,
        checks: Vec<(usize, usize)>,
        cache: usize,
    },
    Lift {
        cols: Vec<(usize, CTerm, bool)>,
        mult: CTerm,
    },
    Filter(CCond),
    Seq(Vec<Node>),
    Union(Vec<Node>),
    /// Materializing group-by.
    Agg {
        group: Vec<usize>,
        f: CTerm,
        child: Box<Node>,
    },
    /// Weighting without grouping; valid when the consumer only reads `group`.
    Weight {
        f: CTerm,
        child: Box<Node>,
    },
}

// ---------------------------------------------------------------------------
// planning
// ---------------------------------------------------------------------------

struct Planner {
    scope: HashMap<String, usize>,
    nslots: usize,
    patterns: BTreeSet<AccessPattern>,
    caches: HashMap<String, usize>,
}

fn nested_vars(q: &QueryExpr) -> BTreeSet<String> {
    // every variable mentioned inside nested aggregates of q's own terms
    let mut out = BTreeSet::new();
    let from_term = |t: &Term, out: &mut BTreeSet<String>| {
        let mut qs = Vec::new();
        t.nested_aggs(&mut qs);
        for n in qs {
            out.extend(n.all_vars());
        }
    };
    match q {
        QueryExpr::Relation { .. } | QueryExpr::View { .. } => {}
        QueryExpr::Singleton { columns, mult } => {
            from_term(mult, &mut out);
            for (_, t) in columns {
                from_term(t, &mut out);
            }
        }
        QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => {
            out.extend(nested_vars(a));
            out.extend(nested_vars(b));
        }
        QueryExpr::Select { cond, child } => {
            cond.visit_terms(&mut |t| from_term(t, &mut out));
            out.extend(nested_vars(child));
        }
        QueryExpr::SumAgg { f, child, .. } => {
            from_term(f, &mut out);
            out.extend(nested_vars(child));
        }
        QueryExpr::Rename { child, .. } => out.extend(nested_vars(child)),
    }
    out
}

fn cond_nested_vars(c: &Condition) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for n in c.nested_aggs() {
        out.extend(n.all_vars());
    }
    out
}

enum Fac<'q> {
    Q(&'q QueryExpr),
    C(&'q Condition),
}

fn flatten<'q>(q: &'q QueryExpr, out: &mut Vec<Fac<'q>>) {
    match q {
        QueryExpr::Join(a, b) => {
            flatten(a, out);
            flatten(b, out);
        }
        QueryExpr::Select { cond, child } => {
            flatten(child, out);
            let mut cs = Vec::new();
            split_and(cond, &mut cs);
            out.extend(cs.into_iter().map(Fac::C));
        }
        other => out.push(Fac::Q(other)),
    }
}

fn split_and<'q>(c: &'q Condition, out: &mut Vec<&'q Condition>) {
    match c {
        Condition::And(cs) => cs.iter().for_each(|c| split_and(c, out)),
        Condition::True => {}
        other => out.push(other),
    }
}

impl Planner {
    fn slot(&mut self, name: &str) -> usize {
        if let Some(&s) = self.scope.get(name) {
            return s;
        }
        let s = self.nslots;
        self.nslots += 1;
        self.scope.insert(name.to_string(), s);
        s
    }

    fn is_bound(&self, name: &str, bound: &BTreeSet<usize>) -> bool {
        self.scope.get(name).is_some_and(|s| bound.contains(s))
    }

    fn term(&mut self, t: &Term, bound: &BTreeSet<usize>) -> Result<CTerm> {
        Ok(match t {
            Term::Const(v) => CTerm::Const(v.clone()),
            Term::Var(v) => {
                if !self.is_bound(v, bound) {
                    return Err(Error::Binding(v.clone()));
                }
                CTerm::Slot(self.slot(v))
            }
            Term::Add(a, b) => CTerm::Add(
                Box::new(self.term(a, bound)?),
                Box::new(self.term(b, bound)?),
            ),
            Term::Sub(a, b) => CTerm::Sub(
                Box::new(self.term(a, bound)?),
                Box::new(self.term(b, bound)?),
            ),
            Term::Mul(a, b) => CTerm::Mul(
                Box::new(self.term(a, bound)?),
                Box::new(self.term(b, bound)?),
            ),
            Term::Div(a, b) => CTerm::Div(
                Box::new(self.term(a, bound)?),
                Box::new(self.term(b, bound)?),
            ),
            Term::Neg(a) => CTerm::Neg(Box::new(self.term(a, bound)?)),
            Term::Agg(q) => {
                let outer: Vec<usize> = q
                    .all_vars()
                    .iter()
                    .filter(|v| self.is_bound(v, bound))
                    .map(|v| self.scope[v.as_str()])
                    .collect();
                let (node, _) = self.plan(q, bound, true)?;
                CTerm::Agg(Box::new(node), outer)
            }
        })
    }

    fn cond(&mut self, c: &Condition, bound: &BTreeSet<usize>) -> Result<CCond> {
        Ok(match c {
            Condition::True => CCond::True,
            Condition::False => CCond::False,
            Condition::Cmp(a, op, b) => CCond::Cmp(self.term(a, bound)?, *op, self.term(b, bound)?),
            Condition::And(cs) => CCond::And(
                cs.iter()
                    .map(|c| self.cond(c, bound))
                    .collect::<Result<_>>()?,
            ),
            Condition::Or(cs) => CCond::Or(
                cs.iter()
                    .map(|c| self.cond(c, bound))
                    .collect::<Result<_>>()?,
            ),
            Condition::Not(c) => CCond::Not(Box::new(self.cond(c, bound)?)),
        })
    }

    fn cache_arity(&self, q: &QueryExpr) -> usize {
        match q {
            QueryExpr::View { name, .. } => self.caches.get(name).copied().unwrap_or(0),
            _ => 0,
        }
    }

    fn scan(
        &mut self,
        kind: AtomKind,
        name: &str,
        vars: &[String],
        bound: &BTreeSet<usize>,
    ) -> Result<(Node, BTreeSet<usize>)> {
        let cache = match kind {
            AtomKind::View => self.caches.get(name).copied().unwrap_or(0),
            AtomKind::Relation => 0,
        };
        for v in &vars[..cache.min(vars.len())] {
            if !self.is_bound(v, bound) {
                return Err(Error::Binding(v.clone()));
            }
        }
        let mut lookup = Vec::new();
        let mut lookup_slots = Vec::new();
        let mut binds = Vec::new();
        let mut checks = Vec::new();
        let mut now = bound.clone();
        for (i, v) in vars.iter().enumerate() {
            let s = self.slot(v);
            if bound.contains(&s) {
                lookup.push(i);
                lookup_slots.push(s);
            } else if now.contains(&s) {
                checks.push((i, s));
            } else {
                binds.push((i, s));
                now.insert(s);
            }
        }
        if !lookup.is_empty() && lookup.len() < vars.len() {
            self.patterns
                .insert((kind, name.to_string(), lookup.clone()));
        }
        Ok((
            Node::Scan {
                kind,
                name: name.to_string(),
                lookup,
                lookup_slots,
                binds,
                checks,
                cache,
            },
            now,
        ))
    }

    /// Plan `q` given the bound slots; returns the node and the slots bound
    /// after it runs. `top` allows streaming aggregation.
    fn plan(
        &mut self,
        q: &QueryExpr,
        bound: &BTreeSet<usize>,
        top: bool,
    ) -> Result<(Node, BTreeSet<usize>)> {
        match q {
            QueryExpr::Relation { name, vars } => self.scan(AtomKind::Relation, name, vars, bound),
            QueryExpr::View { name, keys } => self.scan(AtomKind::View, name, keys, bound),
            QueryExpr::Singleton { columns, mult } => {
                let mut now = bound.clone();
                let mut cols = Vec::new();
                for (c, t) in columns {
                    let ct = self.term(t, bound)?;
                    let s = self.slot(c);
                    let was = now.contains(&s);
                    cols.push((s, ct, was));
                    now.insert(s);
                }
                let mult = self.term(mult, bound)?;
                Ok((Node::Lift { cols, mult }, now))
            }
            QueryExpr::Join(..) | QueryExpr::Select { .. } => self.plan_chain(q, bound, top),
            QueryExpr::Union(..) => {
                let mut branches = Vec::new();
                collect_union(q, &mut branches);
                let mut nodes = Vec::new();
                let mut after: Option<BTreeSet<usize>> = None;
                for b in branches {
                    let (n, a) = self.plan(b, bound, top)?;
                    nodes.push(n);
                    after = Some(match after {
                        None => a,
                        Some(x) => x.intersection(&a).cloned().collect(),
                    });
                }
                Ok((Node::Union(nodes), after.unwrap_or_else(|| bound.clone())))
            }
            QueryExpr::SumAgg { group_by, f, child } => {
                let (cn, after_child) = self.plan(child, bound, top)?;
                let f = self.term(f, &after_child)?;
                let mut group = Vec::new();
                for g in group_by {
                    if !self.is_bound(g, &after_child) {
                        return Err(Error::Binding(g.clone()));
                    }
                    group.push(self.slot(g));
                }
                let mut now = bound.clone();
                now.extend(group.iter().cloned());
                if top {
                    Ok((
                        Node::Weight {
                            f,
                            child: Box::new(cn),
                        },
                        now,
                    ))
                } else {
                    Ok((
                        Node::Agg {
                            group,
                            f,
                            child: Box::new(cn),
                        },
                        now,
                    ))
                }
            }
            QueryExpr::Rename { mapping, child } => {
                let saved = self.scope.clone();
                let targets: Vec<usize> = mapping.iter().map(|(_, to)| self.slot(to)).collect();
                let mut inner = HashMap::new();
                for ((from, _), &s) in mapping.iter().zip(&targets) {
                    inner.insert(from.clone(), s);
                }
                // names used inside that are not renamed keep their own slots,
                // except rename targets which must not alias outer ones
                for (name, &s) in &saved {
                    if !inner.contains_key(name) && !mapping.iter().any(|(_, t)| t == name) {
                        inner.insert(name.clone(), s);
                    }
                }
                self.scope = inner;
                let r = self.plan(child, bound, top);
                self.scope = saved;
                r
            }
        }
    }

    fn plan_chain(
        &mut self,
        q: &QueryExpr,
        bound: &BTreeSet<usize>,
        top: bool,
    ) -> Result<(Node, BTreeSet<usize>)> {
        let mut facs = Vec::new();
        flatten(q, &mut facs);
        // names produced somewhere in the chain
        let mut chain_vars: BTreeSet<String> = self
            .scope
            .iter()
            .filter(|(_, s)| bound.contains(s))
            .map(|(n, _)| n.clone())
            .collect();
        let mut outputs: Vec<BTreeSet<String>> = Vec::new();
        for f in &facs {
            let o: BTreeSet<String> = match f {
                Fac::Q(q) => q.schema()?.into_iter().collect(),
                Fac::C(_) => BTreeSet::new(),
            };
            chain_vars.extend(o.iter().cloned());
            outputs.push(o);
        }
        let needs: Vec<BTreeSet<String>> = facs
            .iter()
            .zip(&outputs)
            .map(|(f, o)| match f {
                Fac::Q(q) => {
                    let mut n = q.input_vars();
                    n.extend(cache_inputs(q, self.cache_arity(q)));
                    for v in nested_vars(q) {
                        if chain_vars.contains(&v) && !o.contains(&v) {
                            n.insert(v);
                        }
                    }
                    n
                }
                Fac::C(c) => {
                    let mut n = c.free_vars();
                    for v in cond_nested_vars(c) {
                        if chain_vars.contains(&v) {
                            n.insert(v);
                        }
                    }
                    n
                }
            })
            .collect();

        let mut now = bound.clone();
        let mut done = vec![false; facs.len()];
        let mut nodes = Vec::new();
        for _ in 0..facs.len() {
            let ready = |i: usize, strict: bool, me: &Planner, now: &BTreeSet<usize>| {
                let hard = match &facs[i] {
                    Fac::Q(q) => {
                        let mut h = q.input_vars();
                        h.extend(cache_inputs(q, me.cache_arity(q)));
                        h
                    }
                    Fac::C(c) => c.free_vars(),
                };
                let set = if strict { &needs[i] } else { &hard };
                set.iter().all(|v| me.is_bound(v, now))
            };
            let mut best: Option<(u8, usize)> = None;
            for strict in [true, false] {
                for i in 0..facs.len() {
                    if done[i] || !ready(i, strict, self, &now) {
                        continue;
                    }
                    let score = self.score(&facs[i], &now);
                    if best.is_none_or(|(s, _)| score < s) {
                        best = Some((score, i));
                    }
                }
                if best.is_some() {
                    break;
                }
            }
            let (_, i) = best.ok_or_else(|| {
                let missing: Vec<String> = (0..facs.len())
                    .filter(|&i| !done[i])
                    .flat_map(|i| {
                        needs[i]
                            .iter()
                            .filter(|v| !self.is_bound(v, &now))
                            .cloned()
                            .collect::<Vec<_>>()
                    })
                    .collect();
                Error::Binding(missing.first().cloned().unwrap_or_else(|| "?".into()))
            })?;
            done[i] = true;
            match &facs[i] {
                Fac::Q(q) => {
                    let last = done.iter().all(|d| *d);
                    let (n, after) = self.plan(q, &now, top && last)?;
                    nodes.push(n);
                    now = after;
                }
                Fac::C(c) => {
                    let cc = self.cond(c, &now)?;
                    nodes.push(Node::Filter(cc));
                }
            }
        }
        Ok((
            if nodes.len() == 1 {
                nodes.pop().unwrap()
            } else {
                Node::Seq(nodes)
            },
            now,
        ))
    }

    fn score(&self, f: &Fac<'_>, now: &BTreeSet<usize>) -> u8 {
        match f {
            Fac::C(_) => 0,
            Fac::Q(QueryExpr::Singleton { .. }) => 1,
            Fac::Q(QueryExpr::Relation { vars, .. })
            | Fac::Q(QueryExpr::View { keys: vars, .. }) => {
                let b = vars.iter().filter(|v| self.is_bound(v, now)).count();
                if b == vars.len() {
                    2
                } else if b > 0 {
                    3
                } else {
                    6
                }
            }
            Fac::Q(_) => 4,
        }
    }
}

fn cache_inputs(q: &QueryExpr, n: usize) -> Vec<String> {
    match q {
        QueryExpr::View { keys, .. } => keys.iter().take(n).cloned().collect(),
        _ => Vec::new(),
    }
}

fn collect_union<'q>(q: &'q QueryExpr, out: &mut Vec<&'q QueryExpr>) {
    match q {
        QueryExpr::Union(a, b) => {
            collect_union(a, out);
            collect_union(b, out);
        }
        other => out.push(other),
    }
}

// ---------------------------------------------------------------------------
// execution
// ---------------------------------------------------------------------------

type Sink<'k> = dyn FnMut(&mut Vec<Value>, &Rational) -> Result<()> + 'k;

struct Exec<'s> {
    src: &'s dyn Source,
    probes: Cell<u64>,
    memo: RefCell<HashMap<(usize, Vec<Value>), Rational>>,
}

fn num(v: Value) -> Result<Rational> {
    v.into_num()
}

impl Exec<'_> {
    fn term(&self, t: &CTerm, env: &mut Vec<Value>) -> Result<Value> {
        Ok(match t {
            CTerm::Const(v) => v.clone(),
            CTerm::Slot(s) => env[*s].clone(),
            CTerm::Add(a, b) => Value::Num(num(self.term(a, env)?)? + num(self.term(b, env)?)?),
            CTerm::Sub(a, b) => Value::Num(num(self.term(a, env)?)? - num(self.term(b, env)?)?),
            CTerm::Mul(a, b) => {
                let x = num(self.term(a, env)?)?;
                if x.is_zero() {
                    return Ok(Value::Num(x));
                }
                Value::Num(x * num(self.term(b, env)?)?)
            }
            CTerm::Div(a, b) => {
                let x = num(self.term(a, env)?)?;
                let y = num(self.term(b, env)?)?;
                if y.is_zero() {
                    return Err(Error::Arithmetic("division by zero".into()));
                }
                Value::Num(x / y)
            }
            CTerm::Neg(a) => Value::Num(-num(self.term(a, env)?)?),
            CTerm::Agg(node, outer) => {
                let key = (
                    &**node as *const Node as usize,
                    outer.iter().map(|&s| env[s].clone()).collect::<Vec<_>>(),
                );
                if let Some(r) = self.memo.borrow().get(&key) {
                    return Ok(Value::Num(r.clone()));
                }
                let mut total = Rational::zero();
                self.run(node, env, &Rational::one(), &mut |_, m| {
                    total += m;
                    Ok(())
                })?;
                self.memo.borrow_mut().insert(key, total.clone());
                Value::Num(total)
            }
        })
    }

    fn cond(&self, c: &CCond, env: &mut Vec<Value>) -> Result<bool> {
        Ok(match c {
            CCond::True => true,
            CCond::False => false,
            CCond::Cmp(a, op, b) => {
                let x = self.term(a, env)?;
                let y = self.term(b, env)?;
                op.holds(x.try_cmp(&y)?)
            }
            CCond::And(cs) => {
                for c in cs {
                    if !self.cond(c, env)? {
                        return Ok(false);
                    }
                }
                true
            }
            CCond::Or(cs) => {
                for c in cs {
                    if self.cond(c, env)? {
                        return Ok(true);
                    }
                }
                false
            }
            CCond::Not(c) => !self.cond(c, env)?,
        })
    }

    fn run(&self, node: &Node, env: &mut Vec<Value>, m: &Rational, k: &mut Sink<'_>) -> Result<()> {
        match node {
            Node::Scan {
                kind,
                name,
                lookup,
                lookup_slots,
                binds,
                checks,
                cache,
            } => {
                let key: Vec<Value> = lookup_slots.iter().map(|&s| env[s].clone()).collect();
                let map = match kind {
                    AtomKind::Relation => self.src.relation(name)?,
                    AtomKind::View => self.src.view(name, &key[..*cache])?,
                };
                self.probes.set(self.probes.get() + 1);
                map.for_each_match(lookup, &key, &mut |t: &Tuple, mult: &Rational| {
                    for &(p, s) in binds {
                        env[s] = t[p].clone();
                    }
                    for &(p, s) in checks {
                        if t[p] != env[s] {
                            return Ok(());
                        }
                    }
                    k(env, &(m * mult))
                })?;
                Ok(())
            }
            Node::Lift { cols, mult } => {
                let w = num(self.term(mult, env)?)?;
                if w.is_zero() {
                    return Ok(());
                }
                for (s, t, bound) in cols {
                    let v = self.term(t, env)?;
                    if *bound {
                        if env[*s] != v {
                            return Ok(());
                        }
                    } else {
                        env[*s] = v;
                    }
                }
                k(env, &(m * w))
            }
            Node::Filter(c) => {
                if self.cond(c, env)? {
                    k(env, m)
                } else {
                    Ok(())
                }
            }
            Node::Seq(nodes) => self.run_seq(nodes, env, m, k),
            Node::Union(nodes) => {
                for n in nodes {
                    self.run(n, env, m, k)?;
                }
                Ok(())
            }
            Node::Weight { f, child } => self.run(child, env, m, &mut |env, m2| {
                let w = num(self.term(f, env)?)?;
                if w.is_zero() {
                    return Ok(());
                }
                k(env, &(m2 * w))
            }),
            Node::Agg { group, f, child } => {
                let mut groups: HashMap<Vec<Value>, Rational> = HashMap::new();
                self.run(child, env, &Rational::one(), &mut |env, m2| {
                    let w = num(self.term(f, env)?)?;
                    if !w.is_zero() {
                        let key: Vec<Value> = group.iter().map(|&s| env[s].clone()).collect();
                        *groups.entry(key).or_insert_with(Rational::zero) += m2 * w;
                    }
                    Ok(())
                })?;
                for (key, g) in groups {
                    if g.is_zero() {
                        continue;
                    }
                    for (&s, v) in group.iter().zip(key) {
                        env[s] = v;
                    }
                    k(env, &(m * g))?;
                }
                Ok(())
            }
        }
    }

    fn run_seq(
        &self,
        nodes: &[Node],
        env: &mut Vec<Value>,
        m: &Rational,
        k: &mut Sink<'_>,
    ) -> Result<()> {
        match nodes.split_first() {
            None => k(env, m),
            Some((first, rest)) => {
                self.run(first, env, m, &mut |env, m2| self.run_seq(rest, env, m2, k))
            }
        }
    }
}

/// A query compiled against fixed input variables.
#[derive(Clone, Debug)]
pub struct Plan {
    root: Node,
    nslots: usize,
    input_slots: Vec<usize>,
    output_slots: Vec<usize>,
    output: Vec<String>,
    patterns: Vec<AccessPattern>,
}

impl Plan {
    /// Plan `q` with the variables `inputs` bound by the caller.
    pub fn new(q: &QueryExpr, inputs: &[String]) -> Result<Plan> {
        Self::with_caches(q, inputs, &HashMap::new())
    }

    /// Like [`Plan::new`], where `caches` gives, per cache view, the number of
    /// leading key columns that must be bound before the view is read.
    pub fn with_caches(
        q: &QueryExpr,
        inputs: &[String],
        caches: &HashMap<String, usize>,
    ) -> Result<Plan> {
        let mut p = Planner {
            scope: HashMap::new(),
            nslots: 0,
            patterns: BTreeSet::new(),
            caches: caches.clone(),
        };
        let input_slots: Vec<usize> = inputs.iter().map(|v| p.slot(v)).collect();
        let bound: BTreeSet<usize> = input_slots.iter().cloned().collect();
        let output = q.schema()?;
        let (root, after) = p.plan(q, &bound, true)?;
        let mut output_slots = Vec::new();
        for v in &output {
            if !p.is_bound(v, &after) {
                return Err(Error::Binding(v.clone()));
            }
            output_slots.push(p.slot(v));
        }
        Ok(Plan {
            root,
            nslots: p.nslots,
            input_slots,
            output_slots,
            output,
            patterns: p.patterns.into_iter().collect(),
        })
    }

    pub fn output(&self) -> &[String] {
        &self.output
    }

    /// Partial-key accesses the plan performs; indexes for them speed it up.
    pub fn access_patterns(&self) -> &[AccessPattern] {
        &self.patterns
    }

    /// Stream `(output tuple, multiplicity)` pairs; the same tuple may appear
    /// several times. Returns the number of atom probes performed.
    pub fn execute(
        &self,
        src: &dyn Source,
        inputs: &[Value],
        k: &mut dyn FnMut(Tuple, &Rational) -> Result<()>,
    ) -> Result<u64> {
        let mut env = vec![Value::int(0); self.nslots.max(1)];
        for (&s, v) in self.input_slots.iter().zip(inputs) {
            env[s] = v.clone();
        }
        let ex = Exec {
            src,
            probes: Cell::new(0),
            memo: RefCell::new(HashMap::new()),
        };
        ex.run(&self.root, &mut env, &Rational::one(), &mut |env, m| {
            k(
                self.output_slots.iter().map(|&s| env[s].clone()).collect(),
                m,
            )
        })?;
        Ok(ex.probes.get())
    }

    /// Evaluate into an aggregated map.
    pub fn evaluate(&self, src: &dyn Source, inputs: &[Value]) -> Result<HashMap<Tuple, Rational>> {
        let mut acc: HashMap<Tuple, Rational> = HashMap::new();
        self.execute(src, inputs, &mut |t, m| {
            *acc.entry(t).or_insert_with(Rational::zero) += m;
            Ok(())
        })?;
        acc.retain(|_, m| !m.is_zero());
        Ok(acc)
    }
}

/// Evaluate `q` against `src` with the variables of `env` bound.
pub fn evaluate(q: &QueryExpr, src: &dyn Source, env: &Valuation) -> Result<Gmr> {
    let names: Vec<String> = env.keys().cloned().collect();
    let values: Vec<Value> = names.iter().map(|n| env[n].clone()).collect();
    let plan = Plan::new(q, &names)?;
    let out = plan.evaluate(src, &values)?;
    Gmr::from_entries(plan.output.clone(), out)
}

/// Named relations held in memory, readable as both relations and views.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    maps: HashMap<String, ViewMap>,
}

impl MemorySource {
    pub fn new<'a>(db: impl IntoIterator<Item = (&'a String, &'a Gmr)>) -> Self {
        MemorySource {
            maps: db
                .into_iter()
                .map(|(n, g)| (n.clone(), ViewMap::from_gmr(g)))
                .collect(),
        }
    }
}

impl Source for MemorySource {
    fn relation(&self, name: &str) -> Result<MapRef<'_>> {
        self.maps
            .get(name)
            .map(MapRef::Plain)
            .ok_or_else(|| Error::UnknownRelation(name.into()))
    }
    fn view(&self, name: &str, _: &[Value]) -> Result<MapRef<'_>> {
        self.maps
            .get(name)
            .map(MapRef::Plain)
            .ok_or_else(|| Error::UnknownView(name.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::vtq::parse_query;
    use crate::value::rat;

    struct Db {
        rels: HashMap<String, ViewMap>,
    }

    impl Source for Db {
        fn relation(&self, name: &str) -> Result<MapRef<'_>> {
            self.rels
                .get(name)
                .map(MapRef::Plain)
                .ok_or_else(|| Error::UnknownRelation(name.into()))
        }
        fn view(&self, name: &str, _: &[Value]) -> Result<MapRef<'_>> {
            self.rels
                .get(name)
                .map(MapRef::Plain)
                .ok_or_else(|| Error::UnknownView(name.into()))
        }
    }

    fn db(rows: &[(&str, &[i64], i64)]) -> Db {
        let mut rels: HashMap<String, ViewMap> = HashMap::new();
        for (name, t, m) in rows {
            rels.entry(name.to_string())
                .or_insert_with(|| ViewMap::new(t.len()))
                .add(t.iter().map(|&x| Value::int(x)).collect(), &rat(*m));
        }
        Db { rels }
    }

    fn scalar(q: &str, d: &Db, env: &[(&str, i64)]) -> Rational {
        let env: Valuation = env
            .iter()
            .map(|(k, v)| (k.to_string(), Value::int(*v)))
            .collect();
        evaluate(&parse_query(q).unwrap(), d, &env)
            .unwrap()
            .scalar_value()
    }

    #[test]
    fn join_and_aggregate() {
        let d = db(&[
            ("R", &[1, 10], 1),
            ("R", &[2, 20], 2),
            ("S", &[10, 5], 3),
            ("S", &[20, 7], 1),
        ]);
        // sum over R(A,B) S(B,C) of A*C = 1*5*3 + 2*7*2
        assert_eq!(
            scalar("(sum () (* A C) (join (rel R A B) (rel S B C)))", &d, &[]),
            rat(43)
        );
        // the right operand can come first
        assert_eq!(
            scalar("(sum () (* A C) (join (rel S B C) (rel R A B)))", &d, &[]),
            rat(43)
        );
    }

    #[test]
    fn bound_inputs_filter_atoms() {
        let d = db(&[("R", &[1, 10], 1), ("R", &[2, 20], 2)]);
        assert_eq!(scalar("(sum () B (rel R a B))", &d, &[("a", 2)]), rat(40));
    }

    #[test]
    fn nested_aggregates_correlate_by_name() {
        let d = db(&[
            ("LI", &[1, 60], 1),
            ("LI", &[1, 50], 1),
            ("LI", &[2, 30], 1),
        ]);
        let q = "(sum () Q (select (< 100 (agg (sum () Q2 (rel LI O Q2)))) (rel LI O Q)))";
        assert_eq!(scalar(q, &d, &[]), rat(110));
    }

    #[test]
    fn singleton_terms_wait_for_their_inputs() {
        let d = db(&[("R", &[3], 1)]);
        assert_eq!(
            scalar(
                "(sum () Y (join (single ((Y (* 2 X))) 1) (rel R X)))",
                &d,
                &[]
            ),
            rat(6)
        );
    }

    #[test]
    fn independent_components_are_aggregated_separately() {
        let d = db(&[("R", &[1], 1), ("R", &[2], 1), ("S", &[5], 2)]);
        let q = "(sum () 1 (join (sum () A (rel R A)) (sum () B (rel S B))))";
        assert_eq!(scalar(q, &d, &[]), rat(30));
    }

    #[test]
    fn unbound_variables_are_reported() {
        let q = parse_query("(sum () x (rel R A))").unwrap();
        assert!(matches!(Plan::new(&q, &[]), Err(Error::Binding(v)) if v == "x"));
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let d = db(&[("R", &[0], 1)]);
        let q = parse_query("(sum () (/ 1 A) (rel R A))").unwrap();
        assert!(matches!(
            evaluate(&q, &d, &Valuation::new()),
            Err(Error::Arithmetic(_))
        ));
    }

    #[test]
    fn access_patterns_are_recorded() {
        let q = parse_query("(sum () C (join (rel R A B) (rel S B C)))").unwrap();
        let p = Plan::new(&q, &[]).unwrap();
        assert_eq!(
            p.access_patterns(),
            &[(AtomKind::Relation, "S".to_string(), vec![0])]
        );
    }
}
