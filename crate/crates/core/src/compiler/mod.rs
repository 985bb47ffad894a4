//! The viewlet transform: trigger programs that keep a query and its
//! higher-order deltas materialized.

mod print;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use crate::ast::sql::{Catalog, RelationDecl, SqlQuery};
use crate::ast::vtq::print_query;
use crate::ast::QueryExpr;
use crate::delta::{delta_poly, Event, Sign};
use crate::error::{Error, Result};
use crate::optimizer::{
    candidate_policies, choose_reeval_or_incremental, cost::decision_cost, MaterializationDecision,
    Materializer, OptimizerMode, Policy, Statistics, Strategy, Trace, ViewRequest,
};
use crate::poly::{canonical, fresh_name, Factor, Poly};
use crate::value::Rational;

pub use print::{check_statement_order, print_program};

/// A materialized view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewDecl {
    pub name: String,
    /// Output columns of the definition, excluding cache parameters.
    pub keys: Vec<String>,
    /// Leading columns that are cache parameters.
    pub params: Vec<String>,
    /// Columns are `params ++ keys`.
    pub definition: QueryExpr,
    pub order: usize,
}

impl ViewDecl {
    pub fn columns(&self) -> Vec<String> {
        let mut c = self.params.clone();
        c.extend(self.keys.iter().cloned());
        c
    }

    pub fn is_cache(&self) -> bool {
        !self.params.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StmtOp {
    Add,
    Sub,
    /// Recompute the whole view after the increments of the trigger.
    Replace,
}

impl StmtOp {
    pub fn symbol(self) -> &'static str {
        match self {
            StmtOp::Add => "+=",
            StmtOp::Sub => "-=",
            StmtOp::Replace => ":=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Statement {
    pub target: String,
    /// Names the right-hand side uses for the event's fields.
    pub params: Vec<String>,
    /// The right-hand side's output columns, aligned with the target's columns.
    pub keys: Vec<String>,
    /// Keys enumerated by the right-hand side rather than fixed by the event.
    pub loop_vars: Vec<String>,
    pub op: StmtOp,
    pub rhs: QueryExpr,
}

impl Statement {
    /// Views read by the right-hand side.
    pub fn reads(&self) -> BTreeSet<String> {
        self.rhs.views()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trigger {
    pub relation: String,
    pub sign: Sign,
    pub params: Vec<String>,
    pub statements: Vec<Statement>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Depth {
    Zero,
    One,
    Unbounded,
}

impl std::str::FromStr for Depth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "0" => Ok(Depth::Zero),
            "1" => Ok(Depth::One),
            "inf" | "infinite" | "unbounded" | "full" => Ok(Depth::Unbounded),
            other => Err(Error::Config(format!("unknown depth `{}`", other))),
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Depth::Zero => "0",
            Depth::One => "1",
            Depth::Unbounded => "inf",
        })
    }
}

#[derive(Clone, Debug)]
pub struct CompileOptions {
    pub depth: Depth,
    pub optimizer: OptimizerMode,
    pub stats: Option<Statistics>,
    /// Largest estimated cache domain admitted in cost-based mode.
    pub cache_threshold: u64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            depth: Depth::Unbounded,
            optimizer: OptimizerMode::Heuristic,
            stats: None,
            cache_threshold: 10_000,
        }
    }
}

impl CompileOptions {
    pub fn new(depth: Depth, optimizer: OptimizerMode) -> Self {
        CompileOptions {
            depth,
            optimizer,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerProgram {
    /// Name of the view holding the query result.
    pub query: String,
    pub views: Vec<ViewDecl>,
    pub triggers: Vec<Trigger>,
    /// Every relation the program may receive, in catalog order.
    pub relations: Vec<RelationDecl>,
    pub trace: Trace,
}

impl TriggerProgram {
    pub fn view(&self, name: &str) -> Option<&ViewDecl> {
        self.views.iter().find(|v| v.name == name)
    }

    pub fn trigger(&self, relation: &str, sign: Sign) -> Option<&Trigger> {
        self.triggers
            .iter()
            .find(|t| t.relation == relation && t.sign == sign)
    }

    pub fn statement_count(&self) -> usize {
        self.triggers.iter().map(|t| t.statements.len()).sum()
    }

    pub fn relation(&self, name: &str) -> Option<&RelationDecl> {
        self.relations.iter().find(|r| r.name == name)
    }
}

/// Compile a parsed SQL query.
pub fn compile(q: &SqlQuery, catalog: &Catalog, opts: &CompileOptions) -> Result<TriggerProgram> {
    transform(&q.expr, &q.name, catalog, opts)
}

/// Compile a closed query named `Q`.
pub fn viewlet_transform(
    q: &QueryExpr,
    catalog: &Catalog,
    opts: &CompileOptions,
) -> Result<TriggerProgram> {
    transform(q, "Q", catalog, opts)
}

fn relation_occurrences(q: &QueryExpr) -> usize {
    fn term(t: &crate::ast::Term) -> usize {
        let mut qs = Vec::new();
        t.nested_aggs(&mut qs);
        qs.into_iter().map(relation_occurrences).sum()
    }
    match q {
        QueryExpr::Relation { .. } => 1,
        QueryExpr::View { .. } => 0,
        QueryExpr::Singleton { columns, mult } => {
            term(mult) + columns.iter().map(|(_, t)| term(t)).sum::<usize>()
        }
        QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => {
            relation_occurrences(a) + relation_occurrences(b)
        }
        QueryExpr::Select { cond, child } => {
            cond.nested_aggs()
                .into_iter()
                .map(relation_occurrences)
                .sum::<usize>()
                + relation_occurrences(child)
        }
        QueryExpr::SumAgg { f, child, .. } => term(f) + relation_occurrences(child),
        QueryExpr::Rename { child, .. } => relation_occurrences(child),
    }
}

fn nesting_depth(q: &QueryExpr) -> usize {
    fn term(t: &crate::ast::Term) -> usize {
        let mut qs = Vec::new();
        t.nested_aggs(&mut qs);
        qs.into_iter()
            .map(|n| 1 + nesting_depth(n))
            .max()
            .unwrap_or(0)
    }
    match q {
        QueryExpr::Relation { .. } | QueryExpr::View { .. } => 0,
        QueryExpr::Singleton { columns, mult } => columns
            .iter()
            .map(|(_, t)| term(t))
            .max()
            .unwrap_or(0)
            .max(term(mult)),
        QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => nesting_depth(a).max(nesting_depth(b)),
        QueryExpr::Select { cond, child } => cond
            .nested_aggs()
            .into_iter()
            .map(|n| 1 + nesting_depth(n))
            .max()
            .unwrap_or(0)
            .max(nesting_depth(child)),
        QueryExpr::SumAgg { f, child, .. } => term(f).max(nesting_depth(child)),
        QueryExpr::Rename { child, .. } => nesting_depth(child),
    }
}

fn check_closed(q: &QueryExpr) -> Result<()> {
    let inputs = q.input_vars();
    if let Some(v) = inputs.iter().next() {
        return Err(Error::Binding(v.clone()));
    }
    Ok(())
}

/// Trigger parameter names: lower-cased column names, fresh against `used`.
fn event_params(decl: &RelationDecl, used: &BTreeSet<String>) -> Vec<String> {
    let mut taken = used.clone();
    let mut out = Vec::new();
    for c in decl.column_names() {
        let n = fresh_name(&c.to_ascii_lowercase(), &taken);
        taken.insert(n.clone());
        out.push(n);
    }
    out
}

fn updatable<'a>(catalog: &'a Catalog, q: &QueryExpr) -> Result<Vec<&'a RelationDecl>> {
    let rels = q.relations();
    let mut out = Vec::new();
    for r in &rels {
        catalog.get(r)?;
    }
    for decl in catalog.in_order() {
        if rels.contains(&decl.name) && !decl.is_static {
            out.push(decl);
        }
    }
    Ok(out)
}

fn loop_vars(rhs: &QueryExpr, bound: &BTreeSet<String>) -> Vec<String> {
    let Ok(p) = Poly::from_query(rhs) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for v in &p.out {
        if bound.contains(v) {
            continue;
        }
        let enumerated = p.monos.iter().any(|m| {
            m.factors.iter().any(|f| {
                matches!(f, Factor::Rel { .. } | Factor::View { .. })
                    && f.binds().contains(&v.as_str())
            })
        });
        if enumerated {
            out.push(v.clone());
        }
    }
    out
}

/// The right-hand side of a statement and its output columns. Output
/// variables every monomial equates with an event parameter are replaced by
/// that parameter.
fn statement_rhs(p: &Poly, bound: &BTreeSet<String>) -> (QueryExpr, Vec<String>) {
    let mut p = p.clone();
    for k in 0..p.out.len() {
        let v = p.out[k].clone();
        let pinned = |m: &crate::poly::Mono| {
            m.factors.iter().find_map(|f| match f {
                Factor::Lift {
                    var,
                    term: crate::ast::Term::Var(b),
                } if *var == v && bound.contains(b) => Some(b.clone()),
                _ => None,
            })
        };
        let Some(b) = p.monos.first().and_then(&pinned) else {
            continue;
        };
        if p.out.contains(&b) || !p.monos.iter().all(|m| pinned(m).as_ref() == Some(&b)) {
            continue;
        }
        for m in &mut p.monos {
            m.factors
                .retain(|f| !matches!(f, Factor::Lift { var, .. } if *var == v));
            *m = m.rename(&v, &b);
        }
        p.out[k] = b;
    }
    let flat = p.monos.iter().all(|m| {
        m.factors
            .iter()
            .filter(|f| matches!(f, Factor::Rel { .. } | Factor::View { .. }))
            .count()
            <= 1
    });
    let q = if flat {
        p.to_query_flat()
    } else {
        p.to_query()
    };
    (q, p.out.clone())
}

fn sign_op(sign: Sign) -> StmtOp {
    match sign {
        Sign::Insert => StmtOp::Add,
        Sign::Delete => StmtOp::Sub,
    }
}

fn transform(
    q: &QueryExpr,
    name: &str,
    catalog: &Catalog,
    opts: &CompileOptions,
) -> Result<TriggerProgram> {
    check_closed(q)?;
    if opts.optimizer == OptimizerMode::CostBased && opts.stats.is_none() {
        return Err(Error::Config(
            "cost-based optimization needs a statistics file".into(),
        ));
    }
    let rels = updatable(catalog, q)?;
    let relations: Vec<RelationDecl> = catalog.in_order().cloned().collect();
    let out = q.schema()?;
    let top = ViewDecl {
        name: name.to_string(),
        keys: out.clone(),
        params: Vec::new(),
        definition: q.clone(),
        order: 0,
    };
    let mut triggers: Vec<Trigger> = Vec::new();
    for sign in [Sign::Insert, Sign::Delete] {
        for decl in &rels {
            triggers.push(Trigger {
                relation: decl.name.clone(),
                sign,
                params: event_params(decl, &q.all_vars()),
                statements: Vec::new(),
            });
        }
    }

    match opts.depth {
        Depth::Zero => {
            for t in &mut triggers {
                t.statements.push(Statement {
                    target: name.to_string(),
                    params: t.params.clone(),
                    keys: out.clone(),
                    loop_vars: out.clone(),
                    op: StmtOp::Replace,
                    rhs: q.clone(),
                });
            }
            Ok(TriggerProgram {
                query: name.to_string(),
                views: vec![top],
                triggers,
                relations,
                trace: Trace::default(),
            })
        }
        Depth::One => {
            let mut trace = Trace::default();
            for t in &mut triggers {
                let refs: Vec<&str> = t.params.iter().map(String::as_str).collect();
                let ev = Event::new(&t.relation, t.sign, &refs);
                let stmt = match choose_reeval_or_incremental(q, &ev)? {
                    Strategy::Reevaluate => {
                        trace.nested.insert('R');
                        Statement {
                            target: name.to_string(),
                            params: t.params.clone(),
                            keys: out.clone(),
                            loop_vars: out.clone(),
                            op: StmtOp::Replace,
                            rhs: q.clone(),
                        }
                    }
                    Strategy::Incremental => {
                        let mut d = delta_poly(q, &ev, &BTreeSet::new())?;
                        if d.is_zero() {
                            continue;
                        }
                        if t.sign == Sign::Delete {
                            for m in &mut d.monos {
                                m.coef = -m.coef.clone();
                            }
                        }
                        let (rhs, keys) = statement_rhs(&d, &ev.param_set());
                        Statement {
                            target: name.to_string(),
                            params: t.params.clone(),
                            keys,
                            loop_vars: loop_vars(&rhs, &ev.param_set()),
                            op: sign_op(t.sign),
                            rhs,
                        }
                    }
                };
                t.statements.push(stmt);
            }
            Ok(TriggerProgram {
                query: name.to_string(),
                views: vec![top],
                triggers,
                relations,
                trace,
            })
        }
        Depth::Unbounded => {
            let mut c = Compiler {
                opts,
                rels: &rels,
                limit: relation_occurrences(q) + nesting_depth(q) + 1,
                views: vec![top],
                canon: HashMap::new(),
                pending: VecDeque::new(),
                statements: BTreeMap::new(),
                trace: Trace::default(),
                origin: Vec::new(),
            };
            c.register_canon(0)?;
            c.pending.push_back(0);
            while let Some(i) = c.pending.pop_front() {
                c.process(i)?;
            }
            c.finish(name, triggers, relations)
        }
    }
}

struct Compiler<'a> {
    opts: &'a CompileOptions,
    rels: &'a [&'a RelationDecl],
    limit: usize,
    views: Vec<ViewDecl>,
    /// Canonical definition text → (view index, columns in canonical order).
    canon: HashMap<String, (usize, Vec<String>)>,
    pending: VecDeque<usize>,
    /// (relation, sign) → statements in creation order.
    statements: BTreeMap<(String, bool), Vec<Statement>>,
    trace: Trace,
    /// Per view: (parent view index, relation) it was created for.
    origin: Vec<Option<(usize, String)>>,
}

fn canon_key(def: &QueryExpr, params: usize) -> Result<(String, Vec<String>)> {
    let p = Poly::from_query(def)?.simplify(&BTreeSet::new());
    let (text, order) = canonical(&p, &BTreeSet::new(), true);
    Ok((format!("{}|{}", params, text), order))
}

impl Compiler<'_> {
    fn register_canon(&mut self, i: usize) -> Result<()> {
        let v = &self.views[i];
        let (k, order) = canon_key(&v.definition, v.params.len())?;
        self.canon.entry(k).or_insert((i, order));
        while self.origin.len() <= i {
            self.origin.push(None);
        }
        Ok(())
    }

    fn policy_for(
        &self,
        p: &Poly,
        bound: &BTreeSet<String>,
        events: &[(String, Vec<String>)],
    ) -> Result<Policy> {
        match self.opts.optimizer {
            OptimizerMode::Naive => Ok(Policy::NAIVE),
            OptimizerMode::Heuristic => Ok(Policy::HEURISTIC),
            OptimizerMode::CostBased => {
                let stats = self.opts.stats.as_ref().expect("checked at entry");
                let mut best: Option<(Rational, usize, Policy)> = None;
                for policy in candidate_policies() {
                    let mut m = Materializer::new(policy, events);
                    let residual = m.materialize(p, bound)?;
                    let d = MaterializationDecision {
                        residual: residual.to_query(),
                        views: m
                            .requests
                            .iter()
                            .map(|r| (r.placeholder.clone(), r.definition.to_query()))
                            .collect(),
                        trace: m.trace.clone(),
                    };
                    let est = decision_cost(&d, stats)?;
                    let threshold = Rational::from_integer(self.opts.cache_threshold.into());
                    let oversized = m.requests.iter().any(|r| {
                        !r.params.is_empty()
                            && est
                                .domain_sizes
                                .get(&r.placeholder)
                                .is_some_and(|s| *s > threshold)
                    });
                    if oversized {
                        continue;
                    }
                    let n = d.views.len();
                    let better = match &best {
                        None => true,
                        Some((c, bn, _)) => est.total < *c || (est.total == *c && n < *bn),
                    };
                    if better {
                        best = Some((est.total, n, policy));
                    }
                }
                Ok(best.map(|b| b.2).unwrap_or(Policy::HEURISTIC))
            }
        }
    }

    fn events(&self, used: &BTreeSet<String>) -> Vec<(String, Vec<String>)> {
        self.rels
            .iter()
            .map(|d| (d.name.clone(), event_params(d, used)))
            .collect()
    }

    /// Materialize `p` and turn the requests into views, reusing existing
    /// ones. Returns the residual with real view names.
    fn materialize(
        &mut self,
        p: &Poly,
        bound: &BTreeSet<String>,
        parent: usize,
        rel: &str,
    ) -> Result<Option<(QueryExpr, Vec<String>)>> {
        let events = self.events(&p.mentions());
        let policy = self.policy_for(p, bound, &events)?;
        let mut m = Materializer::new(policy, &events);
        let residual = m.materialize(p, bound)?;
        self.trace.merge(&m.trace);
        let mut mapping: HashMap<String, (String, Vec<usize>)> = HashMap::new();
        let order = self.views[parent].order + 1;
        // number new views in the order the residual reads them
        let text = print_query(&residual.to_query());
        let mut requests: Vec<&ViewRequest> = m.requests.iter().collect();
        requests.sort_by_key(|r| {
            [" ", ")"]
                .iter()
                .filter_map(|end| text.find(&format!("(view {}{}", r.placeholder, end)))
                .min()
                .unwrap_or(usize::MAX)
        });
        for r in requests {
            let def = r.definition.to_query();
            let (key, corder) = canon_key(&def, r.params.len())?;
            let idx = match self.canon.get(&key) {
                Some((i, _)) => *i,
                None => {
                    if order > self.limit {
                        return Err(Error::Compile(format!(
                            "delta recursion exceeded order {} while compiling {}",
                            self.limit, self.views[0].name
                        )));
                    }
                    let idx = self.views.len();
                    let keys = r.definition.out[r.params.len()..].to_vec();
                    self.views.push(ViewDecl {
                        name: format!("\u{4}{}", idx),
                        keys,
                        params: r.params.clone(),
                        definition: def,
                        order,
                    });
                    self.register_canon(idx)?;
                    self.origin[idx] = Some((parent, rel.to_string()));
                    self.pending.push_back(idx);
                    idx
                }
            };
            if idx == parent {
                return Ok(None);
            }
            // position in the request's columns of each column of the view
            let (_, vorder) = &self.canon[&key];
            let cols = self.views[idx].columns();
            let perm: Vec<usize> = cols
                .iter()
                .map(|c| {
                    let k = vorder
                        .iter()
                        .position(|x| x == c)
                        .expect("canonical order covers columns");
                    let rc = &corder[k];
                    r.definition
                        .out
                        .iter()
                        .position(|x| x == rc)
                        .expect("request column")
                })
                .collect();
            mapping.insert(r.placeholder.clone(), (self.views[idx].name.clone(), perm));
        }
        let rename = |n: &str, k: &[String]| match mapping.get(n) {
            Some((name, perm)) => (name.clone(), perm.iter().map(|&i| k[i].clone()).collect()),
            None => (n.to_string(), k.to_vec()),
        };
        let (rhs, keys) = statement_rhs(&residual, bound);
        Ok(Some((rhs.map_views(&rename), keys)))
    }

    fn process(&mut self, i: usize) -> Result<()> {
        let def = self.views[i].definition.clone();
        let params: BTreeSet<String> = self.views[i].params.iter().cloned().collect();
        let cols = self.views[i].columns();
        let target = self.views[i].name.clone();
        let relations = def.relations();
        let mut reeval: Option<Option<(QueryExpr, Vec<String>)>> = None;
        for decl in self.rels.to_vec() {
            if !relations.contains(&decl.name) {
                continue;
            }
            for sign in [Sign::Insert, Sign::Delete] {
                let mut used = def.all_vars();
                used.extend(params.iter().cloned());
                let ev_params = event_params(decl, &used);
                let refs: Vec<&str> = ev_params.iter().map(String::as_str).collect();
                let ev = Event::new(&decl.name, sign, &refs);
                let stmt = match choose_reeval_or_incremental(&def, &ev)? {
                    Strategy::Reevaluate => {
                        self.trace.nested.insert('R');
                        if reeval.is_none() {
                            let p = Poly::from_query(&def)?.simplify(&params);
                            reeval = Some(self.materialize(&p, &params, i, &decl.name)?);
                        }
                        let (rhs, keys) = reeval
                            .clone()
                            .flatten()
                            .unwrap_or_else(|| (def.clone(), cols.clone()));
                        Statement {
                            target: target.clone(),
                            params: ev_params.clone(),
                            keys,
                            loop_vars: loop_vars(&rhs, &params),
                            op: StmtOp::Replace,
                            rhs,
                        }
                    }
                    Strategy::Incremental => {
                        if def.has_nested_over(&decl.name) {
                            self.trace.nested.insert('I');
                        }
                        let mut bound = params.clone();
                        bound.extend(ev_params.iter().cloned());
                        let mut d = delta_poly(&def, &ev, &params)?;
                        if d.is_zero() {
                            continue;
                        }
                        if sign == Sign::Delete {
                            for m in &mut d.monos {
                                m.coef = -m.coef.clone();
                            }
                        }
                        let (rhs, keys) = match self.materialize(&d, &bound, i, &decl.name)? {
                            Some(r) => r,
                            None => {
                                return Err(Error::Compile(format!(
                                    "delta of {} reads itself",
                                    target
                                )))
                            }
                        };
                        Statement {
                            target: target.clone(),
                            params: ev_params.clone(),
                            keys,
                            loop_vars: loop_vars(&rhs, &bound),
                            op: sign_op(sign),
                            rhs,
                        }
                    }
                };
                self.statements
                    .entry((decl.name.clone(), sign == Sign::Insert))
                    .or_default()
                    .push(stmt);
            }
        }
        Ok(())
    }

    fn finish(
        mut self,
        name: &str,
        mut triggers: Vec<Trigger>,
        relations: Vec<RelationDecl>,
    ) -> Result<TriggerProgram> {
        // readable names: parent name + relation, numbered when shared
        let mut group_size: HashMap<(usize, String), usize> = HashMap::new();
        for o in self.origin.iter().flatten() {
            *group_size.entry(o.clone()).or_insert(0) += 1;
        }
        let mut rank: HashMap<(usize, String), usize> = HashMap::new();
        let mut taken: BTreeSet<String> = self.rels.iter().map(|d| d.name.clone()).collect();
        taken.insert(name.to_string());
        let mut resolved: HashMap<String, String> = HashMap::new();
        resolved.insert(self.views[0].name.clone(), name.to_string());
        for i in 1..self.views.len() {
            let o = self.origin[i].clone().expect("derived view has an origin");
            let base = format!("{}_{}", resolved[&self.views[o.0].name], o.1);
            let r = rank.entry(o.clone()).or_insert(0);
            *r += 1;
            let wanted = if group_size[&o] == 1 {
                base
            } else {
                format!("{}{}", base, r)
            };
            let real = fresh_name(&wanted, &taken);
            taken.insert(real.clone());
            resolved.insert(self.views[i].name.clone(), real);
        }
        let rename = |n: &str, k: &[String]| {
            (
                resolved.get(n).cloned().unwrap_or_else(|| n.to_string()),
                k.to_vec(),
            )
        };
        for v in &mut self.views {
            v.name = resolved[&v.name].clone();
            v.definition = v.definition.map_views(&rename);
        }
        for t in &mut triggers {
            let stmts = self
                .statements
                .remove(&(t.relation.clone(), t.sign == Sign::Insert))
                .unwrap_or_default();
            t.statements = stmts
                .into_iter()
                .map(|mut s| {
                    s.target = resolved[&s.target].clone();
                    s.rhs = s.rhs.map_views(&rename);
                    adopt_params(&mut s, &t.params);
                    s
                })
                .collect();
            print::order_statements(&mut t.statements, &self.views);
        }
        let mut program = TriggerProgram {
            query: name.to_string(),
            views: self.views,
            triggers,
            relations,
            trace: self.trace,
        };
        program = dedupe_views(&program)?;
        check_statement_order(&program)?;
        Ok(program)
    }
}

/// Use the trigger's parameter names in `s` when they do not clash.
fn adopt_params(s: &mut Statement, names: &[String]) {
    if s.params == names {
        return;
    }
    let vars = s.rhs.all_vars();
    let clash = names
        .iter()
        .zip(&s.params)
        .any(|(n, p)| n != p && vars.contains(n));
    if clash {
        return;
    }
    let map: HashMap<String, String> = s
        .params
        .iter()
        .cloned()
        .zip(names.iter().cloned())
        .collect();
    let f = |v: &str| map.get(v).cloned().unwrap_or_else(|| v.to_string());
    s.rhs = s.rhs.map_vars(&f);
    s.keys = s.keys.iter().map(|k| f(k)).collect();
    s.loop_vars = s.loop_vars.iter().map(|k| f(k)).collect();
    s.params = names.to_vec();
}

/// Merge views whose definitions agree up to renaming, rewriting reads.
pub fn dedupe_views(p: &TriggerProgram) -> Result<TriggerProgram> {
    let mut canon: HashMap<String, (usize, Vec<String>)> = HashMap::new();
    let mut replace: HashMap<String, (String, Vec<usize>)> = HashMap::new();
    let mut keep: Vec<ViewDecl> = Vec::new();
    for v in &p.views {
        let (key, order) = canon_key(&v.definition, v.params.len())?;
        match canon.get(&key) {
            Some((j, korder)) if v.name != p.query => {
                let kept = &keep[*j];
                let cols = v.columns();
                let perm = kept
                    .columns()
                    .iter()
                    .map(|c| {
                        let k = korder
                            .iter()
                            .position(|x| x == c)
                            .expect("canonical column");
                        cols.iter().position(|x| *x == order[k]).expect("column")
                    })
                    .collect();
                replace.insert(v.name.clone(), (kept.name.clone(), perm));
            }
            _ => {
                canon.entry(key).or_insert((keep.len(), order));
                keep.push(v.clone());
            }
        }
    }
    if replace.is_empty() {
        return Ok(p.clone());
    }
    let rename = |n: &str, k: &[String]| match replace.get(n) {
        Some((m, perm)) => (m.clone(), perm.iter().map(|&i| k[i].clone()).collect()),
        None => (n.to_string(), k.to_vec()),
    };
    let mut out = p.clone();
    out.views = keep
        .into_iter()
        .map(|mut v| {
            v.definition = v.definition.map_views(&rename);
            v
        })
        .collect();
    for t in &mut out.triggers {
        t.statements.retain(|s| !replace.contains_key(&s.target));
        for s in &mut t.statements {
            s.rhs = s.rhs.map_views(&rename);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
