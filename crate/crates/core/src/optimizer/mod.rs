//! Materialization decisions for delta queries.
//!
//! The four rewrite rules are realized by [`materialize::Materializer`]:
//!
//! * rule 1 splits a monomial into independently materialized components;
//! * rule 2 distributes products over sums before materializing;
//! * rule 3 keeps factors that mention input variables out of views (or, in
//!   cache mode, keeps them inside and keys the view by those variables);
//! * rule 4 materializes nested aggregates separately from the query that
//!   compares against them, and [`choose_reeval_or_incremental`] picks between
//!   maintaining a view by deltas or recomputing it.
//!
//! Which rules fired is recorded in a [`Trace`].

pub mod cost;
pub mod materialize;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ast::QueryExpr;
use crate::delta::{nested_deltas_restricted, Event};
use crate::error::{Error, Result};
use crate::poly::Poly;

pub use cost::{cost, cost_e, cost_m, CostEstimate, Statistics};
pub use materialize::{Materializer, ViewRequest};

/// Which rewrites a materialization pass may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Policy {
    pub decompose: bool,
    pub expand: bool,
    pub extract_inputs: bool,
    pub decorrelate: bool,
}

impl Policy {
    pub const HEURISTIC: Policy = Policy {
        decompose: true,
        expand: true,
        extract_inputs: true,
        decorrelate: true,
    };

    /// One view per delta, with views keyed by every input variable they need.
    pub const NAIVE: Policy = Policy {
        decompose: false,
        expand: false,
        extract_inputs: false,
        decorrelate: true,
    };

    pub const NONE: Policy = Policy {
        decompose: false,
        expand: false,
        extract_inputs: false,
        decorrelate: false,
    };
}

/// Rules observed while compiling one query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub decomposed: bool,
    pub expanded: bool,
    /// `S`: input variables pulled out of a view; `C`: view cache.
    pub input_vars: BTreeSet<char>,
    /// `R`: re-evaluation; `I`: incremental maintenance of nested aggregates.
    pub nested: BTreeSet<char>,
    pub log: Vec<String>,
}

impl Trace {
    pub fn merge(&mut self, other: &Trace) {
        self.decomposed |= other.decomposed;
        self.expanded |= other.expanded;
        self.input_vars.extend(other.input_vars.iter().cloned());
        self.nested.extend(other.nested.iter().cloned());
        self.log.extend(other.log.iter().cloned());
    }

    fn letters(s: &BTreeSet<char>, order: &[char]) -> String {
        let v: Vec<String> = order
            .iter()
            .filter(|c| s.contains(c))
            .map(|c| c.to_string())
            .collect();
        if v.is_empty() {
            "-".to_string()
        } else {
            v.join(",")
        }
    }

    /// The four cells of the rule matrix: rule 1, rule 2, rule 3, rule 4.
    pub fn cells(&self) -> [String; 4] {
        let mark = |b: bool| {
            if b {
                "✓".to_string()
            } else {
                "-".to_string()
            }
        };
        [
            mark(self.decomposed),
            mark(self.expanded),
            Self::letters(&self.input_vars, &['S', 'C']),
            Self::letters(&self.nested, &['R', 'I']),
        ]
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.cells();
        write!(
            f,
            "rule1={} rule2={} rule3={} rule4={}",
            c[0], c[1], c[2], c[3]
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Reevaluate,
    Incremental,
}

/// Incremental maintenance when every nested aggregate the event touches is
/// range-restricted by the event's parameters, re-evaluation otherwise.
pub fn choose_reeval_or_incremental(q: &QueryExpr, ev: &Event) -> Result<Strategy> {
    if !q.has_nested_over(&ev.relation) {
        return Ok(Strategy::Incremental);
    }
    Ok(if nested_deltas_restricted(q, ev)? {
        Strategy::Incremental
    } else {
        Strategy::Reevaluate
    })
}

/// A residual query over named views together with the view definitions.
#[derive(Clone, Debug)]
pub struct MaterializationDecision {
    pub residual: QueryExpr,
    pub views: Vec<(String, QueryExpr)>,
    pub trace: Trace,
}

impl MaterializationDecision {
    /// Substitute every view definition back into the residual.
    pub fn inline(&self) -> QueryExpr {
        let defs: BTreeMap<&str, &QueryExpr> =
            self.views.iter().map(|(n, q)| (n.as_str(), q)).collect();
        inline_views(&self.residual, &defs)
    }
}

fn inline_views(q: &QueryExpr, defs: &BTreeMap<&str, &QueryExpr>) -> QueryExpr {
    substitute(q, defs)
}

/// Every relation read by `q` with its arity, as generic update events.
fn generic_events(q: &QueryExpr) -> Vec<(String, Vec<String>)> {
    fn walk(q: &QueryExpr, out: &mut BTreeMap<String, usize>) {
        let nested = |t: &crate::ast::Term, out: &mut BTreeMap<String, usize>| {
            let mut qs = Vec::new();
            t.nested_aggs(&mut qs);
            for n in qs {
                walk(n, out);
            }
        };
        match q {
            QueryExpr::Relation { name, vars } => {
                out.insert(name.clone(), vars.len());
            }
            QueryExpr::View { .. } => {}
            QueryExpr::Singleton { columns, mult } => {
                nested(mult, out);
                for (_, t) in columns {
                    nested(t, out);
                }
            }
            QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            QueryExpr::Select { cond, child } => {
                cond.visit_terms(&mut |t| nested(t, out));
                walk(child, out);
            }
            QueryExpr::SumAgg { f, child, .. } => {
                nested(f, out);
                walk(child, out);
            }
            QueryExpr::Rename { child, .. } => walk(child, out),
        }
    }
    let mut arities = BTreeMap::new();
    walk(q, &mut arities);
    arities
        .into_iter()
        .map(|(r, n)| (r, (0..n).map(|i| format!("\u{3}p{}", i)).collect()))
        .collect()
}

fn substitute(q: &QueryExpr, defs: &BTreeMap<&str, &QueryExpr>) -> QueryExpr {
    use crate::ast::Term;
    let sub_term = |t: &Term| -> Term { sub_in_term(t, defs) };
    match q {
        QueryExpr::View { name, keys } => match defs.get(name.as_str()) {
            Some(def) => {
                let cols = def.schema().unwrap_or_default();
                let inner = substitute(def, defs);
                let mapping: Vec<(String, String)> =
                    cols.into_iter().zip(keys.iter().cloned()).collect();
                QueryExpr::Rename {
                    mapping,
                    child: Box::new(inner),
                }
            }
            None => q.clone(),
        },
        QueryExpr::Relation { .. } => q.clone(),
        QueryExpr::Singleton { columns, mult } => QueryExpr::Singleton {
            columns: columns
                .iter()
                .map(|(c, t)| (c.clone(), sub_term(t)))
                .collect(),
            mult: sub_term(mult),
        },
        QueryExpr::Join(a, b) => QueryExpr::join(substitute(a, defs), substitute(b, defs)),
        QueryExpr::Union(a, b) => QueryExpr::union(substitute(a, defs), substitute(b, defs)),
        QueryExpr::Select { cond, child } => QueryExpr::select(
            cond.map_terms(&mut |t| sub_term(t)),
            substitute(child, defs),
        ),
        QueryExpr::SumAgg { group_by, f, child } => QueryExpr::SumAgg {
            group_by: group_by.clone(),
            f: sub_term(f),
            child: Box::new(substitute(child, defs)),
        },
        QueryExpr::Rename { mapping, child } => QueryExpr::Rename {
            mapping: mapping.clone(),
            child: Box::new(substitute(child, defs)),
        },
    }
}

fn sub_in_term(t: &crate::ast::Term, defs: &BTreeMap<&str, &QueryExpr>) -> crate::ast::Term {
    use crate::ast::Term;
    match t {
        Term::Const(_) | Term::Var(_) => t.clone(),
        Term::Add(a, b) => Term::add(sub_in_term(a, defs), sub_in_term(b, defs)),
        Term::Sub(a, b) => Term::sub(sub_in_term(a, defs), sub_in_term(b, defs)),
        Term::Mul(a, b) => Term::mul(sub_in_term(a, defs), sub_in_term(b, defs)),
        Term::Div(a, b) => Term::div(sub_in_term(a, defs), sub_in_term(b, defs)),
        Term::Neg(a) => Term::Neg(Box::new(sub_in_term(a, defs))),
        Term::Agg(q) => Term::agg(substitute(q, defs)),
    }
}

/// Materialize `q` (whose input variables are supplied by the caller) under
/// `policy`, naming the views `M1`, `M2`, ... in order of creation.
pub fn decide(q: &QueryExpr, policy: Policy) -> Result<MaterializationDecision> {
    let inputs = q.input_vars();
    let p = Poly::from_query(q)?.simplify(&inputs);
    let events = generic_events(q);
    let mut m = Materializer::new(policy, &events);
    let residual = m.materialize(&p, &inputs)?;
    let mut names: BTreeMap<String, String> = BTreeMap::new();
    let mut views = Vec::new();
    for (i, r) in m.requests.iter().enumerate() {
        let name = format!("M{}", i + 1);
        names.insert(r.placeholder.clone(), name.clone());
        views.push((name, r.definition.to_query()));
    }
    let rename = |n: &str, k: &[String]| {
        (
            names.get(n).cloned().unwrap_or_else(|| n.to_string()),
            k.to_vec(),
        )
    };
    let residual = residual.to_query().map_views(&rename);
    let views = views
        .into_iter()
        .map(|(n, q)| (n, q.map_views(&rename)))
        .collect();
    Ok(MaterializationDecision {
        residual,
        views,
        trace: m.trace,
    })
}

/// Rule 1 alone: independent components become separate views.
pub fn decompose(q: &QueryExpr) -> Result<MaterializationDecision> {
    decide(
        q,
        Policy {
            decompose: true,
            ..Policy::NONE
        },
    )
}

/// Rule 2: a union of monomials with sums inside products distributed.
pub fn expand_polynomial(q: &QueryExpr) -> Result<QueryExpr> {
    let inputs = q.input_vars();
    Ok(Poly::from_query(q)?
        .simplify(&inputs)
        .expand()
        .to_query_flat())
}

/// Inverse of rule 2 on the normal form: monomials that agree on everything
/// but one value factor are merged into a single monomial over the sum.
pub fn factorize(q: &QueryExpr) -> Result<QueryExpr> {
    use crate::ast::Term;
    use crate::poly::{Factor, Mono};
    let inputs = q.input_vars();
    let p = Poly::from_query(q)?.simplify(&inputs);
    let mut groups: Vec<(Vec<Factor>, Term)> = Vec::new();
    let mut rest: Vec<Mono> = Vec::new();
    for m in p.monos {
        let vals: Vec<usize> = (0..m.factors.len())
            .filter(|&i| matches!(m.factors[i], Factor::Val(_)))
            .collect();
        let scaled = |t: Term| {
            if num_traits::One::is_one(&m.coef) {
                t
            } else {
                Term::mul(Term::rational(m.coef.clone()), t)
            }
        };
        let (common, val) = match vals.as_slice() {
            [] => (m.factors.clone(), scaled(Term::one())),
            [i] => {
                let mut c = m.factors.clone();
                let Factor::Val(t) = c.remove(*i) else {
                    unreachable!()
                };
                (c, scaled(t))
            }
            _ => {
                rest.push(m);
                continue;
            }
        };
        match groups.iter_mut().find(|(c, _)| *c == common) {
            Some((_, acc)) => *acc = Term::add(acc.clone(), val),
            None => groups.push((common, val)),
        }
    }
    let mut monos = rest;
    for (mut common, val) in groups {
        common.push(Factor::Val(val));
        monos.push(Mono::new(common));
    }
    Ok(Poly { out: p.out, monos }.to_query_flat())
}

/// Rule 3 alone: factors mentioning input variables stay in the residual.
pub fn extract_input_variables(q: &QueryExpr) -> Result<MaterializationDecision> {
    decide(
        q,
        Policy {
            extract_inputs: true,
            ..Policy::NONE
        },
    )
}

/// Rule 4 alone: nested aggregates become views of their own.
pub fn decorrelate_nested(q: &QueryExpr) -> Result<MaterializationDecision> {
    decide(
        q,
        Policy {
            decorrelate: true,
            extract_inputs: true,
            ..Policy::NONE
        },
    )
}

/// Optimizer modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerMode {
    Naive,
    Heuristic,
    CostBased,
}

impl std::str::FromStr for OptimizerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "naive" => Ok(OptimizerMode::Naive),
            "heuristic" => Ok(OptimizerMode::Heuristic),
            "cost_based" | "cost" => Ok(OptimizerMode::CostBased),
            other => Err(Error::Config(format!("unknown optimizer mode `{}`", other))),
        }
    }
}

/// Materialization decision for a single query.
pub fn optimize(
    q: &QueryExpr,
    mode: OptimizerMode,
    stats: Option<&Statistics>,
) -> Result<MaterializationDecision> {
    match mode {
        OptimizerMode::Naive => decide(q, Policy::NAIVE),
        OptimizerMode::Heuristic => decide(q, Policy::HEURISTIC),
        OptimizerMode::CostBased => {
            let stats = stats
                .ok_or_else(|| Error::Config("cost-based optimization needs statistics".into()))?;
            let mut best: Option<(crate::value::Rational, usize, MaterializationDecision)> = None;
            for policy in candidate_policies() {
                let d = decide(q, policy)?;
                let c = cost::decision_cost(&d, stats)?.total;
                let better = match &best {
                    None => true,
                    Some((bc, bn, _)) => c < *bc || (c == *bc && d.views.len() < *bn),
                };
                if better {
                    let n = d.views.len();
                    best = Some((c, n, d));
                }
            }
            Ok(best.expect("at least one candidate").2)
        }
    }
}

/// The finite candidate set explored in cost-based mode.
pub fn candidate_policies() -> Vec<Policy> {
    let mut out = Vec::new();
    for expand in [true, false] {
        for extract_inputs in [true, false] {
            out.push(Policy {
                decompose: true,
                expand,
                extract_inputs,
                decorrelate: true,
            });
        }
    }
    out
}
