//! Cost model: evaluation cost, maintenance cost and their combination.
//!
//! Result sizes come from a textbook estimator. Atom cardinalities are
//! multiplied; each additional occurrence of a join variable divides by its
//! distinct count; equality selections divide by the distinct count of the
//! compared column, other comparisons by three; a grouped result holds at most
//! the product of its group columns' distinct counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_traits::{One, Zero};

use super::MaterializationDecision;
use crate::ast::{CmpOp, Condition, QueryExpr, Term};
use crate::error::{Error, Result};
use crate::poly::{Factor, Mono, Poly};
use crate::value::{parse_rational, rat, Rational};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelationStats {
    pub cardinality: Rational,
    pub rate: Rational,
    /// Distinct counts by column name.
    pub distinct: BTreeMap<String, Rational>,
    /// Column names by position, when known.
    pub columns: Vec<String>,
}

/// Per-relation statistics used by the cost model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Statistics {
    pub relations: BTreeMap<String, RelationStats>,
}

impl Statistics {
    /// Parse lines `name cardinality rate` and `name.column distinct`; `#`
    /// starts a comment.
    pub fn parse(src: &str) -> Result<Statistics> {
        let mut st = Statistics::default();
        let mut pending: Vec<(usize, String, String, Rational)> = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                parse_rational(s)
                    .ok_or_else(|| Error::parse(i + 1, 1, format!("`{}` is not a number", s)))
            };
            match parts.as_slice() {
                [name, card, rate] if !name.contains('.') => {
                    let e = st.relations.entry(name.to_string()).or_default();
                    e.cardinality = num(card)?;
                    e.rate = num(rate)?;
                }
                [col, d] if col.contains('.') => {
                    let (r, c) = col.split_once('.').unwrap();
                    pending.push((i + 1, r.to_string(), c.to_ascii_lowercase(), num(d)?));
                }
                _ => {
                    return Err(Error::parse(
                        i + 1,
                        1,
                        format!("malformed statistics line `{}`", line),
                    ))
                }
            }
        }
        for (line, r, c, d) in pending {
            let e = st.relations.get_mut(&r).ok_or_else(|| {
                Error::parse(
                    line,
                    1,
                    format!("distinct count for undeclared relation `{}`", r),
                )
            })?;
            if d > e.cardinality {
                return Err(Error::parse(
                    line,
                    1,
                    format!("distinct count of {}.{} exceeds the cardinality", r, c),
                ));
            }
            e.distinct.insert(c, d);
        }
        Ok(st)
    }

    /// Attach column order from a catalog so atoms can be matched by position.
    pub fn with_columns(mut self, catalog: &crate::ast::sql::Catalog) -> Statistics {
        for (name, decl) in &catalog.relations {
            if let Some(e) = self.relations.get_mut(name) {
                e.columns = decl.column_names();
            }
        }
        self
    }

    pub fn rate_refresh(&self) -> Rational {
        self.relations.values().map(|r| r.rate.clone()).sum()
    }

    fn rel(&self, name: &str) -> Result<&RelationStats> {
        self.relations
            .get(name)
            .ok_or_else(|| Error::Config(format!("no statistics for relation `{}`", name)))
    }

    fn column_distinct(&self, name: &str, pos: usize) -> Result<Rational> {
        let r = self.rel(name)?;
        let by_name = r.columns.get(pos).and_then(|c| r.distinct.get(c));
        Ok(by_name
            .cloned()
            .unwrap_or_else(|| r.cardinality.clone())
            .max(Rational::one()))
    }
}

/// Estimated size of a result and the distinct counts of its variables.
#[derive(Clone, Debug)]
struct Est {
    card: Rational,
    distinct: HashMap<String, Rational>,
}

/// View definitions the estimator can look through, by name.
pub type ViewDefs = HashMap<String, QueryExpr>;

struct Estimator<'a> {
    stats: &'a Statistics,
    views: &'a ViewDefs,
}

impl Estimator<'_> {
    fn mono(&self, m: &Mono, bound: &BTreeSet<String>) -> Result<Est> {
        let mut card = Rational::one();
        let mut distinct: HashMap<String, Rational> = HashMap::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for f in &m.factors {
            let cols: Vec<(String, Rational)> = match f {
                Factor::Rel { name, vars } => {
                    card *= self.stats.rel(name)?.cardinality.clone();
                    vars.iter()
                        .enumerate()
                        .map(|(i, v)| Ok((v.clone(), self.stats.column_distinct(name, i)?)))
                        .collect::<Result<_>>()?
                }
                Factor::View { name, keys } => {
                    let def = self
                        .views
                        .get(name)
                        .ok_or_else(|| Error::UnknownView(name.clone()))?;
                    let schema = def.schema()?;
                    let e = self.query(def, &BTreeSet::new())?;
                    let size = dom(&e, &schema);
                    card *= size.clone();
                    keys.iter()
                        .zip(&schema)
                        .map(|(k, c)| {
                            (
                                k.clone(),
                                e.distinct.get(c).cloned().unwrap_or_else(|| size.clone()),
                            )
                        })
                        .collect()
                }
                Factor::Lift { var, .. } => vec![(var.clone(), Rational::one())],
                Factor::Cond(_) | Factor::Val(_) => Vec::new(),
            };
            for (v, d) in cols {
                let d = d.max(Rational::one());
                if bound.contains(&v) {
                    card /= d.clone();
                    distinct.insert(v, Rational::one());
                    continue;
                }
                let n = seen.entry(v.clone()).or_insert(0);
                *n += 1;
                if *n > 1 {
                    let prev = distinct.get(&v).cloned().unwrap_or_else(Rational::one);
                    card /= prev.clone().max(d.clone());
                    distinct.insert(v, prev.min(d));
                } else {
                    distinct.insert(v, d);
                }
            }
        }
        for f in &m.factors {
            if let Factor::Cond(c) = f {
                card *= selectivity(c, &distinct);
            }
        }
        Ok(Est { card, distinct })
    }

    fn poly(&self, p: &Poly, bound: &BTreeSet<String>) -> Result<Est> {
        let mut card = Rational::zero();
        let mut distinct: HashMap<String, Rational> = HashMap::new();
        for m in &p.monos {
            let e = self.mono(m, bound)?;
            card += e.card;
            for (v, d) in e.distinct {
                let x = distinct.entry(v).or_insert_with(Rational::zero);
                if d > *x {
                    *x = d;
                }
            }
        }
        for d in distinct.values_mut() {
            if *d > card && card > Rational::zero() {
                *d = card.clone();
            }
        }
        Ok(Est { card, distinct })
    }

    fn query(&self, q: &QueryExpr, bound: &BTreeSet<String>) -> Result<Est> {
        let p = Poly::from_query(q)?.simplify(bound);
        self.poly(&p, bound)
    }

    /// `cost_e`: size of the result plus the sizes of every aggregate
    /// computed on the way.
    fn eval_cost(&self, q: &QueryExpr, bound: &BTreeSet<String>) -> Result<Rational> {
        let p = Poly::from_query(q)?.simplify(bound);
        let e = self.poly(&p, bound)?;
        let out: Vec<String> = p
            .out
            .iter()
            .filter(|v| !bound.contains(*v))
            .cloned()
            .collect();
        let mut total = dom(&e, &out);
        for m in &p.monos {
            let me = self.mono(m, bound)?;
            total += me.card.clone().max(Rational::one());
            for f in &m.factors {
                for n in f.nested_aggs() {
                    // evaluated once per enumerated tuple
                    total += me.card.clone().max(Rational::one()) * self.eval_cost(n, bound)?;
                }
            }
        }
        Ok(total)
    }
}

fn dom(e: &Est, cols: &[String]) -> Rational {
    if cols.is_empty() {
        return Rational::one();
    }
    let mut prod = Rational::one();
    for c in cols {
        prod *= e
            .distinct
            .get(c)
            .cloned()
            .unwrap_or_else(|| e.card.clone())
            .max(Rational::one());
    }
    prod.min(e.card.clone().max(Rational::one()))
}

fn selectivity(c: &Condition, distinct: &HashMap<String, Rational>) -> Rational {
    let third = crate::value::ratio(1, 3);
    match c {
        Condition::True => Rational::one(),
        Condition::False => Rational::zero(),
        Condition::Cmp(a, CmpOp::Eq, b) => {
            let d = |t: &Term| match t {
                Term::Var(v) => distinct.get(v).cloned(),
                _ => None,
            };
            match (d(a), d(b)) {
                (Some(x), Some(y)) => Rational::one() / x.max(y).max(Rational::one()),
                (Some(x), None) | (None, Some(x)) => Rational::one() / x.max(Rational::one()),
                (None, None) => third,
            }
        }
        Condition::Cmp(..) => third,
        Condition::And(cs) => cs.iter().map(|c| selectivity(c, distinct)).product(),
        Condition::Or(cs) => {
            let mut miss = Rational::one();
            for c in cs {
                miss *= Rational::one() - selectivity(c, distinct);
            }
            Rational::one() - miss
        }
        Condition::Not(c) => Rational::one() - selectivity(c, distinct),
    }
}

/// Evaluation cost of `q` with the variables in `bound` supplied.
pub fn cost_e(
    q: &QueryExpr,
    bound: &BTreeSet<String>,
    stats: &Statistics,
    views: &ViewDefs,
) -> Result<Rational> {
    Estimator { stats, views }.eval_cost(q, bound)
}

/// Maintenance cost of a view given the right-hand sides that maintain it,
/// as `(relation, statement rhs, bound variables)` triples. A view already
/// maintained elsewhere costs nothing.
pub fn cost_m(
    maintenance: &[(String, QueryExpr, BTreeSet<String>)],
    already_materialized: bool,
    stats: &Statistics,
    views: &ViewDefs,
) -> Result<Rational> {
    if already_materialized {
        return Ok(Rational::zero());
    }
    let mut total = Rational::zero();
    for (rel, rhs, bound) in maintenance {
        total += stats.rel(rel)?.rate.clone() * cost_e(rhs, bound, stats, views)?;
    }
    Ok(total)
}

/// Total cost of a decision.
#[derive(Clone, Debug, PartialEq)]
pub struct CostEstimate {
    pub eval_cost: Rational,
    pub maint_cost: Rational,
    pub total: Rational,
    pub domain_sizes: BTreeMap<String, Rational>,
}

/// `rate_refresh · eval + Σ maint`.
pub fn cost(eval_cost: Rational, maint_costs: &[Rational], stats: &Statistics) -> CostEstimate {
    let maint_cost: Rational = maint_costs.iter().cloned().sum();
    let total = stats.rate_refresh() * eval_cost.clone() + maint_cost.clone();
    CostEstimate {
        eval_cost,
        maint_cost,
        total,
        domain_sizes: BTreeMap::new(),
    }
}

/// Cost of a standalone decision: refreshing evaluates the residual, and each
/// view is maintained by its first-order deltas.
pub fn decision_cost(d: &MaterializationDecision, stats: &Statistics) -> Result<CostEstimate> {
    let views: ViewDefs = d.views.iter().cloned().collect();
    let inputs = d.residual.input_vars();
    let eval = cost_e(&d.residual, &inputs, stats, &views)?;
    let mut maint = Vec::new();
    let mut sizes = BTreeMap::new();
    for (name, def) in &d.views {
        let mut rows = Vec::new();
        for rel in def.relations() {
            let arity = stats.rel(&rel)?.columns.len().max(arity_of(def, &rel));
            let params: Vec<String> = (0..arity).map(|i| format!("\u{3}p{}", i)).collect();
            let refs: Vec<&str> = params.iter().map(String::as_str).collect();
            let ev = crate::delta::Event::new(&rel, crate::delta::Sign::Insert, &refs);
            let dq = crate::delta::delta(def, &ev)?;
            rows.push((rel.clone(), dq, ev.param_set()));
        }
        maint.push(cost_m(&rows, false, stats, &views)?);
        let e = Estimator {
            stats,
            views: &views,
        }
        .query(def, &BTreeSet::new())?;
        sizes.insert(name.clone(), dom(&e, &def.schema()?));
    }
    let mut c = cost(eval, &maint, stats);
    c.domain_sizes = sizes;
    Ok(c)
}

fn arity_of(q: &QueryExpr, rel: &str) -> usize {
    let mut n = 0;
    fn walk(q: &QueryExpr, rel: &str, n: &mut usize) {
        match q {
            QueryExpr::Relation { name, vars } if name == rel => *n = vars.len(),
            QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => {
                walk(a, rel, n);
                walk(b, rel, n);
            }
            QueryExpr::Select { cond, child } => {
                for x in cond.nested_aggs() {
                    walk(x, rel, n);
                }
                walk(child, rel, n);
            }
            QueryExpr::SumAgg { f, child, .. } => {
                let mut qs = Vec::new();
                f.nested_aggs(&mut qs);
                for x in qs {
                    walk(x, rel, n);
                }
                walk(child, rel, n);
            }
            QueryExpr::Rename { child, .. } => walk(child, rel, n),
            _ => {}
        }
    }
    walk(q, rel, &mut n);
    n
}

/// Constant queries cost one.
pub fn unit() -> Rational {
    rat(1)
}
