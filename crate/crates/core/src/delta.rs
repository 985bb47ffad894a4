//! Delta queries for single-tuple updates.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fmt;

use crate::ast::{CmpOp, Condition, QueryExpr, Term};
use crate::error::Result;
use crate::poly::{Factor, Poly};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Insert,
    Delete,
}

impl Sign {
    pub fn mult(self) -> i64 {
        match self {
            Sign::Insert => 1,
            Sign::Delete => -1,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Insert => '+',
            Sign::Delete => '-',
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Sign::Insert => "insert",
            Sign::Delete => "delete",
        }
    }
}

/// A single-tuple update event `±R(params)`; the parameters are variables
/// bound to the tuple's fields when a trigger fires.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub relation: String,
    pub sign: Sign,
    pub params: Vec<String>,
}

impl Event {
    pub fn new(relation: &str, sign: Sign, params: &[&str]) -> Self {
        Event {
            relation: relation.to_string(),
            sign,
            params: params.iter().map(|p| p.to_string()).collect(),
        }
    }

    pub fn param_set(&self) -> BTreeSet<String> {
        self.params.iter().cloned().collect()
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}({})",
            self.sign.symbol(),
            self.relation,
            self.params.join(", ")
        )
    }
}

fn zero_like(q: &QueryExpr) -> Result<QueryExpr> {
    Ok(QueryExpr::Singleton {
        columns: q.schema()?.into_iter().map(|c| (c, Term::num(0))).collect(),
        mult: Term::num(0),
    })
}

fn union_terms(parts: Vec<QueryExpr>, like: &QueryExpr) -> Result<QueryExpr> {
    let parts: Vec<QueryExpr> = parts
        .into_iter()
        .filter(|p| !p.is_zero_constant())
        .collect();
    match QueryExpr::union_all(parts) {
        Some(q) => Ok(q),
        None => zero_like(like),
    }
}

fn is_zero(q: &QueryExpr) -> bool {
    q.is_zero_constant()
}

/// `Δ_event q`, unsimplified.
pub fn delta(q: &QueryExpr, ev: &Event) -> Result<QueryExpr> {
    delta_in(q, ev, &BTreeSet::new(), &Ctx::default())
}

#[derive(Default)]
struct Ctx {
    drop_corrections: bool,
    saw_correction: Cell<bool>,
}

/// The delta without the correction terms that re-evaluate a nested
/// aggregate's condition over the old and new states, and whether any such
/// term was present.
pub fn delta_without_corrections(q: &QueryExpr, ev: &Event) -> Result<(QueryExpr, bool)> {
    let ctx = Ctx {
        drop_corrections: true,
        saw_correction: Cell::new(false),
    };
    let d = delta_in(q, ev, &BTreeSet::new(), &ctx)?;
    Ok((d, ctx.saw_correction.get()))
}

/// True when every place where `q` compares or weights by a nested aggregate
/// over the event's relation has a non-empty range restriction, so the delta
/// only revisits the tuples the event can affect.
pub fn nested_deltas_restricted(q: &QueryExpr, ev: &Event) -> Result<bool> {
    restricted_in(q, ev, &BTreeSet::new())
}

fn restricted_in(q: &QueryExpr, ev: &Event, scope: &BTreeSet<String>) -> Result<bool> {
    Ok(match q {
        QueryExpr::Relation { .. } | QueryExpr::View { .. } | QueryExpr::Singleton { .. } => true,
        QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => {
            restricted_in(a, ev, scope)? && restricted_in(b, ev, scope)?
        }
        QueryExpr::Rename { child, .. } => restricted_in(child, ev, scope)?,
        QueryExpr::Select { cond, child } => {
            let mut inner = scope.clone();
            inner.extend(child.schema()?);
            let nested = cond.nested_aggs();
            let here = !nested.iter().any(|n| n.relations().contains(&ev.relation))
                || !range_restriction(&nested, ev, &inner)?.is_empty();
            here && restricted_in(child, ev, scope)?
        }
        QueryExpr::SumAgg { f, child, .. } => {
            let mut inner = scope.clone();
            inner.extend(child.schema()?);
            let mut nested = Vec::new();
            f.nested_aggs(&mut nested);
            let here = !nested.iter().any(|n| n.relations().contains(&ev.relation))
                || !range_restriction(&nested, ev, &inner)?.is_empty();
            here && restricted_in(child, ev, &inner)?
        }
    })
}

/// Replace every nested aggregate over the event's relation by `N + ΔN`.
fn shift_term(t: &Term, ev: &Event, scope: &BTreeSet<String>, ctx: &Ctx) -> Result<Term> {
    Ok(match t {
        Term::Const(_) | Term::Var(_) => t.clone(),
        Term::Add(a, b) => Term::add(
            shift_term(a, ev, scope, ctx)?,
            shift_term(b, ev, scope, ctx)?,
        ),
        Term::Sub(a, b) => Term::sub(
            shift_term(a, ev, scope, ctx)?,
            shift_term(b, ev, scope, ctx)?,
        ),
        Term::Mul(a, b) => Term::mul(
            shift_term(a, ev, scope, ctx)?,
            shift_term(b, ev, scope, ctx)?,
        ),
        Term::Div(a, b) => Term::div(
            shift_term(a, ev, scope, ctx)?,
            shift_term(b, ev, scope, ctx)?,
        ),
        Term::Neg(a) => Term::Neg(Box::new(shift_term(a, ev, scope, ctx)?)),
        Term::Agg(n) => {
            if n.relations().contains(&ev.relation) {
                let dn = delta_in(n, ev, scope, ctx)?;
                Term::add(t.clone(), Term::agg(dn))
            } else {
                t.clone()
            }
        }
    })
}

fn shift_cond(c: &Condition, ev: &Event, scope: &BTreeSet<String>, ctx: &Ctx) -> Result<Condition> {
    let mut err = None;
    let out = c.map_terms(&mut |t| match shift_term(t, ev, scope, ctx) {
        Ok(x) => x,
        Err(e) => {
            err = Some(e);
            t.clone()
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn term_mentions(t: &Term, rel: &str) -> bool {
    let mut qs = Vec::new();
    t.nested_aggs(&mut qs);
    qs.iter().any(|q| q.relations().contains(rel))
}

/// Equalities `v = p` (outer variable, trigger parameter) implied by every
/// monomial of the simplified deltas of the nested aggregates in `c`.
pub fn range_restriction(
    nested: &[&QueryExpr],
    ev: &Event,
    scope: &BTreeSet<String>,
) -> Result<Vec<(String, String)>> {
    let params = ev.param_set();
    let mut bound = scope.clone();
    bound.extend(params.iter().cloned());
    let mut common: Option<BTreeSet<(String, String)>> = None;
    for n in nested {
        if !n.relations().contains(&ev.relation) {
            continue;
        }
        let dn = Poly::from_query(&delta_in(n, ev, scope, &Ctx::default())?)?.simplify(&bound);
        for m in &dn.monos {
            let mut pairs = BTreeSet::new();
            for f in &m.factors {
                if let Factor::Cond(Condition::Cmp(Term::Var(a), CmpOp::Eq, Term::Var(b))) = f {
                    if scope.contains(a) && !params.contains(a) && params.contains(b) {
                        pairs.insert((a.clone(), b.clone()));
                    } else if scope.contains(b) && !params.contains(b) && params.contains(a) {
                        pairs.insert((b.clone(), a.clone()));
                    }
                }
            }
            common = Some(match common {
                None => pairs,
                Some(c) => c.intersection(&pairs).cloned().collect(),
            });
        }
    }
    Ok(common.unwrap_or_default().into_iter().collect())
}

fn restrict(q: QueryExpr, pairs: &[(String, String)]) -> QueryExpr {
    if pairs.is_empty() {
        return q;
    }
    let conds = pairs
        .iter()
        .map(|(v, p)| Condition::eq(Term::var(v), Term::var(p)))
        .collect();
    QueryExpr::select(Condition::and(conds), q)
}

fn delta_in(q: &QueryExpr, ev: &Event, scope: &BTreeSet<String>, ctx: &Ctx) -> Result<QueryExpr> {
    match q {
        QueryExpr::Relation { name, vars } => {
            if name == &ev.relation {
                if vars.len() != ev.params.len() {
                    return Err(crate::Error::Structural(format!(
                        "relation {} has arity {} but the event has {} fields",
                        name,
                        vars.len(),
                        ev.params.len()
                    )));
                }
                let mut columns: Vec<(String, Term)> = Vec::new();
                let mut same = Vec::new();
                for (v, p) in vars.iter().zip(&ev.params) {
                    match columns.iter().find(|(c, _)| c == v) {
                        Some((_, t)) => {
                            same.push(Condition::Cmp(t.clone(), CmpOp::Eq, Term::var(p)))
                        }
                        None => columns.push((v.clone(), Term::var(p))),
                    }
                }
                let single = QueryExpr::Singleton {
                    columns,
                    mult: Term::num(ev.sign.mult()),
                };
                Ok(if same.is_empty() {
                    single
                } else {
                    QueryExpr::Select {
                        cond: Condition::and(same),
                        child: Box::new(single),
                    }
                })
            } else {
                zero_like(q)
            }
        }
        QueryExpr::View { .. } => zero_like(q),
        QueryExpr::Singleton { columns, mult } => {
            let hit = term_mentions(mult, &ev.relation)
                || columns.iter().any(|(_, t)| term_mentions(t, &ev.relation));
            if !hit {
                return zero_like(q);
            }
            let shifted = QueryExpr::Singleton {
                columns: columns
                    .iter()
                    .map(|(c, t)| Ok((c.clone(), shift_term(t, ev, scope, ctx)?)))
                    .collect::<Result<_>>()?,
                mult: shift_term(mult, ev, scope, ctx)?,
            };
            Ok(QueryExpr::union(shifted, QueryExpr::negate(q.clone())))
        }
        QueryExpr::Join(a, b) => {
            let mut sa = scope.clone();
            sa.extend(b.schema()?);
            let mut sb = scope.clone();
            sb.extend(a.schema()?);
            let da = delta_in(a, ev, &sa, ctx)?;
            let db = delta_in(b, ev, &sb, ctx)?;
            let mut parts = Vec::new();
            if !is_zero(&da) {
                parts.push(QueryExpr::join(da.clone(), (**b).clone()));
            }
            if !is_zero(&db) {
                parts.push(QueryExpr::join((**a).clone(), db.clone()));
            }
            if !is_zero(&da) && !is_zero(&db) {
                parts.push(QueryExpr::join(da, db));
            }
            union_terms(parts, q)
        }
        QueryExpr::Union(a, b) => {
            let parts = vec![delta_in(a, ev, scope, ctx)?, delta_in(b, ev, scope, ctx)?];
            union_terms(parts, q)
        }
        QueryExpr::Select { cond, child } => {
            let dchild = delta_in(child, ev, scope, ctx)?;
            let nested = cond.nested_aggs();
            if !nested.iter().any(|n| n.relations().contains(&ev.relation)) {
                if is_zero(&dchild) {
                    return zero_like(q);
                }
                return Ok(QueryExpr::select(cond.clone(), dchild));
            }
            let mut inner = scope.clone();
            inner.extend(child.schema()?);
            let shifted = shift_cond(cond, ev, &inner, ctx)?;
            let pairs = range_restriction(&nested, ev, &inner)?;
            let mut parts = Vec::new();
            if !is_zero(&dchild) {
                parts.push(QueryExpr::select(shifted.clone(), dchild));
            }
            ctx.saw_correction.set(true);
            if !ctx.drop_corrections {
                let bracket = QueryExpr::union(
                    QueryExpr::select(shifted, (**child).clone()),
                    QueryExpr::negate(QueryExpr::select(cond.clone(), (**child).clone())),
                );
                parts.push(restrict(bracket, &pairs));
            }
            union_terms(parts, q)
        }
        QueryExpr::SumAgg { group_by, f, child } => {
            let mut inner = scope.clone();
            inner.extend(child.schema()?);
            let dchild = delta_in(child, ev, &inner, ctx)?;
            if !term_mentions(f, &ev.relation) {
                if is_zero(&dchild) {
                    return zero_like(q);
                }
                return Ok(QueryExpr::SumAgg {
                    group_by: group_by.clone(),
                    f: f.clone(),
                    child: Box::new(dchild),
                });
            }
            let shifted = shift_term(f, ev, &inner, ctx)?;
            let mut nested = Vec::new();
            f.nested_aggs(&mut nested);
            let pairs = range_restriction(&nested, ev, &inner)?;
            let mut parts = Vec::new();
            if !is_zero(&dchild) {
                parts.push(QueryExpr::SumAgg {
                    group_by: group_by.clone(),
                    f: shifted.clone(),
                    child: Box::new(dchild),
                });
            }
            ctx.saw_correction.set(true);
            if !ctx.drop_corrections {
                parts.push(QueryExpr::SumAgg {
                    group_by: group_by.clone(),
                    f: Term::sub(shifted, f.clone()),
                    child: Box::new(restrict((**child).clone(), &pairs)),
                });
            }
            union_terms(parts, q)
        }
        QueryExpr::Rename { mapping, child } => {
            let d = delta_in(child, ev, scope, ctx)?;
            if is_zero(&d) {
                return zero_like(q);
            }
            Ok(QueryExpr::Rename {
                mapping: mapping.clone(),
                child: Box::new(d),
            })
        }
    }
}

/// Algebraic simplification of `q` given externally bound variables.
pub fn simplify(q: &QueryExpr, bound: &BTreeSet<String>) -> Result<QueryExpr> {
    Ok(Poly::from_query(q)?.simplify(bound).to_query())
}

/// Simplified delta in normal form.
pub fn delta_poly(q: &QueryExpr, ev: &Event, bound: &BTreeSet<String>) -> Result<Poly> {
    let mut b = bound.clone();
    b.extend(ev.params.iter().cloned());
    Ok(Poly::from_query(&delta(q, ev)?)?.simplify(&b))
}

/// Polynomial degree: the largest number of relation atoms multiplied together
/// outside of nested aggregates.
pub fn degree(q: &QueryExpr) -> Result<usize> {
    Ok(Poly::from_query(q)?.degree())
}

/// True when a nested aggregate of `q` reads `rel`, so that its delta for
/// `rel` is not simpler than `q` itself.
pub fn has_nonzero_nested_delta(q: &QueryExpr, rel: &str) -> bool {
    q.has_nested_over(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::structural_equal;
    use crate::ast::vtq::parse_query;

    fn q(s: &str) -> QueryExpr {
        parse_query(s).unwrap()
    }

    #[test]
    fn delta_of_a_join_with_a_key_lookup() {
        // Δ_{+R(x,y)} Sum(A*D; R(A,B) ⋈ S(C,D) with B=C) = Sum(x*D; S(y,D))
        let query = q("(sum () (* A D) (select (= B C) (join (rel R A B) (rel S C D))))");
        let ev = Event::new("R", Sign::Insert, &["x", "y"]);
        let d = delta_poly(&query, &ev, &BTreeSet::new())
            .unwrap()
            .to_query();
        assert!(
            structural_equal(&d, &q("(sum () (* x D) (rel S y D))")),
            "{}",
            d
        );
    }

    #[test]
    fn delta_lowers_degree() {
        let query = q("(sum () 1 (join (join (rel R A) (rel S A B)) (rel T B)))");
        assert_eq!(degree(&query).unwrap(), 3);
        let ev = Event::new("S", Sign::Delete, &["a", "b"]);
        let d = delta_poly(&query, &ev, &BTreeSet::new()).unwrap();
        assert_eq!(d.degree(), 2);
        let d2 = delta_poly(
            &d.to_query(),
            &Event::new("R", Sign::Insert, &["c"]),
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(d2.degree(), 1);
    }

    #[test]
    fn second_deltas_commute() {
        let query = q("(sum () 1 (join (rel R A) (rel S A)))");
        let er = Event::new("R", Sign::Insert, &["x"]);
        let es = Event::new("S", Sign::Insert, &["y"]);
        let rs = delta_poly(
            &delta_poly(&query, &er, &BTreeSet::new())
                .unwrap()
                .to_query(),
            &es,
            &er.param_set(),
        )
        .unwrap()
        .to_query();
        let sr = delta_poly(
            &delta_poly(&query, &es, &BTreeSet::new())
                .unwrap()
                .to_query(),
            &er,
            &es.param_set(),
        )
        .unwrap()
        .to_query();
        assert!(structural_equal(&rs, &sr), "{} vs {}", rs, sr);
    }

    #[test]
    fn nested_delta_is_range_restricted() {
        let query = q(
            "(sum (CK) QTY (select (< 100 (agg (sum () QTY2 (rel LI OK QTY2)))) (join (rel O CK OK) (rel LI OK QTY))))",
        );
        let ev = Event::new("LI", Sign::Insert, &["ok", "qty"]);
        assert!(has_nonzero_nested_delta(&query, "LI"));
        assert!(!has_nonzero_nested_delta(&query, "O"));
        let raw = delta(&query, &ev).unwrap();
        assert!(raw.to_string().contains("(= OK ok)"), "{}", raw);
        let d = delta_poly(&query, &ev, &BTreeSet::new()).unwrap();
        // every monomial reads O at the updated order key
        for m in &d.monos {
            assert!(
                m.factors.iter().any(
                    |f| matches!(f, Factor::Rel { name, vars } if name == "O" && vars[1] == "ok")
                ),
                "{:?}",
                d
            );
        }
    }

    #[test]
    fn deltas_of_other_relations_vanish() {
        let query = q("(sum () A (rel R A))");
        let d = delta_poly(
            &query,
            &Event::new("S", Sign::Insert, &["x"]),
            &BTreeSet::new(),
        )
        .unwrap();
        assert!(d.is_zero());
    }
}
