//! Sum-of-products normal form used by the compiler.
//!
//! A [`Poly`] denotes `Sum_{out}(m1 + m2 + ...)` where every monomial is a
//! coefficient times a product of factors: relation atoms, view reads,
//! single-column singletons (`Lift`), conditions (0/1 valued) and scalar values.
//! Variables projected away by a monomial are private to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{One, Zero};

use crate::ast::{CmpOp, Condition, QueryExpr, Term};
use crate::error::{Error, Result};
use crate::value::{fmt_rational, Rational, Value};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Factor {
    Rel {
        name: String,
        vars: Vec<String>,
    },
    View {
        name: String,
        keys: Vec<String>,
    },
    /// `{var: term |-> 1}`.
    Lift {
        var: String,
        term: Term,
    },
    Cond(Condition),
    Val(Term),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mono {
    pub coef: Rational,
    pub factors: Vec<Factor>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Poly {
    pub out: Vec<String>,
    pub monos: Vec<Mono>,
}

// ---------------------------------------------------------------------------
// variable helpers
// ---------------------------------------------------------------------------

fn term_vars(t: &Term, out: &mut BTreeSet<String>) {
    match t {
        Term::Const(_) => {}
        Term::Var(x) => {
            out.insert(x.clone());
        }
        Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
            term_vars(a, out);
            term_vars(b, out);
        }
        Term::Neg(a) => term_vars(a, out),
        Term::Agg(q) => out.extend(q.all_vars()),
    }
}

fn cond_vars(c: &Condition, out: &mut BTreeSet<String>) {
    c.visit_terms(&mut |t| term_vars(t, out));
}

/// Replace `Var(from)` by `to` in a term; nested aggregates only accept variable targets.
fn subst_term(t: &Term, from: &str, to: &Term) -> Option<Term> {
    Some(match t {
        Term::Const(v) => Term::Const(v.clone()),
        Term::Var(x) if x == from => to.clone(),
        Term::Var(x) => Term::Var(x.clone()),
        Term::Add(a, b) => Term::add(subst_term(a, from, to)?, subst_term(b, from, to)?),
        Term::Sub(a, b) => Term::sub(subst_term(a, from, to)?, subst_term(b, from, to)?),
        Term::Mul(a, b) => Term::mul(subst_term(a, from, to)?, subst_term(b, from, to)?),
        Term::Div(a, b) => Term::div(subst_term(a, from, to)?, subst_term(b, from, to)?),
        Term::Neg(a) => Term::Neg(Box::new(subst_term(a, from, to)?)),
        Term::Agg(q) => {
            if !q.all_vars().contains(from) {
                Term::Agg(q.clone())
            } else if let Term::Var(target) = to {
                Term::agg(q.map_vars(&|v| {
                    if v == from {
                        target.clone()
                    } else {
                        v.to_string()
                    }
                }))
            } else {
                return None;
            }
        }
    })
}

fn subst_cond(c: &Condition, from: &str, to: &Term) -> Option<Condition> {
    let mut ok = true;
    let out = c.map_terms(&mut |t| match subst_term(t, from, to) {
        Some(t) => t,
        None => {
            ok = false;
            t.clone()
        }
    });
    ok.then_some(out)
}

/// Pick `base`, or `base_1`, `base_2`, ... avoiding `used`.
pub fn fresh_name(base: &str, used: &BTreeSet<String>) -> String {
    if !used.contains(base) {
        return base.to_string();
    }
    (1..)
        .map(|i| format!("{}_{}", base, i))
        .find(|c| !used.contains(c))
        .unwrap()
}

impl Factor {
    /// Variables bound (range-restricted) by this factor.
    pub fn binds(&self) -> Vec<&str> {
        match self {
            Factor::Rel { vars, .. } => vars.iter().map(String::as_str).collect(),
            Factor::View { keys, .. } => keys.iter().map(String::as_str).collect(),
            Factor::Lift { var, .. } => vec![var.as_str()],
            Factor::Cond(_) | Factor::Val(_) => vec![],
        }
    }

    /// Variables read by terms of this factor, including every variable mentioned
    /// inside nested aggregates (correlation is by name).
    pub fn refs(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        match self {
            Factor::Rel { .. } | Factor::View { .. } => {}
            Factor::Lift { term, .. } => term_vars(term, &mut out),
            Factor::Cond(c) => cond_vars(c, &mut out),
            Factor::Val(t) => term_vars(t, &mut out),
        }
        out
    }

    pub fn mentions(&self) -> BTreeSet<String> {
        let mut out = self.refs();
        out.extend(self.binds().into_iter().map(str::to_string));
        out
    }

    pub fn is_binder(&self) -> bool {
        matches!(
            self,
            Factor::Rel { .. } | Factor::View { .. } | Factor::Lift { .. }
        )
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Factor::Rel { .. } | Factor::View { .. })
    }

    pub fn has_nested(&self) -> bool {
        match self {
            Factor::Rel { .. } | Factor::View { .. } => false,
            Factor::Lift { term, .. } | Factor::Val(term) => term.has_nested(),
            Factor::Cond(c) => c.has_nested(),
        }
    }

    pub fn nested_aggs(&self) -> Vec<&QueryExpr> {
        let mut out = Vec::new();
        match self {
            Factor::Rel { .. } | Factor::View { .. } => {}
            Factor::Lift { term, .. } | Factor::Val(term) => term.nested_aggs(&mut out),
            Factor::Cond(c) => out = c.nested_aggs(),
        }
        out
    }

    /// Relations read by this factor, including through nested aggregates.
    pub fn relations(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let Factor::Rel { name, .. } = self {
            out.insert(name.clone());
        }
        for q in self.nested_aggs() {
            out.extend(q.relations());
        }
        out
    }

    pub fn rename(&self, from: &str, to: &str) -> Factor {
        let r = |v: &String| if v == from { to.to_string() } else { v.clone() };
        let tt = Term::Var(to.to_string());
        match self {
            Factor::Rel { name, vars } => Factor::Rel {
                name: name.clone(),
                vars: vars.iter().map(r).collect(),
            },
            Factor::View { name, keys } => Factor::View {
                name: name.clone(),
                keys: keys.iter().map(r).collect(),
            },
            Factor::Lift { var, term } => Factor::Lift {
                var: r(var),
                term: subst_term(term, from, &tt).unwrap(),
            },
            Factor::Cond(c) => Factor::Cond(subst_cond(c, from, &tt).unwrap()),
            Factor::Val(t) => Factor::Val(subst_term(t, from, &tt).unwrap()),
        }
    }

    /// Substitute a term for a variable; `None` if the variable sits in a binding
    /// position or inside a nested aggregate and the term is not a variable.
    pub fn subst(&self, from: &str, to: &Term) -> Option<Factor> {
        if let Term::Var(v) = to {
            return Some(self.rename(from, v));
        }
        if self.binds().contains(&from) {
            return None;
        }
        Some(match self {
            Factor::Rel { .. } | Factor::View { .. } => self.clone(),
            Factor::Lift { var, term } => Factor::Lift {
                var: var.clone(),
                term: subst_term(term, from, to)?,
            },
            Factor::Cond(c) => Factor::Cond(subst_cond(c, from, to)?),
            Factor::Val(t) => Factor::Val(subst_term(t, from, to)?),
        })
    }

    pub fn to_query(&self) -> QueryExpr {
        match self {
            Factor::Rel { name, vars } => QueryExpr::Relation {
                name: name.clone(),
                vars: vars.clone(),
            },
            Factor::View { name, keys } => QueryExpr::View {
                name: name.clone(),
                keys: keys.clone(),
            },
            Factor::Lift { var, term } => QueryExpr::Singleton {
                columns: vec![(var.clone(), term.clone())],
                mult: Term::one(),
            },
            Factor::Cond(c) => QueryExpr::select(c.clone(), QueryExpr::one()),
            Factor::Val(t) => QueryExpr::Singleton {
                columns: vec![],
                mult: t.clone(),
            },
        }
    }

    /// Rewrite view references in this factor and in its nested aggregates.
    pub fn map_views(&self, f: &dyn Fn(&str, &[String]) -> (String, Vec<String>)) -> Factor {
        match self {
            Factor::View { name, keys } => {
                let (name, keys) = f(name, keys);
                Factor::View { name, keys }
            }
            other => other.map_nested(&mut |q| Term::agg(q.map_views(f))),
        }
    }

    /// Replace each nested aggregate by a term computed from it.
    pub fn replace_nested(&self, f: &mut dyn FnMut(&QueryExpr) -> Term) -> Factor {
        self.map_nested(f)
    }

    fn map_nested(&self, f: &mut dyn FnMut(&QueryExpr) -> Term) -> Factor {
        fn go(t: &Term, f: &mut dyn FnMut(&QueryExpr) -> Term) -> Term {
            match t {
                Term::Const(_) | Term::Var(_) => t.clone(),
                Term::Add(a, b) => Term::add(go(a, f), go(b, f)),
                Term::Sub(a, b) => Term::sub(go(a, f), go(b, f)),
                Term::Mul(a, b) => Term::mul(go(a, f), go(b, f)),
                Term::Div(a, b) => Term::div(go(a, f), go(b, f)),
                Term::Neg(a) => Term::Neg(Box::new(go(a, f))),
                Term::Agg(q) => f(q),
            }
        }
        match self {
            Factor::Rel { .. } | Factor::View { .. } => self.clone(),
            Factor::Lift { var, term } => Factor::Lift {
                var: var.clone(),
                term: go(term, f),
            },
            Factor::Cond(c) => Factor::Cond(c.map_terms(&mut |t| go(t, f))),
            Factor::Val(t) => Factor::Val(go(t, f)),
        }
    }
}

impl Mono {
    pub fn new(factors: Vec<Factor>) -> Self {
        Mono {
            coef: Rational::one(),
            factors,
        }
    }

    pub fn mentions(&self) -> BTreeSet<String> {
        self.factors.iter().flat_map(|f| f.mentions()).collect()
    }

    pub fn bound_here(&self) -> BTreeSet<String> {
        self.factors
            .iter()
            .flat_map(|f| f.binds().into_iter().map(str::to_string))
            .collect()
    }

    pub fn relations(&self) -> BTreeSet<String> {
        self.factors.iter().flat_map(|f| f.relations()).collect()
    }

    /// Number of relation atoms multiplied together (nested aggregates excluded).
    pub fn degree(&self) -> usize {
        self.factors
            .iter()
            .filter(|f| matches!(f, Factor::Rel { .. }))
            .count()
    }

    pub fn rename(&self, from: &str, to: &str) -> Mono {
        Mono {
            coef: self.coef.clone(),
            factors: self.factors.iter().map(|f| f.rename(from, to)).collect(),
        }
    }

    fn product(&self, other: &Mono) -> Mono {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        Mono {
            coef: &self.coef * &other.coef,
            factors,
        }
    }

    fn sort(&mut self) {
        self.factors
            .sort_by(|a, b| factor_rank(a).cmp(&factor_rank(b)).then_with(|| a.cmp(b)));
        self.factors
            .dedup_by(|a, b| matches!((a, b), (Factor::Cond(x), Factor::Cond(y)) if x == y));
    }
}

fn factor_rank(f: &Factor) -> u8 {
    match f {
        Factor::Lift { .. } => 0,
        Factor::View { .. } => 1,
        Factor::Rel { .. } => 2,
        Factor::Val(_) => 3,
        Factor::Cond(_) => 4,
    }
}

// ---------------------------------------------------------------------------
// conversions
// ---------------------------------------------------------------------------

impl Poly {
    pub fn zero(out: Vec<String>) -> Self {
        Poly { out, monos: vec![] }
    }

    pub fn constant(c: Rational) -> Self {
        Poly {
            out: vec![],
            monos: if c.is_zero() {
                vec![]
            } else {
                vec![Mono {
                    coef: c,
                    factors: vec![],
                }]
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        self.monos.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.monos.iter().map(Mono::degree).max().unwrap_or(0)
    }

    pub fn relations(&self) -> BTreeSet<String> {
        self.monos.iter().flat_map(|m| m.relations()).collect()
    }

    pub fn has_nested(&self) -> bool {
        self.monos
            .iter()
            .any(|m| m.factors.iter().any(Factor::has_nested))
    }

    pub fn mentions(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.out.iter().cloned().collect();
        for m in &self.monos {
            out.extend(m.mentions());
        }
        out
    }

    pub fn from_query(q: &QueryExpr) -> Result<Poly> {
        Ok(match q {
            QueryExpr::Relation { name, vars } => Poly {
                out: q.schema()?,
                monos: vec![Mono::new(vec![Factor::Rel {
                    name: name.clone(),
                    vars: vars.clone(),
                }])],
            },
            QueryExpr::View { name, keys } => Poly {
                out: q.schema()?,
                monos: vec![Mono::new(vec![Factor::View {
                    name: name.clone(),
                    keys: keys.clone(),
                }])],
            },
            QueryExpr::Singleton { columns, mult } => {
                let mut factors: Vec<Factor> = columns
                    .iter()
                    .map(|(c, t)| Factor::Lift {
                        var: c.clone(),
                        term: t.clone(),
                    })
                    .collect();
                factors.push(Factor::Val(mult.clone()));
                Poly {
                    out: q.schema()?,
                    monos: vec![Mono::new(factors)],
                }
            }
            QueryExpr::Join(a, b) => {
                let pa = Poly::from_query(a)?;
                let pb = Poly::from_query(b)?;
                let mut out = pa.out.clone();
                for v in &pb.out {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
                let mut monos = Vec::new();
                for ma in &pa.monos {
                    for mb in &pb.monos {
                        monos.push(ma.product(mb));
                    }
                }
                Poly { out, monos }
            }
            QueryExpr::Union(a, b) => {
                let pa = Poly::from_query(a)?;
                let pb = Poly::from_query(b)?;
                q.schema()?;
                let mut monos = pa.monos;
                monos.extend(pb.monos);
                Poly { out: pa.out, monos }
            }
            QueryExpr::Select { cond, child } => {
                let mut p = Poly::from_query(child)?;
                for m in &mut p.monos {
                    m.factors.push(Factor::Cond(cond.clone()));
                }
                p
            }
            QueryExpr::SumAgg { group_by, f, child } => {
                let mut p = Poly::from_query(child)?;
                q.schema()?;
                for m in &mut p.monos {
                    m.factors.push(Factor::Val(f.clone()));
                }
                p.out = group_by.clone();
                p
            }
            QueryExpr::Rename { mapping, child } => {
                let p = Poly::from_query(child)?;
                q.schema()?;
                let targets: BTreeSet<String> = mapping.iter().map(|(_, t)| t.clone()).collect();
                let mut monos = Vec::new();
                for m in &p.monos {
                    let mut m = m.clone();
                    // move private variables out of the way of the new names
                    let mut used = m.mentions();
                    used.extend(p.out.iter().cloned());
                    used.extend(targets.iter().cloned());
                    for v in m.bound_here() {
                        if targets.contains(&v) && !p.out.contains(&v) {
                            let fresh = fresh_name(&v, &used);
                            used.insert(fresh.clone());
                            m = m.rename(&v, &fresh);
                        }
                    }
                    // two-step rename so that swaps work
                    for (i, (from, _)) in mapping.iter().enumerate() {
                        m = m.rename(from, &format!("\u{1}{}", i));
                    }
                    for (i, (_, to)) in mapping.iter().enumerate() {
                        m = m.rename(&format!("\u{1}{}", i), to);
                    }
                    monos.push(m);
                }
                Poly {
                    out: q.schema()?,
                    monos,
                }
            }
        })
    }

    /// Back to the algebra: a union of `Sum_{out}` per monomial, with the
    /// monomial split into independently aggregated connected components.
    pub fn to_query(&self) -> QueryExpr {
        let parts: Vec<QueryExpr> = self
            .monos
            .iter()
            .map(|m| mono_to_query(m, &self.out))
            .collect();
        QueryExpr::union_all(parts).unwrap_or_else(|| empty_query(&self.out))
    }

    /// Like [`Poly::to_query`] but without component splitting.
    pub fn to_query_flat(&self) -> QueryExpr {
        let parts: Vec<QueryExpr> = self
            .monos
            .iter()
            .map(|m| component_query(&m.factors, &self.out, &m.coef))
            .collect();
        QueryExpr::union_all(parts).unwrap_or_else(|| empty_query(&self.out))
    }
}

fn empty_query(out: &[String]) -> QueryExpr {
    QueryExpr::Singleton {
        columns: out.iter().map(|v| (v.clone(), Term::num(0))).collect(),
        mult: Term::num(0),
    }
}

fn component_query(factors: &[Factor], group: &[String], coef: &Rational) -> QueryExpr {
    let mut binders = Vec::new();
    let mut conds = Vec::new();
    let mut f = if coef.is_one() {
        None
    } else {
        Some(Term::rational(coef.clone()))
    };
    for fac in factors {
        match fac {
            Factor::Cond(c) => conds.push(c.clone()),
            Factor::Val(t) => {
                f = Some(match f {
                    None => t.clone(),
                    Some(acc) => Term::mul(acc, t.clone()),
                })
            }
            other => binders.push(other.to_query()),
        }
    }
    let mut child = QueryExpr::join_all(binders);
    if !conds.is_empty() {
        child = QueryExpr::select(Condition::and(conds), child);
    }
    QueryExpr::SumAgg {
        group_by: group.to_vec(),
        f: f.unwrap_or_else(Term::one),
        child: Box::new(child),
    }
}

/// Connected components of a monomial's factors, linked through variables that
/// are neither in `keep` nor otherwise externally visible.
pub fn components(factors: &[Factor], linking: &dyn Fn(&str) -> bool) -> Vec<Vec<usize>> {
    let n = factors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    for (i, f) in factors.iter().enumerate() {
        for v in f.mentions() {
            if !linking(&v) {
                continue;
            }
            match owner.get(&v) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
                None => {
                    owner.insert(v, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

fn mono_to_query(m: &Mono, out: &[String]) -> QueryExpr {
    let bound_here = m.bound_here();
    let out_set: BTreeSet<&str> = out.iter().map(String::as_str).collect();
    // private variables link factors; output and externally bound ones do not
    let comps = components(&m.factors, &|v| {
        bound_here.contains(v) && !out_set.contains(v)
    });
    if comps.len() <= 1 {
        return component_query(&m.factors, out, &m.coef);
    }
    let mut parts = Vec::new();
    for (ci, comp) in comps.iter().enumerate() {
        let facs: Vec<Factor> = comp.iter().map(|&i| m.factors[i].clone()).collect();
        let binds: BTreeSet<String> = facs
            .iter()
            .flat_map(|f| f.binds().into_iter().map(str::to_string))
            .collect();
        let group: Vec<String> = out.iter().filter(|v| binds.contains(*v)).cloned().collect();
        let coef = if ci == 0 {
            m.coef.clone()
        } else {
            Rational::one()
        };
        parts.push(component_query(&facs, &group, &coef));
    }
    // output variables not bound by any component stay as inputs of the outer sum
    QueryExpr::SumAgg {
        group_by: out.to_vec(),
        f: Term::one(),
        child: Box::new(QueryExpr::join_all(parts)),
    }
}

// ---------------------------------------------------------------------------
// simplification
// ---------------------------------------------------------------------------

/// Split products and constants inside value factors.
fn split_vals(m: &mut Mono) {
    let mut out = Vec::with_capacity(m.factors.len());
    let mut stack: Vec<Factor> = m.factors.drain(..).rev().collect();
    while let Some(f) = stack.pop() {
        match f {
            Factor::Val(Term::Mul(a, b)) => {
                stack.push(Factor::Val(*b));
                stack.push(Factor::Val(*a));
            }
            Factor::Val(Term::Neg(a)) => {
                m.coef = -m.coef.clone();
                stack.push(Factor::Val(*a));
            }
            Factor::Val(Term::Const(Value::Num(r))) => m.coef *= r,
            Factor::Cond(Condition::And(cs)) => {
                for c in cs.into_iter().rev() {
                    stack.push(Factor::Cond(c));
                }
            }
            Factor::Cond(Condition::True) => {}
            other => out.push(other),
        }
    }
    m.factors = out;
}

fn cond_is_false(c: &Condition) -> bool {
    matches!(c, Condition::False)
}

/// Constant-fold a condition that mentions no variables and no nested aggregates.
fn fold_cond(c: &Condition) -> Option<bool> {
    let mut vars = BTreeSet::new();
    cond_vars(c, &mut vars);
    if !vars.is_empty() || c.has_nested() {
        return None;
    }
    let empty = |_: &str| None;
    c.eval(&empty, &mut |_| Err(Error::Compile("nested".into())))
        .ok()
}

fn fold_term(t: &Term) -> Option<Value> {
    let mut vars = BTreeSet::new();
    term_vars(t, &mut vars);
    if !vars.is_empty() || t.has_nested() {
        return None;
    }
    let empty = |_: &str| None;
    t.eval(&empty, &mut |_| Err(Error::Compile("nested".into())))
        .ok()
}

impl Poly {
    /// Semantics-preserving cleanup given the externally bound variables:
    /// singleton inlining, equality propagation, constant folding, empty-product
    /// annihilation and merging of equal monomials.
    pub fn simplify(&self, bound: &BTreeSet<String>) -> Poly {
        let out_set: BTreeSet<String> = self.out.iter().cloned().collect();
        let mut monos: Vec<Mono> = Vec::new();
        for m in &self.monos {
            if let Some(m) = simplify_mono(m.clone(), &out_set, bound) {
                monos.push(m);
            }
        }
        Poly {
            out: self.out.clone(),
            monos: merge_monos(monos),
        }
    }

    /// Distribute sums inside value factors so that every value factor is a
    /// variable, a nested aggregate or an irreducible quotient.
    pub fn expand(&self) -> Poly {
        let mut monos = Vec::new();
        for m in &self.monos {
            expand_mono(m.clone(), &mut monos);
        }
        Poly {
            out: self.out.clone(),
            monos: merge_monos(monos),
        }
    }
}

fn expand_mono(mut m: Mono, acc: &mut Vec<Mono>) {
    split_vals(&mut m);
    let pos = m
        .factors
        .iter()
        .position(|f| matches!(f, Factor::Val(Term::Add(..)) | Factor::Val(Term::Sub(..))));
    match pos {
        None => acc.push(m),
        Some(i) => {
            let (a, b, neg) = match &m.factors[i] {
                Factor::Val(Term::Add(a, b)) => ((**a).clone(), (**b).clone(), false),
                Factor::Val(Term::Sub(a, b)) => ((**a).clone(), (**b).clone(), true),
                _ => unreachable!(),
            };
            let mut left = m.clone();
            left.factors[i] = Factor::Val(a);
            let mut right = m;
            right.factors[i] = Factor::Val(b);
            if neg {
                right.coef = -right.coef;
            }
            expand_mono(left, acc);
            expand_mono(right, acc);
        }
    }
}

pub(crate) fn merge_monos(monos: Vec<Mono>) -> Vec<Mono> {
    let mut acc: Vec<Mono> = Vec::new();
    let mut index: BTreeMap<Vec<Factor>, usize> = BTreeMap::new();
    for mut m in monos {
        m.sort();
        match index.get(&m.factors) {
            Some(&i) => acc[i].coef += m.coef,
            None => {
                index.insert(m.factors.clone(), acc.len());
                acc.push(m);
            }
        }
    }
    acc.retain(|m| !m.coef.is_zero());
    acc
}

fn simplify_nested(q: &QueryExpr, bound: &BTreeSet<String>) -> Term {
    let p = match Poly::from_query(q) {
        Ok(p) => p,
        Err(_) => return Term::agg(q.clone()),
    };
    let s = p.simplify(bound);
    if s.is_zero() {
        return Term::num(0);
    }
    if s.out.is_empty()
        && s.monos
            .iter()
            .all(|m| m.factors.iter().all(|f| matches!(f, Factor::Val(_))))
    {
        // purely scalar: inline as an arithmetic term
        let mut total: Option<Term> = None;
        for m in &s.monos {
            let mut t = Term::rational(m.coef.clone());
            for f in &m.factors {
                if let Factor::Val(v) = f {
                    t = if t.is_one() {
                        v.clone()
                    } else {
                        Term::mul(t, v.clone())
                    };
                }
            }
            total = Some(match total {
                None => t,
                Some(acc) => Term::add(acc, t),
            });
        }
        return total.unwrap();
    }
    Term::agg(s.to_query_flat())
}

fn simplify_mono(mut m: Mono, out: &BTreeSet<String>, bound: &BTreeSet<String>) -> Option<Mono> {
    for _round in 0..64 {
        split_vals(&mut m);
        if m.coef.is_zero() {
            return None;
        }
        if m.factors
            .iter()
            .any(|f| matches!(f, Factor::Cond(c) if cond_is_false(c)))
        {
            return None;
        }
        let mut changed = false;

        // nested aggregates see everything in scope here
        let mut scope = bound.clone();
        scope.extend(out.iter().cloned());
        scope.extend(m.bound_here());
        for i in 0..m.factors.len() {
            if m.factors[i].has_nested() {
                let nf = m.factors[i].map_nested(&mut |q| simplify_nested(q, &scope));
                if nf != m.factors[i] {
                    m.factors[i] = nf;
                    changed = true;
                }
            }
        }
        if changed {
            continue;
        }

        for i in 0..m.factors.len() {
            if let Some(action) = rewrite_step(&m, i, out, bound) {
                m = action;
                changed = true;
                break;
            }
        }
        if !changed {
            m.sort();
            return Some(m);
        }
    }
    m.sort();
    Some(m)
}

fn is_private(v: &str, out: &BTreeSet<String>, bound: &BTreeSet<String>) -> bool {
    !out.contains(v) && !bound.contains(v)
}

/// Apply `from -> to` to all factors except `skip`.
fn rename_others(m: &Mono, skip: usize, from: &str, to: &str) -> Mono {
    Mono {
        coef: m.coef.clone(),
        factors: m
            .factors
            .iter()
            .enumerate()
            .map(|(j, f)| {
                if j == skip {
                    f.clone()
                } else {
                    f.rename(from, to)
                }
            })
            .collect(),
    }
}

fn without(m: &Mono, idx: usize) -> Mono {
    let mut m = m.clone();
    m.factors.remove(idx);
    m
}

fn mentioned_elsewhere(m: &Mono, skip: usize, v: &str) -> bool {
    m.factors
        .iter()
        .enumerate()
        .any(|(j, f)| j != skip && f.mentions().contains(v))
}

fn rewrite_step(
    m: &Mono,
    i: usize,
    out: &BTreeSet<String>,
    bound: &BTreeSet<String>,
) -> Option<Mono> {
    match &m.factors[i] {
        Factor::Lift { var, term } => {
            if bound.contains(var) {
                let mut n = m.clone();
                n.factors[i] = Factor::Cond(Condition::eq(Term::Var(var.clone()), term.clone()));
                return Some(n);
            }
            if let Some(v) = fold_term(term) {
                if term != &Term::Const(v.clone()) {
                    let mut n = m.clone();
                    n.factors[i] = Factor::Lift {
                        var: var.clone(),
                        term: Term::Const(v),
                    };
                    return Some(n);
                }
            }
            // a second binder of the same variable turns this lift into a filter
            let other_binder = m
                .factors
                .iter()
                .enumerate()
                .any(|(j, f)| j != i && f.binds().contains(&var.as_str()));
            match term {
                Term::Var(p) if p == var => Some(without(m, i)),
                Term::Var(p) => {
                    if out.contains(var) {
                        if mentioned_elsewhere(m, i, var) {
                            Some(rename_others(m, i, var, p))
                        } else {
                            None
                        }
                    } else {
                        Some(without(m, i).rename(var, p))
                    }
                }
                _ if other_binder => {
                    let mut n = m.clone();
                    n.factors[i] =
                        Factor::Cond(Condition::eq(Term::Var(var.clone()), term.clone()));
                    Some(n)
                }
                _ if !out.contains(var) && mentioned_elsewhere(m, i, var) => {
                    // substitute a non-variable term into value/condition positions
                    let mut factors = Vec::new();
                    for (j, f) in m.factors.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        factors.push(f.subst(var, term)?);
                    }
                    Some(Mono {
                        coef: m.coef.clone(),
                        factors,
                    })
                }
                _ if !out.contains(var) => {
                    // unused private binder: {v: t} contributes a factor of one
                    Some(without(m, i))
                }
                _ => None,
            }
        }
        Factor::Cond(c) => {
            if let Some(b) = fold_cond(c) {
                let mut n = without(m, i);
                if !b {
                    n.coef = Rational::zero();
                }
                return Some(n);
            }
            if let Condition::Cmp(Term::Var(a), CmpOp::Eq, Term::Var(b)) = c {
                if a == b {
                    return Some(without(m, i));
                }
                let bound_here = m.bound_here();
                let pa = is_private(a, out, bound) && bound_here.contains(a);
                let pb = is_private(b, out, bound) && bound_here.contains(b);
                if pa {
                    return Some(without(m, i).rename(a, b));
                }
                if pb {
                    return Some(without(m, i).rename(b, a));
                }
                let oa = out.contains(a) && !bound.contains(a);
                let ob = out.contains(b) && !bound.contains(b);
                if oa && mentioned_elsewhere(m, i, a) {
                    let mut n = rename_others(m, i, a, b);
                    n.factors[i] = Factor::Lift {
                        var: a.clone(),
                        term: Term::Var(b.clone()),
                    };
                    return Some(n);
                }
                if ob && mentioned_elsewhere(m, i, b) {
                    let mut n = rename_others(m, i, b, a);
                    n.factors[i] = Factor::Lift {
                        var: b.clone(),
                        term: Term::Var(a.clone()),
                    };
                    return Some(n);
                }
            }
            None
        }
        Factor::Val(t) => {
            let v = fold_term(t)?;
            let mut n = without(m, i);
            n.coef *= v.as_num().ok()?;
            Some(n)
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// canonical form
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum VarClass {
    Out,
    Param,
    Local,
}

/// Canonical rendering of a polynomial up to renaming of private variables,
/// output variables (positions become canonical) and, optionally, of the
/// externally bound variables in `params`.
///
/// Returns the canonical text and the output variables in canonical order.
pub fn canonical(
    poly: &Poly,
    params: &BTreeSet<String>,
    rename_params: bool,
) -> (String, Vec<String>) {
    let out_set: BTreeSet<String> = poly.out.iter().cloned().collect();
    let classify = |v: &str| {
        if out_set.contains(v) {
            VarClass::Out
        } else if params.contains(v) {
            VarClass::Param
        } else {
            VarClass::Local
        }
    };

    // shape keys: variables replaced by class markers
    let shape = |f: &Factor, names: &BTreeMap<String, String>| -> String {
        let mut g = f.clone();
        for v in f.mentions() {
            let r = match names.get(&v) {
                Some(n) => n.clone(),
                None => match classify(&v) {
                    VarClass::Out => "\u{2}o".to_string(),
                    VarClass::Param if rename_params => "\u{2}p".to_string(),
                    VarClass::Param => v.clone(),
                    VarClass::Local => "\u{2}l".to_string(),
                },
            };
            g = g.rename(&v, &r);
        }
        format!("{:?}", g)
    };

    let mut names: BTreeMap<String, String> = BTreeMap::new();
    let mut monos: Vec<Mono> = poly.monos.clone();
    let mut last = String::new();
    for _ in 0..6 {
        // order factors and monomials by shape under the current names
        for m in monos.iter_mut() {
            let mut keyed: Vec<(String, Factor)> = m
                .factors
                .iter()
                .map(|f| (shape(f, &names), f.clone()))
                .collect();
            keyed.sort_by(|a, b| a.0.cmp(&b.0));
            m.factors = keyed.into_iter().map(|(_, f)| f).collect();
        }
        monos.sort_by_cached_key(|m| {
            format!(
                "{}|{}",
                fmt_rational(&m.coef),
                m.factors
                    .iter()
                    .map(|f| shape(f, &names))
                    .collect::<Vec<_>>()
                    .join(";")
            )
        });
        // assign names in order of first occurrence
        let mut next = BTreeMap::new();
        let (mut no, mut np) = (0, 0);
        for m in &monos {
            let mut nl = 0;
            let mut local_names: BTreeMap<String, String> = BTreeMap::new();
            for f in &m.factors {
                for v in ordered_vars(f) {
                    match classify(&v) {
                        VarClass::Out if !next.contains_key(&v) => {
                            next.insert(v.clone(), format!("\u{3}o{}", no));
                            no += 1;
                        }
                        VarClass::Param if rename_params && !next.contains_key(&v) => {
                            next.insert(v.clone(), format!("\u{3}p{}", np));
                            np += 1;
                        }
                        VarClass::Local if !local_names.contains_key(&v) => {
                            local_names.insert(v.clone(), format!("\u{3}l{}", nl));
                            nl += 1;
                        }
                        _ => {}
                    }
                }
            }
            // locals are per monomial; keep them in a separate namespace
            for (k, v) in local_names {
                next.entry(format!(
                    "{}\u{4}{}",
                    k,
                    monos.iter().position(|x| std::ptr::eq(x, m)).unwrap()
                ))
                .or_insert(v);
            }
        }
        let rendered = render(&monos, &next, &poly.out);
        names = next
            .iter()
            .filter(|(k, _)| !k.contains('\u{4}'))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if rendered == last {
            break;
        }
        last = rendered;
    }
    let mut order: Vec<String> = poly.out.clone();
    order.sort_by_key(|v| {
        names
            .get(v)
            .cloned()
            .unwrap_or_else(|| format!("\u{5}{}", v))
    });
    // out variables that never occur keep a name-based position
    let text = render_final(&monos, &names, &order, rename_params, params);
    (text, order)
}

fn ordered_vars(f: &Factor) -> Vec<String> {
    let seen = std::cell::RefCell::new(Vec::<String>::new());
    let note = |v: &str| {
        let mut s = seen.borrow_mut();
        if !s.iter().any(|x| x == v) {
            s.push(v.to_string());
        }
        v.to_string()
    };
    for v in f.binds() {
        note(v);
    }
    match f {
        Factor::Lift { term, .. } | Factor::Val(term) => {
            term.map_vars(&note);
        }
        Factor::Cond(c) => {
            c.map_vars(&note);
        }
        _ => {}
    }
    seen.into_inner()
}

/// Orient symmetric comparisons so that operand order does not matter.
fn orient(f: Factor) -> Factor {
    fn go(c: &Condition) -> Condition {
        match c {
            Condition::Cmp(a, op, b) => {
                let (a, op, b) = match op {
                    CmpOp::Gt | CmpOp::Ge => (b, op.flip(), a),
                    _ => (a, *op, b),
                };
                if matches!(op, CmpOp::Eq | CmpOp::Ne) && format!("{:?}", a) > format!("{:?}", b) {
                    Condition::Cmp(b.clone(), op, a.clone())
                } else {
                    Condition::Cmp(a.clone(), op, b.clone())
                }
            }
            Condition::And(cs) => Condition::And(cs.iter().map(go).collect()),
            Condition::Or(cs) => Condition::Or(cs.iter().map(go).collect()),
            Condition::Not(c) => Condition::Not(Box::new(go(c))),
            other => other.clone(),
        }
    }
    match f {
        Factor::Cond(c) => Factor::Cond(go(&c)),
        other => other,
    }
}

fn render(monos: &[Mono], names: &BTreeMap<String, String>, out: &[String]) -> String {
    let mut s = String::new();
    for (mi, m) in monos.iter().enumerate() {
        let mut mm = m.clone();
        for v in m.mentions() {
            let key = format!("{}\u{4}{}", v, mi);
            if let Some(n) = names.get(&key).or_else(|| names.get(&v)) {
                mm = mm.rename(&v, n);
            }
        }
        s.push_str(&format!("{:?};", mm));
    }
    s.push_str(&out.len().to_string());
    s
}

fn render_final(
    monos: &[Mono],
    names: &BTreeMap<String, String>,
    order: &[String],
    rename_params: bool,
    params: &BTreeSet<String>,
) -> String {
    let mut s = format!("out{};", order.len());
    let mut rendered: Vec<String> = Vec::new();
    for m in monos {
        let mut mm = m.clone();
        let mut local = 0;
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for f in &m.factors {
            for v in ordered_vars(f) {
                if map.contains_key(&v) {
                    continue;
                }
                let n = if let Some(pos) = order.iter().position(|o| o == &v) {
                    format!("\u{3}o{}", pos)
                } else if params.contains(&v) {
                    if rename_params {
                        names.get(&v).cloned().unwrap_or_else(|| v.clone())
                    } else {
                        v.clone()
                    }
                } else {
                    local += 1;
                    format!("\u{3}l{}", local - 1)
                };
                map.insert(v, n);
            }
        }
        // rename via placeholders to avoid collisions
        for (i, v) in map.keys().enumerate() {
            mm = mm.rename(v, &format!("\u{6}{}", i));
        }
        for (i, n) in map.values().enumerate() {
            mm = mm.rename(&format!("\u{6}{}", i), n);
        }
        mm.factors = mm.factors.into_iter().map(orient).collect();
        mm.factors.sort_by_key(|f| format!("{:?}", f));
        rendered.push(format!("{:?}", mm));
    }
    rendered.sort();
    s.push_str(&rendered.join("+"));
    s
}

// ---------------------------------------------------------------------------
// display
// ---------------------------------------------------------------------------

impl fmt::Debug for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Rel { name, vars } => write!(f, "{}({})", name, vars.join(",")),
            Factor::View { name, keys } => write!(f, "{}[{}]", name, keys.join(",")),
            Factor::Lift { var, term } => write!(f, "({} ^= {:?})", var, term),
            Factor::Cond(c) => write!(f, "[{:?}]", c),
            Factor::Val(t) => write!(f, "{{{:?}}}", t),
        }
    }
}

impl fmt::Debug for Mono {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", fmt_rational(&self.coef))?;
        for fac in &self.factors {
            write!(f, " * {:?}", fac)?;
        }
        Ok(())
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sum[{}](", self.out.join(","))?;
        for (i, m) in self.monos.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{:?}", m)?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::vtq::parse_query;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_tuple_inlining() {
        // Sum_{<>;A*D}(sigma_{B=C}({A:x,B:y} join S(C,D))) -> Sum_{<>;x*D}(S(y,D))
        let q = parse_query(
            "(sum () (* A D) (select (= B C) (join (single ((A x) (B y)) 1) (rel S C D))))",
        )
        .unwrap();
        let p = Poly::from_query(&q).unwrap().simplify(&set(&["x", "y"]));
        assert_eq!(p.monos.len(), 1);
        assert_eq!(format!("{:?}", p), "Sum[](1 * S(y,D) * {D} * {x})");
    }

    #[test]
    fn empty_products_vanish() {
        let q = parse_query("(join (rel R A) (single () 0))").unwrap();
        assert!(Poly::from_query(&q)
            .unwrap()
            .simplify(&BTreeSet::new())
            .is_zero());
        let q = parse_query("(select false (rel R A))").unwrap();
        assert!(Poly::from_query(&q)
            .unwrap()
            .simplify(&BTreeSet::new())
            .is_zero());
    }

    #[test]
    fn equal_monomials_merge() {
        let q = parse_query("(union (rel R A) (join (rel R A) (single () -1)))").unwrap();
        assert!(Poly::from_query(&q)
            .unwrap()
            .simplify(&BTreeSet::new())
            .is_zero());
    }

    #[test]
    fn expansion_distributes_sums() {
        let q = parse_query("(sum () (- (+ A 1) B) (rel R A B))").unwrap();
        let p = Poly::from_query(&q)
            .unwrap()
            .expand()
            .simplify(&BTreeSet::new());
        assert_eq!(p.monos.len(), 3);
    }

    #[test]
    fn canonical_form_ignores_private_names_and_order() {
        let a = parse_query("(sum (K) X (join (rel R K X) (rel S X Y)))").unwrap();
        let b = parse_query("(sum (K) Q (join (rel S Q Z) (rel R K Q)))").unwrap();
        let (ca, _) = canonical(&Poly::from_query(&a).unwrap(), &BTreeSet::new(), true);
        let (cb, _) = canonical(&Poly::from_query(&b).unwrap(), &BTreeSet::new(), true);
        assert_eq!(ca, cb);
        let c = parse_query("(sum (K) Y (join (rel S Q Y) (rel R K Q)))").unwrap();
        let (cc, _) = canonical(&Poly::from_query(&c).unwrap(), &BTreeSet::new(), true);
        assert_ne!(ca, cc);
    }

    #[test]
    fn canonical_out_order_is_positional() {
        let a = parse_query("(sum (A B) 1 (rel R A B))").unwrap();
        let b = parse_query("(sum (Y X) 1 (rel R X Y))").unwrap();
        let (ca, oa) = canonical(&Poly::from_query(&a).unwrap(), &BTreeSet::new(), true);
        let (cb, ob) = canonical(&Poly::from_query(&b).unwrap(), &BTreeSet::new(), true);
        assert_eq!(ca, cb);
        assert_eq!(oa, vec!["A", "B"]);
        assert_eq!(ob, vec!["X", "Y"]);
    }
}
