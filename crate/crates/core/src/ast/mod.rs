//! Query algebra: relation atoms, singletons, natural join, union, selection,
//! grouping sum-aggregates and renaming, with arithmetic terms that may embed
//! non-grouping aggregates.
//!
//! Variables are global by name: an atom column whose variable is already bound
//! (by the environment or by an enclosing join) acts as an equality filter.

use std::collections::BTreeSet;
use std::fmt;

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::value::{Rational, Value};

pub mod canon;
pub mod sql;
pub mod vtq;

pub use canon::structural_equal;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryExpr {
    /// `R(v1, ..., vn)`: a base relation with its columns bound to variables.
    Relation {
        name: String,
        vars: Vec<String>,
    },
    /// A read of a materialized view, keyed by `keys`.
    View {
        name: String,
        keys: Vec<String>,
    },
    /// `{ A1: t1, ..., An: tn |-> mult }`.
    Singleton {
        columns: Vec<(String, Term)>,
        mult: Term,
    },
    Join(Box<QueryExpr>, Box<QueryExpr>),
    Union(Box<QueryExpr>, Box<QueryExpr>),
    Select {
        cond: Condition,
        child: Box<QueryExpr>,
    },
    SumAgg {
        group_by: Vec<String>,
        f: Term,
        child: Box<QueryExpr>,
    },
    /// Output column renaming, pairs of `(from, to)`.
    Rename {
        mapping: Vec<(String, String)>,
        child: Box<QueryExpr>,
    },
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(Value),
    Var(String),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
    Div(Box<Term>, Box<Term>),
    Neg(Box<Term>),
    /// Non-grouping aggregate used as a scalar; its value is the multiplicity of `<>`.
    Agg(Box<QueryExpr>),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    True,
    False,
    Cmp(Term, CmpOp, Term),
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Not(Box<Condition>),
}

/// Input/output split of an expression's variables.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BindingPattern {
    pub input_vars: BTreeSet<String>,
    pub output_vars: BTreeSet<String>,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<CmpOp> {
        Some(match s {
            "=" => CmpOp::Eq,
            "<>" | "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }

    /// The operator with its operands swapped: `a op b` iff `b op.flip() a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }
}

// ---------------------------------------------------------------------------
// constructors
// ---------------------------------------------------------------------------

impl QueryExpr {
    pub fn relation(name: &str, vars: &[&str]) -> Self {
        QueryExpr::Relation {
            name: name.to_string(),
            vars: vars.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn view(name: &str, keys: &[&str]) -> Self {
        QueryExpr::View {
            name: name.to_string(),
            keys: keys.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The nullary singleton `{<> |-> c}`.
    pub fn constant(c: Rational) -> Self {
        QueryExpr::Singleton {
            columns: vec![],
            mult: Term::Const(Value::Num(c)),
        }
    }

    pub fn one() -> Self {
        Self::constant(Rational::one())
    }

    /// The empty GMR with no columns.
    pub fn zero() -> Self {
        Self::constant(Rational::zero())
    }

    pub fn join(a: QueryExpr, b: QueryExpr) -> Self {
        QueryExpr::Join(Box::new(a), Box::new(b))
    }

    pub fn union(a: QueryExpr, b: QueryExpr) -> Self {
        QueryExpr::Union(Box::new(a), Box::new(b))
    }

    pub fn select(cond: Condition, child: QueryExpr) -> Self {
        QueryExpr::Select {
            cond,
            child: Box::new(child),
        }
    }

    pub fn sum(group_by: &[&str], f: Term, child: QueryExpr) -> Self {
        QueryExpr::SumAgg {
            group_by: group_by.iter().map(|s| s.to_string()).collect(),
            f,
            child: Box::new(child),
        }
    }

    /// `R - S := R + (S join {<> |-> -1})`.
    pub fn negate(q: QueryExpr) -> Self {
        Self::join(q, Self::constant(-Rational::one()))
    }

    /// Join a non-empty list left-deep.
    pub fn join_all(mut items: Vec<QueryExpr>) -> Self {
        if items.is_empty() {
            return Self::one();
        }
        let first = items.remove(0);
        items.into_iter().fold(first, QueryExpr::join)
    }

    pub fn union_all(mut items: Vec<QueryExpr>) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let first = items.remove(0);
        Some(items.into_iter().fold(first, QueryExpr::union))
    }

    pub fn is_zero_constant(&self) -> bool {
        matches!(self, QueryExpr::Singleton { mult: Term::Const(v), .. } if v.is_zero_num())
    }
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_string())
    }

    pub fn num(n: i64) -> Self {
        Term::Const(Value::int(n))
    }

    pub fn rational(r: Rational) -> Self {
        Term::Const(Value::Num(r))
    }

    pub fn one() -> Self {
        Term::num(1)
    }

    pub fn agg(q: QueryExpr) -> Self {
        Term::Agg(Box::new(q))
    }

    pub fn add(a: Term, b: Term) -> Self {
        Term::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Term, b: Term) -> Self {
        Term::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Term, b: Term) -> Self {
        Term::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Term, b: Term) -> Self {
        Term::Div(Box::new(a), Box::new(b))
    }

    pub fn as_const_num(&self) -> Option<&Rational> {
        match self {
            Term::Const(Value::Num(r)) => Some(r),
            _ => None,
        }
    }

    pub fn is_one(&self) -> bool {
        self.as_const_num().is_some_and(|r| r.is_one())
    }
}

impl Condition {
    pub fn cmp(a: Term, op: CmpOp, b: Term) -> Self {
        Condition::Cmp(a, op, b)
    }

    pub fn eq(a: Term, b: Term) -> Self {
        Condition::Cmp(a, CmpOp::Eq, b)
    }

    pub fn and(items: Vec<Condition>) -> Self {
        match items.len() {
            0 => Condition::True,
            1 => items.into_iter().next().unwrap(),
            _ => Condition::And(items),
        }
    }
}

// ---------------------------------------------------------------------------
// evaluation of terms and conditions
// ---------------------------------------------------------------------------

/// Variable lookup used while evaluating terms.
pub trait Lookup {
    fn lookup(&self, var: &str) -> Option<Value>;
}

impl<F: Fn(&str) -> Option<Value>> Lookup for F {
    fn lookup(&self, var: &str) -> Option<Value> {
        self(var)
    }
}

/// Callback computing the scalar value of a nested aggregate in the current scope.
pub type NestedEval<'a> = dyn FnMut(&QueryExpr) -> Result<Rational> + 'a;

impl Term {
    pub fn eval(&self, env: &dyn Lookup, nested: &mut NestedEval<'_>) -> Result<Value> {
        Ok(match self {
            Term::Const(v) => v.clone(),
            Term::Var(x) => env.lookup(x).ok_or_else(|| Error::Binding(x.clone()))?,
            Term::Add(a, b) => Value::Num(a.eval_num(env, nested)? + b.eval_num(env, nested)?),
            Term::Sub(a, b) => Value::Num(a.eval_num(env, nested)? - b.eval_num(env, nested)?),
            Term::Mul(a, b) => Value::Num(a.eval_num(env, nested)? * b.eval_num(env, nested)?),
            Term::Div(a, b) => {
                let n = a.eval_num(env, nested)?;
                let d = b.eval_num(env, nested)?;
                if d.is_zero() {
                    return Err(Error::Arithmetic("division by zero".into()));
                }
                Value::Num(n / d)
            }
            Term::Neg(a) => Value::Num(-a.eval_num(env, nested)?),
            Term::Agg(q) => Value::Num(nested(q)?),
        })
    }

    pub fn eval_num(&self, env: &dyn Lookup, nested: &mut NestedEval<'_>) -> Result<Rational> {
        self.eval(env, nested)?.into_num()
    }
}

impl Condition {
    pub fn eval(&self, env: &dyn Lookup, nested: &mut NestedEval<'_>) -> Result<bool> {
        Ok(match self {
            Condition::True => true,
            Condition::False => false,
            Condition::Cmp(a, op, b) => {
                let x = a.eval(env, nested)?;
                let y = b.eval(env, nested)?;
                op.holds(x.try_cmp(&y)?)
            }
            Condition::And(cs) => {
                for c in cs {
                    if !c.eval(env, nested)? {
                        return Ok(false);
                    }
                }
                true
            }
            Condition::Or(cs) => {
                for c in cs {
                    if c.eval(env, nested)? {
                        return Ok(true);
                    }
                }
                false
            }
            Condition::Not(c) => !c.eval(env, nested)?,
        })
    }
}

// ---------------------------------------------------------------------------
// variables, schemas and binding patterns
// ---------------------------------------------------------------------------

fn push_unique(out: &mut Vec<String>, v: &str) {
    if !out.iter().any(|x| x == v) {
        out.push(v.to_string());
    }
}

impl Term {
    /// Variables this term needs from its scope, including the input
    /// variables of nested aggregates.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Const(_) => {}
            Term::Var(x) => {
                out.insert(x.clone());
            }
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                a.collect_free(out);
                b.collect_free(out);
            }
            Term::Neg(a) => a.collect_free(out),
            Term::Agg(q) => out.extend(q.binding_pattern().input_vars),
        }
    }

    pub fn has_nested(&self) -> bool {
        match self {
            Term::Const(_) | Term::Var(_) => false,
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                a.has_nested() || b.has_nested()
            }
            Term::Neg(a) => a.has_nested(),
            Term::Agg(_) => true,
        }
    }

    pub fn nested_aggs<'a>(&'a self, out: &mut Vec<&'a QueryExpr>) {
        match self {
            Term::Const(_) | Term::Var(_) => {}
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                a.nested_aggs(out);
                b.nested_aggs(out);
            }
            Term::Neg(a) => a.nested_aggs(out),
            Term::Agg(q) => out.push(q),
        }
    }

    pub fn map_vars(&self, f: &dyn Fn(&str) -> String) -> Term {
        match self {
            Term::Const(v) => Term::Const(v.clone()),
            Term::Var(x) => Term::Var(f(x)),
            Term::Add(a, b) => Term::add(a.map_vars(f), b.map_vars(f)),
            Term::Sub(a, b) => Term::sub(a.map_vars(f), b.map_vars(f)),
            Term::Mul(a, b) => Term::mul(a.map_vars(f), b.map_vars(f)),
            Term::Div(a, b) => Term::div(a.map_vars(f), b.map_vars(f)),
            Term::Neg(a) => Term::Neg(Box::new(a.map_vars(f))),
            Term::Agg(q) => Term::agg(q.map_vars(f)),
        }
    }
}

impl Term {
    pub fn map_views(&self, f: &dyn Fn(&str, &[String]) -> (String, Vec<String>)) -> Term {
        match self {
            Term::Const(_) | Term::Var(_) => self.clone(),
            Term::Add(a, b) => Term::add(a.map_views(f), b.map_views(f)),
            Term::Sub(a, b) => Term::sub(a.map_views(f), b.map_views(f)),
            Term::Mul(a, b) => Term::mul(a.map_views(f), b.map_views(f)),
            Term::Div(a, b) => Term::div(a.map_views(f), b.map_views(f)),
            Term::Neg(a) => Term::Neg(Box::new(a.map_views(f))),
            Term::Agg(q) => Term::agg(q.map_views(f)),
        }
    }
}

impl Condition {
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_terms(&mut |t| t.collect_free(&mut out));
        out
    }

    pub fn visit_terms(&self, f: &mut dyn FnMut(&Term)) {
        match self {
            Condition::True | Condition::False => {}
            Condition::Cmp(a, _, b) => {
                f(a);
                f(b);
            }
            Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| c.visit_terms(f)),
            Condition::Not(c) => c.visit_terms(f),
        }
    }

    pub fn map_terms(&self, f: &mut dyn FnMut(&Term) -> Term) -> Condition {
        match self {
            Condition::True => Condition::True,
            Condition::False => Condition::False,
            Condition::Cmp(a, op, b) => Condition::Cmp(f(a), *op, f(b)),
            Condition::And(cs) => Condition::And(cs.iter().map(|c| c.map_terms(f)).collect()),
            Condition::Or(cs) => Condition::Or(cs.iter().map(|c| c.map_terms(f)).collect()),
            Condition::Not(c) => Condition::Not(Box::new(c.map_terms(f))),
        }
    }

    pub fn has_nested(&self) -> bool {
        let mut found = false;
        self.visit_terms(&mut |t| found |= t.has_nested());
        found
    }

    pub fn nested_aggs(&self) -> Vec<&QueryExpr> {
        let mut out = Vec::new();
        self.collect_nested(&mut out);
        out
    }

    fn collect_nested<'a>(&'a self, out: &mut Vec<&'a QueryExpr>) {
        match self {
            Condition::True | Condition::False => {}
            Condition::Cmp(a, _, b) => {
                a.nested_aggs(out);
                b.nested_aggs(out);
            }
            Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| c.collect_nested(out)),
            Condition::Not(c) => c.collect_nested(out),
        }
    }

    pub fn map_vars(&self, f: &dyn Fn(&str) -> String) -> Condition {
        self.map_terms(&mut |t| t.map_vars(f))
    }
}

impl QueryExpr {
    /// Bottom-up output schema.
    pub fn schema(&self) -> Result<Vec<String>> {
        Ok(match self {
            QueryExpr::Relation { vars: keys, .. } | QueryExpr::View { keys, .. } => {
                let mut out = Vec::new();
                for k in keys {
                    push_unique(&mut out, k);
                }
                out
            }
            QueryExpr::Singleton { columns, .. } => {
                let mut out: Vec<String> = Vec::new();
                for (c, _) in columns {
                    if out.contains(c) {
                        return Err(Error::Structural(format!("singleton repeats column {}", c)));
                    }
                    out.push(c.clone());
                }
                out
            }
            QueryExpr::Join(a, b) => {
                let mut out = a.schema()?;
                for v in b.schema()? {
                    push_unique(&mut out, &v);
                }
                out
            }
            QueryExpr::Union(a, b) => {
                let sa = a.schema()?;
                let sb = b.schema()?;
                let set_a: BTreeSet<_> = sa.iter().collect();
                let set_b: BTreeSet<_> = sb.iter().collect();
                if set_a != set_b {
                    return Err(Error::Structural(format!(
                        "union of incompatible schemas ({}) and ({})",
                        sa.join(","),
                        sb.join(",")
                    )));
                }
                sa
            }
            QueryExpr::Select { child, .. } => child.schema()?,
            QueryExpr::SumAgg {
                group_by, child, ..
            } => {
                child.schema()?;
                let mut out = Vec::new();
                for g in group_by {
                    if out.contains(g) {
                        return Err(Error::Structural(format!("group-by repeats {}", g)));
                    }
                    out.push(g.clone());
                }
                out
            }
            QueryExpr::Rename { mapping, child } => {
                let s = child.schema()?;
                let out: Vec<String> = s
                    .iter()
                    .map(|c| {
                        mapping
                            .iter()
                            .find(|(from, _)| from == c)
                            .map(|(_, to)| to.clone())
                            .unwrap_or_else(|| c.clone())
                    })
                    .collect();
                for (from, _) in mapping {
                    if !s.contains(from) {
                        return Err(Error::Structural(format!(
                            "rename of unknown column {}",
                            from
                        )));
                    }
                }
                let set: BTreeSet<_> = out.iter().collect();
                if set.len() != out.len() {
                    return Err(Error::Structural(
                        "rename produces duplicate columns".into(),
                    ));
                }
                out
            }
        })
    }

    pub fn binding_pattern(&self) -> BindingPattern {
        let output_vars: BTreeSet<String> = self.schema().unwrap_or_default().into_iter().collect();
        let input_vars = self.input_vars();
        BindingPattern {
            input_vars: input_vars.difference(&output_vars).cloned().collect(),
            output_vars,
        }
    }

    fn out_set(&self) -> BTreeSet<String> {
        self.schema().unwrap_or_default().into_iter().collect()
    }

    /// Variables that must be supplied from outside for this expression to be evaluable.
    pub fn input_vars(&self) -> BTreeSet<String> {
        match self {
            QueryExpr::Relation { .. } | QueryExpr::View { .. } => BTreeSet::new(),
            QueryExpr::Singleton { columns, mult } => {
                let mut out = mult.free_vars();
                for (_, t) in columns {
                    out.extend(t.free_vars());
                }
                out
            }
            QueryExpr::Join(a, b) => {
                let (oa, ob) = (a.out_set(), b.out_set());
                let mut out: BTreeSet<String> = a.input_vars().difference(&ob).cloned().collect();
                out.extend(b.input_vars().difference(&oa).cloned());
                out
            }
            QueryExpr::Union(a, b) => {
                let mut out = a.input_vars();
                out.extend(b.input_vars());
                out
            }
            QueryExpr::Select { cond, child } => {
                let oc = child.out_set();
                let mut out = child.input_vars();
                out.extend(cond.free_vars().difference(&oc).cloned());
                out
            }
            QueryExpr::SumAgg { group_by, f, child } => {
                let oc = child.out_set();
                let mut out = child.input_vars();
                out.extend(f.free_vars().difference(&oc).cloned());
                out.extend(group_by.iter().filter(|g| !oc.contains(*g)).cloned());
                out
            }
            QueryExpr::Rename { child, .. } => child.input_vars(),
        }
    }

    /// Names of base relations mentioned anywhere, including nested aggregates.
    pub fn relations(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_relations(&mut out, true);
        out
    }

    /// Relations mentioned outside of nested aggregates.
    pub fn top_relations(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_relations(&mut out, false);
        out
    }

    fn collect_relations(&self, out: &mut BTreeSet<String>, nested: bool) {
        let from_term = |t: &Term, out: &mut BTreeSet<String>| {
            if nested {
                let mut qs = Vec::new();
                t.nested_aggs(&mut qs);
                for q in qs {
                    q.collect_relations(out, true);
                }
            }
        };
        match self {
            QueryExpr::Relation { name, .. } => {
                out.insert(name.clone());
            }
            QueryExpr::View { .. } => {}
            QueryExpr::Singleton { columns, mult } => {
                from_term(mult, out);
                for (_, t) in columns {
                    from_term(t, out);
                }
            }
            QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => {
                a.collect_relations(out, nested);
                b.collect_relations(out, nested);
            }
            QueryExpr::Select { cond, child } => {
                cond.visit_terms(&mut |t| from_term(t, out));
                child.collect_relations(out, nested);
            }
            QueryExpr::SumAgg { f, child, .. } => {
                from_term(f, out);
                child.collect_relations(out, nested);
            }
            QueryExpr::Rename { child, .. } => child.collect_relations(out, nested),
        }
    }

    /// True when some nested aggregate (in a condition or term) mentions `rel`.
    pub fn has_nested_over(&self, rel: &str) -> bool {
        let term_hit = |t: &Term| {
            let mut qs = Vec::new();
            t.nested_aggs(&mut qs);
            qs.iter().any(|q| q.relations().contains(rel))
        };
        match self {
            QueryExpr::Relation { .. } | QueryExpr::View { .. } => false,
            QueryExpr::Singleton { columns, mult } => {
                term_hit(mult) || columns.iter().any(|(_, t)| term_hit(t))
            }
            QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => {
                a.has_nested_over(rel) || b.has_nested_over(rel)
            }
            QueryExpr::Select { cond, child } => {
                let mut hit = false;
                cond.visit_terms(&mut |t| hit |= term_hit(t));
                hit || child.has_nested_over(rel)
            }
            QueryExpr::SumAgg { f, child, .. } => term_hit(f) || child.has_nested_over(rel),
            QueryExpr::Rename { child, .. } => child.has_nested_over(rel),
        }
    }

    pub fn has_nested(&self) -> bool {
        match self {
            QueryExpr::Relation { .. } | QueryExpr::View { .. } => false,
            QueryExpr::Singleton { columns, mult } => {
                mult.has_nested() || columns.iter().any(|(_, t)| t.has_nested())
            }
            QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => a.has_nested() || b.has_nested(),
            QueryExpr::Select { cond, child } => cond.has_nested() || child.has_nested(),
            QueryExpr::SumAgg { f, child, .. } => f.has_nested() || child.has_nested(),
            QueryExpr::Rename { child, .. } => child.has_nested(),
        }
    }

    /// Rename every variable occurrence (columns, keys, terms) through `f`.
    pub fn map_vars(&self, f: &dyn Fn(&str) -> String) -> QueryExpr {
        match self {
            QueryExpr::Relation { name, vars } => QueryExpr::Relation {
                name: name.clone(),
                vars: vars.iter().map(|v| f(v)).collect(),
            },
            QueryExpr::View { name, keys } => QueryExpr::View {
                name: name.clone(),
                keys: keys.iter().map(|v| f(v)).collect(),
            },
            QueryExpr::Singleton { columns, mult } => QueryExpr::Singleton {
                columns: columns.iter().map(|(c, t)| (f(c), t.map_vars(f))).collect(),
                mult: mult.map_vars(f),
            },
            QueryExpr::Join(a, b) => QueryExpr::join(a.map_vars(f), b.map_vars(f)),
            QueryExpr::Union(a, b) => QueryExpr::union(a.map_vars(f), b.map_vars(f)),
            QueryExpr::Select { cond, child } => {
                QueryExpr::select(cond.map_vars(f), child.map_vars(f))
            }
            QueryExpr::SumAgg {
                group_by,
                f: t,
                child,
            } => QueryExpr::SumAgg {
                group_by: group_by.iter().map(|g| f(g)).collect(),
                f: t.map_vars(f),
                child: Box::new(child.map_vars(f)),
            },
            QueryExpr::Rename { mapping, child } => QueryExpr::Rename {
                mapping: mapping.iter().map(|(a, b)| (f(a), f(b))).collect(),
                child: Box::new(child.map_vars(f)),
            },
        }
    }

    /// Rewrite every view reference `name[keys]`, including those inside
    /// nested aggregates.
    pub fn map_views(&self, f: &dyn Fn(&str, &[String]) -> (String, Vec<String>)) -> QueryExpr {
        match self {
            QueryExpr::Relation { .. } => self.clone(),
            QueryExpr::View { name, keys } => {
                let (name, keys) = f(name, keys);
                QueryExpr::View { name, keys }
            }
            QueryExpr::Singleton { columns, mult } => QueryExpr::Singleton {
                columns: columns
                    .iter()
                    .map(|(c, t)| (c.clone(), t.map_views(f)))
                    .collect(),
                mult: mult.map_views(f),
            },
            QueryExpr::Join(a, b) => QueryExpr::join(a.map_views(f), b.map_views(f)),
            QueryExpr::Union(a, b) => QueryExpr::union(a.map_views(f), b.map_views(f)),
            QueryExpr::Select { cond, child } => {
                QueryExpr::select(cond.map_terms(&mut |t| t.map_views(f)), child.map_views(f))
            }
            QueryExpr::SumAgg {
                group_by,
                f: t,
                child,
            } => QueryExpr::SumAgg {
                group_by: group_by.clone(),
                f: t.map_views(f),
                child: Box::new(child.map_views(f)),
            },
            QueryExpr::Rename { mapping, child } => QueryExpr::Rename {
                mapping: mapping.clone(),
                child: Box::new(child.map_views(f)),
            },
        }
    }

    /// Names of the views read anywhere in the expression.
    pub fn views(&self) -> BTreeSet<String> {
        let out = std::cell::RefCell::new(BTreeSet::new());
        self.map_views(&|n, k| {
            out.borrow_mut().insert(n.to_string());
            (n.to_string(), k.to_vec())
        });
        out.into_inner()
    }

    /// All variable names occurring anywhere in the expression.
    pub fn all_vars(&self) -> BTreeSet<String> {
        let out = std::cell::RefCell::new(BTreeSet::new());
        self.map_vars(&|v| {
            out.borrow_mut().insert(v.to_string());
            v.to_string()
        });
        out.into_inner()
    }

    pub fn size(&self) -> usize {
        let term_size = |t: &Term| {
            let mut qs = Vec::new();
            t.nested_aggs(&mut qs);
            1 + qs.iter().map(|q| q.size()).sum::<usize>()
        };
        match self {
            QueryExpr::Relation { .. } | QueryExpr::View { .. } => 1,
            QueryExpr::Singleton { columns, mult } => {
                1 + term_size(mult) + columns.iter().map(|(_, t)| term_size(t)).sum::<usize>()
            }
            QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => 1 + a.size() + b.size(),
            QueryExpr::Select { cond, child } => {
                let mut n = 0;
                cond.visit_terms(&mut |t| n += term_size(t));
                1 + n + child.size()
            }
            QueryExpr::SumAgg { f, child, .. } => 1 + term_size(f) + child.size(),
            QueryExpr::Rename { child, .. } => 1 + child.size(),
        }
    }
}

/// Input/output split of `q`.
pub fn infer_binding_pattern(q: &QueryExpr) -> BindingPattern {
    q.binding_pattern()
}

/// Output schema of `q`.
pub fn schema_of(q: &QueryExpr) -> Result<Vec<String>> {
    q.schema()
}

impl fmt::Display for QueryExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&vtq::print_query(self))
    }
}

impl fmt::Debug for QueryExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&vtq::print_query(self))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&vtq::print_term(self))
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&vtq::print_term(self))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&vtq::print_cond(self))
    }
}

impl fmt::Debug for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&vtq::print_cond(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn correlated_subquery_has_input_variable() {
        // Sum_{<>;D}(sigma_{A>C}(S(C,D)))
        let q = QueryExpr::sum(
            &[],
            Term::var("D"),
            QueryExpr::select(
                Condition::cmp(Term::var("A"), CmpOp::Gt, Term::var("C")),
                QueryExpr::relation("S", &["C", "D"]),
            ),
        );
        let bp = infer_binding_pattern(&q);
        assert_eq!(bp.input_vars, set(&["A"]));
        assert!(bp.output_vars.is_empty());
    }

    #[test]
    fn relation_atom_has_only_outputs() {
        let bp = infer_binding_pattern(&QueryExpr::relation("R", &["A", "B"]));
        assert!(bp.input_vars.is_empty());
        assert_eq!(bp.output_vars, set(&["A", "B"]));
    }

    #[test]
    fn simplified_delta_has_trigger_inputs() {
        // Sum_{<>;x*D}(sigma_{y=C} S(C,D))
        let q = QueryExpr::sum(
            &[],
            Term::mul(Term::var("x"), Term::var("D")),
            QueryExpr::select(
                Condition::eq(Term::var("y"), Term::var("C")),
                QueryExpr::relation("S", &["C", "D"]),
            ),
        );
        assert_eq!(infer_binding_pattern(&q).input_vars, set(&["x", "y"]));
    }

    #[test]
    fn schemas() {
        let j = QueryExpr::join(
            QueryExpr::relation("R", &["A", "B"]),
            QueryExpr::relation("S", &["B", "C"]),
        );
        assert_eq!(schema_of(&j).unwrap(), vec!["A", "B", "C"]);
        let s = QueryExpr::sum(&[], Term::one(), j.clone());
        assert!(schema_of(&s).unwrap().is_empty());
        let bad = QueryExpr::union(j, QueryExpr::relation("T", &["A"]));
        assert!(matches!(schema_of(&bad), Err(Error::Structural(_))));
    }

    #[test]
    fn nested_relation_tracking() {
        let nested = QueryExpr::sum(&[], Term::var("B"), QueryExpr::relation("R", &["A", "B"]));
        let q = QueryExpr::select(
            Condition::cmp(Term::var("C"), CmpOp::Lt, Term::agg(nested)),
            QueryExpr::relation("S", &["A", "C"]),
        );
        assert!(q.has_nested_over("R"));
        assert!(!q.has_nested_over("S"));
        assert_eq!(q.relations(), set(&["R", "S"]));
        assert_eq!(q.top_relations(), set(&["S"]));
    }
}
