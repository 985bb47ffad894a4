//! A brute-force reference evaluator.
//!
//! Every subexpression is materialized bottom-up as a [`Gmr`]. Joins whose
//! right side depends on the left side's columns are evaluated as nested
//! loops, once per left tuple. Nested aggregates are recomputed per tuple,
//! memoized on the values of the variables they mention.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};

use num_traits::Zero;

use crate::ast::{Condition, QueryExpr, Term};
use crate::error::{Error, Result};
use crate::gmr::{Gmr, Tuple, Valuation};
use crate::value::{Rational, Value};

pub type Database = HashMap<String, Gmr>;

/// Evaluate a closed query over base relations.
pub fn oracle(q: &QueryExpr, db: &Database) -> Result<Gmr> {
    oracle_in(q, db, &Valuation::new())
}

/// Evaluate `q` with the variables of `env` bound.
pub fn oracle_in(q: &QueryExpr, db: &Database, env: &Valuation) -> Result<Gmr> {
    Oracle {
        db,
        memo: RefCell::new(HashMap::new()),
        mentions: RefCell::new(HashMap::new()),
    }
    .eval(q, env)
}

type MemoKey = (usize, Vec<(String, Value)>);

struct Oracle<'a> {
    db: &'a Database,
    memo: RefCell<HashMap<MemoKey, Rational>>,
    mentions: RefCell<HashMap<usize, Vec<String>>>,
}

/// Variables an expression may take from its surroundings: its input
/// variables and anything mentioned by a nested aggregate.
fn needs(q: &QueryExpr) -> BTreeSet<String> {
    let mut out = q.input_vars();
    collect_nested_mentions(q, &mut out);
    out
}

fn collect_nested_mentions(q: &QueryExpr, out: &mut BTreeSet<String>) {
    let term = |t: &Term, out: &mut BTreeSet<String>| {
        let mut qs = Vec::new();
        t.nested_aggs(&mut qs);
        for n in qs {
            out.extend(n.all_vars());
        }
    };
    match q {
        QueryExpr::Relation { .. } | QueryExpr::View { .. } => {}
        QueryExpr::Singleton { columns, mult } => {
            term(mult, out);
            for (_, t) in columns {
                term(t, out);
            }
        }
        QueryExpr::Join(a, b) | QueryExpr::Union(a, b) => {
            collect_nested_mentions(a, out);
            collect_nested_mentions(b, out);
        }
        QueryExpr::Select { cond, child } => {
            for n in cond.nested_aggs() {
                out.extend(n.all_vars());
            }
            collect_nested_mentions(child, out);
        }
        QueryExpr::SumAgg { f, child, .. } => {
            term(f, out);
            collect_nested_mentions(child, out);
        }
        QueryExpr::Rename { child, .. } => collect_nested_mentions(child, out),
    }
}

fn bind(v: &mut Valuation, schema: &[String], t: &[Value]) {
    for (c, x) in schema.iter().zip(t) {
        match v.get_mut(c) {
            Some(slot) => *slot = x.clone(),
            None => {
                v.insert(c.clone(), x.clone());
            }
        }
    }
}

impl Oracle<'_> {
    fn nested(&self, n: &QueryExpr, env: &Valuation) -> Result<Rational> {
        let id = n as *const QueryExpr as usize;
        let key: Vec<(String, Value)> = {
            let mut mentions = self.mentions.borrow_mut();
            let vars = mentions
                .entry(id)
                .or_insert_with(|| n.all_vars().into_iter().collect());
            vars.iter()
                .filter_map(|v| env.get(v).map(|x| (v.clone(), x.clone())))
                .collect()
        };
        let key = (id, key);
        if let Some(r) = self.memo.borrow().get(&key) {
            return Ok(r.clone());
        }
        let g = self.eval(n, env)?;
        let mut total = Rational::zero();
        for (_, m) in g.iter() {
            total += m;
        }
        self.memo.borrow_mut().insert(key, total.clone());
        Ok(total)
    }

    fn term(&self, t: &Term, env: &Valuation) -> Result<Value> {
        let look = |name: &str| env.get(name).cloned();
        t.eval(&look, &mut |n| self.nested(n, env))
    }

    fn cond(&self, c: &Condition, env: &Valuation) -> Result<bool> {
        let look = |name: &str| env.get(name).cloned();
        c.eval(&look, &mut |n| self.nested(n, env))
    }

    fn eval(&self, q: &QueryExpr, env: &Valuation) -> Result<Gmr> {
        match q {
            QueryExpr::Relation { name, vars } => {
                let schema = q.schema()?;
                let mut out = Gmr::new(schema)?;
                let Some(rel) = self.db.get(name) else {
                    return Ok(out);
                };
                if rel.schema().len() != vars.len() {
                    return Err(Error::Structural(format!(
                        "{} has arity {}",
                        name,
                        rel.schema().len()
                    )));
                }
                let fixed: Vec<(usize, &Value)> = vars
                    .iter()
                    .enumerate()
                    .filter_map(|(i, v)| env.get(v).map(|x| (i, x)))
                    .collect();
                // position of each variable's first occurrence
                let first: Vec<usize> = vars
                    .iter()
                    .map(|v| vars.iter().position(|w| w == v).unwrap())
                    .collect();
                let keep: Vec<usize> = (0..vars.len()).filter(|&i| first[i] == i).collect();
                for (t, m) in rel.iter() {
                    if fixed.iter().all(|(i, x)| t[*i] == **x)
                        && first.iter().enumerate().all(|(i, &j)| t[i] == t[j])
                    {
                        out.add(keep.iter().map(|&i| t[i].clone()).collect(), m.clone());
                    }
                }
                Ok(out)
            }
            QueryExpr::View { name, .. } => Err(Error::Unsupported(format!(
                "the reference evaluator reads base relations only (view {})",
                name
            ))),
            QueryExpr::Singleton { columns, mult } => {
                let schema: Vec<String> = columns.iter().map(|(c, _)| c.clone()).collect();
                let m = self.term(mult, env)?.into_num()?;
                let mut t: Tuple = Vec::with_capacity(columns.len());
                for (_, x) in columns {
                    t.push(self.term(x, env)?);
                }
                Gmr::singleton(schema, t, m)
            }
            QueryExpr::Join(a, b) => {
                let sa = a.schema()?;
                let sb = b.schema()?;
                let b_dep = needs(b)
                    .iter()
                    .any(|v| sa.contains(v) && !env.contains_key(v));
                let a_dep = needs(a)
                    .iter()
                    .any(|v| sb.contains(v) && !env.contains_key(v));
                match (a_dep, b_dep) {
                    (false, false) => Ok(self.eval(a, env)?.join(&self.eval(b, env)?)),
                    (false, true) => self.dependent_join(a, b, env),
                    (true, false) => {
                        let g = self.dependent_join(b, a, env)?;
                        g.reorder(&q.schema()?)
                    }
                    (true, true) => Err(Error::Binding(format!(
                        "join sides depend on each other: {} and {}",
                        a, b
                    ))),
                }
            }
            QueryExpr::Union(a, b) => self.eval(a, env)?.union(&self.eval(b, env)?),
            QueryExpr::Select { cond, child } => {
                let g = self.eval(child, env)?;
                let mut out = Gmr::new(g.schema().to_vec())?;
                let mut v = env.clone();
                for (t, m) in g.iter() {
                    bind(&mut v, g.schema(), t);
                    if self.cond(cond, &v)? {
                        out.add(t.clone(), m.clone());
                    }
                }
                Ok(out)
            }
            QueryExpr::SumAgg { group_by, f, child } => {
                let g = self.eval(child, env)?;
                let mut out = Gmr::new(group_by.clone())?;
                let mut v = env.clone();
                for (t, m) in g.iter() {
                    bind(&mut v, g.schema(), t);
                    let key: Tuple = group_by
                        .iter()
                        .map(|c| v.get(c).cloned().ok_or_else(|| Error::Binding(c.clone())))
                        .collect::<Result<_>>()?;
                    let w = self.term(f, &v)?.into_num()?;
                    out.add(key, m * w);
                }
                Ok(out)
            }
            QueryExpr::Rename { mapping, child } => self.eval(child, env)?.rename(mapping),
        }
    }

    /// `a ⋈ b` where `b` is re-evaluated for every tuple of `a`.
    fn dependent_join(&self, a: &QueryExpr, b: &QueryExpr, env: &Valuation) -> Result<Gmr> {
        let ga = self.eval(a, env)?;
        let mut schema = ga.schema().to_vec();
        for c in b.schema()? {
            if !schema.contains(&c) {
                schema.push(c);
            }
        }
        let mut out = Gmr::new(schema)?;
        let mut v = env.clone();
        for (t, m) in ga.iter() {
            bind(&mut v, ga.schema(), t);
            let left = Gmr::singleton(ga.schema().to_vec(), t.clone(), m.clone())?;
            let joined = left.join(&self.eval(b, &v)?);
            for (u, n) in joined.iter() {
                out.add(u.clone(), n.clone());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::vtq::parse_query;
    use crate::gmr::parse_value;
    use crate::value::rat;

    fn rel(cols: &[&str], rows: &[(&[&str], i64)]) -> Gmr {
        Gmr::from_entries(
            cols.iter().map(|c| c.to_string()).collect(),
            rows.iter().map(|(t, m)| {
                let t = t
                    .iter()
                    .map(|x| parse_value(x).unwrap_or_else(|| Value::str(x)))
                    .collect();
                (t, rat(*m))
            }),
        )
        .unwrap()
    }

    #[test]
    fn repeated_atom_variables_compare_columns() {
        let mut db = Database::new();
        db.insert(
            "R".into(),
            rel(
                &["x", "y"],
                &[(&["1", "1"], 2), (&["1", "2"], 5), (&["3", "3"], -1)],
            ),
        );
        let q = parse_query("(sum (A) 1 (rel R A A))").unwrap();
        let g = oracle(&q, &db).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(&[Value::int(1)]), rat(2));
        assert_eq!(g.get(&[Value::int(3)]), rat(-1));
        let src = crate::runtime::MemorySource::new(&db);
        assert_eq!(
            crate::runtime::evaluate(&q, &src, &Valuation::new()).unwrap(),
            g
        );
    }

    #[test]
    fn union_then_join_multiplies_multiplicities() {
        let mut db = Database::new();
        db.insert(
            "R".into(),
            rel(&["A", "B"], &[(&["a", "b1"], 2), (&["a", "b2"], -3)]),
        );
        db.insert(
            "S".into(),
            rel(
                &["B", "C"],
                &[(&["b1", "c1"], 2), (&["b1", "c2"], -3), (&["b2", "c1"], 4)],
            ),
        );
        db.insert(
            "T".into(),
            rel(
                &["B", "C"],
                &[
                    (&["b1", "c1"], 3),
                    (&["b1", "c2"], -4),
                    (&["b2", "c1"], -15),
                ],
            ),
        );
        let u = oracle(
            &parse_query("(union (rel S B C) (rel T B C))").unwrap(),
            &db,
        )
        .unwrap();
        assert_eq!(u.get(&[Value::str("b1"), Value::str("c1")]), rat(5));
        assert_eq!(u.get(&[Value::str("b1"), Value::str("c2")]), rat(-7));
        assert_eq!(u.get(&[Value::str("b2"), Value::str("c1")]), rat(-11));
        let j = oracle(
            &parse_query("(join (rel R A B) (union (rel S B C) (rel T B C)))").unwrap(),
            &db,
        )
        .unwrap();
        assert_eq!(
            j.get(&[Value::str("a"), Value::str("b1"), Value::str("c1")]),
            rat(10)
        );
        assert_eq!(
            j.get(&[Value::str("a"), Value::str("b2"), Value::str("c1")]),
            rat(33)
        );
    }

    #[test]
    fn empty_database_gives_empty_results() {
        let q = parse_query("(sum (A) 1 (join (rel R A B) (rel S B C)))").unwrap();
        assert!(oracle(&q, &Database::new()).unwrap().is_empty());
    }

    #[test]
    fn correlated_nested_aggregates() {
        let mut db = Database::new();
        db.insert(
            "R".into(),
            rel(&["A"], &[(&["1"], 1), (&["2"], 1), (&["3"], 1)]),
        );
        // count of R tuples at most A, for each A
        let q = parse_query("(sum (A) (agg (sum () 1 (select (<= A2 A) (rel R A2)))) (rel R A))")
            .unwrap();
        let g = oracle(&q, &db).unwrap();
        assert_eq!(g.get(&[Value::int(3)]), rat(3));
        assert_eq!(g.get(&[Value::int(1)]), rat(1));
    }
}
