//! Generalized multiset relations: finite maps from tuples to rational
//! multiplicities, with the ring operations of the query algebra.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_traits::{One, Zero};

use crate::ast::{Condition, NestedEval, Term};
use crate::error::{Error, Result};
use crate::value::{fmt_rational, parse_date, parse_rational, Rational, Value};

pub type Schema = Vec<String>;
pub type Tuple = Vec<Value>;
/// Variable assignment used when evaluating terms and conditions.
pub type Valuation = HashMap<String, Value>;

/// A GMR. Zero-multiplicity tuples are never stored.
#[derive(Clone, Default)]
pub struct Gmr {
    schema: Schema,
    entries: HashMap<Tuple, Rational>,
}

fn check_schema(schema: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for c in schema {
        if !seen.insert(c) {
            return Err(Error::Structural(format!("duplicate column `{}`", c)));
        }
    }
    Ok(())
}

impl Gmr {
    pub fn new(schema: Schema) -> Result<Self> {
        check_schema(&schema)?;
        Ok(Gmr {
            schema,
            entries: HashMap::new(),
        })
    }

    /// The GMR `{<> |-> c}`, or the empty nullary GMR when `c` is zero.
    pub fn scalar(c: Rational) -> Self {
        let mut g = Gmr::default();
        g.add(Vec::new(), c);
        g
    }

    pub fn singleton(schema: Schema, tuple: Tuple, mult: Rational) -> Result<Self> {
        if schema.len() != tuple.len() {
            return Err(Error::Structural(format!(
                "tuple of arity {} for schema of arity {}",
                tuple.len(),
                schema.len()
            )));
        }
        let mut g = Gmr::new(schema)?;
        g.add(tuple, mult);
        Ok(g)
    }

    pub fn from_entries(
        schema: Schema,
        entries: impl IntoIterator<Item = (Tuple, Rational)>,
    ) -> Result<Self> {
        let mut g = Gmr::new(schema)?;
        for (t, m) in entries {
            if t.len() != g.schema.len() {
                return Err(Error::Structural(
                    "tuple arity does not match schema".into(),
                ));
            }
            g.add(t, m);
        }
        Ok(g)
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, t: &[Value]) -> Rational {
        self.entries.get(t).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tuple, &Rational)> {
        self.entries.iter()
    }

    /// Add `m` to the multiplicity of `t`, dropping the entry if it becomes zero.
    pub fn add(&mut self, t: Tuple, m: Rational) {
        if m.is_zero() {
            return;
        }
        use std::collections::hash_map::Entry;
        match self.entries.entry(t) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += m;
                if e.get().is_zero() {
                    e.remove();
                }
            }
            Entry::Vacant(e) => {
                e.insert(m);
            }
        }
    }

    /// Entries sorted by tuple, for deterministic output.
    pub fn sorted(&self) -> Vec<(&Tuple, &Rational)> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Reorder columns to `target`, which must be a permutation of the schema.
    pub fn reorder(&self, target: &[String]) -> Result<Gmr> {
        if target == self.schema.as_slice() {
            return Ok(self.clone());
        }
        let pos: Vec<usize> = target
            .iter()
            .map(|c| {
                self.schema
                    .iter()
                    .position(|s| s == c)
                    .ok_or_else(|| Error::Structural(format!("column `{}` not in schema", c)))
            })
            .collect::<Result<_>>()?;
        if target.len() != self.schema.len() {
            return Err(Error::Structural(
                "reorder target is not a permutation".into(),
            ));
        }
        let mut out = Gmr::new(target.to_vec())?;
        for (t, m) in &self.entries {
            out.entries
                .insert(pos.iter().map(|&i| t[i].clone()).collect(), m.clone());
        }
        Ok(out)
    }

    fn same_columns(&self, other: &Gmr) -> bool {
        let a: BTreeSet<_> = self.schema.iter().collect();
        let b: BTreeSet<_> = other.schema.iter().collect();
        a == b && self.schema.len() == other.schema.len()
    }

    /// `self + other`; the schemas must agree as sets.
    pub fn union(&self, other: &Gmr) -> Result<Gmr> {
        if self.is_empty() && self.schema.is_empty() && !other.schema.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() && other.schema.is_empty() && !self.schema.is_empty() {
            return Ok(self.clone());
        }
        if !self.same_columns(other) {
            return Err(Error::Structural(format!(
                "union of [{}] and [{}]",
                self.schema.join(","),
                other.schema.join(",")
            )));
        }
        let o = other.reorder(&self.schema)?;
        let mut out = self.clone();
        for (t, m) in o.entries {
            out.add(t, m);
        }
        Ok(out)
    }

    pub fn scale(&self, c: &Rational) -> Gmr {
        if c.is_zero() {
            return Gmr {
                schema: self.schema.clone(),
                entries: HashMap::new(),
            };
        }
        Gmr {
            schema: self.schema.clone(),
            entries: self
                .entries
                .iter()
                .map(|(t, m)| (t.clone(), m * c))
                .collect(),
        }
    }

    pub fn negate(&self) -> Gmr {
        self.scale(&-Rational::one())
    }

    /// Natural join on equally named columns; multiplicities multiply.
    pub fn join(&self, other: &Gmr) -> Gmr {
        let shared: Vec<(usize, usize)> = self
            .schema
            .iter()
            .enumerate()
            .filter_map(|(i, c)| other.schema.iter().position(|d| d == c).map(|j| (i, j)))
            .collect();
        let extra: Vec<usize> = (0..other.schema.len())
            .filter(|j| !shared.iter().any(|&(_, s)| s == *j))
            .collect();
        let mut schema = self.schema.clone();
        schema.extend(extra.iter().map(|&j| other.schema[j].clone()));

        let mut index: HashMap<Vec<&Value>, Vec<(&Tuple, &Rational)>> = HashMap::new();
        for (t, m) in &other.entries {
            index
                .entry(shared.iter().map(|&(_, j)| &t[j]).collect())
                .or_default()
                .push((t, m));
        }
        let mut out = Gmr {
            schema,
            entries: HashMap::new(),
        };
        for (t, m) in &self.entries {
            let key: Vec<&Value> = shared.iter().map(|&(i, _)| &t[i]).collect();
            if let Some(matches) = index.get(&key) {
                for (u, n) in matches {
                    let mut row = t.clone();
                    row.extend(extra.iter().map(|&j| u[j].clone()));
                    out.add(row, m * *n);
                }
            }
        }
        out
    }

    fn valuation(&self, t: &[Value], env: &Valuation) -> Valuation {
        let mut v = env.clone();
        for (c, x) in self.schema.iter().zip(t) {
            v.insert(c.clone(), x.clone());
        }
        v
    }

    /// Keep the tuples satisfying `cond`, evaluated with the tuple's columns
    /// layered over `env`.
    pub fn select(
        &self,
        cond: &Condition,
        env: &Valuation,
        nested: &mut NestedEval<'_>,
    ) -> Result<Gmr> {
        let mut out = Gmr::new(self.schema.clone())?;
        for (t, m) in &self.entries {
            let v = self.valuation(t, env);
            let look = |name: &str| v.get(name).cloned();
            if cond.eval(&look, nested)? {
                out.entries.insert(t.clone(), m.clone());
            }
        }
        Ok(out)
    }

    /// `Sum_{group_by; f}`: group on `group_by` and add up `mult * f(tuple)`.
    pub fn sum_aggregate(
        &self,
        group_by: &[String],
        f: &Term,
        env: &Valuation,
        nested: &mut NestedEval<'_>,
    ) -> Result<Gmr> {
        check_schema(group_by)?;
        let mut out = Gmr::new(group_by.to_vec())?;
        for (t, m) in &self.entries {
            let v = self.valuation(t, env);
            let look = |name: &str| v.get(name).cloned();
            let key: Tuple = group_by
                .iter()
                .map(|g| look(g).ok_or_else(|| Error::Binding(g.clone())))
                .collect::<Result<_>>()?;
            let w = if f.is_one() {
                Rational::one()
            } else {
                f.eval_num(&look, nested)?
            };
            out.add(key, m * w);
        }
        Ok(out)
    }

    /// Rename columns by `(from, to)` pairs.
    pub fn rename(&self, mapping: &[(String, String)]) -> Result<Gmr> {
        let schema: Schema = self
            .schema
            .iter()
            .map(|c| {
                mapping
                    .iter()
                    .find(|(f, _)| f == c)
                    .map(|(_, t)| t.clone())
                    .unwrap_or_else(|| c.clone())
            })
            .collect();
        check_schema(&schema)?;
        Ok(Gmr {
            schema,
            entries: self.entries.clone(),
        })
    }

    /// Multiplicity of the empty tuple of a nullary GMR.
    pub fn scalar_value(&self) -> Rational {
        self.get(&[])
    }

    /// Serialize as `col=value<TAB>...<TAB>|-> num/den` lines sorted by tuple.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, m) in self.sorted() {
            for (c, v) in self.schema.iter().zip(t) {
                s.push_str(&format!("{}={:?}\t", c, v));
            }
            s.push_str(&format!("|-> {}\n", fmt_rational(m)));
        }
        s
    }

    /// Parse the output of [`Gmr::to_text`]. `schema` fixes the column order,
    /// which matters when the text is empty.
    pub fn from_text(schema: Schema, text: &str) -> Result<Gmr> {
        let mut g = Gmr::new(schema)?;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (cols, mult) = line
                .rsplit_once("|->")
                .ok_or_else(|| Error::parse(ln + 1, 1, "missing `|->`"))?;
            let m =
                parse_rational(mult).ok_or_else(|| Error::parse(ln + 1, 1, "bad multiplicity"))?;
            let mut row: HashMap<&str, Value> = HashMap::new();
            for cell in cols.split('\t').map(str::trim).filter(|c| !c.is_empty()) {
                let (c, v) = cell
                    .split_once('=')
                    .ok_or_else(|| Error::parse(ln + 1, 1, format!("bad cell `{}`", cell)))?;
                row.insert(
                    c,
                    parse_value(v)
                        .ok_or_else(|| Error::parse(ln + 1, 1, format!("bad value `{}`", v)))?,
                );
            }
            let t: Tuple = g
                .schema
                .iter()
                .map(|c| {
                    row.remove(c.as_str())
                        .ok_or_else(|| Error::Structural(format!("missing column `{}`", c)))
                })
                .collect::<Result<_>>()?;
            if !row.is_empty() {
                return Err(Error::Structural(
                    "extra columns in serialized tuple".into(),
                ));
            }
            g.add(t, m);
        }
        Ok(g)
    }
}

/// Parse a value in its debug rendering: `'text'`, `#YYYY-MM-DD` or a number.
pub fn parse_value(s: &str) -> Option<Value> {
    let s = s.trim();
    if let Some(body) = s.strip_prefix('\'').and_then(|r| r.strip_suffix('\'')) {
        return Some(Value::str(body));
    }
    if let Some(d) = s.strip_prefix('#') {
        return parse_date(d).map(Value::Date);
    }
    parse_rational(s).map(Value::Num)
}

impl PartialEq for Gmr {
    fn eq(&self, other: &Gmr) -> bool {
        if self.is_empty() && other.is_empty() {
            return true;
        }
        self.same_columns(other)
            && other
                .reorder(&self.schema)
                .map(|o| o.entries == self.entries)
                .unwrap_or(false)
    }
}

impl fmt::Debug for Gmr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (t, m)) in self.sorted().into_iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            let cells: Vec<String> = self
                .schema
                .iter()
                .zip(t)
                .map(|(c, v)| format!("{}:{:?}", c, v))
                .collect();
            write!(f, "<{}> -> {}", cells.join(" "), fmt_rational(m))?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{rat, ratio};
    use proptest::prelude::*;

    fn s(cols: &[&str]) -> Schema {
        cols.iter().map(|c| c.to_string()).collect()
    }

    fn g(cols: &[&str], rows: &[(&[&str], i64)]) -> Gmr {
        Gmr::from_entries(
            s(cols),
            rows.iter()
                .map(|(t, m)| (t.iter().map(|v| Value::str(v)).collect(), rat(*m))),
        )
        .unwrap()
    }

    fn no_nested() -> impl FnMut(&crate::ast::QueryExpr) -> Result<Rational> {
        |_| Err(Error::Compile("no nested".into()))
    }

    fn three_relations() -> (Gmr, Gmr, Gmr) {
        let r = Gmr::from_entries(
            s(&["A", "B"]),
            vec![
                (vec![Value::str("a"), Value::str("b1")], rat(2)),
                (vec![Value::str("a"), Value::str("b2")], rat(-3)),
            ],
        )
        .unwrap();
        let s1 = g(
            &["B", "C"],
            &[(&["b1", "c1"], 2), (&["b1", "c2"], -7), (&["b2", "c1"], 3)],
        );
        let s2 = g(&["B", "C"], &[(&["b1", "c1"], 3), (&["b2", "c1"], -14)]);
        (r, s1, s2)
    }

    #[test]
    fn union_join_aggregate_pipeline() {
        let (r, s1, s2) = three_relations();
        let u = s1.union(&s2).unwrap();
        assert_eq!(
            u,
            g(
                &["B", "C"],
                &[
                    (&["b1", "c1"], 5),
                    (&["b1", "c2"], -7),
                    (&["b2", "c1"], -11)
                ]
            )
        );
        let j = r.join(&u);
        assert_eq!(j.schema(), &s(&["A", "B", "C"])[..]);
        assert_eq!(
            j,
            g(
                &["A", "B", "C"],
                &[
                    (&["a", "b1", "c1"], 10),
                    (&["a", "b1", "c2"], -14),
                    (&["a", "b2", "c1"], 33)
                ]
            )
        );
        let agg = j
            .sum_aggregate(
                &s(&["A", "C"]),
                &Term::rational(ratio(1, 2)),
                &Valuation::new(),
                &mut no_nested(),
            )
            .unwrap();
        assert_eq!(agg.get(&[Value::str("a"), Value::str("c1")]), ratio(43, 2));
        assert_eq!(agg.get(&[Value::str("a"), Value::str("c2")]), rat(-7));
        assert_eq!(agg.len(), 2);
    }

    #[test]
    fn union_schema_mismatch_is_an_error() {
        let a = g(&["A"], &[(&["x"], 1)]);
        let b = g(&["B"], &[(&["x"], 1)]);
        assert!(matches!(a.union(&b), Err(Error::Structural(_))));
    }

    #[test]
    fn union_aligns_column_order() {
        let a = g(&["A", "B"], &[(&["x", "y"], 1)]);
        let b = g(&["B", "A"], &[(&["y", "x"], -1)]);
        assert!(a.union(&b).unwrap().is_empty());
    }

    #[test]
    fn text_round_trip() {
        let (r, _, _) = three_relations();
        let text = r.to_text();
        assert_eq!(text, "A='a'\tB='b1'\t|-> 2\nA='a'\tB='b2'\t|-> -3\n");
        assert_eq!(Gmr::from_text(s(&["A", "B"]), &text).unwrap(), r);
    }

    #[test]
    fn duplicate_columns_rejected() {
        assert!(Gmr::new(s(&["A", "A"])).is_err());
    }

    fn arb_gmr(cols: &'static [&'static str]) -> impl Strategy<Value = Gmr> {
        prop::collection::vec((prop::collection::vec(0i64..3, cols.len()), -3i64..4), 0..8)
            .prop_map(move |rows| {
                Gmr::from_entries(
                    s(cols),
                    rows.into_iter()
                        .map(|(t, m)| (t.into_iter().map(Value::int).collect(), rat(m))),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn never_stores_zero(a in arb_gmr(&["A", "B"]), b in arb_gmr(&["A", "B"])) {
            let u = a.union(&b).unwrap().union(&b.negate()).unwrap();
            prop_assert!(u.iter().all(|(_, m)| !m.is_zero()));
            prop_assert_eq!(u, a);
        }

        #[test]
        fn union_commutes_and_has_inverses(a in arb_gmr(&["A", "B"]), b in arb_gmr(&["A", "B"])) {
            prop_assert_eq!(a.union(&b).unwrap(), b.union(&a).unwrap());
            prop_assert!(a.union(&a.negate()).unwrap().is_empty());
        }

        #[test]
        fn join_distributes_over_union(
            a in arb_gmr(&["A", "B"]),
            b in arb_gmr(&["B", "C"]),
            c in arb_gmr(&["B", "C"]),
        ) {
            let lhs = a.join(&b.union(&c).unwrap());
            let rhs = a.join(&b).union(&a.join(&c)).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn join_commutes(a in arb_gmr(&["A", "B"]), b in arb_gmr(&["B", "C"])) {
            prop_assert_eq!(a.join(&b), b.join(&a));
        }

        #[test]
        fn aggregation_is_linear(a in arb_gmr(&["A", "B"]), b in arb_gmr(&["A", "B"])) {
            let f = Term::var("B");
            let env = Valuation::new();
            let sum = |x: &Gmr| x.sum_aggregate(&s(&["A"]), &f, &env, &mut no_nested()).unwrap();
            prop_assert_eq!(sum(&a.union(&b).unwrap()), sum(&a).union(&sum(&b)).unwrap());
        }
    }
}
