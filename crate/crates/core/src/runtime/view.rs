use std::collections::{HashMap, HashSet};

use num_traits::Zero;

use crate::gmr::{Gmr, Tuple};
use crate::value::{Rational, Value};

/// Secondary index over a subset of key positions.
#[derive(Clone, Debug, Default)]
struct Index {
    positions: Vec<usize>,
    map: HashMap<Vec<Value>, HashSet<Tuple>>,
}

impl Index {
    fn key(&self, t: &[Value]) -> Vec<Value> {
        self.positions.iter().map(|&i| t[i].clone()).collect()
    }
}

/// In-memory storage of a view or base relation: a map from key tuples to
/// multiplicities plus secondary indexes for partial-key access.
#[derive(Clone, Debug, Default)]
pub struct ViewMap {
    arity: usize,
    data: HashMap<Tuple, Rational>,
    indexes: Vec<Index>,
}

impl ViewMap {
    pub fn new(arity: usize) -> Self {
        ViewMap {
            arity,
            data: HashMap::new(),
            indexes: Vec::new(),
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, t: &[Value]) -> Option<&Rational> {
        self.data.get(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tuple, &Rational)> {
        self.data.iter()
    }

    /// An empty map with the same arity and index layout.
    pub fn empty_like(&self) -> ViewMap {
        ViewMap {
            arity: self.arity,
            data: HashMap::new(),
            indexes: self
                .indexes
                .iter()
                .map(|ix| Index {
                    positions: ix.positions.clone(),
                    map: HashMap::new(),
                })
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        self.data.clear();
        for ix in &mut self.indexes {
            ix.map.clear();
        }
    }

    /// Add `delta` to the entry for `t`; entries that reach zero are removed.
    /// Returns the previous multiplicity.
    pub fn add(&mut self, t: Tuple, delta: &Rational) -> Rational {
        if delta.is_zero() {
            return self.data.get(&t).cloned().unwrap_or_else(Rational::zero);
        }
        match self.data.get_mut(&t) {
            Some(m) => {
                let old = m.clone();
                *m += delta;
                if m.is_zero() {
                    self.data.remove(&t);
                    for ix in &mut self.indexes {
                        let k = ix.key(&t);
                        if let Some(set) = ix.map.get_mut(&k) {
                            set.remove(&t);
                            if set.is_empty() {
                                ix.map.remove(&k);
                            }
                        }
                    }
                }
                old
            }
            None => {
                for ix in &mut self.indexes {
                    let k = ix.key(&t);
                    ix.map.entry(k).or_default().insert(t.clone());
                }
                self.data.insert(t, delta.clone());
                Rational::zero()
            }
        }
    }

    /// Overwrite the entry for `t` (zero removes it).
    pub fn set(&mut self, t: Tuple, value: Rational) {
        let old = self.data.get(&t).cloned().unwrap_or_else(Rational::zero);
        let d = value - old;
        self.add(t, &d);
    }

    /// Make sure an index over `positions` exists.
    pub fn ensure_index(&mut self, positions: &[usize]) {
        if positions.is_empty()
            || positions.len() == self.arity
            || self.indexes.iter().any(|ix| ix.positions == positions)
        {
            return;
        }
        let mut ix = Index {
            positions: positions.to_vec(),
            map: HashMap::new(),
        };
        for t in self.data.keys() {
            let k = ix.key(t);
            ix.map.entry(k).or_default().insert(t.clone());
        }
        self.indexes.push(ix);
    }

    pub fn has_index(&self, positions: &[usize]) -> bool {
        self.indexes.iter().any(|ix| ix.positions == positions)
    }

    /// Visit every entry whose `positions` equal `key`. Uses a point lookup, a
    /// secondary index, or a filtered scan, whichever applies.
    pub fn for_each_match(
        &self,
        positions: &[usize],
        key: &[Value],
        f: &mut dyn FnMut(&Tuple, &Rational) -> crate::Result<()>,
    ) -> crate::Result<usize> {
        if positions.is_empty() {
            for (t, m) in &self.data {
                f(t, m)?;
            }
            return Ok(self.data.len());
        }
        if positions.len() == self.arity && positions.iter().enumerate().all(|(i, &p)| i == p) {
            if let Some((t, m)) = self.data.get_key_value(key) {
                f(t, m)?;
                return Ok(1);
            }
            return Ok(0);
        }
        if let Some(ix) = self.indexes.iter().find(|ix| ix.positions == positions) {
            let mut n = 0;
            if let Some(set) = ix.map.get(key) {
                for t in set {
                    if let Some(m) = self.data.get(t) {
                        f(t, m)?;
                        n += 1;
                    }
                }
            }
            return Ok(n);
        }
        let mut n = 0;
        for (t, m) in &self.data {
            if positions.iter().zip(key).all(|(&p, k)| &t[p] == k) {
                f(t, m)?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn to_gmr(&self, schema: Vec<String>) -> crate::Result<Gmr> {
        Gmr::from_entries(
            schema,
            self.data.iter().map(|(t, m)| (t.clone(), m.clone())),
        )
    }

    pub fn from_gmr(g: &Gmr) -> Self {
        let mut v = ViewMap::new(g.schema().len());
        for (t, m) in g.iter() {
            v.data.insert(t.clone(), m.clone());
        }
        v
    }

    /// Approximate number of stored entries including index entries.
    pub fn footprint(&self) -> usize {
        self.data.len() * (1 + self.indexes.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::rat;

    fn t(xs: &[i64]) -> Tuple {
        xs.iter().map(|&x| Value::int(x)).collect()
    }

    #[test]
    fn indexes_follow_updates() {
        let mut v = ViewMap::new(2);
        v.add(t(&[1, 2]), &rat(3));
        v.ensure_index(&[0]);
        v.add(t(&[1, 3]), &rat(1));
        v.add(t(&[2, 3]), &rat(1));
        let mut seen = Vec::new();
        v.for_each_match(&[0], &t(&[1]), &mut |tu, m| {
            seen.push((tu.clone(), m.clone()));
            Ok(())
        })
        .unwrap();
        seen.sort();
        assert_eq!(seen, vec![(t(&[1, 2]), rat(3)), (t(&[1, 3]), rat(1))]);
        v.add(t(&[1, 2]), &rat(-3));
        assert_eq!(v.len(), 2);
        let mut n = 0;
        v.for_each_match(&[0], &t(&[1]), &mut |_, _| {
            n += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn unindexed_access_falls_back_to_a_scan() {
        let mut v = ViewMap::new(2);
        v.add(t(&[1, 2]), &rat(1));
        v.add(t(&[2, 2]), &rat(1));
        let n = v
            .for_each_match(&[1], &t(&[2]), &mut |_, _| Ok(()))
            .unwrap();
        assert_eq!(n, 2);
    }
}
