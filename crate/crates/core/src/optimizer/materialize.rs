//! Splitting a normalized query into a residual over materialized views.
//!
//! Each monomial is partitioned relative to the variables bound from outside
//! (trigger parameters and cache loop variables). Factors over bound variables
//! alone stay in the residual, nested aggregates that cannot live inside a view
//! are materialized on their own, and the remaining factors are grouped into
//! connected components that each become one view request.

use std::collections::BTreeSet;

use super::{Policy, Trace};
use crate::ast::{QueryExpr, Term};
use crate::delta::{range_restriction, Event, Sign};
use crate::error::{Error, Result};
use crate::poly::{components, fresh_name, merge_monos, Factor, Mono, Poly};

/// A view the residual refers to by a placeholder name.
#[derive(Clone, Debug)]
pub struct ViewRequest {
    pub placeholder: String,
    /// Output columns are the cache parameters followed by the keys.
    pub definition: Poly,
    pub params: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Place {
    Inside,
    Outside,
    /// Outside after its nested aggregates are materialized separately.
    Decorrelate,
}

struct Split {
    bound: BTreeSet<String>,
    locals: BTreeSet<String>,
    places: Vec<Place>,
}

pub struct Materializer<'a> {
    policy: Policy,
    /// Updatable relations and the parameter names of their events.
    events: &'a [(String, Vec<String>)],
    pub requests: Vec<ViewRequest>,
    pub trace: Trace,
}

impl<'a> Materializer<'a> {
    pub fn new(policy: Policy, events: &'a [(String, Vec<String>)]) -> Self {
        Materializer {
            policy,
            events,
            requests: Vec::new(),
            trace: Trace::default(),
        }
    }

    /// Rewrite `p` into a residual over requested views; `bound` are the
    /// variables supplied when the residual is evaluated.
    pub fn materialize(&mut self, p: &Poly, bound: &BTreeSet<String>) -> Result<Poly> {
        if self.policy.decompose {
            for m in &p.monos {
                if self.splits_apart(m, &p.out, bound) {
                    self.trace.decomposed = true;
                }
            }
        }
        let work = if self.policy.expand {
            let e = p.expand().simplify(bound);
            if e.monos.len() > p.monos.len() {
                self.trace.expanded = true;
            }
            e
        } else {
            p.clone()
        };
        let mut monos = Vec::new();
        for m in &work.monos {
            monos.push(self.mono(m, &work.out, bound)?);
        }
        Ok(Poly {
            out: work.out.clone(),
            monos: merge_monos(monos),
        })
    }

    fn incrementalizable(&self, f: &Factor, scope: &BTreeSet<String>) -> Result<bool> {
        for n in f.nested_aggs() {
            for rel in n.relations() {
                let Some((_, params)) = self.events.iter().find(|(r, _)| r == &rel) else {
                    continue;
                };
                let refs: Vec<&str> = params.iter().map(String::as_str).collect();
                let ev = Event::new(&rel, Sign::Insert, &refs);
                if range_restriction(&[n], &ev, scope)?.is_empty() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    fn split(&self, m: &Mono, out: &[String], bound: &BTreeSet<String>) -> Result<Split> {
        let mut ob = bound.clone();
        loop {
            let mut changed = false;
            for f in &m.factors {
                if let Factor::Lift { var, .. } = f {
                    if !ob.contains(var) && f.relations().is_empty() && f.refs().is_subset(&ob) {
                        ob.insert(var.clone());
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let locals: BTreeSet<String> = m.bound_here().difference(&ob).cloned().collect();
        let mut scope = ob.clone();
        scope.extend(locals.iter().cloned());
        scope.extend(out.iter().cloned());
        let mut places = Vec::new();
        for f in &m.factors {
            let refs: BTreeSet<String> = f.refs().intersection(&scope).cloned().collect();
            let uses_bound = refs.iter().any(|v| ob.contains(v));
            let uses_local = refs.iter().any(|v| locals.contains(v));
            let place = match f {
                Factor::Rel { .. } => Place::Inside,
                Factor::View { .. } => Place::Outside,
                Factor::Lift { var, .. } if ob.contains(var) => Place::Outside,
                _ if !f.relations().is_empty() => {
                    if matches!(f, Factor::Lift { .. })
                        || !self.policy.decorrelate
                        || (!uses_bound && self.incrementalizable(f, &scope)?)
                    {
                        Place::Inside
                    } else {
                        Place::Decorrelate
                    }
                }
                _ if !uses_local => Place::Outside,
                _ if uses_bound && self.policy.extract_inputs => Place::Outside,
                _ => Place::Inside,
            };
            places.push(place);
        }
        Ok(Split {
            bound: ob,
            locals,
            places,
        })
    }

    /// Whether the monomial's relational part falls into several independent
    /// pieces once bound variables no longer connect them.
    fn splits_apart(&self, m: &Mono, out: &[String], bound: &BTreeSet<String>) -> bool {
        let Ok(s) = self.split(m, out, bound) else {
            return false;
        };
        let nodes: Vec<Factor> = m
            .factors
            .iter()
            .zip(&s.places)
            .filter(|(f, p)| {
                **p != Place::Outside
                    || !f.relations().is_empty()
                    || f.refs().iter().any(|v| s.locals.contains(v))
            })
            .map(|(f, _)| f.clone())
            .collect();
        let locals = &s.locals;
        components(&nodes, &|v| locals.contains(v)).len() > 1
    }

    fn mono(&mut self, m: &Mono, out: &[String], bound: &BTreeSet<String>) -> Result<Mono> {
        let s = self.split(m, out, bound)?;
        let mut scope = s.bound.clone();
        scope.extend(s.locals.iter().cloned());
        scope.extend(out.iter().cloned());

        let mut outside: Vec<Factor> = Vec::new();
        let mut inside: Vec<Factor> = Vec::new();
        for (f, place) in m.factors.iter().zip(&s.places) {
            let refs_local = f.refs().iter().any(|v| s.locals.contains(v));
            match place {
                Place::Inside => {
                    if !matches!(f, Factor::Rel { .. })
                        && f.refs().iter().any(|v| s.bound.contains(v))
                    {
                        self.trace.input_vars.insert('C');
                    }
                    inside.push(f.clone());
                }
                Place::Outside => {
                    if refs_local {
                        self.trace.input_vars.insert('S');
                    }
                    outside.push(f.clone());
                }
                Place::Decorrelate => {
                    if refs_local || f.refs().iter().any(|v| s.bound.contains(v)) {
                        self.trace.input_vars.insert('S');
                    }
                    outside.push(self.decorrelate(f, &scope)?);
                }
            }
        }

        // factors whose variables are not all available inside the view move out
        loop {
            let binds: BTreeSet<String> = inside
                .iter()
                .flat_map(|f| f.binds())
                .map(str::to_string)
                .collect();
            let outside_binds: BTreeSet<String> = outside
                .iter()
                .flat_map(|f| f.binds())
                .map(str::to_string)
                .collect();
            let stray = inside.iter().position(|f| {
                f.refs().iter().any(|v| {
                    scope.contains(v)
                        && !binds.contains(v)
                        && !s.bound.contains(v)
                        && outside_binds.contains(v)
                })
            });
            match stray {
                Some(i) => outside.push(inside.remove(i)),
                None => break,
            }
        }

        let groups: Vec<Vec<usize>> = if inside.is_empty() {
            Vec::new()
        } else if self.policy.decompose {
            let locals = &s.locals;
            components(&inside, &|v| locals.contains(v))
        } else {
            vec![(0..inside.len()).collect()]
        };

        let mut needed: BTreeSet<String> = out.iter().cloned().collect();
        for f in &outside {
            needed.extend(f.refs());
            needed.extend(f.binds().into_iter().map(str::to_string));
        }

        let mut used: BTreeSet<String> = m.mentions();
        used.extend(out.iter().cloned());
        let mut residual = outside;
        for g in groups {
            let factors: Vec<Factor> = g.iter().map(|&i| inside[i].clone()).collect();
            if factors.iter().all(|f| f.relations().is_empty()) {
                residual.extend(factors);
                continue;
            }
            residual.push(self.request(factors, out, &s, &needed, &mut used));
        }
        Ok(Mono {
            coef: m.coef.clone(),
            factors: residual,
        })
    }

    fn request(
        &mut self,
        mut factors: Vec<Factor>,
        out: &[String],
        s: &Split,
        needed: &BTreeSet<String>,
        used: &mut BTreeSet<String>,
    ) -> Factor {
        let binds: BTreeSet<String> = factors
            .iter()
            .flat_map(|f| f.binds())
            .map(str::to_string)
            .collect();
        let mut params: Vec<String> = Vec::new();
        for f in &factors {
            if matches!(f, Factor::Rel { .. }) {
                continue;
            }
            for v in f.refs() {
                if s.bound.contains(&v) && !binds.contains(&v) && !params.contains(&v) {
                    params.push(v);
                }
            }
        }
        params.sort();

        let mut keys: Vec<String> = Vec::new();
        for v in out {
            if binds.contains(v) && !s.bound.contains(v) && !keys.contains(v) {
                keys.push(v.clone());
            }
        }
        for v in &binds {
            if needed.contains(v) && !s.bound.contains(v) && !keys.contains(v) {
                keys.push(v.clone());
            }
        }
        let mut args = keys.clone();

        // bound variables in binding positions become key columns
        for v in &binds {
            if s.bound.contains(v) && !params.contains(v) {
                let g = fresh_name(&v.to_uppercase(), used);
                used.insert(g.clone());
                factors = factors.iter().map(|f| f.rename(v, &g)).collect();
                keys.push(g);
                args.push(v.clone());
            }
        }

        let placeholder = format!("#{}", self.requests.len());
        let mut def_out = params.clone();
        def_out.extend(keys.iter().cloned());
        let pset: BTreeSet<String> = params.iter().cloned().collect();
        let definition = Poly {
            out: def_out,
            monos: vec![Mono {
                coef: num_traits::One::one(),
                factors,
            }],
        }
        .simplify(&pset);
        let mut read = params.clone();
        read.extend(args);
        self.requests.push(ViewRequest {
            placeholder: placeholder.clone(),
            definition,
            params,
        });
        Factor::View {
            name: placeholder,
            keys: read,
        }
    }

    fn decorrelate(&mut self, f: &Factor, scope: &BTreeSet<String>) -> Result<Factor> {
        let mut err: Option<Error> = None;
        let out = f.replace_nested(&mut |n: &QueryExpr| {
            if err.is_some() || n.relations().is_empty() {
                return Term::agg(n.clone());
            }
            match self.nested(n, scope) {
                Ok(q) => Term::agg(q),
                Err(e) => {
                    err = Some(e);
                    Term::agg(n.clone())
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    fn nested(&mut self, n: &QueryExpr, scope: &BTreeSet<String>) -> Result<QueryExpr> {
        let p = Poly::from_query(n)?.simplify(scope);
        let inputs: BTreeSet<String> = p.mentions().intersection(scope).cloned().collect();
        let r = self.materialize(&p, &inputs)?;
        Ok(r.to_query())
    }
}
