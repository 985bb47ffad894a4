use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::{Statement, StmtOp, TriggerProgram, ViewDecl};
use crate::ast::vtq::print_query;
use crate::error::{Error, Result};

/// Increments first, each before any increment of a view it reads; then
/// re-evaluations, deepest views first.
pub(super) fn order_statements(stmts: &mut Vec<Statement>, views: &[ViewDecl]) {
    let depth: BTreeMap<&str, usize> = views.iter().map(|v| (v.name.as_str(), v.order)).collect();
    let (incs, mut reps): (Vec<Statement>, Vec<Statement>) = std::mem::take(stmts)
        .into_iter()
        .partition(|s| s.op != StmtOp::Replace);

    let mut remaining: Vec<Option<Statement>> = incs.into_iter().map(Some).collect();
    let mut ordered = Vec::new();
    while remaining.iter().any(Option::is_some) {
        // first statement whose target no other pending statement reads
        let pick = (0..remaining.len())
            .find(|&i| {
                let Some(s) = &remaining[i] else { return false };
                !remaining.iter().enumerate().any(|(j, o)| {
                    j != i && o.as_ref().is_some_and(|o| o.reads().contains(&s.target))
                })
            })
            .or_else(|| remaining.iter().position(Option::is_some))
            .unwrap();
        ordered.push(remaining[pick].take().unwrap());
    }
    reps.sort_by_key(|s| std::cmp::Reverse(depth.get(s.target.as_str()).copied().unwrap_or(0)));
    ordered.extend(reps);
    *stmts = ordered;
}

/// Increments read the state before the trigger: no increment may read a
/// view incremented earlier in the same trigger. Re-evaluations read the
/// state after all increments and come last, each after the re-evaluations
/// of the views it reads.
pub fn check_statement_order(p: &TriggerProgram) -> Result<()> {
    for t in &p.triggers {
        let mut written: BTreeSet<&str> = BTreeSet::new();
        let mut replaced: BTreeSet<&str> = BTreeSet::new();
        let mut seen_replace = false;
        for (i, s) in t.statements.iter().enumerate() {
            let reads = s.reads();
            let err = |why: &str| {
                Err(Error::Compile(format!(
                    "trigger {}{} statement {} ({}): {}",
                    t.sign.symbol(),
                    t.relation,
                    i + 1,
                    s.target,
                    why
                )))
            };
            match s.op {
                StmtOp::Add | StmtOp::Sub => {
                    if seen_replace {
                        return err("increment after a re-evaluation");
                    }
                    if reads.iter().any(|r| written.contains(r.as_str())) {
                        return err("reads a view already updated in this trigger");
                    }
                    written.insert(&s.target);
                }
                StmtOp::Replace => {
                    seen_replace = true;
                    if reads.contains(&s.target) {
                        return err("re-evaluation reads its own target");
                    }
                    let later: BTreeSet<&str> = t.statements[i + 1..]
                        .iter()
                        .filter(|o| o.op == StmtOp::Replace)
                        .map(|o| o.target.as_str())
                        .collect();
                    if reads.iter().any(|r| later.contains(r.as_str())) {
                        return err("reads a view re-evaluated later in this trigger");
                    }
                    replaced.insert(&s.target);
                }
            }
        }
    }
    Ok(())
}

fn target(s: &Statement, v: Option<&ViewDecl>) -> String {
    match v {
        Some(v) if v.is_cache() => {
            let n = v.params.len();
            format!(
                "{}[{} | {}]",
                s.target,
                s.keys[..n].join(", "),
                s.keys[n..].join(", ")
            )
        }
        _ => format!("{}[{}]", s.target, s.keys.join(", ")),
    }
}

/// Deterministic listing: views with their definitions, then triggers with
/// statements numbered across the whole program.
pub fn print_program(p: &TriggerProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "PROGRAM {}", p.query);
    let _ = writeln!(out, "VIEWS {}", p.views.len());
    for v in &p.views {
        let kind = if v.is_cache() { "CACHE" } else { "VIEW" };
        let cols = if v.is_cache() {
            format!("{} | {}", v.params.join(", "), v.keys.join(", "))
        } else {
            v.keys.join(", ")
        };
        let _ = writeln!(
            out,
            "  {} {}[{}] order {} := {}",
            kind,
            v.name,
            cols,
            v.order,
            print_query(&v.definition)
        );
    }
    let mut n = 0;
    for t in &p.triggers {
        if t.statements.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            "ON {}{}({})",
            t.sign.symbol(),
            t.relation,
            t.params.join(", ")
        );
        for s in &t.statements {
            n += 1;
            let lv = if s.loop_vars.is_empty() {
                String::new()
            } else {
                format!("FOREACH {} DO ", s.loop_vars.join(", "))
            };
            let _ = writeln!(
                out,
                "  {:02} {}{} {} {}",
                n,
                lv,
                target(s, p.view(&s.target)),
                s.op.symbol(),
                print_query(&s.rhs)
            );
        }
    }
    out
}
