//! Structural equality modulo renaming of private and input variables,
//! commutativity of join and union, and algebraic cleanup.

use std::collections::BTreeSet;

use super::QueryExpr;
use crate::poly::{canonical, Poly};

/// Canonical text of `q`. Input variables are renamed positionally, output
/// variables keep their names.
pub fn canonical_text(q: &QueryExpr) -> Option<String> {
    let inputs = q.input_vars();
    let p = Poly::from_query(q).ok()?.simplify(&inputs);
    let mut out: Vec<String> = p.out.clone();
    out.sort();
    let (text, order) = canonical(&p, &inputs, true);
    let names: Vec<&str> = order.iter().map(String::as_str).collect();
    Some(format!(
        "{}|{}",
        out.join(","),
        text.replace('\u{3}', "") + &format!("|{}", names.join(","))
    ))
}

/// True when `a` and `b` denote the same query up to variable naming of
/// private and input variables and the ordering of commutative operands.
pub fn structural_equal(a: &QueryExpr, b: &QueryExpr) -> bool {
    if a == b {
        return true;
    }
    let (sa, sb) = match (a.schema(), b.schema()) {
        (Ok(x), Ok(y)) => (x, y),
        _ => return false,
    };
    let set = |v: Vec<String>| v.into_iter().collect::<BTreeSet<_>>();
    if set(sa) != set(sb) {
        return false;
    }
    match (canonical_text(a), canonical_text(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::vtq::parse_query;

    fn q(s: &str) -> QueryExpr {
        parse_query(s).unwrap()
    }

    #[test]
    fn join_is_commutative() {
        assert!(structural_equal(
            &q("(join (rel R A B) (rel S B C))"),
            &q("(join (rel S B C) (rel R A B))")
        ));
    }

    #[test]
    fn private_variables_alpha_rename() {
        assert!(structural_equal(
            &q("(sum (A) C (join (rel R A B) (rel S B C)))"),
            &q("(sum (A) Z (join (rel R A Y) (rel S Y Z)))")
        ));
        assert!(!structural_equal(
            &q("(sum (A) C (join (rel R A B) (rel S B C)))"),
            &q("(sum (A) Y (join (rel R A Y) (rel S Y Z)))")
        ));
    }

    #[test]
    fn output_names_matter() {
        assert!(!structural_equal(&q("(rel R A)"), &q("(rel R B)")));
    }

    #[test]
    fn input_variables_rename() {
        assert!(structural_equal(
            &q("(sum () (* x B) (rel R B))"),
            &q("(sum () (* y B) (rel R B))")
        ));
    }
}
