use super::*;
use crate::ast::sql::{parse_catalog, parse_sql};
use crate::ast::vtq::print_query;

const EX2: &str =
    "CREATE STREAM O(ordk int, custk int, xch decimal); CREATE STREAM LI(ordk int, price decimal);";
const EX2_SQL: &str = "SELECT sum(LI.price * O.xch) FROM O, LI WHERE O.ordk = LI.ordk";

const Q18: &str =
    "CREATE STREAM C(ck int); CREATE STREAM O(ck int, ok int); CREATE STREAM LI(ok int, qty int);";
const Q18_SQL: &str =
    "SELECT c.ck, sum(li.qty) FROM C c, O o, LI li WHERE c.ck = o.ck AND o.ok = li.ok \
     AND 100 < (SELECT sum(l2.qty) FROM LI l2 WHERE l2.ok = o.ok) GROUP BY c.ck";

fn compile_sql(decls: &str, sql: &str, opts: &CompileOptions) -> TriggerProgram {
    let cat = parse_catalog(decls).unwrap();
    let q = parse_sql(sql, &cat).unwrap();
    compile(&q, &cat, &opts.clone()).unwrap()
}

fn bodies(p: &TriggerProgram, rel: &str, sign: Sign) -> Vec<String> {
    p.trigger(rel, sign)
        .map(|t| {
            t.statements
                .iter()
                .map(|s| {
                    format!(
                        "{}[{}] {} {}",
                        s.target,
                        s.keys.join(","),
                        s.op.symbol(),
                        print_query(&s.rhs)
                    )
                })
                .collect()
        })
        .unwrap_or_default()
}

#[test]
fn order_lineitem_triggers_run_in_constant_time() {
    let p = compile_sql(EX2, EX2_SQL, &CompileOptions::default());
    let names: Vec<&str> = p.views.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["Q", "Q_O", "Q_LI"]);
    assert_eq!(
        bodies(&p, "O", Sign::Insert),
        [
            "Q[] += (sum () xch (view Q_O ordk))",
            "Q_LI[ordk] += (sum (ordk) xch (single () 1))"
        ]
    );
    assert_eq!(
        bodies(&p, "LI", Sign::Insert),
        [
            "Q[] += (sum () price (view Q_LI ordk))",
            "Q_O[ordk] += (sum (ordk) price (single () 1))"
        ]
    );
    for rel in ["O", "LI"] {
        let flipped: Vec<String> = bodies(&p, rel, Sign::Insert)
            .iter()
            .map(|b| b.replace("+=", "-="))
            .collect();
        assert_eq!(bodies(&p, rel, Sign::Delete), flipped);
    }
    check_statement_order(&p).unwrap();
}

#[test]
fn count_of_product_uses_scalar_views() {
    let p = compile_sql(
        "CREATE STREAM R(a int); CREATE STREAM S(b int);",
        "SELECT count(*) FROM R, S",
        &CompileOptions::default(),
    );
    assert_eq!(p.views.len(), 3);
    assert!(p.views.iter().all(|v| v.keys.is_empty()));
    assert_eq!(
        bodies(&p, "R", Sign::Insert),
        [
            "Q[] += (sum () 1 (view Q_R))",
            "Q_S[] += (sum () 1 (single () 1))"
        ]
    );
    assert_eq!(p.statement_count(), 8);
}

#[test]
fn q18_program_shape() {
    let p = compile_sql(Q18, Q18_SQL, &CompileOptions::default());
    let inserts: Vec<&Trigger> = p
        .triggers
        .iter()
        .filter(|t| t.sign == Sign::Insert)
        .collect();
    assert_eq!(inserts.len(), 3);
    assert_eq!(
        inserts.iter().map(|t| t.statements.len()).sum::<usize>(),
        10
    );
    let def = |n: &str| {
        print_query(
            &p.view(n)
                .unwrap_or_else(|| panic!("missing {}", n))
                .definition,
        )
    };
    assert_eq!(def("Q_O1"), "(sum (CK) 1 (rel C CK))");
    assert_eq!(def("Q_O2"), "(sum (OK) l2.qty (rel LI OK l2.qty))");
    assert!(p.view("Q_LI").is_some() && p.view("Q_C_LI").is_some());
    let reads = p
        .triggers
        .iter()
        .flat_map(|t| &t.statements)
        .filter(|s| s.reads().contains(&"Q_O2".to_string()))
        .count();
    assert!(reads >= 4, "Q_O2 read by {} statements", reads);
    assert_eq!(p.trace.to_string(), "rule1=✓ rule2=- rule3=S rule4=I");
}

#[test]
fn depth_zero_reevaluates_everything() {
    let p = compile_sql(
        EX2,
        EX2_SQL,
        &CompileOptions::new(Depth::Zero, OptimizerMode::Heuristic),
    );
    assert_eq!(p.views.len(), 1);
    for t in &p.triggers {
        assert_eq!(t.statements.len(), 1);
        assert_eq!(t.statements[0].op, StmtOp::Replace);
    }
}

#[test]
fn depth_one_reads_base_relations_only() {
    let p = compile_sql(
        Q18,
        Q18_SQL,
        &CompileOptions::new(Depth::One, OptimizerMode::Heuristic),
    );
    assert_eq!(p.views.len(), 1);
    for s in p.triggers.iter().flat_map(|t| &t.statements) {
        assert!(s.reads().iter().all(|r| r == "Q"), "{:?}", s.reads());
    }
    let e2 = compile_sql(
        EX2,
        EX2_SQL,
        &CompileOptions::new(Depth::One, OptimizerMode::Heuristic),
    );
    assert!(e2
        .triggers
        .iter()
        .flat_map(|t| &t.statements)
        .all(|s| s.op != StmtOp::Replace));
}

#[test]
fn compilation_is_deterministic_and_deduplicated() {
    for (decls, sql) in [(EX2, EX2_SQL), (Q18, Q18_SQL)] {
        let a = compile_sql(decls, sql, &CompileOptions::default());
        let b = compile_sql(decls, sql, &CompileOptions::default());
        assert_eq!(print_program(&a), print_program(&b));
        assert_eq!(print_program(&dedupe_views(&a).unwrap()), print_program(&a));
    }
}

#[test]
fn cost_based_mode_requires_statistics() {
    let cat = parse_catalog(EX2).unwrap();
    let q = parse_sql(EX2_SQL, &cat).unwrap();
    let opts = CompileOptions::new(Depth::Unbounded, OptimizerMode::CostBased);
    assert!(matches!(compile(&q, &cat, &opts), Err(Error::Config(_))));
}
