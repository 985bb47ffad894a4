//! `.vtq`: a prefix s-expression syntax for the query algebra.
//!
//! ```text
//! (sum (A C) 1/2 (join (rel R A B) (union (rel S1 B C) (rel S2 B C))))
//! (select (< C (agg (sum () B (rel R A B)))) (rel S A C))
//! (single ((A x) (B 'str')) -1)
//! ```
//!
//! Numbers print as `num/den`, strings as `'...'`, dates as `#YYYY-MM-DD`.
//! The printer is deterministic and `parse_query(print_query(q)) == q`.

use crate::ast::{CmpOp, Condition, QueryExpr, Term};
use crate::error::{Error, Result};
use crate::value::{fmt_rational, format_date, parse_date, parse_rational, Value};

pub fn print_query(q: &QueryExpr) -> String {
    let mut out = String::new();
    write_query(q, &mut out);
    out
}

pub fn print_term(t: &Term) -> String {
    let mut out = String::new();
    write_term(t, &mut out);
    out
}

pub fn print_cond(c: &Condition) -> String {
    let mut out = String::new();
    write_cond(c, &mut out);
    out
}

pub fn print_value(v: &Value) -> String {
    match v {
        Value::Num(r) => fmt_rational(r),
        Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
        Value::Date(d) => format!("#{}", format_date(*d)),
    }
}

fn write_list(items: &[String], out: &mut String) {
    out.push('(');
    out.push_str(&items.join(" "));
    out.push(')');
}

fn write_query(q: &QueryExpr, out: &mut String) {
    match q {
        QueryExpr::Relation { name, vars } => {
            out.push_str("(rel ");
            out.push_str(name);
            for v in vars {
                out.push(' ');
                out.push_str(v);
            }
            out.push(')');
        }
        QueryExpr::View { name, keys } => {
            out.push_str("(view ");
            out.push_str(name);
            for v in keys {
                out.push(' ');
                out.push_str(v);
            }
            out.push(')');
        }
        QueryExpr::Singleton { columns, mult } => {
            out.push_str("(single (");
            for (i, (c, t)) in columns.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push('(');
                out.push_str(c);
                out.push(' ');
                write_term(t, out);
                out.push(')');
            }
            out.push_str(") ");
            write_term(mult, out);
            out.push(')');
        }
        QueryExpr::Join(a, b) => {
            out.push_str("(join ");
            write_query(a, out);
            out.push(' ');
            write_query(b, out);
            out.push(')');
        }
        QueryExpr::Union(a, b) => {
            out.push_str("(union ");
            write_query(a, out);
            out.push(' ');
            write_query(b, out);
            out.push(')');
        }
        QueryExpr::Select { cond, child } => {
            out.push_str("(select ");
            write_cond(cond, out);
            out.push(' ');
            write_query(child, out);
            out.push(')');
        }
        QueryExpr::SumAgg { group_by, f, child } => {
            out.push_str("(sum ");
            write_list(group_by, out);
            out.push(' ');
            write_term(f, out);
            out.push(' ');
            write_query(child, out);
            out.push(')');
        }
        QueryExpr::Rename { mapping, child } => {
            out.push_str("(rename (");
            for (i, (a, b)) in mapping.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("({} {})", a, b));
            }
            out.push_str(") ");
            write_query(child, out);
            out.push(')');
        }
    }
}

fn write_term(t: &Term, out: &mut String) {
    let bin = |op: &str, a: &Term, b: &Term, out: &mut String| {
        out.push('(');
        out.push_str(op);
        out.push(' ');
        write_term(a, out);
        out.push(' ');
        write_term(b, out);
        out.push(')');
    };
    match t {
        Term::Const(v) => out.push_str(&print_value(v)),
        Term::Var(x) => out.push_str(x),
        Term::Add(a, b) => bin("+", a, b, out),
        Term::Sub(a, b) => bin("-", a, b, out),
        Term::Mul(a, b) => bin("*", a, b, out),
        Term::Div(a, b) => bin("/", a, b, out),
        Term::Neg(a) => {
            out.push_str("(neg ");
            write_term(a, out);
            out.push(')');
        }
        Term::Agg(q) => {
            out.push_str("(agg ");
            write_query(q, out);
            out.push(')');
        }
    }
}

fn write_cond(c: &Condition, out: &mut String) {
    match c {
        Condition::True => out.push_str("true"),
        Condition::False => out.push_str("false"),
        Condition::Cmp(a, op, b) => {
            out.push('(');
            out.push_str(op.symbol());
            out.push(' ');
            write_term(a, out);
            out.push(' ');
            write_term(b, out);
            out.push(')');
        }
        Condition::And(cs) | Condition::Or(cs) => {
            out.push_str(if matches!(c, Condition::And(_)) {
                "(and"
            } else {
                "(or"
            });
            for c in cs {
                out.push(' ');
                write_cond(c, out);
            }
            out.push(')');
        }
        Condition::Not(c) => {
            out.push_str("(not ");
            write_cond(c, out);
            out.push(')');
        }
    }
}

// ---------------------------------------------------------------------------
// parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String, usize, usize),
    Str(String),
    List(Vec<Sexp>, usize, usize),
}

impl Sexp {
    fn pos(&self) -> (usize, usize) {
        match self {
            Sexp::Atom(_, l, c) | Sexp::List(_, l, c) => (*l, *c),
            Sexp::Str(_) => (0, 0),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let (l, c) = self.pos();
        Error::parse(l, c, msg)
    }
}

fn read_sexps(src: &str) -> Result<Vec<Sexp>> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let (mut line, mut col) = (1usize, 1usize);
    let mut stack: Vec<(Vec<Sexp>, usize, usize)> = vec![(Vec::new(), 1, 1)];
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, ch: char| {
        *i += 1;
        if ch == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let ch = chars[i];
        if ch.is_whitespace() {
            advance(&mut i, &mut line, &mut col, ch);
        } else if ch == ';' {
            while i < chars.len() && chars[i] != '\n' {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
        } else if ch == '(' {
            stack.push((Vec::new(), line, col));
            advance(&mut i, &mut line, &mut col, ch);
        } else if ch == ')' {
            if stack.len() < 2 {
                return Err(Error::parse(line, col, "unbalanced `)`"));
            }
            let (items, l, c) = stack.pop().unwrap();
            stack.last_mut().unwrap().0.push(Sexp::List(items, l, c));
            advance(&mut i, &mut line, &mut col, ch);
        } else if ch == '\'' {
            let (l0, c0) = (line, col);
            advance(&mut i, &mut line, &mut col, ch);
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(Error::parse(l0, c0, "unterminated string"));
                }
                let c = chars[i];
                advance(&mut i, &mut line, &mut col, c);
                if c == '\'' {
                    if i < chars.len() && chars[i] == '\'' {
                        s.push('\'');
                        advance(&mut i, &mut line, &mut col, '\'');
                        continue;
                    }
                    break;
                }
                s.push(c);
            }
            stack.last_mut().unwrap().0.push(Sexp::Str(s));
        } else {
            let (l0, c0) = (line, col);
            let mut s = String::new();
            while i < chars.len()
                && !chars[i].is_whitespace()
                && !matches!(chars[i], '(' | ')' | ';')
            {
                s.push(chars[i]);
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            stack.last_mut().unwrap().0.push(Sexp::Atom(s, l0, c0));
        }
    }
    if stack.len() != 1 {
        let (_, l, c) = stack.last().unwrap();
        return Err(Error::parse(*l, *c, "unbalanced `(`"));
    }
    Ok(stack.pop().unwrap().0)
}

fn parse_one(src: &str) -> Result<Sexp> {
    let mut items = read_sexps(src)?;
    if items.len() != 1 {
        return Err(Error::parse(
            1,
            1,
            format!("expected one form, found {}", items.len()),
        ));
    }
    Ok(items.remove(0))
}

pub fn parse_query(src: &str) -> Result<QueryExpr> {
    query_from(&parse_one(src)?)
}

pub fn parse_term(src: &str) -> Result<Term> {
    term_from(&parse_one(src)?)
}

pub fn parse_cond(src: &str) -> Result<Condition> {
    cond_from(&parse_one(src)?)
}

fn atom(s: &Sexp) -> Result<&str> {
    match s {
        Sexp::Atom(a, ..) => Ok(a),
        other => Err(other.err("expected a symbol")),
    }
}

fn list(s: &Sexp) -> Result<&[Sexp]> {
    match s {
        Sexp::List(items, ..) => Ok(items),
        other => Err(other.err("expected a list")),
    }
}

fn head(s: &Sexp) -> Result<(&str, &[Sexp])> {
    let items = list(s)?;
    let first = items.first().ok_or_else(|| s.err("empty form"))?;
    Ok((atom(first)?, &items[1..]))
}

fn arity(s: &Sexp, args: &[Sexp], n: usize) -> Result<()> {
    if args.len() != n {
        return Err(s.err(format!("expected {} arguments, found {}", n, args.len())));
    }
    Ok(())
}

fn symbols(s: &Sexp) -> Result<Vec<String>> {
    list(s)?
        .iter()
        .map(|x| atom(x).map(str::to_string))
        .collect()
}

fn query_from(s: &Sexp) -> Result<QueryExpr> {
    let (op, args) = head(s)?;
    Ok(match op {
        "rel" | "view" => {
            let name = atom(args.first().ok_or_else(|| s.err("missing name"))?)?.to_string();
            let vars = args[1..]
                .iter()
                .map(|x| atom(x).map(str::to_string))
                .collect::<Result<_>>()?;
            if op == "rel" {
                QueryExpr::Relation { name, vars }
            } else {
                QueryExpr::View { name, keys: vars }
            }
        }
        "single" => {
            arity(s, args, 2)?;
            let mut columns = Vec::new();
            for pair in list(&args[0])? {
                let p = list(pair)?;
                if p.len() != 2 {
                    return Err(pair.err("expected (column term)"));
                }
                columns.push((atom(&p[0])?.to_string(), term_from(&p[1])?));
            }
            QueryExpr::Singleton {
                columns,
                mult: term_from(&args[1])?,
            }
        }
        "join" | "union" => {
            if args.len() < 2 {
                return Err(s.err("expected at least two operands"));
            }
            let mut items = args
                .iter()
                .map(query_from)
                .collect::<Result<Vec<_>>>()?
                .into_iter();
            let first = items.next().unwrap();
            items.fold(first, |acc, q| {
                if op == "join" {
                    QueryExpr::join(acc, q)
                } else {
                    QueryExpr::union(acc, q)
                }
            })
        }
        "select" => {
            arity(s, args, 2)?;
            QueryExpr::select(cond_from(&args[0])?, query_from(&args[1])?)
        }
        "sum" => {
            arity(s, args, 3)?;
            QueryExpr::SumAgg {
                group_by: symbols(&args[0])?,
                f: term_from(&args[1])?,
                child: Box::new(query_from(&args[2])?),
            }
        }
        "rename" => {
            arity(s, args, 2)?;
            let mut mapping = Vec::new();
            for pair in list(&args[0])? {
                let p = symbols(pair)?;
                if p.len() != 2 {
                    return Err(pair.err("expected (from to)"));
                }
                mapping.push((p[0].clone(), p[1].clone()));
            }
            QueryExpr::Rename {
                mapping,
                child: Box::new(query_from(&args[1])?),
            }
        }
        other => return Err(s.err(format!("unknown query form `{}`", other))),
    })
}

fn term_from(s: &Sexp) -> Result<Term> {
    match s {
        Sexp::Str(text) => Ok(Term::Const(Value::str(text))),
        Sexp::Atom(a, ..) => {
            if let Some(d) = a.strip_prefix('#') {
                let days = parse_date(d).ok_or_else(|| s.err(format!("bad date `{}`", d)))?;
                return Ok(Term::Const(Value::Date(days)));
            }
            let first = a.chars().next().unwrap_or(' ');
            if first.is_ascii_digit() || ((first == '-' || first == '.') && a.len() > 1) {
                let r = parse_rational(a).ok_or_else(|| s.err(format!("bad number `{}`", a)))?;
                return Ok(Term::rational(r));
            }
            Ok(Term::Var(a.clone()))
        }
        Sexp::List(..) => {
            let (op, args) = head(s)?;
            let two = |args: &[Sexp]| -> Result<(Term, Term)> {
                arity(s, args, 2)?;
                Ok((term_from(&args[0])?, term_from(&args[1])?))
            };
            Ok(match op {
                "+" => {
                    let (a, b) = two(args)?;
                    Term::add(a, b)
                }
                "-" => {
                    let (a, b) = two(args)?;
                    Term::sub(a, b)
                }
                "*" => {
                    let (a, b) = two(args)?;
                    Term::mul(a, b)
                }
                "/" => {
                    let (a, b) = two(args)?;
                    Term::div(a, b)
                }
                "neg" => {
                    arity(s, args, 1)?;
                    Term::Neg(Box::new(term_from(&args[0])?))
                }
                "agg" => {
                    arity(s, args, 1)?;
                    Term::agg(query_from(&args[0])?)
                }
                other => return Err(s.err(format!("unknown term form `{}`", other))),
            })
        }
    }
}

fn cond_from(s: &Sexp) -> Result<Condition> {
    if let Sexp::Atom(a, ..) = s {
        return match a.as_str() {
            "true" => Ok(Condition::True),
            "false" => Ok(Condition::False),
            _ => Err(s.err(format!("expected a condition, found `{}`", a))),
        };
    }
    let (op, args) = head(s)?;
    if let Some(cmp) = CmpOp::from_symbol(op) {
        arity(s, args, 2)?;
        return Ok(Condition::Cmp(
            term_from(&args[0])?,
            cmp,
            term_from(&args[1])?,
        ));
    }
    Ok(match op {
        "and" => Condition::And(args.iter().map(cond_from).collect::<Result<_>>()?),
        "or" => Condition::Or(args.iter().map(cond_from).collect::<Result<_>>()?),
        "not" => {
            arity(s, args, 1)?;
            Condition::Not(Box::new(cond_from(&args[0])?))
        }
        other => return Err(s.err(format!("unknown condition form `{}`", other))),
    })
}
