//! SQL frontend for the supported fragment: select-project-join blocks with
//! `SUM`/`COUNT(*)` aggregates, `GROUP BY`, conjunctive and disjunctive
//! predicates, and scalar (possibly correlated) aggregate subqueries.
//!
//! `CREATE STREAM`/`CREATE TABLE` statements declare the relations.
//!
//! Each `FROM` alias `a` over relation `R(c1..cn)` becomes the atom
//! `R(a.c1, ..., a.cn)`. Equalities between columns that appear as top-level
//! conjuncts are resolved by unifying variables rather than by selections.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{CmpOp, Condition, QueryExpr, Term};
use crate::error::{Error, Result};
use crate::value::{parse_date, parse_rational, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColType {
    Num,
    Str,
    Date,
}

impl ColType {
    fn from_sql(name: &str) -> Option<ColType> {
        match name.to_ascii_lowercase().as_str() {
            "int" | "integer" | "bigint" | "smallint" | "decimal" | "numeric" | "float"
            | "double" | "real" => Some(ColType::Num),
            "varchar" | "char" | "text" | "string" => Some(ColType::Str),
            "date" => Some(ColType::Date),
            _ => None,
        }
    }

    /// Parse a field of an event stream.
    pub fn parse(self, s: &str) -> Result<Value> {
        let bad = || Error::Type(format!("`{}` is not a valid {:?} value", s, self));
        match self {
            ColType::Num => parse_rational(s).map(Value::Num).ok_or_else(bad),
            ColType::Str => Ok(Value::str(s)),
            ColType::Date => parse_date(s).map(Value::Date).ok_or_else(bad),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationDecl {
    pub name: String,
    pub columns: Vec<(String, ColType)>,
    /// Declared with `CREATE TABLE`: loaded once and never updated.
    pub is_static: bool,
}

impl RelationDecl {
    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|(c, _)| c.clone()).collect()
    }
}

/// Relation declarations by name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Catalog {
    pub relations: BTreeMap<String, RelationDecl>,
    /// Relation names in declaration order.
    pub declared: Vec<String>,
}

impl Catalog {
    pub fn get(&self, name: &str) -> Result<&RelationDecl> {
        self.relations
            .get(name)
            .or_else(|| {
                self.relations
                    .values()
                    .find(|r| r.name.eq_ignore_ascii_case(name))
            })
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    /// Declarations in the order they were made.
    pub fn in_order(&self) -> impl Iterator<Item = &RelationDecl> {
        self.declared.iter().filter_map(|n| self.relations.get(n))
    }

    pub fn add(&mut self, decl: RelationDecl) {
        if !self.declared.contains(&decl.name) {
            self.declared.push(decl.name.clone());
        }
        self.relations.insert(decl.name.clone(), decl);
    }
}

/// A compiled SQL query: its name, algebraic form and output columns.
#[derive(Clone, Debug)]
pub struct SqlQuery {
    pub name: String,
    pub expr: QueryExpr,
    pub output: Vec<String>,
}

/// Everything found in a script: declarations and queries.
#[derive(Clone, Debug, Default)]
pub struct Script {
    pub catalog: Catalog,
    pub queries: Vec<SqlQuery>,
}

// ---------------------------------------------------------------------------
// tokens
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 16] = [
    "<>", "!=", "<=", ">=", "(", ")", ",", ".", "*", "+", "-", "/", "=", "<", ">", ";",
];

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c.is_whitespace() {
            bump!();
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                bump!();
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: l0,
                col: c0,
            });
        } else if c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                s.push(chars[i]);
                bump!();
            }
            out.push(Token {
                tok: Tok::Num(s),
                line: l0,
                col: c0,
            });
        } else if c == '\'' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(Error::parse(l0, c0, "unterminated string literal"));
                }
                if chars[i] == '\'' {
                    bump!();
                    if i < chars.len() && chars[i] == '\'' {
                        s.push('\'');
                        bump!();
                        continue;
                    }
                    break;
                }
                s.push(chars[i]);
                bump!();
            }
            out.push(Token {
                tok: Tok::Str(s),
                line: l0,
                col: c0,
            });
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let sym = SYMBOLS
                .iter()
                .find(|s| rest.starts_with(**s))
                .ok_or_else(|| Error::parse(l0, c0, format!("unexpected character `{}`", c)))?;
            for _ in 0..sym.len() {
                bump!();
            }
            out.push(Token {
                tok: Tok::Sym(sym),
                line: l0,
                col: c0,
            });
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// surface syntax
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum Expr {
    Col(Option<String>, String, (usize, usize)),
    Lit(Value),
    Bin(char, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Sum(Box<Expr>),
    Sub(Box<Select>),
}

#[derive(Clone, Debug)]
enum Pred {
    Cmp(Expr, CmpOp, Expr),
    And(Vec<Pred>),
    Or(Vec<Pred>),
    Not(Box<Pred>),
}

#[derive(Clone, Debug)]
struct Select {
    items: Vec<(Expr, Option<String>)>,
    star: bool,
    from: Vec<(String, String)>,
    filter: Option<Pred>,
    group_by: Vec<Expr>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (l, c) = self.here();
        Err(Error::parse(l, c, msg))
    }

    fn unsupported<T>(&self, what: &str) -> Result<T> {
        let (l, c) = self.here();
        Err(Error::Unsupported(format!("{} (at {}:{})", what, l, c)))
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(format!("expected `{}`", kw.to_ascii_uppercase()))
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(x) if *x == s) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{}`", s))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.next() {
            Tok::Ident(s) => Ok(s),
            other => {
                self.pos -= 1;
                self.err(format!("expected identifier, found {:?}", other))
            }
        }
    }

    fn reserved(s: &str) -> bool {
        const KW: [&str; 24] = [
            "select", "from", "where", "group", "by", "and", "or", "not", "as", "on", "join",
            "inner", "left", "right", "full", "outer", "order", "having", "limit", "union",
            "between", "in", "exists", "like",
        ];
        KW.iter().any(|k| k.eq_ignore_ascii_case(s))
    }

    // -- statements --------------------------------------------------------

    fn create(&mut self) -> Result<RelationDecl> {
        let is_static = if self.eat_kw("stream") {
            false
        } else if self.eat_kw("table") {
            true
        } else {
            return self.err("expected STREAM or TABLE after CREATE");
        };
        let name = self.ident()?;
        self.expect_sym("(")?;
        let mut columns = Vec::new();
        loop {
            let col = self.ident()?.to_ascii_lowercase();
            let (l, c) = self.here();
            let ty_name = self.ident()?;
            let ty = ColType::from_sql(&ty_name)
                .ok_or_else(|| Error::parse(l, c, format!("unknown column type `{}`", ty_name)))?;
            if self.eat_sym("(") {
                while !self.eat_sym(")") {
                    if matches!(self.peek(), Tok::Eof) {
                        return self.err("unterminated type arguments");
                    }
                    self.next();
                }
            }
            if columns.iter().any(|(n, _)| n == &col) {
                return Err(Error::parse(l, c, format!("duplicate column `{}`", col)));
            }
            columns.push((col, ty));
            if self.eat_sym(")") {
                break;
            }
            self.expect_sym(",")?;
        }
        Ok(RelationDecl {
            name,
            columns,
            is_static,
        })
    }

    fn select(&mut self) -> Result<Select> {
        self.expect_kw("select")?;
        if self.is_kw("distinct") {
            return self.unsupported("DISTINCT");
        }
        let mut items = Vec::new();
        let mut star = false;
        if self.eat_sym("*") {
            star = true;
        } else {
            loop {
                let e = self.expr()?;
                let alias = if self.eat_kw("as") {
                    Some(self.ident()?)
                } else {
                    match self.peek() {
                        Tok::Ident(s) if !Self::reserved(s) => Some(self.ident()?),
                        _ => None,
                    }
                };
                items.push((e, alias));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_kw("from")?;
        let mut from = Vec::new();
        let mut on_preds = Vec::new();
        loop {
            if self.eat_sym("(") {
                return self.unsupported("subquery in FROM");
            }
            let rel = self.ident()?;
            let alias = if self.eat_kw("as") {
                self.ident()?
            } else {
                match self.peek() {
                    Tok::Ident(s) if !Self::reserved(s) => self.ident()?,
                    _ => rel.clone(),
                }
            };
            from.push((rel, alias.to_ascii_lowercase()));
            if self.eat_sym(",") {
                continue;
            }
            if self.is_kw("left")
                || self.is_kw("right")
                || self.is_kw("full")
                || self.is_kw("outer")
            {
                return self.unsupported("outer join");
            }
            if self.eat_kw("inner") && !self.is_kw("join") {
                return self.err("expected JOIN");
            }
            if self.eat_kw("join") {
                let rel = self.ident()?;
                let alias = if self.eat_kw("as") {
                    self.ident()?
                } else {
                    match self.peek() {
                        Tok::Ident(s) if !Self::reserved(s) => self.ident()?,
                        _ => rel.clone(),
                    }
                };
                from.push((rel, alias.to_ascii_lowercase()));
                self.expect_kw("on")?;
                on_preds.push(self.pred()?);
                // allow chains of joins
                while self.is_kw("join") || self.is_kw("inner") {
                    self.eat_kw("inner");
                    self.expect_kw("join")?;
                    let rel = self.ident()?;
                    let alias = if self.eat_kw("as") {
                        self.ident()?
                    } else {
                        rel.clone()
                    };
                    from.push((rel, alias.to_ascii_lowercase()));
                    self.expect_kw("on")?;
                    on_preds.push(self.pred()?);
                }
                if self.eat_sym(",") {
                    continue;
                }
            }
            break;
        }
        let mut filter = if self.eat_kw("where") {
            Some(self.pred()?)
        } else {
            None
        };
        if !on_preds.is_empty() {
            if let Some(f) = filter.take() {
                on_preds.push(f);
            }
            filter = Some(Pred::And(on_preds));
        }
        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            loop {
                group_by.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        for (kw, what) in [
            ("having", "HAVING"),
            ("order", "ORDER BY"),
            ("limit", "LIMIT"),
            ("union", "UNION"),
        ] {
            if self.is_kw(kw) {
                return self.unsupported(what);
            }
        }
        Ok(Select {
            items,
            star,
            from,
            filter,
            group_by,
        })
    }

    // -- predicates ----------------------------------------------------------

    fn pred(&mut self) -> Result<Pred> {
        let mut items = vec![self.pred_and()?];
        while self.eat_kw("or") {
            items.push(self.pred_and()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Pred::Or(items)
        })
    }

    fn pred_and(&mut self) -> Result<Pred> {
        let mut items = vec![self.pred_not()?];
        while self.eat_kw("and") {
            items.push(self.pred_not()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Pred::And(items)
        })
    }

    fn pred_not(&mut self) -> Result<Pred> {
        if self.eat_kw("not") {
            return Ok(Pred::Not(Box::new(self.pred_not()?)));
        }
        if self.is_kw("exists") {
            return self.unsupported("EXISTS");
        }
        // parenthesized predicate versus parenthesized expression
        if matches!(self.peek(), Tok::Sym("("))
            && !matches!(self.peek_at(1), Tok::Ident(s) if s.eq_ignore_ascii_case("select"))
        {
            let save = self.pos;
            self.next();
            if let Ok(p) = self.pred() {
                if self.eat_sym(")") && !self.at_cmp_op() && !self.at_arith_op() {
                    return Ok(p);
                }
            }
            self.pos = save;
        }
        let lhs = self.expr()?;
        if self.eat_kw("between") {
            let lo = self.expr()?;
            self.expect_kw("and")?;
            let hi = self.expr()?;
            return Ok(Pred::And(vec![
                Pred::Cmp(lhs.clone(), CmpOp::Ge, lo),
                Pred::Cmp(lhs, CmpOp::Le, hi),
            ]));
        }
        for (kw, what) in [("in", "IN"), ("like", "LIKE"), ("is", "IS NULL")] {
            if self.is_kw(kw) {
                return self.unsupported(what);
            }
        }
        let op = match self.next() {
            Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("<>") | Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            _ => {
                self.pos -= 1;
                return self.err("expected comparison operator");
            }
        };
        let rhs = self.expr()?;
        Ok(Pred::Cmp(lhs, op, rhs))
    }

    fn at_cmp_op(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Sym("=" | "<>" | "!=" | "<" | "<=" | ">" | ">=")
        )
    }

    fn at_arith_op(&self) -> bool {
        matches!(self.peek(), Tok::Sym("+" | "-" | "*" | "/"))
    }

    // -- expressions ---------------------------------------------------------

    fn expr(&mut self) -> Result<Expr> {
        let mut e = self.product()?;
        loop {
            if self.eat_sym("+") {
                e = Expr::Bin('+', Box::new(e), Box::new(self.product()?));
            } else if self.eat_sym("-") {
                e = Expr::Bin('-', Box::new(e), Box::new(self.product()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        loop {
            if self.eat_sym("*") {
                e = Expr::Bin('*', Box::new(e), Box::new(self.unary()?));
            } else if self.eat_sym("/") {
                e = Expr::Bin('/', Box::new(e), Box::new(self.unary()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_sym("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        let (l, c) = self.here();
        match self.next() {
            Tok::Num(s) => parse_rational(&s)
                .map(|r| Expr::Lit(Value::Num(r)))
                .ok_or_else(|| Error::parse(l, c, format!("bad number `{}`", s))),
            Tok::Str(s) => Ok(Expr::Lit(Value::str(&s))),
            Tok::Sym("(") => {
                if self.is_kw("select") {
                    let sub = self.select()?;
                    self.expect_sym(")")?;
                    return Ok(Expr::Sub(Box::new(sub)));
                }
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let lower = name.to_ascii_lowercase();
                if lower == "date" {
                    let call = matches!(self.peek(), Tok::Sym("("))
                        && matches!(self.peek_at(1), Tok::Str(_));
                    if call {
                        self.next();
                    }
                    if let Tok::Str(s) = self.peek().clone() {
                        self.next();
                        if call {
                            self.expect_sym(")")?;
                        }
                        return parse_date(&s)
                            .map(|d| Expr::Lit(Value::Date(d)))
                            .ok_or_else(|| Error::parse(l, c, format!("bad date `{}`", s)));
                    }
                }
                if lower == "case" {
                    self.pos -= 1;
                    return self.unsupported("CASE");
                }
                if matches!(self.peek(), Tok::Sym("(")) {
                    self.next();
                    return match lower.as_str() {
                        "sum" => {
                            if self.is_kw("distinct") {
                                return self.unsupported("DISTINCT");
                            }
                            let e = self.expr()?;
                            self.expect_sym(")")?;
                            Ok(Expr::Sum(Box::new(e)))
                        }
                        "count" => {
                            if self.is_kw("distinct") {
                                return self.unsupported("DISTINCT");
                            }
                            if !self.eat_sym("*") {
                                self.expr()?;
                            }
                            self.expect_sym(")")?;
                            Ok(Expr::Sum(Box::new(Expr::Lit(Value::int(1)))))
                        }
                        "min" | "max" | "avg" => Err(Error::Unsupported(format!(
                            "aggregate {} (at {}:{})",
                            lower.to_ascii_uppercase(),
                            l,
                            c
                        ))),
                        _ => Err(Error::Unsupported(format!(
                            "function `{}` (at {}:{})",
                            name, l, c
                        ))),
                    };
                }
                if self.eat_sym(".") {
                    let col = self.ident()?;
                    return Ok(Expr::Col(Some(lower), col.to_ascii_lowercase(), (l, c)));
                }
                Ok(Expr::Col(None, lower, (l, c)))
            }
            other => {
                self.pos -= 1;
                self.err(format!("unexpected token {:?}", other))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// translation
// ---------------------------------------------------------------------------

struct Scope {
    /// alias -> (relation decl, variable prefix)
    aliases: Vec<(String, RelationDecl, String)>,
}

struct Translator<'c> {
    catalog: &'c Catalog,
    scopes: Vec<Scope>,
    used_prefixes: BTreeSet<String>,
}

struct UnionFind {
    parent: HashMap<String, String>,
}

impl UnionFind {
    fn find(&mut self, v: &str) -> String {
        match self.parent.get(v).cloned() {
            None => v.to_string(),
            Some(p) if p == v => p,
            Some(p) => {
                let r = self.find(&p);
                self.parent.insert(v.to_string(), r.clone());
                r
            }
        }
    }
}

impl<'c> Translator<'c> {
    fn resolve(
        &self,
        alias: &Option<String>,
        col: &str,
        at: (usize, usize),
    ) -> Result<(String, usize)> {
        for (depth, scope) in self.scopes.iter().enumerate().rev() {
            for (a, decl, prefix) in &scope.aliases {
                if alias.as_ref().is_some_and(|x| x != a) {
                    continue;
                }
                if decl.columns.iter().any(|(c, _)| c == col) {
                    if alias.is_none() {
                        let hits = scope
                            .aliases
                            .iter()
                            .filter(|(_, d, _)| d.columns.iter().any(|(c, _)| c == col))
                            .count();
                        if hits > 1 {
                            return Err(Error::parse(
                                at.0,
                                at.1,
                                format!("ambiguous column `{}`", col),
                            ));
                        }
                    }
                    return Ok((format!("{}.{}", prefix, col), depth));
                }
                if alias.is_some() {
                    return Err(Error::parse(
                        at.0,
                        at.1,
                        format!("relation `{}` has no column `{}`", decl.name, col),
                    ));
                }
            }
        }
        let what = match alias {
            Some(a) => format!("{}.{}", a, col),
            None => col.to_string(),
        };
        Err(Error::parse(
            at.0,
            at.1,
            format!("unknown column `{}`", what),
        ))
    }

    fn term(&mut self, e: &Expr, uf: &mut UnionFind) -> Result<Term> {
        Ok(match e {
            Expr::Col(a, c, at) => Term::Var(uf.find(&self.resolve(a, c, *at)?.0)),
            Expr::Lit(v) => Term::Const(v.clone()),
            Expr::Neg(x) => Term::Neg(Box::new(self.term(x, uf)?)),
            Expr::Bin(op, a, b) => {
                let (a, b) = (self.term(a, uf)?, self.term(b, uf)?);
                match op {
                    '+' => Term::add(a, b),
                    '-' => Term::sub(a, b),
                    '*' => Term::mul(a, b),
                    _ => Term::div(a, b),
                }
            }
            Expr::Sum(_) => {
                return Err(Error::Unsupported("aggregate inside an expression".into()))
            }
            Expr::Sub(sel) => {
                let (q, out) = self.block(sel, uf)?;
                if !out.is_empty() {
                    return Err(Error::Unsupported(
                        "grouped subquery used as a scalar".into(),
                    ));
                }
                Term::agg(q)
            }
        })
    }

    fn cond(&mut self, p: &Pred, uf: &mut UnionFind) -> Result<Condition> {
        Ok(match p {
            Pred::Cmp(a, op, b) => Condition::cmp(self.term(a, uf)?, *op, self.term(b, uf)?),
            Pred::And(ps) => {
                Condition::And(ps.iter().map(|p| self.cond(p, uf)).collect::<Result<_>>()?)
            }
            Pred::Or(ps) => {
                Condition::Or(ps.iter().map(|p| self.cond(p, uf)).collect::<Result<_>>()?)
            }
            Pred::Not(p) => Condition::Not(Box::new(self.cond(p, uf)?)),
        })
    }

    /// Translate one query block; returns the expression and its output variables.
    fn block(&mut self, sel: &Select, outer_uf: &UnionFind) -> Result<(QueryExpr, Vec<String>)> {
        let mut aliases = Vec::new();
        for (rel, alias) in &sel.from {
            let decl = self.catalog.get(rel)?.clone();
            if aliases
                .iter()
                .any(|(a, _, _): &(String, RelationDecl, String)| a == alias)
            {
                return Err(Error::Structural(format!("duplicate alias `{}`", alias)));
            }
            let prefix = crate::poly::fresh_name(alias, &self.used_prefixes);
            self.used_prefixes.insert(prefix.clone());
            aliases.push((alias.clone(), decl, prefix));
        }
        let depth = self.scopes.len();
        self.scopes.push(Scope { aliases });

        // top-level conjuncts
        let mut conjuncts = Vec::new();
        if let Some(f) = &sel.filter {
            flatten_and(f, &mut conjuncts);
        }
        let mut uf = UnionFind {
            parent: outer_uf.parent.clone(),
        };
        let mut rest = Vec::new();
        for p in conjuncts {
            if let Pred::Cmp(Expr::Col(a1, c1, at1), CmpOp::Eq, Expr::Col(a2, c2, at2)) = &p {
                let (v1, d1) = self.resolve(a1, c1, *at1)?;
                let (v2, d2) = self.resolve(a2, c2, *at2)?;
                if d1 == depth || d2 == depth {
                    let (r1, r2) = (uf.find(&v1), uf.find(&v2));
                    if r1 != r2 {
                        // outer variables and earlier aliases win
                        let key = |v: &str, d: usize| (d, self.alias_rank(v));
                        let (keep, drop) = if key(&r1, d1) <= key(&r2, d2) {
                            (r1, r2)
                        } else {
                            (r2, r1)
                        };
                        uf.parent.insert(drop, keep.clone());
                    }
                    continue;
                }
            }
            rest.push(p);
        }

        let mut atoms = Vec::new();
        for (_, decl, prefix) in &self.scopes[depth].aliases {
            let vars = decl
                .columns
                .iter()
                .map(|(c, _)| uf.find(&format!("{}.{}", prefix, c)))
                .collect::<Vec<_>>();
            let mut seen = BTreeSet::new();
            if vars.iter().any(|v| !seen.insert(v.clone())) {
                // self-equalities such as `r.a = r.b`: keep a fresh copy and an explicit condition
                let mut fixed = Vec::new();
                let mut extra = Vec::new();
                let mut names = BTreeSet::new();
                for (i, v) in vars.iter().enumerate() {
                    if names.insert(v.clone()) {
                        fixed.push(v.clone());
                    } else {
                        let fresh = format!("{}.{}", prefix, decl.columns[i].0);
                        extra.push(Condition::eq(Term::var(&fresh), Term::var(v)));
                        fixed.push(fresh);
                    }
                }
                atoms.push((
                    QueryExpr::Relation {
                        name: decl.name.clone(),
                        vars: fixed,
                    },
                    extra,
                ));
            } else {
                atoms.push((
                    QueryExpr::Relation {
                        name: decl.name.clone(),
                        vars,
                    },
                    vec![],
                ));
            }
        }
        let mut conds: Vec<Condition> = atoms.iter().flat_map(|(_, e)| e.clone()).collect();
        for p in &rest {
            conds.push(self.cond(p, &mut uf)?);
        }
        let mut body = QueryExpr::join_all(atoms.into_iter().map(|(a, _)| a).collect());
        if !conds.is_empty() {
            body = QueryExpr::select(Condition::and(conds), body);
        }

        // select list
        let mut group: Vec<String> = Vec::new();
        for g in &sel.group_by {
            match self.term(g, &mut uf)? {
                Term::Var(v) => {
                    if !group.contains(&v) {
                        group.push(v)
                    }
                }
                _ => return Err(Error::Unsupported("GROUP BY on an expression".into())),
            }
        }
        let mut agg: Option<Term> = None;
        if sel.star {
            if !group.is_empty() {
                return Err(Error::Unsupported("SELECT * with GROUP BY".into()));
            }
            for v in body.schema()? {
                group.push(v);
            }
            agg = Some(Term::one());
        }
        for (item, _) in &sel.items {
            match item {
                Expr::Sum(inner) => {
                    if agg.is_some() {
                        return Err(Error::Unsupported(
                            "more than one aggregate in SELECT".into(),
                        ));
                    }
                    agg = Some(self.term(inner, &mut uf)?);
                }
                other => match self.term(other, &mut uf)? {
                    Term::Var(v) if group.contains(&v) => {}
                    Term::Var(v) if sel.group_by.is_empty() => group.push(v),
                    _ => {
                        return Err(Error::Unsupported(
                            "non-aggregate SELECT item outside GROUP BY".into(),
                        ))
                    }
                },
            }
        }
        let f = agg.unwrap_or_else(Term::one);
        self.scopes.pop();
        Ok((
            QueryExpr::SumAgg {
                group_by: group.clone(),
                f,
                child: Box::new(body),
            },
            group,
        ))
    }

    fn alias_rank(&self, var: &str) -> usize {
        let prefix = var.split('.').next().unwrap_or(var);
        for scope in &self.scopes {
            if let Some(i) = scope.aliases.iter().position(|(_, _, p)| p == prefix) {
                return i;
            }
        }
        usize::MAX
    }
}

fn flatten_and(p: &Pred, out: &mut Vec<Pred>) {
    match p {
        Pred::And(ps) => ps.iter().for_each(|q| flatten_and(q, out)),
        other => out.push(other.clone()),
    }
}

/// Parse a script of `CREATE` statements and queries. Queries may be named
/// with `CREATE VIEW name AS SELECT ...`; unnamed ones are called `Q`, `Q2`, ...
/// Relations declared in `base` are visible too.
pub fn parse_script(src: &str, base: &Catalog) -> Result<Script> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
    };
    let mut script = Script {
        catalog: base.clone(),
        queries: vec![],
    };
    loop {
        while p.eat_sym(";") {}
        if matches!(p.peek(), Tok::Eof) {
            break;
        }
        if p.eat_kw("create") {
            if p.eat_kw("view") || p.eat_kw("query") {
                let name = p.ident()?;
                p.expect_kw("as")?;
                let sel = p.select()?;
                script.queries.push(translate(&sel, &script.catalog, name)?);
            } else {
                let decl = p.create()?;
                script.catalog.add(decl);
            }
        } else if p.is_kw("select") {
            let sel = p.select()?;
            let name = if script.queries.is_empty() {
                "Q".to_string()
            } else {
                format!("Q{}", script.queries.len() + 1)
            };
            script.queries.push(translate(&sel, &script.catalog, name)?);
        } else {
            return p.err("expected CREATE or SELECT");
        }
        if !p.eat_sym(";") && !matches!(p.peek(), Tok::Eof) {
            return p.err("expected `;`");
        }
    }
    Ok(script)
}

fn translate(sel: &Select, catalog: &Catalog, name: String) -> Result<SqlQuery> {
    let mut t = Translator {
        catalog,
        scopes: vec![],
        used_prefixes: BTreeSet::new(),
    };
    let (expr, output) = t.block(
        sel,
        &UnionFind {
            parent: HashMap::new(),
        },
    )?;
    Ok(SqlQuery { name, expr, output })
}

/// Parse a single query against `catalog`.
pub fn parse_sql(src: &str, catalog: &Catalog) -> Result<SqlQuery> {
    let mut s = parse_script(src, catalog)?;
    match s.queries.len() {
        1 => Ok(s.queries.pop().unwrap()),
        n => Err(Error::parse(
            1,
            1,
            format!("expected one query, found {}", n),
        )),
    }
}

/// Parse only the declarations of a script.
pub fn parse_catalog(src: &str) -> Result<Catalog> {
    Ok(parse_script(src, &Catalog::default())?.catalog)
}
