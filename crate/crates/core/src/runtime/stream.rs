//! Event streams: one event per line, `+` or `-`, a tab, the relation name,
//! then one tab-separated field per column.

use std::fmt;

use crate::ast::sql::RelationDecl;
use crate::delta::Sign;
use crate::error::{Error, Result};
use crate::gmr::Tuple;
use crate::value::{format_date, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StreamEvent {
    pub sign: Sign,
    pub relation: String,
    pub tuple: Tuple,
}

impl StreamEvent {
    pub fn insert(relation: &str, tuple: Tuple) -> Self {
        StreamEvent {
            sign: Sign::Insert,
            relation: relation.to_string(),
            tuple,
        }
    }

    pub fn delete(relation: &str, tuple: Tuple) -> Self {
        StreamEvent {
            sign: Sign::Delete,
            relation: relation.to_string(),
            tuple,
        }
    }
}

fn field(v: &Value) -> String {
    match v {
        Value::Date(d) => format_date(*d),
        Value::Str(s) => s.to_string(),
        other => other.to_string(),
    }
}

impl fmt::Display for StreamEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.sign.symbol(), self.relation)?;
        for v in &self.tuple {
            write!(f, "\t{}", field(v))?;
        }
        Ok(())
    }
}

/// Parse one event line (1-based `line` for error messages).
pub fn parse_event(text: &str, line: usize, relations: &[RelationDecl]) -> Result<StreamEvent> {
    let mut parts = text.split('\t');
    let sign = match parts.next().map(str::trim) {
        Some("+") => Sign::Insert,
        Some("-") | Some("\u{2212}") => Sign::Delete,
        other => {
            return Err(Error::parse(
                line,
                1,
                format!("expected `+` or `-`, found `{}`", other.unwrap_or("")),
            ))
        }
    };
    let name = parts
        .next()
        .map(str::trim)
        .ok_or_else(|| Error::parse(line, 2, "missing relation name"))?;
    let decl = relations
        .iter()
        .find(|r| r.name == name || r.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::parse(line, 3, format!("unknown relation `{}`", name)))?;
    let fields: Vec<&str> = parts.collect();
    if fields.len() != decl.arity() {
        return Err(Error::parse(
            line,
            3 + name.len(),
            format!(
                "{} expects {} fields, found {}",
                decl.name,
                decl.arity(),
                fields.len()
            ),
        ));
    }
    let mut tuple = Vec::with_capacity(fields.len());
    for (i, (f, (_, ty))) in fields.iter().zip(&decl.columns).enumerate() {
        let v = ty
            .parse(f.trim())
            .map_err(|e| Error::parse(line, i + 3, e.to_string()))?;
        tuple.push(v);
    }
    Ok(StreamEvent {
        sign,
        relation: decl.name.clone(),
        tuple,
    })
}

/// Parse a whole stream; blank lines and lines starting with `#` are skipped.
pub fn parse_stream(text: &str, relations: &[RelationDecl]) -> Result<Vec<StreamEvent>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let t = l.trim_end_matches('\r');
        if t.trim().is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_event(t, i + 1, relations)?);
    }
    Ok(out)
}

pub fn format_stream(events: &[StreamEvent]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::sql::parse_catalog;

    #[test]
    fn round_trip_and_errors() {
        let cat = parse_catalog("create stream R(a int, d date, s varchar);").unwrap();
        let rels: Vec<RelationDecl> = cat.in_order().cloned().collect();
        let evs = parse_stream(
            "+\tR\t1.5\t1995-03-15\tx\n\n-\tR\t2\t1995-03-16\ty\n",
            &rels,
        )
        .unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!(parse_stream(&format_stream(&evs), &rels).unwrap(), evs);
        match parse_stream("+\tR\t1\t1995-03-15\tx\n*\tR\t1\t1995-01-01\tx\n", &rels) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{:?}", other),
        }
        assert!(parse_stream("+\tR\t1\n", &rels).is_err());
        assert!(parse_stream("+\tR\tz\t1995-03-15\tx\n", &rels).is_err());
        assert!(parse_stream("+\tT\t1\n", &rels).is_err());
    }
}
