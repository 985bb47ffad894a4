//! Constants that appear in tuples and terms.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use chrono::NaiveDate;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

/// Exact rational number used for multiplicities and numeric constants.
pub type Rational = BigRational;

/// Build an integral rational.
pub fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Build `num / den`.
pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Parse a decimal (`-12.005`), a fraction (`3/2`) or an integer into an exact rational.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Rational::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if body.is_empty() {
        return None;
    }
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits = format!("{}{}", int_part, frac_part);
    let num: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().ok()?
    };
    let den = num_traits::pow(BigInt::from(10), frac_part.len());
    let r = Rational::new(num, den);
    Some(if neg { -r } else { r })
}

/// Render a rational as `num/den`, omitting the denominator when it is one.
pub fn fmt_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

/// Days since 1970-01-01 for an ISO `YYYY-MM-DD` date.
pub fn parse_date(s: &str) -> Option<i32> {
    let d = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()?;
    i32::try_from((d - epoch()).num_days()).ok()
}

pub fn format_date(days: i32) -> String {
    (epoch() + chrono::Duration::days(days as i64))
        .format("%Y-%m-%d")
        .to_string()
}

/// A tuple constant. Ordering compares the type tag first, then the value.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Num(Rational),
    Str(Arc<str>),
    /// Days since 1970-01-01.
    Date(i32),
}

impl Value {
    pub fn int(n: i64) -> Self {
        Value::Num(rat(n))
    }

    pub fn str(s: &str) -> Self {
        Value::Str(Arc::from(s))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Num(_) => "number",
            Value::Str(_) => "string",
            Value::Date(_) => "date",
        }
    }

    pub fn as_num(&self) -> Result<&Rational> {
        match self {
            Value::Num(r) => Ok(r),
            other => Err(Error::Type(format!(
                "expected number, found {}",
                other.type_name()
            ))),
        }
    }

    pub fn into_num(self) -> Result<Rational> {
        match self {
            Value::Num(r) => Ok(r),
            other => Err(Error::Type(format!(
                "expected number, found {}",
                other.type_name()
            ))),
        }
    }

    /// Same-type comparison; comparing different types is an error.
    pub fn try_cmp(&self, other: &Value) -> Result<Ordering> {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => Ok(a.cmp(b)),
            (Value::Str(a), Value::Str(b)) => Ok(a.cmp(b)),
            (Value::Date(a), Value::Date(b)) => Ok(a.cmp(b)),
            (a, b) => Err(Error::Type(format!(
                "cannot compare {} with {}",
                a.type_name(),
                b.type_name()
            ))),
        }
    }

    pub fn is_zero_num(&self) -> bool {
        matches!(self, Value::Num(r) if r.is_zero())
    }

    pub fn is_negative_num(&self) -> bool {
        matches!(self, Value::Num(r) if r.is_negative())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(r) => f.write_str(&fmt_rational(r)),
            Value::Str(s) => f.write_str(s),
            Value::Date(d) => f.write_str(&format_date(*d)),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(r) => write!(f, "{}", fmt_rational(r)),
            Value::Str(s) => write!(f, "'{}'", s),
            Value::Date(d) => write!(f, "#{}", format_date(*d)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimals_are_exact() {
        assert_eq!(parse_rational("0.005"), Some(ratio(1, 200)));
        assert_eq!(parse_rational("-1.5"), Some(ratio(-3, 2)));
        assert_eq!(parse_rational("3/6"), Some(ratio(1, 2)));
        assert_eq!(parse_rational(".25"), Some(ratio(1, 4)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
        assert_eq!(parse_rational("-"), None);
    }

    #[test]
    fn dates_round_trip() {
        let d = parse_date("1995-03-15").unwrap();
        assert_eq!(format_date(d), "1995-03-15");
        assert_eq!(parse_date("1970-01-02"), Some(1));
    }

    #[test]
    fn cross_type_comparison_fails() {
        assert!(Value::int(1).try_cmp(&Value::str("a")).is_err());
        assert_eq!(
            Value::int(1).try_cmp(&Value::int(2)).unwrap(),
            Ordering::Less
        );
    }
}
