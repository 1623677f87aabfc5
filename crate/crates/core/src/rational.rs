//! Exact rational arithmetic and its `"p/q"` string interchange form.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Parses `"p/q"` or a bare integer. Decimal notation is rejected.
pub fn parse_q(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::Parse(format!("malformed rational {s:?} (expected p/q)"));
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s, "1"),
    };
    let ok = |t: &str| {
        let t = t.strip_prefix('-').unwrap_or(t);
        !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())
    };
    if !ok(num) || !ok(den) {
        return Err(bad());
    }
    let n: BigInt = num.parse().map_err(|_| bad())?;
    let d: BigInt = den.parse().map_err(|_| bad())?;
    if d.is_zero() {
        return Err(Error::Parse(format!("zero denominator in {s:?}")));
    }
    Ok(Q::new(n, d))
}

pub fn fmt_q(x: &Q) -> String {
    x.to_string()
}

pub fn abs_diff(a: &Q, b: &Q) -> Q {
    (a - b).abs()
}

/// Smallest integer `>= x`.
pub fn ceil_int(x: &Q) -> BigInt {
    x.ceil().to_integer()
}

pub fn pow2_neg(e: u32) -> Q {
    Q::new(BigInt::one(), BigInt::one() << e)
}

/// A length in a normed space. `l2` lengths are kept as exact squares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Length {
    Exact(Q),
    Sqrt(Q),
}

impl Length {
    pub fn zero() -> Self {
        Length::Exact(Q::zero())
    }

    fn squared(&self) -> Q {
        match self {
            Length::Exact(v) => v * v,
            Length::Sqrt(v) => v.clone(),
        }
    }

    pub fn lt_q(&self, bound: &Q) -> bool {
        match self {
            Length::Exact(v) => v < bound,
            Length::Sqrt(v) => !bound.is_negative() && v < &(bound * bound),
        }
    }

    pub fn le_q(&self, bound: &Q) -> bool {
        match self {
            Length::Exact(v) => v <= bound,
            Length::Sqrt(v) => !bound.is_negative() && v <= &(bound * bound),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.strip_prefix("sqrt(").and_then(|t| t.strip_suffix(')')) {
            Some(inner) => Ok(Length::Sqrt(parse_q(inner)?)),
            None => Ok(Length::Exact(parse_q(s)?)),
        }
    }
}

impl PartialOrd for Length {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Length {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Length::Exact(a), Length::Exact(b)) => a.cmp(b),
            _ => self.squared().cmp(&other.squared()),
        }
    }
}

impl fmt::Display for Length {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Length::Exact(v) => write!(f, "{v}"),
            Length::Sqrt(v) => write!(f, "sqrt({v})"),
        }
    }
}

impl Serialize for Length {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Length {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Length::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// serde adapter: a single rational as `"p/q"`.
pub mod q_str {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Q, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_q(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Q, D::Error> {
        let s = String::deserialize(d)?;
        parse_q(&s).map_err(serde::de::Error::custom)
    }
}

/// serde adapter: a vector of rationals as `["p/q", ...]`.
pub mod q_vec {
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[Q], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(xs.iter().map(fmt_q))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Q>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| parse_q(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod q_opt {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<Q>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match x {
            Some(v) => s.serialize_some(&fmt_q(v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Q>, D::Error> {
        let v = Option::<String>::deserialize(d)?;
        v.map(|s| parse_q(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// A rational vector that serializes as a list of `"p/q"` strings.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QVec(#[serde(with = "q_vec")] pub Vec<Q>);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_integers() {
        assert_eq!(parse_q("1/2").unwrap(), q(1, 2));
        assert_eq!(parse_q("-3/6").unwrap(), q(-1, 2));
        assert_eq!(parse_q("7").unwrap(), qi(7));
    }

    #[test]
    fn rejects_decimals_and_zero_denominator() {
        assert!(parse_q("1.5").is_err());
        assert!(parse_q("1/0").is_err());
        assert!(parse_q("").is_err());
        assert!(parse_q("a/b").is_err());
    }

    #[test]
    fn display_round_trips() {
        for s in ["1/2", "1", "-5/7", "0"] {
            assert_eq!(fmt_q(&parse_q(s).unwrap()), s);
        }
    }

    #[test]
    fn sqrt_lengths_compare_exactly() {
        let a = Length::Sqrt(qi(2));
        assert!(a > Length::Exact(q(7, 5)));
        assert!(a < Length::Exact(q(3, 2)));
        assert!(a.lt_q(&q(3, 2)));
        assert!(!a.lt_q(&q(7, 5)));
        assert_eq!(Length::parse("sqrt(2)").unwrap(), a);
    }
}
