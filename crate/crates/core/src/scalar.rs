//! Numeric fields shared by the solver and the checker.
//!
//! Two implementations of [`Scalar`] exist: [`Rational`], an exact
//! arbitrary-precision rational (the default everywhere), and [`Float`], a
//! binary64 value used to emulate a floating-point verifier. Bounds may be
//! infinite and are represented by [`ExtendedScalar`].

use std::cell::Cell;
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default tolerance for float-mode bound comparisons.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Magnitude below which float tableau entries are snapped to zero.
pub const FLOAT_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scalar `{text}`: {reason}")]
pub struct ScalarParseError {
    pub text: String,
    pub reason: &'static str,
}

impl ScalarParseError {
    fn new(text: &str, reason: &'static str) -> Self {
        Self {
            text: text.to_string(),
            reason,
        }
    }
}

/// A field element in one of the supported numeric modes.
pub trait Scalar:
    Clone + PartialEq + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// True when arithmetic is exact.
    const EXACT: bool;
    fn zero() -> Self;
    fn one() -> Self;
    fn from_rational(r: &Rational) -> Self;
    /// Exact rational value of `self` (for floats, the binary value itself).
    fn to_rational(&self) -> Rational;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn div(&self, rhs: &Self) -> Self;
    fn neg(&self) -> Self;
    fn is_zero(&self) -> bool;
    /// Sign relative to zero, without tolerance.
    fn sign(&self) -> Ordering;
    /// Ordering where float values within `eps` compare equal.
    fn cmp_tol(&self, other: &Self, eps: f64) -> Ordering;
    /// Float entries this small become exact zeros after elimination.
    fn snap(self) -> Self {
        self
    }
    fn encode(&self) -> String;
    fn parse(text: &str) -> Result<Self, ScalarParseError>;

    fn from_i64(v: i64) -> Self {
        Self::from_rational(&Rational::from_integer(v))
    }
    fn is_positive(&self) -> bool {
        self.sign() == Ordering::Greater
    }
    fn is_negative(&self) -> bool {
        self.sign() == Ordering::Less
    }
}

thread_local! {
    static DIVISIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of field divisions performed on [`Rational`] values by the
/// current thread.
pub fn division_count() -> u64 {
    DIVISIONS.with(|c| c.get())
}

/// Exact rational number, always in lowest terms with a positive denominator.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rational(BigRational);

impl Rational {
    pub fn new(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "zero denominator");
        Rational(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn from_integer(v: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn from_big(numer: BigInt, denom: BigInt) -> Self {
        assert!(!denom.is_zero(), "zero denominator");
        Rational(BigRational::new(numer, denom))
    }

    /// Exact value of a finite binary64.
    pub fn from_f64(v: f64) -> Option<Self> {
        BigRational::from_float(v).map(Rational)
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        match (self.0.numer().to_f64(), self.0.denom().to_f64()) {
            (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
            _ => self.0.to_f64().unwrap_or(f64::NAN),
        }
    }

    pub fn abs(&self) -> Rational {
        Rational(self.0.abs())
    }

    pub fn as_big(&self) -> &BigRational {
        &self.0
    }

    fn parse_text(text: &str) -> Result<Self, ScalarParseError> {
        let t = text.trim();
        if t.is_empty() {
            return Err(ScalarParseError::new(text, "empty"));
        }
        if let Some((p, q)) = t.split_once('/') {
            let p = parse_int(p).ok_or_else(|| ScalarParseError::new(text, "bad numerator"))?;
            let q = parse_int(q).ok_or_else(|| ScalarParseError::new(text, "bad denominator"))?;
            if q.is_zero() {
                return Err(ScalarParseError::new(text, "zero denominator"));
            }
            return Ok(Rational(BigRational::new(p, q)));
        }
        parse_decimal(t).ok_or_else(|| ScalarParseError::new(text, "not a rational or decimal"))
    }
}

fn parse_int(s: &str) -> Option<BigInt> {
    let s = s.trim();
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    BigInt::from_str(s.strip_prefix('+').unwrap_or(s)).ok()
}

fn parse_decimal(s: &str) -> Option<Rational> {
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i64 = s[i + 1..].parse().ok()?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    let (negative, body) = match mantissa.as_bytes().first()? {
        b'-' => (true, &mantissa[1..]),
        b'+' => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    if exp.unsigned_abs() > 10_000 {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut numer = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).ok()?;
    if negative {
        numer = -numer;
    }
    let scale = exp - frac_part.len() as i64;
    let ten = BigInt::from(10u32);
    let r = if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Some(Rational(r))
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.denom().is_one() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Rational {
    type Err = ScalarParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rational::parse_text(s)
    }
}

impl Serialize for Rational {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = ScalarText::deserialize(d)?;
        Rational::parse_text(&text.0).map_err(serde::de::Error::custom)
    }
}

/// Scalar text as it appears in JSON: a string, or a bare JSON number.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarText(pub String);

impl<'de> Deserialize<'de> for ScalarText {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => Ok(ScalarText(s)),
            serde_json::Value::Number(n) => Ok(ScalarText(n.to_string())),
            other => Err(serde::de::Error::custom(format!(
                "expected a scalar string or number, found {other}"
            ))),
        }
    }
}

macro_rules! rational_binop {
    ($tr:ident, $method:ident, $body:expr) => {
        impl<'a> $tr<&'a Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                let f: fn(&Rational, &Rational) -> Rational = $body;
                f(self, rhs)
            }
        }
        impl $tr<Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                <&Rational as $tr<&Rational>>::$method(&self, &rhs)
            }
        }
    };
}

rational_binop!(Add, add, |a, b| Rational(&a.0 + &b.0));
rational_binop!(Sub, sub, |a, b| Rational(&a.0 - &b.0));
rational_binop!(Mul, mul, |a, b| Rational(&a.0 * &b.0));
rational_binop!(Div, div, |a, b| {
    DIVISIONS.with(|c| c.set(c.get() + 1));
    Rational(&a.0 / &b.0)
});

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Neg for &Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-&self.0)
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn zero() -> Self {
        Rational(BigRational::zero())
    }
    fn one() -> Self {
        Rational(BigRational::one())
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn to_rational(&self) -> Rational {
        self.clone()
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn div(&self, rhs: &Self) -> Self {
        self / rhs
    }
    fn neg(&self) -> Self {
        -self
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
    fn sign(&self) -> Ordering {
        if self.0.is_zero() {
            Ordering::Equal
        } else if self.0.is_positive() {
            Ordering::Greater
        } else {
            Ordering::Less
        }
    }
    fn cmp_tol(&self, other: &Self, _eps: f64) -> Ordering {
        self.cmp(other)
    }
    fn encode(&self) -> String {
        self.to_string()
    }
    fn parse(text: &str) -> Result<Self, ScalarParseError> {
        Rational::parse_text(text)
    }
}

/// Binary64 scalar for the float emulation mode.
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Float(pub f64);

impl fmt::Display for Float {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{}` on f64 prints the shortest string that round-trips.
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for Float {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Scalar for Float {
    const EXACT: bool = false;

    fn zero() -> Self {
        Float(0.0)
    }
    fn one() -> Self {
        Float(1.0)
    }
    fn from_rational(r: &Rational) -> Self {
        Float(r.to_f64())
    }
    fn to_rational(&self) -> Rational {
        Rational::from_f64(self.0).expect("non-finite float scalar")
    }
    fn add(&self, rhs: &Self) -> Self {
        Float(self.0 + rhs.0)
    }
    fn sub(&self, rhs: &Self) -> Self {
        Float(self.0 - rhs.0)
    }
    fn mul(&self, rhs: &Self) -> Self {
        Float(self.0 * rhs.0)
    }
    fn div(&self, rhs: &Self) -> Self {
        Float(self.0 / rhs.0)
    }
    fn neg(&self) -> Self {
        Float(-self.0)
    }
    fn is_zero(&self) -> bool {
        self.0 == 0.0
    }
    fn sign(&self) -> Ordering {
        self.0.partial_cmp(&0.0).unwrap_or(Ordering::Equal)
    }
    fn cmp_tol(&self, other: &Self, eps: f64) -> Ordering {
        let d = self.0 - other.0;
        if d.abs() <= eps {
            Ordering::Equal
        } else if d > 0.0 {
            Ordering::Greater
        } else {
            Ordering::Less
        }
    }
    fn snap(self) -> Self {
        if self.0.abs() < FLOAT_ZERO {
            Float(0.0)
        } else {
            self
        }
    }
    fn encode(&self) -> String {
        self.to_string()
    }
    fn parse(text: &str) -> Result<Self, ScalarParseError> {
        if text.contains('/') {
            let r = Rational::parse_text(text)?;
            return Ok(Float(r.to_f64()));
        }
        let v: f64 = text
            .trim()
            .parse()
            .map_err(|_| ScalarParseError::new(text, "not a number"))?;
        if !v.is_finite() {
            return Err(ScalarParseError::new(text, "non-finite"));
        }
        Ok(Float(v))
    }
}

/// A scalar or one of the two infinities. Only bounds may be infinite.
#[derive(Clone, PartialEq, Debug)]
pub enum ExtendedScalar<S> {
    NegInf,
    Finite(S),
    PosInf,
}

impl<S: Scalar> ExtendedScalar<S> {
    pub fn finite(&self) -> Option<&S> {
        match self {
            ExtendedScalar::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedScalar::Finite(_))
    }

    pub fn cmp_tol(&self, other: &Self, eps: f64) -> Ordering {
        use ExtendedScalar::*;
        match (self, other) {
            (NegInf, NegInf) | (PosInf, PosInf) => Ordering::Equal,
            (NegInf, _) | (_, PosInf) => Ordering::Less,
            (PosInf, _) | (_, NegInf) => Ordering::Greater,
            (Finite(a), Finite(b)) => a.cmp_tol(b, eps),
        }
    }

    /// Ordering without tolerance.
    pub fn cmp_exact(&self, other: &Self) -> Ordering {
        self.cmp_tol(other, 0.0)
    }

    pub fn cmp_scalar(&self, other: &S, eps: f64) -> Ordering {
        match self {
            ExtendedScalar::NegInf => Ordering::Less,
            ExtendedScalar::PosInf => Ordering::Greater,
            ExtendedScalar::Finite(a) => a.cmp_tol(other, eps),
        }
    }

    /// `self + c * other` where the sum never mixes opposite infinities.
    pub fn add_scaled(&self, c: &S, other: &Self) -> Self {
        use ExtendedScalar::*;
        let term = match other {
            Finite(v) => Finite(c.mul(v)),
            PosInf if c.is_positive() => PosInf,
            PosInf => NegInf,
            NegInf if c.is_positive() => NegInf,
            NegInf => PosInf,
        };
        match (self, term) {
            (PosInf, NegInf) | (NegInf, PosInf) => {
                panic!("indeterminate sum of opposite infinities")
            }
            (PosInf, _) | (_, PosInf) => PosInf,
            (NegInf, _) | (_, NegInf) => NegInf,
            (Finite(a), Finite(b)) => Finite(a.add(&b)),
        }
    }

    pub fn map<T: Scalar>(&self, f: impl FnOnce(&S) -> T) -> ExtendedScalar<T> {
        match self {
            ExtendedScalar::NegInf => ExtendedScalar::NegInf,
            ExtendedScalar::PosInf => ExtendedScalar::PosInf,
            ExtendedScalar::Finite(v) => ExtendedScalar::Finite(f(v)),
        }
    }

    pub fn encode(&self) -> String {
        match self {
            ExtendedScalar::NegInf => "-inf".to_string(),
            ExtendedScalar::PosInf => "+inf".to_string(),
            ExtendedScalar::Finite(v) => v.encode(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScalarParseError> {
        match text.trim() {
            "+inf" | "inf" | "+infinity" | "infinity" => Ok(ExtendedScalar::PosInf),
            "-inf" | "-infinity" => Ok(ExtendedScalar::NegInf),
            t => S::parse(t).map(ExtendedScalar::Finite),
        }
    }
}

impl<S: Scalar> fmt::Display for ExtendedScalar<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl<S: Scalar> From<S> for ExtendedScalar<S> {
    fn from(v: S) -> Self {
        ExtendedScalar::Finite(v)
    }
}

impl<S: Scalar> Serialize for ExtendedScalar<S> {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de, S: Scalar> Deserialize<'de> for ExtendedScalar<S> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = ScalarText::deserialize(d)?;
        ExtendedScalar::parse(&text.0).map_err(serde::de::Error::custom)
    }
}

/// Shorthand used throughout the tests: parse an exact rational literal.
pub fn rat(text: &str) -> Rational {
    Rational::parse_text(text).unwrap_or_else(|e| panic!("{e}"))
}
