//! Scalar abstraction shared by the simulator, the MDP and the metrics.
//!
//! Times, edge lengths, weights and latencies are all carried by one scalar
//! type. The exact instantiation ([`Rational`](crate::Rational)) keeps every
//! event time and latency supremum free of rounding; `f64`/`f32` are useful
//! for quick sweeps where exactness does not matter.

use std::fmt::{Debug, Display};
use std::hash::Hash;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Numeric type usable for times, lengths and latencies.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + Display + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Parses `"3"`, `"-1.25"` or `"3/2"`.
    fn parse_literal(s: &str) -> Option<Self>;

    fn from_fraction(num: i64, den: i64) -> Self;

    /// `true` when arithmetic on this type is exact.
    fn is_exact() -> bool;

    /// Decimal rendering with `digits` significant digits, trailing zeros trimmed.
    fn to_decimal(&self, digits: usize) -> String;

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize fits scalar")
    }
}

/// Scalars with total order and hashing, required by recurrence detection.
pub trait ExactScalar: Scalar + Eq + Ord + Hash {}

impl<T: Scalar + Eq + Ord + Hash> ExactScalar for T {}

pub fn smin<S: Scalar>(a: S, b: S) -> S {
    if b < a {
        b
    } else {
        a
    }
}

pub fn smax<S: Scalar>(a: S, b: S) -> S {
    if b > a {
        b
    } else {
        a
    }
}

/// Splits a literal into an exact `(numerator, denominator)` pair.
fn parse_fraction(s: &str) -> Option<(i64, i64)> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((n, d)) = s.split_once('/') {
        let (n1, d1) = parse_fraction(n)?;
        let (n2, d2) = parse_fraction(d)?;
        if n2 == 0 {
            return None;
        }
        let num = n1.checked_mul(d2)?;
        let den = d1.checked_mul(n2)?;
        return Some(if den < 0 { (num.checked_neg()?, -den) } else { (num, den) });
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (body, exponent) = match body.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().ok()?),
        None => (body, 0),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut num: i64 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        num = num.checked_mul(10)?.checked_add(c.to_digit(10)? as i64)?;
    }
    let shift = exponent - frac_part.len() as i32;
    let (num, den) = if shift >= 0 {
        (num.checked_mul(10i64.checked_pow(shift as u32)?)?, 1)
    } else {
        (num, 10i64.checked_pow((-shift) as u32)?)
    };
    Some((if neg { -num } else { num }, den))
}

impl Scalar for Ratio<i64> {
    fn parse_literal(s: &str) -> Option<Self> {
        let (n, d) = parse_fraction(s)?;
        Some(Ratio::new(n, d))
    }

    fn from_fraction(num: i64, den: i64) -> Self {
        Ratio::new(num, den)
    }

    fn is_exact() -> bool {
        true
    }

    fn to_decimal(&self, digits: usize) -> String {
        rational_to_decimal(*self.numer(), *self.denom(), digits.max(1))
            .unwrap_or_else(|| float_to_decimal(self.as_f64(), digits))
    }
}

impl Scalar for f64 {
    fn parse_literal(s: &str) -> Option<Self> {
        let (n, d) = parse_fraction(s)?;
        Some(n as f64 / d as f64)
    }

    fn from_fraction(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn is_exact() -> bool {
        false
    }

    fn to_decimal(&self, digits: usize) -> String {
        float_to_decimal(*self, digits)
    }
}

impl Scalar for f32 {
    fn parse_literal(s: &str) -> Option<Self> {
        let (n, d) = parse_fraction(s)?;
        Some((n as f64 / d as f64) as f32)
    }

    fn from_fraction(num: i64, den: i64) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn is_exact() -> bool {
        false
    }

    fn to_decimal(&self, digits: usize) -> String {
        float_to_decimal(*self as f64, digits)
    }
}

fn trim_fraction(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn float_to_decimal(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs().log10().floor() as i64;
    let frac = (digits as i64 - 1 - magnitude).clamp(0, 40) as usize;
    trim_fraction(format!("{:.*}", frac, x))
}

/// Exact half-up rounding of `num/den` to `digits` significant digits.
fn rational_to_decimal(num: i64, den: i64, digits: usize) -> Option<String> {
    if num == 0 {
        return Some("0".to_string());
    }
    let neg = (num < 0) != (den < 0);
    let n = (num as i128).unsigned_abs();
    let d = (den as i128).unsigned_abs();
    let int_part = n / d;
    let frac_digits = if int_part > 0 {
        digits.saturating_sub(int_part.to_string().len())
    } else {
        // leading zeros after the decimal point do not count as significant
        let mut zeros = 0usize;
        let mut r = n % d;
        loop {
            r *= 10;
            if r / d > 0 || zeros > 60 {
                break;
            }
            zeros += 1;
        }
        zeros + digits
    };
    let scale = 10u128.checked_pow(frac_digits as u32)?;
    let scaled = n.checked_mul(scale)?;
    let (q, r) = scaled.div_rem(&d);
    let rounded = if r.checked_mul(2)? >= d { q + 1 } else { q };
    let mut text = rounded.to_string();
    if frac_digits > 0 {
        if text.len() <= frac_digits {
            text = format!("{}{}", "0".repeat(frac_digits + 1 - text.len()), text);
        }
        text.insert(text.len() - frac_digits, '.');
    }
    let text = trim_fraction(text);
    Some(if neg && text != "0" { format!("-{text}") } else { text })
}
