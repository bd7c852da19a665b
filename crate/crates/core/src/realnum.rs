//! Certified evaluation of real numbers modulo one.
//!
//! A [`RealSource`] is a real number that can be evaluated to any requested
//! absolute error: rationals, quadratic surds `(a + b*sqrt(d))/c`, continued
//! fraction generators and decimal literals of stated accuracy. The central
//! query is [`RealSource::frac_mult`], the fractional part of `q*x`.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Slack bits added to every fixed-point evaluation.
pub const GUARD_BITS: u32 = 8;

/// A real number known to within `2^-error_bits` (or exactly).
#[derive(Clone, Debug, PartialEq)]
pub struct Certified {
    value: BigRational,
    error_bits: Option<u32>,
}

impl Certified {
    pub fn exact(value: BigRational) -> Self {
        Certified {
            value,
            error_bits: None,
        }
    }

    pub fn approx(value: BigRational, error_bits: u32) -> Self {
        Certified {
            value,
            error_bits: Some(error_bits),
        }
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }

    pub fn is_exact(&self) -> bool {
        self.error_bits.is_none()
    }

    /// Certified error exponent: the error is at most `2^-e`.
    pub fn error_bits(&self) -> Option<u32> {
        self.error_bits
    }

    pub fn error_bound(&self) -> f64 {
        match self.error_bits {
            None => 0.0,
            Some(e) => (-(e as f64)).exp2(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        ratio_to_f64(&self.value)
    }
}

/// Distance to the nearest integer of a value already reduced to `[0, 1)`.
pub fn dist_nearest_int(y: &Certified) -> Certified {
    let one = BigRational::one();
    let other = &one - &y.value;
    let value = if other < y.value { other } else { y.value.clone() };
    Certified {
        value,
        error_bits: y.error_bits,
    }
}

pub fn dist_nearest_int_f64(y: f64) -> f64 {
    let f = y - y.floor();
    f.min(1.0 - f)
}

/// A point of the 2-torus with an absolute error bound on each coordinate.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TorusPoint {
    pub coords: [f64; 2],
    pub error: f64,
}

impl TorusPoint {
    pub fn new(c1: f64, c2: f64, error: f64) -> Self {
        TorusPoint {
            coords: [wrap_unit(c1), wrap_unit(c2)],
            error: error.max(0.0),
        }
    }
}

/// Reduce into `[0, 1)`.
pub fn wrap_unit(y: f64) -> f64 {
    let f = y - y.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

pub(crate) fn ratio_to_f64(r: &BigRational) -> f64 {
    // Scale to keep 64 significant bits before the final rounding.
    let n = r.numer();
    let d = r.denom();
    if n.is_zero() {
        return 0.0;
    }
    let shift = d.bits() as i64 - n.bits() as i64 + 64;
    let scaled = if shift >= 0 {
        (n << shift as usize) / d
    } else {
        n / (d << (-shift) as usize)
    };
    scaled.to_f64().unwrap_or(f64::NAN) * (-(shift as f64)).exp2()
}

fn pow2(bits: u32) -> BigInt {
    BigInt::one() << bits as usize
}

// ---------------------------------------------------------------------------
// Sources

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalSource {
    num: BigInt,
    den: BigInt,
}

impl RationalSource {
    pub fn new(num: BigInt, den: BigInt) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::param("rational source with zero denominator"));
        }
        Ok(RationalSource { num, den })
    }

    pub fn value(&self) -> BigRational {
        BigRational::new(self.num.clone(), self.den.clone())
    }
}

/// `(a + b*sqrt(d)) / c` with `c != 0` and `d > 0` not a perfect square.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuadraticSurd {
    pub a: BigInt,
    pub b: BigInt,
    pub c: BigInt,
    pub d: BigInt,
}

impl QuadraticSurd {
    pub fn new(a: BigInt, b: BigInt, c: BigInt, d: BigInt) -> Result<Self> {
        if c.is_zero() {
            return Err(Error::param("quadratic source with c = 0"));
        }
        if !d.is_positive() {
            return Err(Error::param("quadratic source needs d > 0"));
        }
        let r = d.sqrt();
        if &r * &r == d {
            return Err(Error::param(format!("quadratic source: d = {d} is a perfect square")));
        }
        Ok(QuadraticSurd { a, b, c, d })
    }

    /// `sqrt(n)`.
    pub fn sqrt(n: i64) -> Result<Self> {
        Self::new(0.into(), 1.into(), 1.into(), n.into())
    }
}

/// Named generators of infinite, non-periodic continued fractions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfGenerator {
    /// Euler's number `e = [2; 1, 2, 1, 1, 4, 1, 1, 6, ...]`.
    Euler,
}

impl CfGenerator {
    fn term(&self, n: usize) -> BigInt {
        match self {
            CfGenerator::Euler => {
                if n == 0 {
                    2.into()
                } else if n % 3 == 2 {
                    BigInt::from(2 * (n as u64 + 1) / 3)
                } else {
                    BigInt::one()
                }
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            CfGenerator::Euler => "e",
        }
    }
}

#[derive(Debug)]
struct CfInner {
    prefix: Vec<BigInt>,
    period: Vec<BigInt>,
    generator: Option<CfGenerator>,
    memo: RwLock<Vec<BigInt>>,
}

/// A continued fraction `[a0; a1, a2, ...]`: finite, eventually periodic, or
/// produced by a named generator whose terms are memoized append-only.
#[derive(Clone, Debug)]
pub struct CfSource {
    inner: Arc<CfInner>,
}

impl PartialEq for CfSource {
    fn eq(&self, other: &Self) -> bool {
        self.inner.prefix == other.inner.prefix
            && self.inner.period == other.inner.period
            && self.inner.generator == other.inner.generator
    }
}

impl CfSource {
    pub fn new(prefix: Vec<BigInt>, period: Vec<BigInt>) -> Result<Self> {
        if prefix.is_empty() && period.is_empty() {
            return Err(Error::param("continued fraction needs at least one term"));
        }
        if prefix.is_empty() {
            return Err(Error::param("continued fraction needs an explicit a0"));
        }
        for (n, a) in prefix.iter().chain(period.iter()).enumerate() {
            if n >= 1 && a < &BigInt::one() {
                return Err(Error::param(format!(
                    "partial quotient a{n} = {a} must be >= 1"
                )));
            }
        }
        Ok(CfSource {
            inner: Arc::new(CfInner {
                prefix,
                period,
                generator: None,
                memo: RwLock::new(Vec::new()),
            }),
        })
    }

    pub fn generated(generator: CfGenerator) -> Self {
        CfSource {
            inner: Arc::new(CfInner {
                prefix: Vec::new(),
                period: Vec::new(),
                generator: Some(generator),
                memo: RwLock::new(Vec::new()),
            }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.inner.period.is_empty() && self.inner.generator.is_none()
    }

    /// Partial quotient `a_n`, or `None` past the end of a finite expansion.
    pub fn term(&self, n: usize) -> Option<BigInt> {
        let inner = &self.inner;
        if let Some(g) = inner.generator {
            {
                let memo = inner.memo.read().expect("cf memo poisoned");
                if let Some(a) = memo.get(n) {
                    return Some(a.clone());
                }
            }
            let mut memo = inner.memo.write().expect("cf memo poisoned");
            while memo.len() <= n {
                let next = g.term(memo.len());
                memo.push(next);
            }
            return Some(memo[n].clone());
        }
        if n < inner.prefix.len() {
            return Some(inner.prefix[n].clone());
        }
        if inner.period.is_empty() {
            return None;
        }
        let k = (n - inner.prefix.len()) % inner.period.len();
        Some(inner.period[k].clone())
    }

    fn value_if_finite(&self) -> Option<BigRational> {
        if !self.is_finite() {
            return None;
        }
        let terms = &self.inner.prefix;
        let mut acc = BigRational::from_integer(terms[terms.len() - 1].clone());
        for a in terms[..terms.len() - 1].iter().rev() {
            acc = BigRational::from_integer(a.clone()) + acc.recip();
        }
        Some(acc)
    }
}

/// A decimal literal whose distance to the intended real is at most
/// `2^-bits`. Queries needing more accuracy are rejected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecimalLiteral {
    text: String,
    bits: u32,
    value: BigRational,
}

impl DecimalLiteral {
    pub fn new(text: &str, bits: u32) -> Result<Self> {
        let value = parse_decimal(text)?;
        Ok(DecimalLiteral {
            text: text.to_string(),
            bits,
            value,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }
}

fn parse_decimal(text: &str) -> Result<BigRational> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((a, b)) => (a, b),
        None => (body, ""),
    };
    let ok = !int_part.is_empty()
        && int_part.chars().all(|c| c.is_ascii_digit())
        && frac_part.chars().all(|c| c.is_ascii_digit())
        && !(body.contains('.') && frac_part.is_empty());
    if !ok {
        return Err(Error::Parse(format!("malformed decimal literal '{text}'")));
    }
    let digits: BigInt = format!("{int_part}{frac_part}")
        .parse()
        .map_err(|_| Error::Parse(format!("malformed decimal literal '{text}'")))?;
    let den = num_traits::pow(BigInt::from(10), frac_part.len());
    let v = BigRational::new(digits, den);
    Ok(if neg { -v } else { v })
}

/// An exactly evaluable real number.
#[derive(Clone, Debug, PartialEq)]
pub enum RealSource {
    Rational(RationalSource),
    Quadratic(QuadraticSurd),
    ContinuedFraction(CfSource),
    Decimal(DecimalLiteral),
}

impl RealSource {
    pub fn rational(num: i64, den: i64) -> Result<Self> {
        Ok(RealSource::Rational(RationalSource::new(num.into(), den.into())?))
    }

    pub fn from_ratio(r: &BigRational) -> Self {
        RealSource::Rational(RationalSource {
            num: r.numer().clone(),
            den: r.denom().clone(),
        })
    }

    pub fn sqrt(n: i64) -> Result<Self> {
        Ok(RealSource::Quadratic(QuadraticSurd::sqrt(n)?))
    }

    pub fn golden_ratio() -> Self {
        RealSource::Quadratic(
            QuadraticSurd::new(1.into(), 1.into(), 2.into(), 5.into()).expect("valid surd"),
        )
    }

    /// Exact rational value when the source is rational.
    pub fn exact_value(&self) -> Option<BigRational> {
        match self {
            RealSource::Rational(r) => Some(r.value()),
            RealSource::Quadratic(s) if s.b.is_zero() => {
                Some(BigRational::new(s.a.clone(), s.c.clone()))
            }
            RealSource::ContinuedFraction(cf) => cf.value_if_finite(),
            _ => None,
        }
    }

    /// Fixed-point approximation `X` with `|x * 2^bits - X| < 2`.
    pub fn fixed_point(&self, bits: u32) -> Result<BigInt> {
        if let Some(v) = self.exact_value() {
            return Ok((v.numer() << bits as usize).div_floor(v.denom()));
        }
        match self {
            RealSource::Rational(_) => unreachable!("handled as exact"),
            RealSource::Quadratic(s) => {
                let scale = pow2(bits);
                let radicand = (&s.b * &s.b) * &s.d * (&scale * &scale);
                let root = radicand.sqrt();
                let root = if s.b.is_negative() { -root } else { root };
                let num = &s.a * &scale + root;
                Ok(num.div_floor(&s.c))
            }
            RealSource::ContinuedFraction(cf) => {
                // Stop once q_n * q_{n+1} >= 2^(bits+1); then |x - p_n/q_n| < 2^-(bits+1).
                let target = pow2(bits + 1);
                let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
                let a0 = cf.term(0).expect("nonempty cf");
                let (mut p, mut q) = (a0, BigInt::one());
                let mut n = 1usize;
                loop {
                    let a = match cf.term(n) {
                        Some(a) => a,
                        None => break,
                    };
                    let p_next = &a * &p + &p_prev;
                    let q_next = &a * &q + &q_prev;
                    let done = &q * &q_next >= target;
                    p_prev = std::mem::replace(&mut p, p_next);
                    q_prev = std::mem::replace(&mut q, q_next);
                    if done {
                        // Use the earlier convergent: its error is < 1/(q_n q_{n+1}).
                        return Ok((&p_prev << bits as usize).div_floor(&q_prev));
                    }
                    n += 1;
                }
                Ok((&p << bits as usize).div_floor(&q))
            }
            RealSource::Decimal(d) => {
                if bits > d.bits {
                    return Err(Error::InsufficientPrecision(format!(
                        "decimal literal certified to 2^-{} cannot be evaluated at {} bits",
                        d.bits, bits
                    )));
                }
                Ok((d.value.numer() << bits as usize).div_floor(d.value.denom()))
            }
        }
    }

    /// Fractional part of `q*x` with absolute (circular) error at most
    /// `2^-precision_bits`.
    pub fn frac_mult(&self, q: &BigInt, precision_bits: u32) -> Result<Certified> {
        if precision_bits == 0 {
            return Err(Error::param("precision_bits must be positive"));
        }
        if let Some(v) = self.exact_value() {
            let prod = v * BigRational::from_integer(q.clone());
            let frac = &prod - prod.floor();
            return Ok(Certified::exact(frac));
        }
        if q.is_zero() {
            return Ok(Certified::exact(BigRational::zero()));
        }
        let qbits = q.bits() as u32;
        let working = precision_bits + qbits + GUARD_BITS;
        let x = self.fixed_point(working)?;
        let modulus = pow2(working);
        let y = (q * x).mod_floor(&modulus);
        // |q| * 2 ulps <= 2^(qbits + 1 - working) = 2^-(precision_bits + GUARD_BITS - 1)
        Ok(Certified::approx(
            BigRational::new(y, modulus),
            precision_bits + GUARD_BITS - 1,
        ))
    }

    pub fn frac_mult_i64(&self, q: i64, precision_bits: u32) -> Result<Certified> {
        self.frac_mult(&BigInt::from(q), precision_bits)
    }

    /// `||q x||`, certified.
    pub fn dist_mult(&self, q: &BigInt, precision_bits: u32) -> Result<Certified> {
        Ok(dist_nearest_int(&self.frac_mult(q, precision_bits)?))
    }

    /// Double-precision value (error well below one ulp of the result).
    pub fn to_f64(&self) -> Result<f64> {
        if let Some(v) = self.exact_value() {
            return Ok(ratio_to_f64(&v));
        }
        let bits = match self {
            RealSource::Decimal(d) => d.bits.min(96),
            _ => 96,
        };
        let x = self.fixed_point(bits)?;
        Ok(ratio_to_f64(&BigRational::new(x, pow2(bits))))
    }

    /// First `n` partial quotients in canonical form (a rational expansion
    /// terminates with a final quotient >= 2).
    pub fn continued_fraction(&self, n: usize) -> Result<Vec<BigInt>> {
        if let Some(v) = self.exact_value() {
            let mut out = euclid_cf(&v);
            out.truncate(n);
            return Ok(out);
        }
        match self {
            RealSource::Rational(_) => unreachable!("handled as exact"),
            RealSource::Quadratic(s) => Ok(quadratic_cf(s, n)),
            RealSource::ContinuedFraction(cf) => Ok((0..n).map_while(|k| cf.term(k)).collect()),
            RealSource::Decimal(d) => {
                let eps = BigRational::new(BigInt::one(), pow2(d.bits));
                interval_cf(&(&d.value - &eps), &(&d.value + &eps), n)
            }
        }
    }
}

fn euclid_cf(v: &BigRational) -> Vec<BigInt> {
    let (mut num, mut den) = (v.numer().clone(), v.denom().clone());
    let mut out = Vec::new();
    while !den.is_zero() {
        let (a, r) = num.div_mod_floor(&den);
        out.push(a);
        num = std::mem::replace(&mut den, r);
    }
    out
}

/// Exact expansion of `(P + sqrt(D))/Q` via the classical recurrence.
fn quadratic_cf(s: &QuadraticSurd, n: usize) -> Vec<BigInt> {
    // Bring into the form (P + sqrt(D)) / Q with Q | (D - P^2).
    let sign = if s.b.is_negative() { -BigInt::one() } else { BigInt::one() };
    let mut p = &s.a * &sign;
    let mut q = &s.c * &sign;
    let mut d = &s.b * &s.b * &s.d;
    if !(&d - &p * &p).is_multiple_of(&q) {
        let qa = q.abs();
        p *= &qa;
        d *= &qa * &qa;
        q *= &qa;
    }
    let root = d.sqrt();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let num: BigInt = &p + &root;
        let a: BigInt = if q.is_positive() {
            num.div_floor(&q)
        } else {
            let qa: BigInt = -&q;
            -(num.div_floor(&qa) + BigInt::one())
        };
        let p_next = &a * &q - &p;
        let q_next = (&d - &p_next * &p_next) / &q;
        out.push(a);
        p = p_next;
        q = q_next;
    }
    out
}

/// Common prefix of the expansions of every point in `[lo, hi]`.
fn interval_cf(lo: &BigRational, hi: &BigRational, n: usize) -> Result<Vec<BigInt>> {
    let (mut lo, mut hi) = (lo.clone(), hi.clone());
    let mut out = Vec::new();
    while out.len() < n {
        let a = lo.floor();
        if a != hi.floor() {
            return Err(Error::InsufficientPrecision(format!(
                "decimal literal determines only {} partial quotients",
                out.len()
            )));
        }
        let fl = &lo - &a;
        let fh = &hi - &a;
        out.push(a.to_integer());
        if fl.is_zero() || fh.is_zero() {
            if out.len() < n {
                return Err(Error::InsufficientPrecision(format!(
                    "decimal literal determines only {} partial quotients",
                    out.len()
                )));
            }
            break;
        }
        let (nlo, nhi) = (fh.recip(), fl.recip());
        lo = nlo;
        hi = nhi;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Text serialization

fn parse_int(s: &str) -> Result<BigInt> {
    let body = s.strip_prefix('-').unwrap_or(s);
    let canonical = !body.is_empty()
        && body.chars().all(|c| c.is_ascii_digit())
        && (body == "0" || !body.starts_with('0'))
        && s != "-0";
    if !canonical {
        return Err(Error::Parse(format!("expected an integer, got '{s}'")));
    }
    s.parse::<BigInt>()
        .map_err(|_| Error::Parse(format!("expected an integer, got '{s}'")))
}

fn parse_int_list(s: &str) -> Result<Vec<BigInt>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse_int(t.trim_start())).collect()
}

impl fmt::Display for RealSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RealSource::Rational(r) => write!(f, "rational:{}/{}", r.num, r.den),
            RealSource::Quadratic(s) => {
                let sign = if s.b.is_negative() { '-' } else { '+' };
                write!(f, "quad:({}{}{}*sqrt({}))/{}", s.a, sign, s.b.abs(), s.d, s.c)
            }
            RealSource::ContinuedFraction(cf) => {
                if let Some(g) = cf.inner.generator {
                    return write!(f, "cf:gen:{}", g.name());
                }
                let join = |v: &[BigInt]| {
                    v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")
                };
                let prefix = &cf.inner.prefix;
                write!(f, "cf:[{}", prefix[0])?;
                let rest = join(&prefix[1..]);
                let period = &cf.inner.period;
                if !rest.is_empty() || !period.is_empty() {
                    write!(f, ";{rest}")?;
                    if !period.is_empty() {
                        if !rest.is_empty() {
                            write!(f, ",")?;
                        }
                        write!(f, "({})", join(period))?;
                    }
                }
                write!(f, "]")
            }
            RealSource::Decimal(d) => write!(f, "dec:{}@{}", d.text, d.bits),
        }
    }
}

impl FromStr for RealSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unrecognised real source '{s}'"));
        if let Some(body) = s.strip_prefix("rational:") {
            let (n, d) = body.split_once('/').ok_or_else(bad)?;
            return Ok(RealSource::Rational(RationalSource::new(parse_int(n)?, parse_int(d)?)?));
        }
        if let Some(body) = s.strip_prefix("quad:(") {
            let (inner, c) = body.split_once(")/").ok_or_else(bad)?;
            let (lhs, rest) = inner.split_once("*sqrt(").ok_or_else(bad)?;
            let d = rest.strip_suffix(')').ok_or_else(bad)?;
            let split = lhs
                .char_indices()
                .skip(1)
                .find(|&(_, ch)| ch == '+' || ch == '-')
                .map(|(idx, _)| idx)
                .ok_or_else(bad)?;
            let a = parse_int(&lhs[..split])?;
            let b_abs = &lhs[split + 1..];
            if b_abs.starts_with('-') {
                return Err(bad());
            }
            let mut b = parse_int(b_abs)?;
            if lhs.as_bytes()[split] == b'-' {
                if b.is_zero() {
                    return Err(bad());
                }
                b = -b;
            }
            return Ok(RealSource::Quadratic(QuadraticSurd::new(
                a,
                b,
                parse_int(c)?,
                parse_int(d)?,
            )?));
        }
        if let Some(name) = s.strip_prefix("cf:gen:") {
            return match name {
                "e" => Ok(RealSource::ContinuedFraction(CfSource::generated(CfGenerator::Euler))),
                _ => Err(bad()),
            };
        }
        if let Some(body) = s.strip_prefix("cf:[") {
            let body = body.strip_suffix(']').ok_or_else(bad)?;
            let (a0, rest) = match body.split_once(';') {
                Some((a0, rest)) => {
                    if rest.is_empty() {
                        return Err(bad());
                    }
                    (a0, rest)
                }
                None => (body, ""),
            };
            let mut prefix = vec![parse_int(a0)?];
            let mut period = Vec::new();
            if let Some(open) = rest.find('(') {
                let head = &rest[..open];
                let tail = rest[open + 1..].strip_suffix(')').ok_or_else(bad)?;
                let head = match head.strip_suffix(',') {
                    Some(h) => h,
                    None if head.is_empty() => head,
                    None => return Err(bad()),
                };
                prefix.extend(parse_int_list(head)?);
                period = parse_int_list(tail)?;
                if period.is_empty() {
                    return Err(bad());
                }
            } else {
                prefix.extend(parse_int_list(rest)?);
            }
            return Ok(RealSource::ContinuedFraction(CfSource::new(prefix, period)?));
        }
        if let Some(body) = s.strip_prefix("dec:") {
            let (text, bits) = body.rsplit_once('@').ok_or_else(bad)?;
            let bits: u32 = bits.parse().map_err(|_| bad())?;
            if bits.to_string() != body.rsplit_once('@').map(|p| p.1).unwrap_or_default() {
                return Err(bad());
            }
            return Ok(RealSource::Decimal(DecimalLiteral::new(text, bits)?));
        }
        Err(bad())
    }
}

impl serde::Serialize for RealSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for RealSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Split `"a,b"` at the single top-level comma (commas inside brackets or
/// parentheses belong to the sources themselves).
pub fn parse_pair(s: &str) -> Result<[RealSource; 2]> {
    let mut depth = 0i32;
    let mut cut = None;
    for (idx, ch) in s.char_indices() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                if cut.is_some() {
                    return Err(Error::Parse(format!("expected exactly two sources in '{s}'")));
                }
                cut = Some(idx);
            }
            _ => {}
        }
    }
    let cut = cut.ok_or_else(|| Error::Parse(format!("expected two sources in '{s}'")))?;
    Ok([s[..cut].trim().parse()?, s[cut + 1..].trim().parse()?])
}

// ---------------------------------------------------------------------------
// Fast orbit evaluation

/// Fast evaluation of `q*x mod 1` for many `q`.
///
/// Rationals with denominators below `2^64` are handled exactly; everything
/// else uses a 128-bit fixed-point image of `x`, so the position of `q*x` is
/// off by at most `2|q| * 2^-128`.
#[derive(Clone, Copy, Debug)]
pub enum OrbitScanner {
    Exact { num: u128, den: u128 },
    Fixed { x: u128 },
}

const TWO_POW_128: f64 = 340282366920938463463374607431768211456.0;

impl OrbitScanner {
    pub fn new(x: &RealSource) -> Result<Self> {
        if let Some(v) = x.exact_value() {
            let den = v.denom();
            if den.bits() <= 64 {
                let num = v.numer().mod_floor(den);
                return Ok(OrbitScanner::Exact {
                    num: num.to_u128().expect("reduced numerator fits"),
                    den: den.to_u128().expect("denominator fits"),
                });
            }
        }
        let fixed = x.fixed_point(128)?.mod_floor(&pow2(128));
        Ok(OrbitScanner::Fixed {
            x: fixed.to_u128().expect("reduced fixed point fits in 128 bits"),
        })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, OrbitScanner::Exact { .. })
    }

    /// Position of `q*x` as a 128-bit fraction of the circle.
    pub fn position(&self, q: i64) -> u128 {
        match *self {
            OrbitScanner::Exact { num, den } => {
                let r = (q.unsigned_abs() as u128 * num) % den;
                let r = if q < 0 && r != 0 { den - r } else { r };
                // den <= 2^64, so r < 2^64 and the scaled quotient is exact to one ulp.
                ((r << 64) / den) << 64
                    | (((((r << 64) % den) << 64) / den) & u64::MAX as u128)
            }
            OrbitScanner::Fixed { x } => {
                let p = (q.unsigned_abs() as u128).wrapping_mul(x);
                if q < 0 {
                    p.wrapping_neg()
                } else {
                    p
                }
            }
        }
    }

    /// `{q x}` in `[0, 1)`.
    pub fn frac(&self, q: i64) -> f64 {
        match *self {
            OrbitScanner::Exact { num, den } => {
                let r = (q.unsigned_abs() as u128 * num) % den;
                let r = if q < 0 && r != 0 { den - r } else { r };
                wrap_unit(r as f64 / den as f64)
            }
            OrbitScanner::Fixed { .. } => wrap_unit(self.position(q) as f64 / TWO_POW_128),
        }
    }

    /// `||q x||`.
    pub fn dist(&self, q: i64) -> f64 {
        match *self {
            OrbitScanner::Exact { num, den } => {
                let r = (q.unsigned_abs() as u128 * num) % den;
                r.min(den - r) as f64 / den as f64
            }
            OrbitScanner::Fixed { .. } => {
                let p = self.position(q);
                p.min(p.wrapping_neg()) as f64 / TWO_POW_128
            }
        }
    }

    /// `||q x - gamma||` with `gamma` given as a 128-bit circle position.
    pub fn dist_shifted(&self, q: i64, gamma: u128) -> f64 {
        let p = self.position(q).wrapping_sub(gamma);
        p.min(p.wrapping_neg()) as f64 / TWO_POW_128
    }

    /// Absolute error bound of [`OrbitScanner::frac`] and [`OrbitScanner::dist`],
    /// including the final rounding to `f64`.
    pub fn error_bound(&self, q: i64) -> f64 {
        match self {
            OrbitScanner::Exact { .. } => f64::EPSILON,
            OrbitScanner::Fixed { .. } => {
                (2.0 * q.unsigned_abs() as f64 + 2.0) / TWO_POW_128 + f64::EPSILON
            }
        }
    }
}

/// Circle position (fraction of `2^128`) of a double in `[0, 1)`.
pub fn position_of(y: f64) -> u128 {
    let y = wrap_unit(y);
    // y = m * 2^e with 53-bit m; scale exactly when representable.
    (y * TWO_POW_128) as u128
}

// ---------------------------------------------------------------------------
// Lacunary (Liouville-type) vectors

/// Guaranteed approximation quality of `q_k = 2^{a_k}` for a lacunary vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LacunaryBound {
    /// 1-based index `k`.
    pub index: usize,
    pub q: BigUint,
    /// `2^-(a_{k+1} - a_k)`, the leading term of `{q_k xi}`.
    pub leading: BigRational,
    /// `2^(1 - (a_{k+1} - a_k))`, an upper bound on `||q_k xi_t||` for both `t`.
    pub bound: BigRational,
}

/// A pair of lacunary dyadic numbers with analytically known good
/// approximations: `xi_1 = sum 2^-a_k`, `xi_2 = 1/2 + sum (-1)^(k+1) 2^-a_k`.
#[derive(Clone, Debug)]
pub struct LiouvilleVector {
    pub positions: Vec<u32>,
    pub growth: Option<u32>,
    pub xi: [RealSource; 2],
    pub bounds: Vec<LacunaryBound>,
}

/// Lacunary pair with binary digits at positions `g, g^2, ..., g^terms`.
pub fn liouville_vector(growth: u32, terms: usize) -> Result<LiouvilleVector> {
    if growth < 2 {
        return Err(Error::param("liouville growth must be >= 2"));
    }
    if terms < 3 {
        return Err(Error::param("liouville vector needs at least 3 terms"));
    }
    let mut positions = Vec::with_capacity(terms);
    let mut a: u32 = 1;
    for _ in 0..terms {
        a = a
            .checked_mul(growth)
            .ok_or_else(|| Error::param("liouville digit position overflows u32"))?;
        positions.push(a);
    }
    let mut v = lacunary_pair(positions)?;
    v.growth = Some(growth);
    Ok(v)
}

/// Lacunary pair with binary digits at the given strictly increasing positions.
pub fn lacunary_pair(positions: Vec<u32>) -> Result<LiouvilleVector> {
    if positions.len() < 2 {
        return Err(Error::param("lacunary pair needs at least two digit positions"));
    }
    if positions[0] < 1 || positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("digit positions must be >= 1 and strictly increasing"));
    }
    let last = *positions.last().expect("nonempty");
    let den = pow2(last);
    let mut n1 = BigInt::zero();
    let mut n2 = pow2(last - 1);
    for (k, &a) in positions.iter().enumerate() {
        let term = pow2(last - a);
        n1 += &term;
        if k % 2 == 0 {
            n2 += term;
        } else {
            n2 -= term;
        }
    }
    let xi = [
        RealSource::Rational(RationalSource::new(n1, den.clone())?),
        RealSource::Rational(RationalSource::new(n2, den)?),
    ];
    let bounds = positions
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let gap = w[1] - w[0];
            LacunaryBound {
                index: k + 1,
                q: BigUint::one() << w[0] as usize,
                leading: BigRational::new(BigInt::one(), pow2(gap)),
                bound: BigRational::new(BigInt::from(2), pow2(gap)),
            }
        })
        .collect();
    Ok(LiouvilleVector {
        positions,
        growth: None,
        xi,
        bounds,
    })
}

pub(crate) fn biguint_to_bigint(u: &BigUint) -> BigInt {
    BigInt::from_biguint(Sign::Plus, u.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    // 2*sqrt(2) - 2 to 60 digits.
    const TWO_SQRT2_FRAC: &str = "0.828427124746190097603377448419396157139343750753896146353359";

    #[test]
    fn frac_mult_rational_is_exact() {
        let x = RealSource::rational(1, 3).unwrap();
        let y = x.frac_mult_i64(2, 53).unwrap();
        assert!(y.is_exact());
        assert_eq!(y.value(), &r(2, 3));
    }

    #[test]
    fn frac_mult_zero_multiplier() {
        let x = RealSource::sqrt(2).unwrap();
        let y = x.frac_mult_i64(0, 53).unwrap();
        assert_eq!(y.to_f64(), 0.0);
    }

    #[test]
    fn frac_mult_sqrt2_matches_decimal_oracle() {
        let x = RealSource::sqrt(2).unwrap();
        let y = x.frac_mult_i64(2, 53).unwrap();
        let oracle = parse_decimal(TWO_SQRT2_FRAC).unwrap();
        let diff = (y.value() - &oracle).abs();
        assert!(ratio_to_f64(&diff) <= y.error_bound() + 1e-59);
        assert!(y.error_bound() <= (-53f64).exp2());
    }

    #[test]
    fn dist_examples() {
        assert_eq!(dist_nearest_int_f64(0.5), 0.5);
        assert_eq!(dist_nearest_int_f64(0.0), 0.0);
        let x = RealSource::sqrt(2).unwrap();
        let d = dist_nearest_int(&x.frac_mult_i64(2, 60).unwrap());
        let oracle = BigRational::one() - parse_decimal(TWO_SQRT2_FRAC).unwrap();
        assert!(ratio_to_f64(&(d.value() - oracle).abs()) < 1e-18);
        assert!((d.to_f64() - 0.1715728753).abs() < 1e-10);
    }

    #[test]
    fn large_multipliers_stay_certified() {
        let x = RealSource::sqrt(3).unwrap();
        let q = BigInt::from(100_000_000i64);
        let lo = x.frac_mult(&q, 40).unwrap();
        let hi = x.frac_mult(&q, 90).unwrap();
        let diff = ratio_to_f64(&(lo.value() - hi.value()).abs());
        assert!(diff <= lo.error_bound() + hi.error_bound());
    }

    #[test]
    fn negative_multiplier() {
        let x = RealSource::sqrt(2).unwrap();
        let a = x.frac_mult_i64(5, 60).unwrap().to_f64();
        let b = x.frac_mult_i64(-5, 60).unwrap().to_f64();
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decimal_rejects_queries_beyond_its_digits() {
        let x: RealSource = "dec:0.1415926535897932384626433832795@64".parse().unwrap();
        assert!(matches!(
            x.frac_mult_i64(1000, 60),
            Err(Error::InsufficientPrecision(_))
        ));
        assert!(x.frac_mult_i64(3, 40).is_ok());
    }

    #[test]
    fn cf_examples() {
        let sqrt2 = RealSource::sqrt(2).unwrap();
        let ints = |v: Vec<BigInt>| v.iter().map(|a| a.to_i64().unwrap()).collect::<Vec<_>>();
        assert_eq!(ints(sqrt2.continued_fraction(5).unwrap()), vec![1, 2, 2, 2, 2]);
        let seven_thirds = RealSource::rational(7, 3).unwrap();
        assert_eq!(ints(seven_thirds.continued_fraction(3).unwrap()), vec![2, 3]);
        let phi = RealSource::golden_ratio();
        assert_eq!(ints(phi.continued_fraction(4).unwrap()), vec![1, 1, 1, 1]);
    }

    #[test]
    fn cf_of_negative_and_conjugate_surds() {
        let ints = |v: Vec<BigInt>| v.iter().map(|a| a.to_i64().unwrap()).collect::<Vec<_>>();
        // (1 - sqrt 5)/2 = -0.618... = [-1; 2, 1, 1, 1]
        let conj: RealSource = "quad:(1-1*sqrt(5))/2".parse().unwrap();
        assert_eq!(ints(conj.continued_fraction(5).unwrap()), vec![-1, 2, 1, 1, 1]);
        // sqrt(3) = [1; 1, 2, 1, 2]
        let s3 = RealSource::sqrt(3).unwrap();
        assert_eq!(ints(s3.continued_fraction(5).unwrap()), vec![1, 1, 2, 1, 2]);
    }

    #[test]
    fn cf_generator_and_periodic_sources_evaluate() {
        let e: RealSource = "cf:gen:e".parse().unwrap();
        assert!((e.to_f64().unwrap() - std::f64::consts::E).abs() < 1e-15);
        let s2: RealSource = "cf:[1;(2)]".parse().unwrap();
        assert!((s2.to_f64().unwrap() - std::f64::consts::SQRT_2).abs() < 1e-15);
        let a = s2.frac_mult_i64(12345, 80).unwrap();
        let b = RealSource::sqrt(2).unwrap().frac_mult_i64(12345, 80).unwrap();
        assert!(ratio_to_f64(&(a.value() - b.value()).abs()) <= a.error_bound() + b.error_bound());
    }

    #[test]
    fn decimal_cf_runs_out() {
        let x: RealSource = "dec:1.41421356@20".parse().unwrap();
        let terms = x.continued_fraction(3).unwrap();
        assert_eq!(terms.len(), 3);
        assert!(matches!(
            x.continued_fraction(40),
            Err(Error::InsufficientPrecision(_))
        ));
    }

    #[test]
    fn parse_rejects_invalid_sources() {
        for s in [
            "rational:1/0",
            "quad:(0+1*sqrt(4))/1",
            "quad:(0+1*sqrt(2))/0",
            "cf:[1;0,2]",
            "dec:abc@10",
            "rational:01/2",
            "nonsense",
        ] {
            assert!(s.parse::<RealSource>().is_err(), "{s} should be rejected");
        }
    }

    #[test]
    fn canonical_strings_round_trip() {
        for s in [
            "rational:1/3",
            "rational:-7/4",
            "quad:(0+1*sqrt(2))/1",
            "quad:(1-1*sqrt(5))/2",
            "quad:(-3+2*sqrt(7))/5",
            "cf:[1;(2)]",
            "cf:[2;1,(1,4)]",
            "cf:[3]",
            "cf:[0;1,2,3]",
            "cf:gen:e",
            "dec:0.125@40",
            "dec:-2.5@12",
        ] {
            let x: RealSource = s.parse().unwrap();
            assert_eq!(x.to_string(), s);
        }
    }

    #[test]
    fn pair_parsing_respects_brackets() {
        let [a, b] = parse_pair("cf:[1;2,2],quad:(0+1*sqrt(3))/1").unwrap();
        assert_eq!(a.to_string(), "cf:[1;2,2]");
        assert_eq!(b.to_string(), "quad:(0+1*sqrt(3))/1");
        assert!(parse_pair("rational:1/2").is_err());
    }

    #[test]
    fn liouville_examples() {
        let v = liouville_vector(2, 3).unwrap();
        let b1 = &v.bounds[0];
        assert_eq!(b1.q, BigUint::from(4u32));
        assert_eq!(b1.leading, r(1, 4));
        let v3 = liouville_vector(3, 4).unwrap();
        for b in &v3.bounds {
            // ||q_k xi|| * q_k -> 0: bound * q decreases quickly.
            let prod = &b.bound * BigRational::from_integer(biguint_to_bigint(&b.q));
            assert!(prod < r(1, 1));
        }
        let q2 = biguint_to_bigint(&v3.bounds[1].q);
        for xi in &v3.xi {
            let d = xi.dist_mult(&q2, 80).unwrap();
            assert!(d.value() <= &v3.bounds[1].bound);
        }
    }

    #[test]
    fn lacunary_bounds_hold_for_every_index() {
        let v = lacunary_pair(vec![2, 5, 12, 24]).unwrap();
        for b in &v.bounds {
            let q = biguint_to_bigint(&b.q);
            for xi in &v.xi {
                let d = xi.dist_mult(&q, 64).unwrap();
                assert!(d.is_exact());
                assert!(d.value() <= &b.bound, "k={} d={}", b.index, d.to_f64());
            }
        }
    }

    #[test]
    fn orbit_scanner_matches_certified_path() {
        for x in [
            RealSource::sqrt(2).unwrap(),
            RealSource::golden_ratio(),
            RealSource::rational(5, 17).unwrap(),
            liouville_vector(3, 5).unwrap().xi[0].clone(),
        ] {
            let scan = OrbitScanner::new(&x).unwrap();
            for q in [1i64, 2, 3, 97, 1_000_003, -41, -1_000_000_007] {
                let exact = x.frac_mult_i64(q, 100).unwrap().to_f64();
                let fast = scan.frac(q);
                let gap = (exact - fast).abs().min(1.0 - (exact - fast).abs());
                assert!(gap <= scan.error_bound(q) + 1e-16, "x={x} q={q}");
                let d = dist_nearest_int_f64(exact);
                assert!((scan.dist(q) - d).abs() <= scan.error_bound(q) + 1e-16);
            }
        }
    }

    #[test]
    fn exact_scanner_detects_integers() {
        let x = RealSource::rational(1, 3).unwrap();
        let scan = OrbitScanner::new(&x).unwrap();
        assert!(scan.is_exact());
        assert_eq!(scan.dist(3), 0.0);
        assert_eq!(scan.dist(-6), 0.0);
        assert!((scan.frac(-1) - 2.0 / 3.0).abs() < 1e-16);
    }

    proptest! {
        #[test]
        fn rational_multiples_of_denominator_are_integers(p in -1000i64..1000, s in 1i64..500, m in -50i64..50) {
            let x = RealSource::rational(p, s).unwrap();
            let d = x.dist_mult(&BigInt::from(m * s), 53).unwrap();
            prop_assert!(d.value().is_zero());
        }

        #[test]
        fn rational_orbits_are_periodic(p in -1000i64..1000, s in 1i64..500, q in -10_000i64..10_000) {
            let x = RealSource::rational(p, s).unwrap();
            let a = x.frac_mult_i64(q, 53).unwrap();
            let b = x.frac_mult_i64(q + s, 53).unwrap();
            prop_assert_eq!(a.value(), b.value());
        }

        #[test]
        fn error_bound_monotone_in_precision(q in 1i64..1_000_000_000, p in 1u32..200) {
            let x = RealSource::sqrt(7).unwrap();
            let lo = x.frac_mult_i64(q, p).unwrap();
            let hi = x.frac_mult_i64(q, p + 1).unwrap();
            prop_assert!(hi.error_bound() <= lo.error_bound());
        }

        #[test]
        fn convergents_of_surds_are_good(a in -20i64..20, b in 1i64..9, c in 1i64..9, d in 2i64..60) {
            let root = (d as f64).sqrt() as i64;
            prop_assume!(root * root != d && (root + 1) * (root + 1) != d);
            let s = QuadraticSurd::new(a.into(), b.into(), c.into(), d.into()).unwrap();
            let x = RealSource::Quadratic(s);
            let terms = x.continued_fraction(12).unwrap();
            let (mut p0, mut q0) = (BigInt::one(), BigInt::zero());
            let (mut p1, mut q1) = (terms[0].clone(), BigInt::one());
            for t in &terms[1..] {
                let p2 = t * &p1 + &p0;
                let q2 = t * &q1 + &q0;
                p0 = std::mem::replace(&mut p1, p2);
                q0 = std::mem::replace(&mut q1, q2);
            }
            // |x - p/q| < 1/q^2, checked with a fixed-point value of x.
            let bits = 2 * q1.bits() as u32 + 16;
            let xf = BigRational::new(x.fixed_point(bits).unwrap(), pow2(bits));
            let err = (xf - BigRational::new(p1.clone(), q1.clone())).abs();
            let slack = BigRational::new(BigInt::from(2), pow2(bits));
            prop_assert!(err < BigRational::new(BigInt::one(), &q1 * &q1) + slack);
        }

        #[test]
        fn text_round_trip(num in -10_000i64..10_000, den in 1i64..10_000, a in -50i64..50, b in -50i64..50, c in 1i64..40, d in 2i64..200) {
            let rational = RealSource::rational(num, den).unwrap();
            let back: RealSource = rational.to_string().parse().unwrap();
            prop_assert_eq!(back.to_string(), rational.to_string());
            let root = (d as f64).sqrt() as i64;
            prop_assume!(root * root != d && b != 0);
            let q = RealSource::Quadratic(QuadraticSurd::new(a.into(), b.into(), c.into(), d.into()).unwrap());
            let back: RealSource = q.to_string().parse().unwrap();
            prop_assert_eq!(back, q);
        }
    }
}
