//! Approximating functions and the constructions built on them.
//!
//! An [`ApproxFunction`] is a strictly positive, non-increasing function on
//! the positive integers. Closed forms are evaluated directly; constructed
//! functions (the refinements used in the zero-one law proofs) are
//! materialized as finite breakpoint tables and evaluating past the table is
//! an error rather than a guess.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::realnum::{biguint_to_bigint, ratio_to_f64, LiouvilleVector, OrbitScanner, RealSource};
use crate::weights::Weights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    Diverges,
    Converges,
    Unknown,
}

/// A function value: exact rational or a double.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Exact(BigRational),
    Approx(f64),
}

impl Value {
    pub fn to_f64(&self) -> f64 {
        match self {
            Value::Exact(r) => ratio_to_f64(r),
            Value::Approx(v) => *v,
        }
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            Value::Exact(r) => Some(r),
            Value::Approx(_) => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ValueRepr {
    value: String,
    exact: bool,
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            Value::Exact(r) => ValueRepr {
                value: r.to_string(),
                exact: true,
            },
            Value::Approx(v) => ValueRepr {
                value: format!("{v:e}"),
                exact: false,
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ValueRepr::deserialize(d)?;
        if repr.exact {
            repr.value
                .parse::<BigRational>()
                .map(Value::Exact)
                .map_err(D::Error::custom)
        } else {
            repr.value
                .parse::<f64>()
                .map(Value::Approx)
                .map_err(D::Error::custom)
        }
    }
}

mod decimal_list {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|b| b.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigUint>, D::Error> {
        use serde::de::Error;
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| s.parse::<BigUint>().map_err(D::Error::custom))
            .collect()
    }
}

/// Shape of an approximating function.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `coef * r^-exponent`.
    Power { coef: f64, exponent: f64 },
    /// `coef / (r * ln(r + 1))`.
    LogHarmonic { coef: f64 },
    Constant { value: Value },
    /// Pointwise minimum.
    Min { parts: Vec<ApproxFunction> },
    /// Value `values[l]` on `(breakpoints[l-1], breakpoints[l]]`, with an
    /// implicit breakpoint 0 in front.
    Piecewise {
        #[serde(with = "decimal_list")]
        breakpoints: Vec<BigUint>,
        values: Vec<Value>,
    },
    /// `base(r) / sqrt(l)` on the `l`-th block (1-based).
    Modulated {
        base: Box<ApproxFunction>,
        #[serde(with = "decimal_list")]
        breakpoints: Vec<BigUint>,
    },
    /// `base(s_r * r)` with `s_r = multipliers[l]` on the `l`-th block.
    Dilated {
        base: Box<ApproxFunction>,
        #[serde(with = "decimal_list")]
        breakpoints: Vec<BigUint>,
        multipliers: Vec<u64>,
    },
}

/// Constructions that can be re-run with a larger budget.
#[derive(Clone, Debug)]
enum Recipe {
    Psi2 { base: Box<ApproxFunction>, k: u64 },
    Psi3 { base: Box<ApproxFunction> },
    Psi4 { base: Box<ApproxFunction> },
}

/// A strictly positive, non-increasing function on the positive integers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApproxFunction {
    pub shape: Shape,
    pub divergence: Divergence,
    pub note: String,
    pub provenance: String,
    #[serde(skip)]
    recipe: Option<Recipe>,
}

/// Result of [`ApproxFunction::partial_sum`].
#[derive(Clone, Debug, PartialEq)]
pub struct PartialSum {
    pub value: f64,
    pub exact: Option<BigRational>,
    /// Absolute error bound on `value` (0 when `exact` is present).
    pub error: f64,
}

/// Limits on how far a constructed table may grow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// Number of blocks / levels to materialize.
    pub blocks: usize,
    /// Largest argument the construction may evaluate.
    pub max_r: u64,
}

impl Budget {
    pub fn new(blocks: usize, max_r: u64) -> Self {
        Budget { blocks, max_r }
    }
}

fn ratio_from_f64(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite value")
}

fn big(r: u64) -> BigUint {
    BigUint::from(r)
}

fn biguint_to_f64(r: &BigUint) -> f64 {
    r.to_f64().unwrap_or(f64::INFINITY)
}

/// Index of the block `(b[l-1], b[l]]` containing `r`.
fn block_index(breakpoints: &[BigUint], r: &BigUint) -> Option<usize> {
    let l = breakpoints.partition_point(|b| b < r);
    (l < breakpoints.len()).then_some(l)
}

impl ApproxFunction {
    fn new(shape: Shape, divergence: Divergence, note: &str, provenance: String) -> Self {
        ApproxFunction {
            shape,
            divergence,
            note: note.to_string(),
            provenance,
            recipe: None,
        }
    }

    /// `coef * r^-exponent` with `coef > 0`, `exponent >= 0`.
    pub fn power(coef: f64, exponent: f64) -> Result<Self> {
        if !(coef > 0.0 && coef.is_finite() && exponent >= 0.0 && exponent.is_finite()) {
            return Err(Error::param("power function needs coef > 0 and exponent >= 0"));
        }
        let divergence = if exponent <= 1.0 {
            Divergence::Diverges
        } else {
            Divergence::Converges
        };
        Ok(Self::new(
            Shape::Power { coef, exponent },
            divergence,
            "p-series test",
            format!("pow:C={coef},s={exponent}"),
        ))
    }

    pub fn log_harmonic(coef: f64) -> Result<Self> {
        if !(coef > 0.0 && coef.is_finite()) {
            return Err(Error::param("log-harmonic function needs coef > 0"));
        }
        Ok(Self::new(
            Shape::LogHarmonic { coef },
            Divergence::Diverges,
            "integral test: sum 1/(r log r) diverges",
            format!("logharm:C={coef}"),
        ))
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::param("constant function needs a positive value"));
        }
        Ok(Self::new(
            Shape::Constant {
                value: Value::Approx(value),
            },
            Divergence::Diverges,
            "positive constant terms",
            format!("const:c={value}"),
        ))
    }

    pub fn constant_exact(value: BigRational) -> Result<Self> {
        if value <= BigRational::zero() {
            return Err(Error::param("constant function needs a positive value"));
        }
        let provenance = format!("const:c={value}");
        Ok(Self::new(
            Shape::Constant {
                value: Value::Exact(value),
            },
            Divergence::Diverges,
            "positive constant terms",
            provenance,
        ))
    }

    /// Piecewise-constant function; `values[l]` applies on
    /// `(breakpoints[l-1], breakpoints[l]]`.
    pub fn piecewise(breakpoints: Vec<BigUint>, values: Vec<Value>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::param("piecewise function needs one value per breakpoint"));
        }
        if breakpoints[0].is_zero() || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("breakpoints must be positive and strictly increasing"));
        }
        for (l, v) in values.iter().enumerate() {
            let positive = match v {
                Value::Exact(r) => r > &BigRational::zero(),
                Value::Approx(f) => *f > 0.0 && f.is_finite(),
            };
            if !positive {
                return Err(Error::param(format!("piecewise value {l} is not positive")));
            }
        }
        for l in 1..values.len() {
            let increasing = match (&values[l - 1], &values[l]) {
                (Value::Exact(a), Value::Exact(b)) => b > a,
                (a, b) => b.to_f64() > a.to_f64(),
            };
            if increasing {
                return Err(Error::param(format!("piecewise values increase at block {l}")));
            }
        }
        Ok(Self::new(
            Shape::Piecewise { breakpoints, values },
            Divergence::Unknown,
            "",
            "piecewise".to_string(),
        ))
    }

    fn with_tags(mut self, divergence: Divergence, note: &str, provenance: String) -> Self {
        self.divergence = divergence;
        self.note = note.to_string();
        self.provenance = provenance;
        self
    }

    /// Materialized domain: the largest argument that can be evaluated.
    pub fn domain_limit(&self) -> Option<BigUint> {
        match &self.shape {
            Shape::Power { .. } | Shape::LogHarmonic { .. } | Shape::Constant { .. } => None,
            Shape::Min { parts } => parts.iter().filter_map(|p| p.domain_limit()).min(),
            Shape::Piecewise { breakpoints, .. } => breakpoints.last().cloned(),
            Shape::Modulated { base, breakpoints } => {
                let own = breakpoints.last().cloned();
                match (own, base.domain_limit()) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
            Shape::Dilated {
                base,
                breakpoints,
                multipliers,
            } => {
                let own = breakpoints.last().cloned();
                let via_base = base.domain_limit().map(|lim| {
                    // Largest r with s_r * r <= lim, conservatively using the final multiplier.
                    let s = *multipliers.last().unwrap_or(&1);
                    lim / big(s)
                });
                match (own, via_base) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
        }
    }

    fn out_of_table(&self, r: &BigUint) -> Error {
        Error::BudgetExhausted(format!(
            "{} evaluated at r = {r}, beyond its materialized table",
            self.provenance
        ))
    }

    pub fn eval(&self, r: u64) -> Result<f64> {
        self.eval_big(&big(r))
    }

    pub fn eval_big(&self, r: &BigUint) -> Result<f64> {
        if r.is_zero() {
            return Err(Error::param("approximating functions are defined for r >= 1"));
        }
        match &self.shape {
            Shape::Power { coef, exponent } => Ok(coef * biguint_to_f64(r).powf(-exponent)),
            Shape::LogHarmonic { coef } => {
                let x = biguint_to_f64(r);
                Ok(coef / (x * x.ln_1p()))
            }
            Shape::Constant { value } => Ok(value.to_f64()),
            Shape::Min { parts } => {
                let mut best = f64::INFINITY;
                for p in parts {
                    best = best.min(p.eval_big(r)?);
                }
                Ok(best)
            }
            Shape::Piecewise { breakpoints, values } => {
                let l = block_index(breakpoints, r).ok_or_else(|| self.out_of_table(r))?;
                Ok(values[l].to_f64())
            }
            Shape::Modulated { base, breakpoints } => {
                let l = block_index(breakpoints, r).ok_or_else(|| self.out_of_table(r))?;
                Ok(base.eval_big(r)? / ((l + 1) as f64).sqrt())
            }
            Shape::Dilated {
                base,
                breakpoints,
                multipliers,
            } => {
                let l = block_index(breakpoints, r).ok_or_else(|| self.out_of_table(r))?;
                base.eval_big(&(r * big(multipliers[l])))
            }
        }
    }

    /// Exact value when the shape admits one.
    pub fn eval_exact(&self, r: &BigUint) -> Result<Option<BigRational>> {
        if r.is_zero() {
            return Err(Error::param("approximating functions are defined for r >= 1"));
        }
        Ok(match &self.shape {
            Shape::Power { coef, exponent } => {
                if exponent.fract() == 0.0 && *exponent <= 64.0 {
                    let den = num_traits::pow(biguint_to_bigint(r), *exponent as usize);
                    Some(ratio_from_f64(*coef) / BigRational::from_integer(den))
                } else {
                    None
                }
            }
            Shape::Constant { value } => value.exact().cloned(),
            Shape::Piecewise { breakpoints, values } => {
                let l = block_index(breakpoints, r).ok_or_else(|| self.out_of_table(r))?;
                values[l].exact().cloned()
            }
            Shape::Min { parts } => {
                let mut best: Option<BigRational> = None;
                for p in parts {
                    match p.eval_exact(r)? {
                        Some(v) => {
                            if best.as_ref().map_or(true, |b| &v < b) {
                                best = Some(v);
                            }
                        }
                        None => return Ok(None),
                    }
                }
                best
            }
            Shape::Dilated {
                base,
                breakpoints,
                multipliers,
            } => {
                let l = block_index(breakpoints, r).ok_or_else(|| self.out_of_table(r))?;
                base.eval_exact(&(r * big(multipliers[l])))?
            }
            Shape::LogHarmonic { .. } | Shape::Modulated { .. } => None,
        })
    }

    /// `sum_{r=1}^{n} psi(r)`.
    pub fn partial_sum(&self, n: u64) -> Result<PartialSum> {
        if n == 0 {
            return Err(Error::param("partial sums need N >= 1"));
        }
        match &self.shape {
            Shape::Constant { value } => Ok(match value {
                Value::Exact(c) => {
                    let s = c * BigRational::from_integer(BigInt::from(n));
                    PartialSum {
                        value: ratio_to_f64(&s),
                        exact: Some(s),
                        error: 0.0,
                    }
                }
                Value::Approx(c) => PartialSum {
                    value: c * n as f64,
                    exact: None,
                    error: 2.0 * f64::EPSILON * c * n as f64,
                },
            }),
            Shape::Piecewise { breakpoints, values } => {
                let n_big = big(n);
                if block_index(breakpoints, &n_big).is_none() {
                    return Err(self.out_of_table(&n_big));
                }
                let mut exact = Some(BigRational::zero());
                let mut approx = 0.0f64;
                let mut prev = BigUint::zero();
                for (b, v) in breakpoints.iter().zip(values) {
                    let hi = if b < &n_big { b.clone() } else { n_big.clone() };
                    let len = &hi - &prev;
                    approx += v.to_f64() * biguint_to_f64(&len);
                    exact = match (exact, v.exact()) {
                        (Some(acc), Some(val)) => {
                            Some(acc + val * BigRational::from_integer(biguint_to_bigint(&len)))
                        }
                        _ => None,
                    };
                    if hi == n_big {
                        break;
                    }
                    prev = hi;
                }
                Ok(match exact {
                    Some(s) => PartialSum {
                        value: ratio_to_f64(&s),
                        exact: Some(s),
                        error: 0.0,
                    },
                    None => PartialSum {
                        value: approx,
                        exact: None,
                        error: 4.0 * f64::EPSILON * approx * breakpoints.len() as f64,
                    },
                })
            }
            Shape::Power { exponent, .. } if exponent.fract() == 0.0 && n <= 2000 => {
                let mut s = BigRational::zero();
                for r in 1..=n {
                    s += self.eval_exact(&big(r))?.expect("integer exponent is exact");
                }
                Ok(PartialSum {
                    value: ratio_to_f64(&s),
                    exact: Some(s),
                    error: 0.0,
                })
            }
            _ => {
                if n <= 5000 {
                    if let Some(s) = self.exact_sum(1, n)? {
                        return Ok(PartialSum {
                            value: ratio_to_f64(&s),
                            exact: Some(s),
                            error: 0.0,
                        });
                    }
                }
                let (value, error) = self.kahan_sum(1, n)?;
                Ok(PartialSum {
                    value,
                    exact: None,
                    error,
                })
            }
        }
    }

    fn exact_sum(&self, lo: u64, hi: u64) -> Result<Option<BigRational>> {
        let mut s = BigRational::zero();
        for r in lo..=hi {
            match self.eval_exact(&big(r))? {
                Some(v) => s += v,
                None => return Ok(None),
            }
        }
        Ok(Some(s))
    }

    /// Compensated sum of `psi(r)` for `lo <= r <= hi`, with an error bound.
    fn kahan_sum(&self, lo: u64, hi: u64) -> Result<(f64, f64)> {
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for r in lo..=hi {
            let y = self.eval(r)? - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        // Each term carries a few ulps from pow/log; summation adds ~2 ulps.
        Ok((sum, 8.0 * f64::EPSILON * sum.abs()))
    }

    /// Sum over `lo..=hi` decided against `target`: exact when ambiguous and
    /// exact values exist.
    fn block_sum_at_least(&self, lo: u64, hi: u64, target: f64) -> Result<bool> {
        let (s, err) = self.kahan_sum(lo, hi)?;
        if s - err >= target {
            return Ok(true);
        }
        if s + err < target {
            return Ok(false);
        }
        let mut exact = BigRational::zero();
        for r in lo..=hi {
            match self.eval_exact(&big(r))? {
                Some(v) => exact += v,
                None => return Ok(s >= target),
            }
        }
        Ok(exact >= ratio_from_f64(target))
    }

    /// Non-increasing and positive at the given arguments.
    pub fn check_monotone_at(&self, args: &[u64]) -> Result<()> {
        let mut sorted = args.to_vec();
        sorted.sort_unstable();
        let mut prev: Option<(u64, f64)> = None;
        for &r in &sorted {
            let v = self.eval(r)?;
            if !(v > 0.0) {
                return Err(Error::Invariant(format!("psi({r}) = {v} is not positive")));
            }
            if let Some((pr, pv)) = prev {
                if v > pv * (1.0 + 4.0 * f64::EPSILON) {
                    return Err(Error::Invariant(format!(
                        "psi increases between r = {pr} ({pv}) and r = {r} ({v})"
                    )));
                }
            }
            prev = Some((r, v));
        }
        Ok(())
    }

    /// Rebuild a constructed function with a new budget.
    pub fn extend(&self, budget: Budget) -> Result<ApproxFunction> {
        match &self.recipe {
            Some(Recipe::Psi2 { base, k }) => build_psi2_with(base, *k, budget.blocks),
            Some(Recipe::Psi3 { base }) => build_psi3(base, budget),
            Some(Recipe::Psi4 { base }) => Ok(build_psi4(base, budget)?.0),
            None => Err(Error::param(format!(
                "{} has no construction recipe to extend",
                self.provenance
            ))),
        }
    }

    /// Breakpoint table of a piecewise-defined construction.
    pub fn breakpoints(&self) -> Option<&[BigUint]> {
        match &self.shape {
            Shape::Piecewise { breakpoints, .. }
            | Shape::Modulated { breakpoints, .. }
            | Shape::Dilated { breakpoints, .. } => Some(breakpoints),
            _ => None,
        }
    }
}

impl fmt::Display for ApproxFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.provenance)
    }
}

/// Parses the closed-form descriptors `pow:C=..,s=..`, `logharm:C=..`,
/// `const:c=..`.
impl FromStr for ApproxFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("psi descriptor '{s}': {msg}"));
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("missing kind"))?;
        let mut params = std::collections::BTreeMap::new();
        for kv in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let v: f64 = v.trim().parse().map_err(|_| bad("non-numeric parameter"))?;
            if params.insert(k.trim().to_string(), v).is_some() {
                return Err(bad("repeated parameter"));
            }
        }
        let mut take = |key: &str| params.remove(key).ok_or_else(|| bad(&format!("missing {key}")));
        let f = match kind {
            "pow" => {
                let c = take("C")?;
                let e = take("s")?;
                ApproxFunction::power(c, e)?
            }
            "logharm" => ApproxFunction::log_harmonic(take("C")?)?,
            "const" => ApproxFunction::constant(take("c")?)?,
            _ => return Err(bad("unknown kind")),
        };
        if let Some(extra) = params.keys().next() {
            return Err(bad(&format!("unknown parameter {extra}")));
        }
        Ok(f)
    }
}

// ---------------------------------------------------------------------------
// Witness sequences

/// One term `(q_k, c_k = 1/m_k^3, n_k = q_k m_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessEntry {
    #[serde(with = "decimal")]
    pub q: BigUint,
    #[serde(with = "decimal")]
    pub m: BigUint,
    #[serde(with = "decimal")]
    pub n: BigUint,
    /// Certified upper bound on `q * max{||q x1||^(1/i), ||q x2||^(1/j)}`.
    pub value_upper: f64,
}

mod decimal {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        use serde::de::Error;
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

impl WitnessEntry {
    /// `c = 1/m^3`.
    pub fn c(&self) -> BigRational {
        let m3 = num_traits::pow(biguint_to_bigint(&self.m), 3);
        BigRational::new(BigInt::one(), m3)
    }

    pub fn c_f64(&self) -> f64 {
        ratio_to_f64(&self.c())
    }

    pub fn q_f64(&self) -> f64 {
        biguint_to_f64(&self.q)
    }

    pub fn n_f64(&self) -> f64 {
        biguint_to_f64(&self.n)
    }
}

/// Integers `q_k` with anomalously good weighted approximations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessSequence {
    pub weights: Weights,
    pub entries: Vec<WitnessEntry>,
}

/// Does `m_new^3 > 2^(3/(2 min)) m_prev^3`, i.e. `m_new > 2^(1/(2 min)) m_prev`?
fn separated(w: &Weights, m_prev: &BigUint, m_new: &BigUint) -> bool {
    let e = 1.0 / (2.0 * w.min());
    if (e - e.round()).abs() < 1e-12 {
        return m_new > &(m_prev << e.round() as usize);
    }
    let ratio = ratio_to_f64(&BigRational::new(
        biguint_to_bigint(m_new),
        biguint_to_bigint(m_prev),
    ));
    ratio > e.exp2() * (1.0 + 1e-12)
}

/// Largest `m >= 1` with `v_upper < 1/m^3`, or `None` when `m < 2`.
fn round_up_to_cube(v_upper: f64) -> Option<BigUint> {
    if !(v_upper > 0.0) {
        return None;
    }
    let guess = v_upper.powf(-1.0 / 3.0).floor();
    if !(guess >= 2.0) {
        return None;
    }
    let mut m: BigUint = num_traits::FromPrimitive::from_f64(guess)?;
    loop {
        if m < BigUint::from(2u32) {
            return None;
        }
        let m3 = biguint_to_f64(&(&m * &m * &m));
        if v_upper * m3 < 1.0 {
            return Some(m);
        }
        m -= 1u32;
    }
}

/// Upper bound on `q * max{d1^(1/i), d2^(1/j)}` given distance upper bounds.
fn weighted_value_upper(w: &Weights, q: f64, d: [f64; 2]) -> f64 {
    let v = q * w.weighted_max(d);
    v * (1.0 + 1e-12)
}

impl WitnessSequence {
    /// Greedy thinning of candidate records (in increasing `q`).
    fn thin(weights: Weights, candidates: Vec<(BigUint, f64)>, ceiling: Option<f64>) -> Result<Self> {
        let mut entries: Vec<WitnessEntry> = Vec::new();
        for (q, v_upper) in candidates {
            let m = match round_up_to_cube(v_upper) {
                Some(m) => m,
                None => continue,
            };
            let entry = WitnessEntry {
                n: &q * &m,
                q,
                m,
                value_upper: v_upper,
            };
            if let Some(ceil) = ceiling {
                if entry.c_f64() >= ceil {
                    continue;
                }
            }
            match entries.last() {
                Some(prev) if !(entry.q > prev.q && separated(&weights, &prev.m, &entry.m)) => {}
                _ => entries.push(entry),
            }
        }
        if entries.len() < 2 {
            return Err(Error::NoWitness(format!(
                "found {} valid witness terms; at least 2 are needed",
                entries.len()
            )));
        }
        let w = WitnessSequence { weights, entries };
        w.validate()?;
        Ok(w)
    }

    /// Structural checks: increasing `q` and `n`, `m >= 2`, separation.
    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.entries.iter().enumerate() {
            if e.m < BigUint::from(2u32) {
                return Err(Error::Invariant(format!("witness term {k} has m < 2")));
            }
            if e.n != &e.q * &e.m {
                return Err(Error::Invariant(format!("witness term {k} has n != q m")));
            }
            if !(e.value_upper * biguint_to_f64(&(&e.m * &e.m * &e.m)) < 1.0) {
                return Err(Error::Invariant(format!("witness term {k} value is not below c")));
            }
            if k > 0 {
                let p = &self.entries[k - 1];
                if !(e.q > p.q && e.n > p.n) {
                    return Err(Error::Invariant(format!("witness term {k} does not increase")));
                }
                if !separated(&self.weights, &p.m, &e.m) {
                    return Err(Error::Invariant(format!(
                        "witness terms {} and {k} violate the ratio condition",
                        k - 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exact check `max{||q x1||^(1/i), ||q x2||^(1/j)} < c/q` for every term.
    pub fn certify(&self, x: &[RealSource; 2]) -> Result<Vec<f64>> {
        let mut margins = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let q = biguint_to_bigint(&e.q);
            let bits = 64 + e.q.bits() as u32;
            let mut d = [0.0; 2];
            for t in 0..2 {
                let c = x[t].dist_mult(&q, bits)?;
                d[t] = c.to_f64() + c.error_bound();
            }
            let v = weighted_value_upper(&self.weights, e.q_f64(), d);
            let c = e.c_f64();
            if !(v < c) {
                return Err(Error::Invariant(format!(
                    "witness q = {} has value {v:e} >= c = {c:e}",
                    e.q
                )));
            }
            margins.push(c - v);
        }
        Ok(margins)
    }
}

/// Scan `1 <= q <= limit` for record-small weighted values and thin them to a
/// witness sequence.
pub fn extract_witness(x: &[RealSource; 2], w: Weights, limit: u64) -> Result<WitnessSequence> {
    extract_witness_with(x, w, limit, None)
}

/// As [`extract_witness`], discarding terms with `c >= ceiling`.
pub fn extract_witness_with(
    x: &[RealSource; 2],
    w: Weights,
    limit: u64,
    ceiling: Option<f64>,
) -> Result<WitnessSequence> {
    if limit < 2 {
        return Err(Error::NoWitness(format!("scan limit {limit} is too small")));
    }
    let scan = [OrbitScanner::new(&x[0])?, OrbitScanner::new(&x[1])?];
    let q_max = i64::try_from(limit).map_err(|_| Error::param("scan limit exceeds i64"))?;
    let mut best = f64::INFINITY;
    let mut records = Vec::new();
    for q in 1..=q_max {
        let v = q as f64 * w.weighted_max([scan[0].dist(q), scan[1].dist(q)]);
        if v < best {
            best = v;
            records.push(q);
        }
    }
    let bits = 64 + 64 - (limit.leading_zeros());
    let mut candidates = Vec::with_capacity(records.len());
    for q in records {
        let qb = BigInt::from(q);
        let mut d = [0.0; 2];
        for t in 0..2 {
            let c = x[t].dist_mult(&qb, bits)?;
            d[t] = c.to_f64() + c.error_bound() + f64::EPSILON * c.to_f64();
        }
        if d[0] == 0.0 && d[1] == 0.0 {
            // q x is an integer vector; the constant is zero and no finite c works.
            continue;
        }
        candidates.push((big(q as u64), weighted_value_upper(&w, q as f64, d)));
    }
    WitnessSequence::thin(w, candidates, ceiling)
}

/// Witness for a lacunary pair from its analytically good denominators
/// `q_k = 2^{a_k}`, with exactly evaluated distances.
pub fn witness_from_lacunary(v: &LiouvilleVector, w: Weights) -> Result<WitnessSequence> {
    let mut candidates = Vec::new();
    for b in &v.bounds {
        let q = biguint_to_bigint(&b.q);
        let mut d = [0.0; 2];
        for t in 0..2 {
            let c = v.xi[t].dist_mult(&q, 64)?;
            d[t] = c.to_f64() * (1.0 + 4.0 * f64::EPSILON) + c.error_bound();
        }
        candidates.push((b.q.clone(), weighted_value_upper(&w, biguint_to_f64(&b.q), d)));
    }
    WitnessSequence::thin(w, candidates, None)
}

// ---------------------------------------------------------------------------
// Constructions

/// `psi_0`: 1 on `[1, n_1]`, then `1/(q_{k+1} m_{k+1}) = 1/n_{k+1}` on `(n_k, n_{k+1}]`.
pub fn build_psi0(w: &WitnessSequence) -> Result<ApproxFunction> {
    w.validate()?;
    let mut breakpoints = Vec::with_capacity(w.entries.len());
    let mut values = Vec::with_capacity(w.entries.len());
    for (k, e) in w.entries.iter().enumerate() {
        breakpoints.push(e.n.clone());
        values.push(if k == 0 {
            Value::Exact(BigRational::one())
        } else {
            Value::Exact(BigRational::new(BigInt::one(), biguint_to_bigint(&e.n)))
        });
    }
    let f = ApproxFunction::piecewise(breakpoints, values)?;
    Ok(f.with_tags(
        Divergence::Diverges,
        "each complete block (n_k, n_{k+1}] sums to 1 - n_k/n_{k+1} > 1/2",
        format!(
            "psi0 from witness q = [{}]",
            w.entries.iter().map(|e| e.q.to_string()).collect::<Vec<_>>().join(", ")
        ),
    ))
}

/// Exact sums of `psi_0` over the complete blocks `(n_k, n_{k+1}]`.
pub fn psi0_block_sums(w: &WitnessSequence) -> Vec<BigRational> {
    w.entries
        .windows(2)
        .map(|p| {
            let len = biguint_to_bigint(&(&p[1].n - &p[0].n));
            BigRational::new(len, biguint_to_bigint(&p[1].n))
        })
        .collect()
}

/// The closed form `1 - (q_k/q_{k+1}) (c_{k+1}/c_k)^(1/3)` of the same sums.
pub fn psi0_block_sums_closed_form(w: &WitnessSequence) -> Vec<BigRational> {
    w.entries
        .windows(2)
        .map(|p| {
            // (c_{k+1}/c_k)^(1/3) = m_k / m_{k+1}
            let ratio = BigRational::new(
                biguint_to_bigint(&(&p[0].q * &p[0].m)),
                biguint_to_bigint(&(&p[1].q * &p[1].m)),
            );
            BigRational::one() - ratio
        })
        .collect()
}

/// `psi_1(r) = min{psi(r), a^*/2, a_* c/(2r)}`.
pub fn refine_psi1(psi: &ApproxFunction, c: f64, w: Weights) -> Result<ApproxFunction> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::param(format!("badness constant must lie in (0,1), got {c}")));
    }
    // Both coefficients are taken as exact doubles, rounded down when the
    // true value is irrational so that psi1 never exceeds its caps.
    let down = |v: f64, exact: bool| if exact { v } else { v * (1.0 - 2.0 * f64::EPSILON) };
    let integral = |e: f64| e.fract() == 0.0;
    let cap = ApproxFunction::constant_exact(ratio_from_f64(down(
        w.a_upper() / 2.0,
        integral(1.0 / w.max()),
    )))?;
    let envelope =
        ApproxFunction::power(down(w.a_lower() * c / 2.0, integral(1.0 / w.min())), 1.0)?;
    let divergence = psi.divergence;
    let provenance = format!("psi1[{psi}; c={c}, i={}, j={}]", w.i(), w.j());
    Ok(ApproxFunction::new(
        Shape::Min {
            parts: vec![psi.clone(), cap, envelope],
        },
        divergence,
        "min of psi with a constant and a harmonic envelope; divergence inherited from psi",
        provenance,
    ))
}

/// Default number of levels materialized by [`build_psi2`].
pub const PSI2_DEFAULT_LEVELS: usize = 12;

/// `psi_2(r) = psi_1(k)` for `r <= k`, `psi_1(k^{t+1})` on `(k^t, k^{t+1}]`.
pub fn build_psi2(psi1: &ApproxFunction, k: u64) -> Result<ApproxFunction> {
    build_psi2_with(psi1, k, PSI2_DEFAULT_LEVELS)
}

pub fn build_psi2_with(psi1: &ApproxFunction, k: u64, levels: usize) -> Result<ApproxFunction> {
    if k <= 4 {
        return Err(Error::InvalidParameter(format!("psi2 needs k > 4, got k = {k}")));
    }
    if levels == 0 {
        return Err(Error::param("psi2 needs at least one level"));
    }
    let kb = big(k);
    let mut breakpoints = Vec::with_capacity(levels);
    let mut values = Vec::with_capacity(levels);
    let mut r = kb.clone();
    for _ in 0..levels {
        let v = match psi1.eval_exact(&r)? {
            Some(e) => Value::Exact(e),
            None => Value::Approx(psi1.eval_big(&r)?),
        };
        breakpoints.push(r.clone());
        values.push(v);
        r *= &kb;
    }
    let mut f = ApproxFunction::piecewise(breakpoints, values)?.with_tags(
        psi1.divergence,
        "block sums dominate (1/k) times the psi1 tail",
        format!("psi2[{psi1}; k={k}]"),
    );
    f.recipe = Some(Recipe::Psi2 {
        base: Box::new(psi1.clone()),
        k,
    });
    Ok(f)
}

/// `psi_3 = psi / sqrt(l)` on the `l`-th block, where block `l` is chosen so
/// that `psi` sums to at least `l` over it.
pub fn build_psi3(psi: &ApproxFunction, budget: Budget) -> Result<ApproxFunction> {
    if psi.divergence == Divergence::Converges {
        return Err(Error::param("psi3 needs a divergent psi"));
    }
    let mut breakpoints = Vec::with_capacity(budget.blocks);
    let mut start = 1u64;
    for l in 1..=budget.blocks {
        let end = find_block_end(psi, start, l as f64, budget.max_r, 1)?;
        breakpoints.push(big(end));
        start = end + 1;
    }
    if breakpoints.is_empty() {
        return Err(Error::param("psi3 needs at least one block"));
    }
    let mut f = ApproxFunction::new(
        Shape::Modulated {
            base: Box::new(psi.clone()),
            breakpoints,
        },
        Divergence::Diverges,
        "block l contributes sqrt(l) >= 1 and psi3/psi = 1/sqrt(l) -> 0",
        format!("psi3[{psi}]"),
    );
    f.recipe = Some(Recipe::Psi3 {
        base: Box::new(psi.clone()),
    });
    Ok(f)
}

/// Smallest `end >= start` with `sum_{r=start}^{end} psi(s r) >= target`.
fn find_block_end(psi: &ApproxFunction, start: u64, target: f64, max_r: u64, s: u64) -> Result<u64> {
    let exhausted = || {
        Error::BudgetExhausted(format!(
            "block starting at {start} needs arguments beyond {max_r}"
        ))
    };
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut r = start;
    loop {
        let arg = r.checked_mul(s).ok_or_else(exhausted)?;
        if arg > max_r {
            return Err(exhausted());
        }
        let y = psi.eval(arg)? - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        let slack = 8.0 * f64::EPSILON * sum * (r - start + 1) as f64;
        if sum + slack >= target {
            let ok = if s == 1 {
                psi.block_sum_at_least(start, r, target)?
            } else {
                sum - slack >= target || dilated_sum_exact(psi, start, r, s, target)?
            };
            if ok {
                return Ok(r);
            }
        }
        r += 1;
    }
}

fn dilated_sum_exact(psi: &ApproxFunction, lo: u64, hi: u64, s: u64, target: f64) -> Result<bool> {
    let mut exact = BigRational::zero();
    let mut approx = 0.0;
    let mut all_exact = true;
    for r in lo..=hi {
        let arg = big(r * s);
        match psi.eval_exact(&arg)? {
            Some(v) if all_exact => exact += v,
            _ => all_exact = false,
        }
        approx += psi.eval_big(&arg)?;
    }
    Ok(if all_exact {
        exact >= ratio_from_f64(target)
    } else {
        approx >= target
    })
}

/// `psi_4(r) = psi_3(s_r r)` with `s_r = m` on the `m`-th block, each block
/// long enough that its sum reaches 1. Returns the function and the table of
/// `(block end, s)` pairs.
pub fn build_psi4(psi3: &ApproxFunction, budget: Budget) -> Result<(ApproxFunction, Vec<(u64, u64)>)> {
    if psi3.divergence == Divergence::Converges {
        return Err(Error::param("psi4 needs a divergent psi3"));
    }
    let limit = match psi3.domain_limit() {
        Some(l) => l.to_u64().unwrap_or(u64::MAX).min(budget.max_r),
        None => budget.max_r,
    };
    let mut breakpoints = Vec::with_capacity(budget.blocks);
    let mut multipliers = Vec::with_capacity(budget.blocks);
    let mut table = Vec::with_capacity(budget.blocks);
    let mut start = 1u64;
    for m in 1..=budget.blocks as u64 {
        let end = find_block_end(psi3, start, 1.0, limit, m)?;
        breakpoints.push(big(end));
        multipliers.push(m);
        table.push((end, m));
        start = end + 1;
    }
    if breakpoints.is_empty() {
        return Err(Error::param("psi4 needs at least one block"));
    }
    let mut f = ApproxFunction::new(
        Shape::Dilated {
            base: Box::new(psi3.clone()),
            breakpoints,
            multipliers,
        },
        Divergence::Diverges,
        "every block sums to at least 1; s_r non-decreasing and unbounded",
        format!("psi4[{psi3}]"),
    );
    f.recipe = Some(Recipe::Psi4 {
        base: Box::new(psi3.clone()),
    });
    Ok((f, table))
}
