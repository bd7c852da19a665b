//! Monte-Carlo checks of the doubly-metric (x, gamma) counting theorem, and
//! Gallagher's multiplicative sum.
//!
//! Samples are random dyadics with 64 fractional bits, so `q x - gamma mod 1`
//! is computed exactly with wrapping `u64` arithmetic.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psi::{ApproxFunction, Shape};
use crate::weights::Weights;

pub const RNG_TAG: &str = "chacha8-stream-per-chunk";
/// Samples per RNG stream.
pub const CHUNK: u64 = 4096;
pub const PZ_EPS: [f64; 3] = [0.1, 0.25, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RegionFamily {
    /// `d = 1`: `||u|| <= psi`.
    Interval,
    /// `d = 2`: `||u1|| <= psi^i`, `||u2|| <= psi^j`.
    SupNorm { weights: Weights },
    /// `d = 2`: `||u1|| ||u2|| <= psi`.
    Multiplicative,
}

impl RegionFamily {
    pub fn dim(&self) -> usize {
        match self {
            RegionFamily::Interval => 1,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegionFamily::Interval => "interval",
            RegionFamily::SupNorm { .. } => "sup_norm",
            RegionFamily::Multiplicative => "multiplicative",
        }
    }

    /// Closed-form measure of a region with parameter `t`.
    pub fn measure_at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::OutOfDomain(format!("region parameter {t} is negative")));
        }
        Ok(match self {
            RegionFamily::Interval => (2.0 * t).min(1.0),
            RegionFamily::SupNorm { weights } => {
                (2.0 * t.powf(weights.i())).min(1.0) * (2.0 * t.powf(weights.j())).min(1.0)
            }
            RegionFamily::Multiplicative => {
                if t > 0.25 {
                    return Err(Error::OutOfDomain(format!(
                        "multiplicative area formula needs t <= 1/4, got {t}"
                    )));
                }
                if t == 0.0 {
                    0.0
                } else {
                    4.0 * t * (1.0 + (1.0 / (4.0 * t)).ln())
                }
            }
        })
    }
}

/// `mu_d(A_q)` for the region family driven by `psi`.
pub fn region_measure(family: &RegionFamily, psi: &ApproxFunction, q: u64) -> Result<f64> {
    if q == 0 {
        return Err(Error::param("q must be at least 1"));
    }
    family.measure_at(psi.eval(q)?)
}

/// Integer thresholds for the exact hit test at one `q`.
#[derive(Clone, Copy, Debug)]
enum Threshold {
    One(u64),
    Box([u64; 2]),
    Product(u128),
}

const TWO64: f64 = 18446744073709551616.0;

fn scaled_u64(v: f64) -> u64 {
    // saturating float-to-int cast is a floor for non-negative input
    (v.min(0.5) * TWO64) as u64
}

fn thresholds(family: &RegionFamily, psi: &ApproxFunction, q_max: u64) -> Result<Vec<Threshold>> {
    (1..=q_max)
        .map(|q| {
            let t = psi.eval(q)?;
            Ok(match family {
                RegionFamily::Interval => Threshold::One(scaled_u64(t)),
                RegionFamily::SupNorm { weights } => {
                    Threshold::Box([scaled_u64(t.powf(weights.i())), scaled_u64(t.powf(weights.j()))])
                }
                RegionFamily::Multiplicative => Threshold::Product((t * TWO64 * TWO64) as u128),
            })
        })
        .collect()
}

#[inline]
fn norm(u: u64) -> u64 {
    u.min(u.wrapping_neg())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PzRow {
    pub eps: f64,
    /// `(1 - eps)^2 E^2 / E[A^2]` with the empirical second moment.
    pub floor: f64,
    pub empirical: f64,
    pub sigma: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub from: u64,
    pub tail_sum: f64,
    /// Fraction of samples with a hit at some `q` in `[from, Q]`.
    pub fraction: f64,
    pub sigma: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub expectation_ok: bool,
    pub z_score: f64,
    pub pz_ok: bool,
    pub tail_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRun {
    pub family: RegionFamily,
    pub d: usize,
    pub psi: String,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "Q")]
    pub q: u64,
    pub seed: u64,
    pub rng: String,
    #[serde(rename = "E_analytic")]
    pub e_analytic: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
    /// 95% normal half-width.
    pub ci_half_width: f64,
    pub second_moment: f64,
    pub max_count: u64,
    /// `(A_Q, number of samples)` pairs.
    pub histogram: Vec<(u64, u64)>,
    pub pz_table: Vec<PzRow>,
    pub tail: TailCheck,
    pub verdicts: Verdicts,
}

#[derive(Default)]
struct Tally {
    sum: u64,
    sum_sq: u128,
    hist: BTreeMap<u64, u64>,
    pz: [u64; 3],
    tail: u64,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        for (k, v) in other.hist {
            *self.hist.entry(k).or_default() += v;
        }
        for e in 0..3 {
            self.pz[e] += other.pz[e];
        }
        self.tail += other.tail;
        self
    }
}

/// Runs `n` samples of `A_Q(x, gamma)`; the tail check looks at `q >= Q/2`.
pub fn run_mc(family: &RegionFamily, psi: &ApproxFunction, n: u64, q: u64, seed: u64) -> Result<McRun> {
    run_mc_with_tail(family, psi, n, q, seed, (q / 2).max(1))
}

pub fn run_mc_with_tail(
    family: &RegionFamily,
    psi: &ApproxFunction,
    n: u64,
    q_max: u64,
    seed: u64,
    tail_from: u64,
) -> Result<McRun> {
    if n < 1000 {
        return Err(Error::param(format!("need at least 1000 samples, got {n}")));
    }
    if q_max == 0 {
        return Err(Error::param("Q must be at least 1"));
    }
    if tail_from == 0 || tail_from > q_max {
        return Err(Error::param("tail start must lie in [1, Q]"));
    }
    let measures: Vec<f64> = (1..=q_max)
        .map(|q| region_measure(family, psi, q))
        .collect::<Result<_>>()?;
    let e_analytic: f64 = measures.iter().sum();
    let tail_sum: f64 = measures[(tail_from - 1) as usize..].iter().sum();
    let thr = thresholds(family, psi, q_max)?;
    let pz_cut: Vec<f64> = PZ_EPS.iter().map(|e| e * e_analytic).collect();
    let d = family.dim();

    let chunks = n.div_ceil(CHUNK);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = CHUNK.min(n - c * CHUNK);
            let mut t = Tally::default();
            for _ in 0..count {
                let (x, g) = if d == 1 {
                    ([rng.next_u64(), 0], [rng.next_u64(), 0])
                } else {
                    ([rng.next_u64(), rng.next_u64()], [rng.next_u64(), rng.next_u64()])
                };
                let mut u = [g[0].wrapping_neg(), g[1].wrapping_neg()];
                let mut a = 0u64;
                let mut tail_hit = false;
                for (idx, th) in thr.iter().enumerate() {
                    u[0] = u[0].wrapping_add(x[0]);
                    u[1] = u[1].wrapping_add(x[1]);
                    let hit = match *th {
                        Threshold::One(h) => norm(u[0]) <= h,
                        Threshold::Box(h) => norm(u[0]) <= h[0] && norm(u[1]) <= h[1],
                        Threshold::Product(h) => (norm(u[0]) as u128) * (norm(u[1]) as u128) <= h,
                    };
                    if hit {
                        a += 1;
                        if idx as u64 + 1 >= tail_from {
                            tail_hit = true;
                        }
                    }
                }
                t.sum += a;
                t.sum_sq += (a as u128) * (a as u128);
                *t.hist.entry(a).or_default() += 1;
                for (e, cut) in pz_cut.iter().enumerate() {
                    if a as f64 >= *cut {
                        t.pz[e] += 1;
                    }
                }
                t.tail += tail_hit as u64;
            }
            t
        })
        .reduce(Tally::default, Tally::merge);

    let nf = n as f64;
    let mean = tally.sum as f64 / nf;
    let second_moment = tally.sum_sq as f64 / nf;
    let var = (second_moment - mean * mean).max(0.0) * nf / (nf - 1.0);
    let std_dev = var.sqrt();
    let std_error = std_dev / nf.sqrt();
    let z_score = if std_error > 0.0 {
        (mean - e_analytic) / std_error
    } else if mean == e_analytic {
        0.0
    } else {
        f64::INFINITY
    };
    let expectation_ok = (mean - e_analytic).abs() <= 4.0 * std_error + 1e-12;

    let pz_table: Vec<PzRow> = PZ_EPS
        .iter()
        .zip(tally.pz)
        .map(|(&eps, hits)| {
            let floor = if second_moment > 0.0 {
                (1.0 - eps).powi(2) * e_analytic * e_analytic / second_moment
            } else {
                0.0
            };
            let empirical = hits as f64 / nf;
            let sigma = (empirical * (1.0 - empirical) / nf).sqrt();
            PzRow {
                eps,
                floor,
                empirical,
                sigma,
                ok: empirical >= floor - 3.0 * sigma,
            }
        })
        .collect();
    let pz_ok = pz_table.iter().all(|r| r.ok);

    let fraction = tally.tail as f64 / nf;
    let p = tail_sum.min(1.0);
    let sigma = (p * (1.0 - p) / nf).sqrt();
    let tail = TailCheck {
        from: tail_from,
        tail_sum,
        fraction,
        sigma,
        ok: fraction <= tail_sum + 3.0 * sigma,
    };
    let tail_ok = tail.ok;

    Ok(McRun {
        family: *family,
        d,
        psi: psi.to_string(),
        n,
        q: q_max,
        seed,
        rng: RNG_TAG.to_string(),
        e_analytic,
        mean,
        std_dev,
        std_error,
        ci_half_width: 1.96 * std_error,
        second_moment,
        max_count: tally.hist.keys().next_back().copied().unwrap_or(0),
        histogram: tally.hist.into_iter().collect(),
        pz_table,
        tail,
        verdicts: Verdicts {
            expectation_ok,
            z_score,
            pz_ok,
            tail_ok,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GallagherTag {
    Converges,
    Diverges,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GallagherSum {
    pub n: u64,
    pub value: f64,
    pub error: f64,
    pub tag: GallagherTag,
    pub basis: String,
}

/// `sum_{r <= n} psi(r) ln(1/psi(r))`, tagged from the shape of `psi` when the
/// shape decides it.
pub fn gallagher_sum(psi: &ApproxFunction, n: u64) -> Result<GallagherSum> {
    if n == 0 {
        return Err(Error::param("n must be at least 1"));
    }
    // Neumaier summation.
    let mut s = 0.0f64;
    let mut comp = 0.0f64;
    let mut abs = 0.0f64;
    for r in 1..=n {
        let v = psi.eval(r)?;
        // psi = 1 contributes a zero term
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::OutOfDomain(format!("psi({r}) = {v} is outside (0, 1]")));
        }
        let term = -v * v.ln();
        abs += term.abs();
        let t = s + term;
        if s.abs() >= term.abs() {
            comp += (s - t) + term;
        } else {
            comp += (term - t) + s;
        }
        s = t;
    }
    let (tag, basis) = match &psi.shape {
        Shape::Power { exponent, .. } if *exponent > 1.0 => {
            (GallagherTag::Converges, format!("power law r^-{exponent}: terms ~ ln r / r^{exponent}"))
        }
        Shape::Power { exponent, .. } => {
            (GallagherTag::Diverges, format!("power law r^-{exponent}: terms >= const / r"))
        }
        Shape::Constant { .. } => (GallagherTag::Diverges, "constant terms".to_string()),
        Shape::LogHarmonic { .. } => (GallagherTag::Diverges, "terms ~ const / r".to_string()),
        _ => (GallagherTag::Unknown, format!("undecided at budget n = {n}")),
    };
    Ok(GallagherSum {
        n,
        value: s + comp,
        error: 8.0 * f64::EPSILON * abs,
        tag,
        basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let sq = RegionFamily::SupNorm {
            weights: Weights::symmetric(),
        };
        assert!((sq.measure_at(1e-2).unwrap() - 4e-2).abs() < 1e-15);
        let m = RegionFamily::Multiplicative;
        assert!((m.measure_at(0.01).unwrap() - 0.04 * (1.0 + 25f64.ln())).abs() < 1e-15);
        assert_eq!(m.measure_at(0.25).unwrap(), 1.0);
        assert!(matches!(m.measure_at(0.3), Err(Error::OutOfDomain(_))));
        assert_eq!(RegionFamily::Interval.measure_at(0.7).unwrap(), 1.0);
    }

    #[test]
    fn vanishing_psi_counts_nothing() {
        let psi = ApproxFunction::constant(1e-300).unwrap();
        let run = run_mc(&RegionFamily::Interval, &psi, 2000, 50, 1).unwrap();
        assert_eq!(run.mean, 0.0);
        assert!(run.e_analytic < 1e-290);
        assert_eq!(run.histogram, vec![(0, 2000)]);
        assert!(run.verdicts.expectation_ok);
    }

    #[test]
    fn sup_norm_expectation() {
        let psi = ApproxFunction::power(0.25, 1.0).unwrap();
        let fam = RegionFamily::SupNorm {
            weights: Weights::symmetric(),
        };
        let run = run_mc(&fam, &psi, 20_000, 200, 11).unwrap();
        let h: f64 = (1..=200).map(|q| 1.0 / q as f64).sum();
        assert!((run.e_analytic - h).abs() < 1e-12);
        assert!(run.verdicts.expectation_ok, "{run:?}");
        assert!(run.verdicts.pz_ok && run.verdicts.tail_ok);
    }

    #[test]
    fn seeded_runs_repeat() {
        let psi = ApproxFunction::power(0.01, 1.0).unwrap();
        let a = run_mc(&RegionFamily::Multiplicative, &psi, 5000, 100, 7).unwrap();
        let b = run_mc(&RegionFamily::Multiplicative, &psi, 5000, 100, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = run_mc(&RegionFamily::Multiplicative, &psi, 5000, 100, 8).unwrap();
        assert_ne!(a.histogram, c.histogram);
    }

    #[test]
    fn rejects_small_n() {
        let psi = ApproxFunction::power(0.01, 1.0).unwrap();
        assert!(run_mc(&RegionFamily::Interval, &psi, 999, 10, 0).is_err());
    }

    #[test]
    fn gallagher_tags() {
        let sq = ApproxFunction::power(1.0, 2.0).unwrap();
        let g = gallagher_sum(&sq, 10_000).unwrap();
        assert_eq!(g.tag, GallagherTag::Converges);
        let c = ApproxFunction::constant((-1f64).exp()).unwrap();
        let g = gallagher_sum(&c, 1000).unwrap();
        assert_eq!(g.tag, GallagherTag::Diverges);
        assert!((g.value - 1000.0 * (-1f64).exp()).abs() < 1e-9);
        assert!(gallagher_sum(&ApproxFunction::power(2.0, 1.0).unwrap(), 5).is_err());
    }
}
