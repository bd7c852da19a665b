//! Finite-scan evidence about (i,j)-badness.
//!
//! Nothing here claims membership of Bad(i,j); a profile is the exact record
//! structure of `q * max{||q x1||^(1/i), ||q x2||^(1/j)}` over `1 <= q <= Q`.

use std::path::Path;

use num_bigint::BigInt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::realnum::{OrbitScanner, RealSource};
use crate::weights::Weights;

const CHUNK: i64 = 1 << 15;

/// A running-minimum record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub q: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadnessProfile {
    pub weights: Weights,
    pub limit: u64,
    /// Strictly decreasing values at increasing `q`.
    pub records: Vec<Record>,
    pub c_estimate: f64,
    /// Absolute error bound on `c_estimate`.
    pub c_error: f64,
    pub argmin: u64,
    /// Some `q x` is an integer vector, so the constant is zero.
    pub rational_degenerate: bool,
    /// Records whose ordering against a neighbour was within error and had
    /// to be settled at doubled precision.
    pub near_ties: Vec<u64>,
    pub note: String,
}

impl BadnessProfile {
    /// JSON summary `{i, j, Q, c_estimate, argmin, ...}`.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "i": self.weights.i(),
            "j": self.weights.j(),
            "Q": self.limit,
            "c_estimate": format!("{:e}", self.c_estimate),
            "c_error": format!("{:e}", self.c_error),
            "argmin": self.argmin,
            "records": self.records.len(),
            "rational_degenerate": self.rational_degenerate,
            "note": self.note,
        })
    }

    /// CSV `q,v_q` of the records.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["q", "v_q"])?;
        for r in &self.records {
            w.write_record([r.q.to_string(), format!("{:e}", r.value)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Running minima of `f` over `lo..=hi`, computed chunkwise in parallel and
/// min-merged in order.
fn parallel_records<F>(lo: i64, hi: i64, f: F) -> Vec<(i64, f64)>
where
    F: Fn(i64) -> f64 + Sync,
{
    if lo > hi {
        return Vec::new();
    }
    let starts: Vec<i64> = (lo..=hi).step_by(CHUNK as usize).collect();
    let local: Vec<Vec<(i64, f64)>> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + CHUNK - 1).min(hi);
            let mut best = f64::INFINITY;
            let mut out = Vec::new();
            for q in s..=e {
                let v = f(q);
                if v < best {
                    best = v;
                    out.push((q, v));
                }
            }
            out
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut merged = Vec::new();
    for chunk in local {
        for (q, v) in chunk {
            if v < best {
                best = v;
                merged.push((q, v));
            }
        }
    }
    merged
}

fn scan_limit(limit: u64) -> Result<i64> {
    if limit == 0 {
        return Err(Error::param("scan limit Q must be at least 1"));
    }
    i64::try_from(limit).map_err(|_| Error::param("scan limit exceeds i64"))
}

/// Certified weighted value at `q` with `bits` of working precision.
fn certified_value(x: &[RealSource; 2], w: Weights, q: u64, bits: u32) -> Result<(f64, f64)> {
    let qb = BigInt::from(q);
    let mut d = [0.0; 2];
    let mut e = [0.0; 2];
    for t in 0..2 {
        let c = x[t].dist_mult(&qb, bits)?;
        d[t] = c.to_f64();
        e[t] = c.error_bound() + f64::EPSILON * d[t];
    }
    let v = q as f64 * w.weighted_max(d);
    let hi = q as f64 * w.weighted_max([d[0] + e[0], d[1] + e[1]]);
    let lo = q as f64 * w.weighted_max([(d[0] - e[0]).max(0.0), (d[1] - e[1]).max(0.0)]);
    Ok((v, (hi - v).max(v - lo) + 4.0 * f64::EPSILON * v))
}

/// Exhaustive scan `1 <= q <= Q`.
pub fn profile(x: &[RealSource; 2], w: Weights, limit: u64) -> Result<BadnessProfile> {
    let hi = scan_limit(limit)?;
    let scan = [OrbitScanner::new(&x[0])?, OrbitScanner::new(&x[1])?];
    let raw = parallel_records(1, hi, |q| q as f64 * w.weighted_max([scan[0].dist(q), scan[1].dist(q)]));

    let log_q = 64 - limit.leading_zeros();
    let bits = 64 + log_q;
    let mut certified = Vec::with_capacity(raw.len());
    for &(q, _) in &raw {
        let (v, e) = certified_value(x, w, q as u64, bits)?;
        certified.push((q as u64, v, e));
    }
    // Re-settle records that sit within error of their predecessor.
    let mut near_ties = Vec::new();
    for n in 1..certified.len() {
        let (_, pv, pe) = certified[n - 1];
        let (q, v, e) = certified[n];
        if v + e >= pv - pe {
            near_ties.push(q);
            let (v2, e2) = certified_value(x, w, q, 2 * bits)?;
            certified[n] = (q, v2, e2);
        }
    }
    let mut records: Vec<Record> = Vec::with_capacity(certified.len());
    let mut c_error = 0.0;
    for &(q, v, e) in &certified {
        if records.last().map_or(true, |r| v < r.value) {
            records.push(Record { q, value: v });
            c_error = e;
        }
    }
    let last = *records.last().expect("q = 1 is always a record");
    let rational_degenerate = last.value == 0.0 && c_error == 0.0;
    let exact_orbit = scan[0].is_exact() && scan[1].is_exact();
    let note = if rational_degenerate {
        format!("q = {} maps x to an integer vector; no positive constant exists", last.q)
    } else if exact_orbit {
        "rational input: c_estimate is the exact scan minimum".to_string()
    } else {
        "finite-scan evidence only; quadratic pairs are heuristic stand-ins for Bad(i,j)".to_string()
    };
    Ok(BadnessProfile {
        weights: w,
        limit,
        c_estimate: last.value,
        c_error,
        argmin: last.q,
        records,
        rational_degenerate,
        near_ties,
        note,
    })
}

/// `min_{lo <= q <= hi} q * max{...}` and its argmin.
pub fn range_min(x: &[RealSource; 2], w: Weights, lo: u64, hi: u64) -> Result<Record> {
    let hi_i = scan_limit(hi)?;
    let lo_i = (lo.max(1)) as i64;
    if lo_i > hi_i {
        return Err(Error::param("empty scan range"));
    }
    let scan = [OrbitScanner::new(&x[0])?, OrbitScanner::new(&x[1])?];
    let recs = parallel_records(lo_i, hi_i, |q| {
        q as f64 * w.weighted_max([scan[0].dist(q), scan[1].dist(q)])
    });
    let (q, v) = *recs.last().expect("non-empty range");
    Ok(Record { q: q as u64, value: v })
}

/// Best-approximation records of a single number: the `q` at which
/// `||q x||` reaches a new minimum (the convergent denominators), paired with
/// `q ||q x||`.
pub fn one_dim_profile(x: &RealSource, limit: u64) -> Result<Vec<Record>> {
    let hi = scan_limit(limit)?;
    let scan = OrbitScanner::new(x)?;
    let recs = parallel_records(1, hi, |q| scan.dist(q));
    Ok(recs
        .into_iter()
        .map(|(q, d)| Record {
            q: q as u64,
            value: q as f64 * d,
        })
        .collect())
}

/// `min_{from <= q <= Q} q ||q x||`.
pub fn one_dim_min(x: &RealSource, from: u64, limit: u64) -> Result<Record> {
    let hi = scan_limit(limit)?;
    let lo = from.max(1) as i64;
    if lo > hi {
        return Err(Error::param("empty scan range"));
    }
    let scan = OrbitScanner::new(x)?;
    let recs = parallel_records(lo, hi, |q| q as f64 * scan.dist(q));
    let (q, v) = *recs.last().expect("non-empty range");
    Ok(Record { q: q as u64, value: v })
}

/// Estimate of `liminf q ||q x||` from the best-approximation records with
/// `q >= sqrt(Q)`.
pub fn liminf_estimate(records: &[Record], limit: u64) -> Option<f64> {
    let floor = (limit as f64).sqrt();
    records
        .iter()
        .filter(|r| r.q as f64 >= floor)
        .map(|r| r.value)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
}

/// `min_{1 <= q <= Q} q ||q x - gamma||`; `gamma` is read mod 1.
pub fn inhomogeneous_min(x: &RealSource, gamma: &RealSource, limit: u64) -> Result<Record> {
    let hi = scan_limit(limit)?;
    let scan = OrbitScanner::new(x)?;
    // gamma's circle position, reduced mod 1
    let g = OrbitScanner::new(gamma)?.position(1);
    let recs = parallel_records(1, hi, |q| q as f64 * scan.dist_shifted(q, g));
    let (q, v) = *recs.last().expect("non-empty range");
    Ok(Record { q: q as u64, value: v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::realnum::liouville_vector;

    fn quad_pair() -> [RealSource; 2] {
        [RealSource::sqrt(2).unwrap(), RealSource::sqrt(3).unwrap()]
    }

    #[test]
    fn rational_degeneracy() {
        let x = [RealSource::rational(1, 3).unwrap(), RealSource::rational(1, 3).unwrap()];
        let p = profile(&x, Weights::symmetric(), 10).unwrap();
        assert!(p.rational_degenerate);
        assert_eq!(p.c_estimate, 0.0);
        assert_eq!(p.argmin, 3);
    }

    #[test]
    fn monotone_in_q_and_swap_coherent() {
        let x = quad_pair();
        let w = Weights::new(0.3, 0.7).unwrap();
        let a = profile(&x, w, 100).unwrap();
        let b = profile(&x, w, 1000).unwrap();
        assert!(a.c_estimate >= b.c_estimate);
        assert!(b.records.windows(2).all(|r| r[0].q < r[1].q && r[0].value > r[1].value));
        let sx = [x[1].clone(), x[0].clone()];
        let s = profile(&sx, w.swapped(), 1000).unwrap();
        assert_eq!(s.c_estimate, b.c_estimate);
        assert_eq!(s.argmin, b.argmin);
    }

    #[test]
    fn parallel_records_match_serial() {
        let x = quad_pair();
        let w = Weights::symmetric();
        let p = profile(&x, w, 200_000).unwrap();
        let s = [OrbitScanner::new(&x[0]).unwrap(), OrbitScanner::new(&x[1]).unwrap()];
        let mut best = f64::INFINITY;
        let mut serial = Vec::new();
        for q in 1..=200_000i64 {
            let v = q as f64 * w.weighted_max([s[0].dist(q), s[1].dist(q)]);
            if v < best {
                best = v;
                serial.push(q as u64);
            }
        }
        assert_eq!(p.records.iter().map(|r| r.q).collect::<Vec<_>>(), serial);
    }

    #[test]
    fn liouville_values_meet_analytic_bounds() {
        let v = liouville_vector(3, 3).unwrap();
        let p = profile(&v.xi, Weights::symmetric(), 600).unwrap();
        for b in v.bounds.iter().filter(|b| b.q <= 600u32.into()) {
            let q: u64 = b.q.clone().try_into().unwrap();
            assert!(p.records.iter().any(|r| r.q == q), "lacunary q is a record");
            // exact: ||q xi_t|| <= bound for both coordinates
            for t in 0..2 {
                let d = v.xi[t].dist_mult(&BigInt::from(q), 64).unwrap();
                assert!(d.is_exact() && d.value() <= &b.bound);
            }
        }
        assert!(p.c_estimate < 1e-3);
    }

    #[test]
    fn golden_ratio_small_scan() {
        let phi = RealSource::golden_ratio();
        let m = one_dim_min(&phi, 2, 10).unwrap();
        assert_eq!(m.q, 3);
        assert!((m.value - 0.4376941012509463).abs() < 1e-12);
        let recs = one_dim_profile(&phi, 1000).unwrap();
        let qs: Vec<u64> = recs.iter().map(|r| r.q).collect();
        assert_eq!(qs, vec![1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377, 610, 987]);
    }

    #[test]
    fn sqrt2_liminf() {
        let x = RealSource::sqrt(2).unwrap();
        let q = 1_000_000;
        let recs = one_dim_profile(&x, q).unwrap();
        let est = liminf_estimate(&recs, q).unwrap();
        assert!((est - 0.3535533905932738).abs() < 1e-6);
    }

    #[test]
    fn inhomogeneous_cases() {
        let phi = RealSource::golden_ratio();
        let h = one_dim_min(&phi, 1, 500).unwrap();
        let zero = RealSource::rational(0, 1).unwrap();
        let g = inhomogeneous_min(&phi, &zero, 500).unwrap();
        assert_eq!(h, g);
        let half = RealSource::rational(1, 2).unwrap();
        assert!(inhomogeneous_min(&phi, &half, 10_000).unwrap().value <= 0.45);
        let r = RealSource::rational(2, 7).unwrap();
        let z = inhomogeneous_min(&r, &r, 50).unwrap();
        assert_eq!((z.q, z.value), (1, 0.0));
    }
}
