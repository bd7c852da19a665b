//! Axis-aligned rectangles on the 2-torus and their unions.
//!
//! Union areas come from a coordinate-compressed plane sweep that is generic
//! over the scalar type: doubles with a certified error bound, exact
//! rationals, and exact elements of Q(sqrt 2) (enough for the square-root
//! half-widths that appear with `i = j = 1/2`).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::Write as _;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psi::ApproxFunction;
use crate::realnum::{OrbitScanner, RealSource, TorusPoint};
use crate::weights::Weights;

/// Closed rectangle `center ± half_widths` on the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusRect {
    pub center: TorusPoint,
    pub half_widths: [f64; 2],
    /// Absolute error bound on each half-width.
    pub hw_error: f64,
    pub label: Option<i64>,
}

impl TorusRect {
    pub fn new(center: TorusPoint, half_widths: [f64; 2], hw_error: f64, label: Option<i64>) -> Result<Self> {
        if !(half_widths[0] > 0.0 && half_widths[1] > 0.0) {
            return Err(Error::param("rectangle half-widths must be positive"));
        }
        Ok(TorusRect {
            center,
            half_widths,
            hw_error: hw_error.max(0.0),
            label,
        })
    }

    /// Whether the rectangle wraps all the way round in each axis.
    pub fn full_axis(&self) -> [bool; 2] {
        [self.half_widths[0] >= 0.5, self.half_widths[1] >= 0.5]
    }

    pub fn measure(&self) -> f64 {
        (2.0 * self.half_widths[0]).min(1.0) * (2.0 * self.half_widths[1]).min(1.0)
    }

    /// Bound on how far any edge may be from its true position.
    pub fn edge_error(&self) -> f64 {
        self.center.error + self.hw_error
    }

    /// Does the closed rectangle contain `p`, allowing slack `eps` per axis?
    pub fn contains_point(&self, p: [f64; 2], eps: f64) -> bool {
        (0..2).all(|t| torus_gap(p[t], self.center.coords[t]) <= self.half_widths[t] + eps)
    }

    /// Smallest per-axis slack `h_self - (|c - c'| + h_other)`; positive
    /// means `other` lies strictly inside.
    pub fn containment_margin(&self, other: &TorusRect) -> f64 {
        (0..2)
            .map(|t| {
                if self.half_widths[t] >= 0.5 {
                    return f64::INFINITY;
                }
                self.half_widths[t]
                    - torus_gap(self.center.coords[t], other.center.coords[t])
                    - other.half_widths[t]
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest per-axis separation `|c - c'| - (h + h')`; positive means the
    /// closed rectangles are disjoint.
    pub fn separation(&self, other: &TorusRect) -> f64 {
        (0..2)
            .map(|t| {
                torus_gap(self.center.coords[t], other.center.coords[t])
                    - self.half_widths[t]
                    - other.half_widths[t]
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same center, half-widths multiplied per axis.
    pub fn scaled(&self, factors: [f64; 2]) -> TorusRect {
        TorusRect {
            center: self.center,
            half_widths: [self.half_widths[0] * factors[0], self.half_widths[1] * factors[1]],
            hw_error: self.hw_error * factors[0].max(factors[1]) + 2.0 * f64::EPSILON,
            label: self.label,
        }
    }
}

/// Circle distance between two points of `[0,1)`.
pub fn torus_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

/// A finite union of torus rectangles with a provenance tag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RectCollection {
    pub rects: Vec<TorusRect>,
    pub provenance: String,
}

impl RectCollection {
    pub fn new(rects: Vec<TorusRect>, provenance: impl Into<String>) -> Self {
        RectCollection {
            rects,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn total_measure(&self) -> f64 {
        self.rects.iter().map(TorusRect::measure).sum()
    }

    /// CSV `q,center1,center2,h1,h2` plus a JSON sidecar next to it.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["q", "center1", "center2", "h1", "h2"])?;
        for r in &self.rects {
            w.write_record([
                r.label.map(|q| q.to_string()).unwrap_or_default(),
                format!("{:e}", r.center.coords[0]),
                format!("{:e}", r.center.coords[1]),
                format!("{:e}", r.half_widths[0]),
                format!("{:e}", r.half_widths[1]),
            ])?;
        }
        w.flush()?;
        let sidecar = serde_json::json!({
            "provenance": self.provenance,
            "count": self.rects.len(),
            "columns": ["q", "center1", "center2", "h1", "h2"],
        });
        let mut f = File::create(path.with_extension("json"))?;
        f.write_all(serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// A value with an absolute error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub value: f64,
    pub error: f64,
}

impl Measure {
    pub fn lower(&self) -> f64 {
        self.value - self.error
    }

    pub fn upper(&self) -> f64 {
        self.value + self.error
    }
}

// ---------------------------------------------------------------------------
// Rectangles from orbits

/// `R_psi(q)`: centered at `q x mod 1` with half-widths `(psi(|q|)^i, psi(|q|)^j)`.
pub fn rect_for(q: i64, x: &[RealSource; 2], psi: &ApproxFunction, w: Weights) -> Result<TorusRect> {
    if q == 0 {
        return Err(Error::param("rectangles are indexed by nonzero q"));
    }
    let bits = 64 + 64 - q.unsigned_abs().leading_zeros();
    let qb = BigInt::from(q);
    let c0 = x[0].frac_mult(&qb, bits)?;
    let c1 = x[1].frac_mult(&qb, bits)?;
    let err = c0.error_bound().max(c1.error_bound()) + f64::EPSILON;
    let v = psi.eval(q.unsigned_abs())?;
    let h = [v.powf(w.i()), v.powf(w.j())];
    TorusRect::new(
        TorusPoint::new(c0.to_f64(), c1.to_f64(), err),
        h,
        4.0 * f64::EPSILON * h[0].max(h[1]),
        Some(q),
    )
}

/// Rectangles for every `q` with `lo <= |q| <= hi` (both signs), built in
/// parallel from orbit scanners. `half` maps `|q|` to half-widths.
pub fn orbit_rects<F>(scan: &[OrbitScanner; 2], lo: u64, hi: u64, half: F) -> Result<Vec<TorusRect>>
where
    F: Fn(u64) -> Result<[f64; 2]> + Sync,
{
    if lo == 0 || lo > hi {
        return Ok(Vec::new());
    }
    let hi_i = i64::try_from(hi).map_err(|_| Error::param("orbit range exceeds i64"))?;
    let lo_i = lo as i64;
    (lo_i..=hi_i)
        .into_par_iter()
        .flat_map_iter(|q| [q, -q])
        .map(|q| {
            let h = half(q.unsigned_abs())?;
            let err = scan[0].error_bound(q).max(scan[1].error_bound(q));
            TorusRect::new(
                TorusPoint::new(scan[0].frac(q), scan[1].frac(q), err),
                h,
                4.0 * f64::EPSILON * h[0].max(h[1]),
                Some(q),
            )
        })
        .collect()
}

/// The anisotropic doubling `T(g) = (2^i g1, 2^j g2)` applied to centers and
/// half-widths.
pub fn doubling_map(c: &RectCollection, w: Weights) -> RectCollection {
    let f = [w.i().exp2(), w.j().exp2()];
    let rects = c
        .rects
        .iter()
        .map(|r| TorusRect {
            center: TorusPoint::new(
                r.center.coords[0] * f[0],
                r.center.coords[1] * f[1],
                r.center.error * 2.0 + 2.0 * f64::EPSILON,
            ),
            half_widths: [r.half_widths[0] * f[0], r.half_widths[1] * f[1]],
            hw_error: r.hw_error * 2.0 + 2.0 * f64::EPSILON,
            label: r.label,
        })
        .collect();
    RectCollection::new(rects, format!("T({})", c.provenance))
}

/// `R_{2 psi}` from `R_psi`: same centers, half-widths scaled by `(2^i, 2^j)`.
pub fn doubled(c: &RectCollection, w: Weights) -> RectCollection {
    let f = [w.i().exp2(), w.j().exp2()];
    RectCollection::new(
        c.rects.iter().map(|r| r.scaled(f)).collect(),
        format!("2{}", c.provenance),
    )
}

// ---------------------------------------------------------------------------
// Scalars for the sweep

/// Ordered field elements the sweep can work with.
pub trait Scalar: Clone + Send + Sync {
    fn zero() -> Self;
    fn one() -> Self;
    fn cmp_s(&self, other: &Self) -> Ordering;
    fn add_s(&self, other: &Self) -> Self;
    fn sub_s(&self, other: &Self) -> Self;
    fn mul_s(&self, other: &Self) -> Self;
    fn half() -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn half() -> Self {
        0.5
    }
    fn cmp_s(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
    fn add_s(&self, other: &Self) -> Self {
        self + other
    }
    fn sub_s(&self, other: &Self) -> Self {
        self - other
    }
    fn mul_s(&self, other: &Self) -> Self {
        self * other
    }
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn half() -> Self {
        BigRational::new(1.into(), 2.into())
    }
    fn cmp_s(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
    fn add_s(&self, other: &Self) -> Self {
        self + other
    }
    fn sub_s(&self, other: &Self) -> Self {
        self - other
    }
    fn mul_s(&self, other: &Self) -> Self {
        self * other
    }
}

/// `a + b sqrt(2)` with rational `a, b`; comparisons are exact.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QSqrt2 {
    pub a: BigRational,
    pub b: BigRational,
}

impl QSqrt2 {
    pub fn new(a: BigRational, b: BigRational) -> Self {
        QSqrt2 { a, b }
    }

    pub fn rational(a: BigRational) -> Self {
        QSqrt2 { a, b: Zero::zero() }
    }

    pub fn signum(&self) -> i32 {
        let sa = sign(&self.a);
        let sb = sign(&self.b);
        if sa == 0 || sb == 0 || sa == sb {
            return if sa != 0 { sa } else { sb };
        }
        // Opposite signs: compare a^2 with 2 b^2.
        let a2 = &self.a * &self.a;
        let b2 = &self.b * &self.b * BigRational::from_integer(2.into());
        match a2.cmp(&b2) {
            Ordering::Greater => sa,
            Ordering::Less => sb,
            Ordering::Equal => 0,
        }
    }

    pub fn to_f64(&self) -> f64 {
        crate::realnum::ratio_to_f64(&self.a) + crate::realnum::ratio_to_f64(&self.b) * 2f64.sqrt()
    }
}

fn sign(r: &BigRational) -> i32 {
    if r.is_positive() {
        1
    } else if r.is_negative() {
        -1
    } else {
        0
    }
}

impl Add for &QSqrt2 {
    type Output = QSqrt2;
    fn add(self, o: &QSqrt2) -> QSqrt2 {
        QSqrt2::new(&self.a + &o.a, &self.b + &o.b)
    }
}

impl Sub for &QSqrt2 {
    type Output = QSqrt2;
    fn sub(self, o: &QSqrt2) -> QSqrt2 {
        QSqrt2::new(&self.a - &o.a, &self.b - &o.b)
    }
}

impl Mul for &QSqrt2 {
    type Output = QSqrt2;
    fn mul(self, o: &QSqrt2) -> QSqrt2 {
        let two = BigRational::from_integer(2.into());
        QSqrt2::new(
            &self.a * &o.a + &self.b * &o.b * two,
            &self.a * &o.b + &self.b * &o.a,
        )
    }
}

impl Neg for &QSqrt2 {
    type Output = QSqrt2;
    fn neg(self) -> QSqrt2 {
        QSqrt2::new(-&self.a, -&self.b)
    }
}

impl Scalar for QSqrt2 {
    fn zero() -> Self {
        QSqrt2::rational(Zero::zero())
    }
    fn one() -> Self {
        QSqrt2::rational(One::one())
    }
    fn half() -> Self {
        QSqrt2::rational(BigRational::new(1.into(), 2.into()))
    }
    fn cmp_s(&self, other: &Self) -> Ordering {
        (self - other).signum().cmp(&0)
    }
    fn add_s(&self, other: &Self) -> Self {
        self + other
    }
    fn sub_s(&self, other: &Self) -> Self {
        self - other
    }
    fn mul_s(&self, other: &Self) -> Self {
        self * other
    }
}

/// Rectangle with exact center in `[0,1)^2` and exact half-widths.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactRect<S> {
    pub center: [S; 2],
    pub half_widths: [S; 2],
}

/// Split one axis of a wrapping interval into at most two pieces in `[0,1]`.
fn wrap_axis<S: Scalar>(c: &S, h: &S) -> Vec<(S, S)> {
    if h.cmp_s(&S::half()) != Ordering::Less {
        return vec![(S::zero(), S::one())];
    }
    let lo = c.sub_s(h);
    let hi = c.add_s(h);
    if lo.cmp_s(&S::zero()) == Ordering::Less {
        vec![(S::zero(), hi), (lo.add_s(&S::one()), S::one())]
    } else if hi.cmp_s(&S::one()) == Ordering::Greater {
        vec![(lo, S::one()), (S::zero(), hi.sub_s(&S::one()))]
    } else {
        vec![(lo, hi)]
    }
}

/// Boxes `[x0, x1] x [y0, y1]` in the unit square covering the rectangle.
pub fn split_boxes<S: Scalar>(r: &ExactRect<S>) -> Vec<[S; 4]> {
    let xs = wrap_axis(&r.center[0], &r.half_widths[0]);
    let ys = wrap_axis(&r.center[1], &r.half_widths[1]);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for (x0, x1) in &xs {
        for (y0, y1) in &ys {
            out.push([x0.clone(), x1.clone(), y0.clone(), y1.clone()]);
        }
    }
    out
}

struct SegTree<S> {
    ys: Vec<S>,
    count: Vec<i32>,
    covered: Vec<S>,
}

impl<S: Scalar> SegTree<S> {
    fn new(ys: Vec<S>) -> Self {
        let n = ys.len().max(2) - 1;
        SegTree {
            ys,
            count: vec![0; 4 * n],
            covered: vec![S::zero(); 4 * n],
        }
    }

    fn update(&mut self, node: usize, l: usize, r: usize, ql: usize, qr: usize, delta: i32) {
        if qr <= l || r <= ql {
            return;
        }
        if ql <= l && r <= qr {
            self.count[node] += delta;
        } else {
            let mid = (l + r) / 2;
            self.update(2 * node, l, mid, ql, qr, delta);
            self.update(2 * node + 1, mid, r, ql, qr, delta);
        }
        self.covered[node] = if self.count[node] > 0 {
            self.ys[r].sub_s(&self.ys[l])
        } else if r - l == 1 {
            S::zero()
        } else {
            self.covered[2 * node].add_s(&self.covered[2 * node + 1])
        };
    }
}

/// Area of a union of boxes `[x0, x1] x [y0, y1]`.
pub fn sweep_area<S: Scalar>(boxes: &[[S; 4]]) -> S {
    if boxes.is_empty() {
        return S::zero();
    }
    let mut ys: Vec<S> = boxes.iter().flat_map(|b| [b[2].clone(), b[3].clone()]).collect();
    ys.sort_by(|a, b| a.cmp_s(b));
    ys.dedup_by(|a, b| a.cmp_s(b) == Ordering::Equal);
    let index = |y: &S, ys: &[S]| {
        ys.binary_search_by(|p| p.cmp_s(y))
            .expect("edge coordinate present")
    };
    // (x, delta, y-index range)
    let mut events: Vec<(S, i32, usize, usize)> = Vec::with_capacity(2 * boxes.len());
    for b in boxes {
        if b[0].cmp_s(&b[1]) != Ordering::Less || b[2].cmp_s(&b[3]) != Ordering::Less {
            continue;
        }
        let lo = index(&b[2], &ys);
        let hi = index(&b[3], &ys);
        events.push((b[0].clone(), 1, lo, hi));
        events.push((b[1].clone(), -1, lo, hi));
    }
    events.sort_by(|a, b| a.0.cmp_s(&b.0));
    let n = ys.len() - 1;
    if n == 0 {
        return S::zero();
    }
    let mut tree = SegTree::new(ys);
    let mut area = S::zero();
    let mut prev_x: Option<S> = None;
    for (x, delta, lo, hi) in events {
        if let Some(px) = &prev_x {
            let dx = x.sub_s(px);
            area = area.add_s(&tree.covered[1].mul_s(&dx));
        }
        tree.update(1, 0, n, lo, hi, delta);
        prev_x = Some(x);
    }
    area
}

/// Exact union measure of exact rectangles.
pub fn union_measure_exact<S: Scalar>(rects: &[ExactRect<S>]) -> S {
    let boxes: Vec<[S; 4]> = rects.iter().flat_map(split_boxes).collect();
    sweep_area(&boxes)
}

/// Union measure in doubles; the error bound covers input errors (edge error
/// times perimeter) and rounding in the sweep.
pub fn union_measure(c: &RectCollection) -> Measure {
    let mut boxes = Vec::with_capacity(c.rects.len());
    let mut input_err = 0.0;
    for r in &c.rects {
        let e = ExactRect {
            center: r.center.coords,
            half_widths: r.half_widths,
        };
        let perim = 2.0 * ((2.0 * r.half_widths[0]).min(1.0) + (2.0 * r.half_widths[1]).min(1.0));
        input_err += perim * r.edge_error();
        boxes.extend(split_boxes(&e));
    }
    let value = sweep_area(&boxes).clamp(0.0, 1.0);
    let rounding = 16.0 * f64::EPSILON * (boxes.len() as f64 + 1.0);
    Measure {
        value,
        error: (input_err + rounding).min(1.0),
    }
}

// ---------------------------------------------------------------------------
// Point queries and pairwise checks

/// Uniform grid over the torus, each cell listing the rectangles that touch it.
pub struct GridIndex<'a> {
    rects: &'a [TorusRect],
    cells: usize,
    buckets: HashMap<(usize, usize), Vec<usize>>,
    slack: f64,
}

impl<'a> GridIndex<'a> {
    /// `slack` enlarges every rectangle (use it for conservative queries).
    pub fn new(rects: &'a [TorusRect], slack: f64) -> Self {
        let n = rects.len().max(1);
        let max_w = rects
            .iter()
            .map(|r| 2.0 * r.half_widths[0].max(r.half_widths[1]))
            .fold(0.0, f64::max);
        let by_count = (n as f64).sqrt().ceil() as usize;
        let by_size = if max_w > 0.0 { (1.0 / max_w).floor() as usize } else { by_count };
        let cells = by_count.min(by_size).clamp(1, 4096);
        let mut buckets: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (id, r) in rects.iter().enumerate() {
            let ranges: Vec<Vec<usize>> = (0..2)
                .map(|t| axis_cells(r.center.coords[t], r.half_widths[t] + slack, cells))
                .collect();
            for &a in &ranges[0] {
                for &b in &ranges[1] {
                    buckets.entry((a, b)).or_default().push(id);
                }
            }
        }
        GridIndex {
            rects,
            cells,
            buckets,
            slack,
        }
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let f = |v: f64| ((v * self.cells as f64) as usize).min(self.cells - 1);
        (f(p[0]), f(p[1]))
    }

    /// Indices of rectangles containing `p` (enlarged by the slack).
    pub fn containing(&self, p: [f64; 2]) -> Vec<usize> {
        match self.buckets.get(&self.cell_of(p)) {
            Some(ids) => ids
                .iter()
                .copied()
                .filter(|&id| self.rects[id].contains_point(p, self.slack))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self.buckets.get(&self.cell_of(p)) {
            Some(ids) => ids.iter().any(|&id| self.rects[id].contains_point(p, self.slack)),
            None => false,
        }
    }

    /// Candidate pairs sharing a cell (each unordered pair once).
    pub fn candidate_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for ids in self.buckets.values() {
            for (a, &p) in ids.iter().enumerate() {
                for &q in &ids[a + 1..] {
                    pairs.push((p.min(q), p.max(q)));
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}

fn axis_cells(c: f64, h: f64, cells: usize) -> Vec<usize> {
    if 2.0 * h >= 1.0 {
        return (0..cells).collect();
    }
    let n = cells as f64;
    let lo = ((c - h) * n).floor() as i64;
    let hi = ((c + h) * n).floor() as i64;
    (lo..=hi)
        .map(|v| v.rem_euclid(cells as i64) as usize)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Pairwise disjointness report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisjointnessReport {
    pub disjoint: bool,
    /// Smallest certified separation found among close pairs (infinite when
    /// no two rectangles share a grid cell).
    pub min_separation: f64,
    pub overlapping_pairs: Vec<(i64, i64)>,
}

/// Checks that the closed rectangles are pairwise disjoint, with the margin
/// required to exceed the combined edge errors.
pub fn check_disjoint(c: &RectCollection) -> DisjointnessReport {
    let idx = GridIndex::new(&c.rects, 0.0);
    let pairs = idx.candidate_pairs();
    let results: Vec<(f64, Option<(i64, i64)>)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ra, rb) = (&c.rects[a], &c.rects[b]);
            let sep = ra.separation(rb);
            let err = ra.edge_error() + rb.edge_error() + 4.0 * f64::EPSILON;
            let bad = if sep > err {
                None
            } else {
                Some((ra.label.unwrap_or(a as i64), rb.label.unwrap_or(b as i64)))
            };
            (sep, bad)
        })
        .collect();
    let mut min_sep = f64::INFINITY;
    let mut overlapping = Vec::new();
    for (s, bad) in results {
        min_sep = min_sep.min(s);
        if let Some(p) = bad {
            overlapping.push(p);
        }
    }
    overlapping.sort_unstable();
    DisjointnessReport {
        disjoint: overlapping.is_empty(),
        min_separation: min_sep,
        overlapping_pairs: overlapping,
    }
}

// ---------------------------------------------------------------------------
// Covering of R*(k) by S*(k)

/// Data of one block of the adversary construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverBlock {
    pub q_k: u64,
    pub n_k: u64,
    pub n_prev: u64,
    /// The constant `c_k` used for the enlarged rectangles.
    pub c_k: f64,
    /// `psi_0(n_k)`.
    pub psi_nk: f64,
}

impl CoverBlock {
    /// Half-widths of the S-rectangles:
    /// `(n_k/q_k)(c_k/q_k)^w + psi_0(n_k)^w`.
    pub fn s_half_widths(&self, w: Weights) -> [f64; 2] {
        let q = self.q_k as f64;
        let lead = self.n_k as f64 / q;
        [
            lead * (self.c_k / q).powf(w.i()) + self.psi_nk.powf(w.i()),
            lead * (self.c_k / q).powf(w.j()) + self.psi_nk.powf(w.j()),
        ]
    }

    pub fn r_half_widths(&self, w: Weights) -> [f64; 2] {
        [self.psi_nk.powf(w.i()), self.psi_nk.powf(w.j())]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverFailure {
    pub q: i64,
    pub m: u64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub covered: bool,
    pub checked: u64,
    pub min_margin: f64,
    pub failures: Vec<CoverFailure>,
}

/// For every `n_{k-1} < q' <= n_k` picks `m = ceil(q'/q_k) - 1` (so that
/// `0 < q' - m q_k <= q_k`) and checks that `R(q')` sits inside the
/// S-rectangle centered at `(q' - m q_k) x`. Centers differ by `m q_k x`, and
/// the R and S half-widths share the `psi_0(n_k)^w` term, so the margin is
/// `(n_k/q_k)(c_k/q_k)^w - ||m q_k x||` per axis. Negative `q'` mirror the
/// positive ones exactly.
pub fn covering_check(scan: &[OrbitScanner; 2], w: Weights, block: &CoverBlock) -> Result<CoverReport> {
    if block.q_k == 0 || block.n_prev >= block.n_k {
        return Err(Error::param("cover block needs q_k > 0 and n_prev < n_k"));
    }
    let q = block.q_k as f64;
    let lead = block.n_k as f64 / q;
    let budget = [lead * (block.c_k / q).powf(w.i()), lead * (block.c_k / q).powf(w.j())];
    let lo = block.n_prev + 1;
    let hi = block.n_k;
    let qk = block.q_k;
    let per: Vec<(f64, Option<CoverFailure>)> = (lo..=hi)
        .into_par_iter()
        .map(|qp| {
            let m = qp.div_ceil(qk) - 1;
            if m == 0 {
                // Contained in its own, strictly larger, S-rectangle.
                return (budget[0].min(budget[1]), None);
            }
            let shift = (m * qk) as i64;
            let mut margin = f64::INFINITY;
            let mut err = 0.0f64;
            for t in 0..2 {
                margin = margin.min(budget[t] - scan[t].dist(shift));
                err = err.max(scan[t].error_bound(shift));
            }
            // budget carries a few ulps of pow rounding
            let tol = err + 8.0 * f64::EPSILON * budget[0].max(budget[1]);
            let fail = (margin <= tol).then(|| CoverFailure {
                q: qp as i64,
                m,
                margin,
            });
            (margin, fail)
        })
        .collect();
    let mut min_margin = f64::INFINITY;
    let mut failures = Vec::new();
    for (m, f) in per {
        min_margin = min_margin.min(m);
        if let Some(f) = f {
            failures.push(f);
        }
    }
    Ok(CoverReport {
        covered: failures.is_empty(),
        checked: hi - lo + 1,
        min_margin,
        failures,
    })
}

/// Reference containment check on explicit collections: every rectangle of
/// `inner` lies in some rectangle of `outer` (with certified margin).
pub fn contained_in_union_of_single(inner: &RectCollection, outer: &RectCollection) -> Vec<i64> {
    let idx = GridIndex::new(&outer.rects, 0.0);
    inner
        .rects
        .par_iter()
        .enumerate()
        .filter_map(|(n, r)| {
            let ok = idx.containing(r.center.coords).into_iter().any(|id| {
                let o = &outer.rects[id];
                o.containment_margin(r) > o.edge_error() + r.edge_error()
            });
            (!ok).then_some(r.label.unwrap_or(n as i64))
        })
        .collect()
}
