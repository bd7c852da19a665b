//! The two finite mechanisms behind the twisted zero-one law: the covering
//! argument that kills a witness-driven approximating function, and the
//! counting argument that makes the measure of `R_t` grow.

use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::badness::{profile, BadnessProfile};
use crate::error::{Error, Result};
use crate::psi::{build_psi0, build_psi2_with, refine_psi1, ApproxFunction, WitnessSequence};
use crate::realnum::{OrbitScanner, RealSource};
use crate::torusgeo::{
    check_disjoint, covering_check, doubled, orbit_rects, union_measure, CoverBlock, CoverReport,
    DisjointnessReport, GridIndex, Measure, RectCollection,
};
use crate::weights::Weights;

/// Largest number of rectangles a single collection may hold.
pub const RECT_BUDGET: u64 = 4_000_000;

fn to_u64(v: &num_bigint::BigUint, what: &str) -> Result<u64> {
    v.to_u64()
        .ok_or_else(|| Error::BudgetExhausted(format!("{what} = {v} does not fit the rectangle budget")))
}

// ---------------------------------------------------------------------------
// Adversary

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryBlock {
    pub k: usize,
    pub q_k: u64,
    pub m_k: u64,
    pub n_prev: u64,
    pub n_k: u64,
    pub c_k: f64,
    pub r_count: usize,
    pub s_count: usize,
    pub mu_r: Measure,
    pub mu_s: Measure,
    /// Sum of the individual S-rectangle areas (the per-block estimate the
    /// closed-form bound is built from).
    pub s_area_sum: f64,
    pub cover: CoverReport,
    /// `mu(R*(k)) <= mu(S*(k))`, certified.
    pub r_within_s: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryRun {
    pub weights: Weights,
    pub witness: WitnessSequence,
    pub psi0: String,
    pub blocks: Vec<AdversaryBlock>,
    pub sum_mu_s: Measure,
    /// `64 c_1^(2 min{i,j}/3)`.
    pub bound: f64,
    /// `bound - (sum_mu_s + error)`.
    pub bound_margin: f64,
    pub all_covered: bool,
}

impl AdversaryRun {
    pub fn bound_holds(&self) -> bool {
        self.bound_margin > 0.0
    }
}

/// Builds `R*(k)` and `S*(k)` for `k = 1..K`, checks the covering and the
/// summable bound.
pub fn run_adversary(x: &[RealSource; 2], w: Weights, witness: &WitnessSequence, blocks: usize) -> Result<AdversaryRun> {
    witness.validate()?;
    if witness.weights != w {
        return Err(Error::param("witness sequence was built for different weights"));
    }
    if blocks > witness.entries.len() {
        return Err(Error::param(format!(
            "asked for {blocks} blocks but the witness has {} terms",
            witness.entries.len()
        )));
    }
    witness.certify(x)?;
    let psi0 = build_psi0(witness)?;
    let scan = [OrbitScanner::new(&x[0])?, OrbitScanner::new(&x[1])?];
    let c1 = witness.entries[0].c_f64();
    let bound = 64.0 * c1.powf(2.0 * w.min() / 3.0);

    let mut out = Vec::with_capacity(blocks);
    let mut n_prev = 0u64;
    for (idx, e) in witness.entries.iter().take(blocks).enumerate() {
        let q_k = to_u64(&e.q, "q_k")?;
        let m_k = to_u64(&e.m, "m_k")?;
        let n_k = to_u64(&e.n, "n_k")?;
        if 2 * (n_k - n_prev) > RECT_BUDGET {
            return Err(Error::BudgetExhausted(format!(
                "block {} needs {} rectangles",
                idx + 1,
                2 * (n_k - n_prev)
            )));
        }
        let psi_nk = psi0.eval(n_k)?;
        let block = CoverBlock {
            q_k,
            n_k,
            n_prev,
            c_k: e.c_f64(),
            psi_nk,
        };
        let r_h = block.r_half_widths(w);
        let s_h = block.s_half_widths(w);
        let r_rects = orbit_rects(&scan, n_prev + 1, n_k, |_| Ok(r_h))?;
        let s_rects = orbit_rects(&scan, 1, q_k, |_| Ok(s_h))?;
        let r = RectCollection::new(r_rects, format!("R*({})", idx + 1));
        let s = RectCollection::new(s_rects, format!("S*({})", idx + 1));
        let mu_r = union_measure(&r);
        let mu_s = union_measure(&s);
        let cover = covering_check(&scan, w, &block)?;
        let r_within_s = mu_r.value <= mu_s.value + mu_r.error + mu_s.error;
        out.push(AdversaryBlock {
            k: idx + 1,
            q_k,
            m_k,
            n_prev,
            n_k,
            c_k: block.c_k,
            r_count: r.len(),
            s_count: s.len(),
            mu_r,
            mu_s,
            s_area_sum: s.total_measure(),
            cover,
            r_within_s,
        });
        n_prev = n_k;
    }
    let sum_mu_s = out.iter().fold(Measure { value: 0.0, error: 0.0 }, |acc, b| Measure {
        value: acc.value + b.mu_s.value,
        error: acc.error + b.mu_s.error,
    });
    let all_covered = out.iter().all(|b| b.cover.covered);
    Ok(AdversaryRun {
        weights: w,
        witness: witness.clone(),
        psi0: psi0.provenance.clone(),
        bound_margin: bound - sum_mu_s.upper(),
        blocks: out,
        sum_mu_s,
        bound,
        all_covered,
    })
}

// ---------------------------------------------------------------------------
// Density

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    pub weights: Weights,
    pub k: u64,
    pub t0: u32,
    pub t_max: u32,
    /// Scan limit for the badness constant; `None` means `2 k^(T+1)`.
    pub profile_limit: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityLevel {
    pub t: u32,
    pub rects: usize,
    pub mu_r: Measure,
    pub mu_2r: Measure,
    /// `mu(2R_t) <= 2 mu(R_t)`.
    pub doubling_ok: bool,
    pub part1: usize,
    pub part2: usize,
    pub j_size: usize,
    pub j_in_part1: usize,
    pub j_in_part2: usize,
    pub j_in_2r: usize,
    /// Most `J_{t+1}` points found in one rectangle of `2R_t^(1)`.
    pub max_hits_part1: usize,
    pub count_bound: u64,
    pub count_ok: bool,
    pub l_size: usize,
    pub l_floor: u64,
    pub l_floor_ok: bool,
    pub l_disjoint: DisjointnessReport,
    /// New rectangles centered outside `2R_t` that still meet `R_t`.
    pub l_meeting_r: usize,
    pub mu_next: Measure,
    /// `mu(R_{t+1} \ R_t) = mu(R_{t+1}) - mu(R_t)`.
    pub mu_diff: Measure,
    /// `sum_{q in L} 4 psi_2(|q|)`.
    pub l_area: f64,
    /// `2 k^{t+1} psi_2(k^{t+1})`.
    pub growth_floor: f64,
    pub growth_ok: bool,
    /// `sum_{k^t < r <= k^{t+1}} psi_2(r)`.
    pub block_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityOutcome {
    /// All levels ran with the precondition intact.
    Completed,
    /// `mu(R_t) >= a_* c / 8`: the contradiction the proof aims for.
    PreconditionLost { level: u32, mu: f64, threshold: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRun {
    pub params: DensityParams,
    pub psi: String,
    pub psi2: String,
    pub c: f64,
    pub c_source: String,
    pub threshold: f64,
    pub levels: Vec<DensityLevel>,
    pub outcome: DensityOutcome,
    /// `sum mu(R_{t+1} \ R_t) >= sum psi_2 block sums` over completed levels.
    pub engine_ok: bool,
}

impl DensityRun {
    pub fn all_counts_ok(&self) -> bool {
        self.levels.iter().all(|l| l.count_ok && l.l_floor_ok)
    }

    pub fn all_disjoint(&self) -> bool {
        self.levels.iter().all(|l| l.l_disjoint.disjoint)
    }
}

/// Runs levels `t = t0+1..=T`, stopping early when the precondition fails.
pub fn run_density(x: &[RealSource; 2], psi: &ApproxFunction, params: &DensityParams) -> Result<DensityRun> {
    let w = params.weights;
    let k = params.k;
    if k <= 4 {
        return Err(Error::InvalidParameter(format!("density run needs k > 4, got {k}")));
    }
    if params.t_max <= params.t0 {
        return Err(Error::param("need T > t0"));
    }
    let top = k
        .checked_pow(params.t_max + 1)
        .filter(|&v| 2 * v <= RECT_BUDGET)
        .ok_or_else(|| Error::BudgetExhausted(format!("k^(T+1) with k = {k}, T = {} is too large", params.t_max)))?;
    let limit = params.profile_limit.unwrap_or(2 * top);
    let prof: BadnessProfile = profile(x, w, limit)?;
    if prof.rational_degenerate || !(prof.c_estimate > prof.c_error) {
        return Err(Error::param("badness constant is not positive at this scale"));
    }
    // Conservative: the separation argument needs c at most the true minimum.
    let c = (prof.c_estimate - prof.c_error).min(0.999);
    let psi1 = refine_psi1(psi, c, w)?;
    let psi2 = build_psi2_with(&psi1, k, params.t_max as usize + 2)?;
    let threshold = w.a_lower() * c / 8.0;
    let scan = [OrbitScanner::new(&x[0])?, OrbitScanner::new(&x[1])?];
    let half = |r: u64| -> Result<[f64; 2]> {
        let v = psi2.eval(r)?;
        Ok([v.powf(w.i()), v.powf(w.j())])
    };
    let base = k.pow(params.t0);

    let mut levels = Vec::new();
    let mut outcome = DensityOutcome::Completed;
    let mut rects = orbit_rects(&scan, base + 1, k.pow(params.t0 + 1), half)?;
    for t in params.t0 + 1..=params.t_max {
        let kt = k.pow(t);
        let kt1 = k.pow(t + 1);
        let r_t = RectCollection::new(rects.clone(), format!("R_{t}"));
        let mu_r = union_measure(&r_t);
        if mu_r.upper() >= threshold {
            outcome = DensityOutcome::PreconditionLost {
                level: t,
                mu: mu_r.value,
                threshold,
            };
            break;
        }
        let two_r = doubled(&r_t, w);
        let mu_2r = union_measure(&two_r);
        let doubling_ok = mu_2r.value <= 2.0 * mu_r.value + mu_2r.error + 2.0 * mu_r.error;

        // Partition by 2 psi_2(|q|) against a_* c / (2 k^{t+1}).
        let cut = w.a_lower() * c / (2.0 * kt1 as f64);
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        for r in &two_r.rects {
            let q = r.label.expect("orbit rectangles are labelled").unsigned_abs();
            if 2.0 * psi2.eval(q)? < cut {
                p1.push(r.clone());
            } else {
                p2.push(r.clone());
            }
        }
        let slack = two_r.rects.iter().map(|r| r.edge_error()).fold(0.0, f64::max) + 1e-15;
        let idx1 = GridIndex::new(&p1, slack);
        let idx2 = GridIndex::new(&p2, slack);

        // J_{t+1}: points q x with k^t < |q| <= k^{t+1}.
        let new_rects = orbit_rects(&scan, kt + 1, kt1, half)?;
        let hits: Vec<(Vec<usize>, bool)> = new_rects
            .par_iter()
            .map(|r| (idx1.containing(r.center.coords), idx2.contains(r.center.coords)))
            .collect();
        let mut per_rect1 = vec![0usize; p1.len()];
        let (mut j1, mut j2, mut j_any) = (0, 0, 0);
        let mut l_rects = Vec::new();
        for (r, (h1, in2)) in new_rects.iter().zip(&hits) {
            for &id in h1 {
                per_rect1[id] += 1;
            }
            j1 += (!h1.is_empty()) as usize;
            j2 += *in2 as usize;
            if !h1.is_empty() || *in2 {
                j_any += 1;
            } else {
                l_rects.push(r.clone());
            }
        }
        let count_bound = 2 * kt + kt1 / 2;
        let l_floor = kt1 / 2;
        let l = RectCollection::new(l_rects, format!("L_{}", t + 1));
        let l_disjoint = check_disjoint(&l);
        // A rectangle of R_t meets an L-rectangle only if the L center lies in
        // it after enlarging by the L half-widths.
        let l_reach = l
            .rects
            .iter()
            .map(|r| r.half_widths[0].max(r.half_widths[1]))
            .fold(0.0, f64::max);
        let r_idx = GridIndex::new(&r_t.rects, l_reach + slack);
        let l_meeting_r = l
            .rects
            .par_iter()
            .filter(|lr| {
                r_idx.containing(lr.center.coords).into_iter().any(|id| {
                    let o = &r_t.rects[id];
                    o.separation(lr) <= o.edge_error() + lr.edge_error()
                })
            })
            .count();
        let l_area: f64 = l.rects.iter().map(|r| r.measure()).sum();

        rects.extend(new_rects);
        let next = RectCollection::new(rects.clone(), format!("R_{}", t + 1));
        let mu_next = union_measure(&next);
        let mu_diff = Measure {
            value: mu_next.value - mu_r.value,
            error: mu_next.error + mu_r.error,
        };
        let psi2_top = psi2.eval(kt1)?;
        let growth_floor = 2.0 * kt1 as f64 * psi2_top;
        let growth_ok = mu_diff.upper() >= growth_floor;
        levels.push(DensityLevel {
            t,
            rects: r_t.len(),
            mu_r,
            mu_2r,
            doubling_ok,
            part1: p1.len(),
            part2: p2.len(),
            j_size: new_rects_len(kt, kt1),
            j_in_part1: j1,
            j_in_part2: j2,
            j_in_2r: j_any,
            max_hits_part1: per_rect1.into_iter().max().unwrap_or(0),
            count_bound,
            count_ok: (j_any as u64) <= count_bound,
            l_size: l.len(),
            l_floor,
            l_floor_ok: l.len() as u64 >= l_floor,
            l_disjoint,
            l_meeting_r,
            mu_next,
            mu_diff,
            l_area,
            growth_floor,
            growth_ok,
            block_sum: (kt1 - kt) as f64 * psi2_top,
        });
    }
    let engine_ok = {
        let diff: f64 = levels.iter().map(|l| l.mu_diff.upper()).sum();
        let sums: f64 = levels.iter().map(|l| l.block_sum).sum();
        diff >= sums
    };
    Ok(DensityRun {
        params: params.clone(),
        psi: psi.provenance.clone(),
        psi2: psi2.provenance.clone(),
        c,
        c_source: format!("badness profile, Q = {limit}, argmin q = {}", prof.argmin),
        threshold,
        levels,
        outcome,
        engine_ok,
    })
}

fn new_rects_len(kt: u64, kt1: u64) -> usize {
    (2 * (kt1 - kt)) as usize
}

// ---------------------------------------------------------------------------
// Shift check

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub q_shift: i64,
    pub q_test: u64,
    /// Smallest `q0` with `psi_4(|q|) / psi(|q + q'|) < 1` for all
    /// `q0 <= |q| <= Qtest`; `None` if the ratio is still >= 1 at `Qtest`.
    pub threshold: Option<u64>,
    pub max_ratio_beyond_threshold: f64,
    pub sampled: usize,
    pub contained: usize,
    /// Largest discrepancy (in circle units) of `q x + q' x = (q + q') x`.
    pub center_discrepancy: f64,
}

/// Ratio `psi_4(|q|)/psi(|q + q'|)` and the translation identity behind
/// `R_{psi_4}(q) + q' x` sitting inside `R_psi(q + q')`.
pub fn density_shift_check(
    x: &[RealSource; 2],
    psi: &ApproxFunction,
    psi4: &ApproxFunction,
    q_shift: i64,
    q_test: u64,
) -> Result<ShiftReport> {
    if let Some(lim) = psi4.domain_limit() {
        let lim = lim.to_u64().unwrap_or(u64::MAX);
        if q_test > lim {
            return Err(Error::BudgetExhausted(format!(
                "psi4 is tabulated up to {lim}, below Qtest = {q_test}"
            )));
        }
    }
    let scan = [OrbitScanner::new(&x[0])?, OrbitScanner::new(&x[1])?];
    let q_test_i = i64::try_from(q_test).map_err(|_| Error::param("Qtest exceeds i64"))?;
    let mut threshold: Option<u64> = None;
    let mut max_beyond = 0.0f64;
    let mut ratios = Vec::with_capacity(q_test as usize);
    for qa in 1..=q_test_i {
        let mut worst = 0.0f64;
        for q in [qa, -qa] {
            let target = (q + q_shift).unsigned_abs();
            if target == 0 {
                continue;
            }
            worst = worst.max(psi4.eval(qa as u64)? / psi.eval(target)?);
        }
        ratios.push(worst);
    }
    for (n, &r) in ratios.iter().enumerate().rev() {
        if r >= 1.0 {
            break;
        }
        threshold = Some(n as u64 + 1);
        max_beyond = max_beyond.max(r);
    }
    let start = threshold.unwrap_or(q_test + 1);
    let step = ((q_test.saturating_sub(start)) / 1000).max(1);
    let mut sampled = 0;
    let mut contained = 0;
    let mut discrepancy = 0.0f64;
    let mut qa = start;
    while qa <= q_test {
        for q in [qa as i64, -(qa as i64)] {
            let target = q + q_shift;
            if target == 0 {
                continue;
            }
            sampled += 1;
            for t in 0..2 {
                let lhs = scan[t].position(q).wrapping_add(scan[t].position(q_shift));
                let d = lhs.wrapping_sub(scan[t].position(target));
                let d = d.min(d.wrapping_neg()) as f64 / 2f64.powi(128);
                discrepancy = discrepancy.max(d);
            }
            if psi4.eval(qa)? <= psi.eval(target.unsigned_abs())? {
                contained += 1;
            }
        }
        qa += step;
    }
    Ok(ShiftReport {
        q_shift,
        q_test,
        threshold,
        max_ratio_beyond_threshold: max_beyond,
        sampled,
        contained,
        center_discrepancy: discrepancy,
    })
}
