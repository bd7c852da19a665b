//! Cantor-set construction for the twisted badly approximable set.
//!
//! Level-`m` nodes are rectangles `theta F_m` with half-widths
//! `(theta k^{-m i}, theta k^{-m j})`. Each node is tiled by doubled children
//! `2 theta F_{m+1}`; a child dies when some orbit point `q x` with
//! `k^m <= |q| < k^{m+1}` lands in its doubled rectangle.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::realnum::{position_of, OrbitScanner, RealSource};
use crate::weights::Weights;

pub const KAPPA1: f64 = 1.0 / 16.0;
pub const KAPPA2: f64 = 1.0 / 32.0;

/// Largest `|q|` the orbit scans may reach.
pub const ORBIT_BUDGET: u64 = 1 << 25;

/// Slack added to doubled children when testing orbit points, so that
/// rounding can only cause extra pruning.
const PRUNE_SLACK: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtvParams {
    pub k: u64,
    pub theta: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub weights: Weights,
    pub c: f64,
    pub c_source: String,
    pub depth: usize,
}

/// `floor(k^w / 2)`, read as an exact integer when `k^w / 2` is one.
fn per_axis(k: u64, w: f64) -> u64 {
    let v = (k as f64).powf(w) / 2.0;
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as u64
    } else {
        v.floor() as u64
    }
}

impl KtvParams {
    /// `theta = 1/2 min{(c/2k)^i, (c/2k)^j}`; refuses `k` whose child grid
    /// has fewer than `kappa1 k` cells.
    pub fn new(k: u64, weights: Weights, c: f64, c_source: impl Into<String>, depth: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::param("k must be at least 2"));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::param(format!("badness constant must lie in (0,1), got {c}")));
        }
        if depth == 0 {
            return Err(Error::param("depth must be at least 1"));
        }
        let base = c / (2.0 * k as f64);
        let theta = 0.5 * base.powf(weights.i()).min(base.powf(weights.j()));
        let p = KtvParams {
            k,
            theta,
            kappa1: KAPPA1,
            kappa2: KAPPA2,
            weights,
            c,
            c_source: c_source.into(),
            depth,
        };
        let children = p.children_per_node();
        if (children as f64) < KAPPA1 * k as f64 {
            return Err(Error::InvalidParameter(format!(
                "k = {k} gives {children} children per node, fewer than k/16"
            )));
        }
        let top = k
            .checked_pow(depth as u32)
            .filter(|&v| v <= ORBIT_BUDGET)
            .ok_or_else(|| Error::BudgetExhausted(format!("k^depth exceeds the orbit budget {ORBIT_BUDGET}")))?;
        let _ = top;
        let smallest = theta * (k as f64).powf(-(depth as f64) * weights.max());
        if smallest < 1e-9 {
            return Err(Error::PrecisionExhausted(format!(
                "level-{depth} rectangles have half-width {smallest:e}, too close to double resolution"
            )));
        }
        Ok(p)
    }

    pub fn grid(&self) -> [u64; 2] {
        [per_axis(self.k, self.weights.i()), per_axis(self.k, self.weights.j())]
    }

    pub fn children_per_node(&self) -> u64 {
        let g = self.grid();
        g[0] * g[1]
    }

    /// Half-widths of level-`m` nodes.
    pub fn half_widths(&self, m: usize) -> [f64; 2] {
        let k = self.k as f64;
        [
            self.theta * k.powf(-(m as f64) * self.weights.i()),
            self.theta * k.powf(-(m as f64) * self.weights.j()),
        ]
    }

    /// Tile stride for the children of a level-`m` node.
    pub fn stride(&self, m: usize) -> [f64; 2] {
        let h = self.half_widths(m + 1);
        [4.0 * h[0], 4.0 * h[1]]
    }

    /// Largest number of children a node may lose.
    pub fn allowed_pruned(&self) -> usize {
        (KAPPA2 * self.k as f64).floor() as usize
    }
}

/// A tree node (surviving or pruned).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub level: usize,
    pub id: usize,
    pub parent: Option<usize>,
    pub center: [f64; 2],
    pub half_widths: [f64; 2],
    pub pruned_by: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEntry {
    pub level: usize,
    pub parent: usize,
    pub cell: [u64; 2],
    pub q: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub survivors: usize,
    pub pruned: usize,
    pub max_pruned_per_parent: usize,
    pub min_survivors_per_parent: usize,
    /// Most distinct `|q|` whose orbit points fall in one parent `theta F_m`.
    pub max_orbit_hits_per_parent: usize,
    pub orbit_points: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorTree {
    pub params: KtvParams,
    /// Surviving nodes per level; level 0 is the root `theta F_0`.
    pub levels: Vec<Vec<Node>>,
    pub prune_log: Vec<PruneEntry>,
    pub stats: Vec<LevelStats>,
}

struct ParentIndex {
    cell: [f64; 2],
    origin: [f64; 2],
    map: HashMap<(i64, i64), Vec<usize>>,
}

impl ParentIndex {
    fn new(nodes: &[Node], h: [f64; 2], origin: [f64; 2]) -> Self {
        let cell = [2.0 * h[0], 2.0 * h[1]];
        let mut map: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (n, node) in nodes.iter().enumerate() {
            let lo = |t: usize| ((node.center[t] - h[t] - PRUNE_SLACK - origin[t]) / cell[t]).floor() as i64;
            let hi = |t: usize| ((node.center[t] + h[t] + PRUNE_SLACK - origin[t]) / cell[t]).floor() as i64;
            for a in lo(0)..=hi(0) {
                for b in lo(1)..=hi(1) {
                    map.entry((a, b)).or_default().push(n);
                }
            }
        }
        ParentIndex {
            cell,
            origin,
            map,
        }
    }

    fn lookup(&self, p: [f64; 2]) -> &[usize] {
        let a = ((p[0] - self.origin[0]) / self.cell[0]).floor() as i64;
        let b = ((p[1] - self.origin[1]) / self.cell[1]).floor() as i64;
        self.map.get(&(a, b)).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Builds the tree level by level.
pub fn build_tree(x: &[RealSource; 2], params: &KtvParams) -> Result<CantorTree> {
    let scan = [OrbitScanner::new(&x[0])?, OrbitScanner::new(&x[1])?];
    let grid = params.grid();
    let k = params.k;
    let root = Node {
        level: 0,
        id: 0,
        parent: None,
        center: [0.5, 0.5],
        half_widths: params.half_widths(0),
        pruned_by: None,
    };
    let mut levels = vec![vec![root]];
    let mut prune_log = Vec::new();
    let mut stats = Vec::new();
    for m in 0..params.depth {
        let parents = &levels[m];
        let h = params.half_widths(m);
        let stride = params.stride(m);
        let child_h = params.half_widths(m + 1);
        let origin = [0.5 - params.theta, 0.5 - params.theta];
        let index = ParentIndex::new(parents, h, origin);
        let lo = k.pow(m as u32) as i64;
        let hi = (k.pow(m as u32 + 1) - 1) as i64;

        // (parent, a, b, q) hits, plus (parent, |q|) orbit incidences.
        let chunk = 1i64 << 16;
        let starts: Vec<i64> = (lo..=hi).step_by(chunk as usize).collect();
        let found: Vec<(Vec<(usize, u64, u64, i64)>, Vec<(usize, u64)>)> = starts
            .par_iter()
            .map(|&s| {
                let e = (s + chunk - 1).min(hi);
                let mut hits = Vec::new();
                let mut inc = Vec::new();
                for qa in s..=e {
                    for q in [qa, -qa] {
                        let p = [scan[0].frac(q), scan[1].frac(q)];
                        for &pid in index.lookup(p) {
                            let node = &parents[pid];
                            let inside = (0..2).all(|t| (p[t] - node.center[t]).abs() <= h[t] + PRUNE_SLACK);
                            if !inside {
                                continue;
                            }
                            inc.push((pid, qa as u64));
                            let ll = [node.center[0] - h[0], node.center[1] - h[1]];
                            let range = |t: usize| {
                                let a = ((p[t] - ll[t] - PRUNE_SLACK) / stride[t]).floor().max(0.0) as u64;
                                let b = ((p[t] - ll[t] + PRUNE_SLACK) / stride[t]).floor().max(0.0) as u64;
                                (a, b.min(grid[t] - 1))
                            };
                            let (a0, a1) = range(0);
                            let (b0, b1) = range(1);
                            for a in a0..=a1 {
                                for b in b0..=b1 {
                                    if a < grid[0] && b < grid[1] {
                                        hits.push((pid, a, b, q));
                                    }
                                }
                            }
                        }
                    }
                }
                (hits, inc)
            })
            .collect();

        // Deterministic merge: smallest |q| (then positive first) per child.
        let mut killed: HashMap<(usize, u64, u64), i64> = HashMap::new();
        let mut incidences: HashMap<usize, Vec<u64>> = HashMap::new();
        for (hits, inc) in found {
            for (pid, a, b, q) in hits {
                let e = killed.entry((pid, a, b)).or_insert(q);
                if (q.unsigned_abs(), q < 0) < (e.unsigned_abs(), *e < 0) {
                    *e = q;
                }
            }
            for (pid, qa) in inc {
                incidences.entry(pid).or_default().push(qa);
            }
        }
        let max_orbit_hits = incidences
            .values_mut()
            .map(|v| {
                v.sort_unstable();
                v.dedup();
                v.len()
            })
            .max()
            .unwrap_or(0);

        let mut next = Vec::new();
        let mut pruned_total = 0;
        let mut max_pruned = 0;
        let mut min_surv = usize::MAX;
        for (pid, node) in parents.iter().enumerate() {
            let ll = [node.center[0] - h[0], node.center[1] - h[1]];
            let mut pruned_here = 0;
            let mut surv_here = 0;
            for a in 0..grid[0] {
                for b in 0..grid[1] {
                    let center = [
                        ll[0] + (a as f64 + 0.5) * stride[0],
                        ll[1] + (b as f64 + 0.5) * stride[1],
                    ];
                    match killed.get(&(pid, a, b)) {
                        Some(&q) => {
                            pruned_here += 1;
                            prune_log.push(PruneEntry {
                                level: m + 1,
                                parent: node.id,
                                cell: [a, b],
                                q,
                            });
                        }
                        None => {
                            surv_here += 1;
                            next.push(Node {
                                level: m + 1,
                                id: next.len(),
                                parent: Some(node.id),
                                center,
                                half_widths: child_h,
                                pruned_by: None,
                            });
                        }
                    }
                }
            }
            if pruned_here > params.allowed_pruned() {
                return Err(Error::BadnessViolation {
                    level: m + 1,
                    node: node.id,
                    pruned: pruned_here,
                    children: (grid[0] * grid[1]) as usize,
                    allowed: params.allowed_pruned(),
                });
            }
            pruned_total += pruned_here;
            max_pruned = max_pruned.max(pruned_here);
            min_surv = min_surv.min(surv_here);
        }
        stats.push(LevelStats {
            level: m + 1,
            survivors: next.len(),
            pruned: pruned_total,
            max_pruned_per_parent: max_pruned,
            min_survivors_per_parent: min_surv,
            max_orbit_hits_per_parent: max_orbit_hits,
            orbit_points: 2 * (hi - lo + 1) as u64,
        });
        levels.push(next);
    }
    Ok(CantorTree {
        params: params.clone(),
        levels,
        prune_log,
        stats,
    })
}

impl CantorTree {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Exact nesting and sibling disjointness of the surviving rectangles.
    pub fn check_structure(&self) -> Result<()> {
        for m in 1..self.levels.len() {
            let parents = &self.levels[m - 1];
            let mut by_parent: HashMap<usize, Vec<&Node>> = HashMap::new();
            for n in &self.levels[m] {
                let p = &parents[n.parent.expect("non-root")];
                for t in 0..2 {
                    let lo = n.center[t] - 2.0 * n.half_widths[t];
                    let hi = n.center[t] + 2.0 * n.half_widths[t];
                    let plo = p.center[t] - p.half_widths[t];
                    let phi = p.center[t] + p.half_widths[t];
                    let tol = 1e-14;
                    if lo < plo - tol || hi > phi + tol {
                        return Err(Error::Invariant(format!(
                            "level {m} node {} sticks out of its parent",
                            n.id
                        )));
                    }
                }
                by_parent.entry(p.id).or_default().push(n);
            }
            for kids in by_parent.values() {
                for (a, n1) in kids.iter().enumerate() {
                    for n2 in &kids[a + 1..] {
                        let apart = (0..2).any(|t| {
                            (n1.center[t] - n2.center[t]).abs() >= 4.0 * n1.half_widths[t] - 1e-14
                        });
                        if !apart {
                            return Err(Error::Invariant(format!(
                                "siblings {} and {} at level {m} overlap",
                                n1.id, n2.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// JSON lines, one node per line (pruned children included).
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for level in &self.levels {
            for n in level {
                serde_json::to_writer(&mut out, n)?;
                out.write_all(b"\n")?;
            }
        }
        for (n, e) in self.prune_log.iter().enumerate() {
            let parent_level = &self.levels[e.level - 1];
            let p = &parent_level[e.parent];
            let h = self.params.half_widths(e.level - 1);
            let stride = self.params.stride(e.level - 1);
            let node = Node {
                level: e.level,
                id: n,
                parent: Some(e.parent),
                center: [
                    p.center[0] - h[0] + (e.cell[0] as f64 + 0.5) * stride[0],
                    p.center[1] - h[1] + (e.cell[1] as f64 + 0.5) * stride[1],
                ],
                half_widths: self.params.half_widths(e.level),
                pruned_by: Some(e.q),
            };
            serde_json::to_writer(&mut out, &node)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A deep point with its scanned badness certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifiedPoint {
    pub node: usize,
    pub gamma: [f64; 2],
    /// `min_{1 <= |q| <= k^depth} |q| max{||q x1 - g1||^(1/i), ||q x2 - g2||^(1/j)}`.
    pub certificate: f64,
    pub certificate_q: i64,
    /// Same minimum over `|q| < k^depth`, the range the pruning covered.
    pub replay_min: f64,
    pub scan_limit: u64,
}

/// Separation constant `theta' = min_t theta^(1/w_t) / k` guaranteed by the
/// pruning for every `|q| < k^depth`.
pub fn theta_prime(params: &KtvParams) -> f64 {
    let w = params.weights;
    params.theta.powf(1.0 / w.i()).min(params.theta.powf(1.0 / w.j())) / params.k as f64
}

/// Centers of `count` deepest survivors (evenly spread through the level),
/// each with a certificate.
pub fn extract_points(x: &[RealSource; 2], tree: &CantorTree, count: usize) -> Result<Vec<CertifiedPoint>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let deepest = tree.levels.last().expect("root level");
    if deepest.is_empty() {
        return Err(Error::Invariant("tree has no deepest survivors".into()));
    }
    let scan = [OrbitScanner::new(&x[0])?, OrbitScanner::new(&x[1])?];
    let w = tree.params.weights;
    let limit = tree.params.k.pow(tree.depth() as u32);
    let n = count.min(deepest.len());
    let picks: Vec<&Node> = (0..n).map(|s| &deepest[s * deepest.len() / n]).collect();
    picks
        .into_iter()
        .map(|node| {
            let g = [position_of(node.center[0]), position_of(node.center[1])];
            let chunk = 1u64 << 16;
            let starts: Vec<u64> = (1..=limit).step_by(chunk as usize).collect();
            let mins: Vec<(f64, i64, f64)> = starts
                .par_iter()
                .map(|&s| {
                    let e = (s + chunk - 1).min(limit);
                    let mut best = (f64::INFINITY, 0i64);
                    let mut replay = f64::INFINITY;
                    for qa in s..=e {
                        for q in [qa as i64, -(qa as i64)] {
                            let v = qa as f64
                                * w.weighted_max([scan[0].dist_shifted(q, g[0]), scan[1].dist_shifted(q, g[1])]);
                            if v < best.0 {
                                best = (v, q);
                            }
                            if qa < limit {
                                replay = replay.min(v);
                            }
                        }
                    }
                    (best.0, best.1, replay)
                })
                .collect();
            let mut best = (f64::INFINITY, 0i64);
            let mut replay = f64::INFINITY;
            for (v, q, r) in mins {
                if v < best.0 {
                    best = (v, q);
                }
                replay = replay.min(r);
            }
            Ok(CertifiedPoint {
                node: node.id,
                gamma: node.center,
                certificate: best.0,
                certificate_q: best.1,
                replay_min: replay,
                scan_limit: limit,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub scales: Vec<f64>,
    pub counts: Vec<u64>,
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    /// `log(k/32) / (max{i,j} log k)`.
    pub analytic_floor: f64,
}

/// Box counts of the deepest centers at scales `delta_m = 4 theta k^{-m max{i,j}}`
/// (grid anchored at the root corner), with a least-squares slope.
pub fn box_dimension(tree: &CantorTree) -> Result<DimensionEstimate> {
    let depth = tree.depth();
    if depth < 1 {
        return Err(Error::param("box dimension needs depth >= 1"));
    }
    let p = &tree.params;
    let k = p.k as f64;
    let wmax = p.weights.max();
    let origin = [0.5 - p.theta, 0.5 - p.theta];
    let centers: Vec<[f64; 2]> = tree.levels[depth].iter().map(|n| n.center).collect();
    let mut scales = Vec::with_capacity(depth + 1);
    let mut counts = Vec::with_capacity(depth + 1);
    for m in 0..=depth {
        let delta = 4.0 * p.theta * k.powf(-(m as f64) * wmax);
        let mut cells: Vec<(i64, i64)> = centers
            .iter()
            .map(|c| {
                (
                    ((c[0] - origin[0]) / delta).floor() as i64,
                    ((c[1] - origin[1]) / delta).floor() as i64,
                )
            })
            .collect();
        cells.sort_unstable();
        cells.dedup();
        scales.push(delta);
        counts.push(cells.len() as u64);
    }
    let xs: Vec<f64> = scales.iter().map(|d| (1.0 / d).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&n| (n as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    Ok(DimensionEstimate {
        scales,
        counts,
        slope,
        intercept,
        residuals,
        analytic_floor: (k / 32.0).ln() / (wmax * k.ln()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_pair() -> [RealSource; 2] {
        [RealSource::sqrt(2).unwrap(), RealSource::sqrt(3).unwrap()]
    }

    #[test]
    fn theta_formula() {
        let p = KtvParams::new(100, Weights::symmetric(), 0.1, "given", 2).unwrap();
        assert!((p.theta - 0.5 * (0.1f64 / 200.0).sqrt()).abs() < 1e-15);
        assert!((p.theta - 0.011180339887498949).abs() < 1e-15);
        assert_eq!(p.grid(), [5, 5]);
    }

    #[test]
    fn refuses_small_k() {
        // floor(3^0.3 / 2) = 0: no children at all.
        assert!(KtvParams::new(3, Weights::new(0.3, 0.7).unwrap(), 0.1, "given", 1).is_err());
        assert!(KtvParams::new(8, Weights::symmetric(), 0.1, "given", 1).is_ok());
    }

    #[test]
    fn small_tree_structure_and_certificates() {
        let x = quad_pair();
        let prof = crate::badness::profile(&x, Weights::symmetric(), 2 * 64u64.pow(3)).unwrap();
        let p = KtvParams::new(64, Weights::symmetric(), prof.c_estimate, "profile", 3).unwrap();
        let tree = build_tree(&x, &p).unwrap();
        tree.check_structure().unwrap();
        for s in &tree.stats {
            assert!(s.min_survivors_per_parent as f64 >= (KAPPA1 - KAPPA2) * 64.0);
            assert!(s.max_orbit_hits_per_parent <= 2);
        }
        let pts = extract_points(&x, &tree, 4).unwrap();
        assert_eq!(pts.len(), 4);
        let tp = theta_prime(&p);
        for pt in &pts {
            assert!(pt.certificate > 0.0);
            assert!(pt.replay_min > tp);
        }
        assert!(extract_points(&x, &tree, 0).unwrap().is_empty());
        let dim = box_dimension(&tree).unwrap();
        assert!(dim.slope >= dim.analytic_floor && dim.slope <= 2.0 + 1e-9);
    }

    #[test]
    fn depth_one_dimension_is_two_point_fit() {
        let x = quad_pair();
        let p = KtvParams::new(64, Weights::symmetric(), 0.05, "given", 1).unwrap();
        let tree = build_tree(&x, &p).unwrap();
        let dim = box_dimension(&tree).unwrap();
        let n1 = tree.levels[1].len() as f64;
        let expected = n1.ln() / (64f64.powf(0.5)).ln();
        assert!((dim.slope - expected).abs() < 1e-12);
    }

    #[test]
    fn overestimated_c_is_reported() {
        let x = quad_pair();
        // A huge constant makes theta large; orbit points then crowd nodes.
        let p = KtvParams::new(64, Weights::symmetric(), 0.99, "inflated", 3);
        if let Ok(p) = p {
            match build_tree(&x, &p) {
                Ok(t) => assert!(t.stats.iter().all(|s| s.max_pruned_per_parent <= p.allowed_pruned())),
                Err(e) => assert!(matches!(e, Error::BadnessViolation { .. })),
            }
        }
    }

    #[test]
    fn jsonl_lines() {
        let x = quad_pair();
        let p = KtvParams::new(64, Weights::symmetric(), 0.05, "given", 2).unwrap();
        let tree = build_tree(&x, &p).unwrap();
        let mut buf = Vec::new();
        tree.write_jsonl(&mut buf).unwrap();
        let lines = String::from_utf8(buf).unwrap();
        let total: usize = tree.levels.iter().map(Vec::len).sum::<usize>() + tree.prune_log.len();
        assert_eq!(lines.lines().count(), total);
        let first: Node = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first.level, 0);
    }
}
