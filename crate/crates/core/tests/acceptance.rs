//! Acceptance run: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twistlab::badness;
use twistlab::ktv;
use twistlab::kurzweil::{self, DensityOutcome, DensityParams};
use twistlab::metric::{self, GallagherTag, RegionFamily};
use twistlab::psi::{self, ApproxFunction};
use twistlab::realnum::{lacunary_pair, liouville_vector, RealSource};
use twistlab::torusgeo::{union_measure_exact, ExactRect, QSqrt2, Scalar};
use twistlab::Weights;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn quad_pair() -> [RealSource; 2] {
    [RealSource::sqrt(2).unwrap(), RealSource::sqrt(3).unwrap()]
}

fn criterion_1() -> Check {
    let v = liouville_vector(3, 4).map_err(|e| e.to_string())?;
    let w = psi::witness_from_lacunary(&v, Weights::symmetric()).map_err(|e| e.to_string())?;
    let sums = psi::psi0_block_sums(&w);
    let closed = psi::psi0_block_sums_closed_form(&w);
    ensure!(sums.len() + 1 == w.entries.len(), "expected {} blocks", w.entries.len() - 1);
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    for (k, (s, c)) in sums.iter().zip(&closed).enumerate() {
        // 1 - (q_k / q_{k+1}) (c_{k+1} / c_k)^(1/3) with c = 1/m^3
        let (a, b) = (&w.entries[k], &w.entries[k + 1]);
        let formula = <BigRational as One>::one()
            - BigRational::new(
                BigInt::from(a.q.clone()) * BigInt::from(a.m.clone()),
                BigInt::from(b.q.clone()) * BigInt::from(b.m.clone()),
            );
        ensure!(s == c && *s == formula, "block {} sum {s} differs from {formula}", k + 1);
        ensure!(*s > half, "block {} sum {s} is not above 1/2", k + 1);
    }
    let shown: Vec<String> = sums.iter().map(|s| format!("{:.6}", s.to_f64().unwrap())).collect();
    Ok(format!("{} exact block sums [{}]", sums.len(), shown.join(", ")))
}

fn criterion_2() -> Check {
    let mut notes = Vec::new();
    for (positions, w) in [
        (vec![2, 5, 12, 24], Weights::symmetric()),
        (vec![1, 4, 13, 32], Weights::new(0.3, 0.7).unwrap()),
    ] {
        let v = lacunary_pair(positions.clone()).map_err(|e| e.to_string())?;
        let wit = psi::witness_from_lacunary(&v, w).map_err(|e| e.to_string())?;
        let run = kurzweil::run_adversary(&v.xi, w, &wit, 3).map_err(|e| e.to_string())?;
        ensure!(run.blocks.len() == 3, "only {} blocks for {positions:?}", run.blocks.len());
        ensure!(run.all_covered, "covering failed for {positions:?}");
        for b in &run.blocks {
            ensure!(b.s_count as u64 == 2 * b.q_k, "block {} has {} S-rectangles", b.k, b.s_count);
        }
        ensure!(run.bound_holds(), "bound fails for {positions:?}: margin {}", run.bound_margin);
        notes.push(format!(
            "({},{}) sum={:.4} bound={:.4} margin={:.4}",
            w.i(),
            w.j(),
            run.sum_mu_s.value,
            run.bound,
            run.bound_margin
        ));
    }
    Ok(notes.join("; "))
}

fn q2(r: BigRational) -> QSqrt2 {
    QSqrt2::rational(r)
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// `mu(2R) <= 2 mu(R)` in Q(sqrt 2): `i = j = 1/2`, `psi_2(q) = s_q^2` with
/// rational `s_q`, so `R` has half-widths `s_q` and `2R` has `sqrt(2) s_q`.
fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_531);
    let a_upper_half = ratio(1, 8); // a^*/2 = 2^-2 / 2
    let two = q2(ratio(2, 1));
    let mut tight = 0usize;
    for inst in 0..100 {
        let den = 1i64 << 12;
        let x = [ratio(rng.gen_range(1..den), den), ratio(rng.gen_range(1..den), den)];
        let count = rng.gen_range(1..=12);
        let mut s_num: i64 = rng.gen_range(20..=353);
        let mut r = Vec::with_capacity(count);
        let mut doubled = Vec::with_capacity(count);
        for q in 1..=count as i64 {
            let s = ratio(s_num, 1000);
            ensure!(&s * &s <= a_upper_half, "instance {inst} violates psi_2 <= a*/2");
            let center = [x[0].clone() * BigInt::from(q), x[1].clone() * BigInt::from(q)].map(|c| {
                let f = c.floor();
                q2(c - f)
            });
            r.push(ExactRect {
                center: center.clone(),
                half_widths: [q2(s.clone()), q2(s.clone())],
            });
            let sq2 = QSqrt2::new(ratio(0, 1), s);
            doubled.push(ExactRect {
                center,
                half_widths: [sq2.clone(), sq2],
            });
            s_num = (s_num - rng.gen_range(0..=30)).max(10);
        }
        let mu = union_measure_exact(&r);
        let mu2 = union_measure_exact(&doubled);
        let bound = two.mul_s(&mu);
        ensure!(mu2.cmp_s(&bound).is_le(), "instance {inst}: mu(2R) = {mu2:?} exceeds 2 mu(R) = {bound:?}");
        if mu2.cmp_s(&bound).is_eq() {
            tight += 1;
        }
    }
    // single rectangle: exact equality
    let s = ratio(7, 40);
    let one = [ExactRect {
        center: [q2(ratio(9, 10)), q2(ratio(1, 3))],
        half_widths: [q2(s.clone()), q2(s.clone())],
    }];
    let sq2 = QSqrt2::new(ratio(0, 1), s);
    let one2 = [ExactRect {
        center: one[0].center.clone(),
        half_widths: [sq2.clone(), sq2],
    }];
    let (m, m2) = (union_measure_exact(&one), union_measure_exact(&one2));
    ensure!(m2.cmp_s(&two.mul_s(&m)).is_eq(), "single rectangle: {m2:?} != 2 * {m:?}");
    Ok(format!("100 instances hold exactly ({tight} with equality); single-rectangle equality exact"))
}

fn criterion_4() -> Check {
    let psi = ApproxFunction::power(1e-5, 1.0).map_err(|e| e.to_string())?;
    let params = DensityParams {
        weights: Weights::symmetric(),
        k: 8,
        t0: 1,
        t_max: 4,
        profile_limit: None,
    };
    let run = kurzweil::run_density(&quad_pair(), &psi, &params).map_err(|e| e.to_string())?;
    ensure!(!run.levels.is_empty(), "no levels ran");
    for l in &run.levels {
        ensure!(
            l.count_ok && l.j_in_2r as u64 <= l.count_bound,
            "t={}: |J n 2R| = {} > {}",
            l.t,
            l.j_in_2r,
            l.count_bound
        );
        ensure!(l.l_floor_ok, "t={}: |L| = {} < {}", l.t, l.l_size, l.l_floor);
        ensure!(l.l_disjoint.disjoint, "t={}: L-rectangles overlap", l.t);
    }
    let outcome = match run.outcome {
        DensityOutcome::Completed => "completed".to_string(),
        DensityOutcome::PreconditionLost { level, .. } => format!("precondition lost at t={level}"),
    };
    let meet: usize = run.levels.iter().map(|l| l.l_meeting_r).sum();
    Ok(format!(
        "{} levels, counts and L floors hold, L disjoint; {outcome}; L-rects meeting R_t: {meet}",
        run.levels.len()
    ))
}

fn tree_for(k: u64, depth: usize) -> Result<(ktv::CantorTree, f64), String> {
    let x = quad_pair();
    let w = Weights::symmetric();
    let limit = 2 * k.pow(depth as u32);
    let prof = badness::profile(&x, w, limit).map_err(|e| e.to_string())?;
    let c = prof.c_estimate - prof.c_error;
    let params = ktv::KtvParams::new(k, w, c, format!("profile:Q={limit}"), depth).map_err(|e| e.to_string())?;
    let tree = ktv::build_tree(&x, &params).map_err(|e| e.to_string())?;
    tree.check_structure().map_err(|e| e.to_string())?;
    let dim = ktv::box_dimension(&tree).map_err(|e| e.to_string())?;
    Ok((tree, dim.slope))
}

fn criterion_5() -> Check {
    let (tree, slope) = tree_for(256, 3)?;
    let floor = (256f64 / 32.0).ln() / (0.5 * 256f64.ln());
    for s in &tree.stats {
        ensure!(
            s.min_survivors_per_parent >= 8,
            "level {} keeps only {} children",
            s.level,
            s.min_survivors_per_parent
        );
        ensure!(s.max_orbit_hits_per_parent <= 2, "level {}: orbit points crowd a node", s.level);
    }
    let pts = ktv::extract_points(&quad_pair(), &tree, 8).map_err(|e| e.to_string())?;
    let tp = ktv::theta_prime(&tree.params);
    for p in &pts {
        ensure!(p.certificate > 0.0, "node {} has certificate {}", p.node, p.certificate);
        ensure!(p.replay_min > tp, "node {} replay {} <= theta' {tp}", p.node, p.replay_min);
        ensure!(p.scan_limit == 256u64.pow(3), "scan limit {}", p.scan_limit);
    }
    ensure!(slope >= floor, "slope {slope} below floor {floor}");
    let trend: Vec<f64> = [64u64, 256, 1024]
        .iter()
        .map(|&k| tree_for(k, 2).map(|t| t.1))
        .collect::<Result<_, _>>()?;
    ensure!(trend.windows(2).all(|w| w[0] < w[1]), "trend not increasing: {trend:?}");
    let min_cert = pts.iter().map(|p| p.certificate).fold(f64::INFINITY, f64::min);
    Ok(format!(
        "min children {}, min certificate {min_cert:.3e}, slope {slope:.4} >= {floor:.4}, trend {:?}",
        tree.stats.iter().map(|s| s.min_survivors_per_parent).min().unwrap(),
        trend.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()
    ))
}

fn criterion_6() -> Check {
    let limit = 1_346_269; // F_30
    let recs = badness::one_dim_profile(&RealSource::golden_ratio(), limit).map_err(|e| e.to_string())?;
    let target = 1.0 / 5f64.sqrt();
    let est = badness::liminf_estimate(&recs, limit).ok_or("no tail records")?;
    ensure!(est <= target, "estimate {est} above 1/sqrt5");
    ensure!(target - est < 1e-4, "estimate {est} too far from 1/sqrt5");
    let below: Vec<f64> = recs.iter().map(|r| r.value).filter(|&v| v < target).collect();
    ensure!(below.windows(2).all(|w| w[0] < w[1]), "records below 1/sqrt5 do not increase");
    Ok(format!("tail infimum {est:.10} (1/sqrt5 - {:.2e}), {} records", target - est, recs.len()))
}

fn criterion_7() -> Check {
    let psi = ApproxFunction::power(0.25, 1.0).map_err(|e| e.to_string())?;
    let run = metric::run_mc(&RegionFamily::Interval, &psi, 100_000, 1000, 7).map_err(|e| e.to_string())?;
    let half_h: f64 = (1..=1000).map(|q| 0.5 / q as f64).sum();
    ensure!((run.e_analytic - half_h).abs() < 1e-12, "E = {} vs {half_h}", run.e_analytic);
    ensure!(
        (run.mean - half_h).abs() <= 4.0 * run.std_error,
        "mean {} vs {half_h} (se {})",
        run.mean,
        run.std_error
    );
    for r in &run.pz_table {
        ensure!(r.empirical >= r.floor - 3.0 * r.sigma, "eps {}: {} < {}", r.eps, r.empirical, r.floor);
    }
    Ok(format!(
        "mean {:.5} vs {:.5} (z = {:.2}); PZ {}",
        run.mean,
        half_h,
        run.verdicts.z_score,
        run.pz_table
            .iter()
            .map(|r| format!("{}:{:.3}>={:.3}", r.eps, r.empirical, r.floor))
            .collect::<Vec<_>>()
            .join(" ")
    ))
}

fn criterion_8() -> Check {
    let golden: serde_json::Value =
        serde_json::from_str(include_str!("../../../oracles/golden.json")).map_err(|e| e.to_string())?;
    let mut worst = 0f64;
    for t in ["0.0001", "0.001", "0.01", "0.25"] {
        let want: f64 = golden["mult_area"][t].as_str().ok_or("missing oracle")?.parse().unwrap();
        let got = RegionFamily::Multiplicative
            .measure_at(t.parse().unwrap())
            .map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
    }
    ensure!(worst < 1e-6, "area off by {worst}");
    let conv = metric::gallagher_sum(&ApproxFunction::power(1.0, 2.0).unwrap(), 1_000_000).map_err(|e| e.to_string())?;
    let div = metric::gallagher_sum(&ApproxFunction::constant(0.3).unwrap(), 1_000_000).map_err(|e| e.to_string())?;
    ensure!(conv.tag == GallagherTag::Converges, "1/r^2 tagged {:?}", conv.tag);
    ensure!(div.tag == GallagherTag::Diverges, "constant tagged {:?}", div.tag);
    Ok(format!(
        "max area error {worst:.1e}; 1/r^2 sum {:.6} converges; constant sum {:.1} diverges",
        conv.value, div.value
    ))
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "meta.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Check {
    let bin = env!("CARGO_BIN_EXE_twistlab");
    let x = "quad:(0+1*sqrt(2))/1,quad:(0+1*sqrt(3))/1";
    let runs: Vec<Vec<&str>> = vec![
        vec!["profile", "--x", x, "--i", "0.5", "--j", "0.5", "--Q", "5000"],
        vec!["adversary", "--i", "0.3", "--j", "0.7", "--witness", "lacunary:1,4,13,32"],
        vec!["density", "--x", x, "--i", "0.5", "--j", "0.5", "--T", "3"],
        vec!["cantor", "--x", x, "--i", "0.5", "--j", "0.5", "--k", "64", "--depth", "2", "--c", "from-profile:Q=10000"],
        vec!["metric", "--family", "multiplicative", "--psi", "pow:C=0.01,s=1", "--N", "20000", "--Q", "500", "--seed", "7"],
        vec!["metric", "--family", "sup_norm", "--i", "0.5", "--j", "0.5", "--psi", "pow:C=0.25,s=1", "--N", "5000", "--Q", "200", "--seed", "3"],
    ];
    let mut checked = 0;
    for args in &runs {
        let mut outputs = Vec::new();
        for threads in ["1", "2"] {
            let root = tempfile::tempdir().map_err(|e| e.to_string())?;
            let out = Command::new(bin)
                .args(args)
                .args(["--quiet", "--threads", threads, "--outdir"])
                .arg(root.path())
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(out.status.success(), "{} exited {:?}", args[0], out.status.code());
            let dirs: Vec<_> = std::fs::read_dir(root.path()).unwrap().map(|e| e.unwrap().path()).collect();
            ensure!(dirs.len() == 1, "expected one run directory");
            let files = read_dir_sorted(&dirs[0]);
            // replaying the resolved config must land in the same directory
            let replay = tempfile::tempdir().map_err(|e| e.to_string())?;
            let st = Command::new(bin)
                .args([args[0], "--quiet", "--config"])
                .arg(dirs[0].join("config.txt"))
                .arg("--outdir")
                .arg(replay.path())
                .status()
                .map_err(|e| e.to_string())?;
            ensure!(st.success(), "{} replay failed", args[0]);
            let name = dirs[0].file_name().unwrap();
            ensure!(
                read_dir_sorted(&replay.path().join(name)) == files,
                "{} replay from config.txt differs",
                args[0]
            );
            outputs.push((name.to_owned(), files));
        }
        ensure!(outputs[0] == outputs[1], "{} artifacts differ between runs", args[0]);
        checked += 1;
    }
    Ok(format!("{checked} experiments byte-identical across re-runs, thread counts and config replay"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("psi_0 divergence engine", criterion_1),
        ("adversary bound and covering", criterion_2),
        ("doubling lemma (exact)", criterion_3),
        ("density counting", criterion_4),
        ("KTV construction", criterion_5),
        ("Hurwitz constant", criterion_6),
        ("doubly-metric expectation", criterion_7),
        ("multiplicative area law", criterion_8),
        ("determinism", criterion_9),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let n = n + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let took = fmt_time(start.elapsed());
        match result {
            Ok(detail) => println!("criterion {n} PASS  {name} [{took}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL  {name} [{took}]: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn fmt_time(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}
