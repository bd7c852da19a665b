//! Batch front end: subcommands, configuration and artifact layout.
//!
//! Every run writes `<outdir>/<experiment>-<hash>/` holding `config.json`,
//! `config.txt` (re-usable with `--config`), `report.json`, CSV tables and a
//! `meta.json` with the only non-deterministic field (the timestamp).

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::json;

use crate::badness;
use crate::error::{Error, Result};
use crate::ktv;
use crate::kurzweil::{self, DensityOutcome, DensityParams};
use crate::metric::{self, RegionFamily};
use crate::psi::{witness_from_lacunary, ApproxFunction};
use crate::realnum::{lacunary_pair, liouville_vector, parse_pair, LiouvilleVector, RealSource};
use crate::weights::Weights;
use config::{keys_for, load_file, ExperimentConfig};

pub const EXPERIMENTS: [&str; 5] = ["profile", "adversary", "density", "cantor", "metric"];

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Parse(_) | Error::OutOfDomain(_) => 2,
        Error::InsufficientPrecision(_) | Error::PrecisionExhausted(_) => 3,
        Error::Invariant(_) => 4,
        Error::BadnessViolation { .. } => 5,
        _ => 1,
    }
}

fn command() -> Command {
    let about = [
        ("profile", "weighted badness profile of a pair"),
        ("adversary", "adversarial approximating function and its covering"),
        ("density", "density-increment levels for a divergent function"),
        ("cantor", "Cantor tree of twisted badly approximable targets"),
        ("metric", "Monte-Carlo check of the doubly-metric counting theorem"),
    ];
    let mut cmd = Command::new("twistlab")
        .about("Weighted and twisted Diophantine approximation laboratory")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, text) in about {
        let mut sub = Command::new(name)
            .about(text)
            .arg(Arg::new("config").long("config").value_name("FILE").help("key=value or JSON config file"))
            .arg(
                Arg::new("outdir")
                    .long("outdir")
                    .value_name("DIR")
                    .default_value("runs")
                    .help("artifact root"),
            )
            .arg(
                Arg::new("threads")
                    .long("threads")
                    .value_name("N")
                    .value_parser(clap::value_parser!(usize))
                    .help("worker threads (default: all cores)"),
            )
            .arg(Arg::new("quiet").long("quiet").action(ArgAction::SetTrue).help("no summary table"));
        for key in keys_for(name).expect("known experiment") {
            let help = match key.default {
                Some(d) if !d.is_empty() => format!("{} [default: {d}]", key.help),
                _ => key.help.to_string(),
            };
            sub = sub.arg(Arg::new(key.name).long(key.name).value_name("VALUE").help(help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn flag_values(name: &str, m: &ArgMatches) -> BTreeMap<String, String> {
    keys_for(name)
        .expect("known experiment")
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect()
}

/// Parses arguments, runs the experiment and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run_matches(name, sub) {
        Ok((dir, code)) => {
            if code != 0 {
                eprintln!("twistlab: checks failed; artifacts in {}", dir.display());
            }
            code
        }
        Err(e) => {
            eprintln!("twistlab: {e}");
            exit_code(&e)
        }
    }
}

fn run_matches(name: &str, m: &ArgMatches) -> Result<(PathBuf, i32)> {
    let file = match m.get_one::<String>("config") {
        Some(p) => load_file(Path::new(p))?,
        None => BTreeMap::new(),
    };
    let cfg = ExperimentConfig::resolve(name, file, flag_values(name, m))?;
    let outdir = PathBuf::from(m.get_one::<String>("outdir").expect("defaulted"));
    let threads = m.get_one::<usize>("threads").copied();
    let quiet = m.get_flag("quiet");
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    let run = pool.install(|| execute(&cfg))?;
    let dir = write_artifacts(&outdir, &cfg, &run, pool.current_num_threads())?;
    if !quiet {
        println!("{}", run.summary);
        println!("artifacts: {}", dir.display());
    }
    let code = match &run.failure {
        Some(e) => {
            eprintln!("twistlab: {e}");
            exit_code(e)
        }
        None => 0,
    };
    Ok((dir, code))
}

/// Output of one experiment, before it is written out.
pub struct RunOutput {
    pub report: serde_json::Value,
    /// `(file name, contents)`.
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
    /// Set when the run completed but a checked invariant failed.
    pub failure: Option<Error>,
}

/// Runs the experiment described by a resolved config.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.experiment.as_str() {
        "profile" => cmd_profile(cfg),
        "adversary" => cmd_adversary(cfg),
        "density" => cmd_density(cfg),
        "cantor" => cmd_cantor(cfg),
        "metric" => cmd_metric(cfg),
        other => Err(Error::Config(format!("unknown experiment '{other}'"))),
    }
}

/// Writes the artifacts of a finished run and returns its directory.
pub fn write_artifacts(outdir: &Path, cfg: &ExperimentConfig, run: &RunOutput, threads: usize) -> Result<PathBuf> {
    let dir = outdir.join(format!("{}-{}", cfg.experiment, cfg.hash12()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), pretty(&cfg.to_json())?)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    fs::write(dir.join("report.json"), pretty(&run.report)?)?;
    for (name, bytes) in &run.files {
        fs::write(dir.join(name), bytes)?;
    }
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "timestamp": stamp,
        "threads": threads,
        "version": env!("CARGO_PKG_VERSION"),
    });
    fs::write(dir.join("meta.json"), pretty(&meta)?)?;
    Ok(dir)
}

fn pretty(v: &serde_json::Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn weights(cfg: &ExperimentConfig) -> Result<Weights> {
    Weights::new(cfg.parse("i")?, cfg.parse("j")?)
}

fn pair(cfg: &ExperimentConfig) -> Result<[RealSource; 2]> {
    parse_pair(cfg.get("x"))
}

fn pair_strings(x: &[RealSource; 2]) -> [String; 2] {
    [x[0].to_string(), x[1].to_string()]
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn cmd_profile(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let x = pair(cfg)?;
    let w = weights(cfg)?;
    let limit: u64 = cfg.parse("Q")?;
    let prof = badness::profile(&x, w, limit)?;
    let rows = prof
        .records
        .iter()
        .map(|r| vec![r.q.to_string(), format!("{:e}", r.value)])
        .collect();
    let summary = format!(
        "profile  x = {}, {}  (i, j) = ({}, {})  Q = {}\n  c_estimate = {:.6e} +- {:.1e} at q = {}  ({} records)",
        x[0],
        x[1],
        w.i(),
        w.j(),
        limit,
        prof.c_estimate,
        prof.c_error,
        prof.argmin,
        prof.records.len()
    );
    Ok(RunOutput {
        report: json!({
            "experiment": "profile",
            "x": pair_strings(&x),
            "summary": prof.summary(),
            "profile": prof,
        }),
        files: vec![("records.csv".into(), csv_bytes(&["q", "value"], rows)?)],
        summary,
        failure: None,
    })
}

fn parse_witness(spec: &str) -> Result<LiouvilleVector> {
    let bad = || Error::Config(format!("unrecognised witness '{spec}'"));
    if let Some(body) = spec.strip_prefix("lacunary:") {
        let positions = body
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        return lacunary_pair(positions);
    }
    if let Some(body) = spec.strip_prefix("liouville:") {
        let mut growth = None;
        let mut terms = None;
        for part in body.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k.trim() {
                "growth" => growth = Some(v.trim().parse().map_err(|_| bad())?),
                "terms" => terms = Some(v.trim().parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        return liouville_vector(growth.ok_or_else(bad)?, terms.ok_or_else(bad)?);
    }
    Err(bad())
}

fn cmd_adversary(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let w = weights(cfg)?;
    let lv = parse_witness(cfg.get("witness"))?;
    let blocks: usize = cfg.parse("K")?;
    let witness = witness_from_lacunary(&lv, w)?;
    let run = kurzweil::run_adversary(&lv.xi, w, &witness, blocks)?;
    let mut summary = format!(
        "adversary  witness = {}  (i, j) = ({}, {})  K = {}\n  {:>3} {:>10} {:>6} {:>12} {:>12} {:>8}\n",
        cfg.get("witness"),
        w.i(),
        w.j(),
        blocks,
        "k",
        "q_k",
        "m_k",
        "mu(R*)",
        "mu(S*)",
        "covered"
    );
    let mut rows = Vec::new();
    for b in &run.blocks {
        summary.push_str(&format!(
            "  {:>3} {:>10} {:>6} {:>12.4e} {:>12.4e} {:>8}\n",
            b.k, b.q_k, b.m_k, b.mu_r.value, b.mu_s.value, b.cover.covered
        ));
        rows.push(vec![
            b.k.to_string(),
            b.q_k.to_string(),
            b.m_k.to_string(),
            b.n_prev.to_string(),
            b.n_k.to_string(),
            format!("{:e}", b.c_k),
            b.r_count.to_string(),
            b.s_count.to_string(),
            format!("{:e}", b.mu_r.value),
            format!("{:e}", b.mu_s.value),
            format!("{:e}", b.mu_s.error),
            b.cover.covered.to_string(),
            format!("{:e}", b.cover.min_margin),
        ]);
    }
    summary.push_str(&format!(
        "  sum mu(S*) = {:.6e}  bound = {:.6e}  margin = {:.6e}",
        run.sum_mu_s.value, run.bound, run.bound_margin
    ));
    let failure = if !run.all_covered {
        Some(Error::Invariant("some orbit rectangle escaped its covering block".into()))
    } else if !run.bound_holds() {
        Some(Error::Invariant("summed S* measure exceeds the closed-form bound".into()))
    } else {
        None
    };
    let header = [
        "k", "q_k", "m_k", "n_prev", "n_k", "c_k", "r_count", "s_count", "mu_r", "mu_s", "mu_s_error", "covered",
        "min_margin",
    ];
    Ok(RunOutput {
        report: json!({
            "experiment": "adversary",
            "x": pair_strings(&lv.xi),
            "positions": lv.positions,
            "run": run,
        }),
        files: vec![("blocks.csv".into(), csv_bytes(&header, rows)?)],
        summary,
        failure,
    })
}

fn cmd_density(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let x = pair(cfg)?;
    let w = weights(cfg)?;
    let psi: ApproxFunction = cfg.get("psi").parse()?;
    let profile_limit = match cfg.get("profile_Q") {
        "auto" => None,
        _ => Some(cfg.parse("profile_Q")?),
    };
    let params = DensityParams {
        weights: w,
        k: cfg.parse("k")?,
        t0: cfg.parse("t0")?,
        t_max: cfg.parse("T")?,
        profile_limit,
    };
    let run = kurzweil::run_density(&x, &psi, &params)?;
    let mut summary = format!(
        "density  psi = {}  k = {}  levels {}..={}  c = {:.6e}\n  {:>3} {:>8} {:>12} {:>10} {:>10} {:>8} {:>9}\n",
        psi,
        params.k,
        params.t0 + 1,
        params.t_max,
        run.c,
        "t",
        "rects",
        "mu(R_t)",
        "|J n 2R|",
        "bound",
        "|L|",
        "disjoint"
    );
    let mut rows = Vec::new();
    for l in &run.levels {
        summary.push_str(&format!(
            "  {:>3} {:>8} {:>12.4e} {:>10} {:>10} {:>8} {:>9}\n",
            l.t, l.rects, l.mu_r.value, l.j_in_2r, l.count_bound, l.l_size, l.l_disjoint.disjoint
        ));
        rows.push(vec![
            l.t.to_string(),
            l.rects.to_string(),
            format!("{:e}", l.mu_r.value),
            format!("{:e}", l.mu_2r.value),
            l.doubling_ok.to_string(),
            l.j_size.to_string(),
            l.j_in_2r.to_string(),
            l.count_bound.to_string(),
            l.count_ok.to_string(),
            l.l_size.to_string(),
            l.l_floor.to_string(),
            l.l_floor_ok.to_string(),
            l.l_disjoint.disjoint.to_string(),
            l.l_meeting_r.to_string(),
            format!("{:e}", l.mu_diff.value),
            format!("{:e}", l.growth_floor),
            l.growth_ok.to_string(),
            format!("{:e}", l.block_sum),
        ]);
    }
    summary.push_str(&match &run.outcome {
        DensityOutcome::Completed => "  outcome: completed".to_string(),
        DensityOutcome::PreconditionLost { level, mu, threshold } => {
            format!("  outcome: precondition lost at t = {level} (mu = {mu:.4e} >= {threshold:.4e})")
        }
    });
    let failure = if !run.all_counts_ok() {
        Some(Error::Invariant("a level violated the counting bounds".into()))
    } else if !run.all_disjoint() {
        Some(Error::Invariant("new rectangles overlap".into()))
    } else {
        None
    };
    let header = [
        "t", "rects", "mu_r", "mu_2r", "doubling_ok", "j_size", "j_in_2r", "count_bound", "count_ok", "l_size",
        "l_floor", "l_floor_ok", "l_disjoint", "l_meeting_r", "mu_diff", "growth_floor", "growth_ok", "block_sum",
    ];
    Ok(RunOutput {
        report: json!({
            "experiment": "density",
            "x": pair_strings(&x),
            "run": run,
        }),
        files: vec![("levels.csv".into(), csv_bytes(&header, rows)?)],
        summary,
        failure,
    })
}

fn badness_constant(cfg: &ExperimentConfig, x: &[RealSource; 2], w: Weights) -> Result<(f64, String, serde_json::Value)> {
    let spec = cfg.get("c");
    if let Some(body) = spec.strip_prefix("from-profile:Q=") {
        let limit: u64 = body
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad profile limit in c = '{spec}'")))?;
        let prof = badness::profile(x, w, limit)?;
        if prof.rational_degenerate {
            return Err(Error::param("the pair is rationally dependent; no badness constant"));
        }
        let c = prof.c_estimate - prof.c_error;
        return Ok((c, format!("profile:Q={limit}"), prof.summary()));
    }
    let c: f64 = cfg.parse("c")?;
    Ok((c, "given".into(), serde_json::Value::Null))
}

fn cmd_cantor(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let x = pair(cfg)?;
    let w = weights(cfg)?;
    let (c, c_source, c_profile) = badness_constant(cfg, &x, w)?;
    let params = ktv::KtvParams::new(cfg.parse("k")?, w, c, c_source, cfg.parse("depth")?)?;
    let tree = ktv::build_tree(&x, &params)?;
    let failure = tree.check_structure().err();
    let points = ktv::extract_points(&x, &tree, cfg.parse("points")?)?;
    let dim = ktv::box_dimension(&tree)?;
    let theta_prime = ktv::theta_prime(&params);
    let mut jsonl = Vec::new();
    tree.write_jsonl(&mut jsonl)?;

    let mut summary = format!(
        "cantor  k = {}  depth = {}  theta = {:.6e}  c = {:.6e}\n  {:>5} {:>10} {:>8} {:>12} {:>13}\n",
        params.k,
        params.depth,
        params.theta,
        c,
        "level",
        "survivors",
        "pruned",
        "max pruned",
        "min children"
    );
    for s in &tree.stats {
        summary.push_str(&format!(
            "  {:>5} {:>10} {:>8} {:>12} {:>13}\n",
            s.level, s.survivors, s.pruned, s.max_pruned_per_parent, s.min_survivors_per_parent
        ));
    }
    let min_cert = points.iter().map(|p| p.certificate).fold(f64::INFINITY, f64::min);
    summary.push_str(&format!(
        "  box-dimension slope = {:.4} (floor {:.4})  min certificate = {:.4e}  theta' = {:.4e}",
        dim.slope, dim.analytic_floor, min_cert, theta_prime
    ));
    let dim_rows = dim
        .scales
        .iter()
        .zip(&dim.counts)
        .zip(&dim.residuals)
        .map(|((d, n), r)| vec![format!("{d:e}"), n.to_string(), format!("{r:e}")])
        .collect();
    Ok(RunOutput {
        report: json!({
            "experiment": "cantor",
            "x": pair_strings(&x),
            "params": params,
            "c_profile": c_profile,
            "stats": tree.stats,
            "pruned": tree.prune_log.len(),
            "theta_prime": theta_prime,
            "points": points,
            "dimension": dim,
            "structure_ok": failure.is_none(),
        }),
        files: vec![
            ("tree.jsonl".into(), jsonl),
            ("dimension.csv".into(), csv_bytes(&["delta", "count", "residual"], dim_rows)?),
        ],
        summary,
        failure,
    })
}

fn cmd_metric(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let name = cfg.get("family");
    if name != "sup_norm" && (!cfg.get("i").is_empty() || !cfg.get("j").is_empty()) {
        return Err(Error::Config("i and j only apply to the sup_norm family".into()));
    }
    let family = match name {
        "interval" => RegionFamily::Interval,
        "multiplicative" => RegionFamily::Multiplicative,
        "sup_norm" => RegionFamily::SupNorm { weights: weights(cfg)? },
        other => return Err(Error::Config(format!("unknown region family '{other}'"))),
    };
    let psi: ApproxFunction = cfg.get("psi").parse()?;
    let n: u64 = cfg.parse("N")?;
    let q: u64 = cfg.parse("Q")?;
    let seed: u64 = cfg.parse("seed")?;
    let tail_from = match cfg.get("tail_from") {
        "auto" => (q / 2).max(1),
        _ => cfg.parse("tail_from")?,
    };
    let run = metric::run_mc_with_tail(&family, &psi, n, q, seed, tail_from)?;
    let gallagher = match family {
        RegionFamily::Multiplicative => Some(metric::gallagher_sum(&psi, q)?),
        _ => None,
    };
    let mut summary = format!(
        "metric  family = {}  psi = {}  N = {}  Q = {}  seed = {}\n  E = {:.6}  mean = {:.6} +- {:.6} (z = {:.2})  E[A^2] = {:.6}\n",
        family.name(),
        run.psi,
        n,
        q,
        seed,
        run.e_analytic,
        run.mean,
        run.std_error,
        run.verdicts.z_score,
        run.second_moment
    );
    for r in &run.pz_table {
        summary.push_str(&format!(
            "  eps = {:<5} floor = {:.4}  empirical = {:.4}  ok = {}\n",
            r.eps, r.floor, r.empirical, r.ok
        ));
    }
    summary.push_str(&format!(
        "  tail q >= {}: fraction = {:.4e}  sum = {:.4e}  ok = {}",
        run.tail.from, run.tail.fraction, run.tail.tail_sum, run.tail.ok
    ));
    let rows = run
        .histogram
        .iter()
        .map(|(a, c)| vec![a.to_string(), c.to_string()])
        .collect();
    Ok(RunOutput {
        report: json!({
            "experiment": "metric",
            "family": family.name(),
            "d": run.d,
            "gallagher": gallagher,
            "run": run,
        }),
        files: vec![("histogram.csv".into(), csv_bytes(&["A_Q", "samples"], rows)?)],
        summary,
        failure: None,
    })
}
