//! Command-line harness: multi-start benchmarks, certification loops,
//! value-function scans, enumeration and bound reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funcs::Norm;
use crate::local::{dca_run, ram_run, RunTrace, Schedule, Weights, DEFAULT_DELTA, DEFAULT_KMAX};
use crate::micp::{
    auto_sbounds, build_global_model, refine_loop, solve_micp, value_function, Budget,
    CertifyOptions, MicpError, SBounds, DEFAULT_DELTA_GLOB, DEFAULT_RHO, STATS_HEADER,
};
use crate::problems::{self, PlrSpec, ProblemError, RflSpec};
use crate::smc::{SmcError, SmcProblem, DEFAULT_ENUM_CAP};
use crate::subsolve::{FeasibleSet, SolverConfig};

pub const CONFIG_SCHEMA: &str = "smc-bench v1";
pub const RESULTS_SCHEMA: &str = "smc-results v1";
pub const RESULTS_HEADER: &str =
    "kind,method,start,best_value,iterations,termination,min_value,avg_value,med_value,enum_value";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Micp(#[from] MicpError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn json_err(e: serde_json::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "smc",
    about = "Sums of minima of convex functions: local search, certification and big-M tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// budget in seconds for branch-and-bound and certification
    #[arg(long, global = true)]
    pub time_limit: Option<f64>,
    /// built-in instance name, overriding the configured instance
    #[arg(long, global = true)]
    pub instance: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// multi-start local search benchmark
    Run,
    /// certify-or-improve with restarts
    Certify,
    /// value function of the big-M model on a grid
    VcScan,
    /// global optimum by enumerating selections
    Enumerate,
    /// gap bounds, model statistics and optionally the big-M solve
    Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    Builtin(String),
    Json(PathBuf),
    PlrCsv {
        path: PathBuf,
        b1: usize,
        b2: usize,
        l_box: f64,
        #[serde(default)]
        expand: bool,
    },
    RflCsv {
        path: PathBuf,
        b: usize,
        r_ref: f64,
        lambda: f64,
    },
    PlrSynthetic {
        n: usize,
        p: usize,
        b1: usize,
        b2: usize,
        l_box: f64,
        seed: u64,
    },
    RflSynthetic {
        n: usize,
        b: usize,
        r_ref: f64,
        lambda: f64,
        seed: u64,
    },
    FullyActive {
        sizes: Vec<usize>,
        radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    /// explicit schedule; otherwise the preset of the same name
    #[serde(default)]
    pub schedule: Option<Schedule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Neighbourhood {
    /// `[x - below, x + above]` coordinatewise
    Box { below: Vec<f64>, above: Vec<f64> },
    /// cube of the given radius
    Cube { radius: f64 },
    /// per-block norm balls with closed-form regression bounds
    Plr { radius: f64, norm: Norm },
    /// boxes with closed-form facility bounds
    Rfl { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// anchor; when absent, the best point of an AM run from start 0
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    pub neighbourhood: Neighbourhood,
    #[serde(default = "default_delta_glob")]
    pub delta_glob: f64,
    #[serde(default = "default_restarts")]
    pub max_restarts: usize,
    /// local search used after each improvement
    #[serde(default = "default_restart_method")]
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    /// per coordinate `(lo, hi, points)`
    pub x_grid: Vec<(f64, f64, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub instance: InstanceSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_kmax")]
    pub kmax: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// enumeration cap for the reference optimum
    #[serde(default = "default_cap")]
    pub enum_cap: u128,
    #[serde(default)]
    pub time_limit: Option<f64>,
    #[serde(default)]
    pub certify: Option<CertifyConfig>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    /// big-M parameter for `bounds`
    #[serde(default = "default_c")]
    pub c: f64,
    /// also solve the big-M model in `bounds`
    #[serde(default)]
    pub solve: bool,
}

fn default_schema() -> String {
    CONFIG_SCHEMA.into()
}
fn default_methods() -> Vec<MethodSpec> {
    ["am", "bb", "sm", "mm", "dca"]
        .iter()
        .map(|n| MethodSpec {
            name: n.to_string(),
            schedule: None,
        })
        .collect()
}
fn default_starts() -> usize {
    50
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_kmax() -> usize {
    DEFAULT_KMAX
}
fn default_out() -> PathBuf {
    PathBuf::from("smc_out")
}
fn default_cap() -> u128 {
    DEFAULT_ENUM_CAP
}
fn default_delta_glob() -> f64 {
    DEFAULT_DELTA_GLOB
}
fn default_restarts() -> usize {
    20
}
fn default_restart_method() -> String {
    "am".into()
}
fn default_c_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_c() -> f64 {
    1.0
}

impl BenchConfig {
    pub fn builtin(name: &str) -> Self {
        serde_json::from_value(serde_json::json!({ "instance": { "builtin": name } }))
            .expect("static config")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let c: BenchConfig = serde_json::from_str(text).map_err(json_err)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != CONFIG_SCHEMA {
            return Err(CliError::Config(format!(
                "unsupported schema `{}`",
                self.schema
            )));
        }
        if self.starts == 0 {
            return Err(CliError::Config("starts must be >= 1".into()));
        }
        for m in &self.methods {
            if m.name != "dca" && m.schedule.is_none() && Schedule::named(&m.name).is_none() {
                return Err(CliError::Config(format!("unknown method `{}`", m.name)));
            }
        }
        Ok(())
    }

    fn apply(&mut self, c: &Common) {
        if let Some(s) = c.seed {
            self.seed = s;
        }
        if let Some(o) = &c.out {
            self.out = o.clone();
        }
        if let Some(t) = c.time_limit {
            self.time_limit = Some(t);
        }
        if let Some(i) = &c.instance {
            self.instance = InstanceSource::Builtin(i.clone());
        }
    }

    fn budget(&self) -> Budget {
        Budget {
            time_limit: Some(
                self.time_limit
                    .map_or(crate::micp::DEFAULT_TIME_LIMIT, |t| {
                        Duration::from_secs_f64(t.max(0.0))
                    }),
            ),
            ..Budget::default()
        }
    }
}

/// A resolved instance; regression and facility instances keep their data
/// for the closed-form neighbourhood bounds.
pub enum Instance {
    Plain(SmcProblem),
    Plr(PlrSpec, SmcProblem),
    Rfl(RflSpec, SmcProblem),
}

impl Instance {
    pub fn problem(&self) -> &SmcProblem {
        match self {
            Instance::Plain(p) | Instance::Plr(_, p) | Instance::Rfl(_, p) => p,
        }
    }
}

pub fn load_instance(src: &InstanceSource, base: &Path) -> Result<Instance, CliError> {
    let path = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    Ok(match src {
        InstanceSource::Builtin(name) => Instance::Plain(
            problems::toy_library()
                .remove(name.as_str())
                .ok_or_else(|| CliError::Config(format!("unknown built-in instance `{name}`")))?,
        ),
        InstanceSource::Json(p) => {
            Instance::Plain(SmcProblem::from_json(&fs::read_to_string(path(p))?)?)
        }
        InstanceSource::PlrCsv {
            path: p,
            b1,
            b2,
            l_box,
            expand,
        } => {
            let spec = problems::load_plr_csv(&path(p), *b1, *b2, *l_box, *expand)?;
            let prob = problems::plr_build(&spec)?;
            Instance::Plr(spec, prob)
        }
        InstanceSource::RflCsv {
            path: p,
            b,
            r_ref,
            lambda,
        } => {
            let spec = problems::load_rfl_csv(&path(p), *b, *r_ref, *lambda)?;
            let prob = problems::rfl_build(&spec)?;
            Instance::Rfl(spec, prob)
        }
        InstanceSource::PlrSynthetic {
            n,
            p,
            b1,
            b2,
            l_box,
            seed,
        } => {
            let spec = problems::plr_synthetic(*n, *p, *b1, *b2, *l_box, *seed);
            let prob = problems::plr_build(&spec)?;
            Instance::Plr(spec, prob)
        }
        InstanceSource::RflSynthetic {
            n,
            b,
            r_ref,
            lambda,
            seed,
        } => {
            let spec = problems::rfl_synthetic(*n, *b, *r_ref, *lambda, *seed);
            let prob = problems::rfl_build(&spec)?;
            Instance::Rfl(spec, prob)
        }
        InstanceSource::FullyActive { sizes, radius } => {
            let n = sizes.len();
            Instance::Plain(problems::fully_active(
                n,
                sizes,
                n,
                crate::funcs::ConvexAtom::constant(0.0),
                FeasibleSet::cube(n, *radius).map_err(ProblemError::from)?,
            )?)
        }
    })
}

/// One (method, start) outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub method: String,
    pub start: usize,
    pub best_value: f64,
    pub iterations: usize,
    pub termination: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub min: f64,
    pub avg: f64,
    pub med: f64,
    pub avg_seconds: f64,
}

pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = vec![];
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let mine: Vec<&RunRow> = rows
                .iter()
                .filter(|r| r.method == m && r.best_value.is_finite())
                .collect();
            let mut v: Vec<f64> = mine.iter().map(|r| r.best_value).collect();
            v.sort_by(f64::total_cmp);
            let k = v.len();
            let med = if k == 0 {
                f64::NAN
            } else if k % 2 == 1 {
                v[k / 2]
            } else {
                0.5 * (v[k / 2 - 1] + v[k / 2])
            };
            SummaryRow {
                method: m.to_string(),
                min: v.first().copied().unwrap_or(f64::NAN),
                avg: v.iter().sum::<f64>() / k as f64,
                med,
                avg_seconds: mine.iter().map(|r| r.seconds).sum::<f64>() / k.max(1) as f64,
            }
        })
        .collect()
}

/// Results CSV without timings (they go to a separate file), so that
/// reruns with the same seed are byte-identical.
pub fn results_csv(rows: &[RunRow], enum_value: Option<f64>) -> String {
    let mut out = format!("# {RESULTS_SCHEMA}\n{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "result,{},{},{},{},{},,,,",
            r.method, r.start, r.best_value, r.iterations, r.termination
        );
    }
    let e = enum_value.map(|v| v.to_string()).unwrap_or_default();
    for s in summarize(rows) {
        let _ = writeln!(
            out,
            "summary,{},,,,,{},{},{},{}",
            s.method, s.min, s.avg, s.med, e
        );
    }
    out
}

pub fn timings_csv(rows: &[RunRow]) -> String {
    let mut out = String::from("method,start,seconds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6}", r.method, r.start, r.seconds);
    }
    for s in summarize(rows) {
        let _ = writeln!(out, "{},avg,{:.6}", s.method, s.avg_seconds);
    }
    out
}

/// Result and summary rows of a results CSV.
pub fn parse_results_csv(text: &str) -> Result<(Vec<RunRow>, Vec<SummaryRow>), CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let num = |s: &str| -> Result<f64, CliError> {
        s.parse()
            .map_err(|_| CliError::Config(format!("bad number `{s}`")))
    };
    let mut rows = vec![];
    let mut sums = vec![];
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        match f(0) {
            "result" => rows.push(RunRow {
                method: f(1).into(),
                start: f(2)
                    .parse()
                    .map_err(|_| CliError::Config("bad start".into()))?,
                best_value: num(f(3))?,
                iterations: f(4)
                    .parse()
                    .map_err(|_| CliError::Config("bad iterations".into()))?,
                termination: f(5).into(),
                seconds: 0.0,
            }),
            "summary" => sums.push(SummaryRow {
                method: f(1).into(),
                min: num(f(6))?,
                avg: num(f(7))?,
                med: num(f(8))?,
                avg_seconds: 0.0,
            }),
            other => return Err(CliError::Config(format!("unknown row kind `{other}`"))),
        }
    }
    Ok((rows, sums))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<RunRow>,
    pub traces: Vec<(String, usize, RunTrace)>,
    pub enum_value: Option<f64>,
    pub failures: usize,
}

fn schedule_of(m: &MethodSpec) -> Option<Schedule> {
    m.schedule.clone().or_else(|| Schedule::named(&m.name))
}

/// Initial weights of a start: uniform on the simplex product, shared by
/// all methods.
pub fn start_weights(p: &SmcProblem, seed: u64, start: usize) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    Weights::sample_uniform(&p.sizes(), &mut rng)
}

fn noise_rng(seed: u64, start: usize, method: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f5e_1ec7);
    rng.set_stream(((start as u64) << 16) | method as u64);
    rng
}

pub fn cmd_run(cfg: &BenchConfig, inst: &Instance) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let p = inst.problem();
    let solver = SolverConfig::default();
    let jobs: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..cfg.starts).map(move |s| (m, s)))
        .collect();
    let results: Vec<(RunRow, Option<RunTrace>)> = jobs
        .par_iter()
        .map(|&(mi, start)| {
            let m = &cfg.methods[mi];
            let t0 = Instant::now();
            let q = start_weights(p, cfg.seed, start);
            let out = if m.name == "dca" && m.schedule.is_none() {
                crate::subsolve::solve_convex(
                    &crate::subsolve::WeightedSubproblem::new(p, &q.0)
                        .expect("weights match the problem"),
                    &solver,
                )
                .map_err(|e| e.to_string())
                .and_then(|x0| {
                    dca_run(p, &x0.x, cfg.delta, cfg.kmax, &solver).map_err(|e| e.to_string())
                })
            } else {
                let sched = schedule_of(m).expect("validated method");
                let mut rng = noise_rng(cfg.seed, start, mi);
                ram_run(p, &q, &sched, cfg.delta, cfg.kmax, &solver, &mut rng)
                    .map_err(|e| e.to_string())
            };
            let seconds = t0.elapsed().as_secs_f64();
            match out {
                Ok(t) => (
                    RunRow {
                        method: m.name.clone(),
                        start,
                        best_value: t.best_value,
                        iterations: t.iterations(),
                        termination: termination_label(&t),
                        seconds,
                    },
                    Some(t),
                ),
                Err(e) => (
                    RunRow {
                        method: m.name.clone(),
                        start,
                        best_value: f64::NAN,
                        iterations: 0,
                        termination: format!("error: {}", e.replace(',', ";")),
                        seconds,
                    },
                    None,
                ),
            }
        })
        .collect();
    let enum_value = if p.num_selections() <= cfg.enum_cap {
        Some(p.enumerate_global(&solver, cfg.enum_cap)?.value)
    } else {
        None
    };
    let failures = results.iter().filter(|(_, t)| t.is_none()).count();
    let mut rows = vec![];
    let mut traces = vec![];
    for (row, t) in results {
        if let Some(t) = t {
            traces.push((row.method.clone(), row.start, t));
        }
        rows.push(row);
    }
    Ok(RunOutput {
        rows,
        traces,
        enum_value,
        failures,
    })
}

fn termination_label(t: &RunTrace) -> String {
    match &t.termination {
        crate::local::Termination::Converged => "converged".into(),
        crate::local::Termination::MaxIterations => "max_iterations".into(),
        crate::local::Termination::SolverError(e) => {
            format!("solver_error: {}", e.replace(',', ";"))
        }
    }
}

pub fn write_run(cfg: &BenchConfig, out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(cfg.out.join("traces"))?;
    fs::write(
        cfg.out.join("results.csv"),
        results_csv(&out.rows, out.enum_value),
    )?;
    fs::write(cfg.out.join("timings.csv"), timings_csv(&out.rows))?;
    for (m, s, t) in &out.traces {
        fs::write(
            cfg.out.join("traces").join(format!("{m}_{s}.csv")),
            t.to_csv(),
        )?;
    }
    let meta = serde_json::json!({
        "schema": RESULTS_SCHEMA,
        "seed": cfg.seed,
        "config": cfg,
        "enum_value": out.enum_value,
        "failures": out.failures,
    });
    fs::write(
        cfg.out.join("meta.json"),
        serde_json::to_string_pretty(&meta).map_err(json_err)?,
    )?;
    Ok(())
}

fn neighbourhood_fn<'a>(
    inst: &'a Instance,
    nb: &'a Neighbourhood,
) -> impl Fn(&[f64]) -> Result<(FeasibleSet, Option<SBounds>), MicpError> + 'a {
    move |x: &[f64]| {
        let pe = |e: ProblemError| MicpError::Invalid(e.to_string());
        match (nb, inst) {
            (Neighbourhood::Box { below, above }, _) => {
                if below.len() != x.len() || above.len() != x.len() {
                    return Err(MicpError::ShapeMismatch("neighbourhood offsets".into()));
                }
                let lo = x.iter().zip(below).map(|(a, b)| a - b).collect();
                let hi = x.iter().zip(above).map(|(a, b)| a + b).collect();
                Ok((FeasibleSet::boxed(lo, hi)?, None))
            }
            (Neighbourhood::Cube { radius }, _) => {
                let lo = x.iter().map(|a| a - radius).collect();
                let hi = x.iter().map(|a| a + radius).collect();
                Ok((FeasibleSet::boxed(lo, hi)?, None))
            }
            (Neighbourhood::Plr { radius, norm }, Instance::Plr(spec, _)) => Ok((
                problems::plr_neighbourhood(spec, x, *radius, *norm).map_err(pe)?,
                Some(problems::plr_local_sbounds(spec, x, *radius, *norm).map_err(pe)?),
            )),
            (Neighbourhood::Rfl { radius }, Instance::Rfl(spec, _)) => Ok((
                problems::rfl_neighbourhood(spec, x, *radius).map_err(pe)?,
                Some(problems::rfl_local_sbounds(spec, x, *radius).map_err(pe)?),
            )),
            _ => Err(MicpError::Invalid(
                "neighbourhood kind does not match the instance".into(),
            )),
        }
    }
}

pub fn cmd_certify(
    cfg: &BenchConfig,
    inst: &Instance,
) -> Result<crate::micp::RefineReport, CliError> {
    let cc = cfg
        .certify
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `certify` section".into()))?;
    let p = inst.problem();
    let solver = SolverConfig::default();
    let x = match &cc.x {
        Some(x) => x.clone(),
        None => {
            let q = start_weights(p, cfg.seed, 0);
            let mut rng = noise_rng(cfg.seed, 0, 0);
            ram_run(
                p,
                &q,
                &Schedule::am(),
                cfg.delta,
                cfg.kmax,
                &solver,
                &mut rng,
            )
            .map_err(MicpError::from)?
            .best_x
        }
    };
    if !p.set().contains(&x, 1e-9) {
        return Err(CliError::Config("anchor is not feasible".into()));
    }
    let sched = Schedule::named(&cc.method)
        .ok_or_else(|| CliError::Config(format!("unknown method `{}`", cc.method)))?;
    let opts = CertifyOptions {
        rho: DEFAULT_RHO,
        delta_glob: cc.delta_glob,
        budget: cfg.budget(),
        ..CertifyOptions::default()
    };
    let nb = neighbourhood_fn(inst, &cc.neighbourhood);
    Ok(refine_loop(
        p,
        &x,
        &nb,
        &sched,
        &opts,
        cc.max_restarts,
        &solver,
        cfg.seed,
    )?)
}

fn grid_points(spec: &[(f64, f64, usize)]) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![]];
    for &(lo, hi, n) in spec {
        let axis: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    pts
}

/// Rows `c, x..., vc, objective`.
pub fn cmd_vc_scan(cfg: &BenchConfig, inst: &Instance) -> Result<String, CliError> {
    let p = inst.problem();
    let sc = cfg.scan.clone().unwrap_or_else(|| ScanConfig {
        c_grid: default_c_grid(),
        x_grid: (0..p.dim())
            .map(|j| (p.set().lower[j].max(-5.0), p.set().upper[j].min(5.0), 101))
            .collect(),
    });
    if sc.x_grid.len() != p.dim() || p.dim() > 2 {
        return Err(CliError::Config(
            "the scan needs a grid axis per coordinate of a 1-D or 2-D instance".into(),
        ));
    }
    let bounded = bounded_problem(p)?;
    let bounds = auto_sbounds(&bounded, &SolverConfig::default())?;
    let pts = grid_points(&sc.x_grid);
    let mut out = String::from("c");
    for j in 0..p.dim() {
        let _ = write!(out, ",x{}", j + 1);
    }
    out.push_str(",vc,objective\n");
    for &c in &sc.c_grid {
        for x in &pts {
            let _ = write!(out, "{c}");
            for v in x {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(
                out,
                ",{},{}",
                value_function(p, &bounds, c, x),
                p.objective(x)
            );
        }
    }
    Ok(out)
}

/// The problem on its own set, or on `[-5, 5]^d` intersected with it when
/// the set is unbounded.
fn bounded_problem(p: &SmcProblem) -> Result<SmcProblem, CliError> {
    if p.set().diameter_bound().is_some() {
        return Ok(p.clone());
    }
    let d = p.dim();
    Ok(p.with_set(p.set().intersect_box(&vec![-5.0; d], &vec![5.0; d]))?)
}

pub fn cmd_enumerate(cfg: &BenchConfig, inst: &Instance) -> Result<serde_json::Value, CliError> {
    let g = inst
        .problem()
        .enumerate_global(&SolverConfig::default(), cfg.enum_cap)?;
    Ok(serde_json::json!({ "value": g.value, "x": g.x, "sigma": g.sigma }))
}

pub fn cmd_bounds(
    cfg: &BenchConfig,
    inst: &Instance,
) -> Result<(SBounds, String, Option<serde_json::Value>), CliError> {
    let p = bounded_problem(inst.problem())?;
    let solver = SolverConfig::default();
    let bounds = auto_sbounds(&p, &solver)?;
    let model = build_global_model(&p, &bounds, cfg.c)?;
    let stats = format!("{STATS_HEADER}\n{}\n", model.stats().csv_row());
    let solved = if cfg.solve {
        Some(serde_json::to_value(solve_micp(&model, &cfg.budget(), &solver)?).map_err(json_err)?)
    } else {
        None
    };
    Ok((bounds, stats, solved))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    fs::write(
        path,
        serde_json::to_string_pretty(v).map_err(json_err)? + "\n",
    )?;
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> Result<i32, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    let (mut cfg, base) = match &cli.common.config {
        Some(path) => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (BenchConfig::from_json(&fs::read_to_string(path)?)?, base)
        }
        None => {
            let name = cli
                .common
                .instance
                .clone()
                .ok_or_else(|| CliError::Config("give --config or --instance".into()))?;
            (BenchConfig::builtin(&name), PathBuf::new())
        }
    };
    cfg.apply(&cli.common);
    cfg.validate()?;
    let inst = load_instance(&cfg.instance, &base)?;
    fs::create_dir_all(&cfg.out)?;
    match cli.command {
        Command::Run => {
            let out = cmd_run(&cfg, &inst)?;
            write_run(&cfg, &out)?;
            for s in summarize(&out.rows) {
                println!(
                    "{:>6}  min {:.9}  avg {:.9}  med {:.9}",
                    s.method, s.min, s.avg, s.med
                );
            }
            if let Some(v) = out.enum_value {
                println!("enumeration {v:.9}");
            }
            Ok(if out.failures > 0 { 2 } else { 0 })
        }
        Command::Certify => {
            let rep = cmd_certify(&cfg, &inst)?;
            write_json(&cfg.out.join("verdict.json"), &rep)?;
            println!(
                "value {:.9} -> {:.9}  restarts {}  enhancement {:.4}%",
                rep.start_value, rep.value, rep.restarts, rep.enhancement
            );
            Ok(0)
        }
        Command::VcScan => {
            let csv = cmd_vc_scan(&cfg, &inst)?;
            fs::write(cfg.out.join("vc_scan.csv"), &csv)?;
            println!("{} rows", csv.lines().count() - 1);
            Ok(0)
        }
        Command::Enumerate => {
            let v = cmd_enumerate(&cfg, &inst)?;
            write_json(&cfg.out.join("enumerate.json"), &v)?;
            println!("{v}");
            Ok(0)
        }
        Command::Bounds => {
            let (b, stats, solved) = cmd_bounds(&cfg, &inst)?;
            write_json(&cfg.out.join("bounds.json"), &b)?;
            fs::write(cfg.out.join("model_stats.csv"), &stats)?;
            print!("{stats}");
            if let Some(s) = solved {
                write_json(&cfg.out.join("micp.json"), &s)?;
                println!("{s}");
            }
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(name: &str, starts: usize) -> BenchConfig {
        let mut c = BenchConfig::builtin(name);
        c.starts = starts;
        c
    }

    #[test]
    fn run_schema() {
        let mut c = cfg("abs_three", 3);
        c.methods = vec![
            MethodSpec {
                name: "am".into(),
                schedule: None,
            },
            MethodSpec {
                name: "mm".into(),
                schedule: None,
            },
        ];
        let inst = load_instance(&c.instance, Path::new("")).unwrap();
        let out = cmd_run(&c, &inst).unwrap();
        let csv = results_csv(&out.rows, out.enum_value);
        let (rows, sums) = parse_results_csv(&csv).unwrap();
        assert_eq!((rows.len(), sums.len()), (6, 2));
        assert_eq!(summarize(&rows), sums);
        assert!((out.enum_value.unwrap() + 33.0 / 16.0).abs() < 1e-9);
        for r in &rows {
            let ok = [-0.125, -33.0 / 16.0, 0.0]
                .iter()
                .any(|v| (r.best_value - v).abs() < 1e-9);
            assert!(ok, "{}", r.best_value);
        }
    }

    #[test]
    fn config_validation() {
        assert!(
            BenchConfig::from_json(r#"{"instance": {"builtin": "abs_three"}, "starts": 0}"#)
                .is_err()
        );
        assert!(BenchConfig::from_json(
            r#"{"instance": {"builtin": "abs_three"}, "methods": [{"name": "xx"}]}"#
        )
        .is_err());
        assert!(BenchConfig::from_json(
            r#"{"schema": "other", "instance": {"builtin": "abs_three"}}"#
        )
        .is_err());
        let c = BenchConfig::from_json(r#"{"instance": {"builtin": "abs_three"}}"#).unwrap();
        assert_eq!((c.starts, c.kmax), (50, 400));
    }

    #[test]
    fn vc_scan_shape() {
        let mut c = cfg("abs_three", 1);
        c.scan = Some(ScanConfig {
            c_grid: vec![0.0, 1.0],
            x_grid: vec![(-2.0, 2.0, 41)],
        });
        let inst = load_instance(&c.instance, Path::new("")).unwrap();
        let csv = cmd_vc_scan(&c, &inst).unwrap();
        let lines: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(lines.len(), 82);
        for l in &lines[41..] {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            assert!((f[2] - f[3]).abs() < 1e-9);
        }
        let c0: Vec<f64> = lines[..41]
            .iter()
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        for w in c0.windows(3) {
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-12);
        }
    }

    #[test]
    fn certify_budget_zero_and_restart() {
        let mut c = cfg("abs_three", 1);
        c.certify = Some(CertifyConfig {
            x: Some(vec![-1.0 / 16.0]),
            neighbourhood: Neighbourhood::Box {
                below: vec![0.4375],
                above: vec![0.3125],
            },
            delta_glob: DEFAULT_DELTA_GLOB,
            max_restarts: 10,
            method: "am".into(),
        });
        let inst = load_instance(&c.instance, Path::new("")).unwrap();
        let rep = cmd_certify(&c, &inst).unwrap();
        assert!(rep.restarts >= 1);
        assert!((rep.value + 33.0 / 16.0).abs() < 1e-9);
        c.certify.as_mut().unwrap().x = Some(vec![-2.0]);
        let rep = cmd_certify(&c, &inst).unwrap();
        assert_eq!((rep.restarts, rep.enhancement), (0, 0.0));
        c.time_limit = Some(0.0);
        let rep = cmd_certify(&c, &inst).unwrap();
        assert!(matches!(
            rep.verdicts[0],
            crate::micp::Verdict::Inconclusive { .. }
        ));
    }

    #[test]
    fn enumerate_and_bounds() {
        let mut c = cfg("abs_three", 1);
        c.solve = true;
        let inst = load_instance(&c.instance, Path::new("")).unwrap();
        let v = cmd_enumerate(&c, &inst).unwrap();
        assert!((v["value"].as_f64().unwrap() + 33.0 / 16.0).abs() < 1e-12);
        assert_eq!(v["sigma"], serde_json::json!([2]));
        let (_, stats, solved) = cmd_bounds(&c, &inst).unwrap();
        assert!(stats.starts_with(STATS_HEADER));
        let s = solved.unwrap();
        assert_eq!(s["status"], "optimal");
        assert!((s["value"].as_f64().unwrap() + 33.0 / 16.0).abs() < 1e-9);
    }
}
