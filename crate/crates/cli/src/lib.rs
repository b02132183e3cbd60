//! Experiment orchestration for the chaos BSDE solvers: single runs,
//! repetitions, parameter sweeps, trajectories and baselines, all written as CSV.

pub mod config;
pub mod record;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use bsde_chaos::oracles::{bs_call_delta, bs_call_price, mc_delta, mc_price};
use bsde_chaos::problems::{Problem, ProblemId};
use bsde_chaos::schemes::{run_euler, run_picard, simulate_solution_paths, BsdeResult, PathTable, Scheme};

pub use config::{Mode, RunConfig, Sweep, SweepAxis};
pub use record::{ResultRecord, SCHEMA};

/// Parameters of the `vanilla_call` catalogue entry: `S_0, K, r, σ`.
pub const VANILLA: (f64, f64, f64, f64) = (1.0, 0.9, 0.01, 0.2);

/// Runs `f` on a pool of `threads` workers (0 picks the default count).
/// Every count gives the same numbers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}

/// One solver run with seed `cfg.seed + run`.
pub fn solve(cfg: &RunConfig, problem: &Problem, run: usize) -> Result<(ResultRecord, BsdeResult)> {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(run as u64);
    let start = Instant::now();
    let res = match c.scheme {
        Scheme::Euler => run_euler(problem, &c.euler_params())?,
        Scheme::Picard => run_picard(problem, &c.picard_params())?,
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let rec = ResultRecord {
        scheme: c.scheme,
        problem: c.problem,
        m: c.m,
        cells: c.cells,
        order: c.order,
        samples: c.samples,
        iterations: c.iterations,
        seed: c.seed,
        run,
        y0: res.y0,
        z0: res.z0.clone(),
        wall_ms,
        diagnostics: res.diagnostics.clone(),
    };
    Ok((rec, res))
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(io::stdout()),
    })
}

/// Where the resolved configuration of a result file is echoed: `res.csv`
/// gets `res.config.json`.
pub fn config_echo_path(out: &Path) -> PathBuf {
    out.with_extension("config.json")
}

struct Sink {
    rows: csv::Writer<Box<dyn Write>>,
    diag: Option<csv::Writer<Box<dyn Write>>>,
    written: usize,
}

impl Sink {
    fn open(cfg: &RunConfig, dim: usize) -> Result<Self> {
        let mut rows = csv::Writer::from_writer(open_out(cfg.out.as_deref())?);
        rows.write_record(ResultRecord::header(dim))?;
        rows.flush()?;
        if let Some(out) = &cfg.out {
            std::fs::write(config_echo_path(out), cfg.to_json())?;
        }
        let diag = match &cfg.diagnostics {
            Some(p) => {
                let mut w = csv::Writer::from_writer(open_out(Some(p))?);
                w.write_record(record::DIAGNOSTICS_HEADER)?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { rows, diag, written: 0 })
    }

    fn push(&mut self, rec: &ResultRecord, res: &BsdeResult) -> Result<()> {
        self.rows.write_record(rec.fields())?;
        self.rows.flush()?;
        if let Some(w) = &mut self.diag {
            for f in record::diagnostic_fields(self.written, rec, &res.terminal) {
                w.write_record(f)?;
            }
            w.flush()?;
        }
        self.written += 1;
        Ok(())
    }
}

fn run_rows(cfg: &RunConfig, points: &[(RunConfig, usize)]) -> Result<Vec<ResultRecord>> {
    let problem = cfg.problem()?;
    let mut sink = Sink::open(cfg, problem.dim())?;
    let mut out = Vec::with_capacity(points.len());
    for (c, run) in points {
        let (rec, res) = solve(c, &problem, *run)?;
        sink.push(&rec, &res)?;
        out.push(rec);
    }
    Ok(out)
}

/// A single run; one row.
pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate(Mode::Run)?;
    run_rows(cfg, &[(cfg.clone(), 0)])
}

/// `R` runs with seeds `seed + 0, ..., seed + R - 1`.
pub fn cmd_repeat(cfg: &RunConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate(Mode::Repeat)?;
    let reps = cfg.repetitions.unwrap_or(1);
    let points: Vec<_> = (0..reps).map(|r| (cfg.clone(), r)).collect();
    run_rows(cfg, &points)
}

/// One row per sweep value, times `repetitions` when given. Every value uses
/// the same seeds.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate(Mode::Sweep)?;
    let sweep = cfg.sweep.as_ref().expect("validated");
    let reps = cfg.repetitions.unwrap_or(1);
    let mut points = Vec::new();
    for &v in &sweep.values {
        let c = cfg.with_axis(sweep.axis, v);
        c.euler_params().validate(c.problem()?.dim())?;
        points.extend((0..reps).map(|r| (c.clone(), r)));
    }
    run_rows(cfg, &points)
}

/// `K` trajectories of `(Y, Z)` and, when the problem has a market, hedges.
pub fn cmd_paths(cfg: &RunConfig) -> Result<PathTable> {
    cfg.validate(Mode::Paths)?;
    let problem = cfg.problem()?;
    let mut c = cfg.clone();
    c.retain = true;
    let res = run_euler(&problem, &c.euler_params())?;
    let table = simulate_solution_paths(&problem, &res, cfg.paths.expect("validated"), cfg.seed)?;
    let mut w = open_out(cfg.out.as_deref())?;
    table.write_csv(&mut w)?;
    w.flush()?;
    Ok(table)
}

/// A baseline value: a direct Monte Carlo estimate, or a closed form with
/// zero standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub problem: ProblemId,
    /// `price`, `z0`, `bs_price` or `bs_z0`.
    pub quantity: &'static str,
    pub component: usize,
    pub run: usize,
    pub seed: u64,
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl OracleRow {
    pub const HEADER: [&'static str; 9] =
        ["schema", "problem", "quantity", "component", "run", "seed", "value", "stderr", "samples"];

    fn fields(&self) -> Vec<String> {
        vec![
            SCHEMA.to_string(),
            self.problem.name().into(),
            self.quantity.into(),
            self.component.to_string(),
            self.run.to_string(),
            self.seed.to_string(),
            self.value.to_string(),
            self.stderr.to_string(),
            self.samples.to_string(),
        ]
    }
}

/// Baselines for the configured problem with `N` samples per repetition.
pub fn oracle_rows(cfg: &RunConfig) -> Result<Vec<OracleRow>> {
    cfg.validate(Mode::Oracle)?;
    let problem = cfg.problem()?;
    let mut rows = Vec::new();
    let row = |quantity, component, run, seed, value, stderr, samples| OracleRow {
        problem: cfg.problem,
        quantity,
        component,
        run,
        seed,
        value,
        stderr,
        samples,
    };
    if cfg.problem == ProblemId::VanillaCall {
        let (s0, k, r, vol) = VANILLA;
        let t = problem.horizon();
        rows.push(row("bs_price", 1, 0, 0, bs_call_price(s0, k, r, vol, t), 0.0, 0));
        rows.push(row("bs_z0", 1, 0, 0, vol * s0 * bs_call_delta(s0, k, r, vol, t), 0.0, 0));
    }
    for run in 0..cfg.repetitions.unwrap_or(1) {
        let seed = cfg.seed.wrapping_add(run as u64);
        let p = mc_price(&problem, cfg.samples, seed)?;
        rows.push(row("price", 1, run, seed, p.value, p.stderr, p.samples));
        if problem.model().is_some() {
            for (g, z) in mc_delta(&problem, cfg.samples, cfg.bump, seed)?.into_iter().enumerate() {
                rows.push(row("z0", g + 1, run, seed, z.value, z.stderr, z.samples));
            }
        }
    }
    Ok(rows)
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<Vec<OracleRow>> {
    let rows = oracle_rows(cfg)?;
    let mut w = csv::Writer::from_writer(open_out(cfg.out.as_deref())?);
    w.write_record(OracleRow::HEADER)?;
    for r in &rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(rows)
}

/// Reads a result file back.
pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    r.records()
        .map(|row| ResultRecord::parse(&header, &row?))
        .collect()
}

/// Dispatches `mode`.
pub fn execute(mode: Mode, cfg: &RunConfig) -> Result<()> {
    match mode {
        Mode::Run => cmd_run(cfg).map(drop),
        Mode::Repeat => cmd_repeat(cfg).map(drop),
        Mode::Sweep => cmd_sweep(cfg).map(drop),
        Mode::Paths => cmd_paths(cfg).map(drop),
        Mode::Oracle => cmd_oracle(cfg).map(drop),
    }
}
