//! Backward Euler scheme with chaos projections, and the Picard iteration
//! used as a baseline.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::brownian::{union_points, Coarsening, GridView, SeedSpec, StreamLabel};
use crate::chaos::{
    accumulate, dot, finish_projection, project_samples, step_functionals, BasisWorkspace, ChaosCoefficients,
    EvalPoint, Evaluator, NodeFactors, PathEvaluator, Projection,
};
use crate::error::{Error, Result};
use crate::grids::{CellSide, RefinedGrid, TimeGrid};
use crate::multiindex::IndexSet;
use crate::problems::Problem;

/// Default cap on the number of multi-indices per step.
pub const INDEX_CAP: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Picard,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Picard => "picard",
        }
    }
}

/// Truncation and sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EulerParams {
    /// Time steps `m`.
    pub steps: usize,
    /// Uniform basis cells `M`.
    pub cells: usize,
    /// Chaos order `P`.
    pub order: usize,
    /// Monte Carlo samples `N`.
    pub samples: usize,
    pub seed: u64,
    /// Keep the coefficients of every step for trajectory sampling.
    pub retain: bool,
}

impl EulerParams {
    pub fn new(steps: usize, cells: usize, order: usize, samples: usize, seed: u64) -> Self {
        Self {
            steps,
            cells,
            order,
            samples,
            seed,
            retain: false,
        }
    }

    pub fn retained(mut self) -> Self {
        self.retain = true;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.steps == 0 || self.cells == 0 || self.samples < 2 || dim == 0 {
            return Err(Error::InvalidParameter(
                "m, M and d must be at least 1 and N at least 2".into(),
            ));
        }
        // The largest step has M cells (plus possibly one split cell).
        let count = IndexSet::expected_len(self.order, self.cells + 1, dim);
        if count > INDEX_CAP as u128 {
            return Err(Error::IndexSetTooLarge {
                order: self.order,
                cells: self.cells + 1,
                dim,
                count,
                cap: INDEX_CAP,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PicardParams {
    pub base: EulerParams,
    /// Iterations `Q`.
    pub iterations: usize,
}

impl PicardParams {
    pub fn new(base: EulerParams, iterations: usize) -> Self {
        Self { base, iterations }
    }
}

/// Diagnostics of one backward step (Euler) or one iteration (Picard).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub index: usize,
    pub time: f64,
    pub cells: usize,
    /// `Σ_a d_a² / a!`.
    pub second_moment: f64,
    pub v_diagnostic: f64,
    pub max_stderr: f64,
}

impl StepDiagnostics {
    fn new(index: usize, time: f64, p: &Projection) -> Self {
        Self {
            index,
            time,
            cells: p.coefficients.set().cells(),
            second_moment: p.coefficients.second_moment(),
            v_diagnostic: p.v_diagnostic,
            max_stderr: p.stderr.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BsdeResult {
    pub scheme: Scheme,
    pub y0: f64,
    pub z0: Vec<f64>,
    /// Euler: steps `m, ..., 1` followed by nothing else; Picard: iterations in order.
    pub diagnostics: Vec<StepDiagnostics>,
    /// Diagnostics of the terminal projection.
    pub terminal: StepDiagnostics,
    pub grid: TimeGrid,
    pub cells: usize,
    retained: Option<Retained>,
}

#[derive(Debug, Clone)]
struct Retained {
    terminal: ChaosCoefficients,
    /// `steps[i - 1]` holds `d̂^i`.
    steps: Vec<ChaosCoefficients>,
}

impl BsdeResult {
    /// Coefficients `d̂^i` of step `i`, if retained.
    pub fn coefficients(&self, step: usize) -> Result<&ChaosCoefficients> {
        let r = self.retained.as_ref().ok_or(Error::CoefficientsNotRetained)?;
        r.steps
            .get(step.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidParameter(format!("no step {step}")))
    }

    pub fn terminal_coefficients(&self) -> Result<&ChaosCoefficients> {
        Ok(&self.retained.as_ref().ok_or(Error::CoefficientsNotRetained)?.terminal)
    }

    pub fn is_retained(&self) -> bool {
        self.retained.is_some()
    }
}

struct SetCache {
    order: usize,
    dim: usize,
    sets: HashMap<usize, Arc<IndexSet>>,
}

impl SetCache {
    fn new(order: usize, dim: usize) -> Self {
        Self {
            order,
            dim,
            sets: HashMap::new(),
        }
    }

    fn get(&mut self, cells: usize) -> Result<Arc<IndexSet>> {
        if let Some(s) = self.sets.get(&cells) {
            return Ok(s.clone());
        }
        let s = Arc::new(IndexSet::build_with_cap(self.order, cells, self.dim, INDEX_CAP)?);
        self.sets.insert(cells, s.clone());
        Ok(s)
    }
}

/// Projects `ξ` sampled on `basis ∪ monitoring times` onto the chaos of `basis`.
fn project_xi(problem: &Problem, basis: &RefinedGrid, set: Arc<IndexSet>, seed: SeedSpec, label: StreamLabel, samples: usize) -> Result<Projection> {
    let points = union_points(basis.points(), &problem.terminal.monitoring_times());
    let bound = problem.terminal.bind(&points)?;
    let coarse = Coarsening::new(&points, basis.points())?;
    let dim = problem.dim();
    let cells = points.len() - 1;
    project_samples(
        basis.step(),
        set,
        samples,
        || (vec![0.0; dim * cells], vec![0.0; dim * points.len()]),
        |(fine, values), n, row| {
            seed.normals(label, n as u64).fill(fine);
            coarse.apply(fine, dim, values, row);
            Ok(bound.eval(values))
        },
    )
}

fn z_at_origin(c: &ChaosCoefficients, grid: &RefinedGrid, dim: usize) -> Result<Vec<f64>> {
    Evaluator::new(c, grid)?.z(&EvalPoint::origin(dim))
}

/// Runs the backward Euler recursion with fresh Brownian samples per step.
pub fn run_euler(problem: &Problem, params: &EulerParams) -> Result<BsdeResult> {
    let dim = problem.dim();
    params.validate(dim)?;
    let m = params.steps;
    let n = params.samples;
    let grid = TimeGrid::uniform(problem.horizon(), m)?;
    let rgs = RefinedGrid::build_all(&grid, params.cells)?;
    let mut sets = SetCache::new(params.order, dim);
    let seed = SeedSpec::new(params.seed);
    let driver = &problem.driver;

    let xi = project_xi(problem, &rgs[m - 1], sets.get(rgs[m - 1].cells())?, seed, StreamLabel::terminal(), n)?;
    let terminal_diag = StepDiagnostics::new(m, grid.time(m), &xi);
    let terminal = xi.coefficients;

    let mut diagnostics = Vec::with_capacity(m);
    let mut kept = Vec::new();
    let mut next: Option<ChaosCoefficients> = None;
    for i in (1..=m).rev() {
        let rg = &rgs[i - 1];
        let set = sets.get(rg.cells())?;
        let t = grid.time(i);
        let (cy, zbar) = match &next {
            None => (terminal.clone(), Vec::new()),
            Some(nx) => {
                let sf = step_functionals(nx, &rgs[i], rg, set.clone(), !driver.is_zero())?;
                (sf.y, sf.zbar)
            }
        };
        let projection = if driver.is_zero() {
            Projection {
                stderr: vec![0.0; cy.len()],
                coefficients: cy,
                v_diagnostic: 0.0,
                samples: 0,
            }
        } else {
            let len = set.len();
            let row_len = dim * rg.cells();
            let label = StreamLabel::step(i);
            let sums = accumulate(
                n,
                2 * len,
                || (BasisWorkspace::new(set.clone()), vec![0.0; row_len], vec![0.0; dim]),
                |(ws, row, z), s, acc| {
                    seed.normals(label, s as u64).fill(row);
                    let h = ws.compute(row);
                    let y = dot(cy.values(), h);
                    for (g, zg) in z.iter_mut().enumerate() {
                        *zg = zbar.get(g).map_or(0.0, |w| dot(w, h));
                    }
                    let f = driver.eval(t, y, z);
                    if !f.is_finite() {
                        return Err(Error::NonFiniteDriver { step: i, sample: s });
                    }
                    let (sum, sq) = acc.split_at_mut(len);
                    for a in 0..len {
                        let x = f * h[a];
                        sum[a] += x;
                        sq[a] += x * x;
                    }
                    Ok(())
                },
            )?;
            finish_projection(i, set.clone(), Some(cy.values()), grid.delta(i), &sums, n)?
        };
        diagnostics.push(StepDiagnostics::new(i, grid.time(i - 1), &projection));
        let current = projection.coefficients;
        if params.retain {
            kept.push(current.clone());
        }
        next = Some(current);
    }
    let first = next.expect("at least one step");
    let z0 = z_at_origin(&first, &rgs[0], dim)?;
    kept.reverse();
    Ok(BsdeResult {
        scheme: Scheme::Euler,
        y0: first.constant(),
        z0,
        diagnostics,
        terminal: terminal_diag,
        grid,
        cells: params.cells,
        retained: params.retain.then_some(Retained { terminal, steps: kept }),
    })
}

/// Node `t_j` of the Picard time grid inside the basis grid.
struct PicardNode {
    cell: usize,
    ratio: f64,
    at: usize,
    left: usize,
    inv_span: f64,
}

/// Runs the Picard iteration with projection of `F^q` at `T`, starting from
/// `(Y^0, Z^0) = (0, 0)`.
pub fn run_picard(problem: &Problem, params: &PicardParams) -> Result<BsdeResult> {
    let base = &params.base;
    let dim = problem.dim();
    base.validate(dim)?;
    if params.iterations == 0 {
        return Err(Error::InvalidParameter("Q must be at least 1".into()));
    }
    let m = base.steps;
    let n = base.samples;
    let grid = TimeGrid::uniform(problem.horizon(), m)?;
    let basis = RefinedGrid::build(&grid, base.cells, m)?;
    let set = Arc::new(IndexSet::build_with_cap(base.order, basis.cells(), dim, INDEX_CAP)?);
    let seed = SeedSpec::new(base.seed);
    let driver = &problem.driver;

    let points = union_points(
        &union_points(basis.points(), grid.points()),
        &problem.terminal.monitoring_times(),
    );
    let bound = problem.terminal.bind(&points)?;
    let coarse = Coarsening::new(&points, basis.points())?;
    let np = points.len();
    let pos = |t: f64| points.iter().position(|&s| s == t).ok_or(Error::NotOnGrid(t));
    let mut nodes = Vec::with_capacity(m);
    for j in 0..m {
        let t = grid.time(j);
        let cell = basis.locate(t, CellSide::Opening)?;
        let left = basis.points()[cell - 1];
        let span = t - left;
        nodes.push(PicardNode {
            cell,
            ratio: (span / basis.width(cell)).clamp(0.0, 1.0),
            at: pos(t)?,
            left: pos(left)?,
            inv_span: if span > 0.0 { 1.0 / span.sqrt() } else { 0.0 },
        });
    }
    let deltas: Vec<f64> = (1..=m).map(|i| grid.delta(i)).collect();
    let times: Vec<f64> = (0..m).map(|j| grid.time(j)).collect();

    let mut history: Vec<ChaosCoefficients> = Vec::with_capacity(params.iterations);
    let mut diagnostics = Vec::with_capacity(params.iterations);
    let mut terminal = None;
    for q in 0..params.iterations {
        let label = StreamLabel::iteration(q);
        let hist = &history;
        let projection = project_samples(
            q,
            set.clone(),
            n,
            || PicardState {
                fine: vec![0.0; dim * (np - 1)],
                values: vec![0.0; dim * np],
                eval: PathEvaluator::new(set.clone(), &basis).expect("grid matches set"),
                factors: vec![NodeFactors::default(); m],
                partial: vec![0.0; dim],
                y: vec![0.0; m],
                z: vec![0.0; m * dim],
                y_next: vec![0.0; m],
                z_next: vec![0.0; m * dim],
            },
            |st, s, row| {
                seed.normals(label, s as u64).fill(&mut st.fine);
                coarse.apply(&st.fine, dim, &mut st.values, row);
                let xi = bound.eval(&st.values);
                if driver.is_zero() {
                    return Ok(xi);
                }
                st.y.fill(0.0);
                st.z.fill(0.0);
                if q > 0 {
                    st.eval.load(row);
                    for (node, fac) in nodes.iter().zip(st.factors.iter_mut()) {
                        for l in 0..dim {
                            st.partial[l] = (st.values[l * np + node.at] - st.values[l * np + node.left]) * node.inv_span;
                        }
                        st.eval.node(node.cell, node.ratio, &st.partial, fac);
                    }
                }
                for c in hist.iter() {
                    st.eval.bind(c.values());
                    let mut integral = 0.0;
                    for j in 0..m {
                        st.y_next[j] = st.eval.y(&st.factors[j]) - integral;
                        st.eval.z(&st.factors[j], &mut st.z_next[j * dim..(j + 1) * dim]);
                        integral += deltas[j] * driver.eval(times[j], st.y[j], &st.z[j * dim..(j + 1) * dim]);
                    }
                    std::mem::swap(&mut st.y, &mut st.y_next);
                    std::mem::swap(&mut st.z, &mut st.z_next);
                }
                let mut total = xi;
                for j in 0..m {
                    let f = driver.eval(times[j], st.y[j], &st.z[j * dim..(j + 1) * dim]);
                    if !f.is_finite() {
                        return Err(Error::NonFiniteDriver { step: j, sample: s });
                    }
                    total += deltas[j] * f;
                }
                Ok(total)
            },
        )?;
        let diag = StepDiagnostics::new(q, problem.horizon(), &projection);
        if q == 0 {
            terminal = Some(diag);
        }
        diagnostics.push(diag);
        history.push(projection.coefficients);
    }
    let last = history.last().expect("at least one iteration");
    let z0 = z_at_origin(last, &basis, dim)?;
    Ok(BsdeResult {
        scheme: Scheme::Picard,
        y0: last.constant(),
        z0,
        diagnostics,
        terminal: terminal.expect("at least one iteration"),
        grid,
        cells: base.cells,
        retained: None,
    })
}

struct PicardState {
    fine: Vec<f64>,
    values: Vec<f64>,
    eval: PathEvaluator,
    factors: Vec<NodeFactors>,
    partial: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    y_next: Vec<f64>,
    z_next: Vec<f64>,
}

/// One row of a trajectory table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRow {
    pub path: usize,
    pub t: f64,
    pub y: f64,
    pub z: Vec<f64>,
    pub hedge: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathTable {
    pub dim: usize,
    pub rows: Vec<PathRow>,
}

impl PathTable {
    /// Columns `path,t,y,z_1..z_d` and `h_1..h_d` when hedges are present.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let hedged = self.rows.first().is_some_and(|r| r.hedge.is_some());
        let mut header = vec!["path".to_string(), "t".into(), "y".into()];
        header.extend((1..=self.dim).map(|g| format!("z_{g}")));
        if hedged {
            header.extend((1..=self.dim).map(|g| format!("h_{g}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut cols = vec![r.path.to_string(), format!("{}", r.t), format!("{:e}", r.y)];
            cols.extend(r.z.iter().map(|v| format!("{v:e}")));
            if let Some(h) = &r.hedge {
                cols.extend(h.iter().map(|v| format!("{v:e}")));
            }
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Samples `(Y_t, Z_t)` of a retained Euler solution along `paths` fresh
/// Brownian paths at every node `t_0, ..., t_m`. Node `t_{i-1}` uses the step-`i`
/// coefficients; `Y_T` uses the projection of `ξ`.
pub fn simulate_solution_paths(problem: &Problem, result: &BsdeResult, paths: usize, seed: u64) -> Result<PathTable> {
    if result.scheme != Scheme::Euler {
        return Err(Error::Unsupported("trajectories are available for the Euler scheme".into()));
    }
    if !result.is_retained() {
        return Err(Error::CoefficientsNotRetained);
    }
    let dim = problem.dim();
    let grid = &result.grid;
    let m = grid.steps();
    let rgs = RefinedGrid::build_all(grid, result.cells)?;
    let mut points = grid.points().to_vec();
    for rg in &rgs {
        points = union_points(&points, rg.points());
    }
    let np = points.len();
    let view = GridView::new(&points);
    let seed = SeedSpec::new(seed);
    let mut evals = (1..=m)
        .map(|i| Evaluator::new(result.coefficients(i)?, &rgs[i - 1]))
        .collect::<Result<Vec<_>>>()?;
    let terminal = result.terminal_coefficients()?;
    let mut terminal_eval = Evaluator::new(terminal, &rgs[m - 1])?;
    let model = problem.model();

    let mut rows = Vec::with_capacity(paths * (m + 1));
    let mut fine = vec![0.0; dim * (np - 1)];
    let mut values = vec![0.0; dim * np];
    for k in 0..paths {
        seed.normals(StreamLabel::evaluation(), k as u64).fill(&mut fine);
        view.path_values(&fine, dim, &mut values);
        let value = |l: usize, s: f64| {
            let p = points.partition_point(|&x| x < s);
            values[l * np + p]
        };
        for j in 0..=m {
            let t = grid.time(j);
            let (y, z) = if j < m {
                let pt = EvalPoint::from_values(&rgs[j], t, CellSide::Opening, dim, value)?;
                (evals[j].y(&pt)?, evals[j].z(&pt)?)
            } else {
                let pt = EvalPoint::from_values(&rgs[m - 1], t, CellSide::Closing, dim, value)?;
                (terminal_eval.y(&pt)?, evals[m - 1].z(&pt)?)
            };
            let hedge = match model {
                Some(mm) => {
                    let spots: Vec<f64> = (0..dim).map(|i| mm.price(i, t, |l| value(l, t))).collect();
                    Some(mm.hedge(&spots, &z)?)
                }
                None => None,
            };
            rows.push(PathRow { path: k, t, y, z, hedge });
        }
    }
    Ok(PathTable { dim, rows })
}
