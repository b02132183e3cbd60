//! Python module `bsde_chaos`: problems, both schemes, trajectories and the
//! baseline estimators.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bsde_chaos::error::Error;
use bsde_chaos::hermite as hermite_core;
use bsde_chaos::multiindex::IndexSet;
use bsde_chaos::oracles;
use bsde_chaos::problems::{self, BorrowingForm, ProblemId};
use bsde_chaos::schemes::{self, EulerParams, PicardParams, StepDiagnostics};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A BSDE from the catalogue.
#[pyclass(frozen, name = "Problem")]
pub struct PyProblem {
    inner: problems::Problem,
    id: ProblemId,
}

#[pymethods]
impl PyProblem {
    #[staticmethod]
    fn example1() -> Self {
        Self {
            inner: problems::Problem::example1(),
            id: ProblemId::Example1,
        }
    }

    #[staticmethod]
    fn example2() -> Self {
        Self {
            inner: problems::Problem::example2(),
            id: ProblemId::Example2,
        }
    }

    /// `form` is `"as_stated"` (default) or `"holdings"`.
    #[staticmethod]
    #[pyo3(signature = (form = "as_stated"))]
    fn example3(form: &str) -> PyResult<Self> {
        let form = match form {
            "as_stated" => BorrowingForm::AsStated,
            "holdings" => BorrowingForm::Holdings,
            other => return Err(PyValueError::new_err(format!("unknown borrowing form '{other}'"))),
        };
        Ok(Self {
            inner: problems::Problem::example3_with(form),
            id: ProblemId::Example3,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (s0 = 1.0, strike = 0.9, r = 0.01, vol = 0.2, horizon = 1.0))]
    fn vanilla_call(s0: f64, strike: f64, r: f64, vol: f64, horizon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: problems::Problem::vanilla_call(s0, strike, r, vol, horizon).map_err(err)?,
            id: ProblemId::VanillaCall,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (horizon = 1.0))]
    fn bt_squared(horizon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: problems::Problem::bt_squared(horizon).map_err(err)?,
            id: ProblemId::BtSquared,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (value, horizon = 1.0, dim = 1))]
    fn constant(value: f64, horizon: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: problems::Problem::constant(value, horizon, dim).map_err(err)?,
            id: ProblemId::Constant,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn id(&self) -> &'static str {
        self.id.name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    fn __repr__(&self) -> String {
        format!("Problem('{}', d={}, T={})", self.inner.name, self.dim(), self.horizon())
    }
}

/// Output of a scheme run.
#[pyclass(frozen, name = "BsdeResult")]
pub struct PyBsdeResult {
    inner: schemes::BsdeResult,
}

fn diag_dict<'py>(py: Python<'py>, d: &StepDiagnostics) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("index", d.index)?;
    out.set_item("time", d.time)?;
    out.set_item("cells", d.cells)?;
    out.set_item("second_moment", d.second_moment)?;
    out.set_item("v_diagnostic", d.v_diagnostic)?;
    out.set_item("max_stderr", d.max_stderr)?;
    Ok(out)
}

#[pymethods]
impl PyBsdeResult {
    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme.name()
    }

    #[getter]
    fn y0(&self) -> f64 {
        self.inner.y0
    }

    #[getter]
    fn z0(&self) -> Vec<f64> {
        self.inner.z0.clone()
    }

    #[getter]
    fn retained(&self) -> bool {
        self.inner.is_retained()
    }

    /// Per-step (Euler) or per-iteration (Picard) diagnostics.
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.diagnostics.iter().map(|d| diag_dict(py, d)).collect()
    }

    fn terminal_diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        diag_dict(py, &self.inner.terminal)
    }

    /// Coefficients `d̂^i` in rank order (needs `retain=True`).
    fn coefficients(&self, step: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.coefficients(step).map_err(err)?.values().to_vec())
    }

    fn terminal_coefficients(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.terminal_coefficients().map_err(err)?.values().to_vec())
    }

    /// `K` trajectories as column lists: `path`, `t`, `y`, `z` (rows of
    /// length `d`) and `hedge` when the problem has a market.
    fn paths<'py>(&self, py: Python<'py>, problem: &PyProblem, k: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let table = py
            .detach(|| schemes::simulate_solution_paths(&problem.inner, &self.inner, k, seed))
            .map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("path", table.rows.iter().map(|r| r.path).collect::<Vec<_>>())?;
        out.set_item("t", table.rows.iter().map(|r| r.t).collect::<Vec<_>>())?;
        out.set_item("y", table.rows.iter().map(|r| r.y).collect::<Vec<_>>())?;
        out.set_item("z", table.rows.iter().map(|r| r.z.clone()).collect::<Vec<_>>())?;
        if table.rows.first().is_some_and(|r| r.hedge.is_some()) {
            let h: Vec<Vec<f64>> = table.rows.iter().map(|r| r.hedge.clone().unwrap_or_default()).collect();
            out.set_item("hedge", h)?;
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("BsdeResult({}, y0={}, z0={:?})", self.scheme(), self.inner.y0, self.inner.z0)
    }
}

/// Backward Euler scheme with `m` steps, `M` cells, order `P`, `N` samples.
#[pyfunction]
#[pyo3(signature = (problem, m, cells, order, samples, seed = 0, retain = false))]
fn run_euler(
    py: Python<'_>,
    problem: &PyProblem,
    m: usize,
    cells: usize,
    order: usize,
    samples: usize,
    seed: u64,
    retain: bool,
) -> PyResult<PyBsdeResult> {
    let mut p = EulerParams::new(m, cells, order, samples, seed);
    p.retain = retain;
    let inner = py.detach(|| schemes::run_euler(&problem.inner, &p)).map_err(err)?;
    Ok(PyBsdeResult { inner })
}

/// Picard iteration with `Q` iterations.
#[pyfunction]
#[pyo3(signature = (problem, m, cells, order, samples, iterations = 7, seed = 0))]
fn run_picard(
    py: Python<'_>,
    problem: &PyProblem,
    m: usize,
    cells: usize,
    order: usize,
    samples: usize,
    iterations: usize,
    seed: u64,
) -> PyResult<PyBsdeResult> {
    let p = PicardParams::new(EulerParams::new(m, cells, order, samples, seed), iterations);
    let inner = py.detach(|| schemes::run_picard(&problem.inner, &p)).map_err(err)?;
    Ok(PyBsdeResult { inner })
}

/// `H_n(x) = He_n(x) / n!`.
#[pyfunction]
fn hermite(n: usize, x: f64) -> PyResult<f64> {
    hermite_core::hermite_eval(n, x).map_err(err)
}

/// Nodes and weights for the standard normal law.
#[pyfunction]
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    hermite_core::gauss_hermite(n)
}

/// Size of the index set for order `P`, `M` cells and dimension `d`.
#[pyfunction]
fn index_set_size(order: usize, cells: usize, dim: usize) -> PyResult<usize> {
    Ok(IndexSet::build(order, cells, dim).map_err(err)?.len())
}

#[pyfunction]
fn bs_call_price(s0: f64, strike: f64, r: f64, vol: f64, horizon: f64) -> f64 {
    oracles::bs_call_price(s0, strike, r, vol, horizon)
}

#[pyfunction]
fn bs_call_delta(s0: f64, strike: f64, r: f64, vol: f64, horizon: f64) -> f64 {
    oracles::bs_call_delta(s0, strike, r, vol, horizon)
}

/// Direct Monte Carlo price: `(value, stderr)`.
#[pyfunction]
#[pyo3(signature = (problem, samples, seed = 0))]
fn mc_price(py: Python<'_>, problem: &PyProblem, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let e = py.detach(|| oracles::mc_price(&problem.inner, samples, seed)).map_err(err)?;
    Ok((e.value, e.stderr))
}

/// Finite-difference `Z_0`: one `(value, stderr)` per coordinate.
#[pyfunction]
#[pyo3(signature = (problem, samples, bump = 0.01, seed = 0))]
fn mc_delta(py: Python<'_>, problem: &PyProblem, samples: usize, bump: f64, seed: u64) -> PyResult<Vec<(f64, f64)>> {
    let e = py
        .detach(|| oracles::mc_delta(&problem.inner, samples, bump, seed))
        .map_err(err)?;
    Ok(e.into_iter().map(|e| (e.value, e.stderr)).collect())
}

#[pymodule(name = "bsde_chaos")]
fn bsde_chaos_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyBsdeResult>()?;
    m.add_function(wrap_pyfunction!(run_euler, m)?)?;
    m.add_function(wrap_pyfunction!(run_picard, m)?)?;
    m.add_function(wrap_pyfunction!(hermite, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_hermite, m)?)?;
    m.add_function(wrap_pyfunction!(index_set_size, m)?)?;
    m.add_function(wrap_pyfunction!(bs_call_price, m)?)?;
    m.add_function(wrap_pyfunction!(bs_call_delta, m)?)?;
    m.add_function(wrap_pyfunction!(mc_price, m)?)?;
    m.add_function(wrap_pyfunction!(mc_delta, m)?)?;
    Ok(())
}
