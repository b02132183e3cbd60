//! Statistical checks of the chaos formulas on a two-cell grid, shared by the
//! core integration tests and the acceptance runner.

use std::sync::Arc;

use bsde_chaos::brownian::{GridView, SeedSpec, StreamLabel};
use bsde_chaos::chaos::{BasisWorkspace, ChaosCoefficients, EvalPoint, Evaluator, NodeFactors, PathEvaluator};
use bsde_chaos::grids::{CellSide, RefinedGrid, TimeGrid};
use bsde_chaos::multiindex::IndexSet;
use bsde_chaos::oracles::nested_ce;

/// Outcome of one property: the largest deviation in units of its standard error.
#[derive(Debug, Clone)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub worst_sigma: f64,
    pub ok: bool,
}

impl PropertyOutcome {
    fn new(name: &'static str, worst_sigma: f64) -> Self {
        Self {
            name,
            worst_sigma,
            ok: worst_sigma.is_finite() && worst_sigma <= 5.0,
        }
    }
}

pub struct TwoCell {
    pub grid: RefinedGrid,
    pub set: Arc<IndexSet>,
    pub coeffs: ChaosCoefficients,
}

/// `[0, 1]` split at `1/2`, order 2, one coordinate, with every coefficient nonzero.
pub fn two_cell() -> TwoCell {
    let grid = RefinedGrid::build(&TimeGrid::uniform(1.0, 1).unwrap(), 2, 1).unwrap();
    let set = Arc::new(IndexSet::build(2, 2, 1).unwrap());
    let mut c = vec![0.0; set.len()];
    for (deg, v) in [
        ([0u8, 0], 0.3),
        ([1, 0], 0.5),
        ([0, 1], -0.4),
        ([2, 0], 0.6),
        ([1, 1], 0.25),
        ([0, 2], -0.35),
    ] {
        c[set.rank_of_degrees(&deg).unwrap()] = v;
    }
    let coeffs = ChaosCoefficients::new(1, set.clone(), c).unwrap();
    TwoCell { grid, set, coeffs }
}

fn position(points: &[f64], s: f64) -> usize {
    points.iter().position(|&p| (p - s).abs() < 1e-12).expect("point on grid")
}

/// `Y_T` as a function of path values on `points`.
fn terminal_value(tc: &TwoCell, points: &[f64], v: &[f64]) -> f64 {
    let b = |s: f64| v[position(points, s)];
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let row = [(b(0.5) - b(0.0)) / r, (b(1.0) - b(0.5)) / r];
    let mut ws = BasisWorkspace::new(tc.set.clone());
    let h = ws.compute(&row);
    tc.coeffs.values().iter().zip(h).map(|(c, h)| c * h).sum()
}

/// Values of path `n` on `points`.
fn sample_paths(points: &[f64], label: StreamLabel, seed: u64, n: usize) -> Vec<f64> {
    let mut inc = vec![0.0; points.len() - 1];
    let mut v = vec![0.0; points.len()];
    SeedSpec::new(seed).normals(label, n as u64).fill(&mut inc);
    GridView::new(points).path_values(&inc, 1, &mut v);
    v
}

/// `E[(Σ c_a H_a)²] = Σ c_a² / a!` over fresh samples.
pub fn parseval(samples: usize, seed: u64) -> PropertyOutcome {
    let tc = two_cell();
    let mut ws = BasisWorkspace::new(tc.set.clone());
    let mut row = [0.0; 2];
    let (mut s, mut q) = (0.0, 0.0);
    for n in 0..samples {
        SeedSpec::new(seed).normals(StreamLabel::oracle(100), n as u64).fill(&mut row);
        let x: f64 = tc.coeffs.values().iter().zip(ws.compute(&row)).map(|(c, h)| c * h).sum();
        s += x * x;
        q += x.powi(4);
    }
    let nf = samples as f64;
    let mean = s / nf;
    let se = ((q / nf - mean * mean) / nf).sqrt();
    PropertyOutcome::new("parseval", (mean - tc.coeffs.second_moment()).abs() / se)
}

/// `Y_t = E_t[Y_T]` against nested resampling, at a lattice time and inside a cell.
pub fn tower(outer: usize, inner: usize, seed: u64) -> PropertyOutcome {
    let tc = two_cell();
    let points = [0.0, 0.3, 0.5, 1.0];
    let mut ev = Evaluator::new(&tc.coeffs, &tc.grid).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..outer {
        let v = sample_paths(&points, StreamLabel::oracle(200), seed, k);
        for (ti, &t) in [0.3, 0.5].iter().enumerate() {
            let kt = position(&points, t);
            let pt = EvalPoint::from_values(&tc.grid, t, CellSide::Closing, 1, |_, s| v[position(&points, s)]).unwrap();
            let y = ev.y(&pt).unwrap();
            let est = nested_ce(&points, t, &v[..=kt], 1, inner, seed, (k * 2 + ti) as u64, |w| {
                terminal_value(&tc, &points, w)
            })
            .unwrap();
            worst = worst.max((y - est.value).abs() / est.stderr);
        }
    }
    PropertyOutcome::new("tower", worst)
}

/// `Z̄` at `t = 0.3` against nested estimates of `(1/Δ) Σ h E_t[Z_s]` on a
/// midpoint subgrid aligned with the cell boundary.
pub fn zbar_nested(outer: usize, inner: usize, seed: u64) -> PropertyOutcome {
    let tc = two_cell();
    let t = 0.3;
    let delta = 1.0 - t;
    let h = 0.05;
    let mids: Vec<f64> = (0..14).map(|k| t + h * (k as f64 + 0.5)).collect();
    let mut points = vec![0.0, t, 0.5, 1.0];
    points.extend(&mids);
    points.sort_by(f64::total_cmp);
    let mut ev = Evaluator::new(&tc.coeffs, &tc.grid).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..outer {
        let v = sample_paths(&points, StreamLabel::oracle(300), seed, k);
        let kt = position(&points, t);
        let pt = EvalPoint::from_values(&tc.grid, t, CellSide::Closing, 1, |_, s| v[position(&points, s)]).unwrap();
        let zbar = ev.zbar(&pt, delta).unwrap()[0];
        let est = nested_ce(&points, t, &v[..=kt], 1, inner, seed, 1000 + k as u64, |w| {
            let mut e = Evaluator::new(&tc.coeffs, &tc.grid).unwrap();
            mids.iter()
                .map(|&s| {
                    let p = EvalPoint::from_values(&tc.grid, s, CellSide::Closing, 1, |_, x| w[position(&points, x)]).unwrap();
                    h * e.z(&p).unwrap()[0]
                })
                .sum::<f64>()
                / delta
        })
        .unwrap();
        worst = worst.max((zbar - est.value).abs() / est.stderr);
    }
    PropertyOutcome::new("zbar_nested", worst)
}

/// `Y_T = d_0 + ∫ Z dB` with left-point sums on `fine` steps per cell. The
/// only error comes from the pure-square terms `d_{2e_j}`, with standard
/// deviation `sqrt(Σ_j d_{2e_j}² / (2 fine))`.
pub fn martingale_reconstruction(paths: usize, fine: usize, seed: u64) -> PropertyOutcome {
    let tc = two_cell();
    let n = 2 * fine;
    let points: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let mut pe = PathEvaluator::new(tc.set.clone(), &tc.grid).unwrap();
    let mut node = NodeFactors::default();
    let sq: f64 = [[2u8, 0], [0, 2]]
        .iter()
        .map(|d| tc.coeffs.values()[tc.set.rank_of_degrees(d).unwrap()].powi(2))
        .sum();
    let sd = (sq / (2.0 * fine as f64)).sqrt();
    let mut worst: f64 = 0.0;
    for k in 0..paths {
        let v = sample_paths(&points, StreamLabel::oracle(400), seed, k);
        let r = std::f64::consts::SQRT_2;
        let row = [(v[fine] - v[0]) * r, (v[n] - v[fine]) * r];
        pe.load(&row);
        pe.bind(tc.coeffs.values());
        let mut integral = 0.0;
        for j in 0..n {
            let s = points[j];
            let cell = if j < fine { 1 } else { 2 };
            let left = if cell == 1 { 0 } else { fine };
            let span = s - points[left];
            let partial = if span > 0.0 { (v[j] - v[left]) / span.sqrt() } else { 0.0 };
            pe.node(cell, span / 0.5, &[partial], &mut node);
            let mut z = [0.0];
            pe.z(&node, &mut z);
            integral += z[0] * (v[j + 1] - v[j]);
        }
        let yt = terminal_value(&tc, &points, &v);
        worst = worst.max((tc.coeffs.constant() + integral - yt).abs() / sd);
    }
    PropertyOutcome::new("martingale_reconstruction", worst)
}

/// For `ξ = B_T` the left-point sums are exact cell by cell.
pub fn martingale_reconstruction_exact(seed: u64) -> f64 {
    let grid = RefinedGrid::build(&TimeGrid::uniform(1.0, 1).unwrap(), 2, 1).unwrap();
    let set = Arc::new(IndexSet::build(2, 2, 1).unwrap());
    let mut c = vec![0.0; set.len()];
    c[set.unit_rank(0, 1).unwrap()] = 0.5f64.sqrt();
    c[set.unit_rank(0, 2).unwrap()] = 0.5f64.sqrt();
    let coeffs = ChaosCoefficients::new(1, set.clone(), c).unwrap();
    let points: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let v = sample_paths(&points, StreamLabel::oracle(500), seed, 0);
    let mut ev = Evaluator::new(&coeffs, &grid).unwrap();
    let mut integral = 0.0;
    for j in 0..20 {
        let pt = EvalPoint::from_values(&grid, points[j], CellSide::Opening, 1, |_, s| v[position(&points, s)]).unwrap();
        integral += ev.z(&pt).unwrap()[0] * (v[j + 1] - v[j]);
    }
    (integral - v[20]).abs()
}
