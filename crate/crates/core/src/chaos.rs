//! Truncated chaos decompositions on an indicator basis.
//!
//! Coefficients are stored densely by rank in an [`IndexSet`]. Evaluation
//! works through per-cell pattern tables: every index `a` is the product of
//! its stem (same index with the last nonzero column removed) and one factor
//! depending on the last column, so any quantity of the form
//! `sum_a c_a * prod_j factor_j(a_j)` costs one multiply per index.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::brownian::{BrownianBatch, Coarsening};
use crate::error::{Error, Result};
use crate::grids::{CellSide, RefinedGrid};
use crate::hermite::{fill_hermite, fill_scaled_hermite};
use crate::multiindex::{IndexSet, MultiIndex};

/// Samples per reduction chunk. Partial sums are always combined in chunk
/// order, so results do not depend on the number of worker threads.
pub const CHUNK: usize = 2048;

/// Upper bound on the memory used by in-flight partial sums.
const PARTIAL_BYTES: usize = 256 << 20;

/// Estimated coefficients `d_a` of a truncated chaos decomposition.
#[derive(Debug, Clone)]
pub struct ChaosCoefficients {
    step: usize,
    set: Arc<IndexSet>,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct CoefficientRow<'a> {
    rank: usize,
    index: &'a [u8],
    value: f64,
}

impl ChaosCoefficients {
    pub fn new(step: usize, set: Arc<IndexSet>, values: Vec<f64>) -> Result<Self> {
        if values.len() != set.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                set.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoefficient { step });
        }
        Ok(Self { step, set, values })
    }

    pub fn zeros(step: usize, set: Arc<IndexSet>) -> Self {
        let values = vec![0.0; set.len()];
        Self { step, set, values }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set(&self) -> &Arc<IndexSet> {
        &self.set
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `d_0`.
    pub fn constant(&self) -> f64 {
        self.values[0]
    }

    pub fn get(&self, a: &MultiIndex) -> Option<f64> {
        self.set.rank(a).map(|r| self.values[r])
    }

    /// `sum_a d_a^2 / a!`, the second moment of the decomposition.
    pub fn second_moment(&self) -> f64 {
        self.values
            .iter()
            .zip(self.set.factorials())
            .map(|(c, f)| c * c / f)
            .sum()
    }

    /// Writes `rank,index,value` rows; the index is the flattened degree vector.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank,index,value")?;
        for (r, v) in self.values.iter().enumerate() {
            let index: Vec<String> = self.set.degrees(r).iter().map(|k| k.to_string()).collect();
            writeln!(w, "{r},{},{v:e}", index.join(" "))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<CoefficientRow> = self
            .values
            .iter()
            .enumerate()
            .map(|(rank, &value)| CoefficientRow {
                rank,
                index: self.set.degrees(rank),
                value,
            })
            .collect();
        serde_json::json!({
            "step": self.step,
            "order": self.set.order(),
            "cells": self.set.cells(),
            "dim": self.set.dim(),
            "coefficients": rows,
        })
    }
}

/// Pattern product rows: `row[p] = prod_l herm[l][pattern_p[l]]`.
fn fill_pattern_row(set: &IndexSet, herm: &[f64], row: &mut [f64]) {
    let pats = set.patterns();
    let stride = set.order() + 1;
    let dim = set.dim();
    if dim == 1 {
        row.copy_from_slice(&herm[..row.len()]);
        return;
    }
    for (p, v) in row.iter_mut().enumerate() {
        let pat = pats.pattern(p);
        let mut acc = 1.0;
        for l in 0..dim {
            acc *= herm[l * stride + pat[l] as usize];
        }
        *v = acc;
    }
}

/// Degree-shifted rows for the martingale integrand of coordinate `gamma`:
/// zero where the pattern has no degree in `gamma`, otherwise the product with
/// the `gamma` entry lowered by one.
fn fill_shifted_row(set: &IndexSet, herm: &[f64], gamma: usize, row: &mut [f64]) {
    let pats = set.patterns();
    let stride = set.order() + 1;
    for (p, v) in row.iter_mut().enumerate() {
        let pat = pats.pattern(p);
        if pat[gamma] == 0 {
            *v = 0.0;
            continue;
        }
        let mut acc = herm[gamma * stride + pat[gamma] as usize - 1];
        for (l, &k) in pat.iter().enumerate() {
            if l != gamma {
                acc *= herm[l * stride + k as usize];
            }
        }
        *v = acc;
    }
}

fn fill_cell_hermite(set: &IndexSet, xs: impl Iterator<Item = f64>, herm: &mut [f64]) {
    let stride = set.order() + 1;
    for (l, x) in xs.enumerate() {
        fill_hermite(x, &mut herm[l * stride..(l + 1) * stride]);
    }
}

fn fill_partial_hermite(set: &IndexSet, partial: &[f64], ratio: f64, herm: &mut [f64]) {
    let stride = set.order() + 1;
    for (l, &x) in partial.iter().enumerate() {
        fill_scaled_hermite(x, ratio, &mut herm[l * stride..(l + 1) * stride]);
    }
}

/// `out[a] = out[stem(a)] * table[slot(a)]` with `out[0] = 1`.
#[inline]
fn expand(set: &IndexSet, table: &[f64], out: &mut [f64]) {
    let stems = set.stems_raw();
    let slots = set.slots_raw();
    out[0] = 1.0;
    for a in 1..out.len() {
        out[a] = out[stems[a] as usize] * table[slots[a] as usize];
    }
}

/// `sum_{a >= 1} c_a * v[stem(a)] * table[slot(a)]`.
#[inline]
fn contract(set: &IndexSet, c: &[f64], v: &[f64], table: &[f64]) -> f64 {
    let stems = set.stems_raw();
    let slots = set.slots_raw();
    let mut acc = 0.0;
    for a in 1..c.len() {
        acc += c[a] * v[stems[a] as usize] * table[slots[a] as usize];
    }
    acc
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A time `t` on a refined grid together with the Brownian information the
/// closed-form evaluations need.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub t: f64,
    /// Cell `r` (from 1) containing `t`.
    pub cell: usize,
    /// `(t - s_{r-1}) / δ_r`, clamped to `[0, 1]`.
    pub ratio: f64,
    /// Standardized increments of the complete cells `j < r`, `l * (r - 1) + j - 1`.
    pub prefix: Vec<f64>,
    /// `(B_t - B_{s_{r-1}}) / sqrt(t - s_{r-1})` per coordinate; 0 when the span is 0.
    pub partial: Vec<f64>,
}

impl EvalPoint {
    /// Builds the point from Brownian values `value(l, s)` at the grid points
    /// below `t` and at `t` itself.
    pub fn from_values(
        grid: &RefinedGrid,
        t: f64,
        side: CellSide,
        dim: usize,
        value: impl Fn(usize, f64) -> f64,
    ) -> Result<Self> {
        let r = grid.locate(t, side)?;
        let pts = grid.points();
        let mut prefix = Vec::with_capacity(dim * (r - 1));
        let mut partial = Vec::with_capacity(dim);
        let left = pts[r - 1];
        let span = t - left;
        for l in 0..dim {
            for j in 1..r {
                prefix.push((value(l, pts[j]) - value(l, pts[j - 1])) / grid.width(j).sqrt());
            }
            partial.push(if span > 0.0 {
                (value(l, t) - value(l, left)) / span.sqrt()
            } else {
                0.0
            });
        }
        Ok(Self {
            t,
            cell: r,
            ratio: (span / grid.width(r)).clamp(0.0, 1.0),
            prefix,
            partial,
        })
    }

    /// The point `t = 0+`: first cell, zero elapsed fraction.
    pub fn origin(dim: usize) -> Self {
        Self {
            t: 0.0,
            cell: 1,
            ratio: 0.0,
            prefix: Vec::new(),
            partial: vec![0.0; dim],
        }
    }
}

/// Reusable buffers for the products `H_a` of one sample.
#[derive(Debug, Clone)]
pub struct BasisWorkspace {
    set: Arc<IndexSet>,
    herm: Vec<f64>,
    table: Vec<f64>,
    products: Vec<f64>,
}

impl BasisWorkspace {
    pub fn new(set: Arc<IndexSet>) -> Self {
        let npat = set.patterns().len();
        Self {
            herm: vec![0.0; set.dim() * (set.order() + 1)],
            table: vec![1.0; (set.cells() + 1) * npat],
            products: vec![0.0; set.len()],
            set,
        }
    }

    pub fn set(&self) -> &Arc<IndexSet> {
        &self.set
    }

    /// Computes `H_a = prod_{l,j} H_{a_j^l}(G_{l,j})` for one row of
    /// standardized increments laid out `l * M + j - 1`.
    pub fn compute(&mut self, row: &[f64]) -> &[f64] {
        let set = &*self.set;
        let cells = set.cells();
        let npat = set.patterns().len();
        debug_assert_eq!(row.len(), cells * set.dim());
        for j in 0..cells {
            fill_cell_hermite(set, (0..set.dim()).map(|l| row[l * cells + j]), &mut self.herm);
            fill_pattern_row(set, &self.herm, &mut self.table[(j + 1) * npat..(j + 2) * npat]);
        }
        expand(set, &self.table, &mut self.products);
        &self.products
    }

    pub fn products(&self) -> &[f64] {
        &self.products
    }
}

/// `H_a(ω_n)` for every index of `set`, from sample `n` of a batch sampled on
/// a grid with exactly `set.cells()` cells.
pub fn eval_basis_products(set: &Arc<IndexSet>, batch: &BrownianBatch, n: usize) -> Result<Vec<f64>> {
    if batch.cells() != set.cells() || batch.dim() != set.dim() {
        return Err(Error::InvalidParameter(format!(
            "batch has {} cells and {} coordinates, index set expects {} and {}",
            batch.cells(),
            batch.dim(),
            set.cells(),
            set.dim()
        )));
    }
    let mut ws = BasisWorkspace::new(set.clone());
    Ok(ws.compute(batch.row(n)).to_vec())
}

/// Closed-form `Y_t`, `Z_t` and `Z̄` for one set of coefficients at arbitrary
/// evaluation points.
pub struct Evaluator<'a> {
    coeffs: &'a ChaosCoefficients,
    grid: &'a RefinedGrid,
    herm: Vec<f64>,
    table: Vec<f64>,
    aux: Vec<f64>,
    v: Vec<f64>,
    unit_patterns: Vec<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(coeffs: &'a ChaosCoefficients, grid: &'a RefinedGrid) -> Result<Self> {
        let set = coeffs.set();
        if grid.cells() != set.cells() {
            return Err(Error::InvalidParameter(format!(
                "grid has {} cells, coefficients expect {}",
                grid.cells(),
                set.cells()
            )));
        }
        let npat = set.patterns().len();
        let dim = set.dim();
        let unit_patterns = (0..dim)
            .map(|g| {
                let mut col = vec![0u8; dim];
                col[g] = 1;
                set.patterns().rank(&col).unwrap_or(usize::MAX)
            })
            .collect();
        Ok(Self {
            coeffs,
            grid,
            herm: vec![0.0; dim * (set.order() + 1)],
            table: vec![0.0; (set.cells() + 1) * npat],
            aux: vec![0.0; (set.cells() + 1) * npat],
            v: vec![0.0; set.len()],
            unit_patterns,
        })
    }

    fn check(&self, pt: &EvalPoint) -> Result<()> {
        let dim = self.coeffs.set().dim();
        if pt.cell == 0 || pt.cell > self.grid.cells() {
            return Err(Error::TimeOutOfRange {
                t: pt.t,
                end: self.grid.end(),
            });
        }
        if pt.prefix.len() != dim * (pt.cell - 1) || pt.partial.len() != dim {
            return Err(Error::InvalidParameter("evaluation point has the wrong shape".into()));
        }
        Ok(())
    }

    /// `V_a = E_t[H_a]`, zero for indices reaching past the current cell.
    fn prepare(&mut self, pt: &EvalPoint) -> Result<()> {
        self.check(pt)?;
        let set = &**self.coeffs.set();
        let npat = set.patterns().len();
        let r = pt.cell;
        let dim = set.dim();
        self.table[..npat].fill(1.0);
        for j in 1..r {
            fill_cell_hermite(set, (0..dim).map(|l| pt.prefix[l * (r - 1) + j - 1]), &mut self.herm);
            fill_pattern_row(set, &self.herm, &mut self.table[j * npat..(j + 1) * npat]);
        }
        fill_partial_hermite(set, &pt.partial, pt.ratio, &mut self.herm);
        fill_pattern_row(set, &self.herm, &mut self.table[r * npat..(r + 1) * npat]);
        self.table[(r + 1) * npat..].fill(0.0);
        expand(set, &self.table, &mut self.v);
        Ok(())
    }

    /// `Y_t = E_t[C(F)]`.
    pub fn y(&mut self, pt: &EvalPoint) -> Result<f64> {
        self.prepare(pt)?;
        Ok(dot(self.coeffs.values(), &self.v))
    }

    /// `Z_t`, one entry per Brownian coordinate.
    pub fn z(&mut self, pt: &EvalPoint) -> Result<Vec<f64>> {
        self.prepare(pt)?;
        let set = &**self.coeffs.set();
        let npat = set.patterns().len();
        let r = pt.cell;
        let scale = 1.0 / self.grid.width(r).sqrt();
        let mut out = Vec::with_capacity(set.dim());
        for g in 0..set.dim() {
            self.aux.fill(0.0);
            fill_shifted_row(set, &self.herm, g, &mut self.aux[r * npat..(r + 1) * npat]);
            out.push(scale * contract(set, self.coeffs.values(), &self.v, &self.aux));
        }
        Ok(out)
    }

    /// `E_t[(1/Δ) ∫_t^{t+Δ} Z_s ds]` where `t + Δ` is the end of the grid.
    pub fn zbar(&mut self, pt: &EvalPoint, delta: f64) -> Result<Vec<f64>> {
        self.prepare(pt)?;
        let set = &**self.coeffs.set();
        let npat = set.patterns().len();
        let u = pt.cell;
        let c1 = (self.grid.points()[u] - pt.t).max(0.0) / self.grid.width(u).sqrt();
        let mut out = Vec::with_capacity(set.dim());
        for g in 0..set.dim() {
            self.aux.fill(0.0);
            let row = &mut self.aux[u * npat..(u + 1) * npat];
            fill_shifted_row(set, &self.herm, g, row);
            row.iter_mut().for_each(|v| *v *= c1);
            if let Some(&p) = self.unit_patterns.get(g).filter(|&&p| p != usize::MAX) {
                for r in u + 1..=set.cells() {
                    self.aux[r * npat + p] = self.grid.width(r).sqrt();
                }
            }
            out.push(contract(set, self.coeffs.values(), &self.v, &self.aux) / delta);
        }
        Ok(out)
    }
}

/// Factors of one evaluation node, reusable across coefficient vectors.
#[derive(Debug, Clone, Default)]
pub struct NodeFactors {
    cell: usize,
    scaled: Vec<f64>,
    shifted: Vec<f64>,
}

impl NodeFactors {
    pub fn cell(&self) -> usize {
        self.cell
    }
}

/// Evaluates many coefficient vectors at many nodes of one fully known path.
///
/// After [`PathEvaluator::load`] the products `H_a` of the complete cells are
/// cached; [`PathEvaluator::bind`] then reduces a coefficient vector to per-cell
/// sums so each node costs one pass over the patterns.
#[derive(Debug, Clone)]
pub struct PathEvaluator {
    set: Arc<IndexSet>,
    inv_sqrt_width: Vec<f64>,
    herm: Vec<f64>,
    table: Vec<f64>,
    products: Vec<f64>,
    below: Vec<f64>,
    weights: Vec<f64>,
}

impl PathEvaluator {
    pub fn new(set: Arc<IndexSet>, grid: &RefinedGrid) -> Result<Self> {
        if grid.cells() != set.cells() {
            return Err(Error::InvalidParameter(format!(
                "grid has {} cells, index set expects {}",
                grid.cells(),
                set.cells()
            )));
        }
        let npat = set.patterns().len();
        let cells = set.cells();
        Ok(Self {
            inv_sqrt_width: (0..=cells)
                .map(|j| if j == 0 { 0.0 } else { 1.0 / grid.width(j).sqrt() })
                .collect(),
            herm: vec![0.0; set.dim() * (set.order() + 1)],
            table: vec![1.0; (cells + 1) * npat],
            products: vec![0.0; set.len()],
            below: vec![0.0; cells + 2],
            weights: vec![0.0; (cells + 1) * npat],
            set,
        })
    }

    /// Loads the standardized increments of every cell, `l * M + j - 1`.
    pub fn load(&mut self, row: &[f64]) -> &[f64] {
        let set = &*self.set;
        let cells = set.cells();
        let npat = set.patterns().len();
        for j in 0..cells {
            fill_cell_hermite(set, (0..set.dim()).map(|l| row[l * cells + j]), &mut self.herm);
            fill_pattern_row(set, &self.herm, &mut self.table[(j + 1) * npat..(j + 2) * npat]);
        }
        expand(set, &self.table, &mut self.products);
        &self.products
    }

    /// Products `H_a` of the loaded path.
    pub fn products(&self) -> &[f64] {
        &self.products
    }

    /// Precomputes the scaled factors of a node in cell `cell` with elapsed
    /// fraction `ratio` and normalized partial increments `partial`.
    pub fn node(&mut self, cell: usize, ratio: f64, partial: &[f64], out: &mut NodeFactors) {
        let set = &*self.set;
        let npat = set.patterns().len();
        let dim = set.dim();
        out.cell = cell;
        out.scaled.resize(npat, 0.0);
        out.shifted.resize(dim * npat, 0.0);
        fill_partial_hermite(set, partial, ratio, &mut self.herm);
        fill_pattern_row(set, &self.herm, &mut out.scaled);
        let scale = self.inv_sqrt_width[cell];
        for g in 0..dim {
            let row = &mut out.shifted[g * npat..(g + 1) * npat];
            fill_shifted_row(set, &self.herm, g, row);
            row.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// Reduces a coefficient vector against the loaded path.
    pub fn bind(&mut self, coeffs: &[f64]) {
        let set = &*self.set;
        let npat = set.patterns().len();
        let stems = set.stems_raw();
        let slots = set.slots_raw();
        let last = set.last_cells_raw();
        self.weights.fill(0.0);
        let cells = set.cells();
        let mut per_cell = vec![0.0; cells + 1];
        per_cell[0] = coeffs[0];
        for a in 1..coeffs.len() {
            let c = coeffs[a];
            per_cell[last[a] as usize] += c * self.products[a];
            self.weights[slots[a] as usize] += c * self.products[stems[a] as usize];
        }
        debug_assert!(self.weights.len() == (cells + 1) * npat);
        self.below[0] = 0.0;
        for r in 0..=cells {
            self.below[r + 1] = self.below[r] + per_cell[r];
        }
    }

    /// `Y` at a node for the bound coefficients.
    pub fn y(&self, node: &NodeFactors) -> f64 {
        let npat = node.scaled.len();
        let r = node.cell;
        self.below[r] + dot(&self.weights[r * npat..(r + 1) * npat], &node.scaled)
    }

    /// `Z` at a node for the bound coefficients.
    pub fn z(&self, node: &NodeFactors, out: &mut [f64]) {
        let npat = node.scaled.len();
        let r = node.cell;
        let w = &self.weights[r * npat..(r + 1) * npat];
        for (g, o) in out.iter_mut().enumerate() {
            *o = dot(w, &node.shifted[g * npat..(g + 1) * npat]);
        }
    }
}

/// Sums `body` over samples `0..samples` into a vector of length `width`,
/// chunk by chunk in parallel, combining chunk partials in a fixed order.
pub(crate) fn accumulate<S, I, F>(samples: usize, width: usize, init: I, body: F) -> Result<Vec<f64>>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize, &mut [f64]) -> Result<()> + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let group = (PARTIAL_BYTES / (width.max(1) * 8)).clamp(1, 64);
    let mut total = vec![0.0; width];
    for start in (0..chunks).step_by(group) {
        let end = (start + group).min(chunks);
        let partials: Vec<Result<Vec<f64>>> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut state = init();
                let mut acc = vec![0.0; width];
                for n in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                    body(&mut state, n, &mut acc)?;
                }
                Ok(acc)
            })
            .collect();
        for p in partials {
            for (t, v) in total.iter_mut().zip(p?) {
                *t += v;
            }
        }
    }
    Ok(total)
}

/// Monte Carlo chaos projection with its sampling diagnostics.
#[derive(Debug, Clone)]
pub struct Projection {
    pub coefficients: ChaosCoefficients,
    /// `sum_a a! Var(F H_a)` over the projected samples.
    pub v_diagnostic: f64,
    /// Standard error of each coefficient estimate.
    pub stderr: Vec<f64>,
    pub samples: usize,
}

/// `sum_a a! * unbiased Var(X_a)` from sums and sums of squares.
pub fn estimate_v(set: &IndexSet, sums: &[f64], sums_sq: &[f64], samples: usize) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidParameter("the variance diagnostic needs at least two samples".into()));
    }
    let n = samples as f64;
    Ok(set
        .factorials()
        .iter()
        .zip(sums.iter().zip(sums_sq))
        .map(|(f, (s, q))| f * ((q - s * s / n) / (n - 1.0)).max(0.0))
        .sum())
}

/// `d = base + scale * a! * sums / N`, plus diagnostics of `scale * X_a`.
pub(crate) fn finish_projection(
    step: usize,
    set: Arc<IndexSet>,
    base: Option<&[f64]>,
    scale: f64,
    sums: &[f64],
    samples: usize,
) -> Result<Projection> {
    let len = set.len();
    let (s, q) = sums.split_at(len);
    let n = samples as f64;
    let facts = set.factorials();
    let mut values = vec![0.0; len];
    let mut stderr = vec![0.0; len];
    for a in 0..len {
        values[a] = base.map_or(0.0, |b| b[a]) + scale * facts[a] * s[a] / n;
        let var = if samples > 1 {
            ((q[a] - s[a] * s[a] / n) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        stderr[a] = scale.abs() * facts[a] * (var / n).sqrt();
    }
    let v_diagnostic = if samples > 1 {
        scale * scale * estimate_v(&set, s, q, samples)?
    } else {
        0.0
    };
    Ok(Projection {
        coefficients: ChaosCoefficients::new(step, set, values)?,
        v_diagnostic,
        stderr,
        samples,
    })
}

/// Projects samples `F(ω_n)` onto the chaos of `set`.
///
/// `sample(state, n, row)` writes the standardized increments of sample `n`
/// (`l * M + j - 1`, on the basis grid) into `row` and returns `F(ω_n)`.
pub fn project_samples<S, I, F>(
    step: usize,
    set: Arc<IndexSet>,
    samples: usize,
    init: I,
    sample: F,
) -> Result<Projection>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize, &mut [f64]) -> Result<f64> + Sync,
{
    if samples == 0 {
        return Err(Error::InvalidParameter("projection needs at least one sample".into()));
    }
    let len = set.len();
    let row_len = set.cells() * set.dim();
    let sums = accumulate(
        samples,
        2 * len,
        || (init(), BasisWorkspace::new(set.clone()), vec![0.0; row_len]),
        |(state, ws, row), n, acc| {
            let value = sample(state, n, row)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteTerminal { sample: n });
            }
            let h = ws.compute(row);
            let (s, q) = acc.split_at_mut(len);
            for a in 0..len {
                let x = value * h[a];
                s[a] += x;
                q[a] += x * x;
            }
            Ok(())
        },
    )?;
    finish_projection(step, set, None, 1.0, &sums, samples)
}

/// `d_a = a! * mean(ξ^n H_a^n)` for terminal samples aligned with a batch
/// whose grid contains the basis grid.
pub fn project_terminal(
    xi: &[f64],
    batch: &BrownianBatch,
    grid: &RefinedGrid,
    set: Arc<IndexSet>,
) -> Result<Projection> {
    if xi.len() != batch.samples() {
        return Err(Error::InvalidParameter(format!(
            "{} terminal samples for a batch of {}",
            xi.len(),
            batch.samples()
        )));
    }
    if let Some(n) = xi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteTerminal { sample: n });
    }
    if grid.cells() != set.cells() || batch.dim() != set.dim() {
        return Err(Error::InvalidParameter("basis grid and index set disagree".into()));
    }
    let coarse = Coarsening::new(batch.points(), grid.points())?;
    let dim = batch.dim();
    let fine = coarse.fine_points();
    project_samples(
        grid.step(),
        set,
        xi.len(),
        || vec![0.0; dim * fine],
        |values, n, row| {
            coarse.apply(batch.row(n), dim, values, row);
            Ok(xi[n])
        },
    )
}

/// Rank of `b` padded to the cells of `next` with `extra` added at
/// (coordinate, cell) if given.
fn padded_rank(b: &[u8], cells: usize, next: &IndexSet, extra: Option<(usize, usize)>, buf: &mut [u8]) -> Option<usize> {
    let nc = next.cells();
    buf.fill(0);
    for l in 0..next.dim() {
        buf[l * nc..l * nc + cells].copy_from_slice(&b[l * cells..(l + 1) * cells]);
    }
    if let Some((l, j)) = extra {
        buf[l * nc + j - 1] += 1;
    }
    next.rank_of_degrees(buf)
}

fn check_nested(next_grid: &RefinedGrid, grid: &RefinedGrid, next: &IndexSet, set: &IndexSet) -> Result<()> {
    let u = grid.cells();
    if set.dim() != next.dim() || set.order() != next.order() || set.cells() != u || next.cells() != next_grid.cells()
    {
        return Err(Error::InvalidParameter("index sets do not match the refined grids".into()));
    }
    if u > next_grid.cells() || next_grid.points()[..u] != grid.points()[..u] || grid.end() > next_grid.points()[u] {
        return Err(Error::Grid("refined grids are not nested".into()));
    }
    Ok(())
}

/// Closed-form coefficients of `E[Y_{t_i} | basis of step i]` from the
/// coefficients of step `i + 1`: restriction to padded indices, scaled by
/// `ρ^{k/2}` with `k` the total degree in the last cell of step `i`.
pub fn propagate_y_coefficients(
    next: &ChaosCoefficients,
    next_grid: &RefinedGrid,
    grid: &RefinedGrid,
    set: Arc<IndexSet>,
) -> Result<ChaosCoefficients> {
    Ok(step_functionals(next, next_grid, grid, set.clone(), false)?.y)
}

/// Linear functionals of the step-`i` products that reproduce, sample by
/// sample, `Ŷ_{t_i}` and `Z̄_i` computed from the step-`i+1` coefficients.
#[derive(Debug, Clone)]
pub struct StepFunctionals {
    /// Coefficients of `Ŷ_{t_i}` in the step-`i` basis.
    pub y: ChaosCoefficients,
    /// Weights with `Z̄_i^γ = sum_b zbar[γ][b] H_b`.
    pub zbar: Vec<Vec<f64>>,
}

/// Builds [`StepFunctionals`]; `with_zbar = false` skips the control weights.
pub fn step_functionals(
    next: &ChaosCoefficients,
    next_grid: &RefinedGrid,
    grid: &RefinedGrid,
    set: Arc<IndexSet>,
    with_zbar: bool,
) -> Result<StepFunctionals> {
    let nset = &**next.set();
    check_nested(next_grid, grid, nset, &set)?;
    let u = grid.cells();
    let dim = set.dim();
    let t = grid.end();
    let left = next_grid.points()[u - 1];
    let width = next_grid.width(u);
    let ratio = ((t - left) / width).clamp(0.0, 1.0);
    let sqrt_ratio = ratio.sqrt();
    let c1 = (next_grid.points()[u] - t).max(0.0) / width.sqrt();
    let delta = next_grid.end() - t;
    let d = next.values();

    let mut y = vec![0.0; set.len()];
    let mut zbar = if with_zbar { vec![vec![0.0; set.len()]; dim] } else { Vec::new() };
    let mut buf = vec![0u8; nset.cells() * dim];
    for b in 0..set.len() {
        let deg = set.degrees(b);
        let k: i32 = (0..dim).map(|l| deg[l * u + u - 1] as i32).sum();
        let scale = sqrt_ratio.powi(k);
        let a = padded_rank(deg, u, nset, None, &mut buf).expect("padded index stays in the set");
        y[b] = d[a] * scale;
        if !with_zbar || set.total(b) >= set.order() {
            continue;
        }
        for (g, w) in zbar.iter_mut().enumerate() {
            let mut acc = 0.0;
            if c1 > 0.0 {
                if let Some(a1) = padded_rank(deg, u, nset, Some((g, u)), &mut buf) {
                    acc += c1 * d[a1];
                }
            }
            for r in u + 1..=nset.cells() {
                if let Some(a1) = padded_rank(deg, u, nset, Some((g, r)), &mut buf) {
                    acc += next_grid.width(r).sqrt() * d[a1];
                }
            }
            w[b] = acc * scale / delta;
        }
    }
    Ok(StepFunctionals {
        y: ChaosCoefficients::new(grid.step(), set, y)?,
        zbar,
    })
}
