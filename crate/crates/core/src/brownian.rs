//! Reproducible standardized Brownian increments.
//!
//! Every sample path owns its own counter-addressed stream: the key is derived
//! from the master seed and a [`StreamLabel`], the ChaCha stream id is the
//! sample index, and within a sample the variates are laid out by
//! `(coordinate, cell)`. Output therefore does not depend on evaluation order
//! or thread count. Variates are produced by inverse-CDF transform of 53-bit
//! uniforms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// Family a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamRole {
    /// Samples of the terminal condition used for its chaos projection.
    Terminal,
    /// Fresh increments for step `i` of the backward recursion.
    Step,
    /// Paths used to sample trajectories of a computed solution.
    Evaluation,
    /// Fresh paths for one Picard iteration.
    Iteration,
    /// Paths reserved for the validation baselines.
    Oracle,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Terminal => 1,
            StreamRole::Step => 2,
            StreamRole::Evaluation => 3,
            StreamRole::Iteration => 4,
            StreamRole::Oracle => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamLabel {
    pub role: StreamRole,
    pub index: u64,
}

impl StreamLabel {
    pub fn terminal() -> Self {
        Self {
            role: StreamRole::Terminal,
            index: 0,
        }
    }

    pub fn step(i: usize) -> Self {
        Self {
            role: StreamRole::Step,
            index: i as u64,
        }
    }

    pub fn evaluation() -> Self {
        Self {
            role: StreamRole::Evaluation,
            index: 0,
        }
    }

    pub fn iteration(q: usize) -> Self {
        Self {
            role: StreamRole::Iteration,
            index: q as u64,
        }
    }

    pub fn oracle(index: u64) -> Self {
        Self {
            role: StreamRole::Oracle,
            index,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed from which every stream key is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
}

impl SeedSpec {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    fn key(&self, label: StreamLabel) -> [u8; 32] {
        let mut state = self.master;
        state = splitmix64(&mut state) ^ label.role.tag();
        state = splitmix64(&mut state) ^ label.index;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        key
    }

    /// Standard normal stream for sample `sample` of the family `label`.
    pub fn normals(&self, label: StreamLabel, sample: u64) -> NormalStream {
        let mut rng = ChaCha8Rng::from_seed(self.key(label));
        rng.set_stream(sample);
        NormalStream { rng }
    }
}

/// Sequential standard normal variates from one counter-addressed stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// `Φ^{-1}(u)` for `u ∈ (0, 1)`.
#[inline]
pub fn inverse_normal_cdf(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Sorted union of two point sets, merging points closer than `1e-12 * scale`.
pub fn union_points(a: &[f64], b: &[f64]) -> Vec<f64> {
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * scale);
    all
}

/// Standardized increments `G[n][l][j] = (B^l_{s_j} - B^l_{s_{j-1}}) / sqrt(δ_j)`
/// for `N` samples on one grid.
#[derive(Debug, Clone)]
pub struct BrownianBatch {
    label: StreamLabel,
    points: Vec<f64>,
    dim: usize,
    samples: usize,
    increments: Vec<f64>,
}

impl BrownianBatch {
    /// Samples `samples` paths on the grid `points` (must start at 0).
    pub fn sample(
        points: &[f64],
        dim: usize,
        samples: usize,
        seed: SeedSpec,
        label: StreamLabel,
    ) -> Result<Self> {
        if samples == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "a Brownian batch needs at least one sample and one coordinate".into(),
            ));
        }
        if points.len() < 2 || points[0] != 0.0 || points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("sampling grid must start at 0 and increase".into()));
        }
        let row = dim * (points.len() - 1);
        let mut increments = vec![0.0; samples * row];
        increments
            .par_chunks_mut(row)
            .enumerate()
            .for_each(|(n, out)| seed.normals(label, n as u64).fill(out));
        Ok(Self {
            label,
            points: points.to_vec(),
            dim,
            samples,
            increments,
        })
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }

    /// Increments of sample `n`, laid out `[l * cells + (j - 1)]`.
    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.dim * self.cells();
        &self.increments[n * w..(n + 1) * w]
    }

    /// `G[n][l][j]` with `j` counted from 1.
    pub fn standardized(&self, n: usize, l: usize, j: usize) -> f64 {
        self.row(n)[l * self.cells() + j - 1]
    }

    /// `B^l_t(ω_n)` for a grid point `t`.
    pub fn value(&self, n: usize, l: usize, t: f64) -> Result<f64> {
        let k = self
            .points
            .iter()
            .position(|&s| s == t)
            .ok_or(Error::NotOnGrid(t))?;
        let cells = self.cells();
        let row = &self.row(n)[l * cells..(l + 1) * cells];
        Ok((1..=k)
            .map(|j| (self.points[j] - self.points[j - 1]).sqrt() * row[j - 1])
            .sum())
    }

    /// Bytes held by the increment buffer.
    pub fn resident_bytes(&self) -> usize {
        self.increments.len() * std::mem::size_of::<f64>()
    }
}

/// Maps increments on a fine grid to standardized increments and path values
/// on coarser subsets of its points.
#[derive(Debug, Clone)]
pub struct GridView {
    fine_sqrt: Vec<f64>,
    fine_cells: usize,
}

impl GridView {
    pub fn new(fine_points: &[f64]) -> Self {
        Self {
            fine_sqrt: fine_points.windows(2).map(|w| (w[1] - w[0]).sqrt()).collect(),
            fine_cells: fine_points.len() - 1,
        }
    }

    /// Brownian values at every fine grid point (including 0), `out[l * (cells + 1) + k]`.
    pub fn path_values(&self, row: &[f64], dim: usize, out: &mut [f64]) {
        let c = self.fine_cells;
        for l in 0..dim {
            let dst = &mut out[l * (c + 1)..(l + 1) * (c + 1)];
            dst[0] = 0.0;
            let mut acc = 0.0;
            for j in 0..c {
                acc += self.fine_sqrt[j] * row[l * c + j];
                dst[j + 1] = acc;
            }
        }
    }
}

/// Standardized increments on a subgrid, computed from increments sampled on
/// a finer grid that contains it.
#[derive(Debug, Clone)]
pub struct Coarsening {
    view: GridView,
    fine_points: usize,
    positions: Vec<usize>,
    inv_sqrt: Vec<f64>,
}

impl Coarsening {
    pub fn new(fine: &[f64], coarse: &[f64]) -> Result<Self> {
        let positions = subgrid_positions(fine, coarse)?;
        if positions.first() != Some(&0) {
            return Err(Error::Grid("a coarse grid must start at 0".into()));
        }
        let inv_sqrt = coarse.windows(2).map(|w| 1.0 / (w[1] - w[0]).sqrt()).collect();
        Ok(Self {
            view: GridView::new(fine),
            fine_points: fine.len(),
            positions,
            inv_sqrt,
        })
    }

    pub fn fine_points(&self) -> usize {
        self.fine_points
    }

    pub fn coarse_cells(&self) -> usize {
        self.positions.len() - 1
    }

    /// Position of each coarse point inside the fine grid.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Writes fine-grid path values into `values` (`l * fine_points + k`) and
    /// coarse standardized increments into `out` (`l * coarse_cells + j - 1`).
    pub fn apply(&self, fine_row: &[f64], dim: usize, values: &mut [f64], out: &mut [f64]) {
        self.view.path_values(fine_row, dim, values);
        let cc = self.coarse_cells();
        for l in 0..dim {
            let b = &values[l * self.fine_points..(l + 1) * self.fine_points];
            for j in 0..cc {
                out[l * cc + j] = (b[self.positions[j + 1]] - b[self.positions[j]]) * self.inv_sqrt[j];
            }
        }
    }
}

/// Positions of the points of a subgrid inside a finer grid.
pub fn subgrid_positions(fine: &[f64], coarse: &[f64]) -> Result<Vec<usize>> {
    let scale = fine.last().copied().unwrap_or(1.0).abs().max(1.0);
    coarse
        .iter()
        .map(|&s| {
            fine.iter()
                .position(|&f| (f - s).abs() <= 1e-12 * scale)
                .ok_or(Error::NotOnGrid(s))
        })
        .collect()
}
