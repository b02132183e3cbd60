//! Coarse time partitions and the per-step refined grids that define the
//! truncated indicator basis.

use crate::error::{Error, Result};

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `horizon * num / den` evaluated on the reduced fraction, so equal rationals
/// map to bitwise-equal doubles whichever grid produced them.
pub fn rational_point(horizon: f64, num: usize, den: usize) -> f64 {
    let g = gcd(num, den).max(1);
    horizon * (num / g) as f64 / (den / g) as f64
}

/// The partition `0 = t_0 < ... < t_m = T` driving the backward recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    uniform_steps: Option<usize>,
}

impl TimeGrid {
    /// Uniform grid with `m` steps of size `T / m`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Grid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Grid("a time grid needs at least one step".into()));
        }
        let points = (0..=steps)
            .map(|i| rational_point(horizon, i, steps))
            .collect();
        Ok(Self {
            points,
            uniform_steps: Some(steps),
        })
    }

    /// Arbitrary grid; consecutive step ratios `Δ_i / Δ_{i+1}` must stay below `ratio_bound`.
    pub fn from_points(points: Vec<f64>, ratio_bound: f64) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 {
            return Err(Error::Grid("a time grid starts at 0 and has at least two points".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Grid("time points must be finite and strictly increasing".into()));
        }
        let steps: Vec<f64> = points.windows(2).map(|w| w[1] - w[0]).collect();
        for (i, w) in steps.windows(2).enumerate() {
            let ratio = w[0] / w[1];
            if ratio > ratio_bound {
                return Err(Error::Grid(format!(
                    "step ratio {ratio} at step {} exceeds the bound {ratio_bound}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            points,
            uniform_steps: None,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of steps `m`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().expect("non-empty grid")
    }

    /// `t_i`.
    pub fn time(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// `Δ_i = t_i - t_{i-1}` for `1 <= i <= m`.
    pub fn delta(&self, i: usize) -> f64 {
        self.points[i] - self.points[i - 1]
    }

    /// `max_i Δ_i / Δ_{i+1}`.
    pub fn mesh_ratio(&self) -> f64 {
        if self.uniform_steps.is_some() {
            return 1.0;
        }
        (1..self.steps())
            .map(|i| self.delta(i) / self.delta(i + 1))
            .fold(1.0, f64::max)
    }

    /// Lattice points `jT/M` strictly below `t_i`, as `j` values, plus whether
    /// `t_i` itself is a lattice point.
    fn lattice_below(&self, cells: usize, i: usize) -> (usize, bool) {
        let horizon = self.horizon();
        match self.uniform_steps {
            Some(m) => {
                // j T / M < i T / m  <=>  j m < i M
                let count = (i * cells).div_ceil(m);
                (count, (i * cells) % m == 0)
            }
            None => {
                let t = self.points[i];
                let tol = 1e-12 * horizon;
                let mut count = 0;
                let mut on_lattice = false;
                for j in 0..=cells {
                    let s = rational_point(horizon, j, cells);
                    if (s - t).abs() <= tol {
                        on_lattice = true;
                        break;
                    }
                    if s < t {
                        count += 1;
                    }
                }
                (count, on_lattice)
            }
        }
    }
}

/// One indicator basis cell `(left, right]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisCell {
    /// Cell number, counted from 1.
    pub index: usize,
    pub left: f64,
    pub right: f64,
    pub width: f64,
}

/// Which cell a time belongs to when it coincides with a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellSide {
    /// `t ∈ (s_{r-1}, s_r]`: a grid point belongs to the cell it closes.
    Closing,
    /// `t ∈ [s_{r-1}, s_r)`: a grid point belongs to the cell it opens.
    Opening,
}

/// The partition `π̄_i` of `[0, t_i]`: uniform lattice points below `t_i`, closed by `t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedGrid {
    step: usize,
    points: Vec<f64>,
    lattice_cells: usize,
}

impl RefinedGrid {
    pub fn build(grid: &TimeGrid, cells: usize, step: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::Grid("the basis needs at least one cell".into()));
        }
        if step == 0 || step > grid.steps() {
            return Err(Error::Grid(format!(
                "step {step} outside 1..={}",
                grid.steps()
            )));
        }
        let horizon = grid.horizon();
        let (below, on_lattice) = grid.lattice_below(cells, step);
        let mut points: Vec<f64> = (0..below)
            .map(|j| rational_point(horizon, j, cells))
            .collect();
        let end = if on_lattice {
            rational_point(horizon, below, cells)
        } else {
            grid.time(step)
        };
        points.push(end);
        Ok(Self {
            step,
            points,
            lattice_cells: cells,
        })
    }

    /// Refined grids for every step `1..=m`, in step order.
    pub fn build_all(grid: &TimeGrid, cells: usize) -> Result<Vec<Self>> {
        (1..=grid.steps())
            .map(|i| Self::build(grid, cells, i))
            .collect()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `s_0 = 0 < ... < s_{M(i)} = t_i`.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// `M(i)`.
    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn lattice_cells(&self) -> usize {
        self.lattice_cells
    }

    pub fn end(&self) -> f64 {
        *self.points.last().expect("non-empty grid")
    }

    /// `δ_j` for cell `j` counted from 1.
    pub fn width(&self, j: usize) -> f64 {
        self.points[j] - self.points[j - 1]
    }

    pub fn cell(&self, j: usize) -> BasisCell {
        BasisCell {
            index: j,
            left: self.points[j - 1],
            right: self.points[j],
            width: self.width(j),
        }
    }

    pub fn basis_cells(&self) -> impl Iterator<Item = BasisCell> + '_ {
        (1..=self.cells()).map(|j| self.cell(j))
    }

    /// The unique `r` with `t ∈ (s_{r-1}, s_r]`.
    pub fn locate_cell(&self, t: f64) -> Result<usize> {
        self.locate(t, CellSide::Closing)
    }

    pub fn locate(&self, t: f64, side: CellSide) -> Result<usize> {
        let end = self.end();
        match side {
            CellSide::Closing => {
                if !(t > 0.0 && t <= end) {
                    return Err(Error::TimeOutOfRange { t, end });
                }
                Ok(self.points.partition_point(|&s| s < t))
            }
            CellSide::Opening => {
                if !(t >= 0.0 && t < end) {
                    return Err(Error::TimeOutOfRange { t, end });
                }
                Ok(self.points.partition_point(|&s| s <= t))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_grids() {
        assert_eq!(
            TimeGrid::uniform(1.0, 4).unwrap().points(),
            &[0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(TimeGrid::uniform(1.0, 1).unwrap().points(), &[0.0, 1.0]);
        assert_eq!(TimeGrid::uniform(2.0, 2).unwrap().points(), &[0.0, 1.0, 2.0]);
        assert_eq!(TimeGrid::uniform(1.0, 7).unwrap().mesh_ratio(), 1.0);
        assert!(TimeGrid::uniform(0.0, 3).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
    }

    #[test]
    fn mesh_ratio_is_checked() {
        assert!(TimeGrid::from_points(vec![0.0, 0.5, 0.75, 1.0], 2.0).is_ok());
        assert!(TimeGrid::from_points(vec![0.0, 0.5, 0.75, 1.0], 1.5).is_err());
        assert!(TimeGrid::from_points(vec![0.0, 0.5, 0.5, 1.0], 2.0).is_err());
    }

    #[test]
    fn refined_grid_examples() {
        let g2 = TimeGrid::uniform(1.0, 2).unwrap();
        let top = RefinedGrid::build(&g2, 4, 2).unwrap();
        assert_eq!(top.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(top.cells(), 4);

        let first = RefinedGrid::build(&g2, 4, 1).unwrap();
        assert_eq!(first.points(), &[0.0, 0.25, 0.5]);
        assert_eq!(first.cells(), 2);
        assert_eq!(first.cell(2).left, 0.25);
        assert_eq!(first.cell(2).right, 0.5);

        let g3 = TimeGrid::uniform(1.0, 3).unwrap();
        let off = RefinedGrid::build(&g3, 4, 1).unwrap();
        assert_eq!(off.points(), &[0.0, 0.25, 1.0 / 3.0]);
        assert_eq!(off.cells(), 2);
        assert_abs_diff_eq!(off.width(2), 1.0 / 3.0 - 0.25, epsilon = 1e-16);
    }

    #[test]
    fn locate_cell_examples() {
        let g2 = TimeGrid::uniform(1.0, 2).unwrap();
        let rg = RefinedGrid::build(&g2, 4, 1).unwrap();
        assert_eq!(rg.locate_cell(0.25).unwrap(), 1);
        assert_eq!(rg.locate_cell(0.3).unwrap(), 2);
        assert_eq!(rg.locate_cell(0.5).unwrap(), 2);
        assert!(rg.locate_cell(0.0).is_err());
        assert!(rg.locate_cell(0.6).is_err());
        assert_eq!(rg.locate(0.0, CellSide::Opening).unwrap(), 1);
        assert_eq!(rg.locate(0.25, CellSide::Opening).unwrap(), 2);
        assert!(rg.locate(0.5, CellSide::Opening).is_err());
    }

    #[test]
    fn nesting_width_sums_and_monotone_cells() {
        for &(steps, cells) in &[(20, 10), (3, 4), (7, 5), (10, 10), (50, 5), (4, 13)] {
            let grid = TimeGrid::uniform(1.3, steps).unwrap();
            let all = RefinedGrid::build_all(&grid, cells).unwrap();
            for (k, rg) in all.iter().enumerate() {
                let total: f64 = rg.basis_cells().map(|c| c.width).sum();
                assert_abs_diff_eq!(total, grid.time(k + 1), epsilon = 1e-14);
                assert!(rg.basis_cells().all(|c| c.width > 0.0));
                assert_eq!(rg.end(), grid.time(k + 1));
                if k > 0 {
                    let prev = &all[k - 1];
                    assert!(prev.cells() <= rg.cells());
                    let t_prev = grid.time(k);
                    let a: Vec<f64> = prev.points().iter().copied().filter(|&s| s < t_prev).collect();
                    let b: Vec<f64> = rg.points().iter().copied().filter(|&s| s < t_prev).collect();
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn lattice_end_points_are_shared_bitwise() {
        let grid = TimeGrid::uniform(0.7, 20).unwrap();
        let all = RefinedGrid::build_all(&grid, 10).unwrap();
        // t_{2k} = k/10 is a lattice point; it must appear bitwise in every later grid.
        for k in (2..20).step_by(2) {
            let end = all[k - 1].end();
            assert!(all[k..].iter().all(|rg| rg.points().contains(&end)));
        }
    }
}
