//! Multi-indices of Hermite degrees and the graded-lexicographic index sets
//! that label the truncated chaos basis.
//!
//! A multi-index for `d` Brownian coordinates and `M` basis cells is stored as
//! one flattened degree vector of length `d * M` in coordinate-major layout:
//! entry `l * M + j` is the degree attached to coordinate `l` and cell `j + 1`.
//!
//! Index sets are ordered by total degree, then lexicographically (ascending)
//! on the flattened vector. The order is total and reproducible, so a rank is
//! a stable dense address for coefficient vectors.

use std::fmt;

use crate::error::{Error, Result};

/// Default upper bound on the number of elements of an [`IndexSet`].
pub const DEFAULT_INDEX_CAP: usize = 1 << 24;

/// Exact binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step.
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i + 1) as u128,
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of degree vectors of length `width` with total at most `order`.
fn count_upto(order: usize, width: usize) -> u128 {
    binomial((order + width) as u64, width as u64)
}

/// Number of degree vectors of length `width` with total exactly `total`.
fn count_exact(total: usize, width: usize) -> u128 {
    if width == 0 {
        return u128::from(total == 0);
    }
    binomial((total + width - 1) as u64, (width - 1) as u64)
}

/// Rank of `degrees` among all vectors of the same length with total at most
/// `order`, in graded-lex order. Returns `None` if the total exceeds `order`.
fn graded_lex_rank(degrees: &[u8], order: usize) -> Option<usize> {
    let width = degrees.len();
    let total: usize = degrees.iter().map(|&v| v as usize).sum();
    if total > order {
        return None;
    }
    let mut rank = if total == 0 {
        0
    } else {
        count_upto(total - 1, width)
    };
    let mut rem = total;
    for (p, &v) in degrees.iter().enumerate().take(width.saturating_sub(1)) {
        let v = v as usize;
        for smaller in 0..v {
            rank += count_exact(rem - smaller, width - p - 1);
        }
        rem -= v;
    }
    usize::try_from(rank).ok()
}

/// Appends, in lex-ascending order, every vector of length `width` whose
/// entries sum to `total`.
fn push_compositions(total: usize, width: usize, prefix: &mut Vec<u8>, out: &mut Vec<u8>) {
    if width == 1 {
        prefix.push(total as u8);
        out.extend_from_slice(prefix);
        prefix.pop();
        return;
    }
    for v in 0..=total {
        prefix.push(v as u8);
        push_compositions(total - v, width - 1, prefix, out);
        prefix.pop();
    }
}

fn log_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn factorial(n: usize) -> f64 {
    (2..=n).map(|k| k as f64).product()
}

/// A matrix of Hermite degrees, `dim` rows by `cells` columns.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    dim: usize,
    cells: usize,
    degrees: Vec<u8>,
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[u8]> = self.degrees.chunks(self.cells.max(1)).collect();
        write!(f, "MultiIndex{rows:?}")
    }
}

impl MultiIndex {
    pub fn new(dim: usize, cells: usize, degrees: Vec<u8>) -> Result<Self> {
        if dim == 0 || cells == 0 {
            return Err(Error::MultiIndex(format!(
                "dimension and cell count must be positive (got d={dim}, M={cells})"
            )));
        }
        if degrees.len() != dim * cells {
            return Err(Error::MultiIndex(format!(
                "expected {} degrees for d={dim}, M={cells}, got {}",
                dim * cells,
                degrees.len()
            )));
        }
        Ok(Self {
            dim,
            cells,
            degrees,
        })
    }

    /// One-dimensional multi-index from a list of per-cell degrees.
    pub fn from_cells(degrees: &[u8]) -> Result<Self> {
        Self::new(1, degrees.len(), degrees.to_vec())
    }

    pub fn zero(dim: usize, cells: usize) -> Self {
        Self {
            dim,
            cells,
            degrees: vec![0; dim * cells],
        }
    }

    /// Unit index `e_{cell, coord}` with `cell` counted from 1.
    pub fn unit(dim: usize, cells: usize, coord: usize, cell: usize) -> Self {
        let mut a = Self::zero(dim, cells);
        a.degrees[coord * cells + cell - 1] = 1;
        a
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of cells per coordinate, `#a`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn degrees(&self) -> &[u8] {
        &self.degrees
    }

    /// Degree for coordinate `coord` (from 0) and cell `cell` (from 1).
    pub fn degree(&self, coord: usize, cell: usize) -> u8 {
        self.degrees[coord * self.cells + cell - 1]
    }

    /// `|a|`.
    pub fn total(&self) -> usize {
        self.degrees.iter().map(|&v| v as usize).sum()
    }

    /// `log(a!)`.
    pub fn log_factorial(&self) -> f64 {
        self.degrees.iter().map(|&v| log_factorial(v as usize)).sum()
    }

    /// `a!` as a product of factorials.
    pub fn factorial(&self) -> f64 {
        self.degrees.iter().map(|&v| factorial(v as usize)).product()
    }

    /// Highest cell (from 1) carrying a nonzero degree; 0 for the zero index.
    pub fn last_cell(&self) -> usize {
        (1..=self.cells)
            .rev()
            .find(|&j| (0..self.dim).any(|l| self.degree(l, j) > 0))
            .unwrap_or(0)
    }

    /// Appends zero columns up to `new_cells` cells.
    pub fn pad(&self, new_cells: usize) -> Result<Self> {
        if new_cells < self.cells {
            return Err(Error::MultiIndex(format!(
                "cannot pad an index with {} cells down to {new_cells}",
                self.cells
            )));
        }
        let mut degrees = vec![0; self.dim * new_cells];
        for l in 0..self.dim {
            degrees[l * new_cells..l * new_cells + self.cells]
                .copy_from_slice(&self.degrees[l * self.cells..(l + 1) * self.cells]);
        }
        Ok(Self {
            dim: self.dim,
            cells: new_cells,
            degrees,
        })
    }

    /// `a(r)`: zeroes every column after cell `r` (from 1), for each coordinate.
    pub fn truncate_prefix(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.cells {
            return Err(Error::MultiIndex(format!(
                "prefix length {r} outside 1..={}",
                self.cells
            )));
        }
        let mut out = self.clone();
        for l in 0..self.dim {
            for v in &mut out.degrees[l * self.cells + r..(l + 1) * self.cells] {
                *v = 0;
            }
        }
        Ok(out)
    }
}

/// All `d`-vectors of degrees with total at most `P`, in graded-lex order.
/// These label the possible contents of a single cell column.
#[derive(Debug, Clone)]
pub struct PatternSet {
    dim: usize,
    order: usize,
    flat: Vec<u8>,
    totals: Vec<u8>,
}

impl PatternSet {
    fn new(order: usize, dim: usize) -> Self {
        let mut flat = Vec::new();
        let mut totals = Vec::new();
        let mut prefix = Vec::with_capacity(dim);
        for k in 0..=order {
            let before = flat.len();
            push_compositions(k, dim, &mut prefix, &mut flat);
            totals.extend(std::iter::repeat_n(k as u8, (flat.len() - before) / dim));
        }
        Self {
            dim,
            order,
            flat,
            totals,
        }
    }

    pub fn len(&self) -> usize {
        self.totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    pub fn pattern(&self, id: usize) -> &[u8] {
        &self.flat[id * self.dim..(id + 1) * self.dim]
    }

    pub fn total(&self, id: usize) -> usize {
        self.totals[id] as usize
    }

    pub fn rank(&self, column: &[u8]) -> Option<usize> {
        graded_lex_rank(column, self.order)
    }
}

/// Every multi-index with `|a| <= P` and `#a = M` for `d` coordinates,
/// ranked in graded-lex order, with per-index metadata used by the
/// evaluation kernels.
///
/// For each index `a` with last nonzero cell `L`, the *stem* is `a` with
/// column `L` zeroed and the *pattern* is the content of column `L`. Since
/// the stem has a strictly smaller total degree it precedes `a` in the order,
/// so products over the basis can be built with one multiplication per index.
#[derive(Debug, Clone)]
pub struct IndexSet {
    order: usize,
    cells: usize,
    dim: usize,
    degrees: Vec<u8>,
    totals: Vec<u8>,
    factorials: Vec<f64>,
    last_cells: Vec<u32>,
    patterns_of: Vec<u32>,
    stems: Vec<u32>,
    slots: Vec<u32>,
    patterns: PatternSet,
}

impl IndexSet {
    /// Exact size `C(P + dM, dM)` of the set for `(P, M, d)`.
    pub fn expected_len(order: usize, cells: usize, dim: usize) -> u128 {
        count_upto(order, cells * dim)
    }

    pub fn build(order: usize, cells: usize, dim: usize) -> Result<Self> {
        Self::build_with_cap(order, cells, dim, DEFAULT_INDEX_CAP)
    }

    pub fn build_with_cap(order: usize, cells: usize, dim: usize, cap: usize) -> Result<Self> {
        if cells == 0 || dim == 0 {
            return Err(Error::MultiIndex(format!(
                "index sets need M >= 1 and d >= 1 (got M={cells}, d={dim})"
            )));
        }
        if order > crate::hermite::MAX_DEGREE {
            return Err(Error::DegreeTooLarge {
                degree: order,
                cap: crate::hermite::MAX_DEGREE,
            });
        }
        let count = Self::expected_len(order, cells, dim);
        if count > cap as u128 {
            return Err(Error::IndexSetTooLarge {
                order,
                cells,
                dim,
                count,
                cap,
            });
        }
        let count = count as usize;
        let width = cells * dim;

        let mut degrees = Vec::with_capacity(count * width);
        let mut prefix = Vec::with_capacity(width);
        for k in 0..=order {
            push_compositions(k, width, &mut prefix, &mut degrees);
        }
        debug_assert_eq!(degrees.len(), count * width);

        let patterns = PatternSet::new(order, dim);
        let mut totals = Vec::with_capacity(count);
        let mut factorials = Vec::with_capacity(count);
        let mut last_cells = Vec::with_capacity(count);
        let mut patterns_of = Vec::with_capacity(count);
        let mut stems = Vec::with_capacity(count);
        let mut column = vec![0u8; dim];
        let mut stem = vec![0u8; width];

        for a in degrees.chunks_exact(width) {
            totals.push(a.iter().map(|&v| v as usize).sum::<usize>() as u8);
            factorials.push(a.iter().map(|&v| factorial(v as usize)).product());
            let last = (1..=cells)
                .rev()
                .find(|&j| (0..dim).any(|l| a[l * cells + j - 1] > 0))
                .unwrap_or(0);
            last_cells.push(last as u32);
            if last == 0 {
                patterns_of.push(0);
                stems.push(0);
                continue;
            }
            stem.copy_from_slice(a);
            for l in 0..dim {
                column[l] = a[l * cells + last - 1];
                stem[l * cells + last - 1] = 0;
            }
            patterns_of.push(patterns.rank(&column).expect("column total within order") as u32);
            stems.push(graded_lex_rank(&stem, order).expect("stem within order") as u32);
        }

        let npat = patterns.len();
        let slots = last_cells
            .iter()
            .zip(&patterns_of)
            .map(|(&l, &p)| l * npat as u32 + p)
            .collect();

        Ok(Self {
            order,
            cells,
            dim,
            degrees,
            totals,
            factorials,
            last_cells,
            patterns_of,
            stems,
            slots,
            patterns,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    /// Flattened degrees of the index with the given rank.
    pub fn degrees(&self, rank: usize) -> &[u8] {
        let w = self.cells * self.dim;
        &self.degrees[rank * w..(rank + 1) * w]
    }

    pub fn index(&self, rank: usize) -> MultiIndex {
        MultiIndex {
            dim: self.dim,
            cells: self.cells,
            degrees: self.degrees(rank).to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        (0..self.len()).map(move |r| self.index(r))
    }

    /// Inverse of [`IndexSet::index`]; `None` if the index does not belong to the set.
    pub fn rank(&self, a: &MultiIndex) -> Option<usize> {
        if a.dim != self.dim || a.cells != self.cells {
            return None;
        }
        self.rank_of_degrees(&a.degrees)
    }

    pub fn rank_of_degrees(&self, degrees: &[u8]) -> Option<usize> {
        if degrees.len() != self.cells * self.dim {
            return None;
        }
        graded_lex_rank(degrees, self.order)
    }

    pub fn total(&self, rank: usize) -> usize {
        self.totals[rank] as usize
    }

    /// `a!` for the index with the given rank.
    pub fn factorial(&self, rank: usize) -> f64 {
        self.factorials[rank]
    }

    pub fn factorials(&self) -> &[f64] {
        &self.factorials
    }

    /// Last nonzero cell (from 1) of each index; 0 for the zero index.
    pub fn last_cell(&self, rank: usize) -> usize {
        self.last_cells[rank] as usize
    }

    /// Pattern id of the last nonzero column.
    pub fn pattern_of(&self, rank: usize) -> usize {
        self.patterns_of[rank] as usize
    }

    /// Rank of the index with its last nonzero column zeroed.
    pub fn stem(&self, rank: usize) -> usize {
        self.stems[rank] as usize
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub(crate) fn last_cells_raw(&self) -> &[u32] {
        &self.last_cells
    }

    pub(crate) fn stems_raw(&self) -> &[u32] {
        &self.stems
    }

    /// `last_cell * patterns.len() + pattern_of`: position of each index's
    /// factor in a per-cell pattern table.
    pub(crate) fn slots_raw(&self) -> &[u32] {
        &self.slots
    }

    /// Rank of the unit index `e_{cell, coord}` (cell from 1), if `P >= 1`.
    pub fn unit_rank(&self, coord: usize, cell: usize) -> Option<usize> {
        self.rank(&MultiIndex::unit(self.dim, self.cells, coord, cell))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_quoted_for_one_dimension() {
        assert_eq!(IndexSet::build(3, 60, 1).unwrap().len(), 39_711);
        assert_eq!(IndexSet::build(6, 20, 1).unwrap().len(), 230_230);
        let trivial = IndexSet::build(0, 5, 3).unwrap();
        assert_eq!(trivial.len(), 1);
        assert_eq!(trivial.total(0), 0);
    }

    #[test]
    fn cap_error_names_count() {
        let err = IndexSet::build_with_cap(3, 60, 1, 1000).unwrap_err();
        assert_eq!(
            err,
            Error::IndexSetTooLarge {
                order: 3,
                cells: 60,
                dim: 1,
                count: 39_711,
                cap: 1000
            }
        );
        assert!(err.to_string().contains("39711"));
    }

    #[test]
    fn small_order_is_graded_lex() {
        let set = IndexSet::build(2, 2, 1).unwrap();
        let got: Vec<Vec<u8>> = set.iter().map(|a| a.degrees().to_vec()).collect();
        let want: Vec<Vec<u8>> = vec![
            vec![0, 0],
            vec![0, 1],
            vec![1, 0],
            vec![0, 2],
            vec![1, 1],
            vec![2, 0],
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn pad_examples() {
        let a = MultiIndex::from_cells(&[2, 1]).unwrap();
        assert_eq!(a.pad(4).unwrap().degrees(), &[2, 1, 0, 0]);
        assert_eq!(a.pad(4).unwrap().total(), 3);
        assert_eq!(MultiIndex::zero(1, 2).pad(5).unwrap(), MultiIndex::zero(1, 5));
        let b = MultiIndex::from_cells(&[0, 3]).unwrap();
        assert_eq!(b.pad(2).unwrap(), b);
        assert!(b.pad(1).is_err());
    }

    #[test]
    fn pad_keeps_coordinate_rows() {
        let a = MultiIndex::new(2, 2, vec![1, 2, 3, 0]).unwrap();
        assert_eq!(a.pad(3).unwrap().degrees(), &[1, 2, 0, 3, 0, 0]);
    }

    #[test]
    fn truncate_examples() {
        let a = MultiIndex::from_cells(&[2, 1, 3]).unwrap();
        assert_eq!(a.truncate_prefix(2).unwrap().degrees(), &[2, 1, 0]);
        assert_eq!(a.truncate_prefix(3).unwrap(), a);
        assert_eq!(
            MultiIndex::zero(2, 3).truncate_prefix(1).unwrap(),
            MultiIndex::zero(2, 3)
        );
        assert!(a.truncate_prefix(0).is_err());
        assert!(a.truncate_prefix(4).is_err());
        let b = MultiIndex::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(b.truncate_prefix(1).unwrap().degrees(), &[1, 0, 3, 0]);
    }

    #[test]
    fn stems_and_patterns() {
        let set = IndexSet::build(3, 3, 2).unwrap();
        for r in 0..set.len() {
            let a = set.index(r);
            let last = a.last_cell();
            assert_eq!(set.last_cell(r), last);
            if last == 0 {
                continue;
            }
            let stem = set.index(set.stem(r));
            assert!(set.stem(r) < r);
            for l in 0..2 {
                for j in 1..=3 {
                    let want = if j == last { 0 } else { a.degree(l, j) };
                    assert_eq!(stem.degree(l, j), want);
                }
                assert_eq!(set.patterns().pattern(set.pattern_of(r))[l], a.degree(l, last));
            }
        }
    }

    #[test]
    fn factorial_weight_matches_log_weight() {
        let set = IndexSet::build(12, 3, 1).unwrap();
        for r in 0..set.len() {
            let a = set.index(r);
            let direct = a.factorial();
            assert_eq!(set.factorial(r), direct);
            assert_eq!(a.log_factorial().exp().round(), direct);
        }
    }

    proptest! {
        #[test]
        fn rank_unrank_bijection(order in 0usize..5, cells in 1usize..6, dim in 1usize..4) {
            prop_assume!(IndexSet::expected_len(order, cells, dim) <= 100_000);
            let set = IndexSet::build(order, cells, dim).unwrap();
            prop_assert_eq!(set.len() as u128, IndexSet::expected_len(order, cells, dim));
            for r in 0..set.len() {
                prop_assert_eq!(set.rank(&set.index(r)), Some(r));
            }
        }

        #[test]
        fn out_of_set_indices_have_no_rank(cells in 1usize..5, extra in 1u8..3) {
            let set = IndexSet::build(2, cells, 1).unwrap();
            let mut degrees = vec![0u8; cells];
            degrees[0] = 2 + extra;
            prop_assert_eq!(set.rank_of_degrees(&degrees), None);
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(63, 60), 39_711);
        assert_eq!(binomial(26, 20), 230_230);
        assert_eq!(binomial(5, 7), 0);
        assert_eq!(binomial(0, 0), 1);
    }
}
