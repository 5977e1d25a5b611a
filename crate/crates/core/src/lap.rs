//! Rectangular linear assignment over the matching set.
//!
//! A matching assigns each of the `n1` template points to a distinct scene
//! point among `n2 >= n1`. [`solve_lap_max`] finds a globally optimal one for
//! a profit matrix with the shortest-augmenting-path Hungarian method, run
//! directly on the rectangular cost matrix `max(profit) - profit`.

use crate::error::{Error, Result};
use crate::tensor::{check_finite, check_len, MatchingShape};

/// A matching in vector form: exactly one selected column per row, at most
/// one selected row per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentVector {
    shape: MatchingShape,
    row_map: Vec<usize>,
}

impl AssignmentVector {
    /// `row_map[i]` is the 0-based column matched to row `i`.
    pub fn from_row_map(shape: MatchingShape, row_map: Vec<usize>) -> Result<Self> {
        if row_map.len() != shape.n1() {
            return Err(Error::InvalidAssignment(format!(
                "expected {} rows, got {}",
                shape.n1(),
                row_map.len()
            )));
        }
        let mut seen = vec![false; shape.n2()];
        for (row, &col) in row_map.iter().enumerate() {
            if col >= shape.n2() {
                return Err(Error::InvalidAssignment(format!(
                    "row {row} maps to column {col} outside 0..{}",
                    shape.n2()
                )));
            }
            if std::mem::replace(&mut seen[col], true) {
                return Err(Error::InvalidAssignment(format!("column {col} used twice")));
            }
        }
        Ok(Self { shape, row_map })
    }

    /// Parses a binary indicator of length `n1 * n2`.
    pub fn from_indicator(shape: MatchingShape, indicator: &[f64]) -> Result<Self> {
        check_len(indicator, shape.n())?;
        let mut row_map = Vec::with_capacity(shape.n1());
        for row in 0..shape.n1() {
            let block = &indicator[row * shape.n2()..(row + 1) * shape.n2()];
            let mut chosen = None;
            for (col, &v) in block.iter().enumerate() {
                if v == 1.0 {
                    if chosen.replace(col).is_some() {
                        return Err(Error::InvalidAssignment(format!("row {row} has several ones")));
                    }
                } else if v != 0.0 {
                    return Err(Error::InvalidAssignment(format!(
                        "entry ({row}, {col}) = {v} is not binary"
                    )));
                }
            }
            match chosen {
                Some(c) => row_map.push(c),
                None => return Err(Error::InvalidAssignment(format!("row {row} is empty"))),
            }
        }
        Self::from_row_map(shape, row_map)
    }

    pub fn identity(shape: MatchingShape) -> Self {
        Self {
            shape,
            row_map: (0..shape.n1()).collect(),
        }
    }

    pub fn shape(&self) -> MatchingShape {
        self.shape
    }

    pub fn row_map(&self) -> &[usize] {
        &self.row_map
    }

    /// Linear indices of the selected correspondences, in row order.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.row_map
            .iter()
            .enumerate()
            .map(|(r, &c)| self.shape.index(r, c))
    }

    pub fn indicator(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.shape.n()];
        for l in self.support() {
            x[l] = 1.0;
        }
        x
    }
}

/// `n1 x n2` matrix of profits stored row-major, so that it shares the
/// linearization of [`MatchingShape`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProfitMatrix {
    shape: MatchingShape,
    data: Vec<f64>,
}

impl ProfitMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n1 = rows.len();
        let n2 = rows.first().map_or(0, Vec::len);
        let shape = MatchingShape::new(n1, n2)?;
        if let Some(bad) = rows.iter().find(|r| r.len() != n2) {
            return Err(Error::DimensionMismatch {
                expected: n2,
                actual: bad.len(),
            });
        }
        Ok(Self {
            shape,
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> MatchingShape {
        self.shape
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[self.shape.index(row, col)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Total profit of a matching, summed in row order.
    pub fn objective(&self, a: &AssignmentVector) -> f64 {
        a.row_map()
            .iter()
            .enumerate()
            .map(|(r, &c)| self.get(r, c))
            .sum()
    }
}

/// Reshapes a length-`n` vector into the `n1 x n2` profit matrix whose entry
/// `(i, j)` is `v[i * n2 + j]`.
pub fn reshape_to_profit(v: &[f64], shape: MatchingShape) -> Result<ProfitMatrix> {
    check_len(v, shape.n())?;
    Ok(ProfitMatrix {
        shape,
        data: v.to_vec(),
    })
}

/// Globally optimal matching maximizing total profit.
///
/// Ties are resolved by the fixed column scan order of the augmenting-path
/// search, so identical inputs give identical outputs.
pub fn solve_lap_max(profit: &ProfitMatrix) -> Result<AssignmentVector> {
    check_finite(&profit.data)?;
    let (n, m) = (profit.shape.n1(), profit.shape.n2());
    let shift = profit.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cost = |i: usize, j: usize| shift - profit.data[i * m + j];

    // 1-based potentials; column 0 is the virtual root of each search.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != 0, "a free column always exists when n1 <= n2");
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_map = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] > 0 {
            row_map[p[j] - 1] = j - 1;
        }
    }
    let out = AssignmentVector::from_row_map(profit.shape, row_map)
        .expect("hungarian search yields a valid matching");
    Ok(out)
}
