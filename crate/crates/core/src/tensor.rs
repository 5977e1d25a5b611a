//! Symmetric third-order affinity tensors and their lifted fourth-order forms.
//!
//! A [`SparseSymmetricTensor3`] stores one strictly increasing index triple per
//! permutation orbit, so every stored value stands for six equal entries of the
//! full `n x n x n` tensor. Entries with a repeated index are always zero.
//!
//! The fourth-order tensor obtained by lifting,
//!
//! ```text
//! F4[i,j,k,l] = F3[i,j,k] + F3[i,j,l] + F3[i,k,l] + F3[j,k,l],
//! ```
//!
//! together with the convexification term `alpha * G4` (where
//! `G4(x,x,x,x) = |x|^4`) is never materialized in the solver path.
//! [`LiftedOperator`] evaluates every contraction of it implicitly from the
//! third-order orbits plus inner products and entry sums.
//!
//! All contractions accumulate sequentially in stored-orbit order, so repeated
//! runs on the same inputs are bit-identical.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest `n` for which an `n x n` matrix is materialized.
pub const MATERIALIZE_LIMIT: usize = 5000;

/// Largest `n` accepted by [`SparseSymmetricTensor3::f4_norm_exact`].
pub const BRUTE_FORCE_LIMIT: usize = 40;

/// Sizes of the two point sets and the row-major linearization of their
/// correspondence pairs. Indices are 0-based here: pair `(row, col)` maps to
/// `row * n2 + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatchingShape {
    n1: usize,
    n2: usize,
}

impl MatchingShape {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 < n1 {
            return Err(Error::InvalidShape { n1, n2 });
        }
        n1.checked_mul(n2).ok_or(Error::InvalidShape { n1, n2 })?;
        Ok(Self { n1, n2 })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Number of candidate correspondences, `n1 * n2`.
    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n1 && col < self.n2);
        row * self.n2 + col
    }

    #[inline]
    pub fn pair(&self, linear: usize) -> (usize, usize) {
        debug_assert!(linear < self.n());
        (linear / self.n2, linear % self.n2)
    }
}

/// One canonical orbit representative `i < j < k` with its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orbit {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricTensor3 {
    shape: MatchingShape,
    orbits: Vec<Orbit>,
}

pub(crate) fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sum(a: &[f64]) -> f64 {
    a.iter().sum()
}

impl SparseSymmetricTensor3 {
    pub fn empty(shape: MatchingShape) -> Self {
        Self {
            shape,
            orbits: Vec::new(),
        }
    }

    /// Builds a tensor from 0-based index triples in any order.
    ///
    /// Each triple is sorted into its canonical representative; triples that
    /// land on the same representative are summed. Repeated indices, indices
    /// out of range, negative and non-finite values are rejected.
    pub fn from_entries<I>(shape: MatchingShape, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = ([usize; 3], f64)>,
    {
        let n = shape.n();
        let mut raw: Vec<([usize; 3], f64)> = Vec::new();
        for (idx, value) in entries {
            if !value.is_finite() {
                return Err(Error::InvalidEntry {
                    indices: idx,
                    reason: "value is not finite",
                });
            }
            if value < 0.0 {
                return Err(Error::InvalidEntry {
                    indices: idx,
                    reason: "value is negative",
                });
            }
            if idx.iter().any(|&i| i >= n) {
                return Err(Error::InvalidEntry {
                    indices: idx,
                    reason: "index out of range",
                });
            }
            let mut s = idx;
            s.sort_unstable();
            if s[0] == s[1] || s[1] == s[2] {
                return Err(Error::InvalidEntry {
                    indices: idx,
                    reason: "repeated index",
                });
            }
            raw.push((s, value));
        }
        // Stable sort keeps ingest order among duplicates, so their sum is
        // accumulated in a fixed order.
        raw.sort_by_key(|&(s, _)| s);
        let mut orbits: Vec<Orbit> = Vec::with_capacity(raw.len());
        for (s, value) in raw {
            match orbits.last_mut() {
                Some(last) if [last.i, last.j, last.k] == s => last.value += value,
                _ => orbits.push(Orbit {
                    i: s[0],
                    j: s[1],
                    k: s[2],
                    value,
                }),
            }
        }
        Ok(Self { shape, orbits })
    }

    pub fn shape(&self) -> MatchingShape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    pub fn orbits(&self) -> &[Orbit] {
        &self.orbits
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    /// Score `S3(x) = sum_{ijk} F3[i,j,k] x_i x_j x_k`.
    pub fn eval_s3(&self, x: &[f64]) -> Result<f64> {
        check_len(x, self.n())?;
        check_finite(x)?;
        let acc: f64 = self
            .orbits
            .iter()
            .map(|o| o.value * x[o.i] * x[o.j] * x[o.k])
            .sum();
        Ok(6.0 * acc)
    }

    /// Trilinear form `F3(x, y, z)`.
    pub fn eval_f3(&self, x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
        let n = self.n();
        check_len(x, n)?;
        check_len(y, n)?;
        check_len(z, n)?;
        Ok(self.f3_unchecked(x, y, z))
    }

    fn f3_unchecked(&self, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
        self.orbits
            .iter()
            .map(|&Orbit { i, j, k, value }| {
                value
                    * (x[i] * (y[j] * z[k] + y[k] * z[j])
                        + x[j] * (y[i] * z[k] + y[k] * z[i])
                        + x[k] * (y[i] * z[j] + y[j] * z[i]))
            })
            .sum()
    }

    /// The vector `F3(x, y, .)`.
    pub fn contract_vec(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        check_len(x, n)?;
        check_len(y, n)?;
        let mut out = vec![0.0; n];
        self.contract_vec_into(x, y, 1.0, &mut out);
        Ok(out)
    }

    /// `out += scale * F3(x, y, .)`
    fn contract_vec_into(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        for &Orbit { i, j, k, value } in &self.orbits {
            let v = scale * value;
            out[i] += v * (x[j] * y[k] + x[k] * y[j]);
            out[j] += v * (x[i] * y[k] + x[k] * y[i]);
            out[k] += v * (x[i] * y[j] + x[j] * y[i]);
        }
    }

    /// The symmetric matrix `F3(x, ., .)`.
    pub fn contract_mat(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.n();
        check_len(x, n)?;
        check_materialize(n)?;
        let mut m = DMatrix::zeros(n, n);
        self.contract_mat_into(x, 1.0, &mut m);
        Ok(m)
    }

    /// `m += scale * F3(x, ., .)`, writing both triangles with identical values.
    fn contract_mat_into(&self, x: &[f64], scale: f64, m: &mut DMatrix<f64>) {
        if scale == 0.0 {
            return;
        }
        for &Orbit { i, j, k, value } in &self.orbits {
            let v = scale * value;
            let (a, b, c) = (v * x[i], v * x[j], v * x[k]);
            // (j,k) pair gets x_i, (i,k) gets x_j, (i,j) gets x_k
            m[(j, k)] += a;
            m[(k, j)] += a;
            m[(i, k)] += b;
            m[(k, i)] += b;
            m[(i, j)] += c;
            m[(j, i)] += c;
        }
    }

    /// Frobenius norm of the full symmetric tensor.
    pub fn norm(&self) -> f64 {
        let sq: f64 = self.orbits.iter().map(|o| o.value * o.value).sum();
        (6.0 * sq).sqrt()
    }

    /// Convexification weight `12 * sqrt(n) * |F3|`, an upper bound on
    /// `3 * |F4|` by the triangle inequality over the four lifted copies.
    pub fn alpha_bound(&self) -> f64 {
        12.0 * (self.n() as f64).sqrt() * self.norm()
    }

    /// Dense `n^3` copy of the full tensor.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let n = self.n();
        if n > BRUTE_FORCE_LIMIT {
            return Err(Error::ThresholdExceeded {
                n,
                limit: BRUTE_FORCE_LIMIT,
            });
        }
        let mut d = vec![0.0; n * n * n];
        for &Orbit { i, j, k, value } in &self.orbits {
            for [a, b, c] in [[i, j, k], [i, k, j], [j, i, k], [j, k, i], [k, i, j], [k, j, i]] {
                d[(a * n + b) * n + c] = value;
            }
        }
        Ok(d)
    }

    /// Frobenius norm of the materialized lifted tensor `F4`. Only for small
    /// `n` (at most [`BRUTE_FORCE_LIMIT`]); used to pin the exact
    /// convexification threshold in tests.
    pub fn f4_norm_exact(&self) -> Result<f64> {
        let n = self.n();
        let d = self.to_dense()?;
        let f = |a: usize, b: usize, c: usize| d[(a * n + b) * n + c];
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let fijk = f(i, j, k);
                    for l in 0..n {
                        let e = fijk + f(i, j, l) + f(i, k, l) + f(j, k, l);
                        acc += e * e;
                    }
                }
            }
        }
        Ok(acc.sqrt())
    }
}

fn check_materialize(n: usize) -> Result<()> {
    if n > MATERIALIZE_LIMIT {
        return Err(Error::ThresholdExceeded {
            n,
            limit: MATERIALIZE_LIMIT,
        });
    }
    Ok(())
}

/// Multilinear form of `G4`, the symmetric tensor with `G4(x,x,x,x) = |x|^4`.
pub fn eval_g4(x: &[f64], y: &[f64], z: &[f64], t: &[f64]) -> Result<f64> {
    let n = x.len();
    check_len(y, n)?;
    check_len(z, n)?;
    check_len(t, n)?;
    Ok(g4(x, y, z, t))
}

fn g4(x: &[f64], y: &[f64], z: &[f64], t: &[f64]) -> f64 {
    (dot(x, y) * dot(z, t) + dot(x, z) * dot(y, t) + dot(x, t) * dot(y, z)) / 3.0
}

/// The lifted, convexified fourth-order form `F4 + alpha * G4`, evaluated
/// implicitly from a third-order tensor.
#[derive(Debug, Clone, Copy)]
pub struct LiftedOperator<'a> {
    tensor: &'a SparseSymmetricTensor3,
    alpha: f64,
}

impl<'a> LiftedOperator<'a> {
    pub fn new(tensor: &'a SparseSymmetricTensor3, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite and nonnegative, got {alpha}"
            )));
        }
        Ok(Self { tensor, alpha })
    }

    pub fn tensor(&self) -> &'a SparseSymmetricTensor3 {
        self.tensor
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn check(&self, vs: &[&[f64]]) -> Result<()> {
        let n = self.tensor.n();
        vs.iter().try_for_each(|v| check_len(v, n))
    }

    /// `F4_alpha(x, y, z, t)`; symmetric in its four arguments.
    pub fn eval(&self, x: &[f64], y: &[f64], z: &[f64], t: &[f64]) -> Result<f64> {
        self.check(&[x, y, z, t])?;
        let f = self.tensor;
        let lifted = f.f3_unchecked(x, y, z) * sum(t)
            + f.f3_unchecked(x, y, t) * sum(z)
            + f.f3_unchecked(x, z, t) * sum(y)
            + f.f3_unchecked(y, z, t) * sum(x);
        Ok(lifted + self.alpha * g4(x, y, z, t))
    }

    /// `S4_alpha(x) = 4 S3(x) sum(x) + alpha |x|^4`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let s3 = self.tensor.eval_s3(x)?;
        let sq = dot(x, x);
        Ok(4.0 * s3 * sum(x) + self.alpha * sq * sq)
    }

    /// The vector `F4_alpha(x, y, z, .)`.
    pub fn contract_vec(&self, x: &[f64], y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check(&[x, y, z])?;
        let f = self.tensor;
        let base = f.f3_unchecked(x, y, z);
        let mut out = vec![base; f.n()];
        f.contract_vec_into(x, y, sum(z), &mut out);
        f.contract_vec_into(x, z, sum(y), &mut out);
        f.contract_vec_into(y, z, sum(x), &mut out);
        if self.alpha != 0.0 {
            let s = self.alpha / 3.0;
            let (xy, xz, yz) = (dot(x, y), dot(x, z), dot(y, z));
            for (l, o) in out.iter_mut().enumerate() {
                *o += s * (xy * z[l] + xz * y[l] + yz * x[l]);
            }
        }
        Ok(out)
    }

    /// The symmetric matrix `F4_alpha(x, y, ., .)`.
    pub fn contract_mat(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(&[x, y])?;
        let n = self.tensor.n();
        check_materialize(n)?;
        let f = self.tensor;
        let c = f.contract_vec(x, y)?;
        let mut m = DMatrix::from_fn(n, n, |k, l| c[k] + c[l]);
        f.contract_mat_into(x, sum(y), &mut m);
        f.contract_mat_into(y, sum(x), &mut m);
        if self.alpha != 0.0 {
            let s = self.alpha / 3.0;
            let xy = dot(x, y);
            for l in 0..n {
                for k in 0..n {
                    m[(k, l)] += s * (x[k] * y[l] + y[k] * x[l]);
                }
                m[(l, l)] += s * xy;
            }
        }
        Ok(m)
    }
}
