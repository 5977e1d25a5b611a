//! Brute-force oracles shared by the integration tests. Nothing here calls
//! the contraction or assignment code under test.
#![allow(dead_code, clippy::needless_range_loop)]

use hypermatch::{MatchingShape, SparseSymmetricTensor3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tensor with `count` draws at distinct-index triples, values U(0,1).
pub fn random_tensor(shape: MatchingShape, count: usize, rng: &mut impl Rng) -> SparseSymmetricTensor3 {
    let n = shape.n();
    let mut entries = Vec::new();
    while entries.len() < count {
        let t = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
        if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
            entries.push((t, rng.random::<f64>()));
        }
    }
    SparseSymmetricTensor3::from_entries(shape, entries).unwrap()
}

pub fn gaussian(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

/// Full third-order array, every stored value written to all six positions.
pub struct Dense3 {
    pub n: usize,
    pub v: Vec<f64>,
}

impl Dense3 {
    pub fn from_tensor(t: &SparseSymmetricTensor3) -> Self {
        let n = t.n();
        let mut v = vec![0.0; n * n * n];
        for o in t.orbits() {
            let (i, j, k) = (o.i, o.j, o.k);
            for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                v[(a * n + b) * n + c] += o.value;
            }
        }
        Self { n, v }
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.v[(i * self.n + j) * self.n + k]
    }

    pub fn s3(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    s += self.at(i, j, k) * x[i] * x[j] * x[k];
                }
            }
        }
        s
    }

    /// Entry of the lifted fourth-order tensor plus `alpha` times the
    /// symmetrized identity.
    pub fn f4(&self, alpha: f64, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        self.at(i, j, k)
            + self.at(i, j, l)
            + self.at(i, k, l)
            + self.at(j, k, l)
            + alpha * (d(i, j) * d(k, l) + d(i, k) * d(j, l) + d(i, l) * d(j, k)) / 3.0
    }

    pub fn f4_eval(&self, alpha: f64, x: &[f64], y: &[f64], z: &[f64], t: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        s += self.f4(alpha, i, j, k, l) * x[i] * y[j] * z[k] * t[l];
                    }
                }
            }
        }
        s
    }

    pub fn f4_vec(&self, alpha: f64, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|l| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            s += self.f4(alpha, i, j, k, l) * x[i] * y[j] * z[k];
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// Row-major `n x n` matrix `F4_alpha(x, y, ., .)`.
    pub fn f4_mat(&self, alpha: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += self.f4(alpha, i, j, k, l) * x[i] * y[j];
                    }
                }
                out[k * n + l] = s;
            }
        }
        out
    }
}

/// All injective row maps `n1 -> n2`.
pub fn row_maps(n1: usize, n2: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n1 {
        let mut next = Vec::new();
        for m in &out {
            for c in (0..n2).filter(|c| !m.contains(c)) {
                let mut m2: Vec<usize> = m.clone();
                m2.push(c);
                next.push(m2);
            }
        }
        out = next;
    }
    out
}

pub fn indicator(n2: usize, map: &[usize]) -> Vec<f64> {
    let mut x = vec![0.0; map.len() * n2];
    for (r, &c) in map.iter().enumerate() {
        x[r * n2 + c] = 1.0;
    }
    x
}

/// Row-order profit sum of a matching.
pub fn profit(rows: &[Vec<f64>], map: &[usize]) -> f64 {
    map.iter().enumerate().map(|(r, &c)| rows[r][c]).sum()
}

pub fn brute_lap(rows: &[Vec<f64>]) -> f64 {
    row_maps(rows.len(), rows[0].len())
        .iter()
        .map(|m| profit(rows, m))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `x^T A x` restricted to the support of a matching.
pub fn qap_value(a: &[Vec<f64>], n2: usize, map: &[usize]) -> f64 {
    let sup: Vec<usize> = map.iter().enumerate().map(|(r, &c)| r * n2 + c).collect();
    let mut s = 0.0;
    for &p in &sup {
        for &q in &sup {
            s += a[p][q];
        }
    }
    s
}

pub fn brute_qap(a: &[Vec<f64>], n1: usize, n2: usize) -> f64 {
    row_maps(n1, n2)
        .iter()
        .map(|m| qap_value(a, n2, m))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Symmetric nonnegative matrix with U(0,1) entries.
pub fn random_symmetric(n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.random::<f64>();
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    a
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

/// Largest entrywise deviation, relative to the larger of the two max norms.
pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    dev / (1.0 + scale)
}
