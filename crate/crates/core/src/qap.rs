//! Monotone subroutines for the quadratic assignment problem
//! `max_{x in M} <x, A x>` with `A` symmetric and nonnegative.
//!
//! [`ipfp`] is the integer projected fixed point iteration (linearize, solve a
//! linear assignment, exact line search). [`mpm`] is max-pooling power
//! iteration and returns a continuous vector. [`psi_with_guard`] wraps either
//! one so the returned matching never scores below the incumbent.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::{reshape_to_profit, solve_lap_max, AssignmentVector};
use crate::tensor::{check_finite, check_len, dot, MatchingShape};

/// Dense symmetric nonnegative matrix over the `n1 * n2` correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct QapMatrix {
    shape: MatchingShape,
    a: DMatrix<f64>,
}

impl QapMatrix {
    pub fn new(shape: MatchingShape, a: DMatrix<f64>) -> Result<Self> {
        let n = shape.n();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: if a.nrows() != n { a.nrows() } else { a.ncols() },
            });
        }
        for l in 0..n {
            for k in 0..n {
                let v = a[(k, l)];
                if !v.is_finite() {
                    return Err(Error::InvalidMatrix(format!("entry ({k}, {l}) is not finite")));
                }
                if v < 0.0 {
                    return Err(Error::InvalidMatrix(format!("entry ({k}, {l}) = {v} is negative")));
                }
                if k < l {
                    let w = a[(l, k)];
                    if (v - w).abs() > 1e-12 * (v.abs() + w.abs()) {
                        return Err(Error::InvalidMatrix(format!(
                            "asymmetric at ({k}, {l}): {v} vs {w}"
                        )));
                    }
                }
            }
        }
        Ok(Self { shape, a })
    }

    pub fn shape(&self) -> MatchingShape {
        self.shape
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `<x, A x>` for a matching, summed over the support in row order.
    pub fn objective(&self, x: &AssignmentVector) -> f64 {
        let support: Vec<usize> = x.support().collect();
        let mut acc = 0.0;
        for &l in &support {
            let col = self.a.column(l);
            for &k in &support {
                acc += col[k];
            }
        }
        acc
    }

    /// `<x, A x>` for a dense vector.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        check_len(x, self.shape.n())?;
        Ok(dot(x, &self.mul_vec(x)))
    }

    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.shape.n();
        let mut out = vec![0.0; n];
        for (l, &xl) in x.iter().enumerate() {
            if xl != 0.0 {
                for (o, &v) in out.iter_mut().zip(self.a.column(l).iter()) {
                    *o += v * xl;
                }
            }
        }
        out
    }

    /// `A x` for a matching: the sum of the selected columns.
    fn mul_assignment(&self, x: &AssignmentVector) -> Vec<f64> {
        let mut out = vec![0.0; self.shape.n()];
        for l in x.support() {
            for (o, &v) in out.iter_mut().zip(self.a.column(l).iter()) {
                *o += v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QapMethod {
    Ipfp,
    Mpm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiConfig {
    pub ipfp_max_iter: usize,
    pub mpm_max_iter: usize,
    pub mpm_tol: f64,
}

impl Default for PsiConfig {
    fn default() -> Self {
        Self {
            ipfp_max_iter: 100,
            mpm_max_iter: 300,
            mpm_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QapResult {
    pub assignment: AssignmentVector,
    pub objective: f64,
    pub inner_iterations: usize,
    /// Continuous objective after each inner step (IPFP only).
    pub trace: Vec<f64>,
}

fn check_start(a: &QapMatrix, x0: &AssignmentVector) -> Result<()> {
    if x0.shape() != a.shape {
        return Err(Error::InvalidAssignment(format!(
            "start has shape {:?}, matrix has {:?}",
            x0.shape(),
            a.shape
        )));
    }
    Ok(())
}

/// Integer projected fixed point iteration from the matching `x0`.
///
/// The returned matching is the best, by discrete objective, among `x0`, every
/// linear-assignment vertex visited, and the discretized final iterate; ties
/// keep the earlier candidate.
pub fn ipfp(a: &QapMatrix, x0: &AssignmentVector, max_iter: usize) -> Result<QapResult> {
    check_start(a, x0)?;
    let shape = a.shape;
    let mut x = x0.indicator();
    let mut ax = a.mul_assignment(x0);
    let mut obj = dot(&x, &ax);
    let mut trace = vec![obj];
    let mut best = (x0.clone(), a.objective(x0));
    let mut iterations = 0;

    while iterations < max_iter {
        let b = solve_lap_max(&reshape_to_profit(&ax, shape)?)?;
        let b_obj = a.objective(&b);
        if b_obj > best.1 {
            best = (b.clone(), b_obj);
        }
        // g = <Ax, b - x>, curvature c = <b - x, A (b - x)>
        let xab: f64 = b.support().map(|l| ax[l]).sum();
        let g = xab - obj;
        if g <= 1e-12 * (1.0 + obj.abs()) {
            break;
        }
        let c = b_obj - 2.0 * xab + obj;
        let step = if c >= 0.0 { 1.0 } else { (-g / c).min(1.0) };
        let ab = a.mul_assignment(&b);
        let b_ind = b.indicator();
        for l in 0..x.len() {
            x[l] += step * (b_ind[l] - x[l]);
            ax[l] += step * (ab[l] - ax[l]);
        }
        obj = dot(&x, &ax);
        trace.push(obj);
        iterations += 1;
    }

    let last = solve_lap_max(&reshape_to_profit(&x, shape)?)?;
    let last_obj = a.objective(&last);
    if last_obj > best.1 {
        best = (last, last_obj);
    }
    Ok(QapResult {
        assignment: best.0,
        objective: best.1,
        inner_iterations: iterations,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpmOutcome {
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when an update annihilated the iterate; `vector` is then the last
    /// nonzero iterate.
    pub degenerate: bool,
}

/// Max-pooling power iteration.
///
/// Each step replaces `x[(i,a)]` by `x[(i,a)] A[(i,a),(i,a)] + sum_{j != i}
/// max_b A[(i,a),(j,b)] x[(j,b)]` and rescales to unit 2-norm.
pub fn mpm(a: &QapMatrix, x0: &[f64], max_iter: usize, tol: f64) -> Result<MpmOutcome> {
    let shape = a.shape;
    let (n1, n2) = (shape.n1(), shape.n2());
    check_len(x0, shape.n())?;
    check_finite(x0)?;
    if x0.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidConfig("mpm start must be nonnegative".into()));
    }
    if x0.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVector);
    }

    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        for (ia, out) in next.iter_mut().enumerate() {
            // column ia == row ia by symmetry; column access is contiguous
            let col = a.a.column(ia);
            let i = ia / n2;
            let mut acc = x[ia] * col[ia];
            for j in (0..n1).filter(|&j| j != i) {
                let base = j * n2;
                let m = (0..n2)
                    .map(|b| col[base + b] * x[base + b])
                    .fold(0.0f64, f64::max);
                acc += m;
            }
            *out = acc;
        }
        let norm = dot(&next, &next).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Ok(MpmOutcome {
                vector: x,
                iterations,
                converged: false,
                degenerate: true,
            });
        }
        next.iter_mut().for_each(|v| *v /= norm);
        let diff = next
            .iter()
            .zip(&x)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut x, &mut next);
        iterations += 1;
        if diff <= tol {
            converged = true;
            break;
        }
    }
    Ok(MpmOutcome {
        vector: x,
        iterations,
        converged,
        degenerate: false,
    })
}

/// Runs `method` from `x0` and returns its matching only when it scores at
/// least as well as `x0`; otherwise returns `x0`.
pub fn psi_with_guard(
    a: &QapMatrix,
    x0: &AssignmentVector,
    method: QapMethod,
    cfg: &PsiConfig,
) -> Result<QapResult> {
    check_start(a, x0)?;
    let incumbent = a.objective(x0);
    let candidate = match method {
        QapMethod::Ipfp => ipfp(a, x0, cfg.ipfp_max_iter)?,
        QapMethod::Mpm => {
            let out = mpm(a, &x0.indicator(), cfg.mpm_max_iter, cfg.mpm_tol)?;
            let z = solve_lap_max(&reshape_to_profit(&out.vector, a.shape)?)?;
            let objective = a.objective(&z);
            QapResult {
                assignment: z,
                objective,
                inner_iterations: out.iterations,
                trace: Vec::new(),
            }
        }
    };
    if candidate.objective >= incumbent {
        Ok(candidate)
    } else {
        Ok(QapResult {
            assignment: x0.clone(),
            objective: incumbent,
            inner_iterations: candidate.inner_iterations,
            trace: candidate.trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape22() -> MatchingShape {
        MatchingShape::new(2, 2).unwrap()
    }

    fn swap() -> AssignmentVector {
        AssignmentVector::from_row_map(shape22(), vec![1, 0]).unwrap()
    }

    /// Linear order (0,0)=0, (0,1)=1, (1,0)=2, (1,1)=3. The identity pair
    /// (0,3) is coupled more strongly than the swap pair (1,2), and the swap
    /// entries see the identity entries through the cross terms.
    fn coupled() -> QapMatrix {
        let mut a = DMatrix::zeros(4, 4);
        let mut set = |k: usize, l: usize, v: f64| {
            a[(k, l)] = v;
            a[(l, k)] = v;
        };
        set(0, 3, 3.0);
        set(1, 2, 1.0);
        for (k, l) in [(0, 1), (0, 2), (3, 1), (3, 2)] {
            set(k, l, 2.0);
        }
        QapMatrix::new(shape22(), a).unwrap()
    }

    #[test]
    fn matrix_validation() {
        let s = shape22();
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 1)] = 1.0;
        assert!(QapMatrix::new(s, a.clone()).is_err());
        a[(1, 0)] = 1.0;
        assert!(QapMatrix::new(s, a.clone()).is_ok());
        a[(2, 2)] = -1.0;
        assert!(QapMatrix::new(s, a).is_err());
        assert!(QapMatrix::new(s, DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn ipfp_moves_to_identity() {
        let a = coupled();
        let r = ipfp(&a, &swap(), 50).unwrap();
        assert_eq!(r.assignment.row_map(), &[0, 1]);
        assert_eq!(r.objective, 6.0);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs())));
    }

    #[test]
    fn ipfp_diagonal_matrix_is_a_fixed_point() {
        // with a diagonal A the linearization at a vertex only rewards that
        // vertex, so the iteration cannot leave it
        let a = QapMatrix::new(shape22(), DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 1.0, 3.0]))).unwrap();
        let r = ipfp(&a, &swap(), 50).unwrap();
        assert_eq!(r.assignment, swap());
        assert_eq!(r.objective, 2.0);
    }

    #[test]
    fn ipfp_zero_and_identity_matrices_keep_start() {
        let zero = QapMatrix::new(shape22(), DMatrix::zeros(4, 4)).unwrap();
        let r = ipfp(&zero, &swap(), 10).unwrap();
        assert_eq!(r.assignment, swap());
        assert_eq!(r.objective, 0.0);

        let eye = QapMatrix::new(shape22(), DMatrix::identity(4, 4)).unwrap();
        let r = ipfp(&eye, &swap(), 10).unwrap();
        assert_eq!(r.assignment, swap());
        assert_eq!(r.objective, 2.0);
    }

    #[test]
    fn mpm_zero_matrix_is_degenerate() {
        let zero = QapMatrix::new(shape22(), DMatrix::zeros(4, 4)).unwrap();
        let x0 = vec![0.5; 4];
        let out = mpm(&zero, &x0, 10, 1e-10).unwrap();
        assert!(out.degenerate);
        assert!(!out.converged);
        assert_eq!(out.vector, x0);
    }

    #[test]
    fn mpm_one_step_favors_identity() {
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 3)] = 2.0;
        m[(3, 0)] = 2.0;
        let a = QapMatrix::new(shape22(), m).unwrap();
        let out = mpm(&a, &[0.5; 4], 1, 1e-10).unwrap();
        // hand update: x'(0,0) = x'(1,1) = 2 * 0.5, swap entries get 0
        let h = 1.0 / 2f64.sqrt();
        for (got, want) in out.vector.iter().zip([h, 0.0, 0.0, h]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((dot(&out.vector, &out.vector) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mpm_rejects_bad_start() {
        let a = coupled();
        assert!(matches!(mpm(&a, &[0.0; 4], 5, 1e-10), Err(Error::ZeroVector)));
        assert!(mpm(&a, &[1.0, -1.0, 0.0, 0.0], 5, 1e-10).is_err());
        assert!(mpm(&a, &[1.0; 3], 5, 1e-10).is_err());
    }

    #[test]
    fn guard_accepts_improvement_and_keeps_incumbent_otherwise() {
        let a = coupled();
        let cfg = PsiConfig::default();
        let r = psi_with_guard(&a, &swap(), QapMethod::Ipfp, &cfg).unwrap();
        assert_eq!(r.assignment.row_map(), &[0, 1]);
        assert!(r.objective >= 2.0);

        let zero = QapMatrix::new(shape22(), DMatrix::zeros(4, 4)).unwrap();
        for m in [QapMethod::Ipfp, QapMethod::Mpm] {
            let r = psi_with_guard(&zero, &swap(), m, &cfg).unwrap();
            assert_eq!(r.assignment, swap());
            assert_eq!(r.objective, 0.0);
        }
    }
}
