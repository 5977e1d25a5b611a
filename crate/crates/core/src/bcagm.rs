//! Tensor block coordinate ascent over the matching set.
//!
//! Both solvers maximize the lifted multilinear form `F4_alpha` over copies of
//! the assignment variable and fall back to the score `S4_alpha` whenever the
//! block updates stall:
//!
//! * [`bcagm_solve`] keeps four blocks `(x, y, z, t)`; each block update is a
//!   linear assignment problem solved exactly.
//! * [`bcagm_psi_solve`] keeps two blocks and evaluates `F4_alpha(x, x, y, y)`;
//!   each update is a quadratic assignment problem handed to a monotone
//!   subroutine (IPFP or max-pooling).
//!
//! On a stall the best block by `S4_alpha` becomes the next merge point
//! `u^m`. Because `S4_alpha = 4 n1 S3 + alpha n1^2` on matchings, the third
//! order scores of the merge points increase strictly until termination.
//! With the default schedule the ascent runs with `alpha = 0` first and
//! switches to the convexifying weight only once that phase stops improving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::{reshape_to_profit, solve_lap_max, AssignmentVector};
use crate::qap::{psi_with_guard, PsiConfig, QapMatrix, QapMethod};
use crate::tensor::{dot, LiftedOperator, SparseSymmetricTensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Bcagm,
    BcagmPsi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaSchedule {
    ZeroThenBound,
    BoundAlways,
    ZeroOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub variant: Variant,
    /// QAP subroutine, used by [`Variant::BcagmPsi`] only.
    pub subroutine: QapMethod,
    pub alpha_schedule: AlphaSchedule,
    pub equality_tol_rel: f64,
    pub max_outer_iters: usize,
    /// Replaces the computed convexification weight when set.
    pub alpha_override: Option<f64>,
    /// Start the four-block solver from raw all-ones blocks instead of their
    /// discretization. Ignored by the two-block solver.
    pub raw_ones_start: bool,
    pub psi: PsiConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Bcagm,
            subroutine: QapMethod::Ipfp,
            alpha_schedule: AlphaSchedule::ZeroThenBound,
            equality_tol_rel: 1e-12,
            max_outer_iters: 100,
            alpha_override: None,
            raw_ones_start: false,
            psi: PsiConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn bcagm() -> Self {
        Self::default()
    }

    pub fn bcagm_psi(subroutine: QapMethod) -> Self {
        Self {
            variant: Variant::BcagmPsi,
            subroutine,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.equality_tol_rel > 0.0 && self.equality_tol_rel.is_finite()) {
            return Err(Error::InvalidConfig("equality_tol_rel must be positive".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidConfig("max_outer_iters must be at least 1".into()));
        }
        if let Some(a) = self.alpha_override {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!("alpha override {a} is invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// The outer iteration cap was hit. Finite termination is guaranteed, so
    /// this marks an anomaly rather than a normal exit.
    MaxIterations,
    /// Power iteration produced a zero iterate.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPhase {
    /// Index into `stage_scores` of the first value recorded under `alpha`.
    pub stage_index: usize,
    /// Number of merge points recorded before the phase began.
    pub merge_index: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    /// Multilinear value after each block update and after each merge.
    pub stage_scores: Vec<f64>,
    /// `S3(u^m)` for every merge point, in order.
    pub u_scores3: Vec<f64>,
    pub alpha_phases: Vec<AlphaPhase>,
    pub terminated: Termination,
}

impl SolverTrace {
    /// Checks ascent: stage scores non-decreasing within each alpha phase (up
    /// to `tol` relative) and merge scores strictly increasing.
    pub fn audit(&self, tol: f64) -> Result<()> {
        let mut bounds: Vec<usize> = self.alpha_phases.iter().map(|p| p.stage_index).collect();
        bounds.push(self.stage_scores.len());
        for w in bounds.windows(2) {
            let phase = &self.stage_scores[w[0]..w[1]];
            for (i, p) in phase.windows(2).enumerate() {
                if p[1] < p[0] - tol * (1.0 + p[0].abs()) {
                    return Err(Error::TraceViolation(format!(
                        "stage score {} dropped from {} to {}",
                        w[0] + i + 1,
                        p[0],
                        p[1]
                    )));
                }
            }
        }
        for (i, p) in self.u_scores3.windows(2).enumerate() {
            if p[1] <= p[0] {
                return Err(Error::TraceViolation(format!(
                    "merge score {} did not increase: {} -> {}",
                    i + 1,
                    p[0],
                    p[1]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: AssignmentVector,
    pub score3: f64,
    pub score4_alpha: f64,
    pub trace: SolverTrace,
    pub outer_iterations: usize,
}

/// Runs the solver selected by `cfg.variant`.
pub fn solve(
    tensor: &SparseSymmetricTensor3,
    cfg: &SolverConfig,
    start: Option<&AssignmentVector>,
) -> Result<Solution> {
    match cfg.variant {
        Variant::Bcagm => bcagm_solve(tensor, cfg, start),
        Variant::BcagmPsi => bcagm_psi_solve(tensor, cfg, start),
    }
}

fn alphas(tensor: &SparseSymmetricTensor3, cfg: &SolverConfig) -> Vec<f64> {
    let bound = cfg.alpha_override.unwrap_or_else(|| tensor.alpha_bound());
    match cfg.alpha_schedule {
        AlphaSchedule::ZeroThenBound if bound > 0.0 => vec![0.0, bound],
        AlphaSchedule::ZeroThenBound | AlphaSchedule::ZeroOnly => vec![0.0],
        AlphaSchedule::BoundAlways => vec![bound],
    }
}

/// Discretizes `F4_alpha(1, 1, 1, .)`, i.e. one block update applied to
/// all-ones blocks.
pub fn default_start(tensor: &SparseSymmetricTensor3, alpha: f64) -> Result<AssignmentVector> {
    let ones = vec![1.0; tensor.n()];
    let op = LiftedOperator::new(tensor, alpha)?;
    let v = op.contract_vec(&ones, &ones, &ones)?;
    solve_lap_max(&reshape_to_profit(&v, tensor.shape())?)
}

fn check_start(tensor: &SparseSymmetricTensor3, start: Option<&AssignmentVector>) -> Result<()> {
    match start {
        Some(s) if s.shape() != tensor.shape() => Err(Error::InvalidAssignment(format!(
            "start has shape {:?}, tensor has {:?}",
            s.shape(),
            tensor.shape()
        ))),
        _ => Ok(()),
    }
}

/// One sweep over all blocks: the updated blocks and the value after each
/// single-block update.
type Sweep<'s> = dyn FnMut(&LiftedOperator, &[Vec<f64>]) -> Result<(Vec<AssignmentVector>, Vec<f64>)> + 's;
type Value<'s> = dyn Fn(&LiftedOperator, &[Vec<f64>]) -> Result<f64> + 's;

/// Shared outer loop: stall detection, merge, alpha phases.
fn ascend(
    tensor: &SparseSymmetricTensor3,
    cfg: &SolverConfig,
    mut blocks: Vec<Vec<f64>>,
    sweep: &mut Sweep<'_>,
    value: &Value<'_>,
) -> Result<Solution> {
    let nb = blocks.len();
    let tol = cfg.equality_tol_rel;
    let ahead = |a: f64, b: f64| a > b + tol * (1.0 + b.abs());

    let mut trace = SolverTrace {
        stage_scores: Vec::new(),
        u_scores3: Vec::new(),
        alpha_phases: Vec::new(),
        terminated: Termination::Converged,
    };
    let mut best: Option<AssignmentVector> = None;
    let mut outer = 0usize;
    let mut alpha = 0.0;

    'phases: for (phase, a) in alphas(tensor, cfg).into_iter().enumerate() {
        alpha = a;
        let op = LiftedOperator::new(tensor, a)?;
        if phase > 0 {
            let u = best.as_ref().expect("a finished phase leaves a merge point");
            blocks = vec![u.indicator(); nb];
        }
        trace.alpha_phases.push(AlphaPhase {
            stage_index: trace.stage_scores.len(),
            merge_index: trace.u_scores3.len(),
            alpha: a,
        });
        let mut current = value(&op, &blocks)?;
        trace.stage_scores.push(current);

        loop {
            if outer >= cfg.max_outer_iters {
                trace.terminated = Termination::MaxIterations;
                break 'phases;
            }
            outer += 1;
            let (tilde, stages) = sweep(&op, &blocks)?;
            trace.stage_scores.extend(stages);
            let dense: Vec<Vec<f64>> = tilde.iter().map(AssignmentVector::indicator).collect();
            let next = value(&op, &dense)?;
            if ahead(next, current) {
                blocks = dense;
                current = next;
                continue;
            }

            // stall: merge onto the best block, first block wins ties
            let mut pick = 0;
            let mut pick_score = op.score(&dense[0])?;
            for (i, d) in dense.iter().enumerate().skip(1) {
                let s = op.score(d)?;
                if s > pick_score {
                    pick = i;
                    pick_score = s;
                }
            }
            let u = tilde[pick].clone();
            if ahead(pick_score, next) {
                trace.u_scores3.push(tensor.eval_s3(&dense[pick])?);
                trace.stage_scores.push(pick_score);
                blocks = vec![dense[pick].clone(); nb];
                current = pick_score;
                best = Some(u);
                continue;
            }

            // no further ascent in this phase
            let improves = match &best {
                None => true,
                Some(b) => ahead(pick_score, op.score(&b.indicator())?),
            };
            if improves {
                trace.u_scores3.push(tensor.eval_s3(&dense[pick])?);
                best = Some(u);
            }
            break;
        }
    }

    let assignment = match best {
        Some(b) => b,
        // only reachable when the cap hit before any merge
        None => {
            let op = LiftedOperator::new(tensor, alpha)?;
            let (tilde, _) = sweep(&op, &blocks)?;
            tilde.into_iter().next().expect("at least one block")
        }
    };
    let x = assignment.indicator();
    let score3 = tensor.eval_s3(&x)?;
    let score4_alpha = LiftedOperator::new(tensor, alpha)?.score(&x)?;
    Ok(Solution {
        assignment,
        score3,
        score4_alpha,
        trace,
        outer_iterations: outer,
    })
}

/// Four-block ascent where every block update is an exact linear assignment.
pub fn bcagm_solve(
    tensor: &SparseSymmetricTensor3,
    cfg: &SolverConfig,
    start: Option<&AssignmentVector>,
) -> Result<Solution> {
    cfg.validate()?;
    check_start(tensor, start)?;
    let shape = tensor.shape();
    let first_alpha = alphas(tensor, cfg)[0];

    let mut sweep = |op: &LiftedOperator, blocks: &[Vec<f64>]| {
        let mut cur: Vec<Vec<f64>> = blocks.to_vec();
        let mut out = Vec::with_capacity(4);
        let mut stages = Vec::with_capacity(4);
        for b in 0..4 {
            let others: Vec<&[f64]> = (0..4).filter(|&o| o != b).map(|o| cur[o].as_slice()).collect();
            let v = op.contract_vec(others[0], others[1], others[2])?;
            let a = solve_lap_max(&reshape_to_profit(&v, shape)?)?;
            let ind = a.indicator();
            stages.push(dot(&ind, &v));
            cur[b] = ind;
            out.push(a);
        }
        Ok((out, stages))
    };
    let value = |op: &LiftedOperator, b: &[Vec<f64>]| op.eval(&b[0], &b[1], &b[2], &b[3]);

    let blocks = match start {
        Some(s) => vec![s.indicator(); 4],
        None if cfg.raw_ones_start => {
            // one unrecorded sweep from all-ones lands every block in M
            let ones = vec![vec![1.0; tensor.n()]; 4];
            let op = LiftedOperator::new(tensor, first_alpha)?;
            let (tilde, _) = sweep(&op, &ones)?;
            tilde.iter().map(AssignmentVector::indicator).collect()
        }
        None => vec![default_start(tensor, first_alpha)?.indicator(); 4],
    };
    ascend(tensor, cfg, blocks, &mut sweep, &value)
}

/// Two-block ascent on `F4_alpha(x, x, y, y)` where every block update is a
/// quadratic assignment handled by the guarded subroutine `cfg.subroutine`.
pub fn bcagm_psi_solve(
    tensor: &SparseSymmetricTensor3,
    cfg: &SolverConfig,
    start: Option<&AssignmentVector>,
) -> Result<Solution> {
    cfg.validate()?;
    check_start(tensor, start)?;
    let shape = tensor.shape();
    let first_alpha = alphas(tensor, cfg)[0];

    let mut sweep = |op: &LiftedOperator, blocks: &[Vec<f64>]| {
        let x = AssignmentVector::from_indicator(shape, &blocks[0])?;
        let y = AssignmentVector::from_indicator(shape, &blocks[1])?;
        let a = QapMatrix::new(shape, op.contract_mat(&blocks[1], &blocks[1])?)?;
        let xr = psi_with_guard(&a, &x, cfg.subroutine, &cfg.psi)?;
        let xt = xr.assignment.indicator();
        let b = QapMatrix::new(shape, op.contract_mat(&xt, &xt)?)?;
        let yr = psi_with_guard(&b, &y, cfg.subroutine, &cfg.psi)?;
        Ok((vec![xr.assignment, yr.assignment], vec![xr.objective, yr.objective]))
    };
    let value = |op: &LiftedOperator, b: &[Vec<f64>]| op.eval(&b[0], &b[0], &b[1], &b[1]);

    let s = match start {
        Some(s) => s.clone(),
        None => default_start(tensor, first_alpha)?,
    };
    ascend(tensor, cfg, vec![s.indicator(); 2], &mut sweep, &value)
}

/// Third-order power iteration `v <- F3(v, v, .) / |F3(v, v, .)|` from the
/// normalized all-ones vector, discretized by a linear assignment. Baseline
/// only; no ascent guarantee.
pub fn hopm_baseline(tensor: &SparseSymmetricTensor3, max_iter: usize, tol: f64) -> Result<Solution> {
    let n = tensor.n();
    let shape = tensor.shape();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut terminated = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < max_iter {
        let mut w = tensor.contract_vec(&v, &v)?;
        let norm = dot(&w, &w).sqrt();
        iterations += 1;
        if !(norm > 0.0 && norm.is_finite()) {
            terminated = Termination::Degenerate;
            v = vec![1.0; n];
            break;
        }
        w.iter_mut().for_each(|e| *e /= norm);
        let diff = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = w;
        if diff <= tol {
            terminated = Termination::Converged;
            break;
        }
    }
    let assignment = solve_lap_max(&reshape_to_profit(&v, shape)?)?;
    let x = assignment.indicator();
    let score3 = tensor.eval_s3(&x)?;
    Ok(Solution {
        assignment,
        score3,
        score4_alpha: LiftedOperator::new(tensor, 0.0)?.score(&x)?,
        trace: SolverTrace {
            stage_scores: Vec::new(),
            u_scores3: Vec::new(),
            alpha_phases: Vec::new(),
            terminated,
        },
        outer_iterations: iterations,
    })
}
