//! Synthetic point-matching benchmark.
//!
//! Inliers are drawn from a standard normal in the plane, copied into the
//! scene with Gaussian deformation noise, joined by standard normal outliers,
//! scaled and shuffled. Every method in a run sees the same instance and the
//! same tensor.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{build_matrix2, build_tensor, AffinityParams, PointSet, SamplingConfig};
use crate::bcagm::{hopm_baseline, solve, AlphaSchedule, Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::lap::{reshape_to_profit, solve_lap_max, AssignmentVector};
use crate::qap::{ipfp, mpm, PsiConfig, QapMatrix, QapMethod};
use crate::tensor::SparseSymmetricTensor3;

/// Relative slack used when auditing solver traces.
pub const AUDIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bcagm,
    BcagmMp,
    BcagmIpfp,
    Hopm,
    Ipfp2,
    Mpm2,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Bcagm,
        Method::BcagmMp,
        Method::BcagmIpfp,
        Method::Hopm,
        Method::Ipfp2,
        Method::Mpm2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bcagm => "bcagm",
            Method::BcagmMp => "bcagm_mp",
            Method::BcagmIpfp => "bcagm_ipfp",
            Method::Hopm => "hopm",
            Method::Ipfp2 => "ipfp2",
            Method::Mpm2 => "mpm2",
        }
    }

    /// Solver configuration for the block coordinate ascent methods.
    pub fn solver_config(self) -> Option<SolverConfig> {
        match self {
            Method::Bcagm => Some(SolverConfig::bcagm()),
            Method::BcagmMp => Some(SolverConfig::bcagm_psi(QapMethod::Mpm)),
            Method::BcagmIpfp => Some(SolverConfig::bcagm_psi(QapMethod::Ipfp)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n_in: usize,
    pub n_out: usize,
    pub sigma: f64,
    pub scale: f64,
}

impl GridPoint {
    pub fn validate(&self) -> Result<()> {
        if self.n_in < 3 {
            return Err(Error::InvalidConfig(format!("n_in must be at least 3, got {}", self.n_in)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub n_in: Vec<usize>,
    pub n_out: Vec<usize>,
    pub sigma: Vec<f64>,
    pub scale: Vec<f64>,
    pub trials: usize,
    pub seed_base: u64,
    pub methods: Vec<Method>,
    pub sampling: SamplingConfig,
    pub affinity: AffinityParams,
    pub alpha_schedule: AlphaSchedule,
    /// Report zero wall time so that output depends on the spec only.
    pub deterministic: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            n_in: vec![10],
            n_out: vec![0],
            sigma: vec![0.0],
            scale: vec![1.0],
            trials: 1,
            seed_base: 0,
            methods: vec![Method::Bcagm],
            sampling: SamplingConfig::default(),
            affinity: AffinityParams::default(),
            alpha_schedule: AlphaSchedule::ZeroThenBound,
            deterministic: false,
        }
    }
}

impl ExperimentSpec {
    /// Grid points in nesting order `n_in`, `n_out`, `sigma`, `scale`.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &n_in in &self.n_in {
            for &n_out in &self.n_out {
                for &sigma in &self.sigma {
                    for &scale in &self.scale {
                        out.push(GridPoint {
                            n_in,
                            n_out,
                            sigma,
                            scale,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.n_in.is_empty() || self.n_out.is_empty() || self.sigma.is_empty() || self.scale.is_empty() {
            return Err(Error::InvalidConfig("every grid axis needs at least one value".into()));
        }
        self.grid().iter().try_for_each(GridPoint::validate)
    }
}

/// `gt[i]` is the scene index of template point `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth(Vec<usize>);

impl GroundTruth {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if !map.iter().all(|&j| seen.insert(j)) {
            return Err(Error::InvalidAssignment("ground truth is not injective".into()));
        }
        Ok(Self(map))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub p: PointSet,
    pub q: PointSet,
    pub gt: GroundTruth,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one trial. Noise level and scale are left out so that sweeps over
/// them reuse the same underlying draws.
pub fn trial_seed(seed_base: u64, point: &GridPoint, trial: usize) -> u64 {
    let h = [point.n_in as u64, point.n_out as u64, trial as u64]
        .into_iter()
        .fold(0x5eed_u64, |h, v| splitmix64(h ^ v));
    seed_base ^ h
}

pub fn gen_instance(point: &GridPoint, seed: u64) -> Result<Instance> {
    point.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let p: Vec<[f64; 2]> = (0..point.n_in).map(|_| [normal(), normal()]).collect();
    // noise is drawn even when sigma = 0 to keep the stream aligned
    let noise: Vec<[f64; 2]> = (0..point.n_in).map(|_| [normal(), normal()]).collect();
    let outliers: Vec<[f64; 2]> = (0..point.n_out).map(|_| [normal(), normal()]).collect();
    let raw: Vec<[f64; 2]> = p
        .iter()
        .zip(&noise)
        .map(|(a, e)| [a[0] + point.sigma * e[0], a[1] + point.sigma * e[1]])
        .chain(outliers)
        .map(|c| [c[0] * point.scale, c[1] * point.scale])
        .collect();
    let mut perm: Vec<usize> = (0..raw.len()).collect();
    perm.shuffle(&mut rng);
    let q: Vec<[f64; 2]> = perm.iter().map(|&k| raw[k]).collect();
    let mut gt = vec![0; point.n_in];
    for (pos, &k) in perm.iter().enumerate() {
        if k < point.n_in {
            gt[k] = pos;
        }
    }
    Ok(Instance {
        p: PointSet::new(p)?,
        q: PointSet::new(q)?,
        gt: GroundTruth::new(gt)?,
    })
}

pub fn accuracy(a: &AssignmentVector, gt: &GroundTruth) -> Result<f64> {
    if a.row_map().len() != gt.0.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.0.len(),
            actual: a.row_map().len(),
        });
    }
    let correct = a.row_map().iter().zip(&gt.0).filter(|(x, y)| x == y).count();
    Ok(correct as f64 / gt.0.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub method: Method,
    /// 1-based.
    pub trial: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub sigma: f64,
    pub scale: f64,
    /// Unset on failed trials.
    pub accuracy: Option<f64>,
    pub score3: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_time_ms: f64,
    /// `ok`, or `error: <message>`.
    pub status: String,
}

/// Outcome of one method on one instance.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub assignment: AssignmentVector,
    pub score3: f64,
    pub iterations: usize,
    /// Solver output for the block coordinate ascent methods.
    pub solution: Option<Solution>,
}

fn second_order_start(a: &QapMatrix) -> Result<AssignmentVector> {
    let ones = vec![1.0; a.shape().n()];
    let row_sums: Vec<f64> = (a.matrix() * nalgebra::DVector::from_vec(ones)).iter().copied().collect();
    solve_lap_max(&reshape_to_profit(&row_sums, a.shape())?)
}

/// Runs `method` on a prepared instance. The pairwise matrix is required for
/// the second-order baselines only.
pub fn run_method(
    method: Method,
    tensor: &SparseSymmetricTensor3,
    matrix2: Option<&QapMatrix>,
    alpha_schedule: AlphaSchedule,
) -> Result<MethodRun> {
    let psi = PsiConfig::default();
    let (assignment, iterations, solution) = match method {
        Method::Bcagm | Method::BcagmMp | Method::BcagmIpfp => {
            let mut cfg = method.solver_config().expect("ascent method");
            cfg.alpha_schedule = alpha_schedule;
            let sol = solve(tensor, &cfg, None)?;
            (sol.assignment.clone(), sol.outer_iterations, Some(sol))
        }
        Method::Hopm => {
            let sol = hopm_baseline(tensor, 300, 1e-10)?;
            (sol.assignment, sol.outer_iterations, None)
        }
        Method::Ipfp2 | Method::Mpm2 => {
            let a = matrix2.ok_or_else(|| Error::InvalidConfig("pairwise matrix missing".into()))?;
            if method == Method::Ipfp2 {
                let r = ipfp(a, &second_order_start(a)?, psi.ipfp_max_iter)?;
                (r.assignment, r.inner_iterations, None)
            } else {
                let out = mpm(a, &vec![1.0; a.shape().n()], psi.mpm_max_iter, psi.mpm_tol)?;
                (solve_lap_max(&reshape_to_profit(&out.vector, a.shape())?)?, out.iterations, None)
            }
        }
    };
    let score3 = tensor.eval_s3(&assignment.indicator())?;
    Ok(MethodRun {
        assignment,
        score3,
        iterations,
        solution,
    })
}

/// Checks a run against its own claims: ascent invariants of the trace and
/// the reported score against a fresh evaluation.
pub fn audit_run(tensor: &SparseSymmetricTensor3, run: &MethodRun) -> Result<()> {
    if let Some(sol) = &run.solution {
        sol.trace.audit(AUDIT_TOL)?;
        let fresh = tensor.eval_s3(&sol.assignment.indicator())?;
        if (fresh - sol.score3).abs() > AUDIT_TOL * (1.0 + fresh.abs()) {
            return Err(Error::TraceViolation(format!(
                "reported score {} differs from recomputed {fresh}",
                sol.score3
            )));
        }
    }
    Ok(())
}

/// Tensor and optional pairwise matrix of one trial.
pub struct Prepared {
    pub instance: Instance,
    pub tensor: SparseSymmetricTensor3,
    pub matrix2: Option<QapMatrix>,
}

pub fn prepare_trial(spec: &ExperimentSpec, point: &GridPoint, trial: usize) -> Result<Prepared> {
    let seed = trial_seed(spec.seed_base, point, trial);
    let instance = gen_instance(point, seed)?;
    let sampling = SamplingConfig {
        seed: splitmix64(seed ^ spec.sampling.seed),
        ..spec.sampling
    };
    let tensor = build_tensor(&instance.p, &instance.q, &sampling, &spec.affinity)?;
    let matrix2 = if spec.methods.iter().any(|m| matches!(m, Method::Ipfp2 | Method::Mpm2)) {
        Some(build_matrix2(&instance.p, &instance.q, &spec.affinity)?)
    } else {
        None
    };
    Ok(Prepared {
        instance,
        tensor,
        matrix2,
    })
}

fn error_status(e: &Error) -> String {
    // commas and line breaks would break the CSV row
    format!("error: {e}").replace([',', '\n', '\r'], ";")
}

fn run_trial(spec: &ExperimentSpec, point: &GridPoint, trial: usize) -> Result<Vec<ResultRecord>> {
    let mut methods = spec.methods.clone();
    methods.sort_unstable();
    methods.dedup();
    let record = |method: Method| ResultRecord {
        method,
        trial: trial + 1,
        n_in: point.n_in,
        n_out: point.n_out,
        sigma: point.sigma,
        scale: point.scale,
        accuracy: None,
        score3: None,
        iterations: None,
        wall_time_ms: 0.0,
        status: "ok".into(),
    };
    let prepared = match prepare_trial(spec, point, trial) {
        Ok(p) => p,
        Err(e) => {
            return Ok(methods
                .into_iter()
                .map(|m| ResultRecord {
                    status: error_status(&e),
                    ..record(m)
                })
                .collect())
        }
    };
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let started = Instant::now();
        let run = run_method(method, &prepared.tensor, prepared.matrix2.as_ref(), spec.alpha_schedule);
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let mut rec = record(method);
        if !spec.deterministic {
            rec.wall_time_ms = elapsed;
        }
        match run {
            Ok(run) => {
                audit_run(&prepared.tensor, &run)?;
                rec.accuracy = Some(accuracy(&run.assignment, &prepared.instance.gt)?);
                rec.score3 = Some(run.score3);
                rec.iterations = Some(run.iterations);
            }
            Err(e) => rec.status = error_status(&e),
        }
        out.push(rec);
    }
    Ok(out)
}

/// Runs every method on every trial of every grid point.
///
/// Failed trials are reported through `status`. A trace that breaks the
/// ascent invariants aborts the whole run with [`Error::TraceViolation`].
pub fn run_grid(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    spec.validate()?;
    if spec.methods.is_empty() {
        return Ok(Vec::new());
    }
    let jobs: Vec<(usize, GridPoint, usize)> = spec
        .grid()
        .into_iter()
        .enumerate()
        .flat_map(|(g, p)| (0..spec.trials).map(move |t| (g, p, t)))
        .collect();
    let mut chunks: Vec<(usize, usize, Vec<ResultRecord>)> = jobs
        .par_iter()
        .map(|&(g, p, t)| run_trial(spec, &p, t).map(|recs| (g, t, recs)))
        .collect::<Result<_>>()?;
    chunks.sort_by_key(|&(g, t, _)| (g, t));
    Ok(chunks.into_iter().flat_map(|(_, _, recs)| recs).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(n_in: usize, n_out: usize, sigma: f64, scale: f64) -> GridPoint {
        GridPoint {
            n_in,
            n_out,
            sigma,
            scale,
        }
    }

    #[test]
    fn noiseless_instance_is_a_permuted_copy() {
        let inst = gen_instance(&point(6, 0, 0.0, 1.0), 7).unwrap();
        assert_eq!(inst.q.len(), 6);
        for (i, &j) in inst.gt.as_slice().iter().enumerate() {
            assert_eq!(inst.p.points()[i], inst.q.points()[j]);
        }
    }

    #[test]
    fn outliers_extend_the_scene() {
        let inst = gen_instance(&point(4, 5, 0.1, 2.0), 1).unwrap();
        assert_eq!((inst.p.len(), inst.q.len()), (4, 9));
    }

    #[test]
    fn same_seed_same_instance() {
        let a = gen_instance(&point(5, 3, 0.05, 1.0), 99).unwrap();
        let b = gen_instance(&point(5, 3, 0.05, 1.0), 99).unwrap();
        assert_eq!(a.p, b.p);
        assert_eq!(a.q, b.q);
        assert_eq!(a.gt, b.gt);
        assert!(gen_instance(&point(2, 3, 0.0, 1.0), 0).is_err());
        assert!(gen_instance(&point(3, 3, -1.0, 1.0), 0).is_err());
        assert!(gen_instance(&point(3, 3, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn accuracy_counts_correct_rows() {
        let s = crate::tensor::MatchingShape::new(10, 10).unwrap();
        let gt = GroundTruth::new((0..10).collect()).unwrap();
        assert_eq!(accuracy(&AssignmentVector::identity(s), &gt).unwrap(), 1.0);
        let shifted = AssignmentVector::from_row_map(s, (0..10).map(|i| (i + 1) % 10).collect()).unwrap();
        assert_eq!(accuracy(&shifted, &gt).unwrap(), 0.0);
        let mut map: Vec<usize> = (0..10).collect();
        map[..3].rotate_left(1);
        let seven = AssignmentVector::from_row_map(s, map).unwrap();
        assert_eq!(accuracy(&seven, &gt).unwrap(), 0.7);
        let small = crate::tensor::MatchingShape::new(3, 10).unwrap();
        assert!(accuracy(&AssignmentVector::identity(small), &gt).is_err());
        assert!(GroundTruth::new(vec![1, 1]).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bcagm2".parse::<Method>().is_err());
    }

    #[test]
    fn empty_methods_give_no_records() {
        let spec = ExperimentSpec {
            methods: vec![],
            ..ExperimentSpec::default()
        };
        assert!(run_grid(&spec).unwrap().is_empty());
    }

    #[test]
    fn noiseless_single_trial_is_solved() {
        let spec = ExperimentSpec {
            deterministic: true,
            ..ExperimentSpec::default()
        };
        let recs = run_grid(&spec).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].status, "ok");
        assert_eq!(recs[0].accuracy, Some(1.0));
        assert_eq!(recs[0].wall_time_ms, 0.0);
    }

    #[test]
    fn seeds_ignore_noise_and_scale_only() {
        let a = trial_seed(3, &point(10, 5, 0.0, 1.0), 0);
        assert_eq!(a, trial_seed(3, &point(10, 5, 0.2, 1.5), 0));
        assert_ne!(a, trial_seed(3, &point(10, 5, 0.0, 1.0), 1));
        assert_ne!(a, trial_seed(3, &point(10, 6, 0.0, 1.0), 0));
        assert_ne!(a, trial_seed(4, &point(10, 5, 0.0, 1.0), 0));
    }
}
