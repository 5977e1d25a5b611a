//! Affinities between two planar point sets.
//!
//! The third-order tensor compares triangles: each triangle is described by
//! the sines of its interior angles, which do not change under translation,
//! rotation or uniform scaling. A sample of template triangles is compared
//! against every (ordered) scene triangle and only the `knn` closest scene
//! triangles in feature space are kept per template triangle.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qap::QapMatrix;
use crate::tensor::{MatchingShape, SparseSymmetricTensor3, MATERIALIZE_LIMIT};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Point>,
}

impl PointSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("point set is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.points[a], self.points[b]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Template triangles sampled per template point.
    pub triples_per_point: usize,
    /// Scene triangles kept per template triangle.
    pub knn: usize,
    /// Smallest admissible side length of a triangle.
    pub min_side: f64,
    pub seed: u64,
    /// Scene triangles are enumerated exhaustively up to this many, sampled
    /// beyond it.
    pub scene_triangle_cap: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            triples_per_point: 50,
            knn: 300,
            min_side: 1e-9,
            seed: 0,
            scene_triangle_cap: 200_000,
        }
    }
}

impl SamplingConfig {
    fn validate(&self) -> Result<()> {
        if self.triples_per_point == 0 || self.knn == 0 || self.scene_triangle_cap == 0 {
            return Err(Error::InvalidConfig("sampling counts must be at least 1".into()));
        }
        if !(self.min_side > 0.0) {
            return Err(Error::InvalidConfig("min_side must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffinityParams {
    /// Feature-distance weight; the inverse mean retained squared distance
    /// when unset.
    pub gamma: Option<f64>,
    /// Length scale of the pairwise distance affinity.
    pub sigma_s: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            gamma: None,
            sigma_s: 0.5,
        }
    }
}

/// Sines of the interior angles at `triple[0]`, `triple[1]`, `triple[2]`.
pub fn triangle_feature(ps: &PointSet, triple: [usize; 3], min_side: f64) -> Result<[f64; 3]> {
    let [a, b, c] = triple;
    let n = ps.len();
    if a >= n || b >= n || c >= n || a == b || a == c || b == c {
        return Err(Error::InvalidConfig(format!("bad triangle indices {triple:?}")));
    }
    let degenerate = Error::DegenerateTriangle(a, b, c);
    let (ab, bc, ca) = (ps.dist(a, b), ps.dist(b, c), ps.dist(c, a));
    if ab.min(bc).min(ca) < min_side {
        return Err(degenerate);
    }
    let p = ps.points();
    let cross = ((p[b][0] - p[a][0]) * (p[c][1] - p[a][1]) - (p[b][1] - p[a][1]) * (p[c][0] - p[a][0])).abs();
    let longest = ab.max(bc).max(ca);
    if cross <= 1e-12 * longest * longest {
        return Err(degenerate);
    }
    // |cross| is twice the area; the sine at each vertex is 2*area over the
    // product of its two adjacent sides
    Ok([cross / (ab * ca), cross / (ab * bc), cross / (bc * ca)])
}

/// Tensor together with the data used to weight it.
#[derive(Debug, Clone)]
pub struct AffinityTensor {
    pub tensor: SparseSymmetricTensor3,
    pub gamma: f64,
    /// Squared feature distance of every retained triangle pair.
    pub retained_sq_distances: Vec<f64>,
    pub template_triangles: usize,
    pub scene_triangles: usize,
}

fn combinations(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                out.push([a, b, c]);
            }
        }
    }
    out
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

pub fn build_tensor(p: &PointSet, q: &PointSet, sc: &SamplingConfig, ap: &AffinityParams) -> Result<SparseSymmetricTensor3> {
    build_tensor_detailed(p, q, sc, ap).map(|a| a.tensor)
}

pub fn build_tensor_detailed(
    p: &PointSet,
    q: &PointSet,
    sc: &SamplingConfig,
    ap: &AffinityParams,
) -> Result<AffinityTensor> {
    sc.validate()?;
    if p.len() < 3 {
        return Err(Error::InvalidConfig(format!("need at least 3 template points, got {}", p.len())));
    }
    if let Some(g) = ap.gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {g}")));
        }
    }
    let shape = MatchingShape::new(p.len(), q.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);

    let mut template: Vec<([usize; 3], [f64; 3])> = combinations(p.len())
        .into_iter()
        .filter_map(|t| triangle_feature(p, t, sc.min_side).ok().map(|f| (t, f)))
        .collect();
    let wanted = sc.triples_per_point.saturating_mul(p.len());
    if template.len() > wanted {
        let mut picked = index::sample(&mut rng, template.len(), wanted).into_vec();
        picked.sort_unstable();
        template = picked.into_iter().map(|i| template[i]).collect();
    }

    let mut scene_combos = combinations(q.len());
    if scene_combos.len() > sc.scene_triangle_cap {
        let mut picked = index::sample(&mut rng, scene_combos.len(), sc.scene_triangle_cap).into_vec();
        picked.sort_unstable();
        scene_combos = picked.into_iter().map(|i| scene_combos[i]).collect();
    }
    let mut scene: Vec<([usize; 3], [f64; 3])> = Vec::with_capacity(scene_combos.len() * 6);
    for t in scene_combos {
        if let Ok(f) = triangle_feature(q, t, sc.min_side) {
            for perm in PERMUTATIONS {
                scene.push((perm.map(|m| t[m]), perm.map(|m| f[m])));
            }
        }
    }

    let k = sc.knn.min(scene.len());
    let neighbors: Vec<Vec<(usize, f64)>> = template
        .par_iter()
        .map(|(_, fp)| {
            let mut d: Vec<(usize, f64)> = scene
                .iter()
                .enumerate()
                .map(|(i, (_, fq))| (i, (0..3).map(|m| (fp[m] - fq[m]).powi(2)).sum::<f64>()))
                .collect();
            let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k > 0 && k < d.len() {
                d.select_nth_unstable_by(k - 1, order);
                d.truncate(k);
            }
            d.sort_unstable_by(order);
            d
        })
        .collect();

    let retained_sq_distances: Vec<f64> = neighbors.iter().flatten().map(|&(_, d2)| d2).collect();
    let gamma = match ap.gamma {
        Some(g) => g,
        None => {
            let mean = retained_sq_distances.iter().sum::<f64>() / retained_sq_distances.len().max(1) as f64;
            if mean > 0.0 {
                1.0 / mean
            } else {
                1.0
            }
        }
    };

    let mut entries = Vec::with_capacity(retained_sq_distances.len());
    for ((tp, _), near) in template.iter().zip(&neighbors) {
        for &(qi, d2) in near {
            let tq = scene[qi].0;
            let idx = [0, 1, 2].map(|m| shape.index(tp[m], tq[m]));
            if idx[0] == idx[1] || idx[0] == idx[2] || idx[1] == idx[2] {
                continue;
            }
            entries.push((idx, (-gamma * d2).exp()));
        }
    }
    let tensor = SparseSymmetricTensor3::from_entries(shape, entries)?;
    Ok(AffinityTensor {
        tensor,
        gamma,
        retained_sq_distances,
        template_triangles: template.len(),
        scene_triangles: scene.len(),
    })
}

/// Pairwise affinity `exp(-(d_P(i1,i2) - d_Q(j1,j2))^2 / sigma_s^2)`, zero on
/// pairs sharing a template or a scene point.
pub fn build_matrix2(p: &PointSet, q: &PointSet, ap: &AffinityParams) -> Result<QapMatrix> {
    if !(ap.sigma_s > 0.0 && ap.sigma_s.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_s must be positive, got {}", ap.sigma_s)));
    }
    let shape = MatchingShape::new(p.len(), q.len())?;
    let n = shape.n();
    if n > MATERIALIZE_LIMIT {
        return Err(Error::ThresholdExceeded {
            n,
            limit: MATERIALIZE_LIMIT,
        });
    }
    let s2 = ap.sigma_s * ap.sigma_s;
    let mut a = DMatrix::zeros(n, n);
    for l in 0..n {
        let (i1, j1) = shape.pair(l);
        for k in 0..n {
            let (i2, j2) = shape.pair(k);
            if i1 != i2 && j1 != j2 {
                let gap = p.dist(i1, i2) - q.dist(j1, j2);
                a[(k, l)] = (-gap * gap / s2).exp();
            }
        }
    }
    QapMatrix::new(shape, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(points: &[Point]) -> PointSet {
        PointSet::new(points.to_vec()).unwrap()
    }

    #[test]
    fn equilateral_and_right_triangles() {
        let h = 3f64.sqrt() / 2.0;
        let f = triangle_feature(&ps(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]), [0, 1, 2], 1e-9).unwrap();
        for v in f {
            assert!((v - h).abs() < 1e-12);
        }
        let right = ps(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let f = triangle_feature(&right, [0, 1, 2], 1e-9).unwrap();
        let s = 2f64.sqrt() / 2.0;
        for (got, want) in f.iter().zip([1.0, s, s]) {
            assert!((got - want).abs() < 1e-12);
        }
        let scaled = ps(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]);
        let g = triangle_feature(&scaled, [0, 1, 2], 1e-9).unwrap();
        for (a, b) in f.iter().zip(g) {
            assert!((a - b).abs() < 1e-15);
        }
        // tuple order permutes the feature
        let g = triangle_feature(&right, [1, 2, 0], 1e-9).unwrap();
        for (got, want) in g.iter().zip([s, s, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_triangles_are_signaled() {
        let line = ps(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 0.0]]);
        assert!(matches!(triangle_feature(&line, [0, 1, 2], 1e-9), Err(Error::DegenerateTriangle(..))));
        assert!(matches!(triangle_feature(&line, [0, 1, 3], 1e-9), Err(Error::DegenerateTriangle(..))));
        assert!(triangle_feature(&line, [0, 0, 1], 1e-9).is_err());
        assert!(triangle_feature(&line, [0, 1, 7], 1e-9).is_err());
    }

    #[test]
    fn identical_sets_give_unit_identity_entries() {
        let pts = ps(&[[0.0, 0.0], [1.3, 0.2], [0.4, 1.1], [-0.7, 0.5]]);
        let sc = SamplingConfig {
            triples_per_point: 10,
            knn: 1000,
            ..SamplingConfig::default()
        };
        let built = build_tensor_detailed(&pts, &pts, &sc, &AffinityParams::default()).unwrap();
        let t = &built.tensor;
        assert_eq!(built.template_triangles, 4);
        assert_eq!(built.scene_triangles, 24);
        let shape = t.shape();
        for combo in combinations(4) {
            let mut idx = combo.map(|i| shape.index(i, i));
            idx.sort_unstable();
            let o = t.orbits().iter().find(|o| [o.i, o.j, o.k] == idx).expect("identity entry present");
            assert_eq!(o.value, 1.0);
        }
        assert!(t.orbits().iter().all(|o| o.value > 0.0 && o.value <= 1.0));
    }

    #[test]
    fn rejects_small_or_tall_inputs() {
        let two = ps(&[[0.0, 0.0], [1.0, 0.0]]);
        let four = ps(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let sc = SamplingConfig::default();
        let ap = AffinityParams::default();
        assert!(build_tensor(&two, &four, &sc, &ap).is_err());
        let three = ps(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(build_tensor(&four, &three, &sc, &ap).is_err());
        assert!(build_matrix2(&four, &three, &ap).is_err());
        assert!(PointSet::new(vec![]).is_err());
        assert!(PointSet::new(vec![[f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn pairwise_matrix_values() {
        // |d_P(0,1) - d_Q(0,1)| = 0.5 = sigma_s
        let p = ps(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let q = ps(&[[0.0, 0.0], [1.5, 0.0], [0.0, 1.0]]);
        let a = build_matrix2(&p, &q, &AffinityParams::default()).unwrap();
        let s = a.shape();
        let m = a.matrix();
        let e = (-1.0f64).exp();
        assert!((m[(s.index(0, 0), s.index(1, 1))] - e).abs() < 1e-15);
        // d_P(0,2) = d_Q(0,2)
        assert_eq!(m[(s.index(0, 0), s.index(2, 2))], 1.0);
        assert_eq!(m[(s.index(0, 0), s.index(0, 1))], 0.0);
        assert_eq!(m[(s.index(0, 0), s.index(1, 0))], 0.0);
        assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(m, &m.transpose());
    }
}
