mod common;

use common::*;
use hypermatch::affinity::{build_matrix2, build_tensor_detailed, triangle_feature, AffinityParams, PointSet, SamplingConfig};
use hypermatch::harness::{gen_instance, GridPoint};
use proptest::prelude::*;

fn random_points(n: usize, seed: u64) -> PointSet {
    let mut r = rng(seed);
    PointSet::new((0..n).map(|_| {
        let v = gaussian(2, &mut r);
        [v[0], v[1]]
    }).collect()).unwrap()
}

fn scaled(ps: &PointSet, s: f64) -> PointSet {
    PointSet::new(ps.points().iter().map(|p| [p[0] * s, p[1] * s]).collect()).unwrap()
}

fn small_sampling(seed: u64) -> SamplingConfig {
    SamplingConfig {
        triples_per_point: 5,
        knn: 40,
        seed,
        ..SamplingConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn features_are_similarity_invariant(seed in any::<u64>(), s in 0.1f64..10.0, theta in 0.0f64..6.28, dx in -5.0f64..5.0) {
        let ps = random_points(3, seed);
        let (c, sn) = (theta.cos(), theta.sin());
        let moved = PointSet::new(ps.points().iter().map(|p| [s * (c * p[0] - sn * p[1]) + dx, s * (sn * p[0] + c * p[1]) - dx]).collect()).unwrap();
        let (Ok(f), Ok(g)) = (triangle_feature(&ps, [0, 1, 2], 1e-9), triangle_feature(&moved, [0, 1, 2], 1e-9)) else {
            return Ok(());
        };
        for m in 0..3 {
            prop_assert!((f[m] - g[m]).abs() < 1e-9);
            prop_assert!(f[m] > 0.0 && f[m] <= 1.0 + 1e-15);
        }
        // the largest angle's sine follows from the other two by the law of sines
        let p = ps.points();
        let side = |a: usize, b: usize| (p[a][0] - p[b][0]).hypot(p[a][1] - p[b][1]);
        prop_assert!((f[0] / side(1, 2) - f[1] / side(0, 2)).abs() < 1e-9 * (1.0 + f[0] / side(1, 2)));
    }

    #[test]
    fn tensor_entries_are_valid_and_gamma_normalizes(seed in any::<u64>(), n_out in 0usize..4) {
        let p = random_points(5, seed);
        let q = random_points(5 + n_out, seed ^ 1);
        let built = build_tensor_detailed(&p, &q, &small_sampling(seed), &AffinityParams::default()).unwrap();
        let n = built.tensor.n();
        for o in built.tensor.orbits() {
            prop_assert!(o.i < o.j && o.j < o.k && o.k < n);
            prop_assert!(o.value > 0.0 && o.value <= 1.0);
        }
        let d = &built.retained_sq_distances;
        let mean_exponent = -built.gamma * d.iter().sum::<f64>() / d.len() as f64;
        if d.iter().any(|&v| v > 0.0) {
            prop_assert!((mean_exponent + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_the_scene_keeps_the_tensor(seed in any::<u64>(), s in 0.2f64..5.0) {
        let p = random_points(6, seed);
        let q = random_points(8, seed ^ 7);
        let sc = small_sampling(seed);
        let a = build_tensor_detailed(&p, &q, &sc, &AffinityParams::default()).unwrap().tensor;
        let b = build_tensor_detailed(&p, &scaled(&q, s), &sc, &AffinityParams::default()).unwrap().tensor;
        prop_assert_eq!(a.orbits().len(), b.orbits().len());
        for (x, y) in a.orbits().iter().zip(b.orbits()) {
            prop_assert_eq!((x.i, x.j, x.k), (y.i, y.j, y.k));
            prop_assert!((x.value - y.value).abs() <= 1e-9);
        }
    }

    #[test]
    fn pairwise_matrix_is_symmetric_and_bounded(seed in any::<u64>()) {
        let p = random_points(3, seed);
        let q = random_points(4, seed ^ 3);
        let a = build_matrix2(&p, &q, &AffinityParams::default()).unwrap();
        let m = a.matrix();
        prop_assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(m, &m.transpose());
    }
}

#[test]
fn tensor_build_is_reproducible() {
    let inst = gen_instance(&GridPoint { n_in: 8, n_out: 4, sigma: 0.02, scale: 1.0 }, 3).unwrap();
    let sc = SamplingConfig { seed: 9, ..SamplingConfig::default() };
    let a = build_tensor_detailed(&inst.p, &inst.q, &sc, &AffinityParams::default()).unwrap();
    let b = build_tensor_detailed(&inst.p, &inst.q, &sc, &AffinityParams::default()).unwrap();
    assert_eq!(a.tensor, b.tensor);
    let bits = |t: &hypermatch::SparseSymmetricTensor3| t.orbits().iter().map(|o| o.value.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.tensor), bits(&b.tensor));
}

#[test]
fn noiseless_copy_puts_the_ground_truth_on_top() {
    // with every template triangle kept the ground-truth matching collects
    // value 1 on each triangle, the largest possible score
    let inst = gen_instance(&GridPoint { n_in: 6, n_out: 0, sigma: 0.0, scale: 1.0 }, 12).unwrap();
    let sc = SamplingConfig { knn: 10_000, ..SamplingConfig::default() };
    let t = build_tensor_detailed(&inst.p, &inst.q, &sc, &AffinityParams::default()).unwrap().tensor;
    let gt = inst.gt.as_slice();
    let x = indicator(6, gt);
    let s_gt = t.eval_s3(&x).unwrap();
    assert_eq!(s_gt, 6.0 * 20.0);
    let best = row_maps(6, 6).iter().map(|m| t.eval_s3(&indicator(6, m)).unwrap()).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, s_gt);
}
