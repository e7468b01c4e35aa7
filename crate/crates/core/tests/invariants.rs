use std::sync::Arc;

use fentropy::curves::{quotient_norm_with, AnchorFn, AnchoredSystem, ControlNorm, Filtration, NormFn, QuotientOptions};
use fentropy::family::bowen_family;
use fentropy::manifold::ManifoldModel;
use fentropy::metric::{
    exact_counts, greedy_packing, max_combine, seeded_metric, validate_distances, Distances, DEFAULT_TOL_METRIC,
};
use fentropy::scenarios::{heisenberg_system, CurveSetup};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bracket_and_greedy(n in 2usize..=10, seed in 0u64..10_000, frac in 0.05f64..0.9) {
        let s = seeded_metric(n, seed);
        let eps = frac * s.diameter();
        let (m, p) = exact_counts(&s, eps, 12).unwrap();
        let (m_half, _) = exact_counts(&s, eps / 2.0, 12).unwrap();
        let g = greedy_packing(&s, eps).unwrap();
        prop_assert!(m <= p && p <= m_half);
        prop_assert!(m <= g.len() && g.len() <= p);
        // maximal: every other point lies within eps of the chosen set
        for i in 0..n {
            prop_assert!(g.contains(&i) || g.iter().any(|&c| s.dist(i, c) <= eps));
        }
    }

    #[test]
    fn exact_counts_fall_as_eps_grows(n in 2usize..=9, seed in 0u64..10_000, a in 0.05f64..0.9, b in 0.05f64..0.9) {
        let s = seeded_metric(n, seed);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (m1, p1) = exact_counts(&s, lo * s.diameter(), 12).unwrap();
        let (m2, p2) = exact_counts(&s, hi * s.diameter(), 12).unwrap();
        prop_assert!(m1 >= m2 && p1 >= p2);
    }

    #[test]
    fn max_combine_is_a_metric(na in 1usize..6, nb in 1usize..6, seed in 0u64..10_000) {
        let c = max_combine(&seeded_metric(na, seed), &seeded_metric(nb, seed + 1));
        prop_assert_eq!(c.len(), na * nb);
        prop_assert!(validate_distances(&c, DEFAULT_TOL_METRIC).is_valid());
    }

    #[test]
    fn bowen_levels_are_nested_metrics(map in proptest::collection::vec(0usize..12, 12), depth in 0usize..5) {
        let s = ManifoldModel::torus(1).grid_space(12).unwrap();
        let f = bowen_family(&s, &map, depth).unwrap();
        prop_assert_eq!(f.matrix(0), s.to_matrix());
        prop_assert_eq!(f.monotonicity_defect(), 0.0);
        for k in 0..=depth {
            prop_assert!(validate_distances(f.level(k), DEFAULT_TOL_METRIC).is_valid());
        }
    }

    #[test]
    fn quotient_norm_is_homogeneous(v in -3.0f64..3.0, t in 0.1f64..10.0) {
        prop_assume!(v.abs() > 1e-3);
        let anchor: Arc<AnchorFn> = Arc::new(|_x, u, out| out[0] = u[0] + 2.0 * u[1]);
        let l4: Arc<NormFn> = Arc::new(|u: &[f64]| u.iter().map(|x| x.powi(4)).sum::<f64>().powf(0.25));
        let sys = AnchoredSystem::new(
            ManifoldModel::Chart { dim: 1 },
            2,
            anchor,
            ControlNorm::convex(2, l4, "l4").unwrap(),
            "weighted sum",
        )
        .unwrap();
        let opts = QuotientOptions::default();
        let (a, _) = quotient_norm_with(&sys, &[0.0], &[v], &opts).unwrap();
        let (b, _) = quotient_norm_with(&sys, &[0.0], &[t * v], &opts).unwrap();
        prop_assert!((b - t * a).abs() <= 1e-3 * (t * a));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn heisenberg_curve_family_dominates_twice_base(seed in 0u64..1000, r_max in 0.2f64..2.0) {
        let system = heisenberg_system();
        let space = ManifoldModel::torus(3).grid_space(3).unwrap();
        let r_grid = vec![0.0, r_max / 2.0, r_max];
        let f = CurveSetup {
            system: &system,
            space: &space,
            r_grid,
            n_curves: 4,
            n_segments: 4,
            intervals: 32,
            seed,
            filtration: Filtration::SpeedBounded,
            connectors: None,
        }
        .build()
        .unwrap();
        let n = space.len();
        prop_assert_eq!(f.monotonicity_defect(), 0.0);
        for k in 0..3 {
            let l = f.level(k);
            for i in 0..n {
                prop_assert_eq!(l.dist(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(l.dist(i, j), l.dist(j, i));
                    prop_assert!(l.dist(i, j) >= 2.0 * space.dist(i, j) - 1e-12);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                prop_assert!((f.level(0).dist(i, j) - 2.0 * space.dist(i, j)).abs() < 1e-12);
            }
        }
    }
}
