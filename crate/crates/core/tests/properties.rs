//! Property tests over random instances.

mod common;

use coag_core::analytic::{log_poisson_pmf, AnalyticSolver};
use coag_core::localization::{self, MinimizeOptions, SimplexPoint};
use coag_core::pgf::{self, FixedPointOptions};
use coag_core::{Composition, ModelSpec, SizeDistribution};
use proptest::prelude::*;

fn spec_strategy(max_m: usize) -> impl Strategy<Value = ModelSpec> {
    (1..=max_m).prop_flat_map(|m| {
        (
            proptest::collection::vec(0.1f64..2.0, m * m),
            proptest::collection::vec(0.05f64..1.0, m),
        )
            .prop_map(move |(a, w)| {
                let rows = (0..m).map(|i| a[i * m..(i + 1) * m].to_vec()).collect();
                let total: f64 = w.iter().sum();
                ModelSpec::new(rows, w.iter().map(|v| v / total).collect()).unwrap()
            })
    })
}

fn simplex_strategy(m: usize) -> impl Strategy<Value = SimplexPoint> {
    proptest::collection::vec(0.01f64..1.0, m).prop_map(|w| {
        let total: f64 = w.iter().sum();
        SimplexPoint::new(w.iter().map(|v| v / total).collect()).unwrap()
    })
}

fn composition_strategy(m: usize) -> impl Strategy<Value = Composition> {
    proptest::collection::vec(0u32..6, m).prop_map(Composition::new)
}

fn spec_with_points(max_m: usize) -> impl Strategy<Value = (ModelSpec, SimplexPoint, SimplexPoint, f64)> {
    spec_strategy(max_m).prop_flat_map(|spec| {
        let m = spec.m();
        (Just(spec), simplex_strategy(m), simplex_strategy(m), 0.05f64..0.95)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernel_is_symmetric_and_bilinear(
        (spec, k, l, j) in spec_strategy(3).prop_flat_map(|s| {
            let m = s.m();
            (Just(s), composition_strategy(m), composition_strategy(m), composition_strategy(m))
        })
    ) {
        prop_assert_eq!(spec.kernel(&k, &l), spec.kernel(&l, &k));
        let sum = k.checked_add(&j).unwrap();
        let lhs = spec.kernel(&sum, &l);
        let rhs = spec.kernel(&k, &l) + spec.kernel(&j, &l);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn monodisperse_mass_is_p(spec in spec_strategy(4)) {
        let dist = SizeDistribution::monodisperse(&spec);
        prop_assert_eq!(dist.mass_vector(), spec.p().to_vec());
    }

    #[test]
    fn window_size_is_binomial(m in 1usize..=4, n_max in 1u32..=8) {
        let count = Composition::enumerate(m, n_max).len() as u128;
        let binom = (1..=m as u128).fold(1u128, |acc, k| acc * (u128::from(n_max) + k) / k);
        prop_assert_eq!(count, binom - 1);
    }

    #[test]
    fn distribution_csv_round_trips(
        entries in proptest::collection::btree_map(composition_strategy(2), 0.0f64..1.0, 1..20)
    ) {
        let mut dist = SizeDistribution::new(2, 0.3);
        for (n, w) in entries {
            if n.size() > 0 {
                dist.insert(n, w).unwrap();
            }
        }
        let mut buf = Vec::new();
        dist.write_csv(&mut buf).unwrap();
        let back = SizeDistribution::read_csv(buf.as_slice(), 0.3).unwrap();
        prop_assert_eq!(back, dist);
    }

    #[test]
    fn poisson_log_pmf_matches_direct_formula(lambda in 0.01f64..20.0, k in 0i64..30) {
        let direct = (-lambda).exp() * lambda.powi(k as i32) / (1..=k).map(|v| v as f64).product::<f64>();
        let got = log_poisson_pmf(lambda, k).unwrap().exp();
        prop_assert!((got - direct).abs() <= 1e-12 * direct.max(1e-300));
    }

    #[test]
    fn gamma_is_midpoint_convex((spec, a, b, frac) in spec_with_points(3)) {
        let t = frac * pgf::critical_time(&spec).unwrap();
        let mid: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect();
        let mid = SimplexPoint::new(mid).unwrap();
        let g = |p: &SimplexPoint| localization::gamma(&spec, t, p).unwrap();
        prop_assert!(g(&mid) <= 0.5 * (g(&a) + g(&b)) + 1e-12);
    }

    #[test]
    fn gamma_gradient_matches_differences((spec, rho, _b, frac) in spec_with_points(3)) {
        let t = frac * pgf::critical_time(&spec).unwrap();
        let grad = localization::gamma_gradient(&spec, t, &rho).unwrap();
        let raw = |r: &[f64]| {
            let s = localization::sigma(&spec, r);
            r.iter().zip(&s).map(|(x, sl)| x * (x / (t * sl)).ln() + t * sl).sum::<f64>() - 1.0
        };
        let h = 1e-6;
        for j in 0..spec.m() {
            let mut up = rho.as_slice().to_vec();
            let mut down = up.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (raw(&up) - raw(&down)) / (2.0 * h);
            prop_assert!((fd - grad[j]).abs() <= 1e-6, "{} vs {}", fd, grad[j]);
        }
    }

    #[test]
    fn fixed_point_is_bounded_and_converged(
        (spec, x, frac) in spec_strategy(3).prop_flat_map(|s| {
            let m = s.m();
            (Just(s), proptest::collection::vec(0.0f64..3.0, m), 0.1f64..2.0)
        })
    ) {
        let t = frac * pgf::critical_time(&spec).unwrap();
        let opts = FixedPointOptions { newton: true, ..FixedPointOptions::default() };
        let r = pgf::solve_fixed_point(&spec, t, &x, opts).unwrap();
        prop_assert!(r.residual <= 1e-13);
        prop_assert!(r.g.iter().all(|&g| (0.0..=1.0).contains(&g)));
    }

    #[test]
    fn solve_is_root_independent(
        (spec, n, frac) in spec_strategy(3).prop_flat_map(|s| {
            let m = s.m();
            (Just(s), composition_strategy(m), 0.1f64..0.9)
        })
    ) {
        prop_assume!(n.size() > 0);
        let t = frac * pgf::critical_time(&spec).unwrap();
        let solver = AnalyticSolver::new(&spec, t).unwrap();
        let values: Vec<f64> = solver
            .valid_roots(&n)
            .into_iter()
            .map(|i| spec.p()[i] / f64::from(n.get(i)) * solver.progeny_pmf(i, &n).unwrap())
            .collect();
        for v in &values {
            prop_assert!((v - values[0]).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn minimizer_beats_random_probes(
        (spec, frac) in spec_strategy(3).prop_flat_map(|s| (Just(s), 0.1f64..0.9))
    ) {
        let t = frac * pgf::critical_time(&spec).unwrap();
        let result = localization::minimize_gamma(&spec, t, MinimizeOptions::default()).unwrap();
        prop_assert!(!result.boundary);
        let mut rng = common::rng(1);
        for _ in 0..250 {
            let probe = SimplexPoint::new(common::random_simplex(&mut rng, spec.m())).unwrap();
            prop_assert!(result.gamma_min <= localization::gamma(&spec, t, &probe).unwrap() + 1e-10);
        }
    }

    #[test]
    fn stochastic_kernel_localizes_at_its_stationary_vector(c in 0.2f64..3.0, frac in 0.1f64..0.95) {
        // A P = [[1 − c/2, c/2], [c/2, 1 − c/2]] when A = [[2 − c, c], [c, 2 − c]], p = (½, ½)
        let spec = ModelSpec::new(vec![vec![2.0 - c.min(2.0), c], vec![c, 2.0 - c.min(2.0)]], vec![0.5, 0.5]).unwrap();
        prop_assume!(c <= 2.0);
        let t = frac * pgf::critical_time(&spec).unwrap();
        let r = localization::minimize_gamma(&spec, t, MinimizeOptions::default()).unwrap();
        prop_assert!((r.rho_star.as_slice()[0] - 0.5).abs() < 1e-8);
    }
}
