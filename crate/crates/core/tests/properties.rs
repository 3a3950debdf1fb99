use exdiff::policy::{perron_closed_form, Combiner, PerronLearner};
use exdiff::solver::{diffusion_step, penalized_incremental_step, RunConfig, SolverState, Stepper};
use exdiff::stability::{
    build_error_dynamics, jury_stability_test, poly_from_roots, spectral_radius_excluding_one,
};
use exdiff::{
    build_policy, square_root_v, validate_policy, verify_lemma_properties, Algorithm, CostModel,
    DiagonalQuadratic, LeastSquaresData, Network, Rule,
};
use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;

fn rule() -> impl Strategy<Value = Rule> {
    proptest::sample::select(Rule::BUILT_IN.to_vec())
}

fn network() -> impl Strategy<Value = Network> {
    (1usize..=12, 0.05f64..0.9, any::<u64>()).prop_map(|(n, p, seed)| Network::random(n, p, seed))
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.2f64..5.0, n)
}

/// Network, rule, weights and a least-squares model with a step small
/// enough for every algorithm to stay bounded.
fn solver_case() -> impl Strategy<Value = (Network, Rule, Vec<f64>, LeastSquaresData, f64, u64)> {
    (1usize..=6, 1usize..=4, any::<u64>(), rule(), 0.05f64..0.5).prop_flat_map(|(n, m, seed, rule, frac)| {
        (weights(n), Just((n, m, seed, rule, frac))).prop_map(|(q, (n, m, seed, rule, frac))| {
            let net = Network::random(n, 0.5, seed);
            let model = LeastSquaresData::generate(n, m, m + 3, seed);
            let (_, unit) = build_policy(&net, rule, &q, 1.0).unwrap();
            let l_max = (0..n).map(|k| model.smoothness(k)).fold(0.0, f64::max);
            (net, rule, q, model, frac / (l_max * unit.mu_max()), seed)
        })
    })
}

fn initial(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |i, j| (((seed as usize + 7 * i + 13 * j) % 17) as f64 - 8.0) / 8.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_networks_are_connected(net in network()) {
        let n = net.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            prop_assert!(net.neighbors(k).contains(&k));
            for &l in net.neighbors(k) {
                prop_assert!(net.contains_edge(l, k));
                if !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn built_in_policies_are_balanced(net in network(), rule in rule(), mu_o in 1e-4f64..1.0) {
        let q = vec![1.0; net.len()];
        let (policy, steps) = build_policy(&net, rule, &q, mu_o).unwrap();
        let v = validate_policy(&policy, 1e-10).unwrap();
        prop_assert!(v.left_stochastic && v.primitive && v.balanced, "{:?}", v);
        prop_assert!(steps.scaling_residual(&policy.perron) <= 1e-12);
        let report = verify_lemma_properties(&policy);
        prop_assert!(report.all_passed(), "{:?}", report.failures);
        let closed = perron_closed_form(&net, rule, &steps.q, &steps.mu).unwrap();
        prop_assert!((&policy.a * &closed - &closed).amax() <= 1e-12);
    }

    #[test]
    fn square_root_annihilates_consensus(net in network(), rule in rule()) {
        let n = net.len();
        let (policy, _) = build_policy(&net, rule, &vec![1.0; n], 0.1).unwrap();
        let v = square_root_v(&policy).unwrap();
        let half_gap = (policy.perron_matrix() - &policy.a * policy.perron_matrix()) * 0.5;
        prop_assert!((&v * &v - half_gap).amax() <= 1e-12);
        prop_assert!((&v * DVector::from_element(n, 1.0)).amax() <= 1e-10);
    }

    #[test]
    fn perron_readouts_stay_above_bound(net in network(), rule in rule(), iters in 1usize..300) {
        let (policy, _) = build_policy(&net, rule, &vec![1.0; net.len()], 0.1).unwrap();
        let mut learner = PerronLearner::new(&policy);
        for _ in 0..iters {
            prop_assert!(learner.step().is_ok());
            for k in 0..net.len() {
                prop_assert!(learner.readout(k) > 0.0);
                prop_assert!(learner.readout(k) >= learner.lower_bound(k) * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn diffusion_equals_penalized_form((net, rule, q, model, mu_o, seed) in solver_case()) {
        let (policy, steps) = build_policy(&net, rule, &q, mu_o).unwrap();
        let combiner = Combiner::new(&policy.a);
        let mut state = SolverState::new(initial(net.len(), model.dim(), seed));
        for _ in 0..50 {
            let mut probe = state.clone();
            penalized_incremental_step(&mut probe, &policy, &steps, &model, 1.0 / steps.beta).unwrap();
            diffusion_step(&mut state, &combiner, &steps.mu, &model).unwrap();
            prop_assert!((&probe.w - &state.w).amax() <= 1e-12);
        }
    }

    #[test]
    fn exact_diffusion_equals_primal_dual((net, rule, q, model, mu_o, seed) in solver_case()) {
        let (policy, steps) = build_policy(&net, rule, &q, mu_o).unwrap();
        let start = initial(net.len(), model.dim(), seed);
        let config = |algorithm| RunConfig {
            initial: Some(&start),
            ..RunConfig::new(algorithm, &policy, &steps, &model, 1)
        };
        let mut exact = Stepper::new(config(Algorithm::ExactDiffusion)).unwrap();
        let mut pd = Stepper::new(config(Algorithm::PrimalDual)).unwrap();
        let ones = DVector::from_element(net.len(), 1.0);
        for _ in 0..200 {
            exact.step().unwrap();
            pd.step().unwrap();
            prop_assert!((&exact.state.w - &pd.state.w).amax() <= 1e-10);
            // Dual blocks stay in range(V), which is orthogonal to 1.
            prop_assert!((pd.state.dual.transpose() * &ones).amax() <= 1e-10 * (1.0 + pd.state.dual.amax()));
        }
    }

    #[test]
    fn consensus_at_common_minimizer_is_stationary(
        net in network(),
        rule in rule(),
        target in -5.0f64..5.0,
        frac in 0.01f64..0.9,
    ) {
        let n = net.len();
        let curv: Vec<f64> = (0..n).map(|k| 1.0 + k as f64).collect();
        let model = DiagonalQuadratic::scalar(&curv, &vec![target; n]).unwrap();
        // Keep μ_k h_k < 1 so rounding noise is not amplified.
        let (_, unit) = build_policy(&net, rule, &vec![1.0; n], 1.0).unwrap();
        let mu_o = frac / (n as f64 * unit.mu_max());
        let (policy, steps) = build_policy(&net, rule, &vec![1.0; n], mu_o).unwrap();
        let start = DMatrix::from_element(n, 1, target);
        for algorithm in Algorithm::ALL {
            let config = RunConfig {
                initial: Some(&start),
                ..RunConfig::new(algorithm, &policy, &steps, &model, 1)
            };
            let mut stepper = Stepper::new(config).unwrap();
            for _ in 0..10 {
                stepper.step().unwrap();
            }
            prop_assert!((&stepper.state.w - &start).amax() <= 1e-12, "{}", algorithm);
        }
    }

    #[test]
    fn exact_diffusion_reaches_weighted_minimizer((net, rule, q, model, mu_o, _seed) in solver_case()) {
        let (policy, steps) = build_policy(&net, rule, &q, mu_o).unwrap();
        let w_star = model.global_minimizer(&q).unwrap();
        let mut stepper = Stepper::new(RunConfig::new(Algorithm::ExactDiffusion, &policy, &steps, &model, 1)).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            for _ in 0..100 {
                stepper.step().unwrap();
            }
            last = (0..net.len())
                .map(|k| (stepper.state.w.row(k).transpose() - &w_star).amax())
                .fold(0.0, f64::max);
            if last <= 1e-8 {
                break;
            }
        }
        prop_assert!(last <= 1e-8, "distance {last:e}");
    }

    #[test]
    fn jury_matches_root_moduli(
        roots in proptest::collection::vec((0.05f64..1.6, 0.0f64..std::f64::consts::PI, any::<bool>()), 1..=3),
        scale in prop_oneof![0.5f64..3.0, -3.0f64..-0.5],
    ) {
        // Each entry adds either a real root (flag set) or a conjugate pair.
        let mut all = Vec::new();
        for &(r, theta, real) in &roots {
            prop_assume!((r - 1.0).abs() > 1e-6);
            if real {
                all.push(Complex::new(if theta > 1.5 { -r } else { r }, 0.0));
            } else {
                let z = Complex::from_polar(r, theta);
                all.push(z);
                all.push(z.conj());
            }
        }
        prop_assume!(all.len() >= 2);
        let coeffs: Vec<f64> = poly_from_roots(&all).iter().map(|c| c.re * scale).collect();
        let expected = all.iter().all(|z| z.norm() < 1.0);
        let verdict = jury_stability_test(&coeffs);
        prop_assume!(verdict.is_ok());
        prop_assert_eq!(verdict.unwrap().stable, expected);
    }

    #[test]
    fn unit_mode_of_error_dynamics(
        n in 2usize..7,
        seed in any::<u64>(),
        mu in 0.0f64..2.0,
        d in proptest::collection::vec(0.1f64..20.0, 6),
    ) {
        let net = Network::random(n, 0.5, seed);
        let (policy, _) = build_policy(&net, Rule::Averaging, &vec![1.0; n], 0.1).unwrap();
        let h = DVector::from_iterator(n, d.into_iter().take(n));
        let dynamics = build_error_dynamics(&policy.a, Some(&policy.perron), mu, &h).unwrap();
        let ones = DVector::from_element(2 * n, 1.0);
        prop_assert!((&dynamics.matrix * &ones - &ones).amax() <= 1e-13);
        prop_assert!(dynamics.matrix.view((n, 0), (n, n)) == DMatrix::<f64>::identity(n, n));
    }

    #[test]
    fn balanced_small_steps_are_stable(
        net in network(),
        rule in rule(),
        d in proptest::collection::vec(0.5f64..5.0, 12),
    ) {
        let n = net.len();
        prop_assume!(n >= 2);
        let (policy, _) = build_policy(&net, rule, &vec![1.0; n], 0.1).unwrap();
        let h = DVector::from_iterator(n, d.into_iter().take(n));
        let dynamics = build_error_dynamics(&policy.a, Some(&policy.perron), 1e-3, &h).unwrap();
        let rho = spectral_radius_excluding_one(&dynamics).unwrap();
        prop_assert!(rho < 1.0, "rho {rho}");
    }
}
