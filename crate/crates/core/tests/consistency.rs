//! Cross-module consistency properties: the two filter routes agree, the
//! simulated bond is a martingale against the PDE price, the Euler scheme
//! has first-order weak error, the PDE converges at second order, and the
//! claim solver respects comparison and bound properties.

mod common;

use common::{bond_benchmark, det_benchmark, hidden_chain_scenario};

use endow_core::bsde::{solve_claim_bsde, solve_pure_investment_bsde, BsdeOptions};
use endow_core::filter::{
    filter_path, hat_pi_lambda, hat_pi_lambda_batch, normalized_filter, particle_filter_oracle,
    propagate_unnormalized, Regime,
};
use endow_core::longevity::{solve_bond_pde, PdeGrid};
use endow_core::model::{ChainSpec, CoefFn, LambdaForm, LambdaSpec, TimeGrid};
use endow_core::rng::{stream_rng, StreamKind};
use endow_core::simulate::{
    sample_death_time, simulate_paths, simulate_paths_with_brownians, survivor_index,
    SyntheticBond,
};
use rand::Rng;
use rand_distr::StandardNormal;

fn flat_bond() -> SyntheticBond<impl Fn(f64, f64, f64) -> (f64, f64, f64) + Sync> {
    SyntheticBond {
        coefs: |_t, _mu, _y| (0.0, 0.0, 0.0),
        s2_0: 1.0,
    }
}

#[test]
fn hat_route_equals_kallianpur_striebel_route_before_death() {
    let spec = hidden_chain_scenario(1.0, 1.0);
    let grid = TimeGrid::new(100, 1.0).unwrap();
    let mut bundle = simulate_paths(&spec, &grid, 50, 31, &flat_bond()).unwrap();
    sample_death_time(&mut bundle);
    let (a, b) = (spec.lambda.lower, spec.lambda.upper);

    for p in 0..bundle.n_paths {
        let mu_path = bundle.path(&bundle.mu, p);
        let hat = hat_pi_lambda(mu_path, &bundle.times, &spec.chain, &spec.lambda).unwrap();
        // Kallianpur-Striebel route: Zakai weights, normalised, projected.
        let mut rho = spec.chain.initial_dist.clone();
        for i in 0..bundle.n_nodes() {
            let t = bundle.times[i];
            if bundle.tau[p] <= t {
                break;
            }
            let row = spec.lambda.row(t, mu_path[i], spec.chain.n_states);
            let pi = normalized_filter(&rho).unwrap();
            let ks: f64 = pi.iter().zip(&row).map(|(p, l)| p * l).sum();
            assert!(
                (ks - hat[i]).abs() <= 1e-8,
                "path {p} node {i}: ks = {ks}, hat = {}",
                hat[i]
            );
            assert!(hat[i] >= a - 1e-12 && hat[i] <= b + 1e-12);
            if i + 1 < bundle.n_nodes() {
                rho = propagate_unnormalized(&rho, &spec.chain, &row, grid.dt()).unwrap();
            }
        }
    }
}

#[test]
fn spliced_filter_is_a_probability_vector_at_every_node() {
    let spec = hidden_chain_scenario(1.0, 1.0);
    let grid = TimeGrid::new(80, 1.0).unwrap();
    let mut bundle = simulate_paths(&spec, &grid, 40, 77, &flat_bond()).unwrap();
    sample_death_time(&mut bundle);
    // Force a few deaths so the splice is exercised.
    bundle.tau[0] = 0.31;
    bundle.tau[1] = 0.74;
    let mut saw_death = 0;
    for p in 0..bundle.n_paths {
        let fp = filter_path(&bundle, p, &spec.chain, &spec.lambda).unwrap();
        for i in 0..bundle.n_nodes() {
            let pi = fp.pi_at(i);
            let sum: f64 = pi.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-10, "path {p} node {i} sum {sum}");
            assert!(pi.iter().all(|&x| x >= 0.0));
        }
        if fp.regime.iter().any(|r| *r == Regime::AtDeath) {
            saw_death += 1;
        }
    }
    assert!(saw_death >= 2);
}

#[test]
fn particle_filter_agrees_on_randomized_chains() {
    let mut rng = stream_rng(2024, StreamKind::Scenario, 0);
    for trial in 0..3 {
        let n_states = 2 + trial % 3;
        let mut generator = vec![vec![0.0; n_states]; n_states];
        for i in 0..n_states {
            let mut row_sum = 0.0;
            for j in 0..n_states {
                if i != j {
                    let q: f64 = rng.gen::<f64>() * 0.8;
                    generator[i][j] = q;
                    row_sum += q;
                }
            }
            generator[i][i] = -row_sum;
        }
        let dist = vec![1.0 / n_states as f64; n_states];
        let chain = ChainSpec {
            n_states,
            generator,
            initial_dist: dist,
        };
        let rates: Vec<f64> = (0..n_states).map(|_| 0.02 + rng.gen::<f64>() * 0.2).collect();
        let lambda = LambdaSpec {
            form: LambdaForm::StateConstant { rates },
            lower: 0.01,
            upper: 0.3,
            clip: true,
        };
        let n_steps = 400;
        let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 / n_steps as f64).collect();
        let mu_path = vec![0.02; times.len()];
        let exact = hat_pi_lambda(&mu_path, &times, &chain, &lambda).unwrap();
        let (est, se) =
            particle_filter_oracle(&mu_path, &times, &chain, &lambda, 20_000, 55 + trial as u64);
        for i in (0..=n_steps).step_by(40) {
            let tol = 3.0 * se[i].max(2e-4);
            assert!(
                (est[i] - exact[i]).abs() <= tol,
                "trial {trial} node {i}: pf = {}, exact = {}, se = {}",
                est[i],
                exact[i],
                se[i]
            );
        }
    }
}

#[test]
fn simulated_bond_is_a_martingale_against_the_pde_price() {
    // Zero premia: the physical measure is the pricing measure, so the
    // simulated terminal bond matches the PDE initial value, and so does the
    // realized survivor index.
    let mut spec = hidden_chain_scenario(1.0, 1.0);
    spec.risk_premia.alpha_mu = CoefFn::Constant { value: 0.0 };
    spec.risk_premia.alpha_y = CoefFn::Constant { value: 0.0 };
    let pde_grid = PdeGrid::from_spec(&spec, 60, 64, 24);
    let surface = solve_bond_pde(&spec, &pde_grid).unwrap();
    let grid = TimeGrid::new(50, 1.0).unwrap();
    let n_paths = 20_000;
    let mut bundle = simulate_paths(&spec, &grid, n_paths, 12, &surface).unwrap();
    survivor_index(&mut bundle);

    let f0 = surface.s2_0;
    let last = grid.n_steps;
    let stats = |values: Vec<f64>| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, (var / n).sqrt())
    };
    let (mean_s2, se_s2) = stats((0..n_paths).map(|p| bundle.s2[bundle.idx(p, last)]).collect());
    assert!(
        (mean_s2 - f0).abs() <= 3.0 * se_s2,
        "E[S2_T] = {mean_s2} +- {se_s2}, F(0) = {f0}"
    );
    let (mean_smu, se_smu) =
        stats((0..n_paths).map(|p| bundle.smu[bundle.idx(p, last)]).collect());
    assert!(
        (mean_smu - f0).abs() <= 3.0 * se_smu.max(2e-4),
        "E[Smu_T] = {mean_smu} +- {se_smu}, F(0) = {f0}"
    );
}

#[test]
fn euler_weak_error_is_first_order_on_a_fixed_brownian_refinement() {
    // State-dependent drift and volatility so the Euler bias is visible.
    let mut spec = det_benchmark(0.0, 0.05, 1.0, 1.0);
    spec.market.mu_s = CoefFn::Affine {
        intercept: 0.05,
        slope_t: 0.0,
        slope_mu: 0.0,
        slope_y: 3.0,
    };
    spec.market.sigma_s = CoefFn::Affine {
        intercept: 0.15,
        slope_t: 0.0,
        slope_mu: 0.0,
        slope_y: 2.0,
    };
    spec.mortality.b_y = CoefFn::MeanRevert {
        rate: 1.5,
        target: 0.05,
    };
    spec.mortality.sigma_y = CoefFn::Constant { value: 0.08 };
    spec.mortality.y_0 = 0.02;

    let n_paths = 30_000;
    let fine_steps = 100;
    let mut rng = stream_rng(99, StreamKind::Scenario, 1);
    let mut dw_fine = vec![vec![0.0; n_paths * fine_steps]; 3];
    let sqrt_dt = (1.0 / fine_steps as f64).sqrt();
    for p in 0..n_paths {
        for i in 0..fine_steps {
            for dw in dw_fine.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                dw[p * fine_steps + i] = z * sqrt_dt;
            }
        }
    }
    let aggregate = |dw: &[f64], factor: usize| -> Vec<f64> {
        let steps = fine_steps / factor;
        let mut out = vec![0.0; n_paths * steps];
        for p in 0..n_paths {
            for i in 0..steps {
                let mut acc = 0.0;
                for k in 0..factor {
                    acc += dw[p * fine_steps + i * factor + k];
                }
                out[p * steps + i] = acc;
            }
        }
        out
    };
    let mean_s1 = |steps: usize, factor: usize| -> f64 {
        let grid = TimeGrid::new(steps, 1.0).unwrap();
        let d1 = aggregate(&dw_fine[0], factor);
        let d2 = aggregate(&dw_fine[1], factor);
        let d3 = aggregate(&dw_fine[2], factor);
        let bundle = simulate_paths_with_brownians(
            &spec,
            &grid,
            n_paths,
            4,
            &flat_bond(),
            (&d1, &d2, &d3),
        )
        .unwrap();
        (0..n_paths)
            .map(|p| bundle.s1[bundle.idx(p, steps)])
            .sum::<f64>()
            / n_paths as f64
    };
    let coarse = mean_s1(25, 4);
    let mid = mean_s1(50, 2);
    let fine = mean_s1(100, 1);
    let d1 = (coarse - mid).abs();
    let d2 = (mid - fine).abs();
    let ratio = d1 / d2;
    assert!(
        (1.2..3.8).contains(&ratio),
        "weak-error ratio {ratio} (d1 = {d1:.3e}, d2 = {d2:.3e})"
    );
}

#[test]
fn pde_converges_at_second_order() {
    let spec = bond_benchmark(0.3, 0.05, 0.05, 1.0, 1.0);
    let coarse = PdeGrid::from_spec(&spec, 10, 12, 6);
    let solve_at = |g: &PdeGrid| {
        solve_bond_pde(&spec, g)
            .unwrap()
            .price(0.0, spec.mortality.mu_0, spec.mortality.y_0)
    };
    let f1 = solve_at(&coarse);
    let f2 = solve_at(&coarse.refined());
    let f4 = solve_at(&coarse.refined().refined());
    let d1 = (f1 - f2).abs();
    let d2 = (f2 - f4).abs();
    assert!(d2 < d1, "halving must shrink the change: {d1:.3e} -> {d2:.3e}");
    let ratio = d1 / d2;
    assert!(
        (2.2..8.0).contains(&ratio),
        "second-order signature violated: ratio {ratio}"
    );
}

#[test]
fn claim_value_is_monotone_in_the_payoff_and_bounded() {
    let spec_small = hidden_chain_scenario(0.6, 1.0);
    let spec_large = hidden_chain_scenario(1.0, 1.0);
    let grid = TimeGrid::new(40, 1.0).unwrap();
    let pde_grid = PdeGrid::from_spec(&spec_large, 40, 48, 16);
    let surface = solve_bond_pde(&spec_large, &pde_grid).unwrap();
    // Common random numbers: identical bundle for both claims.
    let bundle = simulate_paths(&spec_large, &grid, 8000, 21, &surface).unwrap();
    let pl = hat_pi_lambda_batch(&bundle, &spec_large.chain, &spec_large.lambda).unwrap();
    let opts = BsdeOptions::for_claim(1.0, 1.0);
    let pure = solve_pure_investment_bsde(&spec_large, &bundle, Some(&pl), &opts).unwrap();
    let claim_small = solve_claim_bsde(&spec_small, &bundle, &pl, &pure, &opts).unwrap();
    let claim_large = solve_claim_bsde(&spec_large, &bundle, &pl, &pure, &opts).unwrap();
    assert!(
        claim_large.initial_mean() >= claim_small.initial_mean() - 1e-3,
        "comparison violated: {} < {}",
        claim_large.initial_mean(),
        claim_small.initial_mean()
    );
    // Pure value nonpositive; excess within [0, alpha k]: tight on node
    // means, looser pathwise (regression noise).
    let eps_path = 0.05;
    assert!(pure.values.iter().all(|&v| v <= eps_path));
    for i in 0..claim_large.n_nodes {
        let mut mean_excess = 0.0;
        for p in 0..claim_large.n_paths {
            let excess = claim_large.value(i, p) - pure.value(i, p);
            assert!(
                (-eps_path..=1.0 + eps_path).contains(&excess),
                "excess {excess} at node {i}"
            );
            mean_excess += excess;
        }
        mean_excess /= claim_large.n_paths as f64;
        assert!(
            (-5e-3..=1.0 + 5e-3).contains(&mean_excess),
            "mean excess {mean_excess} at node {i}"
        );
    }
}

#[test]
fn claim_solver_matches_markovian_pde_in_a_stochastic_scenario() {
    // CIR intensity lambda = mu, zero premia, flat bond: the claim log-value
    // is u(t, mu_t) for a semilinear PDE solved independently on a fine
    // grid. Checks the regression solver pathwise, not just at node zero.
    let mut spec = det_benchmark(0.0, 0.05, 1.0, 1.0);
    spec.mortality.b_mu = CoefFn::MeanRevert {
        rate: 0.5,
        target: 0.03,
    };
    spec.mortality.sigma_mu = CoefFn::SqrtOwn {
        scale: 0.08,
        floor: 0.0,
    };
    spec.lambda = LambdaSpec {
        form: LambdaForm::MultiplicativeFrailty { factors: vec![1.0] },
        lower: 1e-6,
        upper: 1.0,
        clip: true,
    };
    let oracle = common::Semilinear1d::solve(
        |mu| 0.5 * (0.03 - mu),
        |mu| 0.08 * mu.max(0.0).sqrt(),
        |mu| mu.clamp(1e-6, 1.0),
        1.0,
        1.0,
        0.2,
        400,
        2000,
    );

    let grid = TimeGrid::new(50, 1.0).unwrap();
    let n_paths = 20_000;
    let mut bundle = simulate_paths(&spec, &grid, n_paths, 61, &flat_bond()).unwrap();
    sample_death_time(&mut bundle);
    let pl = hat_pi_lambda_batch(&bundle, &spec.chain, &spec.lambda).unwrap();
    let opts = BsdeOptions::for_claim(1.0, 1.0);
    let pure = solve_pure_investment_bsde(&spec, &bundle, Some(&pl), &opts).unwrap();
    let claim = solve_claim_bsde(&spec, &bundle, &pl, &pure, &opts).unwrap();

    let u0 = oracle.value(0.0, spec.mortality.mu_0);
    let got = claim.initial_mean();
    assert!(
        (got - u0).abs() <= 0.01 * u0.abs().max(0.1),
        "U_0 = {got}, pde = {u0}"
    );
    // Pathwise agreement at interior nodes.
    for &node in &[10usize, 25, 40] {
        let t = bundle.times[node];
        let mut sq = 0.0;
        for p in 0..n_paths {
            let mu = bundle.mu[bundle.idx(p, node)];
            let diff = claim.value(node, p) - oracle.value(t, mu);
            sq += diff * diff;
        }
        let rms = (sq / n_paths as f64).sqrt();
        assert!(rms <= 0.02, "node {node}: pathwise rms {rms}");
    }
}

#[test]
fn bundles_are_bit_identical_across_thread_counts() {
    let spec = hidden_chain_scenario(1.0, 1.0);
    let grid = TimeGrid::new(30, 1.0).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| simulate_paths(&spec, &grid, 500, 77, &flat_bond()).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.mu, b.mu);
    assert_eq!(a.s1, b.s1);
    assert_eq!(a.s2, b.s2);
    assert_eq!(a.dw1, b.dw1);
    assert_eq!(a.dw2, b.dw2);
    assert_eq!(a.dw3, b.dw3);
    assert_eq!(a.chain, b.chain);
    assert_eq!(a.theta_exp, b.theta_exp);
}

#[test]
fn full_model_reduces_to_deterministic_intensity_case() {
    // A chain-independent intensity must reproduce the one-state run.
    let mut spec = hidden_chain_scenario(1.0, 1.0);
    spec.lambda = LambdaSpec {
        form: LambdaForm::StateConstant {
            rates: vec![0.05, 0.05],
        },
        lower: 1e-4,
        upper: 1.0,
        clip: true,
    };
    let mut reduced = spec.clone();
    reduced.chain = ChainSpec::degenerate();
    reduced.lambda = LambdaSpec {
        form: LambdaForm::StateConstant { rates: vec![0.05] },
        lower: 1e-4,
        upper: 1.0,
        clip: true,
    };

    let grid = TimeGrid::new(40, 1.0).unwrap();
    let pde_grid = PdeGrid::from_spec(&spec, 40, 48, 16);
    let surface = solve_bond_pde(&spec, &pde_grid).unwrap();
    let opts = BsdeOptions::for_claim(1.0, 1.0);

    let solve = |s: &endow_core::model::ModelSpec| {
        let bundle = simulate_paths(s, &grid, 8000, 42, &surface).unwrap();
        let pl = hat_pi_lambda_batch(&bundle, &s.chain, &s.lambda).unwrap();
        let pure = solve_pure_investment_bsde(s, &bundle, Some(&pl), &opts).unwrap();
        let claim = solve_claim_bsde(s, &bundle, &pl, &pure, &opts).unwrap();
        claim.initial_mean()
    };
    let full = solve(&spec);
    let small = solve(&reduced);
    // The chain draw consumes the same stream slots either way, so the state
    // paths coincide and only regression noise separates the two runs.
    assert!(
        (full - small).abs() < 5e-3,
        "full = {full}, reduced = {small}"
    );
}
