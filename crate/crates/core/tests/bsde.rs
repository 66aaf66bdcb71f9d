use mfbsde_core::bsde::*;
use mfbsde_core::ensemble::simulate_brownian;
use mfbsde_core::grid::make_grid;
use mfbsde_core::matrix::{mean, std_dev, PathMatrix};
use proptest::prelude::*;

fn brownian_terminal(n: usize, steps: usize, seed: u64) -> (mfbsde_core::ParticleEnsemble, Vec<f64>) {
    let g = make_grid(0.0, 1.0, steps).unwrap();
    let ens = simulate_brownian(&g, n, seed).unwrap();
    let xi = ens.brownian().column(steps).to_vec();
    (ens, xi)
}

#[test]
fn brownian_terminal_benchmark() {
    let n = 10_000;
    let (ens, xi) = brownian_terminal(n, 100, 11);
    let sol = solve_bsde_frozen(&ens, &xi, &PathMatrix::zeros(n, 101), &RegressionBasis::default()).unwrap();
    let tol = 10.0 / (n as f64).sqrt() + 5.0 * 0.01;
    // Node-wise RMS over particles; the pathwise max is dominated by cubic
    // extrapolation at the few particles beyond four standard deviations.
    let mut worst_y = 0.0f64;
    for i in 0..=100 {
        let e: f64 = (0..n).map(|p| (sol.y.get(p, i) - ens.brownian().get(p, i)).powi(2)).sum::<f64>() / n as f64;
        worst_y = worst_y.max(e.sqrt());
    }
    assert!(worst_y <= tol, "max rms |Y - B| = {worst_y}");
    for i in 0..100 {
        assert!((mean(sol.z.column(i)) - 1.0).abs() <= tol);
    }
    let zm = mfbsde_core::resistance::z_moment_diagnostic(&sol.z);
    assert!((zm.max - 1.0).abs() <= 10.0 / (n as f64).sqrt());
}

#[test]
fn linear_driver_growth_and_decay() {
    let g = make_grid(0.0, 1.0, 100).unwrap();
    let ens = simulate_brownian(&g, 10_000, 3).unwrap();
    let xi = vec![1.0; 10_000];
    let opts = DriverOptions::default();
    let up = solve_bsde_driver(&ens, &xi, &|_, _, y, _| y, &opts).unwrap();
    assert!((mean(up.y.column(0)) - std::f64::consts::E).abs() < 0.05);
    let down = solve_bsde_driver(&ens, &xi, &|_, _, y, _| -y, &opts).unwrap();
    assert!((mean(down.y.column(0)) - (-1.0f64).exp()).abs() < 0.05);
    let expl = solve_bsde_driver(&ens, &xi, &|_, _, y, _| y, &DriverOptions { scheme: Scheme::Explicit, ..opts }).unwrap();
    assert!((mean(expl.y.column(0)) - std::f64::consts::E).abs() < 0.05);
}

#[test]
fn cole_hopf_quadratic_driver() {
    let n = 10_000;
    let (ens, xi) = brownian_terminal(n, 100, 5);
    let opts = DriverOptions {
        z_truncation: Some(3.0),
        ..DriverOptions::default()
    };
    let sol = solve_bsde_driver(&ens, &xi, &|_, _, _, z| 0.5 * z * z, &opts).unwrap();
    assert!((mean(sol.y.column(0)) - 0.5).abs() < 0.05);
    // BMO proxy is finite and stable when N doubles.
    let b1 = bmo_proxy(&ens, &sol.z, &opts.basis).unwrap();
    let (ens2, xi2) = brownian_terminal(2 * n, 100, 6);
    let sol2 = solve_bsde_driver(&ens2, &xi2, &|_, _, _, z| 0.5 * z * z, &opts).unwrap();
    let b2 = bmo_proxy(&ens2, &sol2.z, &opts.basis).unwrap();
    assert!(b1.is_finite() && (b2 / b1 - 1.0).abs() <= 0.2, "{b1} {b2}");
}

#[test]
fn martingale_increments_of_frozen_driver() {
    let n = 4_000;
    let (ens, xi) = brownian_terminal(n, 50, 9);
    let c = PathMatrix::from_fn(n, 51, |p, i| (ens.brownian().get(p, i)).sin() + 0.1 * i as f64);
    let sol = solve_bsde_frozen(&ens, &xi, &c, &RegressionBasis::default()).unwrap();
    let d = ens.grid().delta();
    for i in 0..50 {
        let inc: Vec<f64> = (0..n).map(|p| sol.y.get(p, i + 1) - sol.y.get(p, i) + c.get(p, i) * d).collect();
        let bound = 5.0 * std_dev(&inc) / (n as f64).sqrt();
        assert!(mean(&inc).abs() <= bound + 1e-12, "node {i}");
    }
}

#[test]
fn apriori_ratio_stable_under_doubling() {
    let run = |n: usize, seed: u64| {
        let (ens, xi) = brownian_terminal(n, 50, seed);
        let f0 = PathMatrix::zeros(n, 51);
        let sol = solve_bsde_frozen(&ens, &xi, &f0, &RegressionBasis::default()).unwrap();
        apriori_ratio(&sol, &xi, &f0, ens.grid().delta()).unwrap().ratio
    };
    let (a, b) = (run(5_000, 1), run(10_000, 2));
    assert!(a.is_finite() && (b / a - 1.0).abs() <= 0.2, "{a} {b}");
}

#[test]
fn monte_carlo_error_halves_when_particles_quadruple() {
    // Pooled RMS of Ytilde - B over all nodes and particles, averaged over seeds.
    let pooled = |n: usize, seed0: u64| -> f64 {
        let mut acc = 0.0;
        for s in seed0..seed0 + 8 {
            let (ens, xi) = brownian_terminal(n, 100, s);
            let sol = solve_bsde_frozen(&ens, &xi, &PathMatrix::zeros(n, 101), &RegressionBasis::default()).unwrap();
            let mut e = 0.0;
            for i in 0..=100 {
                for p in 0..n {
                    let d = sol.y.get(p, i) - ens.brownian().get(p, i);
                    e += d * d;
                }
            }
            acc += e / (n as f64 * 101.0);
        }
        (acc / 8.0).sqrt()
    };
    let ratio = pooled(10_000, 1000) / pooled(2_500, 0);
    assert!((0.35..=0.7).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_idempotent_without_ridge(seed in any::<u64>(), deg in 0usize..4) {
        let g = make_grid(0.0, 1.0, 4).unwrap();
        let ens = simulate_brownian(&g, 300, seed).unwrap();
        let state = ens.brownian().column(4);
        let target: Vec<f64> = ens.brownian().column(2).iter().map(|b| b.cos()).collect();
        let basis = RegressionBasis::new(deg, 0.0).unwrap();
        let once = regress_conditional(&target, state, &basis).unwrap();
        let twice = regress_conditional(&once, state, &basis).unwrap();
        let scale = once.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn deterministic_across_runs(seed in any::<u64>()) {
        let g = make_grid(0.0, 0.5, 10).unwrap();
        let a = simulate_brownian(&g, 50, seed).unwrap();
        let b = simulate_brownian(&g, 50, seed).unwrap();
        prop_assert_eq!(a.brownian(), b.brownian());
    }

    #[test]
    fn apriori_homogeneous(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let (ens, xi) = brownian_terminal(300, 10, seed);
        let f0 = PathMatrix::zeros(300, 11);
        let basis = RegressionBasis::default();
        let s1 = solve_bsde_frozen(&ens, &xi, &f0, &basis).unwrap();
        let xs: Vec<f64> = xi.iter().map(|v| v * scale).collect();
        let s2 = solve_bsde_frozen(&ens, &xs, &f0, &basis).unwrap();
        let r1 = apriori_ratio(&s1, &xi, &f0, 0.1).unwrap().ratio;
        let r2 = apriori_ratio(&s2, &xs, &f0, 0.1).unwrap().ratio;
        prop_assert!((r1 - r2).abs() <= 1e-8 * r1.max(1.0));
    }
}
