mod common;

use common::*;
use mfbsde_core::grid::make_grid;
use mfbsde_core::skorokhod::*;
use proptest::prelude::*;

#[test]
fn oracle_equivalence_on_random_inputs() {
    let mut r = rng(1);
    let start = std::time::Instant::now();
    for _ in 0..100 {
        let p = random_sp(&mut r, 200);
        let a = solve_sp(&p).unwrap();
        let b = oracle_discrete_reflection(&p).unwrap();
        assert!(sup_gap(a.k.values(), b.k.values()) <= 1e-8);
        assert!(sup_gap(&a.x, &b.x) <= 1e-8);
        assert!(sp_residuals(&p, &a).passes(1e-10));
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn backward_closed_case() {
    let grid = make_grid(0.0, 1.0, 100).unwrap();
    let s: Vec<f64> = grid.nodes().iter().map(|t| 2.0 * t).collect();
    let p = BspProblem::band(grid.clone(), s, 0.0, vec![0.0; 101], vec![1.0; 101]).unwrap();
    let sol = solve_bsp(&p).unwrap();
    for (i, t) in grid.nodes().iter().enumerate() {
        assert!((sol.k.values()[i] + (2.0 * t).min(1.0)).abs() < 1e-10);
        assert!((sol.x[i] - (2.0 * (1.0 - t)).min(1.0)).abs() < 1e-10);
    }
    assert!(bsp_residuals(&p, &sol).passes(1e-10));
}

#[test]
fn compensator_bound_on_random_problems() {
    let mut r = rng(2);
    for _ in 0..100 {
        let p = random_sp(&mut r, 150);
        let sol = solve_sp(&p).unwrap();
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let slack = sup(&sol.phi) + sup(&sol.psi) - sol.k.sup_abs();
        assert!(slack >= -1e-10, "slack {slack}");
    }
}

#[test]
fn forward_stability_on_random_pairs() {
    let mut r = rng(3);
    for _ in 0..50 {
        let p1 = random_sp(&mut r, 120);
        let p2 = if r.random_bool(0.5) {
            random_sp(&mut r, 120)
        } else {
            // A nearby problem: perturbed input with the same start, shifted band.
            let d = r.random_range(-0.05..0.05);
            let amp = r.random_range(0.0..0.3);
            let s2: Vec<f64> = p1.s.iter().zip(p1.grid.nodes()).map(|(v, t)| v + amp * (7.0 * t).sin()).collect();
            let n = p1.grid.n_nodes();
            let lower: Vec<f64> = (0..n).map(|i| (p1.r)(i, 0.0) * -1.0 + d).collect();
            let upper: Vec<f64> = (0..n).map(|i| (p1.l)(i, 0.0) * -1.0 + d).collect();
            SpProblem::band(p1.grid.clone(), s2, lower, upper).unwrap()
        };
        let rep = stability_gap_sp(&p1, &p2).unwrap();
        assert!(rep.slack >= -1e-10, "{rep:?}");
    }
}

#[test]
fn backward_stability_on_random_pairs() {
    let mut r = rng(4);
    for _ in 0..50 {
        let p1 = random_bsp(&mut r, 120);
        let p2 = random_bsp(&mut r, 120);
        let rep = stability_gap_bsp(&p1, &p2).unwrap();
        assert!(rep.slack >= -1e-10, "{rep:?}");
    }
}

#[test]
fn time_reversal_is_bitwise() {
    let mut r = rng(5);
    for _ in 0..20 {
        let p = random_bsp(&mut r, 100);
        let direct = solve_bsp(&p).unwrap();
        let rev = reverse_solution(&solve_sp(&p.reversed()).unwrap(), &p.grid);
        assert_eq!(direct.x, rev.x);
        assert_eq!(direct.k.values(), rev.k.values());
    }
}

#[test]
fn nonlinear_losses_match_oracle() {
    let mut r = rng(6);
    for _ in 0..20 {
        let grid = make_grid(0.0, 1.0, 80).unwrap();
        let s = piecewise_linear(&mut r, &grid, 5, 2.0);
        let s0 = s[0];
        let eps = r.random_range(0.0..0.4);
        let l = move |_: usize, x: f64| x + eps * x.sin() - (s0 + 1.0);
        let rr = move |_: usize, x: f64| x + eps * x.sin() - (s0 - 1.0);
        let p = SpProblem::new(grid, s, l, rr, LossConstants::new(1.0 - eps, 1.0 + eps, 0.5).unwrap()).unwrap();
        let a = solve_sp(&p).unwrap();
        let b = oracle_discrete_reflection(&p).unwrap();
        assert!(sup_gap(a.k.values(), b.k.values()) <= 1e-8);
    }
}

use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feasibility_and_flatoff(seed in any::<u64>(), n in 5usize..120) {
        let mut r = rng(seed);
        let p = random_sp(&mut r, n);
        let sol = solve_sp(&p).unwrap();
        let res = sp_residuals(&p, &sol);
        prop_assert!(res.passes(1e-10), "{res:?}");
    }

    #[test]
    fn backward_feasibility_and_anchor(seed in any::<u64>(), n in 5usize..120) {
        let mut r = rng(seed);
        let p = random_bsp(&mut r, n);
        let sol = solve_bsp(&p).unwrap();
        prop_assert!(bsp_residuals(&p, &sol).passes(1e-10));
        prop_assert!((sol.x[n] - p.a).abs() < 1e-12);
        prop_assert_eq!(sol.k.values()[0], 0.0);
    }

    #[test]
    fn shift_of_constant_inside_band_is_free(seed in any::<u64>()) {
        let mut r = rng(seed);
        let grid = make_grid(0.0, 1.0, 40).unwrap();
        let c = r.random_range(-0.4..0.4);
        let p = SpProblem::band(grid, vec![c; 41], vec![-0.5; 41], vec![0.5; 41]).unwrap();
        let sol = solve_sp(&p).unwrap();
        prop_assert!(sol.k.sup_abs() == 0.0);
    }

    #[test]
    fn total_variation_bounded_by_input_variation(seed in any::<u64>()) {
        // For a constant band the minimal compensator never moves more than the input.
        let mut r = rng(seed);
        let grid = make_grid(0.0, 1.0, 60).unwrap();
        let s = piecewise_linear(&mut r, &grid, 6, 2.0);
        let s0 = s[0];
        let p = SpProblem::band(grid, s.clone(), vec![s0 - 0.5; 61], vec![s0 + 0.5; 61]).unwrap();
        let sol = solve_sp(&p).unwrap();
        let tv_s: f64 = s.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        prop_assert!(sol.k.total_variation() <= tv_s + 1e-10);
    }
}
