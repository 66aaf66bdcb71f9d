use mfbsde_core::bsde::RegressionBasis;
use mfbsde_core::ensemble::simulate_brownian;
use mfbsde_core::generator::GeneratorSpec;
use mfbsde_core::grid::make_grid;
use mfbsde_core::loss::LossPair;
use mfbsde_core::matrix::{mean, PathMatrix};
use mfbsde_core::meanreflect::*;
use mfbsde_core::skorokhod::{solve_bsp, BspProblem};
use mfbsde_core::{ParticleEnsemble, SolutionTriple};
use proptest::prelude::*;

fn setup(n: usize, steps: usize, horizon: f64, seed: u64) -> (ParticleEnsemble, Vec<f64>) {
    let g = make_grid(0.0, horizon, steps).unwrap();
    let ens = simulate_brownian(&g, n, seed).unwrap();
    let xi = ens.brownian().column(steps).to_vec();
    (ens, xi)
}

fn assert_invariants(ens: &ParticleEnsemble, sol: &SolutionTriple, lp: &LossPair) {
    let rep = mfbsde_core::solution::ConstraintReport::evaluate(ens, &sol.y, &sol.k, lp).unwrap();
    assert!(rep.passes(), "{rep:?}");
}

#[test]
fn inactive_band_leaves_auxiliary_solution() {
    let (ens, xi) = setup(2_000, 50, 1.0, 1);
    let lp = LossPair::band(|_| -1.0, |_| 1.0, 2.0, 2.0).unwrap();
    let sol = solve_constant_driver_dmr(&ens, &xi, &PathMatrix::zeros(2_000, 51), &lp, &RegressionBasis::default()).unwrap();
    assert_eq!(sol.k.sup_abs(), 0.0);
    let aux = mfbsde_core::bsde::solve_bsde_frozen(&ens, &xi, &PathMatrix::zeros(2_000, 51), &RegressionBasis::default()).unwrap();
    assert_eq!(sol.y, aux.y);
}

#[test]
fn translation_equivariance_with_wide_band() {
    let (ens, xi) = setup(2_000, 50, 1.0, 2);
    let lp = LossPair::band(|_| -10.0, |_| 10.0, 20.0, 20.0).unwrap();
    let c = PathMatrix::zeros(2_000, 51);
    let base = solve_constant_driver_dmr(&ens, &xi, &c, &lp, &RegressionBasis::default()).unwrap();
    let shifted: Vec<f64> = xi.iter().map(|v| v + 0.7).collect();
    let sol = solve_constant_driver_dmr(&ens, &shifted, &c, &lp, &RegressionBasis::default()).unwrap();
    assert_eq!(sol.k.sup_abs(), 0.0);
    for i in 0..=50 {
        for p in 0..2_000 {
            assert!((sol.y.get(p, i) - base.y.get(p, i) - 0.7).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_driver_decouples_into_deterministic_reflection() {
    let n = 10_000;
    let start = std::time::Instant::now();
    let (ens, xi) = setup(n, 100, 1.0, 7);
    let lp = LossPair::band(|t| 1.0 - 2.0 * t, |_| 2.0, 1.0, 4.0).unwrap();
    let sol = solve_constant_driver_dmr(&ens, &xi, &PathMatrix::zeros(n, 101), &lp, &RegressionBasis::default()).unwrap();
    let grid = ens.grid().clone();
    let lower: Vec<f64> = grid.nodes().iter().map(|t| 1.0 - 2.0 * t).collect();
    let oracle = solve_bsp(&BspProblem::band(grid, vec![0.0; 101], 0.0, lower, vec![2.0; 101]).unwrap()).unwrap();
    let m = sol.mean_y();
    for i in 0..=100 {
        assert!((m[i] - oracle.x[i]).abs() <= 5.0 / (n as f64).sqrt(), "node {i}");
    }
    assert_invariants(&ens, &sol, &lp);
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

fn contraction_driver() -> GeneratorSpec {
    GeneratorSpec::lipschitz(|inp| -0.5 * inp.y + 0.25 * inp.mu_y.mean(), 0.5, 0.0).unwrap()
}

#[test]
fn picard_contracts_and_matches_mean_recursion() {
    let n = 4_000;
    let (ens, b) = setup(n, 50, 0.25, 3);
    let xi: Vec<f64> = b.iter().map(|v| 1.0 + v).collect();
    let lo = 0.97;
    let lp = LossPair::band(move |_| lo, |_| 3.0, 1.0, 5.0).unwrap();
    let opts = PicardOptions::default();
    let (sol, hist) = picard_solve(&ens, &xi, &contraction_driver(), &lp, None, None, &opts).unwrap();
    assert!(hist.len() <= 15);
    let ratios = hist.ratios();
    assert!(ratios.iter().skip(1).all(|r| *r <= 0.5), "{ratios:?}");
    assert!(!sol.diagnostics.used_fallback_slabs);
    // Mean recursion at the fixed point: m_i = max(lo, m_{i+1} / (1 + delta / 4)).
    let d = ens.grid().delta();
    let mut m = vec![0.0; 51];
    m[50] = mean(&xi);
    for i in (0..50).rev() {
        m[i] = (m[i + 1] / (1.0 + 0.25 * d)).max(lo);
    }
    let my = sol.mean_y();
    for i in 0..=50 {
        assert!((my[i] - m[i]).abs() < 1e-3, "node {i}: {} vs {}", my[i], m[i]);
    }
    assert!(sol.k.sup_abs() > 0.0);
    assert_invariants(&ens, &sol, &lp);
}

#[test]
fn picard_idempotent_beyond_convergence() {
    let (ens, xi) = setup(1_000, 20, 0.25, 4);
    let lp = LossPair::band(|_| -2.0, |_| 2.0, 4.0, 4.0).unwrap();
    let f = contraction_driver();
    let o1 = PicardOptions::default();
    let o2 = PicardOptions { max_iter: 200, ..o1 };
    let (a, _) = picard_solve(&ens, &xi, &f, &lp, None, None, &o1).unwrap();
    let (b, _) = picard_solve(&ens, &xi, &f, &lp, None, None, &o2).unwrap();
    assert_eq!(a.y, b.y);
    assert_eq!(a.k, b.k);
}

#[test]
fn time_only_driver_needs_one_application() {
    let (ens, xi) = setup(1_000, 20, 1.0, 5);
    let lp = LossPair::band(|t| 0.5 - t, |_| 2.0, 1.0, 3.0).unwrap();
    let f = GeneratorSpec::time_only(|t| t, 0.0);
    let (sol, hist) = picard_solve(&ens, &xi, &f, &lp, None, None, &PicardOptions::default()).unwrap();
    assert_eq!(hist.len(), 1);
    let c = PathMatrix::from_fn(1_000, 21, |_, i| ens.grid().node(i));
    let direct = solve_constant_driver_dmr(&ens, &xi, &c, &lp, &RegressionBasis::default()).unwrap();
    assert_eq!(sol.y, direct.y);
}

#[test]
fn slabbed_and_global_agree() {
    let (ens, xi) = setup(2_000, 40, 0.25, 6);
    let lp = LossPair::band(|t| 0.3 - 2.0 * t, |_| 2.0, 1.0, 3.0).unwrap();
    let f = contraction_driver();
    let opts = PicardOptions { tol: 1e-8, ..PicardOptions::default() };
    let (global, _) = picard_solve(&ens, &xi, &f, &lp, None, None, &opts).unwrap();
    let slabbed = solve_slabbed(&ens, &xi, &f, &lp, &[0.0; 41], &even_slabs(40, 4), &opts).unwrap();
    let (gm, sm) = (global.mean_y(), slabbed.mean_y());
    for i in 0..=40 {
        assert!((gm[i] - sm[i]).abs() < 1e-3, "node {i}");
    }
    assert_invariants(&ens, &slabbed, &lp);
}

#[test]
fn cole_hopf_quadratic_bounds() {
    let n = 10_000;
    let (ens, xi) = setup(n, 100, 1.0, 8);
    let lp = LossPair::band(|_| -10.0, |_| 10.0, 20.0, 20.0).unwrap();
    let f = GeneratorSpec::quadratic(|inp| 0.5 * inp.z * inp.z, 0.5, 0.0, 0.0, Some(0.0)).unwrap();
    let h = xi.iter().fold(0.0f64, |m, v| m.max(v.abs())).ceil();
    let opts = QuadraticOptions {
        h,
        picard: PicardOptions { z_truncation: Some(3.0), ..PicardOptions::default() },
    };
    let (sol, qc) = solve_quadratic_dmr(&ens, &xi, &f, &lp, None, None, &opts).unwrap();
    let b = quadratic_bounds(&ens, &sol, &opts.picard.basis).unwrap();
    assert!(b.sup_y <= qc.bar_h && b.sup_k <= qc.a_tilde0, "{b:?} {qc:?}");
    assert!((sol.mean_y()[0] - 0.5).abs() < 0.05);
    assert_invariants(&ens, &sol, &lp);
}

#[test]
fn tanh_terminal_quadratic_bounds_and_lipschitz_consistency() {
    let n = 4_000;
    let (ens, b) = setup(n, 50, 1.0, 9);
    let xi: Vec<f64> = b.iter().map(|v| v.tanh()).collect();
    let lp = LossPair::band(|t| 0.2 - 0.5 * t, |_| 2.0, 1.5, 3.0).unwrap();
    let f = GeneratorSpec::quadratic(|inp| 0.2 * inp.z * inp.z, 0.2, 0.0, 0.0, Some(0.0)).unwrap();
    let opts = QuadraticOptions {
        h: 1.0,
        picard: PicardOptions { z_truncation: Some(3.0), ..PicardOptions::default() },
    };
    let (sol, qc) = solve_quadratic_dmr(&ens, &xi, &f, &lp, None, None, &opts).unwrap();
    let bnd = quadratic_bounds(&ens, &sol, &opts.picard.basis).unwrap();
    assert!(bnd.sup_y <= qc.bar_h && bnd.sup_k <= qc.a_tilde0);
    assert!(sol.k.sup_abs() > 0.0);
    assert_invariants(&ens, &sol, &lp);
    // A tiny quadratic coefficient behaves like the Lipschitz solver.
    let small = GeneratorSpec::quadratic(|inp| 1e-4 * inp.z * inp.z, 1e-4, 0.0, 0.0, Some(0.0)).unwrap();
    let (q, _) = solve_quadratic_dmr(&ens, &xi, &small, &lp, None, None, &opts).unwrap();
    let (l, _) = picard_solve(&ens, &xi, &small, &lp, None, None, &opts.picard).unwrap();
    let (qm, lm) = (q.mean_y(), l.mean_y());
    for i in 0..=50 {
        assert!((qm[i] - lm[i]).abs() < 5.0 / (n as f64).sqrt());
    }
}

#[test]
fn fixed_gap_in_resistance_moves_compensator_boundedly() {
    let (ens, xi) = setup(2_000, 40, 0.25, 10);
    let lp = LossPair::band(|t| 0.3 - 2.0 * t, |_| 2.0, 1.0, 3.0).unwrap();
    let f = GeneratorSpec::lipschitz(|inp| -0.5 * inp.y + 0.5 * inp.k, 0.5, 0.0).unwrap();
    let opts = PicardOptions::default();
    let (a, _) = picard_with_values(&ens, &xi, &f, &lp, &[0.0; 41], &opts).unwrap();
    let (b, _) = picard_with_values(&ens, &xi, &f, &lp, &[0.2; 41], &opts).unwrap();
    // Shifting the resistance argument by 0.2 shifts the driver mean by 0.1; over
    // the horizon the compensator moves by at most a multiple of 0.1 * T.
    let gap = a.k.sup_distance(&b.k);
    assert!(gap > 0.0 && gap <= 4.0 * 0.1 * 0.25, "{gap}");
}

proptest! {
    #[test]
    fn a0_monotone_in_large_lambda(h in 0.1f64..3.0, m in 0.0f64..3.0, c in 0.5f64..1.0, r in 1.0f64..3.0, l1 in 1.0f64..4.0, dl in 0.001f64..1.0) {
        let (a, b) = (compute_a0(h, m, c, c * r, l1), compute_a0(h, m, c, c * r, l1 + dl));
        prop_assert!(b > a);
    }

    #[test]
    fn a0_dominated_by_exponential(h in 0.5f64..1.0) {
        let l = 60.0;
        let ratio = compute_a0(h, 1.0, 1.0, 2.0, l) / ((9.0 * l * h).exp() / 3.0);
        prop_assert!((1.0..1.2).contains(&ratio));
    }

    #[test]
    fn a0_first_term_at_unit_ratio(h in 0.1f64..3.0, l in 0.01f64..1.0) {
        let expect = 27.0 * h + (2.0 * h / l + 1.0 / 3.0) * (9.0 * l * h).exp();
        prop_assert!((compute_a0(h, 0.0, 1.0, 1.0, l) - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn slab_lengths_ordered_and_monotone(h in 0.1f64..3.0, l in 0.01f64..1.0, alpha in 0.0f64..0.9, a in 1.0f64..50.0) {
        let (d, dh) = compute_slab_lengths(h, l, alpha, 1.0, 2.0, a).unwrap();
        prop_assert!(dh <= d);
        let (d2, _) = compute_slab_lengths(h, l, alpha, 1.0, 2.0, 2.0 * a).unwrap();
        prop_assert!(d2 < d);
        let ah = compute_a_hat(1.0, 2.0, l, a);
        prop_assert!(1.0 / (12.0 * ah * l) <= 1.0 / (4.0 * ah * l));
    }

    #[test]
    fn bar_h_reduces_to_h(h in 0.1f64..3.0, hh in 0.0f64..3.0, l in 0.0f64..1.0) {
        prop_assert_eq!(compute_bar_h(h, hh, l, 0.0, 2.0, 1.0, 1.0).0, h);
        prop_assert_eq!(compute_bar_h(h, 0.0, 0.0, 1.0, 2.0, 1.0, 1.0).0, h);
    }
}
