#![allow(dead_code)]

use mfbsde_core::grid::{make_grid, TimeGrid};
use mfbsde_core::skorokhod::{BspProblem, SpProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Piecewise-linear path through `knots` random values, evaluated on the grid.
pub fn piecewise_linear(rng: &mut impl Rng, grid: &TimeGrid, knots: usize, scale: f64) -> Vec<f64> {
    let vals: Vec<f64> = (0..=knots).map(|_| rng.random_range(-scale..scale)).collect();
    let t0 = grid.t_start();
    let h = grid.horizon();
    grid.nodes()
        .iter()
        .map(|t| {
            let u = (t - t0) / h * knots as f64;
            let j = (u.floor() as usize).min(knots - 1);
            let w = u - j as f64;
            vals[j] * (1.0 - w) + vals[j + 1] * w
        })
        .collect()
}

/// Random linear band `[lo + a t, lo + w + b t]` with width at least `0.3`.
pub fn random_band(rng: &mut impl Rng, grid: &TimeGrid) -> (Vec<f64>, Vec<f64>) {
    let lo0 = rng.random_range(-1.0..0.0);
    let w = rng.random_range(0.7..1.5);
    let a = rng.random_range(-0.2..0.2);
    let b = rng.random_range(-0.2..0.2);
    let lower: Vec<f64> = grid.nodes().iter().map(|t| lo0 + a * t).collect();
    let upper: Vec<f64> = grid.nodes().iter().map(|t| lo0 + w + b * t).collect();
    (lower, upper)
}

/// Forward problem with `s_0` inside the band at time zero.
pub fn random_sp(rng: &mut impl Rng, n: usize) -> SpProblem {
    let grid = make_grid(0.0, 1.0, n).unwrap();
    let (lower, upper) = random_band(rng, &grid);
    let knots = rng.random_range(2..12);
    let mut s = piecewise_linear(rng, &grid, knots, 3.0);
    let start = lower[0] + rng.random_range(0.1..0.9) * (upper[0] - lower[0]);
    let shift = start - s[0];
    s.iter_mut().for_each(|v| *v += shift);
    SpProblem::band(grid, s, lower, upper).unwrap()
}

/// Backward problem with the anchor inside the terminal band.
pub fn random_bsp(rng: &mut impl Rng, n: usize) -> BspProblem {
    let grid = make_grid(0.0, 1.0, n).unwrap();
    let (lower, upper) = random_band(rng, &grid);
    let knots = rng.random_range(2..12);
    let s = piecewise_linear(rng, &grid, knots, 3.0);
    let a = lower[n] + rng.random_range(0.1..0.9) * (upper[n] - lower[n]);
    BspProblem::band(grid, s, a, lower, upper).unwrap()
}

pub fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
