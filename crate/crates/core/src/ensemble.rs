use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::matrix::{mean, PathMatrix};

/// `N` Brownian particle paths on a grid plus named per-node value arrays.
///
/// Each particle draws from its own ChaCha stream keyed by `(seed, particle)`, so
/// the paths do not depend on generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    seed: u64,
    brownian: PathMatrix,
    marks: Vec<f64>,
    values: BTreeMap<String, PathMatrix>,
}

/// Simulates `n_particles` standard Brownian paths started at zero.
pub fn simulate_brownian(grid: &TimeGrid, n_particles: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n_particles < 2 {
        return Err(Error::invalid("an ensemble needs at least two particles"));
    }
    let n = grid.n_nodes();
    let sd = libm::sqrt(grid.delta());
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_particles);
    for p in 0..n_particles {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let mut row = Vec::with_capacity(n);
        let mut b = 0.0;
        row.push(b);
        for _ in 1..n {
            let g: f64 = rng.sample(StandardNormal);
            b += sd * g;
            row.push(b);
        }
        rows.push(row);
    }
    let brownian = PathMatrix::from_fn(n_particles, n, |p, i| rows[p][i]);
    ParticleEnsemble::from_paths(grid.clone(), seed, brownian)
}

impl ParticleEnsemble {
    /// Wraps externally supplied paths; the terminal column becomes the marks.
    pub fn from_paths(grid: TimeGrid, seed: u64, brownian: PathMatrix) -> Result<Self> {
        if brownian.n_nodes() != grid.n_nodes() {
            return Err(Error::invalid("path matrix does not match the grid"));
        }
        if brownian.n_particles() < 2 {
            return Err(Error::invalid("an ensemble needs at least two particles"));
        }
        if brownian.column(0).iter().any(|&b| b != 0.0) {
            return Err(Error::invalid("Brownian paths must start at zero"));
        }
        let marks = brownian.column(grid.n_steps()).to_vec();
        Ok(Self {
            grid,
            seed,
            brownian,
            marks,
            values: BTreeMap::new(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_particles(&self) -> usize {
        self.brownian.n_particles()
    }

    pub fn brownian(&self) -> &PathMatrix {
        &self.brownian
    }

    /// Per-particle terminal marks, used by random losses and terminal data.
    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    /// Increment `B_{t_{i+1}} - B_{t_i}` for every particle.
    pub fn increment(&self, i: usize) -> Vec<f64> {
        let a = self.brownian.column(i);
        let b = self.brownian.column(i + 1);
        a.iter().zip(b).map(|(x, y)| y - x).collect()
    }

    pub fn insert_values(&mut self, name: impl Into<String>, m: PathMatrix) -> Result<()> {
        if m.n_particles() != self.n_particles() || m.n_nodes() != self.grid.n_nodes() {
            return Err(Error::invalid("value matrix shape does not match the ensemble"));
        }
        self.values.insert(name.into(), m);
        Ok(())
    }

    pub fn values(&self, name: &str) -> Option<&PathMatrix> {
        self.values.get(name)
    }

    /// Sub-ensemble on nodes `first..=last`. Brownian values keep their absolute
    /// levels and the marks stay those of the full horizon.
    pub fn window(&self, first: usize, last: usize) -> Result<Self> {
        let grid = self.grid.window(first, last)?;
        let brownian = self.brownian.columns(first, last);
        let values = self
            .values
            .iter()
            .map(|(k, v)| (k.clone(), v.columns(first, last)))
            .collect();
        Ok(Self {
            grid,
            seed: self.seed,
            brownian,
            marks: self.marks.clone(),
            values,
        })
    }

    /// Worst standardized deviation of the increment means (in units of `1/sqrt(N)`)
    /// and of the increment variances (in units of `delta/sqrt(N)`).
    pub fn increment_statistics(&self) -> (f64, f64) {
        let n = self.n_particles() as f64;
        let d = self.grid.delta();
        let mut worst_mean = 0.0f64;
        let mut worst_var = 0.0f64;
        for i in 0..self.grid.n_steps() {
            let inc = self.increment(i);
            let m = mean(&inc);
            let v = inc.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            worst_mean = worst_mean.max(m.abs() * libm::sqrt(n));
            worst_var = worst_var.max((v - d).abs() * libm::sqrt(n) / d);
        }
        (worst_mean, worst_var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn terminal_mean_within_clt_bound() {
        let g = make_grid(0.0, 1.0, 100).unwrap();
        let e = simulate_brownian(&g, 10_000, 7).unwrap();
        assert!(mean(e.marks()).abs() < 0.05);
        let (wm, wv) = e.increment_statistics();
        assert!(wm < 5.0 && wv < 5.0, "{wm} {wv}");
    }

    #[test]
    fn deterministic_regeneration() {
        let g = make_grid(0.0, 1.0, 20).unwrap();
        let a = simulate_brownian(&g, 50, 3).unwrap();
        let b = simulate_brownian(&g, 50, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate_brownian(&g, 50, 4).unwrap();
        assert_ne!(a.brownian(), c.brownian());
    }

    #[test]
    fn particle_streams_independent_of_count() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let a = simulate_brownian(&g, 10, 9).unwrap();
        let b = simulate_brownian(&g, 20, 9).unwrap();
        assert_eq!(a.brownian().row(3), b.brownian().row(3));
    }

    #[test]
    fn single_particle_rejected() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        assert!(simulate_brownian(&g, 1, 0).is_err());
    }

    #[test]
    fn window_keeps_levels_and_marks() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let e = simulate_brownian(&g, 5, 1).unwrap();
        let w = e.window(4, 8).unwrap();
        assert_eq!(w.grid().n_steps(), 4);
        assert_eq!(w.brownian().column(0), e.brownian().column(4));
        assert_eq!(w.marks(), e.marks());
    }
}
