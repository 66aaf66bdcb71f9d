use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Deterministic grid function of bounded variation with its minimal
/// decomposition `k = k_up - k_down`.
#[derive(Debug, Clone, PartialEq)]
pub struct BVPath {
    grid: TimeGrid,
    k: Vec<f64>,
    k_up: Vec<f64>,
    k_down: Vec<f64>,
}

impl BVPath {
    pub fn new(grid: TimeGrid, k: Vec<f64>) -> Result<Self> {
        if k.len() != grid.n_nodes() {
            return Err(Error::invalid("compensator length must match the grid"));
        }
        let (k_up, k_down) = bv_decompose(&k)?;
        Ok(Self {
            grid,
            k,
            k_up,
            k_down,
        })
    }

    pub fn zero(grid: TimeGrid) -> Self {
        let n = grid.n_nodes();
        Self {
            grid,
            k: alloc::vec![0.0; n],
            k_up: alloc::vec![0.0; n],
            k_down: alloc::vec![0.0; n],
        }
    }

    /// Path with a constant value `c` after time zero (`k[0] = 0`).
    pub fn constant_after_start(grid: TimeGrid, c: f64) -> Result<Self> {
        let n = grid.n_nodes();
        let k: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { c }).collect();
        Self::new(grid, k)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.k
    }

    pub fn up(&self) -> &[f64] {
        &self.k_up
    }

    pub fn down(&self) -> &[f64] {
        &self.k_down
    }

    pub fn sup_abs(&self) -> f64 {
        self.k.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Total variation, `k_up[n] + k_down[n]`.
    pub fn total_variation(&self) -> f64 {
        let n = self.k.len() - 1;
        self.k_up[n] + self.k_down[n]
    }

    pub fn sup_distance(&self, other: &BVPath) -> f64 {
        self.k
            .iter()
            .zip(&other.k)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Splits a grid function with `k[0] = 0` into cumulative positive and negative
/// parts of its increments.
pub fn bv_decompose(k: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    match k.first() {
        None => return Err(Error::invalid("empty compensator")),
        Some(&k0) if k0 != 0.0 => return Err(Error::invalid("compensator must start at zero")),
        _ => {}
    }
    let mut up = Vec::with_capacity(k.len());
    let mut down = Vec::with_capacity(k.len());
    let (mut u, mut d) = (0.0, 0.0);
    up.push(0.0);
    down.push(0.0);
    for w in k.windows(2) {
        let inc = w[1] - w[0];
        if inc > 0.0 {
            u += inc;
        } else {
            d -= inc;
        }
        up.push(u);
        down.push(d);
    }
    Ok((up, down))
}
