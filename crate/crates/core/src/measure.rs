//! Equal-weight empirical laws on the real line.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Empirical measure of a finite sample, stored as sorted order statistics.
///
/// The mean and first absolute moment are cached because drivers query them
/// once per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
    mean: f64,
    abs_mean: f64,
}

impl EmpiricalMeasure {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empirical measure needs at least one sample"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("empirical measure samples must be finite"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        // Moments use the caller's order so they agree bitwise with `matrix::mean`.
        let mean = samples.iter().sum::<f64>() / n;
        let abs_mean = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
        Ok(Self {
            samples: sorted,
            mean,
            abs_mean,
        })
    }

    /// Point mass at `x`, represented with `n` copies.
    pub fn dirac(x: f64, n: usize) -> Result<Self> {
        Self::new(&alloc::vec![x; n.max(1)])
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `W1(self, δ0)`, the first absolute moment.
    pub fn abs_mean(&self) -> f64 {
        self.abs_mean
    }

    /// Translates every sample by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let samples: Vec<f64> = self.samples.iter().map(|v| v + c).collect();
        let n = samples.len() as f64;
        Self {
            mean: samples.iter().sum::<f64>() / n,
            abs_mean: samples.iter().map(|v| v.abs()).sum::<f64>() / n,
            samples,
        }
    }
}

/// Wasserstein-1 distance between two empirical measures with the same sample count,
/// computed from matched order statistics.
pub fn w1_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::invalid("W1 on empirical measures needs equal sample counts"));
    }
    let total: f64 = mu
        .samples
        .iter()
        .zip(&nu.samples)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / mu.len() as f64)
}
