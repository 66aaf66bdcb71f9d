use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Uniform partition of `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
    delta: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(Error::invalid("grid endpoints must be finite"));
        }
        if t_end <= t_start {
            return Err(Error::invalid("grid span must be positive"));
        }
        if n_steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        let delta = (t_end - t_start) / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps)
            .map(|i| t_start + i as f64 * delta)
            .collect();
        nodes[n_steps] = t_end;
        Ok(Self {
            t_start,
            t_end,
            n_steps,
            delta,
            nodes,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Sub-grid over nodes `first..=last`, keeping the parent's node times.
    pub fn window(&self, first: usize, last: usize) -> Result<Self> {
        if last <= first || last > self.n_steps {
            return Err(Error::invalid("grid window must cover at least one step"));
        }
        Ok(Self {
            t_start: self.nodes[first],
            t_end: self.nodes[last],
            n_steps: last - first,
            delta: self.delta,
            nodes: self.nodes[first..=last].to_vec(),
        })
    }
}

/// Builds the uniform grid with `n_steps` steps on `[t_start, t_end]`.
pub fn make_grid(t_start: f64, t_end: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(t_start, t_end, n_steps)
}
