use alloc::vec::Vec;

use crate::bv::BVPath;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::loss::LossPair;
use crate::matrix::{mean, std_dev, PathMatrix};

/// One Picard step: distances between successive iterates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardStep {
    pub dy: f64,
    pub dz: f64,
    pub dk: f64,
}

impl PicardStep {
    pub fn total(&self) -> f64 {
        self.dy + self.dz + self.dk
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PicardHistory {
    pub steps: Vec<PicardStep>,
}

impl PicardHistory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.steps.iter().map(PicardStep::total).collect()
    }

    /// Ratios of successive total distances.
    pub fn ratios(&self) -> Vec<f64> {
        let t = self.totals();
        t.windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }

    /// Largest ratio once the distances are above round-off.
    pub fn contraction_factor(&self) -> Option<f64> {
        let t = self.totals();
        t.windows(2)
            .skip(1)
            .filter(|w| w[0] > 1e-13)
            .map(|w| w[1] / w[0])
            .reduce(f64::max)
    }
}

/// Per-node mean-constraint values and flat-off residuals of a solution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintReport {
    pub mean_l: Vec<f64>,
    pub mean_r: Vec<f64>,
    pub std_l: Vec<f64>,
    pub std_r: Vec<f64>,
    /// Running sums of `|E[R]| dK_up`, node `i` paired with `K_{i+1} - K_i`.
    pub flatoff_r: Vec<f64>,
    /// Running sums of `|E[L]| dK_down`.
    pub flatoff_l: Vec<f64>,
    pub n_particles: usize,
    pub total_variation: f64,
}

impl ConstraintReport {
    pub fn evaluate(ens: &ParticleEnsemble, y: &PathMatrix, k: &BVPath, lp: &LossPair) -> Result<Self> {
        let grid = ens.grid();
        let n = grid.n_nodes();
        if y.n_nodes() != n || k.values().len() != n || y.n_particles() != ens.n_particles() {
            return Err(Error::invalid("solution shape does not match the ensemble"));
        }
        let marks = ens.marks();
        let mut rep = Self {
            n_particles: ens.n_particles(),
            total_variation: k.total_variation(),
            ..Self::default()
        };
        let (mut acc_r, mut acc_l) = (0.0, 0.0);
        for i in 0..n {
            let t = grid.node(i);
            let col = y.column(i);
            let lv: Vec<f64> = col.iter().zip(marks).map(|(&x, &m)| lp.l(t, x, m)).collect();
            let rv: Vec<f64> = col.iter().zip(marks).map(|(&x, &m)| lp.r(t, x, m)).collect();
            let (ml, mr) = (mean(&lv), mean(&rv));
            if i + 1 < n {
                acc_r += mr.abs() * (k.up()[i + 1] - k.up()[i]);
                acc_l += ml.abs() * (k.down()[i + 1] - k.down()[i]);
            }
            rep.mean_l.push(ml);
            rep.mean_r.push(mr);
            rep.std_l.push(std_dev(&lv));
            rep.std_r.push(std_dev(&rv));
            rep.flatoff_r.push(acc_r);
            rep.flatoff_l.push(acc_l);
        }
        Ok(rep)
    }

    fn noise(&self, s: f64) -> f64 {
        3.0 * s / libm::sqrt(self.n_particles as f64)
    }

    /// Largest constraint excess over the `3 std / sqrt(N)` band (<= 0 means pass).
    pub fn worst_constraint_excess(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.mean_l.len() {
            worst = worst.max(self.mean_l[i] - self.noise(self.std_l[i]));
            worst = worst.max(-self.mean_r[i] - self.noise(self.std_r[i]));
        }
        worst
    }

    /// Flat-off tolerance `3 std / sqrt(N) · TV(K)` with the largest per-node std.
    pub fn flatoff_tolerance(&self) -> f64 {
        let s = self
            .std_l
            .iter()
            .chain(&self.std_r)
            .copied()
            .fold(0.0f64, f64::max);
        self.noise(s) * self.total_variation
    }

    pub fn flatoff_totals(&self) -> (f64, f64) {
        (
            self.flatoff_r.last().copied().unwrap_or(0.0),
            self.flatoff_l.last().copied().unwrap_or(0.0),
        )
    }

    /// Constraint and flat-off checks at Monte Carlo tolerance. A tiny absolute
    /// slack absorbs root-solver round-off when the std vanishes.
    pub fn passes(&self) -> bool {
        let (fr, fl) = self.flatoff_totals();
        let tol = self.flatoff_tolerance() + 1e-9;
        self.worst_constraint_excess() <= 1e-9 && fr <= tol && fl <= tol
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub constraints: ConstraintReport,
    pub picard: PicardHistory,
    /// Sup distances between successive outer resistance iterates.
    pub outer_history: Vec<f64>,
    pub contraction_factor: Option<f64>,
    /// Slab boundaries (node indices, ascending) of a stitched solve.
    pub slabs: Vec<usize>,
    pub used_fallback_slabs: bool,
}

/// `(Y, Z, K)` on a particle ensemble; `K` is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTriple {
    pub y: PathMatrix,
    pub z: PathMatrix,
    pub k: BVPath,
    pub diagnostics: Diagnostics,
}

impl SolutionTriple {
    pub fn mean_y(&self) -> Vec<f64> {
        self.y.column_means()
    }

    pub fn std_y(&self) -> Vec<f64> {
        (0..self.y.n_nodes()).map(|i| std_dev(self.y.column(i))).collect()
    }

    /// Per-node `E[|Z|^2]`.
    pub fn z_second_moments(&self) -> Vec<f64> {
        (0..self.z.n_nodes())
            .map(|i| {
                let c = self.z.column(i);
                c.iter().map(|z| z * z).sum::<f64>() / c.len() as f64
            })
            .collect()
    }

    /// `sup_x |Y|` over all particles and nodes.
    pub fn sup_abs_y(&self) -> f64 {
        self.y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
