//! Outer fixed point over the compensator for nonlinear resistance, and the
//! density pipeline for resistance `G_t(K) = k_t`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::bv::BVPath;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, ResistanceSpec};
use crate::grid::TimeGrid;
use crate::loss::LossPair;
use crate::matrix::{mean, std_dev, PathMatrix};
use crate::meanreflect::{picard_solve, picard_with_values, solve_quadratic_dmr, PicardOptions, QuadraticOptions};
use crate::measure::EmpiricalMeasure;
use crate::roots::{bracketed, ROOT_FTOL};
use crate::solution::{ConstraintReport, Diagnostics, SolutionTriple};

#[derive(Debug, Clone, PartialEq)]
pub struct OuterOptions {
    pub tol: f64,
    pub max_outer: usize,
    /// Switch to `k <- (k + k_new) / 2` once successive updates alternate in sign.
    pub relax_on_oscillation: bool,
    pub picard: PicardOptions,
    /// Inner solves go through the quadratic slab solver.
    pub quadratic: Option<QuadraticOptions>,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_outer: 60,
            relax_on_oscillation: true,
            picard: PicardOptions::default(),
            quadratic: None,
        }
    }
}

/// Tracks the sign pattern of successive updates and decides on relaxation.
struct Relaxer {
    enabled: bool,
    active: bool,
    last: Option<Vec<f64>>,
}

impl Relaxer {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            active: false,
            last: None,
        }
    }

    /// Returns the next iterate given the current one and the raw map output.
    fn step(&mut self, current: &[f64], raw: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = raw.iter().zip(current).map(|(a, b)| a - b).collect();
        if self.enabled && !self.active {
            if let Some(prev) = &self.last {
                let dot: f64 = prev.iter().zip(&diff).map(|(a, b)| a * b).sum();
                if dot < 0.0 {
                    self.active = true;
                }
            }
        }
        self.last = Some(diff);
        if self.active {
            current.iter().zip(raw).map(|(a, b)| 0.5 * (a + b)).collect()
        } else {
            raw.to_vec()
        }
    }
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Outer iteration `k <- K(inner solve at G(k))` from `k_init` (default zero).
pub fn solve_with_resistance(
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    resistance: &ResistanceSpec,
    k_init: Option<&BVPath>,
    opts: &OuterOptions,
) -> Result<SolutionTriple> {
    let grid = ens.grid().clone();
    let inner = |k: &BVPath| -> Result<SolutionTriple> {
        match &opts.quadratic {
            Some(q) => solve_quadratic_dmr(ens, xi, f, lp, Some(resistance), Some(k), q).map(|(s, _)| s),
            None => picard_solve(ens, xi, f, lp, Some(resistance), Some(k), &opts.picard).map(|(s, _)| s),
        }
    };
    let mut k = k_init.cloned().unwrap_or_else(|| BVPath::zero(grid.clone()));
    if f.k_free || resistance.lambda_g == 0.0 {
        let mut sol = inner(&k)?;
        sol.diagnostics.outer_history = vec![0.0];
        return Ok(sol);
    }
    let mut relax = Relaxer::new(opts.relax_on_oscillation);
    let mut hist = Vec::new();
    for _ in 0..opts.max_outer.max(1) {
        let mut sol = inner(&k)?;
        let d = sup_gap(sol.k.values(), k.values());
        hist.push(d);
        if d < opts.tol {
            sol.diagnostics.outer_history = hist;
            return Ok(sol);
        }
        let next = relax.step(k.values(), sol.k.values());
        k = BVPath::new(grid.clone(), next)?;
    }
    Err(Error::ConvergenceFailure {
        context: format!("outer resistance iteration did not reach tol {}", opts.tol),
        history: hist,
    })
}

/// Density `k = k_plus - k_minus` of an absolutely continuous compensator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPath {
    pub grid: TimeGrid,
    pub k: Vec<f64>,
    pub k_plus: Vec<f64>,
    pub k_minus: Vec<f64>,
}

impl DensityPath {
    pub fn from_values(grid: TimeGrid, k: Vec<f64>) -> Result<Self> {
        if k.len() != grid.n_nodes() {
            return Err(Error::invalid("density length must match the grid"));
        }
        let k_plus = k.iter().map(|v| v.max(0.0)).collect();
        let k_minus = k.iter().map(|v| (-v).max(0.0)).collect();
        Ok(Self { grid, k, k_plus, k_minus })
    }

    pub fn zero(grid: TimeGrid) -> Self {
        let n = grid.n_nodes();
        Self::from_values(grid, vec![0.0; n]).expect("length matches")
    }

    /// Empirical Lipschitz constant of the compensator, `max |k|`.
    pub fn lipschitz(&self) -> f64 {
        self.k.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `K_i = sum_{j < i} k_j delta`.
    pub fn integrate(&self) -> Result<BVPath> {
        let d = self.grid.delta();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.k.len());
        out.push(0.0);
        for v in &self.k[..self.k.len() - 1] {
            acc += v * d;
            out.push(acc);
        }
        BVPath::new(self.grid.clone(), out)
    }

    pub fn complementarity_defect(&self) -> f64 {
        self.k_plus
            .iter()
            .zip(&self.k_minus)
            .fold(0.0f64, |m, (a, b)| m.max(a.min(*b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Differencing {
    /// `(K_{i+1} - K_i) / delta`, last node copied.
    Forward,
    /// `(K_{i+1} - K_{i-1}) / (2 delta)` inside, one-sided at the ends.
    Central,
}

/// Difference quotients of `K` split into positive and negative parts.
pub fn extract_density(k: &BVPath, scheme: Differencing) -> DensityPath {
    let grid = k.grid().clone();
    let v = k.values();
    let n = grid.n_steps();
    let d = grid.delta();
    let mut out = vec![0.0; n + 1];
    for i in 0..n {
        out[i] = match scheme {
            Differencing::Forward => (v[i + 1] - v[i]) / d,
            Differencing::Central if i > 0 => (v[i + 1] - v[i - 1]) / (2.0 * d),
            Differencing::Central => (v[1] - v[0]) / d,
        };
    }
    out[n] = if n > 0 && scheme == Differencing::Forward {
        out[n - 1]
    } else {
        (v[n] - v[n - 1]) / d
    };
    DensityPath::from_values(grid, out).expect("length matches")
}

/// Declared solvability condition for the scalar root equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solvability {
    /// `b` is nondecreasing in `k`.
    Increasing,
    /// `|b(k1) - b(k2)| <= c_k |k1 - k2|` with `c_k < 1`.
    Contraction(f64),
}

/// Scalar equations `b(k) - b(0) + k = target_plus` and
/// `b(-k) - b(0) - k = -target_minus` for nonnegative `k`.
pub struct RootProblem<'a> {
    pub b_bar: Box<dyn Fn(f64) -> f64 + 'a>,
    pub target_plus: f64,
    pub target_minus: f64,
    pub condition: Solvability,
}

/// Nonnegative roots `(k_plus, k_minus)`.
pub fn solve_density_roots(rp: &RootProblem<'_>) -> Result<(f64, f64)> {
    if !(rp.target_plus >= 0.0 && rp.target_minus >= 0.0) {
        return Err(Error::invalid("density targets must be nonnegative"));
    }
    if rp.target_plus > 0.0 && rp.target_minus > 0.0 {
        return Err(Error::invalid("at most one density target may be positive"));
    }
    let factor = match rp.condition {
        Solvability::Increasing => 1.0,
        Solvability::Contraction(ck) if (0.0..1.0).contains(&ck) => 1.0 / (1.0 - ck),
        Solvability::Contraction(_) => return Err(Error::invalid("contraction constant must lie in [0, 1)")),
    };
    let b0 = (rp.b_bar)(0.0);
    let solve = |target: f64, sign: f64| -> Result<f64> {
        if target == 0.0 {
            return Ok(0.0);
        }
        // Both equations become g(k) = sign (b(sign k) - b(0)) + k - target = 0,
        // increasing under either declared condition.
        let g = |k: f64| sign * ((rp.b_bar)(sign * k) - b0) + k - target;
        let hi = target * factor;
        let (glo, ghi) = (g(0.0), g(hi));
        if !(ghi >= 0.0) || !(glo <= 0.0) {
            return Err(Error::ModelError(format!(
                "declared solvability condition fails: no root in [0, {hi}] for target {target}"
            )));
        }
        let root = bracketed(&g, 0.0, glo, hi, ghi).map_err(|_| Error::ModelError("density root search failed".into()))?;
        if g(root).abs() > ROOT_FTOL.max(1e-12 * target) {
            return Err(Error::ModelError("density root residual too large".into()));
        }
        Ok(root)
    };
    Ok((solve(rp.target_plus, 1.0)?, solve(rp.target_minus, -1.0)?))
}

/// Node classes of the assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    /// `E[R] = 0`: the lower constraint binds.
    LowerActive,
    /// `E[L] = 0`: the upper constraint binds.
    UpperActive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub classes: Vec<NodeClass>,
    /// `|b(k_i) - b(0) + k_i - k_tilde_i|` per node.
    pub equation_residual: Vec<f64>,
    /// `sum |E[R]| k_plus delta`
    pub flatoff_r: f64,
    /// `sum |E[L]| k_minus delta`
    pub flatoff_l: f64,
    /// `3 std / sqrt(N)` with the largest per-node loss std.
    pub tol_mc: f64,
}

impl DensityReport {
    pub fn max_equation_residual(&self) -> f64 {
        self.equation_residual.iter().fold(0.0f64, |m, v| m.max(*v))
    }

    pub fn passes(&self) -> bool {
        self.max_equation_residual() <= self.tol_mc && self.flatoff_r <= self.tol_mc && self.flatoff_l <= self.tol_mc
    }
}

fn b_bar_at<'a>(f: &'a GeneratorSpec, t: f64, mu_y: EmpiricalMeasure, mu_z: EmpiricalMeasure) -> Result<Box<dyn Fn(f64) -> f64 + 'a>> {
    let (_, b) = f
        .separable
        .as_ref()
        .ok_or_else(|| Error::invalid("density assembly needs a separable driver"))?;
    Ok(Box::new(move |k| b(t, &mu_y, &mu_z, k)))
}

/// Builds `(Y, Z, k)` from a solution of the resistance-free problem: `Y` and `Z`
/// are kept and `k` solves the scalar equations on the active nodes.
pub fn assemble_density_solution(
    ens: &ParticleEnsemble,
    base: &SolutionTriple,
    f: &GeneratorSpec,
    lp: &LossPair,
    condition: Solvability,
) -> Result<(SolutionTriple, DensityPath, DensityReport)> {
    let grid = ens.grid().clone();
    let n = grid.n_steps();
    let d = grid.delta();
    let tilde = extract_density(&base.k, Differencing::Forward);
    let cons = ConstraintReport::evaluate(ens, &base.y, &base.k, lp)?;
    let sqrt_n = libm::sqrt(ens.n_particles() as f64);
    let mut classes = Vec::with_capacity(n + 1);
    let mut k = vec![0.0; n + 1];
    let mut residual = vec![0.0; n + 1];
    for i in 0..=n {
        let r_active = cons.mean_r[i].abs() < 3.0 * cons.std_r[i] / sqrt_n + 1e-10;
        let l_active = cons.mean_l[i].abs() < 3.0 * cons.std_l[i] / sqrt_n + 1e-10;
        let class = match (r_active, l_active) {
            (true, true) => {
                return Err(Error::ModelError(format!("both constraints bind at node {i}")));
            }
            (true, false) => NodeClass::LowerActive,
            (false, true) => NodeClass::UpperActive,
            (false, false) => NodeClass::Interior,
        };
        classes.push(class);
        let b_bar = b_bar_at(
            f,
            grid.node(i),
            EmpiricalMeasure::new(base.y.column(i))?,
            EmpiricalMeasure::new(base.z.column(i))?,
        )?;
        if class != NodeClass::Interior {
            let rp = RootProblem {
                b_bar,
                target_plus: tilde.k_plus[i],
                target_minus: tilde.k_minus[i],
                condition,
            };
            let (kp, km) = solve_density_roots(&rp)?;
            k[i] = kp - km;
            let b0 = (rp.b_bar)(0.0);
            residual[i] = ((rp.b_bar)(k[i]) - b0 + k[i] - tilde.k[i]).abs();
        } else {
            residual[i] = tilde.k[i].abs();
        }
    }
    let density = DensityPath::from_values(grid.clone(), k)?;
    let mut flatoff_r = 0.0;
    let mut flatoff_l = 0.0;
    for i in 0..n {
        flatoff_r += cons.mean_r[i].abs() * density.k_plus[i] * d;
        flatoff_l += cons.mean_l[i].abs() * density.k_minus[i] * d;
    }
    let smax = cons.std_l.iter().chain(&cons.std_r).copied().fold(0.0f64, f64::max);
    let report = DensityReport {
        classes,
        equation_residual: residual,
        flatoff_r,
        flatoff_l,
        tol_mc: 3.0 * smax / sqrt_n,
    };
    let kpath = density.integrate()?;
    let constraints = ConstraintReport::evaluate(ens, &base.y, &kpath, lp)?;
    let sol = SolutionTriple {
        y: base.y.clone(),
        z: base.z.clone(),
        k: kpath,
        diagnostics: Diagnostics {
            constraints,
            ..base.diagnostics.clone()
        },
    };
    Ok((sol, density, report))
}

/// Fixed point `k <- density of K(inner solve with driver f(..., k))` started from
/// `k_init` (default zero).
pub fn solve_density_fixed_point(
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    k_init: Option<&[f64]>,
    opts: &OuterOptions,
) -> Result<(SolutionTriple, DensityPath)> {
    let grid = ens.grid().clone();
    let nn = grid.n_nodes();
    let mut k = match k_init {
        Some(v) if v.len() == nn => v.to_vec(),
        Some(_) => return Err(Error::invalid("initial density must match the grid")),
        None => vec![0.0; nn],
    };
    let mut relax = Relaxer::new(opts.relax_on_oscillation);
    let mut hist = Vec::new();
    for _ in 0..opts.max_outer.max(1) {
        let (mut sol, _) = picard_with_values(ens, xi, f, lp, &k, &opts.picard)?;
        let dens = extract_density(&sol.k, Differencing::Forward);
        let d = sup_gap(&dens.k, &k);
        hist.push(d);
        if d < opts.tol {
            sol.diagnostics.outer_history = hist;
            return Ok((sol, dens));
        }
        k = relax.step(&k, &dens.k);
    }
    Err(Error::ConvergenceFailure {
        context: format!("density fixed point did not reach tol {}", opts.tol),
        history: hist,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub gap_mean_y: f64,
    /// `sqrt(mean_p max_i |dY|^2)`
    pub gap_y: f64,
    /// `sqrt(mean_p sum_i |dZ|^2 delta)`
    pub gap_z: f64,
    pub gap_k: f64,
    /// `max_i max(std(Y_i), std(Z_i)) / sqrt(N)`
    pub mc_noise: f64,
    /// `None` outside the hypotheses of the uniqueness result.
    pub passed: Option<bool>,
}

/// Gaps between two solutions of the same problem, judged against `5 ×` the
/// Monte Carlo noise when `hypotheses_hold`.
pub fn uniqueness_gap(
    a: &SolutionTriple,
    b: &SolutionTriple,
    ka: &DensityPath,
    kb: &DensityPath,
    hypotheses_hold: bool,
) -> Result<UniquenessReport> {
    if a.y.n_nodes() != b.y.n_nodes() || a.y.n_particles() != b.y.n_particles() {
        return Err(Error::invalid("solutions have different shapes"));
    }
    let delta = ka.grid.delta();
    let step = crate::meanreflect::iterate_distance(a, b, delta);
    let gap_mean_y = sup_gap(&a.mean_y(), &b.mean_y());
    let n = a.y.n_nodes();
    let mut noise = 0.0f64;
    for i in 0..n {
        noise = noise.max(std_dev(a.y.column(i))).max(std_dev(a.z.column(i)));
    }
    let mc_noise = noise / libm::sqrt(a.y.n_particles() as f64);
    let gap_k = sup_gap(&ka.k, &kb.k);
    let bound = 5.0 * mc_noise;
    let passed = hypotheses_hold.then(|| gap_mean_y <= bound && step.dy <= bound && step.dz <= bound && gap_k <= bound);
    Ok(UniquenessReport {
        gap_mean_y,
        gap_y: step.dy,
        gap_z: step.dz,
        gap_k,
        mc_noise,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZMoments {
    pub per_node: Vec<f64>,
    pub max: f64,
}

/// Per-node `E[|Z_t|^2]` and its maximum.
pub fn z_moment_diagnostic(z: &PathMatrix) -> ZMoments {
    let per_node: Vec<f64> = (0..z.n_nodes())
        .map(|i| mean(&z.column(i).iter().map(|v| v * v).collect::<Vec<_>>()))
        .collect();
    let max = per_node.iter().copied().fold(0.0f64, f64::max);
    ZMoments { per_node, max }
}

/// Flags a blow-up: the maximum grew by more than `2×` when `N` was doubled.
pub fn z_moment_growth_flag(small: &ZMoments, doubled: &ZMoments) -> bool {
    doubled.max > 2.0 * small.max.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn density_of_square() {
        let g = make_grid(0.0, 1.0, 100).unwrap();
        let kv: Vec<f64> = g.nodes().iter().map(|t| t * t).collect();
        let d = extract_density(&BVPath::new(g.clone(), kv).unwrap(), Differencing::Forward);
        for i in 0..100 {
            assert!((d.k[i] - (2.0 * g.node(i) + g.delta())).abs() < 1e-12);
        }
        assert_eq!(d.k[100], d.k[99]);
        assert!(d.k_minus.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn density_of_zero() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let d = extract_density(&BVPath::zero(g), Differencing::Forward);
        assert!(d.k.iter().chain(&d.k_plus).chain(&d.k_minus).all(|v| *v == 0.0));
    }

    #[test]
    fn central_differences_on_square() {
        let g = make_grid(0.0, 1.0, 50).unwrap();
        let kv: Vec<f64> = g.nodes().iter().map(|t| t * t).collect();
        let d = extract_density(&BVPath::new(g.clone(), kv).unwrap(), Differencing::Central);
        for i in 1..50 {
            assert!((d.k[i] - 2.0 * g.node(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_by_integration() {
        let g = make_grid(0.0, 1.0, 40).unwrap();
        let kv: Vec<f64> = g.nodes().iter().map(|t| libm::sin(3.0 * t)).collect();
        let path = BVPath::new(g.clone(), kv.clone()).unwrap();
        let d = extract_density(&path, Differencing::Forward);
        let back = d.integrate().unwrap();
        for i in 0..=40 {
            assert!((back.values()[i] - kv[i]).abs() < 1e-12);
        }
    }

    fn rp(b: impl Fn(f64) -> f64 + 'static, tp: f64, tm: f64, c: Solvability) -> RootProblem<'static> {
        RootProblem {
            b_bar: Box::new(b),
            target_plus: tp,
            target_minus: tm,
            condition: c,
        }
    }

    #[test]
    fn root_examples() {
        assert_eq!(solve_density_roots(&rp(|k| k / 2.0, 0.0, 0.0, Solvability::Increasing)).unwrap(), (0.0, 0.0));
        let (kp, km) = solve_density_roots(&rp(|k| k / 2.0, 0.3, 0.0, Solvability::Increasing)).unwrap();
        assert!((kp - 0.2).abs() < 1e-12 && km == 0.0);
        let (kp, _) = solve_density_roots(&rp(|k| -0.5 * k, 0.3, 0.0, Solvability::Contraction(0.5))).unwrap();
        assert!((kp - 0.6).abs() < 1e-12);
        let (_, km) = solve_density_roots(&rp(|k| k / 2.0, 0.0, 0.3, Solvability::Increasing)).unwrap();
        assert!((km - 0.2).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_root_residual() {
        let b = |k: f64| libm::tanh(k) + 0.3 * k;
        let (kp, _) = solve_density_roots(&rp(b, 1.7, 0.0, Solvability::Increasing)).unwrap();
        assert!((b(kp) - b(0.0) + kp - 1.7).abs() < 1e-10);
    }

    #[test]
    fn false_declaration_is_model_error() {
        // b = -2k makes b(k) - b(0) + k decreasing, so "increasing" is wrong.
        let r = solve_density_roots(&rp(|k| -2.0 * k, 0.3, 0.0, Solvability::Increasing));
        assert!(matches!(r, Err(Error::ModelError(_))));
        assert!(solve_density_roots(&rp(|k| k, 0.1, 0.1, Solvability::Increasing)).is_err());
    }

    #[test]
    fn z_moments_of_constants() {
        assert_eq!(z_moment_diagnostic(&PathMatrix::zeros(3, 4)).max, 0.0);
        let m = z_moment_diagnostic(&PathMatrix::filled(3, 4, 1.0));
        assert!(m.per_node.iter().all(|v| *v == 1.0));
        assert!(!z_moment_growth_flag(&m, &m));
    }
}
