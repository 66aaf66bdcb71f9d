//! Doubly mean-reflected BSDE solvers: the constant-driver construction, Picard
//! iteration of the frozen map, and slab stitching for quadratic drivers.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::bsde::{solve_bsde_frozen, RegressionBasis};
use crate::bv::BVPath;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::generator::{DriverInput, GeneratorSpec, Regime, ResistanceSpec};
use crate::loss::LossPair;
use crate::matrix::{mean, PathMatrix};
use crate::measure::EmpiricalMeasure;
use crate::skorokhod::{solve_bsp, BspProblem, LossConstants, MeanLoss};
use crate::solution::{ConstraintReport, Diagnostics, PicardHistory, PicardStep, SolutionTriple};

/// Deterministic backward problem for the mean of `Ytilde`:
/// `s_t = m_0 - m_t`, `a = E[xi]`, `l(t, x) = E[L(t, Ytilde_t - m_t + x)]`.
pub fn mean_reflection_problem(ens: &ParticleEnsemble, ytilde: &PathMatrix, lp: &LossPair) -> Result<BspProblem> {
    let grid = ens.grid().clone();
    let n = grid.n_steps();
    let m = ytilde.column_means();
    let s: Vec<f64> = m.iter().map(|mi| m[0] - mi).collect();
    let centred: Arc<Vec<Vec<f64>>> = Arc::new(
        (0..=n)
            .map(|i| ytilde.column(i).iter().map(|y| y - m[i]).collect())
            .collect(),
    );
    let marks: Arc<Vec<f64>> = Arc::new(ens.marks().to_vec());
    let times: Arc<Vec<f64>> = Arc::new(grid.nodes().to_vec());
    let mk = |which: bool| -> MeanLoss {
        let (centred, marks, times, lp) = (centred.clone(), marks.clone(), times.clone(), lp.clone());
        Arc::new(move |i: usize, x: f64| {
            let t = times[i];
            let col = &centred[i];
            let mut acc = 0.0;
            for (dy, mk) in col.iter().zip(marks.iter()) {
                acc += if which { lp.r(t, dy + x, *mk) } else { lp.l(t, dy + x, *mk) };
            }
            acc / col.len() as f64
        })
    };
    let constants = LossConstants::new(lp.c, lp.big_c, lp.separation)?;
    BspProblem::from_arcs(grid, s, m[n], mk(false), mk(true), constants)
}

/// Reflects `Ytilde` in mean: `Y = Ytilde + K_T - K_t` with `K` from the backward
/// Skorokhod problem of the mean path.
pub fn reflect_in_mean(ens: &ParticleEnsemble, ytilde: &PathMatrix, lp: &LossPair) -> Result<(PathMatrix, BVPath)> {
    let p = mean_reflection_problem(ens, ytilde, lp)?;
    let sol = solve_bsp(&p)?;
    let n = ens.grid().n_steps();
    let k = sol.k.values();
    let np = ens.n_particles();
    let y = PathMatrix::from_fn(np, n + 1, |pi, i| ytilde.get(pi, i) + (k[n] - k[i]));
    Ok((y, sol.k))
}

/// Mean-reflected BSDE with a given generator process `C`.
pub fn solve_constant_driver_dmr(
    ens: &ParticleEnsemble,
    xi: &[f64],
    c_proc: &PathMatrix,
    lp: &LossPair,
    basis: &RegressionBasis,
) -> Result<SolutionTriple> {
    let aux = solve_bsde_frozen(ens, xi, c_proc, basis)?;
    let (y, k) = reflect_in_mean(ens, &aux.y, lp)?;
    let constraints = ConstraintReport::evaluate(ens, &y, &k, lp)?;
    Ok(SolutionTriple {
        y,
        z: aux.z,
        k,
        diagnostics: Diagnostics {
            constraints,
            ..Diagnostics::default()
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub basis: RegressionBasis,
    /// Clamp on the `z` argument of the driver (quadratic drivers).
    pub z_truncation: Option<f64>,
    /// Retry on slabs when the global iteration fails and the resistance is fixed.
    pub allow_fallback: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 50,
            basis: RegressionBasis::default(),
            z_truncation: None,
            allow_fallback: true,
        }
    }
}

/// Driver process `f(t_i, y_i, P_{y_i}, z_i, P_{z_i}, g_i)` for frozen inputs.
pub fn driver_process(
    ens: &ParticleEnsemble,
    y: &PathMatrix,
    z: &PathMatrix,
    g: &[f64],
    f: &GeneratorSpec,
    z_truncation: Option<f64>,
) -> Result<PathMatrix> {
    let grid = ens.grid();
    let np = ens.n_particles();
    let nn = grid.n_nodes();
    if g.len() != nn {
        return Err(Error::invalid("resistance values must match the grid"));
    }
    let clamp = |v: f64| match z_truncation {
        Some(r) => v.clamp(-r, r),
        None => v,
    };
    let mut out = PathMatrix::zeros(np, nn);
    for i in 0..nn {
        let t = grid.node(i);
        if f.constant {
            let dummy = EmpiricalMeasure::dirac(0.0, 1)?;
            let v = f.eval(&DriverInput {
                t,
                y: 0.0,
                mu_y: &dummy,
                z: 0.0,
                mu_z: &dummy,
                k: g[i],
            });
            out.column_mut(i).iter_mut().for_each(|c| *c = v);
            continue;
        }
        let zc: Vec<f64> = z.column(i).iter().map(|v| clamp(*v)).collect();
        let mu_y = EmpiricalMeasure::new(y.column(i))?;
        let mu_z = EmpiricalMeasure::new(&zc)?;
        let yc = y.column(i);
        for (p, c) in out.column_mut(i).iter_mut().enumerate() {
            *c = f.eval(&DriverInput {
                t,
                y: yc[p],
                mu_y: &mu_y,
                z: zc[p],
                mu_z: &mu_z,
                k: g[i],
            });
        }
    }
    if !out.is_finite() {
        return Err(Error::numerical("driver produced non-finite values", None));
    }
    Ok(out)
}

/// Frozen inputs of the solution map.
#[derive(Debug, Clone, Copy)]
pub struct Frozen<'a> {
    pub y: &'a PathMatrix,
    pub z: &'a PathMatrix,
    pub k: &'a BVPath,
}

/// One application of the solution map: freeze `(y, z, G(k))` in the driver and
/// solve the constant-driver mean-reflected BSDE.
pub fn gamma_map(
    frozen: Frozen<'_>,
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    resistance: Option<&ResistanceSpec>,
    opts: &PicardOptions,
) -> Result<SolutionTriple> {
    let g = resistance_values(ens, frozen.k, f, resistance);
    gamma_with_values(frozen.y, frozen.z, &g, ens, xi, f, lp, opts)
}

fn resistance_values(ens: &ParticleEnsemble, k: &BVPath, f: &GeneratorSpec, resistance: Option<&ResistanceSpec>) -> Vec<f64> {
    match resistance {
        Some(spec) if !f.k_free => spec.eval_path(ens.grid(), k.values()),
        _ => vec![0.0; ens.grid().n_nodes()],
    }
}

#[allow(clippy::too_many_arguments)]
fn gamma_with_values(
    y: &PathMatrix,
    z: &PathMatrix,
    g: &[f64],
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    opts: &PicardOptions,
) -> Result<SolutionTriple> {
    let c = driver_process(ens, y, z, g, f, opts.z_truncation)?;
    solve_constant_driver_dmr(ens, xi, &c, lp, &opts.basis)
}

/// `(||dY||_S2, ||dZ||_M2, sup |dK|)` between two iterates.
pub fn iterate_distance(a: &SolutionTriple, b: &SolutionTriple, delta: f64) -> PicardStep {
    let np = a.y.n_particles();
    let nn = a.y.n_nodes();
    let mut sy = 0.0;
    let mut sz = 0.0;
    for p in 0..np {
        let mut sup = 0.0f64;
        let mut q = 0.0;
        for i in 0..nn {
            sup = sup.max((a.y.get(p, i) - b.y.get(p, i)).abs());
            if i + 1 < nn {
                let d = a.z.get(p, i) - b.z.get(p, i);
                q += d * d * delta;
            }
        }
        sy += sup * sup;
        sz += q;
    }
    PicardStep {
        dy: libm::sqrt(sy / np as f64),
        dz: libm::sqrt(sz / np as f64),
        dk: a.k.sup_distance(&b.k),
    }
}

fn zero_triple(ens: &ParticleEnsemble) -> SolutionTriple {
    let np = ens.n_particles();
    let nn = ens.grid().n_nodes();
    SolutionTriple {
        y: PathMatrix::zeros(np, nn),
        z: PathMatrix::zeros(np, nn),
        k: BVPath::zero(ens.grid().clone()),
        diagnostics: Diagnostics::default(),
    }
}

enum Resist<'a> {
    Fixed(Vec<f64>),
    Dynamic(&'a ResistanceSpec),
}

fn picard_core(
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    resist: &Resist<'_>,
    opts: &PicardOptions,
) -> Result<(SolutionTriple, PicardHistory)> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("Picard tolerance must be positive"));
    }
    let delta = ens.grid().delta();
    let mut prev = zero_triple(ens);
    let mut hist = PicardHistory::default();
    for _ in 0..opts.max_iter.max(1) {
        let g = match resist {
            Resist::Fixed(g) => g.clone(),
            Resist::Dynamic(spec) if !f.k_free => spec.eval_path(ens.grid(), prev.k.values()),
            Resist::Dynamic(_) => vec![0.0; ens.grid().n_nodes()],
        };
        let next = gamma_with_values(&prev.y, &prev.z, &g, ens, xi, f, lp, opts)?;
        let step = iterate_distance(&next, &prev, delta);
        hist.steps.push(step);
        prev = next;
        if !step.total().is_finite() {
            break;
        }
        // A driver of time only makes one application exact.
        let exact = f.constant && (f.k_free || matches!(resist, Resist::Fixed(_)));
        if exact || step.total() < opts.tol {
            prev.diagnostics.contraction_factor = hist.contraction_factor();
            prev.diagnostics.picard = hist.clone();
            return Ok((prev, hist));
        }
    }
    Err(Error::ConvergenceFailure {
        context: format!("Picard iteration did not reach tol {}", opts.tol),
        history: hist.totals(),
    })
}

/// Picard iteration of the solution map started from `(0, 0, 0)`.
///
/// With `k_frozen` the resistance argument is fixed to `G(k_frozen)` (or to
/// `k_frozen` itself when no `G` is given); otherwise `G` is applied to the current
/// compensator. If the global iteration fails and the resistance argument does not
/// depend on the iterate, the horizon is split into successively more slabs.
pub fn picard_solve(
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    resistance: Option<&ResistanceSpec>,
    k_frozen: Option<&BVPath>,
    opts: &PicardOptions,
) -> Result<(SolutionTriple, PicardHistory)> {
    match (resistance, k_frozen) {
        (Some(spec), None) if !f.k_free => picard_core(ens, xi, f, lp, &Resist::Dynamic(spec), opts),
        (Some(spec), Some(k)) if !f.k_free => picard_with_values(ens, xi, f, lp, &spec.eval_path(ens.grid(), k.values()), opts),
        (None, Some(k)) if !f.k_free => picard_with_values(ens, xi, f, lp, k.values(), opts),
        _ => picard_with_values(ens, xi, f, lp, &vec![0.0; ens.grid().n_nodes()], opts),
    }
}

/// Picard iteration with the resistance argument fixed to per-node values `g`.
pub fn picard_with_values(
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    g: &[f64],
    opts: &PicardOptions,
) -> Result<(SolutionTriple, PicardHistory)> {
    if g.len() != ens.grid().n_nodes() {
        return Err(Error::invalid("resistance values must match the grid"));
    }
    match picard_core(ens, xi, f, lp, &Resist::Fixed(g.to_vec()), opts) {
        Err(Error::ConvergenceFailure { context, history }) => {
            if !opts.allow_fallback {
                return Err(Error::ConvergenceFailure { context, history });
            }
            let n = ens.grid().n_steps();
            let mut count = 2;
            loop {
                let m = count.min(n);
                match solve_slabbed(ens, xi, f, lp, g, &even_slabs(n, m), opts) {
                    Ok(mut sol) => {
                        sol.diagnostics.used_fallback_slabs = true;
                        let hist = sol.diagnostics.picard.clone();
                        return Ok((sol, hist));
                    }
                    Err(Error::ConvergenceFailure { .. }) if m < n => count *= 2,
                    Err(e) => return Err(e),
                }
            }
        }
        other => other,
    }
}

/// Node boundaries `0 = b_0 < ... < b_m = n` splitting `n` steps into `m` near-equal slabs.
pub fn even_slabs(n: usize, m: usize) -> Vec<usize> {
    let m = m.clamp(1, n.max(1));
    (0..=m).map(|j| (j * n) / m).collect()
}

/// Solves slab by slab from the terminal end; each slab takes the `Y` of the later
/// slab at its right node as terminal data, and `K` is assembled from increments.
pub fn solve_slabbed(
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    g: &[f64],
    bounds: &[usize],
    opts: &PicardOptions,
) -> Result<SolutionTriple> {
    let n = ens.grid().n_steps();
    let np = ens.n_particles();
    if bounds.len() < 2 || bounds[0] != 0 || *bounds.last().unwrap() != n || bounds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("slab boundaries must increase from 0 to n"));
    }
    let mut y = PathMatrix::zeros(np, n + 1);
    let mut z = PathMatrix::zeros(np, n + 1);
    let mut dk = vec![0.0; n];
    let mut terminal = xi.to_vec();
    let mut hist = PicardHistory::default();
    let m = bounds.len() - 1;
    for s in (0..m).rev() {
        let (a, b) = (bounds[s], bounds[s + 1]);
        let sub = ens.window(a, b)?;
        let resist = Resist::Fixed(g[a..=b].to_vec());
        let (sol, h) = picard_core(&sub, &terminal, f, lp, &resist, opts).map_err(|e| match e {
            Error::ConvergenceFailure { context, history } => Error::ConvergenceFailure {
                context: format!("{context} on slab {s} (nodes {a}..={b})"),
                history,
            },
            other => other,
        })?;
        let last = if s == m - 1 { b } else { b - 1 };
        for i in a..=last {
            y.column_mut(i).copy_from_slice(sol.y.column(i - a));
            z.column_mut(i).copy_from_slice(sol.z.column(i - a));
        }
        let ks = sol.k.values();
        for i in a..b {
            dk[i] = ks[i - a + 1] - ks[i - a];
        }
        terminal = sol.y.column(0).to_vec();
        hist.steps.extend(h.steps);
    }
    let mut kv = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    kv.push(0.0);
    for d in &dk {
        acc += d;
        kv.push(acc);
    }
    let k = BVPath::new(ens.grid().clone(), kv)?;
    let constraints = ConstraintReport::evaluate(ens, &y, &k, lp)?;
    Ok(SolutionTriple {
        y,
        z,
        k,
        diagnostics: Diagnostics {
            constraints,
            picard: hist,
            slabs: bounds.to_vec(),
            ..Diagnostics::default()
        },
    })
}

/// `A0 = (3 + 24C/c) H + 2M/c + (2H/lambda + 1/3) e^{9 lambda H}`.
pub fn compute_a0(h: f64, m: f64, c: f64, big_c: f64, lambda: f64) -> f64 {
    (3.0 + 24.0 * big_c / c) * h + 2.0 * m / c + (2.0 * h / lambda + 1.0 / 3.0) * libm::exp(9.0 * lambda * h)
}

/// `(Hbar1, Hbar)` with `Hbar1 = (H + Hhat T) e^{lambda T}` and
/// `Hbar = (1 + 3C/c) Hbar1 + 3C/c H + M/c`.
pub fn compute_bar_h(h: f64, h_hat: f64, lambda: f64, t: f64, big_c: f64, c: f64, m: f64) -> (f64, f64) {
    let h1 = (h + h_hat * t) * libm::exp(lambda * t);
    let r = big_c / c;
    (h1, (1.0 + 3.0 * r) * h1 + 3.0 * r * h + m / c)
}

/// `Ahat = 1 + 36C/c + 2 sqrt(1 + 12 lambda^2 + 24 lambda^2 A^2)`.
pub fn compute_a_hat(c: f64, big_c: f64, lambda: f64, a_tilde: f64) -> f64 {
    let l2 = lambda * lambda;
    1.0 + 36.0 * big_c / c + 2.0 * libm::sqrt(1.0 + 12.0 * l2 + 24.0 * l2 * a_tilde * a_tilde)
}

/// `(delta_A, delta_hat_A)`: the horizon on which the map keeps the ball of radius
/// `A` and the horizon on which it also contracts.
pub fn compute_slab_lengths(h: f64, lambda: f64, alpha: f64, c: f64, big_c: f64, a_tilde: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must lie in [0, 1)"));
    }
    if !(h > 0.0 && lambda > 0.0 && a_tilde > 0.0 && c > 0.0 && big_c > 0.0) {
        return Err(Error::invalid("slab constants must be positive"));
    }
    let la = lambda * a_tilde;
    let la_alpha = lambda * libm::pow(a_tilde, 1.0 + alpha);
    let d1 = h / (9.0 * la);
    let d2 = h * h / (9.0 * la * la);
    let d3 = libm::pow(h / (3.0 * la_alpha), 2.0 / (1.0 - alpha));
    let delta_a = d1.min(d2).min(d3);
    let a_hat = compute_a_hat(c, big_c, lambda, a_tilde);
    let e1 = 1.0 / (4.0 * a_hat * lambda);
    let e2 = 1.0 / (12.0 * a_hat * lambda);
    let e3 = libm::pow(
        1.0 / (24.0 * libm::pow(a_tilde, 2.0 * alpha) * a_hat * a_hat * lambda * lambda),
        1.0 / (1.0 - alpha),
    );
    Ok((delta_a, e1.min(e2).min(e3).min(delta_a)))
}

/// Number of slabs of length at most `delta_hat` covering `horizon`, capped at the
/// number of grid steps.
pub fn slab_count(horizon: f64, delta_hat: f64, n_steps: usize) -> usize {
    let raw = libm::ceil(horizon / delta_hat - 1e-9);
    if !(raw.is_finite()) || raw >= n_steps as f64 {
        n_steps
    } else {
        (raw as usize).max(1)
    }
}

/// Structural constants of the quadratic construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticConstants {
    pub h: f64,
    pub h_tilde: f64,
    pub h_hat: f64,
    pub m: f64,
    pub c: f64,
    pub big_c: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub horizon: f64,
    pub bar_h1: f64,
    pub bar_h: f64,
    pub a_tilde0: f64,
    pub a_hat: f64,
    pub delta_a: f64,
    pub delta_hat_a: f64,
}

impl QuadraticConstants {
    /// `Hhat = Htilde + lambda sup|k|`; `A0` is evaluated at `Hbar`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(h: f64, h_tilde: f64, k_sup: f64, m: f64, c: f64, big_c: f64, lambda: f64, alpha: f64, horizon: f64) -> Result<Self> {
        let h_hat = h_tilde + lambda * k_sup;
        let (bar_h1, bar_h) = compute_bar_h(h, h_hat, lambda, horizon, big_c, c, m);
        let a_tilde0 = compute_a0(bar_h, m, c, big_c, lambda);
        let (delta_a, delta_hat_a) = compute_slab_lengths(bar_h, lambda, alpha, c, big_c, a_tilde0)?;
        Ok(Self {
            h,
            h_tilde,
            h_hat,
            m,
            c,
            big_c,
            lambda,
            alpha,
            horizon,
            bar_h1,
            bar_h,
            a_tilde0,
            a_hat: compute_a_hat(c, big_c, lambda, a_tilde0),
            delta_a,
            delta_hat_a,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticOptions {
    /// Declared bound `H >= ||xi||_inf ∨ H2`.
    pub h: f64,
    pub picard: PicardOptions,
}

/// Empirical checks of the quadratic bounds on a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticBounds {
    pub sup_y: f64,
    pub sup_k: f64,
    pub bmo: f64,
}

/// Quadratic mean-reflected solve on slabs of length at most `delta_hat_A`.
pub fn solve_quadratic_dmr(
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &GeneratorSpec,
    lp: &LossPair,
    resistance: Option<&ResistanceSpec>,
    k_frozen: Option<&BVPath>,
    opts: &QuadraticOptions,
) -> Result<(SolutionTriple, QuadraticConstants)> {
    if f.regime != Regime::Quadratic {
        return Err(Error::invalid("quadratic solve needs a quadratic driver"));
    }
    let h_tilde = f
        .h_tilde
        .ok_or_else(|| Error::invalid("quadratic solve needs the bound Htilde"))?;
    let xi_sup = xi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if xi_sup > opts.h {
        return Err(Error::invalid(format!("terminal sup {xi_sup} exceeds declared H = {}", opts.h)));
    }
    if f.h2 > opts.h {
        return Err(Error::invalid("declared H must dominate H2"));
    }
    let grid = ens.grid();
    let nn = grid.n_nodes();
    let g = match (resistance, k_frozen) {
        (_, _) if f.k_free => vec![0.0; nn],
        (Some(spec), Some(k)) => spec.eval_path(grid, k.values()),
        (None, Some(k)) => k.values().to_vec(),
        _ => vec![0.0; nn],
    };
    let k_sup = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let qc = QuadraticConstants::new(opts.h, h_tilde, k_sup, lp.m_bound, lp.c, lp.big_c, f.lambda, f.alpha, grid.horizon())?;
    let m = slab_count(grid.horizon(), qc.delta_hat_a, grid.n_steps());
    let bounds = even_slabs(grid.n_steps(), m);
    let sol = solve_slabbed(ens, xi, f, lp, &g, &bounds, &opts.picard)?;
    Ok((sol, qc))
}

/// Sup norms of a quadratic solution for comparison with `Hbar` and `A`.
pub fn quadratic_bounds(ens: &ParticleEnsemble, sol: &SolutionTriple, basis: &RegressionBasis) -> Result<QuadraticBounds> {
    Ok(QuadraticBounds {
        sup_y: sol.sup_abs_y(),
        sup_k: sol.k.sup_abs(),
        bmo: crate::bsde::bmo_proxy(ens, &sol.z, basis)?,
    })
}

/// Empirical `sqrt(E[xi^2])`, used to scale default tolerances.
pub fn terminal_l2(xi: &[f64]) -> f64 {
    libm::sqrt(mean(&xi.iter().map(|v| v * v).collect::<Vec<_>>()))
}
