//! Least-squares Monte Carlo backward recursion for BSDEs driven by the ensemble's
//! Brownian motion.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::matrix::{mean, PathMatrix};

/// Polynomial basis in the standardized state, with a ridge penalty on every
/// coefficient except the intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionBasis {
    pub degree: usize,
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge: 1e-8,
        }
    }
}

impl RegressionBasis {
    pub fn new(degree: usize, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::invalid("ridge must be finite and nonnegative"));
        }
        if degree > 12 {
            return Err(Error::invalid("polynomial degree above 12 is not supported"));
        }
        Ok(Self { degree, ridge })
    }
}

/// Least-squares projection of `target` onto polynomials of `state`.
pub fn regress_conditional(target: &[f64], state: &[f64], basis: &RegressionBasis) -> Result<Vec<f64>> {
    Regressor::new(state, basis)?.fit(target)
}

/// Factorized normal equations for one cross-section, reusable across targets.
pub struct Regressor {
    design: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    n: usize,
}

/// Pivot ratio below which the normal equations count as singular.
const SINGULAR_RATIO: f64 = 1e-13;

impl Regressor {
    pub fn new(state: &[f64], basis: &RegressionBasis) -> Result<Self> {
        let n = state.len();
        if n == 0 {
            return Err(Error::invalid("regression needs at least one sample"));
        }
        let m = mean(state);
        let var = state.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        let sd = libm::sqrt(var);
        let cols = if basis.degree == 0 || !(sd > 1e-300) { 1 } else { basis.degree + 1 };
        let mut design = DMatrix::<f64>::zeros(n, cols);
        for (p, &x) in state.iter().enumerate() {
            let u = if cols > 1 { (x - m) / sd } else { 0.0 };
            let mut v = 1.0;
            for j in 0..cols {
                design[(p, j)] = v;
                v *= u;
            }
        }
        if cols == 1 {
            return Ok(Self { design, chol: None, n });
        }
        let mut gram = design.tr_mul(&design) / n as f64;
        for j in 1..cols {
            gram[(j, j)] += basis.ridge;
        }
        let chol = nalgebra::Cholesky::new(gram.clone())
            .ok_or_else(|| Error::numerical("normal equations are not positive definite", None))?;
        let l = chol.l_dirty();
        let dmax = (0..cols).map(|j| gram[(j, j)]).fold(0.0f64, f64::max);
        let pmin = (0..cols).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
        if pmin < SINGULAR_RATIO * dmax {
            return Err(Error::numerical("normal equations are numerically singular", None));
        }
        Ok(Self {
            design,
            chol: Some(chol),
            n,
        })
    }

    pub fn fit(&self, target: &[f64]) -> Result<Vec<f64>> {
        if target.len() != self.n {
            return Err(Error::invalid("target and state lengths differ"));
        }
        match &self.chol {
            None => {
                let m = mean(target);
                Ok(vec![m; self.n])
            }
            Some(chol) => {
                let y = DVector::from_column_slice(target);
                let rhs = self.design.tr_mul(&y) / self.n as f64;
                let coef = chol.solve(&rhs);
                let fitted = &self.design * coef;
                if fitted.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numerical("regression produced non-finite values", None));
                }
                Ok(fitted.as_slice().to_vec())
            }
        }
    }
}

/// `(Ytilde, Z)` on the ensemble with the terminal samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub y: PathMatrix,
    pub z: PathMatrix,
    pub terminal: Vec<f64>,
}

fn check_shapes(ens: &ParticleEnsemble, xi: &[f64]) -> Result<()> {
    if xi.len() != ens.n_particles() {
        return Err(Error::invalid("terminal samples must match the ensemble"));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("terminal samples must be finite"));
    }
    Ok(())
}

fn at_step(e: Error, i: usize) -> Error {
    match e {
        Error::NumericalFailure { context, .. } => Error::NumericalFailure { context, step: Some(i) },
        other => other,
    }
}

/// One backward step: `(E_i[Y_{i+1}], E_i[(Y_{i+1} - E_i[Y_{i+1}]) dB_i] / delta)`.
fn conditional_step(ens: &ParticleEnsemble, y_next: &[f64], i: usize, basis: &RegressionBasis) -> Result<(Vec<f64>, Vec<f64>)> {
    let delta = ens.grid().delta();
    let reg = Regressor::new(ens.brownian().column(i), basis).map_err(|e| at_step(e, i))?;
    let ey = reg.fit(y_next).map_err(|e| at_step(e, i))?;
    let db = ens.increment(i);
    // The fitted mean is a function of B_{t_i}, so subtracting it leaves the
    // conditional covariance unchanged and removes most of the variance.
    let target: Vec<f64> = y_next.iter().zip(&ey).zip(&db).map(|((y, e), d)| (y - e) * d).collect();
    let ez = reg.fit(&target).map_err(|e| at_step(e, i))?;
    Ok((ey, ez.into_iter().map(|v| v / delta).collect()))
}

/// Backward recursion with a given generator process: `Y_i = E_i[Y_{i+1}] + C_i delta`.
pub fn solve_bsde_frozen(ens: &ParticleEnsemble, xi: &[f64], c_proc: &PathMatrix, basis: &RegressionBasis) -> Result<BsdeSolution> {
    check_shapes(ens, xi)?;
    let n = ens.grid().n_steps();
    let np = ens.n_particles();
    if c_proc.n_particles() != np || c_proc.n_nodes() != n + 1 {
        return Err(Error::invalid("generator process shape does not match the ensemble"));
    }
    let delta = ens.grid().delta();
    let mut y = PathMatrix::zeros(np, n + 1);
    let mut z = PathMatrix::zeros(np, n + 1);
    y.column_mut(n).copy_from_slice(xi);
    for i in (0..n).rev() {
        let (ey, ez) = conditional_step(ens, y.column(i + 1), i, basis)?;
        let c = c_proc.column(i);
        for (p, v) in y.column_mut(i).iter_mut().enumerate() {
            *v = ey[p] + c[p] * delta;
        }
        z.column_mut(i).copy_from_slice(&ez);
    }
    let last = z.column(n - 1).to_vec();
    z.column_mut(n).copy_from_slice(&last);
    Ok(BsdeSolution {
        y,
        z,
        terminal: xi.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Driver at `(Y_i, Z_i)`, solved by an inner fixed point.
    Implicit,
    /// Driver at `(Y_{i+1}, Z_i)` inside the conditional expectation.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverOptions {
    pub basis: RegressionBasis,
    pub scheme: Scheme,
    /// `z` arguments are clamped to `[-r, r]` before the driver sees them.
    pub z_truncation: Option<f64>,
    pub inner_max_iter: usize,
    pub inner_tol: f64,
}

impl Default for DriverOptions {
    fn default() -> Self {
        Self {
            basis: RegressionBasis::default(),
            scheme: Scheme::Implicit,
            z_truncation: None,
            inner_max_iter: 50,
            inner_tol: 1e-10,
        }
    }
}

/// Backward recursion with a per-particle driver `f(node, particle, y, z)`.
pub fn solve_bsde_driver(
    ens: &ParticleEnsemble,
    xi: &[f64],
    f: &dyn Fn(usize, usize, f64, f64) -> f64,
    opts: &DriverOptions,
) -> Result<BsdeSolution> {
    check_shapes(ens, xi)?;
    let n = ens.grid().n_steps();
    let np = ens.n_particles();
    let delta = ens.grid().delta();
    let clamp = |z: f64| match opts.z_truncation {
        Some(r) => z.clamp(-r, r),
        None => z,
    };
    let mut y = PathMatrix::zeros(np, n + 1);
    let mut z = PathMatrix::zeros(np, n + 1);
    y.column_mut(n).copy_from_slice(xi);
    for i in (0..n).rev() {
        let (ey, ez) = conditional_step(ens, y.column(i + 1), i, &opts.basis)?;
        match opts.scheme {
            Scheme::Implicit => {
                let mut col = Vec::with_capacity(np);
                for p in 0..np {
                    let zp = clamp(ez[p]);
                    let mut yp = ey[p];
                    let mut converged = false;
                    for _ in 0..opts.inner_max_iter {
                        let next = ey[p] + delta * f(i, p, yp, zp);
                        if !next.is_finite() {
                            break;
                        }
                        let d = (next - yp).abs();
                        yp = next;
                        if d <= opts.inner_tol * (1.0 + yp.abs()) {
                            converged = true;
                            break;
                        }
                    }
                    if !converged {
                        return Err(Error::numerical("implicit inner iteration diverged", Some(i)));
                    }
                    col.push(yp);
                }
                y.column_mut(i).copy_from_slice(&col);
            }
            Scheme::Explicit => {
                let yn = y.column(i + 1);
                let target: Vec<f64> = (0..np).map(|p| yn[p] + delta * f(i, p, yn[p], clamp(ez[p]))).collect();
                let reg = Regressor::new(ens.brownian().column(i), &opts.basis).map_err(|e| at_step(e, i))?;
                let fitted = reg.fit(&target).map_err(|e| at_step(e, i))?;
                y.column_mut(i).copy_from_slice(&fitted);
            }
        }
        z.column_mut(i).copy_from_slice(&ez);
    }
    let last = z.column(n - 1).to_vec();
    z.column_mut(n).copy_from_slice(&last);
    Ok(BsdeSolution {
        y,
        z,
        terminal: xi.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriReport {
    /// `E[sup |Y|^2] + E[int |Z|^2]`
    pub numerator: f64,
    /// `E[|xi|^2 + (int |f(0)|)^2]`
    pub denominator: f64,
    pub ratio: f64,
    /// Nonzero solution with vanishing data.
    pub degenerate: bool,
}

/// Empirical ratio of the two sides of the `p = 2` a priori estimate.
pub fn apriori_ratio(sol: &BsdeSolution, xi: &[f64], f0: &PathMatrix, delta: f64) -> Result<AprioriReport> {
    let np = sol.y.n_particles();
    let n = sol.y.n_nodes() - 1;
    if xi.len() != np || f0.n_particles() != np || f0.n_nodes() != n + 1 {
        return Err(Error::invalid("a priori inputs do not match the solution"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..np {
        let mut sup = 0.0f64;
        let mut qz = 0.0;
        let mut intf = 0.0;
        for i in 0..=n {
            sup = sup.max(sol.y.get(p, i).abs());
            if i < n {
                qz += sol.z.get(p, i) * sol.z.get(p, i) * delta;
                intf += f0.get(p, i).abs() * delta;
            }
        }
        num += sup * sup + qz;
        den += xi[p] * xi[p] + intf * intf;
    }
    num /= np as f64;
    den /= np as f64;
    let (ratio, degenerate) = if den > 0.0 {
        (num / den, false)
    } else if num == 0.0 {
        (0.0, false)
    } else {
        (f64::INFINITY, true)
    };
    Ok(AprioriReport {
        numerator: num,
        denominator: den,
        ratio,
        degenerate,
    })
}

/// Grid proxy of the BMO norm: `max_i max_p E_i[sum_{j >= i} |Z_j|^2 delta]`.
pub fn bmo_proxy(ens: &ParticleEnsemble, z: &PathMatrix, basis: &RegressionBasis) -> Result<f64> {
    let n = ens.grid().n_steps();
    let np = ens.n_particles();
    if z.n_particles() != np || z.n_nodes() != n + 1 {
        return Err(Error::invalid("Z shape does not match the ensemble"));
    }
    let delta = ens.grid().delta();
    let mut tail = vec![0.0; np];
    let mut best = 0.0f64;
    for i in (0..n).rev() {
        for (p, t) in tail.iter_mut().enumerate() {
            *t += z.get(p, i) * z.get(p, i) * delta;
        }
        let fitted = regress_conditional(&tail, ens.brownian().column(i), basis).map_err(|e| at_step(e, i))?;
        let m = fitted.iter().copied().fold(0.0f64, f64::max);
        best = best.max(m);
    }
    Ok(best)
}
