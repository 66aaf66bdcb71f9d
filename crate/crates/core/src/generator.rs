//! Driver and resistance specifications with sampled assumption checks.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::measure::{w1_distance, EmpiricalMeasure};

/// Arguments of a driver evaluation at one particle and node.
#[derive(Debug, Clone, Copy)]
pub struct DriverInput<'a> {
    pub t: f64,
    pub y: f64,
    pub mu_y: &'a EmpiricalMeasure,
    pub z: f64,
    pub mu_z: &'a EmpiricalMeasure,
    pub k: f64,
}

pub type DriverFn = Arc<dyn Fn(&DriverInput<'_>) -> f64 + Send + Sync>;
/// `b(t, mu_y, mu_z, k)` in a separable driver `a(t, y, mu_y, z, mu_z) + b(t, mu_y, mu_z, k)`.
pub type SeparableFn = Arc<dyn Fn(f64, &EmpiricalMeasure, &EmpiricalMeasure, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Lipschitz,
    Quadratic,
}

#[derive(Clone)]
pub struct GeneratorSpec {
    pub f_eval: DriverFn,
    pub regime: Regime,
    pub lambda: f64,
    pub alpha: f64,
    /// Bound on `|f(t, 0, delta_0, 0, delta_0, 0)|`.
    pub h2: f64,
    /// Bound on `|f(t, y, mu, 0, nu, k)|`, required for global quadratic solves.
    pub h_tilde: Option<f64>,
    pub separable: Option<(DriverFn, SeparableFn)>,
    /// The driver ignores `y`, `z` and both laws.
    pub constant: bool,
    /// The driver ignores `k`.
    pub k_free: bool,
}

impl core::fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("regime", &self.regime)
            .field("lambda", &self.lambda)
            .field("alpha", &self.alpha)
            .field("h2", &self.h2)
            .field("h_tilde", &self.h_tilde)
            .field("separable", &self.separable.is_some())
            .finish_non_exhaustive()
    }
}

impl GeneratorSpec {
    pub fn lipschitz(f: impl Fn(&DriverInput<'_>) -> f64 + Send + Sync + 'static, lambda: f64, h2: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("driver Lipschitz constant must be positive"));
        }
        Ok(Self {
            f_eval: Arc::new(f),
            regime: Regime::Lipschitz,
            lambda,
            alpha: 0.0,
            h2,
            h_tilde: None,
            separable: None,
            constant: false,
            k_free: false,
        })
    }

    pub fn quadratic(
        f: impl Fn(&DriverInput<'_>) -> f64 + Send + Sync + 'static,
        lambda: f64,
        alpha: f64,
        h2: f64,
        h_tilde: Option<f64>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1)"));
        }
        let mut g = Self::lipschitz(f, lambda, h2)?;
        g.regime = Regime::Quadratic;
        g.alpha = alpha;
        g.h_tilde = h_tilde;
        Ok(g)
    }

    /// `f = a(t, y, mu_y, z, mu_z) + b(t, mu_y, mu_z, k)`; `a` receives `k = 0`.
    pub fn separable(
        a: impl Fn(&DriverInput<'_>) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64, &EmpiricalMeasure, &EmpiricalMeasure, f64) -> f64 + Send + Sync + 'static,
        lambda: f64,
        h2: f64,
    ) -> Result<Self> {
        let a: DriverFn = Arc::new(a);
        let b: SeparableFn = Arc::new(b);
        let (fa, fb) = (a.clone(), b.clone());
        let mut g = Self::lipschitz(
            move |inp| fa(&DriverInput { k: 0.0, ..*inp }) + fb(inp.t, inp.mu_y, inp.mu_z, inp.k),
            lambda,
            h2,
        )?;
        g.separable = Some((a, b));
        Ok(g)
    }

    /// Driver depending on time only.
    pub fn time_only(c: impl Fn(f64) -> f64 + Send + Sync + 'static, h2: f64) -> Self {
        let mut g = Self::lipschitz(move |inp| c(inp.t), 1.0, h2).expect("positive constant");
        g.constant = true;
        g.k_free = true;
        g
    }

    pub fn zero() -> Self {
        Self::time_only(|_| 0.0, 0.0)
    }

    pub fn with_k_free(mut self, k_free: bool) -> Self {
        self.k_free = k_free;
        self
    }

    #[inline]
    pub fn eval(&self, inp: &DriverInput<'_>) -> f64 {
        (self.f_eval)(inp)
    }

    /// The same driver with the resistance argument pinned to zero.
    pub fn without_k(&self) -> Self {
        let f = self.f_eval.clone();
        let mut g = self.clone();
        g.f_eval = Arc::new(move |inp| f(&DriverInput { k: 0.0, ..*inp }));
        g.k_free = true;
        g.separable = None;
        g
    }
}

/// Two evaluation points of a driver sharing the time `t`.
#[derive(Debug, Clone)]
pub struct GeneratorProbe {
    pub t: f64,
    pub y: [f64; 2],
    pub mu_y: [EmpiricalMeasure; 2],
    pub z: [f64; 2],
    pub mu_z: [EmpiricalMeasure; 2],
    pub k: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorReport {
    /// Largest `|f1 - f2| / bound` observed.
    pub worst_ratio: f64,
    pub violations: usize,
    pub separable_defect: f64,
    pub failures: Vec<String>,
}

impl GeneratorReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

const ASSUMPTION_TOL: f64 = 1e-12;

/// Samples the regime's difference-quotient bound, the `H2` bound at the origin and,
/// when declared, the separable representation.
pub fn check_generator(g: &GeneratorSpec, probes: &[GeneratorProbe]) -> Result<GeneratorReport> {
    let mut rep = GeneratorReport {
        worst_ratio: 0.0,
        violations: 0,
        separable_defect: 0.0,
        failures: Vec::new(),
    };
    for p in probes {
        let w_mu = w1_distance(&p.mu_y[0], &p.mu_y[1])?;
        let w_nu = w1_distance(&p.mu_z[0], &p.mu_z[1])?;
        let eval = |j: usize, k: f64| {
            g.eval(&DriverInput {
                t: p.t,
                y: p.y[j],
                mu_y: &p.mu_y[j],
                z: p.z[j],
                mu_z: &p.mu_z[j],
                k,
            })
        };
        let lhs = (eval(0, p.k[0]) - eval(1, p.k[1])).abs();
        let dy = (p.y[0] - p.y[1]).abs();
        let dz = (p.z[0] - p.z[1]).abs();
        let dk = (p.k[0] - p.k[1]).abs();
        let bound = match g.regime {
            Regime::Lipschitz => g.lambda * (dy + dz + w_mu + w_nu + dk),
            Regime::Quadratic => {
                let n0 = p.mu_z[0].abs_mean();
                let n1 = p.mu_z[1].abs_mean();
                g.lambda * (dy + (1.0 + p.z[0].abs() + p.z[1].abs()) * dz + dk)
                    + g.lambda * w_mu
                    + g.lambda * (1.0 + libm::pow(n0, g.alpha) + libm::pow(n1, g.alpha)) * w_nu
            }
        };
        if lhs > bound + ASSUMPTION_TOL {
            rep.violations += 1;
        }
        if bound > 0.0 {
            rep.worst_ratio = rep.worst_ratio.max(lhs / bound);
        } else if lhs > ASSUMPTION_TOL {
            rep.worst_ratio = f64::INFINITY;
        }
        if g.separable.is_some() {
            // Only the measures and k may enter f(..., k) - f(..., 0).
            let d0 = eval(0, p.k[0]) - eval(0, 0.0);
            let other = g.eval(&DriverInput {
                t: p.t,
                y: p.y[1],
                mu_y: &p.mu_y[0],
                z: p.z[1],
                mu_z: &p.mu_z[0],
                k: p.k[0],
            }) - g.eval(&DriverInput {
                t: p.t,
                y: p.y[1],
                mu_y: &p.mu_y[0],
                z: p.z[1],
                mu_z: &p.mu_z[0],
                k: 0.0,
            });
            rep.separable_defect = rep.separable_defect.max((d0 - other).abs());
        }
        let n = p.mu_y[0].len();
        let dirac = EmpiricalMeasure::dirac(0.0, n)?;
        let at_origin = g.eval(&DriverInput {
            t: p.t,
            y: 0.0,
            mu_y: &dirac,
            z: 0.0,
            mu_z: &dirac,
            k: 0.0,
        });
        if at_origin.abs() > g.h2 + ASSUMPTION_TOL {
            rep.failures.push(format!("|f(t, 0)| = {} exceeds H2 = {} at t = {}", at_origin.abs(), g.h2, p.t));
        }
    }
    if rep.violations > 0 {
        rep.failures.push(format!(
            "{} probes violate the {:?} difference bound (worst ratio {})",
            rep.violations, g.regime, rep.worst_ratio
        ));
    }
    if rep.separable_defect > 1e-10 {
        rep.failures.push(format!("separable form defect {}", rep.separable_defect));
    }
    Ok(rep)
}

/// Deterministic probe set with measures supported on shifted and scaled grids.
pub fn standard_generator_probes(t_end: f64, scale: f64, n: usize) -> Result<Vec<GeneratorProbe>> {
    let base: Vec<f64> = (0..16).map(|j| (j as f64 - 7.5) / 8.0).collect();
    let meas = |shift: f64, s: f64| -> Result<EmpiricalMeasure> {
        let v: Vec<f64> = base.iter().map(|x| shift + s * x).collect();
        EmpiricalMeasure::new(&v)
    };
    let mut out = Vec::new();
    for i in 0..n.max(1) {
        let u = (i as f64 + 0.5) / n.max(1) as f64;
        let t = t_end * u;
        let a = scale * (2.0 * u - 1.0);
        let b = scale * libm::sin(7.0 * u);
        out.push(GeneratorProbe {
            t,
            y: [a, b],
            mu_y: [meas(a, 1.0)?, meas(b, 0.5)?],
            z: [0.5 * b, -0.25 * a],
            mu_z: [meas(0.3 * a, 0.2)?, meas(-0.1 * b, 0.7)?],
            k: [0.1 * a, 0.2 * b],
        });
    }
    Ok(out)
}

pub type CustomResistance = Arc<dyn Fn(&TimeGrid, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ResistanceKind {
    /// `G_t(y) = y_t`
    Identity,
    /// `G_t(y) = sup_{s <= t} y_s`
    RunningMax,
    /// `G_t(y) = int_0^t y_s ds` (trapezoid rule on the grid)
    RunningIntegral,
    /// Receives the grid and the prefix `y[0..=i]`.
    Custom(CustomResistance),
}

impl core::fmt::Debug for ResistanceKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ResistanceKind::Identity => f.write_str("Identity"),
            ResistanceKind::RunningMax => f.write_str("RunningMax"),
            ResistanceKind::RunningIntegral => f.write_str("RunningIntegral"),
            ResistanceKind::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResistanceSpec {
    pub kind: ResistanceKind,
    pub lambda_g: f64,
}

impl ResistanceSpec {
    pub fn identity() -> Self {
        Self {
            kind: ResistanceKind::Identity,
            lambda_g: 1.0,
        }
    }

    pub fn running_max() -> Self {
        Self {
            kind: ResistanceKind::RunningMax,
            lambda_g: 1.0,
        }
    }

    /// Declared constant is the horizon length.
    pub fn running_integral(horizon: f64) -> Self {
        Self {
            kind: ResistanceKind::RunningIntegral,
            lambda_g: horizon.max(f64::MIN_POSITIVE),
        }
    }

    pub fn custom(g: impl Fn(&TimeGrid, &[f64]) -> f64 + Send + Sync + 'static, lambda_g: f64) -> Self {
        Self {
            kind: ResistanceKind::Custom(Arc::new(g)),
            lambda_g,
        }
    }

    /// `G_{t_i}` evaluated on the prefix `y[0..=i]`.
    pub fn eval_at(&self, grid: &TimeGrid, prefix: &[f64]) -> f64 {
        let i = prefix.len() - 1;
        match &self.kind {
            ResistanceKind::Identity => prefix[i],
            ResistanceKind::RunningMax => prefix.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ResistanceKind::RunningIntegral => {
                let d = grid.delta();
                prefix.windows(2).map(|w| 0.5 * d * (w[0] + w[1])).sum()
            }
            ResistanceKind::Custom(g) => g(grid, prefix),
        }
    }

    /// `G_{t_i}(y)` at every node.
    pub fn eval_path(&self, grid: &TimeGrid, y: &[f64]) -> Vec<f64> {
        match &self.kind {
            ResistanceKind::Custom(_) => (0..y.len()).map(|i| self.eval_at(grid, &y[..=i])).collect(),
            ResistanceKind::Identity => y.to_vec(),
            ResistanceKind::RunningMax => {
                let mut m = f64::NEG_INFINITY;
                y.iter()
                    .map(|&v| {
                        m = m.max(v);
                        m
                    })
                    .collect()
            }
            ResistanceKind::RunningIntegral => {
                let d = grid.delta();
                let mut acc = 0.0;
                let mut out = Vec::with_capacity(y.len());
                out.push(0.0);
                for w in y.windows(2) {
                    acc += 0.5 * d * (w[0] + w[1]);
                    out.push(acc);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceReport {
    pub zero_value: f64,
    pub worst_ratio: f64,
    pub causality_defect: f64,
    pub failures: Vec<String>,
}

impl ResistanceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks `G(0) = 0`, the Lipschitz bound against the running sup distance on all
/// pairs of `paths`, and that the value at `t_i` ignores the path after `t_i`.
pub fn check_resistance(spec: &ResistanceSpec, grid: &TimeGrid, paths: &[Vec<f64>]) -> Result<ResistanceReport> {
    let n = grid.n_nodes();
    if paths.iter().any(|p| p.len() != n) {
        return Err(Error::invalid("probe paths must match the grid"));
    }
    let zero = alloc::vec![0.0; n];
    let zero_value = spec.eval_path(grid, &zero).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst_ratio = 0.0f64;
    let mut violations = 0usize;
    for a in 0..paths.len() {
        let ga = spec.eval_path(grid, &paths[a]);
        for b in (a + 1)..paths.len() {
            let gb = spec.eval_path(grid, &paths[b]);
            let mut sup = 0.0f64;
            for i in 0..n {
                sup = sup.max((paths[a][i] - paths[b][i]).abs());
                let d = (ga[i] - gb[i]).abs();
                if d > spec.lambda_g * sup + ASSUMPTION_TOL {
                    violations += 1;
                }
                if sup > 0.0 {
                    worst_ratio = worst_ratio.max(d / sup);
                }
            }
        }
    }
    let mut causality_defect = 0.0f64;
    for p in paths {
        let full = spec.eval_path(grid, p);
        for i in 0..n - 1 {
            let mut modified = p.clone();
            for v in modified.iter_mut().skip(i + 1) {
                *v += 1.0;
            }
            let g = spec.eval_path(grid, &modified);
            causality_defect = causality_defect.max((g[i] - full[i]).abs());
        }
    }
    let mut failures = Vec::new();
    if zero_value > ASSUMPTION_TOL {
        failures.push(format!("G(0) = {zero_value}"));
    }
    if violations > 0 {
        failures.push(format!(
            "{violations} Lipschitz violations, worst ratio {worst_ratio} vs declared {}",
            spec.lambda_g
        ));
    }
    if causality_defect > 0.0 {
        failures.push(format!("value depends on the future (defect {causality_defect})"));
    }
    Ok(ResistanceReport {
        zero_value,
        worst_ratio,
        causality_defect,
        failures,
    })
}
