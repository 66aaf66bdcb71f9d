//! Turning a [`ScenarioConfig`] into solver inputs and running it.

use std::time::Instant;

use mfbsde_core::bsde::RegressionBasis;
use mfbsde_core::ensemble::simulate_brownian;
use mfbsde_core::generator::{check_generator, standard_generator_probes, GeneratorSpec, ResistanceSpec};
use mfbsde_core::loss::{check_loss_assumptions, standard_probes, LossPair};
use mfbsde_core::meanreflect::{picard_solve, quadratic_bounds, solve_quadratic_dmr, terminal_l2, PicardOptions, QuadraticConstants, QuadraticOptions};
use mfbsde_core::resistance::{
    assemble_density_solution, extract_density, solve_density_fixed_point, solve_with_resistance, uniqueness_gap, Differencing,
    OuterOptions, Solvability,
};
use mfbsde_core::{grid::make_grid, ParticleEnsemble, SolutionTriple};

use crate::config::*;
use crate::error::HarnessError;
use crate::report::{DensitySummary, QuadraticSummary, SolverReport, UniquenessSummary};

/// Validated solver inputs.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ens: ParticleEnsemble,
    pub xi: Vec<f64>,
    pub generator: GeneratorSpec,
    pub loss: LossPair,
    pub resistance: Option<ResistanceSpec>,
    pub density: Option<DensityMode>,
    pub picard: PicardOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMode {
    pub condition: Solvability,
    pub second_start: Option<f64>,
    /// Linear barriers and `df/dk >= -1`.
    pub uniqueness_hypotheses: bool,
}

/// Solver output together with its report.
pub struct Outcome {
    pub scenario: Scenario,
    pub solution: SolutionTriple,
    pub report: SolverReport,
}

fn lip(vals: &[f64]) -> f64 {
    vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9)
}

fn build_generator(g: GeneratorConfig) -> Result<GeneratorSpec, HarnessError> {
    let spec = match g {
        GeneratorConfig::Zero => GeneratorSpec::zero(),
        GeneratorConfig::TimeOnly { c0, c1 } => GeneratorSpec::time_only(move |t| c0 + c1 * t, c0.abs().max((c0 + c1).abs())),
        GeneratorConfig::Linear { c0, a_y, a_mean, a_z, a_k } => {
            let f = GeneratorSpec::lipschitz(
                move |inp| c0 + a_y * inp.y + a_mean * inp.mu_y.mean() + a_z * inp.z + a_k * inp.k,
                lip(&[a_y, a_mean, a_z, a_k]),
                c0.abs(),
            )?;
            f.with_k_free(a_k == 0.0)
        }
        GeneratorConfig::Quadratic { c0, gamma, a_k, a_y } => {
            if a_y != 0.0 {
                return Err(HarnessError::Config("quadratic family requires a_y = 0 (bounded f at z = 0)".into()));
            }
            let f = GeneratorSpec::quadratic(move |inp| c0 + gamma * inp.z * inp.z + a_k * inp.k, lip(&[gamma, a_k]), 0.0, c0.abs(), Some(c0.abs()))?;
            f.with_k_free(a_k == 0.0)
        }
        GeneratorConfig::Separable { c0, a_y, a_mean, b_k } => GeneratorSpec::separable(
            move |inp| c0 + a_y * inp.y + a_mean * inp.mu_y.mean(),
            move |_, _, _, k| b_k * k,
            lip(&[a_y, a_mean, b_k]),
            c0.abs(),
        )?,
    };
    Ok(spec)
}

fn linear_sup(l: &Linear, horizon: f64) -> f64 {
    l.at(0.0).abs().max(l.at(horizon).abs())
}

fn band_width(lower: &Linear, upper: &Linear, horizon: f64) -> f64 {
    (upper.at(0.0) - lower.at(0.0)).min(upper.at(horizon) - lower.at(horizon))
}

fn build_loss(l: LossConfig, horizon: f64) -> Result<LossPair, HarnessError> {
    let lp = match l {
        LossConfig::LinearBand { lower, upper } => {
            let sep = band_width(&lower, &upper, horizon);
            LossPair::band(move |t| lower.at(t), move |t| upper.at(t), sep, linear_sup(&lower, horizon) + linear_sup(&upper, horizon))?
        }
        LossConfig::ShiftedLinear { lower, upper, slope_l, slope_r } => {
            if !(slope_l > 0.0 && slope_r > 0.0) {
                return Err(HarnessError::Config("loss slopes must be positive".into()));
            }
            // R - L = (slope_r - slope_l) x + slope_l upper - slope_r lower is only
            // bounded below when the slopes agree.
            if slope_l != slope_r {
                return Err(HarnessError::Config("shifted-linear losses need equal slopes for a positive separation".into()));
            }
            let sep = slope_l * band_width(&lower, &upper, horizon);
            let m = slope_l * linear_sup(&upper, horizon) + slope_r * linear_sup(&lower, horizon);
            LossPair::new(
                move |t, x, _| slope_l * (x - upper.at(t)),
                move |t, x, _| slope_r * (x - lower.at(t)),
                slope_l.min(slope_r),
                slope_l.max(slope_r),
                sep,
                m,
            )?
            .with_smooth(true)
        }
        LossConfig::SmoothPerturbed { lower, upper, eps } => {
            if !(0.0..1.0).contains(&eps) {
                return Err(HarnessError::Config("perturbation eps must lie in [0, 1)".into()));
            }
            let sep = band_width(&lower, &upper, horizon) - 2.0 * eps;
            let m = linear_sup(&upper, horizon) + linear_sup(&lower, horizon) + 2.0 * eps;
            LossPair::new(
                move |t, x, _| x - upper.at(t) + eps * (x - upper.at(t)).sin(),
                move |t, x, _| x - lower.at(t) + eps * (x - lower.at(t)).sin(),
                1.0 - eps,
                1.0 + eps,
                sep,
                m,
            )?
            .with_smooth(true)
        }
    };
    Ok(lp)
}

fn terminal(t: TerminalConfig, b: &[f64]) -> Vec<f64> {
    match t {
        TerminalConfig::Constant { value } => vec![value; b.len()],
        TerminalConfig::BrownianTerminal { scale, shift } => b.iter().map(|v| shift + scale * v).collect(),
        TerminalConfig::TanhBrownian { scale, shift } => b.iter().map(|v| shift + (scale * v).tanh()).collect(),
    }
}

/// Validates all declared constants and simulates the ensemble.
pub fn build(config: &ScenarioConfig) -> Result<Scenario, HarnessError> {
    config.validate()?;
    let horizon = config.grid.horizon;
    let loss = build_loss(config.loss, horizon)?;
    let rep = check_loss_assumptions(&loss, &standard_probes(0.0, horizon, -10.0, 10.0, 9))?;
    if !rep.passed() {
        return Err(HarnessError::Config(format!("{}: loss assumptions fail: {}", config.name, rep.failures.join("; "))));
    }
    let generator = build_generator(config.generator)?;
    let grep = check_generator(&generator, &standard_generator_probes(horizon, 2.0, 16)?)?;
    if !grep.passed() {
        return Err(HarnessError::Config(format!("{}: generator assumptions fail: {}", config.name, grep.failures.join("; "))));
    }
    let (resistance, density) = match config.resistance {
        ResistanceConfig::None => (None, None),
        ResistanceConfig::Identity => (Some(ResistanceSpec::identity()), None),
        ResistanceConfig::RunningMax => (Some(ResistanceSpec::running_max()), None),
        ResistanceConfig::RunningIntegral => (Some(ResistanceSpec::running_integral(horizon)), None),
        ResistanceConfig::Density { condition, second_start } => {
            let condition = match condition {
                DensityCondition::Increasing => Solvability::Increasing,
                DensityCondition::Contraction { c_k } => Solvability::Contraction(c_k),
            };
            let b_k = match config.generator {
                GeneratorConfig::Separable { b_k, .. } => b_k,
                _ => unreachable!("validated"),
            };
            let linear = matches!(config.loss, LossConfig::LinearBand { .. });
            let mode = DensityMode {
                condition,
                second_start,
                uniqueness_hypotheses: linear && b_k >= -1.0,
            };
            (None, Some(mode))
        }
    };
    let grid = make_grid(0.0, horizon, config.grid.n_steps)?;
    let ens = simulate_brownian(&grid, config.particles.n, config.particles.seed)?;
    let xi = terminal(config.terminal, ens.brownian().column(config.grid.n_steps));
    if let Some(h) = config.solver.quadratic_h {
        let sup = xi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sup > h {
            return Err(HarnessError::Config(format!("{}: sup|xi| = {sup} exceeds declared H = {h}", config.name)));
        }
    }
    let s = &config.solver;
    let picard = PicardOptions {
        tol: s.tol.unwrap_or(1e-4 * (1.0 + terminal_l2(&xi))),
        max_iter: s.max_iter,
        basis: RegressionBasis::new(s.basis_degree, s.ridge)?,
        z_truncation: s.z_truncation,
        allow_fallback: true,
    };
    Ok(Scenario {
        config: config.clone(),
        ens,
        xi,
        generator,
        loss,
        resistance,
        density,
        picard,
    })
}

/// Builds and solves a scenario, dispatching on regime, resistance and density mode.
pub fn solve(config: &ScenarioConfig) -> Result<Outcome, HarnessError> {
    let sc = build(config)?;
    let start = Instant::now();
    let outer = OuterOptions {
        tol: config.solver.outer_tol,
        max_outer: config.solver.max_outer,
        relax_on_oscillation: true,
        picard: sc.picard,
        quadratic: config.solver.quadratic_h.map(|h| QuadraticOptions { h, picard: sc.picard }),
    };
    let (ens, xi, f, lp) = (&sc.ens, &sc.xi, &sc.generator, &sc.loss);
    let mut density = None;
    let mut quadratic = None;
    let mut uniqueness = None;
    let solution = if let Some(mode) = sc.density {
        let (base, _) = picard_solve(ens, xi, &f.without_k(), lp, None, None, &sc.picard)?;
        let (sol, dens, rep) = assemble_density_solution(ens, &base, f, lp, mode.condition)?;
        let tilde = extract_density(&base.k, Differencing::Forward);
        let recon = tilde.integrate()?.sup_distance(&base.k);
        let recon_ok = recon <= ens.grid().delta() * tilde.lipschitz() + 1e-12;
        density = Some(DensitySummary {
            k: dens.k.clone(),
            k_plus: dens.k_plus.clone(),
            k_minus: dens.k_minus.clone(),
            lipschitz: dens.lipschitz(),
            max_equation_residual: rep.max_equation_residual(),
            flatoff_r: rep.flatoff_r,
            flatoff_l: rep.flatoff_l,
            tol_mc: rep.tol_mc,
            complementarity_defect: dens.complementarity_defect(),
            reconstruction_error: recon,
            passed: rep.passes() && dens.complementarity_defect() == 0.0 && recon_ok,
        });
        if let Some(c) = mode.second_start {
            let (s0, k0) = solve_density_fixed_point(ens, xi, f, lp, None, &outer)?;
            let init = vec![c; ens.grid().n_nodes()];
            let (s1, k1) = solve_density_fixed_point(ens, xi, f, lp, Some(&init), &outer)?;
            let u = uniqueness_gap(&s0, &s1, &k0, &k1, mode.uniqueness_hypotheses)?;
            uniqueness = Some(UniquenessSummary {
                gap_mean_y: u.gap_mean_y,
                gap_y: u.gap_y,
                gap_z: u.gap_z,
                gap_k: u.gap_k,
                mc_noise: u.mc_noise,
                passed: u.passed,
            });
        }
        sol
    } else if let Some(q) = outer.quadratic {
        let (sol, qc) = match &sc.resistance {
            Some(g) => {
                let sol = solve_with_resistance(ens, xi, f, lp, g, None, &outer)?;
                let k_sup = g.eval_path(ens.grid(), sol.k.values()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let h_tilde = f.h_tilde.unwrap_or(0.0);
                let qc = QuadraticConstants::new(q.h, h_tilde, k_sup, lp.m_bound, lp.c, lp.big_c, f.lambda, f.alpha, config.grid.horizon)?;
                (sol, qc)
            }
            None => solve_quadratic_dmr(ens, xi, f, lp, None, None, &q)?,
        };
        let b = quadratic_bounds(ens, &sol, &sc.picard.basis)?;
        quadratic = Some(QuadraticSummary {
            bar_h: qc.bar_h,
            a_tilde0: qc.a_tilde0,
            delta_hat: qc.delta_hat_a,
            n_slabs: sol.diagnostics.slabs.len().saturating_sub(1),
            sup_y: b.sup_y,
            sup_k: b.sup_k,
            bmo: b.bmo,
            passed: b.sup_y <= qc.bar_h && b.sup_k <= qc.a_tilde0,
        });
        sol
    } else if let Some(g) = &sc.resistance {
        solve_with_resistance(ens, xi, f, lp, g, None, &outer)?
    } else {
        picard_solve(ens, xi, f, lp, None, None, &sc.picard)?.0
    };
    let wall = start.elapsed().as_secs_f64();
    let report = SolverReport::new(&sc, &solution, wall, density, quadratic, uniqueness)?;
    Ok(Outcome {
        scenario: sc,
        solution,
        report,
    })
}

/// Runs a scenario and returns its report.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SolverReport, HarnessError> {
    solve(config).map(|o| o.report)
}

/// Scenario files shipped with the crate.
pub const SHIPPED: &[(&str, &str)] = &[
    ("inactive_band", include_str!("../scenarios/inactive_band.json")),
    ("decoupling_band", include_str!("../scenarios/decoupling_band.json")),
    ("lipschitz_contraction", include_str!("../scenarios/lipschitz_contraction.json")),
    ("lipschitz_resistance", include_str!("../scenarios/lipschitz_resistance.json")),
    ("smooth_losses", include_str!("../scenarios/smooth_losses.json")),
    ("cole_hopf", include_str!("../scenarios/cole_hopf.json")),
    ("quadratic_tanh", include_str!("../scenarios/quadratic_tanh.json")),
    ("density_half", include_str!("../scenarios/density_half.json")),
];

pub fn shipped(name: &str) -> Result<ScenarioConfig, HarnessError> {
    let (_, text) = SHIPPED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| HarnessError::Config(format!("no shipped scenario named {name}")))?;
    ScenarioConfig::from_json(text)
}

pub fn all_shipped() -> Result<Vec<ScenarioConfig>, HarnessError> {
    SHIPPED.iter().map(|(_, t)| ScenarioConfig::from_json(t)).collect()
}
