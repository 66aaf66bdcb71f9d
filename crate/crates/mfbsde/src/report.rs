//! Solver reports and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mfbsde_core::SolutionTriple;

use crate::config::ScenarioConfig;
use crate::error::HarnessError;
use crate::scenario::Scenario;

pub const CSV_HEADER: [&str; 11] = [
    "t", "E_Y", "std_Y", "K", "K_up", "K_down", "res_L", "res_R", "flatoff_R", "flatoff_L", "EZ2",
];

/// One node of the per-node table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: f64,
    pub mean_y: f64,
    pub std_y: f64,
    pub k: f64,
    pub k_up: f64,
    pub k_down: f64,
    /// `E[L(t, Y_t)]`
    pub res_l: f64,
    /// `E[R(t, Y_t)]`
    pub res_r: f64,
    pub flatoff_r: f64,
    pub flatoff_l: f64,
    pub ez2: f64,
}

impl ReportRow {
    fn values(&self) -> [f64; 11] {
        [
            self.t,
            self.mean_y,
            self.std_y,
            self.k,
            self.k_up,
            self.k_down,
            self.res_l,
            self.res_r,
            self.flatoff_r,
            self.flatoff_l,
            self.ez2,
        ]
    }

    fn from_values(v: &[f64]) -> Self {
        Self {
            t: v[0],
            mean_y: v[1],
            std_y: v[2],
            k: v[3],
            k_up: v[4],
            k_down: v[5],
            res_l: v[6],
            res_r: v[7],
            flatoff_r: v[8],
            flatoff_l: v[9],
            ez2: v[10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantSummary {
    /// Largest excess of a mean constraint over `3 std / sqrt(N)`.
    pub worst_constraint_excess: f64,
    pub flatoff_r: f64,
    pub flatoff_l: f64,
    pub flatoff_tolerance: f64,
    pub total_variation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySummary {
    pub k: Vec<f64>,
    pub k_plus: Vec<f64>,
    pub k_minus: Vec<f64>,
    pub lipschitz: f64,
    pub max_equation_residual: f64,
    pub flatoff_r: f64,
    pub flatoff_l: f64,
    pub tol_mc: f64,
    pub complementarity_defect: f64,
    pub reconstruction_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticSummary {
    pub bar_h: f64,
    pub a_tilde0: f64,
    pub delta_hat: f64,
    pub n_slabs: usize,
    pub sup_y: f64,
    pub sup_k: f64,
    pub bmo: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessSummary {
    pub gap_mean_y: f64,
    pub gap_y: f64,
    pub gap_z: f64,
    pub gap_k: f64,
    pub mc_noise: f64,
    /// `None` outside the hypotheses of the uniqueness statement.
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    pub scenario: String,
    pub seed: u64,
    pub n_particles: usize,
    pub n_steps: usize,
    pub rows: Vec<ReportRow>,
    pub picard_history: Vec<f64>,
    pub outer_history: Vec<f64>,
    pub contraction_factor: Option<f64>,
    pub used_fallback_slabs: bool,
    pub invariants: InvariantSummary,
    pub density: Option<DensitySummary>,
    pub quadratic: Option<QuadraticSummary>,
    pub uniqueness: Option<UniquenessSummary>,
    pub wall_time_s: f64,
    pub version: String,
    pub config: ScenarioConfig,
}

impl SolverReport {
    pub fn new(
        sc: &Scenario,
        sol: &SolutionTriple,
        wall_time_s: f64,
        density: Option<DensitySummary>,
        quadratic: Option<QuadraticSummary>,
        uniqueness: Option<UniquenessSummary>,
    ) -> Result<Self, HarnessError> {
        let c = &sol.diagnostics.constraints;
        let grid = sc.ens.grid();
        let (mean_y, std_y, ez2) = (sol.mean_y(), sol.std_y(), sol.z_second_moments());
        let rows = (0..grid.n_nodes())
            .map(|i| ReportRow {
                t: grid.node(i),
                mean_y: mean_y[i],
                std_y: std_y[i],
                k: sol.k.values()[i],
                k_up: sol.k.up()[i],
                k_down: sol.k.down()[i],
                res_l: c.mean_l[i],
                res_r: c.mean_r[i],
                flatoff_r: c.flatoff_r[i],
                flatoff_l: c.flatoff_l[i],
                ez2: ez2[i],
            })
            .collect::<Vec<_>>();
        if rows.iter().any(|r| r.values().iter().any(|v| !v.is_finite())) {
            return Err(HarnessError::Solver {
                message: "report contains non-finite values".into(),
                history: sol.diagnostics.picard.totals(),
            });
        }
        let (fr, fl) = c.flatoff_totals();
        Ok(Self {
            scenario: sc.config.name.clone(),
            seed: sc.config.particles.seed,
            n_particles: sc.ens.n_particles(),
            n_steps: grid.n_steps(),
            rows,
            picard_history: sol.diagnostics.picard.totals(),
            outer_history: sol.diagnostics.outer_history.clone(),
            contraction_factor: sol.diagnostics.contraction_factor,
            used_fallback_slabs: sol.diagnostics.used_fallback_slabs,
            invariants: InvariantSummary {
                worst_constraint_excess: c.worst_constraint_excess(),
                flatoff_r: fr,
                flatoff_l: fl,
                flatoff_tolerance: c.flatoff_tolerance(),
                total_variation: c.total_variation,
                passed: c.passes(),
            },
            density,
            quadratic,
            uniqueness,
            wall_time_s,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: sc.config.clone(),
        })
    }

    /// Constraint, flat-off and any mode-specific checks.
    pub fn passed(&self) -> bool {
        self.invariants.passed
            && self.density.as_ref().is_none_or(|d| d.passed)
            && self.quadratic.as_ref().is_none_or(|q| q.passed)
            && self.uniqueness.as_ref().is_none_or(|u| u.passed != Some(false))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn fmt(v: f64) -> String {
    // 12 significant digits.
    format!("{v:.11e}")
}

/// Writes the per-node table as UTF-8 CSV.
pub fn export_csv(report: &SolverReport, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    write_rows(&mut w, &report.rows)?;
    w.flush()?;
    Ok(())
}

/// The CSV text of a report.
pub fn csv_string(report: &SolverReport) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_rows(&mut w, &report.rows)?;
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Io(e.to_string()))
}

fn write_rows<W: std::io::Write>(w: &mut csv::Writer<W>, rows: &[ReportRow]) -> Result<(), HarnessError> {
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.values().iter().map(|v| fmt(*v)))?;
    }
    Ok(())
}

pub fn parse_csv(path: &Path) -> Result<Vec<ReportRow>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_csv_str(&text)
}

pub fn parse_csv_str(text: &str) -> Result<Vec<ReportRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Io(format!("unexpected CSV header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| HarnessError::Io(format!("bad number {f}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != CSV_HEADER.len() {
            return Err(HarnessError::Io(format!("row has {} fields", vals.len())));
        }
        out.push(ReportRow::from_values(&vals));
    }
    Ok(out)
}
