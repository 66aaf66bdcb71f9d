//! Scenario configuration (JSON, unknown keys rejected).

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub grid: GridConfig,
    pub particles: ParticleConfig,
    pub terminal: TerminalConfig,
    pub generator: GeneratorConfig,
    pub loss: LossConfig,
    #[serde(default)]
    pub resistance: ResistanceConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub n: usize,
    pub seed: u64,
}

/// Terminal condition `xi` as a function of `B_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalConfig {
    Constant { value: f64 },
    /// `shift + scale * B_T`
    BrownianTerminal {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
    /// `shift + tanh(scale * B_T)`
    TanhBrownian {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
}

/// Generator families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Zero,
    /// `c0 + c1 t`
    TimeOnly {
        #[serde(default)]
        c0: f64,
        #[serde(default)]
        c1: f64,
    },
    /// `c0 + a_y y + a_mean E[y] + a_z z + a_k k`
    Linear {
        #[serde(default)]
        c0: f64,
        #[serde(default)]
        a_y: f64,
        #[serde(default)]
        a_mean: f64,
        #[serde(default)]
        a_z: f64,
        #[serde(default)]
        a_k: f64,
    },
    /// `c0 + a_y y + gamma z^2 (+ a_k k)`, `z` truncated by the solver knob.
    Quadratic {
        #[serde(default)]
        c0: f64,
        #[serde(default)]
        a_y: f64,
        gamma: f64,
        #[serde(default)]
        a_k: f64,
    },
    /// `a(y, E[y]) + b(k)` with `a = c0 + a_y y + a_mean E[y]` and `b = b_k k`.
    Separable {
        #[serde(default)]
        c0: f64,
        #[serde(default)]
        a_y: f64,
        #[serde(default)]
        a_mean: f64,
        b_k: f64,
    },
}

impl GeneratorConfig {
    pub fn is_quadratic(&self) -> bool {
        matches!(self, Self::Quadratic { .. })
    }
}

/// `a + b t`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linear {
    pub a: f64,
    #[serde(default)]
    pub b: f64,
}

impl Linear {
    pub fn at(&self, t: f64) -> f64 {
        self.a + self.b * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossConfig {
    /// `L = x - upper(t)`, `R = x - lower(t)`.
    LinearBand { lower: Linear, upper: Linear },
    /// `L = slope_l (x - upper(t))`, `R = slope_r (x - lower(t))`.
    ShiftedLinear {
        lower: Linear,
        upper: Linear,
        slope_l: f64,
        slope_r: f64,
    },
    /// Band losses plus `eps sin(x - barrier)`.
    SmoothPerturbed { lower: Linear, upper: Linear, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResistanceConfig {
    #[default]
    None,
    Identity,
    RunningMax,
    RunningIntegral,
    /// Resistance `G(K) = k`, the density of `K`.
    Density {
        condition: DensityCondition,
        /// Second start of the two-start uniqueness check.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        second_start: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityCondition {
    Increasing,
    Contraction { c_k: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Picard tolerance; defaults to `1e-4 (1 + ||xi||_2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_degree")]
    pub basis_degree: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_truncation: Option<f64>,
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// Declared `H >= ||xi||_inf ∨ H2` for quadratic drivers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic_h: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: default_max_iter(),
            basis_degree: default_degree(),
            ridge: default_ridge(),
            z_truncation: None,
            outer_tol: default_outer_tol(),
            max_outer: default_max_outer(),
            quadratic_h: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// CSV file name, relative to the output directory.
    pub csv: String,
}

fn one() -> f64 {
    1.0
}
fn default_max_iter() -> usize {
    50
}
fn default_degree() -> usize {
    3
}
fn default_ridge() -> f64 {
    1e-8
}
fn default_outer_tol() -> f64 {
    1e-6
}
fn default_max_outer() -> usize {
    60
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Shape checks that need no numerics; constant checks happen in
    /// [`crate::scenario::build`].
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(format!("{}: {m}", self.name)));
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if self.grid.n_steps == 0 {
            return bad("n_steps must be at least 1");
        }
        if self.particles.n < 2 {
            return bad("at least two particles are needed");
        }
        if let Some(t) = self.solver.tol {
            if !(t > 0.0) {
                return bad("tol must be positive");
            }
        }
        if !(self.solver.ridge >= 0.0) {
            return bad("ridge must be nonnegative");
        }
        if matches!(self.resistance, ResistanceConfig::Density { .. }) && !matches!(self.generator, GeneratorConfig::Separable { .. }) {
            return bad("density mode needs a separable generator");
        }
        if self.generator.is_quadratic() && self.solver.quadratic_h.is_none() {
            return bad("quadratic generators need solver.quadratic_h");
        }
        Ok(())
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}
