//! Run configuration: a flat JSON object, every field optional.

use serde::{Deserialize, Serialize};
use spde_lab::coefficients::{AllenCahnParams, CoefficientSet, Drift, InitialCondition};
use spde_lab::grid::Grid;
use spde_lab::law::Functional;
use spde_lab::sde::OracleConfig;
use spde_lab::solver::{BoundaryKind, SchemeConfig};
use spde_lab::DEFAULT_LEVELS;

use crate::error::CliError;

/// Environment variable that overrides `master_seed`.
pub const SEED_ENV: &str = "SPDE_LAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    NoiseSelftest,
    ResidualCheck,
    SdeOracle,
    Simulate,
    #[default]
    CompareLaws,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::NoiseSelftest => "noise-selftest",
            Experiment::ResidualCheck => "residual-check",
            Experiment::SdeOracle => "sde-oracle",
            Experiment::Simulate => "simulate",
            Experiment::CompareLaws => "compare-laws",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `a = C sgn(u)|u|^gamma`, `b = 0`, `d = 2u(1 - u^2)`.
    #[default]
    AllenCahn,
    /// `a`, `b`, `d` constants.
    Constant,
    /// Constant `a`, no drift.
    ZeroDrift,
    /// `a = C u`, `b = 0`, constant `d` (only `d = 0` is admissible).
    LinearWalsh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Constant,
    /// `initial_value * cos(initial_mode * pi * x / L)`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(alias = "T")]
    pub t_final: f64,
    #[serde(alias = "L")]
    pub length: f64,
    pub nt: usize,
    pub nx: usize,
    pub boundary: BoundaryKind,
    pub preset: Preset,
    #[serde(alias = "C")]
    pub c: f64,
    pub gamma: f64,
    pub allow_gamma_outside_theorem: bool,
    pub a_const: f64,
    pub b_const: f64,
    pub d_const: f64,
    /// Perturbation used by the reweighted arm instead of `d_const`; a
    /// deliberately wrong value gives a power check.
    pub reweight_d_const: Option<f64>,
    pub initial: InitialKind,
    pub initial_value: f64,
    pub initial_mode: u32,
    pub clamp_bound: Option<f64>,
    pub paths: usize,
    pub master_seed: u64,
    /// Seed of the reweighted arm; derived from `master_seed` when absent.
    pub reweighted_seed: Option<u64>,
    /// Seed of the bootstrap; derived from `master_seed` when absent.
    pub report_seed: Option<u64>,
    pub levels: Vec<u32>,
    /// Terminal-time functionals; the default battery when absent.
    pub functionals: Option<Vec<Functional>>,
    pub bootstrap_resamples: usize,
    pub noise_samples: usize,
    pub residual_paths: usize,
    pub sde_mu: f64,
    pub sde_t_final: f64,
    pub sde_nt: usize,
    pub sde_paths: usize,
    pub output_dir: String,
    pub export_paths: bool,
    pub export_path_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::default(),
            t_final: 0.1,
            length: 1.0,
            nt: 1000,
            nx: 32,
            boundary: BoundaryKind::Neumann,
            preset: Preset::AllenCahn,
            c: 1.0,
            gamma: 1.0,
            allow_gamma_outside_theorem: false,
            a_const: 1.0,
            b_const: 0.0,
            d_const: 1.0,
            reweight_d_const: None,
            initial: InitialKind::Constant,
            initial_value: 0.5,
            initial_mode: 1,
            clamp_bound: None,
            paths: 1000,
            master_seed: 0,
            reweighted_seed: None,
            report_seed: None,
            levels: DEFAULT_LEVELS.to_vec(),
            functionals: None,
            bootstrap_resamples: 1000,
            noise_samples: 10_000,
            residual_paths: 100,
            sde_mu: 0.5,
            sde_t_final: 1.0,
            sde_nt: 100,
            sde_paths: 100_000,
            output_dir: "spde-lab-out".into(),
            export_paths: false,
            export_path_count: 10,
        }
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config {
        key: unknown_key(&e.to_string()).unwrap_or_else(|| "<document>".into()),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

// serde_json reports unknown keys as "unknown field `name`, expected ..."
fn unknown_key(message: &str) -> Option<String> {
    let rest = message
        .strip_prefix("unknown field `")
        .or_else(|| message.split("unknown field `").nth(1))?;
    rest.split('`').next().map(str::to_string)
}

fn config_error(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()?;
        let coeffs = self.coefficients()?;
        self.reweighting_coefficients()?;
        self.scheme()
            .validate(&coeffs)
            .map_err(|e| config_error("clamp_bound", e.to_string()))?;
        if self.paths < 2 {
            return Err(config_error("paths", "need at least 2 paths per arm"));
        }
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(config_error("levels", "need at least one positive truncation level"));
        }
        let grid = self.grid()?;
        for f in self.functionals() {
            f.validate(&grid)
                .map_err(|e| config_error("functionals", e.to_string()))?;
        }
        if self.noise_samples < 2 {
            return Err(config_error("noise_samples", "need at least 2 samples"));
        }
        if self.residual_paths < 1 {
            return Err(config_error("residual_paths", "need at least 1 path"));
        }
        if self.sde_paths < 2 {
            return Err(config_error("sde_paths", "need at least 2 paths"));
        }
        if !(self.sde_t_final.is_finite() && self.sde_t_final > 0.0) {
            return Err(config_error("sde_t_final", "must be positive"));
        }
        if self.sde_nt == 0 {
            return Err(config_error("sde_nt", "must be at least 1"));
        }
        if !self.sde_mu.is_finite() {
            return Err(config_error("sde_mu", "must be finite"));
        }
        if self.output_dir.is_empty() {
            return Err(config_error("output_dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Grid::new(self.t_final, self.length, self.nt, self.nx).map_err(|e| {
            let key = if !(self.t_final.is_finite() && self.t_final > 0.0) {
                "t_final"
            } else if !(self.length.is_finite() && self.length > 0.0) {
                "length"
            } else if self.nt == 0 {
                "nt"
            } else {
                "nx"
            };
            config_error(key, e.to_string())
        })
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match self.initial {
            InitialKind::Constant => InitialCondition::Constant(self.initial_value),
            InitialKind::Cosine => InitialCondition::Cosine {
                amplitude: self.initial_value,
                mode: self.initial_mode,
                length: self.length,
            },
        }
    }

    /// Coefficients of the drifted equation.
    pub fn coefficients(&self) -> Result<CoefficientSet, CliError> {
        let h = self.initial_condition();
        match self.preset {
            Preset::AllenCahn => {
                let params = AllenCahnParams {
                    c: self.c,
                    gamma: self.gamma,
                    allow_gamma_outside_theorem: self.allow_gamma_outside_theorem,
                };
                params.validate().map_err(|e| {
                    let key = if !self.c.is_finite() || self.c == 0.0 { "c" } else { "gamma" };
                    config_error(key, e.to_string())
                })?;
                CoefficientSet::allen_cahn(params, h).map_err(|e| config_error("preset", e.to_string()))
            }
            Preset::Constant => CoefficientSet::constant(self.a_const, self.b_const, self.d_const, h)
                .map_err(|e| config_error("a_const", e.to_string())),
            Preset::ZeroDrift => CoefficientSet::zero_drift(self.a_const, h)
                .map_err(|e| config_error("a_const", e.to_string())),
            Preset::LinearWalsh => CoefficientSet::linear_walsh(self.c, self.d_const, h).map_err(|e| {
                let key = if !self.c.is_finite() || self.c == 0.0 { "c" } else { "d_const" };
                config_error(key, e.to_string())
            }),
        }
    }

    /// Coefficients whose ratio weights the reweighted arm.
    pub fn reweighting_coefficients(&self) -> Result<CoefficientSet, CliError> {
        let base = self.coefficients()?;
        match self.reweight_d_const {
            None => Ok(base),
            Some(d) => base
                .with_perturbation(Drift::Constant(d))
                .map_err(|e| config_error("reweight_d_const", e.to_string())),
        }
    }

    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            clamp_bound: self.clamp_bound,
            ..SchemeConfig::with_boundary(self.boundary)
        }
    }

    pub fn functionals(&self) -> Vec<Functional> {
        self.functionals
            .clone()
            .unwrap_or_else(|| Functional::default_battery(self.length))
    }

    pub fn direct_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn resolved_reweighted_seed(&self) -> u64 {
        self.reweighted_seed
            .unwrap_or(self.master_seed ^ 0x9e37_79b9_7f4a_7c15)
    }

    pub fn resolved_report_seed(&self) -> u64 {
        self.report_seed
            .unwrap_or(self.master_seed ^ 0xd1b5_4a32_d192_ed03)
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            mu: self.sde_mu,
            t_final: self.sde_t_final,
            nt: self.sde_nt,
            paths: self.sde_paths,
            direct_seed: self.direct_seed(),
            reweighted_seed: self.resolved_reweighted_seed(),
            bootstrap_resamples: self.bootstrap_resamples,
            report_seed: self.resolved_report_seed(),
        }
    }
}

/// `--seed` wins over the environment, which wins over the file.
pub fn resolve_seed(config_seed: u64, flag: Option<u64>, env: Option<&str>) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match env {
        Some(text) => text
            .trim()
            .parse()
            .map_err(|_| config_error(SEED_ENV, format!("not an unsigned integer: {text:?}"))),
        None => Ok(config_seed),
    }
}
