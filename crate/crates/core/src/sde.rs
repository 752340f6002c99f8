//! One-dimensional SDE replica of the reweighting pipeline.
//!
//! Euler-Maruyama `u_{k+1} = u_k + mu(u_k) dt + sigma(u_k) dB_k` with
//! `dB_k ~ N(0, dt)`. For a constant ratio `R = mu` over unit diffusion the
//! reweighted law is the Gaussian `N(mu T, T)`, which gives closed-form
//! moments to check against.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{Diffusion, Drift, Ratio};
use crate::error::{LabError, Result};
use crate::girsanov::WeightTrajectory;
use crate::grid::path_rng;
use crate::stats::{
    self, bootstrap_two_sample, ess, mean_and_stderr, normalized_weights, z_score, ArmSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdeSpec {
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub u0: f64,
    pub t_final: f64,
    pub nt: usize,
}

impl SdeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(LabError::InvalidConfig(format!(
                "SDE final time must be positive, got {}",
                self.t_final
            )));
        }
        if self.nt == 0 {
            return Err(LabError::InvalidConfig("SDE needs nt >= 1".into()));
        }
        if !self.u0.is_finite() {
            return Err(LabError::InvalidConfig("u0 must be finite".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    /// Ratio of `perturbation` to this diffusion.
    pub fn ratio_for(&self, perturbation: &Drift) -> Result<Ratio> {
        Ratio::reduce(&self.diffusion, perturbation, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
}

impl SdePath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("path has at least u0")
    }

    /// `B_T`, the sum of the increments.
    pub fn brownian_terminal(&self) -> f64 {
        self.increments.iter().sum()
    }
}

pub fn simulate_sde(spec: &SdeSpec, seed: u64, path_index: u64) -> Result<SdePath> {
    spec.validate()?;
    let dt = spec.dt();
    let sqrt_dt = dt.sqrt();
    let mut rng = path_rng(seed, path_index);
    let mut values = Vec::with_capacity(spec.nt + 1);
    let mut increments = Vec::with_capacity(spec.nt);
    let mut u = spec.u0;
    values.push(u);
    for k in 0..spec.nt {
        let z: f64 = StandardNormal.sample(&mut rng);
        let db = z * sqrt_dt;
        u = u + spec.drift.eval(u) * dt + spec.diffusion.eval(u) * db;
        if !u.is_finite() {
            return Err(LabError::BlowUp { k: k + 1, j: 0 });
        }
        values.push(u);
        increments.push(db);
    }
    Ok(SdePath { values, increments })
}

/// `log Xi = sum R(u_k) dB_k - 1/2 sum R(u_k)^2 dt`, with the same stopping
/// convention as the lattice engine.
pub fn girsanov_weight_1d(
    path: &SdePath,
    dt: f64,
    ratio: &Ratio,
    levels: &[u32],
) -> Result<WeightTrajectory> {
    let nt = path.increments.len();
    if path.values.len() != nt + 1 {
        return Err(LabError::Dimension {
            expected: format!("{} states", nt + 1),
            got: format!("{} states", path.values.len()),
        });
    }
    if ratio.is_zero() {
        return Ok(WeightTrajectory::zero(nt, levels));
    }
    WeightTrajectory::from_steps(nt, levels, |k| {
        let r = ratio.eval(path.values[k]);
        (r * path.increments[k], r * r * dt)
    })
}

/// Moments of the tilted terminal value `N(mu T, T)`.
pub fn analytic_tilt_moments(mu: f64, t_final: f64, order: u32) -> Result<f64> {
    match order {
        1 => Ok(mu * t_final),
        2 => Ok(t_final + mu * mu * t_final * t_final),
        other => Err(LabError::UnsupportedOrder(other)),
    }
}

/// Settings of the constant-drift oracle experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleConfig {
    pub mu: f64,
    pub t_final: f64,
    pub nt: usize,
    pub paths: usize,
    pub direct_seed: u64,
    pub reweighted_seed: u64,
    pub bootstrap_resamples: usize,
    pub report_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub config: OracleConfig,
    pub analytic_mean: f64,
    pub analytic_second_moment: f64,
    pub weighted_mean: f64,
    pub weighted_mean_stderr: f64,
    pub weighted_second_moment: f64,
    pub weighted_second_moment_stderr: f64,
    pub direct_mean: f64,
    pub direct_mean_stderr: f64,
    pub direct_second_moment: f64,
    pub direct_second_moment_stderr: f64,
    pub z_score: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub ess: f64,
    pub weight_mean: f64,
    pub weight_mean_stderr: f64,
}

/// Per-path terminal values of both oracle arms.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSamples {
    pub direct_terminal: Vec<f64>,
    pub reweighted_terminal: Vec<f64>,
    /// `log Xi` at `T` of each reweighted path.
    pub reweighted_log_xi: Vec<f64>,
}

/// Driftless unit-diffusion paths reweighted by `R = mu`, and paths
/// simulated directly with drift `mu`.
pub fn simulate_oracle(config: &OracleConfig) -> Result<OracleSamples> {
    if config.paths < 2 {
        return Err(LabError::InvalidConfig("the oracle needs at least 2 paths".into()));
    }
    let driftless = SdeSpec {
        drift: Drift::Zero,
        diffusion: Diffusion::Constant(1.0),
        u0: 0.0,
        t_final: config.t_final,
        nt: config.nt,
    };
    let drifted = SdeSpec {
        drift: Drift::Constant(config.mu),
        ..driftless
    };
    let ratio = driftless.ratio_for(&Drift::Constant(config.mu))?;
    let dt = driftless.dt();

    let reweighted: Vec<(f64, f64)> = (0..config.paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = simulate_sde(&driftless, config.reweighted_seed, p)?;
            let traj = girsanov_weight_1d(&path, dt, &ratio, &[])?;
            Ok((path.terminal(), traj.log_xi()[config.nt]))
        })
        .collect::<Result<_>>()?;
    let direct_terminal: Vec<f64> = (0..config.paths as u64)
        .into_par_iter()
        .map(|p| simulate_sde(&drifted, config.direct_seed, p).map(|path| path.terminal()))
        .collect::<Result<_>>()?;
    Ok(OracleSamples {
        direct_terminal,
        reweighted_terminal: reweighted.iter().map(|r| r.0).collect(),
        reweighted_log_xi: reweighted.iter().map(|r| r.1).collect(),
    })
}

/// [`simulate_oracle`] followed by [`summarize_oracle`].
pub fn run_oracle(config: &OracleConfig) -> Result<OracleReport> {
    summarize_oracle(config, &simulate_oracle(config)?)
}

/// Moments, weighted KS test and weight diagnostics of oracle samples.
pub fn summarize_oracle(config: &OracleConfig, samples: &OracleSamples) -> Result<OracleReport> {
    let direct = &samples.direct_terminal;
    let values = samples.reweighted_terminal.clone();
    let log_w = &samples.reweighted_log_xi;
    let raw_w: Vec<f64> = log_w.iter().map(|w| w.exp()).collect();
    let (weight_mean, weight_mean_stderr) = mean_and_stderr(&raw_w);
    let weights = normalized_weights(log_w)?;

    // only B_T goes through the bootstrap; the second moment uses the delta method
    let squares: Vec<f64> = values.iter().map(|x| x * x).collect();
    let arm_w = ArmSample::new(vec![values], weights.clone())?;
    let arm_d = ArmSample::unweighted(vec![direct.clone()])?;
    let cmp = bootstrap_two_sample(&arm_d, &arm_w, config.bootstrap_resamples, config.report_seed)?;

    let (direct_mean, direct_mean_stderr) = mean_and_stderr(direct);
    let direct_squares: Vec<f64> = direct.iter().map(|x| x * x).collect();
    let (direct_second_moment, direct_second_moment_stderr) = mean_and_stderr(&direct_squares);
    let weighted_mean = arm_w.mean(0);
    let weighted_second_moment = stats::weighted_mean(&squares, &weights);
    Ok(OracleReport {
        config: *config,
        analytic_mean: analytic_tilt_moments(config.mu, config.t_final, 1)?,
        analytic_second_moment: analytic_tilt_moments(config.mu, config.t_final, 2)?,
        weighted_mean,
        weighted_mean_stderr: cmp[0].mean_stderr_b,
        weighted_second_moment,
        weighted_second_moment_stderr: stats::weighted_mean_stderr(&squares, &weights),
        direct_mean,
        direct_mean_stderr,
        direct_second_moment,
        direct_second_moment_stderr,
        z_score: z_score(direct_mean, direct_mean_stderr, weighted_mean, cmp[0].mean_stderr_b),
        ks_statistic: cmp[0].ks_statistic,
        ks_p_value: cmp[0].ks_p_value,
        ess: ess(&weights)?,
        weight_mean,
        weight_mean_stderr,
    })
}
