//! Direct versus reweighted ensembles and their statistical comparison.
//!
//! The direct arm simulates the drifted equation under its own measure. The
//! reweighted arm simulates the equation without `d` and carries the stopped
//! log-density for every truncation level `n`. Statistics at level `n` use
//! only paths with `tau_n = T` in each arm, so both arms estimate the law of
//! the drifted solution restricted to that event.
//!
//! Laws on path space are probed through a finite battery of terminal-time
//! functionals; each gets a mean comparison and a weighted KS test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{LabError, Result};
use crate::grid::{Grid, NoiseStream};
use crate::solver::{SchemeConfig, Stepper};
#[cfg(doc)]
use crate::{girsanov::accumulate, solver::simulate_path};
use crate::stats::{
    bootstrap_two_sample, ess, mean_and_stderr, normalized_weights, z_score, ArmSample,
};

/// Largest tolerated fraction of blown-up paths.
pub const MAX_BLOW_UP_FRACTION: f64 = 0.2;

/// A scalar summary of the solution at `t = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// Value at the cell center nearest to `x0`.
    PointValue { x0: f64 },
    SpatialMean,
    SpatialMax,
    /// `sqrt(sum_j u_j^2 dx)`.
    L2Norm,
}

impl Functional {
    pub fn default_battery(length: f64) -> Vec<Functional> {
        vec![
            Functional::PointValue { x0: length / 2.0 },
            Functional::SpatialMean,
            Functional::SpatialMax,
            Functional::L2Norm,
        ]
    }

    pub fn name(&self) -> String {
        match self {
            Functional::PointValue { x0 } => format!("point_value_{x0}"),
            Functional::SpatialMean => "spatial_mean".into(),
            Functional::SpatialMax => "spatial_max".into(),
            Functional::L2Norm => "l2_norm".into(),
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if let Functional::PointValue { x0 } = *self {
            if !(0.0..=grid.length()).contains(&x0) {
                return Err(LabError::InvalidConfig(format!(
                    "point_value x0 = {x0} outside [0, {}]",
                    grid.length()
                )));
            }
        }
        Ok(())
    }

    /// Cell whose center is nearest to `x0`; a point on a cell face goes to
    /// the cell on its right.
    pub fn cell_index(x0: f64, grid: &Grid) -> usize {
        ((x0 / grid.dx()).floor() as usize).min(grid.nx() - 1)
    }

    pub fn evaluate(&self, terminal: &[f64], grid: &Grid) -> f64 {
        match *self {
            Functional::PointValue { x0 } => terminal[Self::cell_index(x0, grid)],
            Functional::SpatialMean => terminal.iter().sum::<f64>() / terminal.len() as f64,
            Functional::SpatialMax => terminal.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Functional::L2Norm => (terminal.iter().map(|u| u * u).sum::<f64>() * grid.dx()).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Direct,
    Reweighted,
}

impl Arm {
    pub fn name(&self) -> &'static str {
        match self {
            Arm::Direct => "direct",
            Arm::Reweighted => "reweighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub path_index: u64,
    pub blow_up: bool,
    /// One entry per functional; NaN for blown-up paths.
    pub values: Vec<f64>,
    /// Stopped `log Xi` per level; exactly 0 in the direct arm.
    pub log_xi: Vec<f64>,
    pub r2_terminal: f64,
    /// `tau_n = T` per level.
    pub tau_terminal: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub arm: Arm,
    pub master_seed: u64,
    pub grid: Grid,
    pub coefficients: CoefficientSet,
    pub levels: Vec<u32>,
    pub functionals: Vec<Functional>,
    pub records: Vec<PathRecord>,
    pub blow_ups: usize,
}

impl EnsembleResult {
    pub fn accepted(&self) -> impl Iterator<Item = &PathRecord> {
        self.records.iter().filter(|r| !r.blow_up)
    }

    pub fn level_index(&self, level: u32) -> Option<usize> {
        self.levels.iter().position(|&n| n == level)
    }

    /// Weights `exp(stopped log Xi)` at level index `i` over accepted paths.
    pub fn stopped_weights(&self, i: usize) -> Vec<f64> {
        self.accepted().map(|r| r.log_xi[i].exp()).collect()
    }
}

/// Everything needed to generate one arm.
#[derive(Debug, Clone)]
pub struct ArmSpec<'a> {
    pub coeffs: &'a CoefficientSet,
    pub grid: &'a Grid,
    pub scheme: &'a SchemeConfig,
    pub paths: usize,
    pub master_seed: u64,
    pub functionals: &'a [Functional],
    pub levels: &'a [u32],
}

impl ArmSpec<'_> {
    fn validate(&self) -> Result<()> {
        if self.paths < 2 {
            return Err(LabError::InvalidConfig(format!(
                "an ensemble needs at least 2 paths, got {}",
                self.paths
            )));
        }
        if self.levels.contains(&0) {
            return Err(LabError::InvalidConfig(
                "truncation levels must be positive".into(),
            ));
        }
        for f in self.functionals {
            f.validate(self.grid)?;
        }
        self.scheme.validate(self.coeffs)
    }
}

/// Paths simulated in lockstep by [`run_arm`].
const LANES: usize = 8;

/// Simulates one path of `arm` and reduces it to a record.
pub fn simulate_record(spec: &ArmSpec<'_>, arm: Arm, path_index: u64) -> Result<PathRecord> {
    let mut out = simulate_batch::<1>(spec, arm, path_index, 1)?;
    Ok(out.pop().expect("one record"))
}

/// Simulates paths `first..first + count` (`count <= N`) side by side.
///
/// Noise, state and weights advance one time row at a time, so memory stays
/// `O(N nx)`. Lanes never mix, so every record is bit-identical to running
/// [`simulate_path`] and [`accumulate`] on that path's full fields,
/// whatever the batch composition.
fn simulate_batch<const N: usize>(
    spec: &ArmSpec<'_>,
    arm: Arm,
    first: u64,
    count: usize,
) -> Result<Vec<PathRecord>> {
    debug_assert!(count >= 1 && count <= N);
    let grid = spec.grid;
    let (nt, nx) = (grid.nt(), grid.nx());
    let include_d = arm == Arm::Direct;
    let stepper = Stepper::new(grid, spec.coeffs, include_d, spec.scheme)?;
    let centers = grid.cell_centers();
    let mut streams: Vec<NoiseStream> = (0..count as u64)
        .map(|l| NoiseStream::new(grid, spec.master_seed, first + l))
        .collect();
    let mut state: Vec<[f64; N]> = centers.iter().map(|&x| [spec.coeffs.h(x); N]).collect();
    let mut next = vec![[0.0; N]; nx];
    let mut dw = vec![[0.0; N]; nx];
    let mut row = vec![0.0; nx];
    let mut scratch = vec![[0.0; N]; nx];
    let weighted = !spec.coeffs.ratio_is_zero();

    let mut alive = [false; N];
    alive[..count].fill(true);
    let (mut lx, mut r2) = ([0.0; N], [0.0; N]);
    let levels: Vec<f64> = spec.levels.iter().map(|&n| n as f64).collect();
    // per lane and level: (tau_n index, stopped log Xi) once r2 reaches n
    let mut stopped: Vec<[Option<(usize, f64)>; N]> = vec![[None; N]; levels.len()];

    for k in 0..nt {
        for (l, stream) in streams.iter_mut().enumerate() {
            stream.fill_row(&mut row);
            for (d, &v) in dw.iter_mut().zip(&row) {
                d[l] = v;
            }
        }
        if weighted {
            let (mut ito, mut quad) = ([0.0; N], [0.0; N]);
            spec.coeffs.ratio_into(state.as_flattened(), scratch.as_flattened_mut());
            for (r, d) in scratch.iter().zip(&dw) {
                for l in 0..N {
                    ito[l] += r[l] * d[l];
                    quad[l] += r[l] * r[l];
                }
            }
            for l in (0..N).filter(|&l| alive[l]) {
                let q = quad[l] * grid.cell_area();
                lx[l] += ito[l] - 0.5 * q;
                r2[l] += q;
                if !lx[l].is_finite() || !r2[l].is_finite() {
                    return Err(LabError::WeightOverflow { k: k + 1 });
                }
                for (lvl, s) in levels.iter().zip(stopped.iter_mut()) {
                    if s[l].is_none() && r2[l] >= *lvl {
                        s[l] = Some((k + 1, lx[l]));
                    }
                }
            }
        }
        let ok = stepper.advance_lanes(&state, &dw, &mut next, &mut scratch);
        for l in 0..N {
            alive[l] &= ok[l];
        }
        std::mem::swap(&mut state, &mut next);
    }

    Ok((0..count)
        .map(|l| {
            let path_index = first + l as u64;
            if !alive[l] {
                return PathRecord {
                    path_index,
                    blow_up: true,
                    values: vec![f64::NAN; spec.functionals.len()],
                    log_xi: vec![f64::NAN; spec.levels.len()],
                    r2_terminal: f64::NAN,
                    tau_terminal: vec![false; spec.levels.len()],
                };
            }
            let terminal: Vec<f64> = state.iter().map(|u| u[l]).collect();
            PathRecord {
                path_index,
                blow_up: false,
                values: spec
                    .functionals
                    .iter()
                    .map(|f| f.evaluate(&terminal, grid))
                    .collect(),
                log_xi: stopped
                    .iter()
                    .map(|s| match arm {
                        Arm::Direct => 0.0,
                        Arm::Reweighted => s[l].map_or(lx[l], |(_, v)| v),
                    })
                    .collect(),
                r2_terminal: r2[l],
                tau_terminal: stopped.iter().map(|s| s[l].is_none_or(|(i, _)| i == nt)).collect(),
            }
        })
        .collect())
}

/// Generates an arm on the current rayon pool. Records come back in
/// path-index order whatever the thread count.
pub fn run_arm(spec: &ArmSpec<'_>, arm: Arm) -> Result<EnsembleResult> {
    spec.validate()?;
    let records: Vec<PathRecord> = (0..spec.paths.div_ceil(LANES))
        .into_par_iter()
        .map(|b| {
            let first = b * LANES;
            let count = LANES.min(spec.paths - first);
            simulate_batch::<LANES>(spec, arm, first as u64, count)
        })
        .collect::<Result<Vec<Vec<PathRecord>>>>()?
        .into_iter()
        .flatten()
        .collect();
    let blow_ups = records.iter().filter(|r| r.blow_up).count();
    if blow_ups as f64 > MAX_BLOW_UP_FRACTION * spec.paths as f64 {
        return Err(LabError::TooManyBlowUps {
            blown_up: blow_ups,
            total: spec.paths,
        });
    }
    Ok(EnsembleResult {
        arm,
        master_seed: spec.master_seed,
        grid: *spec.grid,
        coefficients: spec.coeffs.clone(),
        levels: spec.levels.to_vec(),
        functionals: spec.functionals.to_vec(),
        records,
        blow_ups,
    })
}

/// The drifted equation `b + d` under its own measure, unit weights.
pub fn run_direct(spec: &ArmSpec<'_>) -> Result<EnsembleResult> {
    run_arm(spec, Arm::Direct)
}

/// The equation without `d`, weighted by the stopped density of `d / a`.
pub fn run_reweighted(spec: &ArmSpec<'_>) -> Result<EnsembleResult> {
    let result = run_arm(spec, Arm::Reweighted)?;
    for i in 0..result.levels.len() {
        let logs: Vec<f64> = result.accepted().map(|r| r.log_xi[i]).collect();
        ess(&normalized_weights(&logs)?)?;
    }
    Ok(result)
}

/// Fraction of accepted paths with `tau_n = T`, per level.
pub fn tau_coverage(ensemble: &EnsembleResult, levels: &[u32]) -> Vec<(u32, f64)> {
    let accepted = ensemble.accepted().count().max(1) as f64;
    levels
        .iter()
        .map(|&n| {
            let frac = match ensemble.level_index(n) {
                Some(i) => ensemble.accepted().filter(|r| r.tau_terminal[i]).count() as f64 / accepted,
                None => f64::NAN,
            };
            (n, frac)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub bootstrap_resamples: usize,
    pub report_seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            bootstrap_resamples: 1000,
            report_seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub functional: String,
    pub direct_mean: f64,
    pub direct_stderr: f64,
    pub weighted_mean: f64,
    /// Bootstrap standard error.
    pub weighted_stderr: f64,
    pub z_score: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub level: u32,
    pub functionals: Vec<FunctionalReport>,
    /// ESS of the restricted reweighted arm.
    pub ess: f64,
    pub reweighted_paths_used: usize,
    pub direct_paths_used: usize,
    pub direct_coverage: f64,
    pub reweighted_coverage: f64,
    /// Mean and standard error of `exp(stopped log Xi)` over every accepted
    /// reweighted path; the stopped density has unit mean.
    pub stopped_weight_mean: f64,
    pub stopped_weight_stderr: f64,
}

impl TestReport {
    pub fn max_abs_z(&self) -> f64 {
        self.functionals.iter().map(|f| f.z_score.abs()).fold(0.0, f64::max)
    }

    pub fn min_ks_p(&self) -> f64 {
        self.functionals.iter().map(|f| f.ks_p_value).fold(1.0, f64::min)
    }
}

#[derive(PartialEq)]
struct Restricted {
    paths: Vec<u64>,
    columns: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
}

fn restrict(ens: &EnsembleResult, i: usize) -> Restricted {
    let kept: Vec<&PathRecord> = ens.accepted().filter(|r| r.tau_terminal[i]).collect();
    Restricted {
        paths: kept.iter().map(|r| r.path_index).collect(),
        columns: (0..ens.functionals.len())
            .map(|c| kept.iter().map(|r| r.values[c]).collect())
            .collect(),
        log_weights: kept.iter().map(|r| r.log_xi[i]).collect(),
    }
}

/// Compares the two arms at truncation level `level`, on `{tau_n = T}`.
pub fn compare(
    direct: &EnsembleResult,
    reweighted: &EnsembleResult,
    level: u32,
    options: &CompareOptions,
) -> Result<TestReport> {
    compare_levels(direct, reweighted, &[level], options)?
        .pop()
        .expect("one level")
}

/// [`compare`] at each level. Levels whose restricted samples coincide
/// with the previous level's share one bootstrap, which gives the same
/// result as running it again.
pub fn compare_levels(
    direct: &EnsembleResult,
    reweighted: &EnsembleResult,
    levels: &[u32],
    options: &CompareOptions,
) -> Result<Vec<Result<TestReport>>> {
    if direct.functionals != reweighted.functionals || direct.grid != reweighted.grid {
        return Err(LabError::InvalidConfig(
            "arms must share the grid and functional battery".into(),
        ));
    }
    let mut previous: Option<(Restricted, Restricted, Vec<FunctionalReport>, f64)> = None;
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let (di, ri) = match (direct.level_index(level), reweighted.level_index(level)) {
            (Some(d), Some(r)) => (d, r),
            _ => {
                out.push(Err(LabError::InvalidConfig(format!(
                    "level {level} is not configured in both arms"
                ))));
                continue;
            }
        };
        let d = restrict(direct, di);
        let r = restrict(reweighted, ri);
        if d.log_weights.is_empty() {
            out.push(Err(LabError::InsufficientCoverage { level, arm: "direct" }));
            continue;
        }
        if r.log_weights.is_empty() {
            out.push(Err(LabError::InsufficientCoverage { level, arm: "reweighted" }));
            continue;
        }
        let reuse = matches!(&previous, Some((pd, pr, _, _)) if *pd == d && *pr == r);
        if !reuse {
            let (functionals, ess_value) = test_functionals(direct, &d, &r, options)?;
            previous = Some((d, r, functionals, ess_value));
        }
        let (d, r, functionals, ess_value) = previous.as_ref().expect("set above");
        let (stopped_weight_mean, stopped_weight_stderr) =
            mean_and_stderr(&reweighted.stopped_weights(ri));
        let coverage = |e: &EnsembleResult| tau_coverage(e, &[level])[0].1;
        out.push(Ok(TestReport {
            level,
            functionals: functionals.clone(),
            ess: *ess_value,
            reweighted_paths_used: r.paths.len(),
            direct_paths_used: d.paths.len(),
            direct_coverage: coverage(direct),
            reweighted_coverage: coverage(reweighted),
            stopped_weight_mean,
            stopped_weight_stderr,
        }));
    }
    Ok(out)
}

fn test_functionals(
    direct: &EnsembleResult,
    d: &Restricted,
    r: &Restricted,
    options: &CompareOptions,
) -> Result<(Vec<FunctionalReport>, f64)> {
    let dw = normalized_weights(&d.log_weights)?;
    let rw = normalized_weights(&r.log_weights)?;
    let ess_value = ess(&rw)?;
    let arm_d = ArmSample::new(d.columns.clone(), dw)?;
    let arm_r = ArmSample::new(r.columns.clone(), rw)?;
    let boot = bootstrap_two_sample(&arm_d, &arm_r, options.bootstrap_resamples, options.report_seed)?;
    // classical stderr when the direct arm carries unit weights
    let unit_direct = d.log_weights.iter().all(|&w| w == d.log_weights[0]);
    let functionals = direct
        .functionals
        .iter()
        .enumerate()
        .map(|(c, f)| {
            let direct_mean = arm_d.mean(c);
            let direct_stderr = if unit_direct {
                mean_and_stderr(&arm_d.columns[c]).1
            } else {
                boot[c].mean_stderr_a
            };
            let weighted_mean = arm_r.mean(c);
            let weighted_stderr = boot[c].mean_stderr_b;
            FunctionalReport {
                functional: f.name(),
                direct_mean,
                direct_stderr,
                weighted_mean,
                weighted_stderr,
                z_score: z_score(direct_mean, direct_stderr, weighted_mean, weighted_stderr),
                ks_statistic: boot[c].ks_statistic,
                ks_p_value: boot[c].ks_p_value,
            }
        })
        .collect();
    Ok((functionals, ess_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AllenCahnParams, InitialCondition};
    use approx::assert_relative_eq;

    fn spec<'a>(
        coeffs: &'a CoefficientSet,
        grid: &'a Grid,
        scheme: &'a SchemeConfig,
        functionals: &'a [Functional],
        levels: &'a [u32],
        paths: usize,
        seed: u64,
    ) -> ArmSpec<'a> {
        ArmSpec {
            coeffs,
            grid,
            scheme,
            paths,
            master_seed: seed,
            functionals,
            levels,
        }
    }

    #[test]
    fn streamed_record_matches_full_fields() {
        use crate::girsanov::accumulate;
        use crate::grid::sample_noise;
        use crate::solver::simulate_path;
        let g = Grid::new(0.1, 1.0, 200, 16).unwrap();
        let fs = Functional::default_battery(1.0);
        let scheme = SchemeConfig::default();
        let levels = [1, 2, 4];
        for gamma in [0.5, 0.75, 1.0] {
            let set = CoefficientSet::allen_cahn(AllenCahnParams::new(1.0, gamma), InitialCondition::Constant(0.5)).unwrap();
            let s = spec(&set, &g, &scheme, &fs, &levels, 2, 7);
            for p in 0..3 {
                let rec = simulate_record(&s, Arm::Reweighted, p).unwrap();
                let noise = sample_noise(&g, 7, p);
                let path = simulate_path(&set, false, &g, &noise, &scheme).unwrap();
                let traj = accumulate(&path, &noise, &set, &g, &levels).unwrap();
                let values: Vec<f64> = fs.iter().map(|f| f.evaluate(path.terminal(), &g)).collect();
                assert_eq!(rec.values, values);
                assert_eq!(rec.r2_terminal, traj.r2_terminal());
                for i in 0..levels.len() {
                    assert_eq!(rec.log_xi[i].to_bits(), traj.stopped_log_xi(i).to_bits());
                }
                let batched = &run_reweighted(&spec(&set, &g, &scheme, &fs, &levels, 11, 7)).unwrap().records[p as usize];
                assert_eq!(&rec, batched);
                let direct = simulate_record(&s, Arm::Direct, p).unwrap();
                let dpath = simulate_path(&set, true, &g, &noise, &scheme).unwrap();
                assert_eq!(direct.values[3], fs[3].evaluate(dpath.terminal(), &g));
            }
        }
    }

    #[test]
    fn functional_values() {
        let g = Grid::new(1.0, 1.0, 1, 4).unwrap();
        let u = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(Functional::PointValue { x0: 0.5 }.evaluate(&u, &g), 3.0);
        assert_eq!(Functional::PointValue { x0: 0.1 }.evaluate(&u, &g), 1.0);
        assert_eq!(Functional::PointValue { x0: 1.0 }.evaluate(&u, &g), 0.5);
        assert_relative_eq!(Functional::SpatialMean.evaluate(&u, &g), 0.625);
        assert_eq!(Functional::SpatialMax.evaluate(&u, &g), 3.0);
        assert_relative_eq!(Functional::L2Norm.evaluate(&u, &g), (14.25f64 * 0.25).sqrt());
        assert!(Functional::PointValue { x0: 1.5 }.validate(&g).is_err());
    }

    #[test]
    fn deterministic_dynamics_have_zero_spread() {
        let g = Grid::new(0.1, 1.0, 50, 8).unwrap();
        let set = CoefficientSet::constant(0.0, 0.7, 0.0, InitialCondition::Constant(0.0)).unwrap();
        let fs = Functional::default_battery(1.0);
        let scheme = SchemeConfig::default();
        let res = run_direct(&spec(&set, &g, &scheme, &fs, &[1], 2, 0)).unwrap();
        assert_eq!(res.records[0].values, res.records[1].values);
        assert_relative_eq!(res.records[0].values[1], 0.07, epsilon = 1e-13);
    }

    #[test]
    fn allen_cahn_zero_is_absorbing() {
        let g = Grid::new(0.1, 1.0, 100, 16).unwrap();
        let set = CoefficientSet::allen_cahn(AllenCahnParams::new(1.0, 1.0), InitialCondition::Constant(0.0)).unwrap();
        let fs = Functional::default_battery(1.0);
        let scheme = SchemeConfig::default();
        let res = run_direct(&spec(&set, &g, &scheme, &fs, &[1], 20, 3)).unwrap();
        for r in &res.records {
            assert!(r.values.iter().all(|&v| v == 0.0), "{:?}", r.values);
        }
    }

    #[test]
    fn allen_cahn_drift_follows_scalar_ode() {
        let g = Grid::new(0.5, 1.0, 5000, 8).unwrap();
        let set = CoefficientSet::new(
            "allen_cahn_drift_only",
            crate::coefficients::Diffusion::Constant(0.0),
            crate::coefficients::Drift::AllenCahn { scale: 1.0 },
            crate::coefficients::Drift::Zero,
            InitialCondition::Constant(0.5),
        )
        .unwrap();
        let fs = [Functional::SpatialMean];
        let scheme = SchemeConfig::default();
        let res = run_direct(&spec(&set, &g, &scheme, &fs, &[1], 2, 0)).unwrap();
        // oracle: RK4 on u' = 2u(1 - u^2) with a fine step
        let f = |u: f64| 2.0 * u * (1.0 - u * u);
        let (mut u, h) = (0.5f64, 1e-5);
        for _ in 0..50_000 {
            let k1 = f(u);
            let k2 = f(u + 0.5 * h * k1);
            let k3 = f(u + 0.5 * h * k2);
            let k4 = f(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let got = res.records[0].values[0];
        assert!((got - u).abs() < 1e-3, "{got} vs {u}");
        assert!(got > 0.5 && got < 1.0);
    }

    #[test]
    fn zero_perturbation_weights_are_unit() {
        let g = Grid::new(0.05, 1.0, 50, 8).unwrap();
        let set = CoefficientSet::zero_drift(1.0, InitialCondition::Constant(0.0)).unwrap();
        let fs = Functional::default_battery(1.0);
        let scheme = SchemeConfig::default();
        let levels = [1, 2];
        let s = spec(&set, &g, &scheme, &fs, &levels, 50, 4);
        let rew = run_reweighted(&s).unwrap();
        let dir = run_direct(&s).unwrap();
        assert!(rew.records.iter().all(|r| r.log_xi.iter().all(|&w| w == 0.0)));
        assert_eq!(
            rew.records.iter().map(|r| &r.values).collect::<Vec<_>>(),
            dir.records.iter().map(|r| &r.values).collect::<Vec<_>>()
        );
        let report = compare(&dir, &rew, 1, &CompareOptions::default()).unwrap();
        for f in &report.functionals {
            assert_eq!(f.z_score, 0.0);
            assert_eq!(f.ks_statistic, 0.0);
        }
        assert_eq!(tau_coverage(&rew, &levels), vec![(1, 1.0), (2, 1.0)]);
    }

    #[test]
    fn constant_ratio_coverage_boundary() {
        // R = 2 on [0,1]^2: r2(T) = 4, so tau_n = T exactly for n >= 4
        let g = Grid::new(1.0, 1.0, 100, 8).unwrap();
        let set = CoefficientSet::constant(1.0, 0.0, 2.0, InitialCondition::Constant(0.0)).unwrap();
        let fs = [Functional::SpatialMean];
        let scheme = SchemeConfig::default();
        let levels = [1, 2, 4, 8];
        let rew = run_arm(&spec(&set, &g, &scheme, &fs, &levels, 10, 0), Arm::Reweighted).unwrap();
        assert_eq!(
            tau_coverage(&rew, &levels),
            vec![(1, 0.0), (2, 0.0), (4, 1.0), (8, 1.0)]
        );
        let dir = run_direct(&spec(&set, &g, &scheme, &fs, &levels, 10, 1)).unwrap();
        assert_eq!(
            compare(&dir, &rew, 1, &CompareOptions::default()),
            Err(LabError::InsufficientCoverage { level: 1, arm: "direct" })
        );
    }

    #[test]
    fn constant_coefficient_reweighting_recovers_mean() {
        let g = Grid::new(0.1, 1.0, 40, 8).unwrap();
        let set = CoefficientSet::constant(1.0, 0.0, 1.0, InitialCondition::Constant(0.0)).unwrap();
        let fs = Functional::default_battery(1.0);
        let scheme = SchemeConfig::default();
        let levels = [1];
        let rew = run_reweighted(&spec(&set, &g, &scheme, &fs, &levels, 4000, 10)).unwrap();
        let dir = run_direct(&spec(&set, &g, &scheme, &fs, &levels, 4000, 11)).unwrap();
        let report = compare(&dir, &rew, 1, &CompareOptions { bootstrap_resamples: 300, report_seed: 1 }).unwrap();
        let point = &report.functionals[0];
        assert!((point.weighted_mean - 0.1).abs() < 3.0 * point.weighted_stderr, "{point:?}");
        assert!(report.max_abs_z() < 4.0, "{report:?}");
        // log weights are W(T, L) - T L / 2
        let w = rew.stopped_weights(0);
        let (m, se) = mean_and_stderr(&w);
        assert!((m - 1.0).abs() < 3.0 * se);
        assert_relative_eq!(report.stopped_weight_mean, m);
    }

    #[test]
    fn self_comparison_is_null() {
        let g = Grid::new(0.05, 1.0, 50, 8).unwrap();
        let set = CoefficientSet::allen_cahn(AllenCahnParams::new(1.0, 0.5), InitialCondition::Constant(0.5)).unwrap();
        let fs = Functional::default_battery(1.0);
        let scheme = SchemeConfig::default();
        let levels = [1, 4];
        let rew = run_reweighted(&spec(&set, &g, &scheme, &fs, &levels, 100, 4)).unwrap();
        let report = compare(&rew, &rew, 4, &CompareOptions { bootstrap_resamples: 100, report_seed: 0 }).unwrap();
        for f in &report.functionals {
            assert_eq!(f.z_score, 0.0);
            assert_eq!(f.ks_statistic, 0.0);
            assert_eq!(f.ks_p_value, 1.0);
        }
    }

    #[test]
    fn compare_levels_matches_separate_compares() {
        let g = Grid::new(0.5, 1.0, 40, 8).unwrap();
        // r2 grows like 4 t, so level 1 stops early and level 4 does not
        let set = CoefficientSet::constant(1.0, 0.0, 2.0, InitialCondition::Constant(0.0)).unwrap();
        let fs = Functional::default_battery(1.0);
        let scheme = SchemeConfig::default();
        let levels = [1, 4, 8];
        let rew = run_reweighted(&spec(&set, &g, &scheme, &fs, &levels, 200, 2)).unwrap();
        let dir = run_direct(&spec(&set, &g, &scheme, &fs, &levels, 200, 3)).unwrap();
        let options = CompareOptions { bootstrap_resamples: 50, report_seed: 5 };
        let all = compare_levels(&dir, &rew, &levels, &options).unwrap();
        assert!(all[0].is_err());
        for (n, got) in levels.iter().zip(&all).skip(1) {
            assert_eq!(got.as_ref().unwrap(), &compare(&dir, &rew, *n, &options).unwrap());
        }
    }

    #[test]
    fn blow_up_budget_enforced() {
        let g = Grid::new(1.0, 1.0, 20, 4).unwrap();
        let set = CoefficientSet::constant(1.0, 5.0, 0.0, InitialCondition::Constant(0.0)).unwrap();
        let scheme = SchemeConfig {
            clamp_bound: Some(1.0),
            ..SchemeConfig::default()
        };
        let fs = [Functional::SpatialMean];
        let err = run_direct(&spec(&set, &g, &scheme, &fs, &[1], 10, 0)).unwrap_err();
        assert!(matches!(err, LabError::TooManyBlowUps { .. }));
    }

    #[test]
    fn ensembles_are_thread_count_independent() {
        let g = Grid::new(0.05, 1.0, 30, 8).unwrap();
        let set = CoefficientSet::allen_cahn(AllenCahnParams::new(1.0, 0.75), InitialCondition::Constant(0.5)).unwrap();
        let fs = Functional::default_battery(1.0);
        let scheme = SchemeConfig::default();
        let s = spec(&set, &g, &scheme, &fs, &[1, 2], 64, 9);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_reweighted(&s).unwrap());
        let b = four.install(|| run_reweighted(&s).unwrap());
        assert_eq!(a, b);
    }
}
