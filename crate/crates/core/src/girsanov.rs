//! Exponential change of measure along a lattice path.
//!
//! For a path `u` driven by increments `dW`, the running log-density is
//!
//! ```text
//! log Xi_k = sum_{k'<k, j} R(t_k', x_j, u[k'][j]) dW[k'][j] - 1/2 sum_{k'<k, j} R^2 dt dx
//! ```
//!
//! and `tau_n` is the first time index at which the running `sum R^2 dt dx`
//! reaches `n` (or `nt` if it never does). `R` is always evaluated at the
//! left time point, so every increment is weighted by a predictable factor.
//!
//! Weighting driftless paths by `Xi` reproduces the law of the drifted
//! equation: a driftless step with noise `dW` is the drifted step with noise
//! `dW - R dt dx`, and the Gaussian tilt by `exp(R dW - R^2 dt dx / 2)` moves
//! exactly that mean shift.

use serde::Serialize;

use crate::coefficients::CoefficientSet;
use crate::error::{LabError, Result};
use crate::grid::{Grid, LatticeField, NoiseField};
use crate::solver::PathField;
use crate::stats::NeumaierSum;

/// Truncation levels used when none are configured.
pub const DEFAULT_LEVELS: [u32; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTrajectory {
    log_xi: Vec<f64>,
    r2_accum: Vec<f64>,
    levels: Vec<u32>,
    tau_index: Vec<usize>,
}

impl WeightTrajectory {
    /// Builds the trajectory from per-step sums `(sum R dW, sum R^2 * area)`.
    pub(crate) fn from_steps(
        nt: usize,
        levels: &[u32],
        mut step: impl FnMut(usize) -> (f64, f64),
    ) -> Result<Self> {
        Self::try_from_steps(nt, levels, |k| Ok(step(k)))
    }

    pub(crate) fn try_from_steps(
        nt: usize,
        levels: &[u32],
        mut step: impl FnMut(usize) -> Result<(f64, f64)>,
    ) -> Result<Self> {
        let mut log_xi = Vec::with_capacity(nt + 1);
        let mut r2_accum = Vec::with_capacity(nt + 1);
        log_xi.push(0.0);
        r2_accum.push(0.0);
        let (mut lx, mut r2) = (0.0, 0.0);
        for k in 0..nt {
            let (ito, quad) = step(k)?;
            lx += ito - 0.5 * quad;
            r2 += quad;
            if !lx.is_finite() || !r2.is_finite() {
                return Err(LabError::WeightOverflow { k: k + 1 });
            }
            log_xi.push(lx);
            r2_accum.push(r2);
        }
        Ok(Self::with_levels(log_xi, r2_accum, levels))
    }

    fn with_levels(log_xi: Vec<f64>, r2_accum: Vec<f64>, levels: &[u32]) -> Self {
        let nt = r2_accum.len() - 1;
        let tau_index = levels
            .iter()
            .map(|&n| {
                let n = n as f64;
                r2_accum.iter().position(|&r| r >= n).unwrap_or(nt)
            })
            .collect();
        Self {
            log_xi,
            r2_accum,
            levels: levels.to_vec(),
            tau_index,
        }
    }

    /// Trajectory of a zero ratio: every entry exactly 0.
    pub fn zero(nt: usize, levels: &[u32]) -> Self {
        Self::with_levels(vec![0.0; nt + 1], vec![0.0; nt + 1], levels)
    }

    pub fn nt(&self) -> usize {
        self.log_xi.len() - 1
    }

    pub fn log_xi(&self) -> &[f64] {
        &self.log_xi
    }

    pub fn r2_accum(&self) -> &[f64] {
        &self.r2_accum
    }

    pub fn r2_terminal(&self) -> f64 {
        self.r2_accum[self.nt()]
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    /// `tau_n` as a time index, for the `i`-th configured level.
    pub fn tau_index(&self, i: usize) -> usize {
        self.tau_index[i]
    }

    /// `log Xi` frozen at `tau_n`.
    pub fn stopped_log_xi(&self, i: usize) -> f64 {
        self.log_xi[self.tau_index[i]]
    }

    /// Whether `tau_n = T`.
    pub fn reaches_terminal(&self, i: usize) -> bool {
        self.tau_index[i] == self.nt()
    }
}

/// Running `log Xi`, `int int R^2` and stopping times along `path`.
pub fn accumulate(
    path: &PathField,
    noise: &NoiseField,
    coeffs: &CoefficientSet,
    grid: &Grid,
    levels: &[u32],
) -> Result<WeightTrajectory> {
    path.matches(grid)?;
    noise.matches(grid)?;
    if coeffs.ratio_is_zero() {
        return Ok(WeightTrajectory::zero(grid.nt(), levels));
    }
    let centers = grid.cell_centers();
    WeightTrajectory::from_steps(grid.nt(), levels, |k| {
        row_increment(coeffs, grid, &centers, k, path.row(k), noise.row(k))
    })
}

/// `(sum_j R dW, sum_j R^2 dt dx)` over time row `k`.
#[inline]
pub(crate) fn row_increment(
    coeffs: &CoefficientSet,
    grid: &Grid,
    centers: &[f64],
    k: usize,
    state: &[f64],
    noise_row: &[f64],
) -> (f64, f64) {
    let t = grid.time(k);
    let (mut ito, mut quad) = (0.0, 0.0);
    for ((&u, &dw), &x) in state.iter().zip(noise_row).zip(centers) {
        let r = coeffs.drift_ratio(t, x, u);
        ito += r * dw;
        quad += r * r;
    }
    (ito, quad * grid.cell_area())
}

/// Running `log Upsilon = -sum R dW - 1/2 sum R^2 dt dx`, the density in
/// the opposite direction to [`accumulate`].
pub fn log_upsilon(
    path: &PathField,
    noise: &NoiseField,
    coeffs: &CoefficientSet,
    grid: &Grid,
) -> Result<Vec<f64>> {
    path.matches(grid)?;
    noise.matches(grid)?;
    let centers = grid.cell_centers();
    let area = grid.cell_area();
    let mut out = Vec::with_capacity(grid.nt() + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for k in 0..grid.nt() {
        let t = grid.time(k);
        let (mut ito, mut quad) = (0.0, 0.0);
        for ((&u, &dw), &x) in path.row(k).iter().zip(noise.row(k)).zip(&centers) {
            let r = coeffs.drift_ratio(t, x, u);
            ito += r * dw;
            quad += r * r;
        }
        acc += -ito - 0.5 * quad * area;
        if !acc.is_finite() {
            return Err(LabError::WeightOverflow { k: k + 1 });
        }
        out.push(acc);
    }
    Ok(out)
}

/// `dW'[k][j] = dW[k][j] + R(t_k, x_j, u[k][j]) dt dx`.
///
/// If `path` solves the drifted equation with `noise`, it solves the equation
/// without `d` when driven by the shifted noise.
pub fn shifted_noise(
    noise: &NoiseField,
    path: &PathField,
    coeffs: &CoefficientSet,
    grid: &Grid,
) -> Result<NoiseField> {
    path.matches(grid)?;
    noise.matches(grid)?;
    let area = grid.cell_area();
    let shifted = LatticeField::on_grid(grid, |k, j| {
        let r = coeffs.drift_ratio(grid.time(k), grid.cell_center(j), path.row(k)[j]);
        noise.get(k, j) + r * area
    });
    NoiseField::from_increments(grid, shifted, noise.master_seed(), noise.path_index())
}

/// Sample estimate of `E[exp(1/2 int int R^2)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NovikovDiagnostic {
    /// `+inf` as soon as any input overflows.
    pub estimate: f64,
    pub fraction_overflowed: f64,
}

/// Inputs above this overflow `exp(r2 / 2)` or come within a rounding of it.
pub const NOVIKOV_OVERFLOW_R2: f64 = 1418.0;

/// Panics on an empty ensemble.
pub fn novikov_estimate(r2_terminal: &[f64]) -> NovikovDiagnostic {
    assert!(!r2_terminal.is_empty(), "novikov_estimate needs at least one path");
    let overflowed = r2_terminal
        .iter()
        .filter(|&&r| !(r <= NOVIKOV_OVERFLOW_R2))
        .count();
    let fraction_overflowed = overflowed as f64 / r2_terminal.len() as f64;
    let estimate = if overflowed > 0 {
        f64::INFINITY
    } else {
        let mut acc = NeumaierSum::new();
        for &r in r2_terminal {
            acc.add((0.5 * r).exp());
        }
        acc.value() / r2_terminal.len() as f64
    };
    NovikovDiagnostic {
        estimate,
        fraction_overflowed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AllenCahnParams, InitialCondition};
    use crate::grid::sample_noise;
    use crate::solver::{simulate_path, SchemeConfig};
    use crate::stats::mean_and_stderr;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ac_set(gamma: f64) -> CoefficientSet {
        CoefficientSet::allen_cahn(AllenCahnParams::new(1.0, gamma), InitialCondition::Constant(0.5))
            .unwrap()
    }

    #[test]
    fn zero_ratio_gives_exact_zero_weights() {
        let g = Grid::new(0.1, 1.0, 50, 16).unwrap();
        let set = CoefficientSet::constant(1.0, 0.3, 0.0, InitialCondition::Constant(0.1)).unwrap();
        let noise = sample_noise(&g, 1, 1);
        let path = simulate_path(&set, true, &g, &noise, &SchemeConfig::default()).unwrap();
        let traj = accumulate(&path, &noise, &set, &g, &DEFAULT_LEVELS).unwrap();
        assert!(traj.log_xi().iter().all(|v| v.to_bits() == 0));
        assert!(traj.r2_accum().iter().all(|v| v.to_bits() == 0));
        assert!((0..DEFAULT_LEVELS.len()).all(|i| traj.reaches_terminal(i)));
    }

    #[test]
    fn constant_ratio_hand_computation() {
        // R = 2 on [0,1]^2: r2(t) = 4t, tau_1 at t = 0.25, tau_4 at T
        let g = Grid::new(1.0, 1.0, 100, 10).unwrap();
        let set = CoefficientSet::constant(1.0, 0.0, 2.0, InitialCondition::Constant(0.0)).unwrap();
        let noise = sample_noise(&g, 0, 0);
        let path = simulate_path(&set, false, &g, &noise, &SchemeConfig::default()).unwrap();
        let traj = accumulate(&path, &noise, &set, &g, &[1, 2, 4, 8]).unwrap();
        assert_relative_eq!(traj.r2_terminal(), 4.0, epsilon = 1e-12);
        assert_eq!(traj.tau_index(0), 25);
        assert_eq!(traj.tau_index(1), 50);
        assert_eq!(traj.tau_index(2), 100);
        assert!(!traj.reaches_terminal(1));
        assert!(traj.reaches_terminal(2) && traj.reaches_terminal(3));
        // log Xi_T = 2 W(T, L) - 2
        assert_relative_eq!(
            traj.log_xi()[100],
            2.0 * noise.sheet_total() - 2.0,
            epsilon = 1e-12
        );
        assert_eq!(traj.stopped_log_xi(0), traj.log_xi()[25]);
    }

    proptest! {
        #[test]
        fn trajectory_invariants(seed in 0u64..200, gamma in prop::sample::select(vec![0.5, 0.75, 1.0])) {
            let g = Grid::new(0.5, 1.0, 60, 8).unwrap();
            let set = ac_set(gamma).with_initial(InitialCondition::Constant(1.5));
            let noise = sample_noise(&g, seed, 0);
            let path = simulate_path(&set, false, &g, &noise, &SchemeConfig::default()).unwrap();
            let levels = [1, 2, 3, 5, 8];
            let traj = accumulate(&path, &noise, &set, &g, &levels).unwrap();
            prop_assert_eq!(traj.log_xi()[0], 0.0);
            prop_assert!(traj.r2_accum().windows(2).all(|w| w[0] <= w[1]));
            for i in 0..levels.len() {
                prop_assert_eq!(traj.stopped_log_xi(i), traj.log_xi()[traj.tau_index(i)]);
                if i > 0 {
                    prop_assert!(traj.tau_index(i - 1) <= traj.tau_index(i));
                }
            }
        }
    }

    #[test]
    fn stopped_exponential_has_unit_mean() {
        let g = Grid::new(0.1, 1.0, 20, 8).unwrap();
        let set = ac_set(0.75).with_initial(InitialCondition::Constant(0.2));
        let levels = [1u32, 2];
        let weights: Vec<Vec<f64>> = (0..20_000u64)
            .map(|p| {
                let noise = sample_noise(&g, 17, p);
                let path = simulate_path(&set, false, &g, &noise, &SchemeConfig::default()).unwrap();
                let t = accumulate(&path, &noise, &set, &g, &levels).unwrap();
                (0..levels.len()).map(|i| t.stopped_log_xi(i).exp()).collect()
            })
            .collect();
        for i in 0..levels.len() {
            let w: Vec<f64> = weights.iter().map(|v| v[i]).collect();
            let (m, se) = mean_and_stderr(&w);
            assert!((m - 1.0).abs() < 3.0 * se, "level {i}: {m} +- {se}");
        }
    }

    #[test]
    fn drift_absorption_reproduces_drifted_path() {
        let g = Grid::new(0.1, 1.0, 200, 16).unwrap();
        for gamma in [0.5, 0.75, 1.0] {
            let set = ac_set(gamma);
            let noise = sample_noise(&g, 3, 1);
            let scheme = SchemeConfig::default();
            let drifted = simulate_path(&set, true, &g, &noise, &scheme).unwrap();
            let shifted = shifted_noise(&noise, &drifted, &set, &g).unwrap();
            let undrifted = simulate_path(&set, false, &g, &shifted, &scheme).unwrap();
            let gap = drifted
                .values()
                .values()
                .iter()
                .zip(undrifted.values().values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap <= 1e-8, "gamma={gamma}: {gap}");
        }
    }

    #[test]
    fn shifted_noise_examples() {
        let g = Grid::new(0.5, 2.0, 10, 4).unwrap();
        let noise = sample_noise(&g, 0, 0);
        let zero = CoefficientSet::zero_drift(1.0, InitialCondition::Constant(0.0)).unwrap();
        let path = simulate_path(&zero, false, &g, &noise, &SchemeConfig::default()).unwrap();
        assert_eq!(shifted_noise(&noise, &path, &zero, &g).unwrap(), noise);

        let set = CoefficientSet::constant(2.0, 0.0, 1.0, InitialCondition::Constant(0.0)).unwrap();
        let shifted = shifted_noise(&noise, &path, &set, &g).unwrap();
        for k in 0..g.nt() {
            for j in 0..g.nx() {
                assert_relative_eq!(shifted.get(k, j) - noise.get(k, j), 0.5 * g.cell_area(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn xi_and_upsilon_are_negatives() {
        // drifted path V with its noise dW~; Xi uses the shifted noise
        let g = Grid::new(0.1, 1.0, 100, 16).unwrap();
        let set = ac_set(0.75);
        let levels = DEFAULT_LEVELS;
        for p in 0..5 {
            let noise = sample_noise(&g, 8, p);
            let v = simulate_path(&set, true, &g, &noise, &SchemeConfig::default()).unwrap();
            let shifted = shifted_noise(&noise, &v, &set, &g).unwrap();
            let xi = accumulate(&v, &shifted, &set, &g, &levels).unwrap();
            let ups = log_upsilon(&v, &noise, &set, &g).unwrap();
            for i in 0..levels.len() {
                let tau = xi.tau_index(i);
                let a = xi.stopped_log_xi(i);
                let b = -ups[tau];
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn novikov_examples() {
        assert_eq!(novikov_estimate(&[0.0, 0.0]).estimate, 1.0);
        assert_relative_eq!(novikov_estimate(&[2.0; 5]).estimate, std::f64::consts::E, epsilon = 1e-12);
        let d = novikov_estimate(&[1.0, 1418.5, 3.0, 2000.0]);
        assert_eq!(d.fraction_overflowed, 0.5);
        assert_eq!(d.estimate, f64::INFINITY);
        assert!(novikov_estimate(&[1.0, 2.0]).estimate < novikov_estimate(&[1.0, 2.5]).estimate);
    }
}
