//! Semi-implicit lattice scheme for the stochastic heat equation
//!
//! ```text
//! (I - dt L) u^{k+1} = u^k + dt * drift(t_k, x_j, u^k_j) + a(t_k, x_j, u^k_j) * dW[k][j] / dx
//! ```
//!
//! `L` is the cell-centered second difference. Neumann boundaries mirror the
//! boundary cell into its ghost (zero flux, zero row sums); Dirichlet
//! boundaries use an antisymmetric ghost so the solution vanishes on the wall.
//! Diffusion is backward Euler, drift and noise are explicit at the left
//! time point.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{LabError, Result};
use crate::grid::{Grid, LatticeField, NoiseField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    #[default]
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Implicitness of the Laplacian. Only the fully implicit value 1 is supported.
    pub theta: f64,
    /// Paths with `|u|` above this bound are rejected as blown up.
    pub clamp_bound: Option<f64>,
    pub boundary: BoundaryKind,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            clamp_bound: None,
            boundary: BoundaryKind::Neumann,
        }
    }
}

impl SchemeConfig {
    pub fn with_boundary(boundary: BoundaryKind) -> Self {
        Self {
            boundary,
            ..Self::default()
        }
    }

    pub fn validate(&self, coeffs: &CoefficientSet) -> Result<()> {
        if self.theta != 1.0 {
            return Err(LabError::InvalidConfig(format!(
                "theta must be 1 (fully implicit diffusion), got {}",
                self.theta
            )));
        }
        if let Some(bound) = self.clamp_bound {
            let h_max = coeffs.initial().sup_abs();
            if !(bound > h_max) {
                return Err(LabError::InvalidConfig(format!(
                    "clamp_bound {bound} must exceed max |h| = {h_max}"
                )));
            }
        }
        Ok(())
    }
}

/// LU factors of the constant tridiagonal matrix `I - dt L`.
#[derive(Debug, Clone)]
pub struct ImplicitLaplacian {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    // Thomas sweep coefficients
    c_prime: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl ImplicitLaplacian {
    pub fn new(grid: &Grid, boundary: BoundaryKind) -> Self {
        let n = grid.nx();
        let r = grid.dt() / (grid.dx() * grid.dx());
        let mut lower = vec![-r; n];
        let mut upper = vec![-r; n];
        let mut diag = vec![1.0 + 2.0 * r; n];
        lower[0] = 0.0;
        upper[n - 1] = 0.0;
        let edge = match boundary {
            BoundaryKind::Neumann => 1.0 + r,
            BoundaryKind::Dirichlet => 1.0 + 3.0 * r,
        };
        diag[0] = edge;
        diag[n - 1] = edge;

        let mut c_prime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        inv_denom[0] = 1.0 / diag[0];
        c_prime[0] = upper[0] * inv_denom[0];
        for i in 1..n {
            let denom = diag[i] - lower[i] * c_prime[i - 1];
            inv_denom[i] = 1.0 / denom;
            c_prime[i] = upper[i] * inv_denom[i];
        }
        Self {
            lower,
            diag,
            upper,
            c_prime,
            inv_denom,
        }
    }

    /// Solves `(I - dt L) x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        debug_assert_eq!(n, self.diag.len());
        rhs[0] *= self.inv_denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_denom[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c_prime[i] * rhs[i + 1];
        }
    }

    /// Solves `N` independent systems stored lane-interleaved, `rhs[i][lane]`.
    /// Each lane sees exactly the operations of [`Self::solve_in_place`].
    pub fn solve_lanes<const N: usize>(&self, rhs: &mut [[f64; N]]) {
        let n = rhs.len();
        debug_assert_eq!(n, self.diag.len());
        for v in rhs[0].iter_mut() {
            *v *= self.inv_denom[0];
        }
        for i in 1..n {
            let (lo, inv) = (self.lower[i], self.inv_denom[i]);
            let prev = rhs[i - 1];
            for (v, p) in rhs[i].iter_mut().zip(prev) {
                *v = (*v - lo * p) * inv;
            }
        }
        for i in (0..n - 1).rev() {
            let c = self.c_prime[i];
            let next = rhs[i + 1];
            for (v, q) in rhs[i].iter_mut().zip(next) {
                *v -= c * q;
            }
        }
    }

    /// `(I - dt L) x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// Row sums of `(I - dt L)`; all ones for Neumann.
    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                self.diag[i]
                    + if i > 0 { self.lower[i] } else { 0.0 }
                    + if i + 1 < n { self.upper[i] } else { 0.0 }
            })
            .collect()
    }
}

/// Advances states one time step with a reusable factorization.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    grid: &'a Grid,
    coeffs: &'a CoefficientSet,
    include_d: bool,
    clamp_bound: f64,
    matrix: ImplicitLaplacian,
    centers: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        grid: &'a Grid,
        coeffs: &'a CoefficientSet,
        include_d: bool,
        scheme: &SchemeConfig,
    ) -> Result<Self> {
        scheme.validate(coeffs)?;
        Ok(Self {
            grid,
            coeffs,
            include_d,
            clamp_bound: scheme.clamp_bound.unwrap_or(f64::INFINITY),
            matrix: ImplicitLaplacian::new(grid, scheme.boundary),
            centers: grid.cell_centers(),
        })
    }

    pub fn matrix(&self) -> &ImplicitLaplacian {
        &self.matrix
    }

    /// Right-hand side `u^k + dt drift + a dW / dx`.
    pub fn rhs(&self, k: usize, state: &[f64], noise_row: &[f64], out: &mut [f64]) {
        let t = self.grid.time(k);
        let dt = self.grid.dt();
        let inv_dx = 1.0 / self.grid.dx();
        let c = self.coeffs;
        for (((o, &u), &dw), &x) in out
            .iter_mut()
            .zip(state)
            .zip(noise_row)
            .zip(&self.centers)
        {
            *o = u + dt * c.drift(t, x, u, self.include_d) + c.a(t, x, u) * dw * inv_dx;
        }
    }

    /// Writes `u^{k+1}` into `out`.
    pub fn advance(&self, k: usize, state: &[f64], noise_row: &[f64], out: &mut [f64]) -> Result<()> {
        self.rhs(k, state, noise_row, out);
        self.matrix.solve_in_place(out);
        for (j, &v) in out.iter().enumerate() {
            if !v.is_finite() || v.abs() > self.clamp_bound {
                return Err(LabError::BlowUp { k: k + 1, j });
            }
        }
        Ok(())
    }
}

impl Stepper<'_> {
    /// [`Stepper::advance`] for `N` lane-interleaved states. Returns, per
    /// lane, whether the new state is finite and inside the clamp.
    pub fn advance_lanes<const N: usize>(
        &self,
        state: &[[f64; N]],
        noise: &[[f64; N]],
        out: &mut [[f64; N]],
        scratch: &mut [[f64; N]],
    ) -> [bool; N] {
        let dt = self.grid.dt();
        let inv_dx = 1.0 / self.grid.dx();
        let u = state.as_flattened();
        let drift = out.as_flattened_mut();
        self.coeffs.drift_into(u, self.include_d, drift);
        let a = scratch.as_flattened_mut();
        self.coeffs.a_into(u, a);
        for (((o, u), a), dw) in drift.iter_mut().zip(u).zip(&*a).zip(noise.as_flattened()) {
            *o = u + dt * *o + a * dw * inv_dx;
        }
        self.matrix.solve_lanes(out);
        // one comparison rejects NaN, infinities and clamp violations
        let bound = self.clamp_bound.min(f64::MAX);
        let mut ok = [true; N];
        for row in out.iter() {
            for (f, v) in ok.iter_mut().zip(row) {
                *f &= v.abs() <= bound;
            }
        }
        ok
    }
}

/// One step of the scheme from `u_k` at time index `k`.
pub fn step(
    u_k: &[f64],
    k: usize,
    noise: &NoiseField,
    coeffs: &CoefficientSet,
    include_d: bool,
    grid: &Grid,
    scheme: &SchemeConfig,
) -> Result<Vec<f64>> {
    noise.matches(grid)?;
    if u_k.len() != grid.nx() {
        return Err(LabError::Dimension {
            expected: format!("{} cells", grid.nx()),
            got: format!("{} cells", u_k.len()),
        });
    }
    if k >= grid.nt() {
        return Err(LabError::Dimension {
            expected: format!("time index below {}", grid.nt()),
            got: k.to_string(),
        });
    }
    if let Some(j) = u_k.iter().position(|v| !v.is_finite()) {
        return Err(LabError::BlowUp { k, j });
    }
    let stepper = Stepper::new(grid, coeffs, include_d, scheme)?;
    let mut out = vec![0.0; grid.nx()];
    stepper.advance(k, u_k, noise.row(k), &mut out)?;
    Ok(out)
}

/// Where a path came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub path_index: u64,
    pub preset: String,
    pub include_d: bool,
}

/// One realized solution surface `u[k][j]`, `k = 0..=nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathField {
    values: LatticeField,
    boundary: BoundaryKind,
    provenance: Provenance,
}

impl PathField {
    pub fn values(&self) -> &LatticeField {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.values.row(k)
    }

    pub fn terminal(&self) -> &[f64] {
        self.values.row(self.values.rows() - 1)
    }

    pub fn nt(&self) -> usize {
        self.values.rows() - 1
    }

    pub fn nx(&self) -> usize {
        self.values.cols()
    }

    pub fn boundary(&self) -> BoundaryKind {
        self.boundary
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub(crate) fn matches(&self, grid: &Grid) -> Result<()> {
        if self.nt() != grid.nt() || self.nx() != grid.nx() {
            return Err(LabError::Dimension {
                expected: format!("{} x {}", grid.nt() + 1, grid.nx()),
                got: format!("{} x {}", self.values.rows(), self.values.cols()),
            });
        }
        Ok(())
    }

    /// Dumps the path as CSV with header `t,x,u`, row-major over `(k, j)`.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x,u")?;
        for k in 0..self.values.rows() {
            let t = grid.time(k);
            for (j, u) in self.values.row(k).iter().enumerate() {
                writeln!(out, "{t},{},{u}", grid.cell_center(j))?;
            }
        }
        Ok(())
    }
}

/// Full lattice rollout of [`step`] from `h`.
pub fn simulate_path(
    coeffs: &CoefficientSet,
    include_d: bool,
    grid: &Grid,
    noise: &NoiseField,
    scheme: &SchemeConfig,
) -> Result<PathField> {
    noise.matches(grid)?;
    let stepper = Stepper::new(grid, coeffs, include_d, scheme)?;
    let (nt, nx) = (grid.nt(), grid.nx());
    let mut values = LatticeField::zeros(nt + 1, nx);
    for (j, v) in values.row_mut(0).iter_mut().enumerate() {
        *v = coeffs.h(grid.cell_center(j));
    }
    let mut next = vec![0.0; nx];
    for k in 0..nt {
        stepper.advance(k, values.row(k), noise.row(k), &mut next)?;
        values.row_mut(k + 1).copy_from_slice(&next);
    }
    Ok(PathField {
        values,
        boundary: scheme.boundary,
        provenance: Provenance {
            master_seed: noise.master_seed(),
            path_index: noise.path_index(),
            preset: coeffs.preset().to_string(),
            include_d,
        },
    })
}

/// Absolute residual of the test-function formulation at `t = T` against
/// `phi_m(x) = cos(m pi x / L)`:
///
/// ```text
/// sum_j (u_T - h) phi dx - sum_{k,j} u phi'' dt dx - sum_{k,j} a phi dW - sum_{k,j} drift phi dt dx
/// ```
///
/// All space-time sums are left-point.
pub fn weak_form_residual(
    path: &PathField,
    noise: &NoiseField,
    coeffs: &CoefficientSet,
    include_d: bool,
    grid: &Grid,
    m: u32,
) -> Result<f64> {
    path.matches(grid)?;
    noise.matches(grid)?;
    let wavenumber = m as f64 * std::f64::consts::PI / grid.length();
    let centers = grid.cell_centers();
    let phi: Vec<f64> = centers.iter().map(|x| (wavenumber * x).cos()).collect();
    let phi_dd: Vec<f64> = phi.iter().map(|p| -wavenumber * wavenumber * p).collect();
    let (dt, dx) = (grid.dt(), grid.dx());

    let mut mass = 0.0;
    for (j, (&u, &p)) in path.terminal().iter().zip(&phi).enumerate() {
        mass += (u - coeffs.h(centers[j])) * p;
    }
    mass *= dx;

    let mut laplacian = 0.0;
    let mut stochastic = 0.0;
    let mut drift = 0.0;
    for k in 0..grid.nt() {
        let t = grid.time(k);
        for (j, &u) in path.row(k).iter().enumerate() {
            let x = centers[j];
            laplacian += u * phi_dd[j];
            stochastic += coeffs.a(t, x, u) * phi[j] * noise.get(k, j);
            drift += coeffs.drift(t, x, u, include_d) * phi[j];
        }
    }
    let residual = mass - laplacian * dt * dx - stochastic - drift * dt * dx;
    Ok(residual.abs())
}
