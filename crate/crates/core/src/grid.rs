//! Space-time lattice, white-noise increments and lattice quadratures.
//!
//! The rectangle `[0, T] x [0, L]` is split into `nt` time steps and `nx`
//! spatial cells. Cells are centered, `x_j = (j + 1/2) dx`, so that every
//! noise cell pairs with exactly one solution cell.
//!
//! Noise for a path is a pure function of `(master_seed, path_index, grid)`.
//! Each path owns an independent ChaCha8 stream: the generator is keyed by
//! `master_seed` and the stream id is `path_index`. Normals are drawn with
//! the ziggurat sampler of `rand_distr::StandardNormal`, in row-major
//! `(k, j)` order, and scaled by `sqrt(dt dx)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Largest accepted number of time steps.
pub const MAX_TIME_STEPS: usize = 10_000_000;
/// Largest accepted number of spatial cells.
pub const MAX_CELLS: usize = 1_000_000;
/// Largest accepted lattice size `nt * nx`.
pub const MAX_LATTICE_ENTRIES: usize = 1 << 27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    t_final: f64,
    length: f64,
    nt: usize,
    nx: usize,
    dt: f64,
    dx: f64,
}

impl Grid {
    pub fn new(t_final: f64, length: f64, nt: usize, nx: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(LabError::InvalidConfig(format!(
                "final time T must be positive and finite, got {t_final}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(LabError::InvalidConfig(format!(
                "domain length L must be positive and finite, got {length}"
            )));
        }
        if nt == 0 || nt > MAX_TIME_STEPS {
            return Err(LabError::InvalidConfig(format!(
                "nt must lie in [1, {MAX_TIME_STEPS}], got {nt}"
            )));
        }
        if !(2..=MAX_CELLS).contains(&nx) {
            return Err(LabError::InvalidConfig(format!(
                "nx must lie in [2, {MAX_CELLS}], got {nx}"
            )));
        }
        if nt.saturating_mul(nx) > MAX_LATTICE_ENTRIES {
            return Err(LabError::InvalidConfig(format!(
                "lattice nt * nx = {} exceeds {MAX_LATTICE_ENTRIES}",
                nt.saturating_mul(nx)
            )));
        }
        Ok(Self {
            t_final,
            length,
            nt,
            nx,
            dt: t_final / nt as f64,
            dx: length / nx as f64,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Area `dt * dx` of one space-time cell.
    pub fn cell_area(&self) -> f64 {
        self.dt * self.dx
    }

    /// Time node `t_k = k dt`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Cell center `x_j = (j + 1/2) dx`.
    pub fn cell_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.cell_center(j)).collect()
    }

    /// Same domain, refined to `(nt * time_factor, nx * space_factor)`.
    pub fn refined(&self, time_factor: usize, space_factor: usize) -> Result<Self> {
        Self::new(
            self.t_final,
            self.length,
            self.nt * time_factor,
            self.nx * space_factor,
        )
    }
}

/// The per-path random stream keyed by `(master_seed, path_index)`.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// A dense row-major field on `rows x cols` lattice points.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(LabError::Dimension {
                expected: format!("{rows} x {cols} = {} values", rows * cols),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for k in 0..rows {
            for j in 0..cols {
                values.push(f(k, j));
            }
        }
        Self { rows, cols, values }
    }

    /// Field on the time nodes `0..nt` of `grid` (the left points of every step).
    pub fn on_grid(grid: &Grid, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_fn(grid.nt(), grid.nx(), f)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.cols + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.cols..(k + 1) * self.cols]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.cols..(k + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Cell increments of the Brownian sheet for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    increments: LatticeField,
    master_seed: u64,
    path_index: u64,
}

impl NoiseField {
    /// Wraps externally produced increments (shape `nt x nx`).
    pub fn from_increments(
        grid: &Grid,
        increments: LatticeField,
        master_seed: u64,
        path_index: u64,
    ) -> Result<Self> {
        check_shape(grid, &increments, grid.nt())?;
        Ok(Self {
            increments,
            master_seed,
            path_index,
        })
    }

    pub fn nt(&self) -> usize {
        self.increments.rows()
    }

    pub fn nx(&self) -> usize {
        self.increments.cols()
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.increments.get(k, j)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.increments.row(k)
    }

    pub fn increments(&self) -> &LatticeField {
        &self.increments
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Terminal sheet value `W(T, L)`, the sum of all increments.
    pub fn sheet_total(&self) -> f64 {
        self.increments.values().iter().sum()
    }

    pub(crate) fn matches(&self, grid: &Grid) -> Result<()> {
        check_shape(grid, &self.increments, grid.nt())
    }
}

fn check_shape(grid: &Grid, field: &LatticeField, rows: usize) -> Result<()> {
    if field.rows() != rows || field.cols() != grid.nx() {
        return Err(LabError::Dimension {
            expected: format!("{rows} x {}", grid.nx()),
            got: format!("{} x {}", field.rows(), field.cols()),
        });
    }
    Ok(())
}

/// Draws the white-noise increments for one path.
pub fn sample_noise(grid: &Grid, master_seed: u64, path_index: u64) -> NoiseField {
    let mut stream = NoiseStream::new(grid, master_seed, path_index);
    let mut values = vec![0.0; grid.nt() * grid.nx()];
    for row in values.chunks_exact_mut(grid.nx()) {
        stream.fill_row(row);
    }
    NoiseField {
        increments: LatticeField::from_vec(grid.nt(), grid.nx(), values)
            .expect("shape matches the grid"),
        master_seed,
        path_index,
    }
}

/// Row-by-row generator of the same increments as [`sample_noise`], for
/// callers that never need the whole field in memory.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    scale: f64,
}

impl NoiseStream {
    pub fn new(grid: &Grid, master_seed: u64, path_index: u64) -> Self {
        Self {
            rng: path_rng(master_seed, path_index),
            scale: grid.cell_area().sqrt(),
        }
    }

    /// Fills the next time row.
    pub fn fill_row(&mut self, row: &mut [f64]) {
        for v in row {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = z * self.scale;
        }
    }
}

/// Left-point Ito sum `sum_{k<nt, j} f(t_k, x_j) dW[k][j]`.
///
/// `f` may carry extra trailing rows (a path field has `nt + 1`); only rows
/// `0..nt` enter the sum.
pub fn ito_integral(f: &LatticeField, noise: &NoiseField) -> Result<f64> {
    if f.rows() < noise.nt() || f.cols() != noise.nx() {
        return Err(LabError::Dimension {
            expected: format!("at least {} x {}", noise.nt(), noise.nx()),
            got: format!("{} x {}", f.rows(), f.cols()),
        });
    }
    let mut total = 0.0;
    for k in 0..noise.nt() {
        total += f
            .row(k)
            .iter()
            .zip(noise.row(k))
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
    Ok(total)
}

/// Lattice quadrature `sum_{k<up_to_step, j} f(t_k, x_j)^2 dt dx`.
///
/// Panics if `up_to_step` exceeds `grid.nt()` or the rows available in `f`.
pub fn l2_integral(f: &LatticeField, grid: &Grid, up_to_step: usize) -> f64 {
    assert!(
        up_to_step <= grid.nt() && up_to_step <= f.rows(),
        "up_to_step {up_to_step} out of range"
    );
    let mut total = 0.0;
    for k in 0..up_to_step {
        total += f.row(k).iter().map(|v| v * v).sum::<f64>();
    }
    total * grid.cell_area()
}
