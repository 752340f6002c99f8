//! Values frozen from an independent dense-matrix implementation
//! (`tools/oracle_values.py`, numpy and scipy).

use approx::assert_relative_eq;
use spde_lab::coefficients::{AllenCahnParams, CoefficientSet, InitialCondition};
use spde_lab::girsanov::accumulate;
use spde_lab::grid::{Grid, LatticeField, NoiseField};
use spde_lab::solver::{simulate_path, weak_form_residual, BoundaryKind, SchemeConfig};
use spde_lab::stats::weighted_ks_statistic;

fn fixed_noise(grid: &Grid) -> NoiseField {
    let field = LatticeField::from_fn(grid.nt(), grid.nx(), |k, j| {
        0.05 * (1.3 * k as f64 + 0.7 * j as f64 + 0.1).sin()
    });
    NoiseField::from_increments(grid, field, 0, 0).unwrap()
}

fn allen_cahn() -> (Grid, CoefficientSet) {
    let grid = Grid::new(0.1, 1.0, 5, 4).unwrap();
    let h = InitialCondition::Cosine {
        amplitude: 0.5,
        mode: 1,
        length: 1.0,
    };
    let set = CoefficientSet::allen_cahn(AllenCahnParams::new(1.0, 0.5), h).unwrap();
    (grid, set)
}

fn assert_all_close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert_relative_eq!(*g, *w, epsilon = 1e-14, max_relative = 1e-12);
    }
}

#[test]
fn allen_cahn_drifted_path() {
    let (grid, set) = allen_cahn();
    let noise = fixed_noise(&grid);
    let path = simulate_path(&set, true, &grid, &noise, &SchemeConfig::default()).unwrap();
    assert_all_close(
        path.terminal(),
        &[0.20099443714414883, 0.09528294493243769, -0.0604345301589469, -0.21993986061585363],
    );
    let r = weak_form_residual(&path, &noise, &set, true, &grid, 1).unwrap();
    assert_relative_eq!(r, 0.03649808908637918, max_relative = 1e-12);
}

#[test]
fn allen_cahn_driftless_path_and_weight() {
    let (grid, set) = allen_cahn();
    let noise = fixed_noise(&grid);
    let path = simulate_path(&set, false, &grid, &noise, &SchemeConfig::default()).unwrap();
    assert_all_close(
        path.terminal(),
        &[0.16332098169995615, 0.07738376406411948, -0.048281501370047504, -0.18404919632814815],
    );
    let traj = accumulate(&path, &noise, &set, &grid, &[1]).unwrap();
    assert_relative_eq!(traj.log_xi()[grid.nt()], -0.029354272303896735, max_relative = 1e-12);
    assert_relative_eq!(traj.r2_terminal(), 0.08125656337422157, max_relative = 1e-12);
    assert!(traj.reaches_terminal(0));
}

#[test]
fn dirichlet_constant_coefficients() {
    let grid = Grid::new(0.1, 1.0, 5, 4).unwrap();
    let set = CoefficientSet::constant(1.0, 0.3, 0.0, InitialCondition::Constant(0.2)).unwrap();
    let scheme = SchemeConfig::with_boundary(BoundaryKind::Dirichlet);
    let path = simulate_path(&set, true, &grid, &fixed_noise(&grid), &scheme).unwrap();
    assert_all_close(
        path.terminal(),
        &[-0.045588503866792224, 0.03977420683267017, 0.1113509494755587, 0.11205907630264825],
    );
}

#[test]
fn ks_matches_scipy() {
    let xa = [0.3, -1.2, 2.5, 0.0, 0.7, 1.1, -0.4];
    let xb = [0.1, 0.9, 2.0, -0.5, 1.4];
    let d = weighted_ks_statistic(&xa, &[1.0; 7], &xb, &[1.0; 5]);
    assert_relative_eq!(d, 0.3142857142857143, max_relative = 1e-14);
    // integer weights behave like repeated observations
    let wa = [2.0, 1.0, 3.0, 1.0, 1.0, 2.0, 1.0];
    let wb = [1.0, 4.0, 1.0, 2.0, 1.0];
    let d = weighted_ks_statistic(&xa, &wa, &xb, &wb);
    assert_relative_eq!(d, 0.2727272727272727, max_relative = 1e-14);
}
