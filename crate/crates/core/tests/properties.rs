use proptest::prelude::*;
use spde_lab::coefficients::{AllenCahnParams, CoefficientSet, InitialCondition};
use spde_lab::girsanov::{accumulate, log_upsilon, shifted_noise};
use spde_lab::grid::{sample_noise, Grid};
use spde_lab::solver::{simulate_path, SchemeConfig};
use spde_lab::stats::{ess, weighted_ks_statistic};

fn allen_cahn(gamma: f64, h: f64) -> CoefficientSet {
    CoefficientSet::allen_cahn(AllenCahnParams::new(1.0, gamma), InitialCondition::Constant(h)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // The drifted path is the driftless path driven by dW + R dt dx.
    #[test]
    fn drift_absorption(gamma in 0.5f64..=1.0, h in -0.9f64..0.9, seed in 0u64..1000) {
        let grid = Grid::new(0.1, 1.0, 200, 16).unwrap();
        let set = allen_cahn(gamma, h);
        let scheme = SchemeConfig::default();
        let noise = sample_noise(&grid, seed, 0);
        let drifted = simulate_path(&set, true, &grid, &noise, &scheme).unwrap();
        let shifted = shifted_noise(&noise, &drifted, &set, &grid).unwrap();
        let rebuilt = simulate_path(&set, false, &grid, &shifted, &scheme).unwrap();
        let gap = drifted
            .values()
            .values()
            .iter()
            .zip(rebuilt.values().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prop_assert!(gap <= 1e-8, "gap {gap}");

        // densities in the two directions are reciprocal
        let xi = accumulate(&drifted, &shifted, &set, &grid, &[1]).unwrap();
        let up = log_upsilon(&drifted, &noise, &set, &grid).unwrap();
        prop_assert!((xi.log_xi()[grid.nt()] + up[grid.nt()]).abs() <= 1e-10);
    }

    #[test]
    fn zero_perturbation_weights_are_exact_zeros(a in 0.1f64..3.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let grid = Grid::new(0.2, 1.0, 50, 8).unwrap();
        let set = CoefficientSet::constant(a, b, 0.0, InitialCondition::Constant(0.1)).unwrap();
        let noise = sample_noise(&grid, seed, 3);
        let path = simulate_path(&set, false, &grid, &noise, &SchemeConfig::default()).unwrap();
        let traj = accumulate(&path, &noise, &set, &grid, &[1, 2]).unwrap();
        prop_assert!(traj.log_xi().iter().all(|v| v.to_bits() == 0));
        prop_assert!(traj.r2_accum().iter().all(|v| v.to_bits() == 0));
    }

    #[test]
    fn ks_is_symmetric_bounded_and_scale_free(
        a in prop::collection::vec(-5.0f64..5.0, 1..40),
        b in prop::collection::vec(-5.0f64..5.0, 1..40),
        scale in 0.01f64..100.0,
    ) {
        let wa: Vec<f64> = (0..a.len()).map(|i| 1.0 + (i % 3) as f64).collect();
        let wb: Vec<f64> = (0..b.len()).map(|i| 0.5 + (i % 5) as f64).collect();
        let d = weighted_ks_statistic(&a, &wa, &b, &wb);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - weighted_ks_statistic(&b, &wb, &a, &wa)).abs() <= 1e-12);
        let scaled: Vec<f64> = wa.iter().map(|w| w * scale).collect();
        prop_assert!((d - weighted_ks_statistic(&a, &scaled, &b, &wb)).abs() <= 1e-12);
    }

    #[test]
    fn ess_between_one_and_n(w in prop::collection::vec(0.0f64..10.0, 1..200)) {
        prop_assume!(w.iter().any(|&x| x > 0.0));
        let e = ess(&w).unwrap();
        prop_assert!(e >= 1.0 - 1e-9 && e <= w.len() as f64 + 1e-9);
    }
}
