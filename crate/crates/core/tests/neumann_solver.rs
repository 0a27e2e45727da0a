mod common;

use proptest::prelude::*;
use wpf_core::grid::{inner, laplacian};
use wpf_core::neumann::{NeumannSolvePlan, SolveMethod};
use wpf_core::{Field, Grid};

use common::{random_mean_zero, rng};

fn grids() -> Vec<Grid> {
    vec![
        Grid::new_1d(1.0, 16).unwrap(),
        Grid::new_1d(2.5, 101).unwrap(),
        Grid::new_2d(1.0, 0.5, 24, 12).unwrap(),
    ]
}

#[test]
fn spectral_and_iterative_agree() {
    let mut r = rng(11);
    for grid in grids() {
        let spectral = NeumannSolvePlan::with_method(grid, SolveMethod::Spectral, 1e-14);
        let iterative = NeumannSolvePlan::with_method(grid, SolveMethod::Iterative, 1e-14);
        for _ in 0..10 {
            let w = random_mean_zero(grid, &mut r);
            let a = spectral.solve_n(&w).unwrap();
            let b = iterative.solve_n(&w).unwrap();
            assert!(
                a.sub(&b).l2_norm() <= 1e-10 * a.l2_norm(),
                "grid {:?}",
                grid.counts()
            );
        }
    }
}

#[test]
fn solve_is_self_adjoint_and_inverts_the_laplacian() {
    let mut r = rng(12);
    for grid in grids() {
        let plan = NeumannSolvePlan::new(grid);
        for _ in 0..10 {
            let (u, v) = (
                random_mean_zero(grid, &mut r),
                random_mean_zero(grid, &mut r),
            );
            let (nu, nv) = (plan.solve_n(&u).unwrap(), plan.solve_n(&v).unwrap());
            let lhs = inner(&nu, &v).unwrap();
            let rhs = inner(&u, &nv).unwrap();
            assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(rhs.abs()).max(1e-300));
            assert!(wpf_core::grid::mean(&nu).abs() <= 1e-13 * nu.max_abs());
            assert!(laplacian(&nu).add(&u).l2_norm() <= 1e-9 * u.l2_norm());
        }
    }
}

#[test]
fn dual_norm_matches_cosine_eigenvalue() {
    let grid = Grid::new_1d(1.0, 64).unwrap();
    let plan = NeumannSolvePlan::new(grid);
    let w = Field::from_fn(grid, |x, _| (std::f64::consts::PI * x).cos());
    let lam = plan.eigenvalue(1, 0).abs();
    assert!((plan.dual_norm_sq(&w).unwrap() - 0.5 / lam).abs() <= 1e-12);
    assert_eq!(plan.dual_norm_sq(&Field::zeros(grid)).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solve_is_linear(seed in 0u64..1000, c in -50.0f64..50.0) {
        let grid = Grid::new_2d(1.0, 1.0, 10, 7).unwrap();
        let plan = NeumannSolvePlan::new(grid);
        let w = random_mean_zero(grid, &mut rng(seed));
        let scaled = plan.solve_n(&w.scaled(c)).unwrap();
        let expected = plan.solve_n(&w).unwrap().scaled(c);
        prop_assert!(scaled.sub(&expected).max_abs() <= 1e-12 * (1.0 + expected.max_abs()));
    }

    #[test]
    fn dual_norm_is_positive(seed in 0u64..1000) {
        let grid = Grid::new_1d(1.0, 33).unwrap();
        let plan = NeumannSolvePlan::new(grid);
        let w = random_mean_zero(grid, &mut rng(seed));
        let d = plan.dual_norm_sq(&w).unwrap();
        prop_assert!(d > 0.0);
        let u = plan.solve_n(&w).unwrap();
        // ⟨N w, w⟩ = -⟨N w, Δ N w⟩ by summation by parts.
        let sbp = -inner(&u, &laplacian(&u)).unwrap();
        prop_assert!((d - sbp).abs() <= 1e-10 * d);
    }
}
