mod common;

use std::f64::consts::PI;

use wpf_core::constraints::{construct_feasible, ConstraintSpec};
use wpf_core::flow::{
    check_estimates, continuous_dependence_harness, evolve, DependenceOutcome, RunConfig,
    DEFAULT_DEPENDENCE_CAP,
};
use wpf_core::functionals::make_state;
use wpf_core::neumann::NeumannSolvePlan;
use wpf_core::stepper::{proximal_step, StepConfig};
use wpf_core::{Error, Field, Grid, PotentialParams};

fn setup(n: usize, t_end: f64) -> (RunConfig, Field) {
    let p = PotentialParams::default();
    let grid = Grid::new_1d(1.0, n).unwrap();
    let spec = ConstraintSpec::new(0.0, 0.5).unwrap();
    let phi = Field::from_fn(grid, |x, _| (PI * x).cos() + 0.5 * (2.0 * PI * x).cos()).centered();
    let v0 = construct_feasible(&spec, &phi, &p, &grid).unwrap().field;
    (RunConfig::new(spec, p, grid, 1e-3, t_end).unwrap(), v0)
}

#[test]
fn single_state_trajectory_passes_everything() {
    let (cfg, v0) = setup(32, 0.0);
    let traj = evolve(&v0, &cfg).unwrap();
    assert_eq!(traj.steps(), 0);
    assert_eq!(traj.states.len(), 1);
    assert!(traj.rows.is_empty());
    assert!(check_estimates(&traj).all_passed());
}

#[test]
fn tampered_energy_is_caught() {
    let (cfg, v0) = setup(32, 0.01);
    let mut traj = evolve(&v0, &cfg).unwrap();
    assert!(check_estimates(&traj).all_passed());
    traj.rows[4].energy_e = traj.rows[3].energy_e + 1e-3;
    let report = check_estimates(&traj);
    assert!(!report.all_passed());
    assert!(!report.get("energy-monotone").unwrap().passed);
}

#[test]
fn runs_are_bit_identical() {
    let (cfg, v0) = setup(48, 0.01);
    let a = evolve(&v0, &cfg).unwrap();
    let b = evolve(&v0, &cfg).unwrap();
    let csv =
        |t: &wpf_core::flow::Trajectory| t.rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.last().v, b.last().v);
}

#[test]
fn critical_initial_state_stays_put() {
    let (mut cfg, v0) = setup(32, 0.0);
    let p = cfg.potential;
    let plan = NeumannSolvePlan::new(cfg.grid);
    let relax = StepConfig::new(0.1).unwrap().with_tol_el(1e-11).unwrap();
    let mut f = make_state(v0, &p);
    for _ in 0..50 {
        let (v, rep) = proximal_step(&f, &cfg.spec, &relax, &p, &plan).unwrap();
        f = v;
        if rep.inner_iters == 0 {
            break;
        }
    }
    cfg.t_end = 0.01;
    cfg.step_cfg = cfg.step_cfg.with_tol_el(1e-10).unwrap();
    let traj = evolve(&f.v, &cfg).unwrap();
    for s in &traj.states {
        assert_eq!(s.v, f.v);
        assert_eq!(s.energy_e, f.energy_e);
    }
    assert!(traj.reports.iter().all(|r| r.b.is_finite()));
}

#[test]
fn zero_perturbation_is_exact_coincidence() {
    let (cfg, v0) = setup(32, 0.01);
    let zero = Field::zeros(cfg.grid);
    let report = continuous_dependence_harness(&v0, &zero, &cfg, DEFAULT_DEPENDENCE_CAP).unwrap();
    assert_eq!(report.outcome, DependenceOutcome::ExactCoincidence);
}

#[test]
fn dependence_ratio_is_stable_under_time_step_refinement() {
    let (cfg, v0) = setup(64, 0.02);
    let delta = Field::from_fn(cfg.grid, |x, _| (3.0 * PI * x).cos());
    let delta = delta.scaled(1e-6 / delta.l2_norm());
    let max_ratio = |tau: f64| {
        let mut c = cfg.clone();
        c.tau = tau;
        c.step_cfg = StepConfig::new(tau).unwrap();
        match continuous_dependence_harness(&v0, &delta, &c, DEFAULT_DEPENDENCE_CAP)
            .unwrap()
            .outcome
        {
            DependenceOutcome::Ratios {
                max_ratio, bounded, ..
            } => {
                assert!(bounded);
                max_ratio
            }
            other => panic!("unexpected {other:?}"),
        }
    };
    let (coarse, fine) = (max_ratio(1e-3), max_ratio(5e-4));
    assert!((coarse - fine).abs() <= 0.1 * fine, "{coarse} vs {fine}");
}

#[test]
fn margin_floor_stops_the_run() {
    let (mut cfg, v0) = setup(32, 0.01);
    cfg.margin_floor = 1e6;
    match evolve(&v0, &cfg) {
        Err(Error::InfeasibleInitial(_)) | Err(Error::MarginCollapse { .. }) => {}
        other => panic!(
            "expected a margin failure, got {:?}",
            other.map(|t| t.steps())
        ),
    }
}
