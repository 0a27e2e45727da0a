//! The invariant suite behind `wpf check`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wpf_core::constraints::{construct_feasible, ConstraintSpec};
use wpf_core::flow::{check_estimates, evolve};
use wpf_core::functionals::{area_f, chemical_potential, energy_e, grad_e, make_state};
use wpf_core::grid::{inner, laplacian, mean};
use wpf_core::io::ConfigFile;
use wpf_core::neumann::NeumannSolvePlan;
use wpf_core::stepper::{proximal_step, StepConfig};
use wpf_core::{Field, Grid, PotentialParams};

use crate::commands::{build_initial, CliResult};
use crate::oracle::Oracle;

pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    /// Measured value over allowed value; at most 1 for a pass.
    pub worst: f64,
    pub detail: String,
}

impl CheckLine {
    fn new(name: impl Into<String>, worst: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: worst <= 1.0,
            worst,
            detail,
        }
    }

    fn failed(name: impl Into<String>, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: false,
            worst: f64::INFINITY,
            detail,
        }
    }
}

pub struct CheckOptions {
    pub tamper: bool,
    pub restarts: usize,
}

fn smooth_random(grid: Grid, rng: &mut ChaCha8Rng) -> Field {
    let lx = grid.extents()[0];
    let ly = if grid.dim() == 2 {
        grid.extents()[1]
    } else {
        1.0
    };
    let ky_max = if grid.dim() == 2 { 4 } else { 1 };
    let mut terms = Vec::new();
    for kx in 0..5 {
        for ky in 0..ky_max {
            let c: f64 = rng.gen_range(-1.0..1.0) / (1.0 + (kx + ky) as f64);
            terms.push((kx as f64, ky as f64, c));
        }
    }
    Field::from_fn(grid, |x, y| {
        terms
            .iter()
            .map(|&(kx, ky, c)| c * (kx * PI * x / lx).cos() * (ky * PI * y / ly).cos())
            .sum()
    })
}

fn central(fun: &dyn Fn(&Field) -> f64, w: &Field, d: &Field, eps: f64) -> f64 {
    (fun(&w.add_scaled(eps, d)) - fun(&w.add_scaled(-eps, d))) / (2.0 * eps)
}

/// Directional derivatives of `F` and `E` against `⟨μ, d⟩` and `⟨grad E, d⟩`.
fn gradient_checks(grid: Grid, p: &PotentialParams, seed: u64) -> Vec<CheckLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_fun = |x: &Field| area_f(x, p);
    let e_fun = |x: &Field| energy_e(x, p);
    let mut worst = [(0.0_f64, f64::INFINITY, 0.0_f64); 2];
    for _ in 0..10 {
        let w = smooth_random(grid, &mut rng);
        let d = smooth_random(grid, &mut rng);
        let grads = [chemical_potential(&w, p), grad_e(&w, p)];
        for (k, (fun, g)) in [&f_fun as &dyn Fn(&Field) -> f64, &e_fun]
            .into_iter()
            .zip(&grads)
            .enumerate()
        {
            let exact = inner(g, &d).expect("same grid");
            // Scale the direction so the third-order term dominates roundoff.
            let rel3 = ((central(fun, &w, &d, 1e-3) - exact) / (1e-6 * exact)).abs();
            let s = (300.0 / rel3).sqrt().clamp(1.0, 100.0);
            let d = d.scaled(s);
            let exact = exact * s;
            let e4 = (central(fun, &w, &d, 1e-4) - exact).abs();
            let e5 = (central(fun, &w, &d, 1e-5) - exact).abs();
            let entry = &mut worst[k];
            entry.0 = entry.0.max(e5 / exact.abs());
            entry.1 = entry.1.min(e4 / e5);
            entry.2 = entry.2.max(e4 / e5);
        }
    }
    ["gradient-F", "gradient-E"]
        .into_iter()
        .zip(worst)
        .map(|(name, (err, lo, hi))| {
            let mut line = CheckLine::new(
                name,
                err / 1e-6,
                format!("rel err {err:.2e}, Richardson ratios [{lo:.1}, {hi:.1}]"),
            );
            line.passed &= (50.0..=200.0).contains(&lo) && (50.0..=200.0).contains(&hi);
            line
        })
        .collect()
}

fn neumann_checks(grid: Grid, seed: u64) -> Vec<CheckLine> {
    let plan = NeumannSolvePlan::new(grid);
    let lx = grid.extents()[0];
    let mut worst_eig = 0.0_f64;
    for k in 1..6.min(grid.nx()) {
        let w = Field::from_fn(grid, |x, _| (k as f64 * PI * x / lx).cos());
        let lam = plan.eigenvalue(k, 0);
        match plan.solve_n(&w) {
            Ok(u) => worst_eig = worst_eig.max(u.sub(&w.scaled(-1.0 / lam)).max_abs()),
            Err(e) => return vec![CheckLine::failed("neumann-eigen", e.to_string())],
        }
    }
    // Roundoff in -Δ∘N grows with the condition number of the stencil.
    let lam_min = plan.eigenvalue(1, 0).abs().min(if grid.dim() == 2 {
        plan.eigenvalue(0, 1).abs()
    } else {
        f64::INFINITY
    });
    let lam_max = plan.eigenvalue(grid.nx() - 1, grid.ny() - 1).abs();
    let inv_tol = 1e-11_f64.max(100.0 * f64::EPSILON * lam_max / lam_min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_adj, mut worst_inv) = (0.0_f64, 0.0_f64);
    for _ in 0..10 {
        let rand = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Field::new(grid, v).expect("grid length").centered()
        };
        let (u, v) = (rand(&mut rng), rand(&mut rng));
        let (Ok(nu), Ok(nv)) = (plan.solve_n(&u), plan.solve_n(&v)) else {
            return vec![CheckLine::failed("neumann-inverse", "solve failed".into())];
        };
        let lhs = inner(&nu, &v).expect("same grid");
        let rhs = inner(&u, &nv).expect("same grid");
        let scale = nu.l2_norm() * v.l2_norm() + u.l2_norm() * nv.l2_norm();
        worst_adj = worst_adj.max((lhs - rhs).abs() / scale);
        worst_inv = worst_inv.max(laplacian(&nu).add(&u).l2_norm() / u.l2_norm());
    }
    vec![
        CheckLine::new(
            "neumann-eigen",
            worst_eig / 1e-12,
            format!("max error {worst_eig:.2e}"),
        ),
        CheckLine::new(
            "neumann-adjoint",
            worst_adj / 1e-11,
            format!("max relative asymmetry {worst_adj:.2e}"),
        ),
        CheckLine::new(
            "neumann-inverse",
            worst_inv / inv_tol,
            format!("max residual {worst_inv:.2e} (allowed {inv_tol:.1e})"),
        ),
    ]
}

/// Compares `proximal_step` with the brute-force oracle on `n = 8`.
fn tiny_grid_check(seed: u64, restarts: usize) -> CheckLine {
    let name = "tiny-grid-oracle";
    let p = PotentialParams::default();
    let grid = Grid::new_1d(1.0, 8).expect("valid grid");
    let plan = NeumannSolvePlan::new(grid);
    let cfg = StepConfig::new(0.01).expect("valid tau");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut converged = usize::MAX;
    for alpha in [0.0, 0.15] {
        let spec = ConstraintSpec::new(alpha, 0.5).expect("valid spec");
        let phi = smooth_random(grid, &mut rng).centered();
        let f = match construct_feasible(&spec, &phi, &p, &grid) {
            Ok(fp) => make_state(fp.field, &p),
            Err(e) => return CheckLine::failed(name, e.to_string()),
        };
        let v = match proximal_step(&f, &spec, &cfg, &p, &plan) {
            Ok((v, _)) => v,
            Err(e) => return CheckLine::failed(name, e.to_string()),
        };
        let oracle = Oracle::new(&f.v, &spec, &p, 0.01);
        let lib = oracle.objective(&v.v);
        let best = oracle.minimize(restarts, &mut rng);
        converged = converged.min(best.converged);
        worst = worst.max((lib - best.value).abs() / best.value.abs());
    }
    let mut line = CheckLine::new(
        name,
        worst / 1e-6,
        format!("rel gap {worst:.2e}, >= {converged}/{restarts} restarts converged"),
    );
    line.passed &= converged > 0;
    line
}

/// A short run with the configured parameters plus the estimate checks.
fn evolve_checks(cfg: &ConfigFile, tamper: bool) -> CliResult<Vec<CheckLine>> {
    let init = build_initial(cfg)?;
    let mut rc = cfg.run_config()?;
    let steps = rc.steps().clamp(5, 20);
    rc.t_end = steps as f64 * rc.tau;
    rc.snapshot_every = 1;
    let mut traj = evolve(&init.state.v, &rc)?;
    if tamper {
        let k = traj.rows.len() / 2;
        traj.rows[k].energy_e += 1.0 + traj.rows[k].energy_e.abs();
    }

    let p = &rc.potential;
    let mut worst_a1 = 0.0_f64;
    for (rep, state) in traj.reports.iter().zip(&traj.states[1..]) {
        let w2mu = state.v.zip_map(&state.mu, |v, m| p.w2(v) * m);
        let res = (rep.a + rep.b * mean(&state.mu) - mean(&w2mu)).abs();
        let allowed = 10.0 * rc.step_cfg.tol_el * (1.0 + rep.a.abs() + rep.b.abs());
        worst_a1 = worst_a1.max(res / allowed);
    }
    let mut lines = vec![CheckLine::new(
        "a1-identity",
        worst_a1,
        format!("{steps} steps, tol_el {:.1e}", rc.step_cfg.tol_el),
    )];
    let report = check_estimates(&traj);
    for c in report.checks {
        lines.push(CheckLine {
            name: format!("estimate:{}", c.name),
            passed: c.passed,
            worst: c.worst_ratio,
            detail: c.detail,
        });
    }
    let detail = if init.z_empty {
        "closed-form test: degenerate set empty".to_string()
    } else {
        "closed-form test inconclusive".to_string()
    };
    lines.push(CheckLine {
        name: "feasibility".into(),
        passed: true,
        worst: 0.0,
        detail,
    });
    Ok(lines)
}

/// Runs all checks, independent groups in parallel, and returns the lines in
/// a fixed order.
pub fn run_checks(cfg: &ConfigFile, opts: &CheckOptions) -> CliResult<Vec<CheckLine>> {
    let grid = cfg.grid()?;
    let p = cfg.potential()?;
    let seed = cfg.seed;
    std::thread::scope(|s| {
        let grads = s.spawn(|| gradient_checks(grid, &p, seed));
        let solver = s.spawn(|| neumann_checks(grid, seed.wrapping_add(1)));
        let tiny = s.spawn(|| tiny_grid_check(seed.wrapping_add(2), opts.restarts));
        let flow = evolve_checks(cfg, opts.tamper);
        let mut lines = grads.join().expect("check thread panicked");
        lines.extend(solver.join().expect("check thread panicked"));
        lines.push(tiny.join().expect("check thread panicked"));
        lines.extend(flow?);
        Ok(lines)
    })
}
