//! Time evolution by repeated proximal steps, the a-posteriori checks of the
//! discrete estimates, and the two-trajectory stability harness.

use crate::constraints::{m_m_probe, retract_to_manifold, ConstraintSpec};
use crate::error::{Error, Result};
use crate::functionals::{make_state, PhaseState, PotentialParams};
use crate::grid::{dot, Field, Grid};
use crate::neumann::NeumannSolvePlan;
use crate::stepper::{proximal_step, StepConfig, StepReport};

/// Energy may not rise by more than this between consecutive states.
pub const ENERGY_SLACK: f64 = 1e-10;
/// Relative slack on the summed and Hölder estimates.
pub const ESTIMATE_SLACK: f64 = 1e-8;
/// Safety factor applied to the uniform-bound constant calibrated on `v₀`.
pub const UNIFORM_BOUND_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: ConstraintSpec,
    pub potential: PotentialParams,
    pub grid: Grid,
    pub tau: f64,
    pub t_end: f64,
    pub step_cfg: StepConfig,
    /// Runs stop with [`Error::MarginCollapse`] below this margin.
    pub margin_floor: f64,
    /// Keep every `snapshot_every`-th state in the trajectory (the first and
    /// last are always kept).
    pub snapshot_every: usize,
    /// On a failed step, retry it once as two half steps.
    pub retry_half_step: bool,
}

impl RunConfig {
    pub fn new(
        spec: ConstraintSpec,
        potential: PotentialParams,
        grid: Grid,
        tau: f64,
        t_end: f64,
    ) -> Result<Self> {
        let cfg = Self {
            spec,
            potential,
            grid,
            tau,
            t_end,
            step_cfg: StepConfig::new(tau)?,
            margin_floor: 1e-8,
            snapshot_every: 1,
            retry_half_step: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be non-negative, got {}",
                self.t_end
            )));
        }
        if self.t_end / self.tau > 1e7 {
            return Err(Error::InvalidParameter(
                "more than 1e7 steps requested".into(),
            ));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidParameter(
                "snapshot_every must be at least 1".into(),
            ));
        }
        if !(self.margin_floor >= 0.0) {
            return Err(Error::InvalidParameter(
                "margin_floor must be non-negative".into(),
            ));
        }
        self.step_cfg.validate()
    }

    pub fn steps(&self) -> usize {
        // Guard against 0.1 / 1e-3 = 100.00000000000001.
        let ratio = self.t_end / self.tau;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
            rounded as usize
        } else {
            ratio.ceil() as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub t: f64,
    pub energy_e: f64,
    pub area_f: f64,
    pub mean: f64,
    pub a: f64,
    pub b: f64,
    pub margin: f64,
    pub el_residual: f64,
    pub a1_residual: f64,
    pub a2_residual: f64,
    pub inner_iters: usize,
}

impl DiagnosticsRow {
    pub const HEADER: &'static str =
        "step,t,E,F,mean,A,B,margin,el_residual,a1_residual,a2_residual,inner_iters";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.step,
            self.t,
            self.energy_e,
            self.area_f,
            self.mean,
            self.a,
            self.b,
            self.margin,
            self.el_residual,
            self.a1_residual,
            self.a2_residual,
            self.inner_iters
        )
    }
}

/// Per-step quantities used by the estimate checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNorms {
    pub v_h2: f64,
    pub mu_l2: f64,
    pub mu_h2: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalDiagnostics {
    pub energy_initial: f64,
    /// Observed `m_M` over the kept states.
    pub observed_m_m: f64,
    /// `max |B| / (1 + ‖v_{n+1} - v_n‖/τ)`.
    pub kappa_b: f64,
    /// `max |A + B mean(μ)|`.
    pub kappa_a: f64,
    pub min_margin: f64,
    pub max_abs_a: f64,
    pub max_abs_b: f64,
    /// `Σ τ (A² + B² + ‖μ‖²_{H²})`.
    pub multiplier_accumulator: f64,
    /// Steps that were retried as two half steps.
    pub half_step_retries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub spec: ConstraintSpec,
    pub margin_floor: f64,
    /// Step index of each kept state.
    pub state_steps: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub reports: Vec<StepReport>,
    pub rows: Vec<DiagnosticsRow>,
    /// Norms of the initial state followed by one entry per step.
    pub norms: Vec<StepNorms>,
    pub global: GlobalDiagnostics,
}

impl Trajectory {
    fn start(cfg: &RunConfig, v0: PhaseState) -> Self {
        let norms = step_norms(&v0);
        let mut t = Self {
            tau: cfg.tau,
            spec: cfg.spec,
            margin_floor: cfg.margin_floor,
            state_steps: vec![0],
            times: vec![0.0],
            states: vec![],
            reports: vec![],
            rows: vec![],
            norms: vec![norms],
            global: GlobalDiagnostics {
                energy_initial: v0.energy_e,
                min_margin: v0.margin,
                observed_m_m: f64::INFINITY,
                ..Default::default()
            },
        };
        t.states.push(v0);
        t
    }

    pub fn initial(&self) -> &PhaseState {
        &self.states[0]
    }

    pub fn last(&self) -> &PhaseState {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn steps(&self) -> usize {
        self.reports.len()
    }

    /// Energies `E[v_0], E[v_1], …` for every step (not just kept states).
    pub fn energies(&self) -> Vec<f64> {
        std::iter::once(self.global.energy_initial)
            .chain(self.rows.iter().map(|r| r.energy_e))
            .collect()
    }

    fn push(&mut self, step: usize, state: PhaseState, report: StepReport, keep: bool) {
        let f = self.rows.len();
        debug_assert_eq!(f + 1, step);
        let norms = step_norms(&state);
        let g = &mut self.global;
        g.min_margin = g.min_margin.min(state.margin);
        g.max_abs_a = g.max_abs_a.max(report.a.abs());
        g.max_abs_b = g.max_abs_b.max(report.b.abs());
        let speed = report.step_distance_sq.sqrt() / self.tau;
        g.kappa_b = g.kappa_b.max(report.b.abs() / (1.0 + speed));
        g.kappa_a = g.kappa_a.max((report.a + report.b * state.mean_mu()).abs());
        g.multiplier_accumulator +=
            self.tau * (report.a * report.a + report.b * report.b + norms.mu_h2 * norms.mu_h2);
        self.rows.push(DiagnosticsRow {
            step,
            t: step as f64 * self.tau,
            energy_e: state.energy_e,
            area_f: state.area_f,
            mean: state.mean_v,
            a: report.a,
            b: report.b,
            margin: state.margin,
            el_residual: report.el_residual,
            a1_residual: report.a1_residual,
            a2_residual: report.a2_residual,
            inner_iters: report.inner_iters,
        });
        self.norms.push(norms);
        self.reports.push(report);
        if keep {
            self.state_steps.push(step);
            self.times.push(step as f64 * self.tau);
            self.states.push(state);
        }
    }

    fn finish(&mut self, plan: &NeumannSolvePlan) {
        self.global.observed_m_m = m_m_probe(&self.states, plan);
    }
}

fn step_norms(s: &PhaseState) -> StepNorms {
    StepNorms {
        v_h2: s.v.h2_norm(),
        mu_l2: s.mu.l2_norm(),
        mu_h2: s.mu.h2_norm(),
    }
}

/// One step of size `τ`, optionally retried as two steps of `τ/2`.
fn advance(
    current: &PhaseState,
    cfg: &RunConfig,
    plan: &NeumannSolvePlan,
) -> Result<(PhaseState, StepReport, bool)> {
    let p = &cfg.potential;
    match proximal_step(current, &cfg.spec, &cfg.step_cfg, p, plan) {
        Ok((s, r)) => Ok((s, r, false)),
        Err(e @ Error::DegenerateDirection { .. }) => Err(e),
        Err(e) if !cfg.retry_half_step => Err(e),
        Err(first) => {
            let mut half = cfg.step_cfg;
            half.tau *= 0.5;
            let retry = || -> Result<(PhaseState, StepReport)> {
                let (mid, r1) = proximal_step(current, &cfg.spec, &half, p, plan)?;
                let (end, r2) = proximal_step(&mid, &cfg.spec, &half, p, plan)?;
                let diff = end.v.sub(&current.v);
                let step_distance_sq = dot(&diff, &diff);
                let e_f = current.energy_e;
                let report = StepReport {
                    inner_iters: r1.inner_iters + r2.inner_iters,
                    objective: 0.5 * step_distance_sq + cfg.tau * end.energy_e,
                    decrease_ok: step_distance_sq / (2.0 * cfg.tau) + end.energy_e
                        <= e_f + 1e-10 * (1.0 + e_f),
                    step_distance_sq,
                    ..r2
                };
                Ok((end, report))
            };
            match retry() {
                Ok((s, r)) => Ok((s, r, true)),
                Err(_) => Err(first),
            }
        }
    }
}

/// Runs the scheme from `v0` for `⌈t_end/τ⌉` steps.
pub fn evolve(v0: &Field, cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let p = &cfg.potential;
    if v0.grid() != &cfg.grid {
        return Err(Error::GridMismatch);
    }
    if !cfg.spec.is_feasible(v0, p) {
        return Err(Error::InfeasibleInitial(format!(
            "mean residual {:e}, relative area residual {:e}",
            cfg.spec.mean_residual(v0),
            cfg.spec.area_residual(v0, p)
        )));
    }
    let initial = make_state(v0.clone(), p);
    let plan = NeumannSolvePlan::new(cfg.grid);
    let mut traj = Trajectory::start(cfg, initial);
    if traj.initial().margin <= cfg.margin_floor {
        let margin = traj.initial().margin;
        traj.finish(&plan);
        return Err(Error::MarginCollapse {
            step: 0,
            margin,
            partial: Box::new(traj),
        });
    }

    let total = cfg.steps();
    let mut current = traj.initial().clone();
    for step in 1..=total {
        let outcome = advance(&current, cfg, &plan);
        let (next, report, retried) = match outcome {
            Ok(x) => x,
            Err(Error::DegenerateDirection { margin, .. }) => {
                traj.finish(&plan);
                return Err(Error::MarginCollapse {
                    step,
                    margin,
                    partial: Box::new(traj),
                });
            }
            Err(e) => {
                return Err(Error::StepFailure {
                    step,
                    source: Box::new(e),
                })
            }
        };
        if retried {
            traj.global.half_step_retries.push(step);
        }
        let margin = next.margin;
        let keep = step % cfg.snapshot_every == 0 || step == total || margin < cfg.margin_floor;
        traj.push(step, next.clone(), report, keep);
        if margin < cfg.margin_floor {
            traj.finish(&plan);
            return Err(Error::MarginCollapse {
                step,
                margin,
                partial: Box::new(traj),
            });
        }
        current = next;
    }
    traj.finish(&plan);
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed `lhs / rhs`; a value ≤ 1 (up to slack) passes.
    pub worst_ratio: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub checks: Vec<EstimateCheck>,
    /// Constant of the uniform `H²` bound, calibrated on the initial state.
    pub c1: f64,
}

impl EstimateReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&EstimateCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks the discrete energy estimates along a trajectory:
///
/// * `energy-monotone`: `E[v_{n+1}] ≤ E[v_n]`,
/// * `step-decrease`: `‖v_{n+1} - v_n‖²/(2τ) + E[v_{n+1}] ≤ E[v_n]`,
/// * `uniform-bound`: `‖v_n‖_{H²} + ‖μ_n‖ ≤ C₁ (1 + √E[v₀])`,
/// * `summed-increments`: `Σ ‖v_{n+1} - v_n‖² ≤ 2τ E[v₀]`,
/// * `holder`: `‖v(t₂) - v(t₁)‖² ≤ 2E[v₀](τ + t₂ - t₁)` on kept states,
/// * `multiplier-integral`: the accumulator `Σ τ (A² + B² + ‖μ‖²_{H²})` is finite,
/// * `constraints` and `margin-floor`.
pub fn check_estimates(traj: &Trajectory) -> EstimateReport {
    let tau = traj.tau;
    let energies = traj.energies();
    let e0 = energies[0];
    let mut checks = Vec::new();

    let mut worst = 0.0_f64;
    let mut worst_excess = f64::NEG_INFINITY;
    for w in energies.windows(2) {
        worst_excess = worst_excess.max(w[1] - w[0]);
        if w[0] > 0.0 {
            worst = worst.max(w[1] / w[0]);
        }
    }
    let monotone = energies.len() < 2 || worst_excess <= ENERGY_SLACK;
    checks.push(EstimateCheck {
        name: "energy-monotone",
        passed: monotone,
        worst_ratio: worst,
        detail: format!("largest increase {:e}", worst_excess.max(0.0)),
    });

    let mut worst = 0.0_f64;
    let mut ok = true;
    for (n, rep) in traj.reports.iter().enumerate() {
        let lhs = rep.step_distance_sq / (2.0 * tau) + energies[n + 1];
        ok &= lhs <= energies[n] + ENERGY_SLACK;
        if energies[n] > 0.0 {
            worst = worst.max(lhs / energies[n]);
        }
    }
    checks.push(EstimateCheck {
        name: "step-decrease",
        passed: ok,
        worst_ratio: worst,
        detail: format!("{} steps", traj.reports.len()),
    });

    let bound_scale = 1.0 + e0.sqrt();
    let ratios: Vec<f64> = traj
        .norms
        .iter()
        .map(|n| (n.v_h2 + n.mu_l2) / bound_scale)
        .collect();
    let c1 = UNIFORM_BOUND_FACTOR * ratios[0];
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    checks.push(EstimateCheck {
        name: "uniform-bound",
        passed: worst <= c1 && worst.is_finite(),
        worst_ratio: if c1 > 0.0 { worst / c1 } else { 0.0 },
        detail: format!("C1 = {c1:.6e}"),
    });

    let sum: f64 = traj.reports.iter().map(|r| r.step_distance_sq).sum();
    let rhs = 2.0 * tau * e0;
    let ratio = if rhs > 0.0 { sum / rhs } else { 0.0 };
    checks.push(EstimateCheck {
        name: "summed-increments",
        passed: sum <= rhs * (1.0 + ESTIMATE_SLACK) + f64::MIN_POSITIVE,
        worst_ratio: ratio,
        detail: format!("sum {sum:.6e} vs 2 tau E0 {rhs:.6e}"),
    });

    let mut worst = 0.0_f64;
    let mut ok = true;
    for i in 0..traj.states.len() {
        for j in i + 1..traj.states.len() {
            let d = traj.states[j].v.sub(&traj.states[i].v);
            let lhs = dot(&d, &d);
            let rhs = 2.0 * e0 * (tau + traj.times[j] - traj.times[i]);
            ok &= lhs <= rhs * (1.0 + ESTIMATE_SLACK);
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            } else if lhs > 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    checks.push(EstimateCheck {
        name: "holder",
        passed: ok,
        worst_ratio: worst,
        detail: format!("{} kept states", traj.states.len()),
    });

    let acc = traj.global.multiplier_accumulator;
    checks.push(EstimateCheck {
        name: "multiplier-integral",
        passed: acc.is_finite() && traj.global.kappa_b.is_finite(),
        worst_ratio: 0.0,
        detail: format!(
            "accumulator {acc:.6e}, kappa_B {:.6e}, kappa_A {:.6e}",
            traj.global.kappa_b, traj.global.kappa_a
        ),
    });

    let spec = &traj.spec;
    let mut worst_mean = (traj.initial().mean_v - spec.alpha).abs();
    let mut worst_area = (traj.initial().area_f - spec.beta).abs() / spec.beta;
    for r in &traj.rows {
        worst_mean = worst_mean.max((r.mean - spec.alpha).abs());
        worst_area = worst_area.max((r.area_f - spec.beta).abs() / spec.beta);
    }
    checks.push(EstimateCheck {
        name: "constraints",
        passed: worst_mean <= spec.tol_mean && worst_area <= spec.tol_area,
        worst_ratio: (worst_mean / spec.tol_mean).max(worst_area / spec.tol_area),
        detail: format!("mean {worst_mean:.3e}, area {worst_area:.3e}"),
    });

    let min_margin = traj
        .rows
        .iter()
        .map(|r| r.margin)
        .fold(traj.initial().margin, f64::min);
    checks.push(EstimateCheck {
        name: "margin-floor",
        passed: min_margin >= traj.margin_floor,
        worst_ratio: if min_margin > 0.0 {
            traj.margin_floor / min_margin
        } else {
            f64::INFINITY
        },
        detail: format!("min margin {min_margin:.6e}"),
    });

    EstimateReport { checks, c1 }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DependenceOutcome {
    /// The retracted perturbation vanished; both runs are the same run.
    ExactCoincidence,
    Ratios {
        initial_distance_sq: f64,
        /// `(t, R(t))` at every step, starting with `(0, 1)`.
        ratios: Vec<(f64, f64)>,
        max_ratio: f64,
        bounded: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceReport {
    pub outcome: DependenceOutcome,
    pub cap: f64,
}

pub const DEFAULT_DEPENDENCE_CAP: f64 = 1e6;

/// Evolves `v0` and the retraction of `v0 + delta` side by side and tracks
///
/// ```text
/// R(t) = [‖v₁(t) - v₂(t)‖² + ½ Σ τ ‖μ₁ - μ₂‖²] / ‖v₁(0) - v₂(0)‖².
/// ```
pub fn continuous_dependence_harness(
    v0: &Field,
    delta: &Field,
    cfg: &RunConfig,
    cap: f64,
) -> Result<DependenceReport> {
    let p = &cfg.potential;
    let perturbed = retract_to_manifold(&v0.add(delta), &cfg.spec, p)?.field;
    let d0 = perturbed.sub(v0);
    let initial_distance_sq = dot(&d0, &d0);
    if initial_distance_sq == 0.0 {
        return Ok(DependenceReport {
            outcome: DependenceOutcome::ExactCoincidence,
            cap,
        });
    }
    let mut run_cfg = cfg.clone();
    run_cfg.snapshot_every = 1;
    let (first, second) = std::thread::scope(|s| {
        let a = s.spawn(|| evolve(v0, &run_cfg));
        let b = s.spawn(|| evolve(&perturbed, &run_cfg));
        (
            a.join().expect("branch thread panicked"),
            b.join().expect("branch thread panicked"),
        )
    });
    let (first, second) = (first?, second?);

    let mut ratios = Vec::with_capacity(first.states.len());
    let mut integral = 0.0;
    for (n, (s1, s2)) in first.states.iter().zip(&second.states).enumerate() {
        if n > 0 {
            let dmu = s1.mu.sub(&s2.mu);
            integral += cfg.tau * dot(&dmu, &dmu);
        }
        let dv = s1.v.sub(&s2.v);
        let r = (dot(&dv, &dv) + 0.5 * integral) / initial_distance_sq;
        ratios.push((first.times[n], r));
    }
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let bounded = ratios.iter().all(|r| r.1.is_finite()) && max_ratio <= cap;
    Ok(DependenceReport {
        outcome: DependenceOutcome::Ratios {
            initial_distance_sq,
            ratios,
            max_ratio,
            bounded,
        },
        cap,
    })
}
