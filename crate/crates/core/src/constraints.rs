//! The constraint manifold `{ w : mean(w) = α, F[w] = β }`.
//!
//! This module estimates the minimal area `β_α` reachable at a given mean,
//! builds feasible points along a mean-zero direction, pulls nearby fields
//! back onto the manifold, and exposes the a-priori and a-posteriori tests
//! for the degenerate set where the chemical potential is constant.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::functionals::{area_f, chemical_potential, PhaseState, PotentialParams};
use crate::grid::{dot, mean, Field, Grid};
use crate::neumann::NeumannSolvePlan;

/// Below this margin the area constraint cannot be corrected along `μ - mean(μ)`.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

/// Stationarity target `‖μ - mean(μ)‖₂` for the minimal-area descent.
pub const MINIMAL_AREA_GRADIENT_TOL: f64 = 1e-8;

const MINIMAL_AREA_MAX_ITERS: usize = 20_000;
const NEWTON_MAX_ITERS: usize = 30;
const BISECTION_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSpec {
    pub alpha: f64,
    pub beta: f64,
    pub tol_mean: f64,
    /// Relative tolerance on `F[w] - β`.
    pub tol_area: f64,
}

impl ConstraintSpec {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Self::with_tolerances(alpha, beta, 1e-12, 1e-10)
    }

    pub fn with_tolerances(alpha: f64, beta: f64, tol_mean: f64, tol_area: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite, got {alpha}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive, got {beta}"
            )));
        }
        if !(tol_mean > 0.0 && tol_area > 0.0) {
            return Err(Error::InvalidParameter(
                "tolerances must be positive".into(),
            ));
        }
        Ok(Self {
            alpha,
            beta,
            tol_mean,
            tol_area,
        })
    }

    pub fn mean_residual(&self, w: &Field) -> f64 {
        (mean(w) - self.alpha).abs()
    }

    /// `|F[w] - β| / β`.
    pub fn area_residual(&self, w: &Field, p: &PotentialParams) -> f64 {
        (area_f(w, p) - self.beta).abs() / self.beta
    }

    pub fn is_feasible(&self, w: &Field, p: &PotentialParams) -> bool {
        self.mean_residual(w) <= self.tol_mean && self.area_residual(w, p) <= self.tol_area
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub beta_alpha_est: f64,
    pub z_empty_sufficient: bool,
    /// Observed `m_M` over the states supplied to [`feasibility_report`]
    /// (`+∞` when none were supplied).
    pub margin_lower_bound_est: f64,
}

/// Best constrained minimiser of `F` found by the multi-seed descent.
#[derive(Debug, Clone)]
pub struct MinimalArea {
    pub value: f64,
    pub minimizer: Field,
    /// Index of the seed that produced the minimum.
    pub seed: usize,
}

fn seeds(alpha: f64, grid: &Grid) -> Vec<Field> {
    let lx = grid.extents()[0];
    let mut out = vec![
        Field::constant(*grid, alpha),
        Field::from_fn(*grid, |x, _| alpha + 0.1 * (PI * x / lx).cos()),
        Field::from_fn(*grid, |x, _| alpha - 0.3 * (PI * x / lx).cos()),
        Field::from_fn(*grid, |x, _| alpha + 0.1 * (2.0 * PI * x / lx).cos()),
        Field::from_fn(*grid, |x, _| alpha + if x < 0.5 * lx { 0.5 } else { -0.5 }),
        Field::from_fn(*grid, |x, _| alpha + (8.0 * (x - 0.5 * lx) / lx).tanh()),
    ];
    if grid.dim() == 2 {
        let ly = grid.extents()[1];
        out.push(Field::from_fn(*grid, |_, y| {
            alpha + 0.1 * (PI * y / ly).cos()
        }));
        out.push(Field::from_fn(*grid, |x, y| {
            alpha + 0.2 * (PI * x / lx).cos() * (PI * y / ly).cos()
        }));
    }
    // Every seed must carry the prescribed mean exactly.
    out.into_iter()
        .map(|s| {
            let m = mean(&s);
            s.shifted(alpha - m)
        })
        .collect()
}

/// Sobolev-preconditioned mean-projected descent on `F` from one seed.
fn descend_area(
    seed: Field,
    alpha: f64,
    p: &PotentialParams,
    plan: &NeumannSolvePlan,
) -> Option<(f64, Field)> {
    let shift = 1.0 + p.a();
    let mut w = seed;
    let mut value = area_f(&w, p);
    for _ in 0..MINIMAL_AREA_MAX_ITERS {
        let grad = chemical_potential(&w, p).centered();
        if grad.l2_norm() <= MINIMAL_AREA_GRADIENT_TOL {
            return Some((value, w));
        }
        let dir = plan.apply_symbol(&grad, |lam| 1.0 / (shift - lam));
        let slope = dot(&grad, &dir);
        let mut sigma = 1.0;
        loop {
            let trial = w.add_scaled(-sigma, &dir);
            let trial = trial.shifted(alpha - mean(&trial));
            let tv = area_f(&trial, p);
            if tv <= value - 1e-4 * sigma * slope {
                w = trial;
                value = tv;
                break;
            }
            sigma *= 0.5;
            if sigma < 1e-16 {
                // Numerically stationary: the decrease is below roundoff.
                return (grad.l2_norm() <= 1e3 * MINIMAL_AREA_GRADIENT_TOL).then_some((value, w));
            }
        }
    }
    None
}

/// Multi-seed estimate of `β_α = inf { F[w] : mean(w) = α }`, together with
/// the best minimiser found. The value is an upper bound for the discrete
/// infimum and never exceeds `|Ω| W(α)`.
pub fn minimal_area(alpha: f64, p: &PotentialParams, grid: &Grid) -> Result<MinimalArea> {
    let plan = NeumannSolvePlan::new(*grid);
    let seeds = seeds(alpha, grid);
    let results: Vec<Option<(f64, Field)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .into_iter()
            .map(|s| {
                let plan = &plan;
                scope.spawn(move || descend_area(s, alpha, p, plan))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("descent thread panicked"))
            .collect()
    });
    let mut best: Option<MinimalArea> = None;
    for (seed, r) in results.into_iter().enumerate() {
        if let Some((value, minimizer)) = r {
            if best.as_ref().is_none_or(|b| value < b.value) {
                best = Some(MinimalArea {
                    value,
                    minimizer,
                    seed,
                });
            }
        }
    }
    best.ok_or(Error::NoConvergence {
        what: "minimal-area descent",
        iterations: MINIMAL_AREA_MAX_ITERS,
        residual: f64::NAN,
    })
}

pub fn beta_alpha_estimate(alpha: f64, p: &PotentialParams, grid: &Grid) -> Result<f64> {
    minimal_area(alpha, p, grid).map(|m| m.value)
}

/// A feasible point `w_α + λ φ`.
#[derive(Debug, Clone)]
pub struct FeasiblePoint {
    pub field: Field,
    pub lambda: f64,
    pub beta_alpha_est: f64,
}

/// Walks from the minimal-area state along the mean-zero direction `phi`
/// until `F` reaches `β`, then bisects for the crossing.
pub fn construct_feasible(
    spec: &ConstraintSpec,
    phi: &Field,
    p: &PotentialParams,
    grid: &Grid,
) -> Result<FeasiblePoint> {
    let base = minimal_area(spec.alpha, p, grid)?;
    construct_feasible_from(spec, phi, p, &base)
}

/// [`construct_feasible`] with a precomputed minimal-area state.
pub fn construct_feasible_from(
    spec: &ConstraintSpec,
    phi: &Field,
    p: &PotentialParams,
    base: &MinimalArea,
) -> Result<FeasiblePoint> {
    let scale = phi.max_abs();
    if scale == 0.0 || mean(phi).abs() > 1e-12 * (1.0 + scale) {
        return Err(Error::ZeroDirection);
    }
    if spec.beta <= base.value {
        return Err(Error::InfeasibleBeta {
            beta: spec.beta,
            beta_alpha: base.value,
        });
    }
    let w0 = &base.minimizer;
    let excess = |lam: f64| area_f(&w0.add_scaled(lam, phi), p) - spec.beta;

    let mut hi = 1.0;
    let mut doublings = 0;
    while excess(hi) <= 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::NoConvergence {
                what: "feasibility bracket",
                iterations: doublings,
                residual: excess(hi),
            });
        }
    }
    let mut lo = 0.0;
    let target = 0.5 * spec.tol_area * spec.beta;
    let mut lambda = hi;
    for _ in 0..BISECTION_MAX_ITERS {
        lambda = 0.5 * (lo + hi);
        let e = excess(lambda);
        if e.abs() <= target || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if e < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    let field = w0.add_scaled(lambda, phi);
    let field = field.shifted(spec.alpha - mean(&field));
    if !spec.is_feasible(&field, p) {
        return Err(Error::NoConvergence {
            what: "feasibility bisection",
            iterations: BISECTION_MAX_ITERS,
            residual: spec.area_residual(&field, p),
        });
    }
    Ok(FeasiblePoint {
        field,
        lambda,
        beta_alpha_est: base.value,
    })
}

#[derive(Debug, Clone)]
pub struct Retraction {
    pub field: Field,
    pub newton_steps: usize,
}

/// Restores `mean = α` by a constant shift and `F = β` by a scalar root
/// solve along `μ - mean(μ)`, along which `F` has slope `‖μ - mean(μ)‖²`.
pub fn retract_to_manifold(
    w: &Field,
    spec: &ConstraintSpec,
    p: &PotentialParams,
) -> Result<Retraction> {
    let drift = mean(w) - spec.alpha;
    if drift.abs() > 0.1 * (1.0 + spec.alpha.abs()) {
        return Err(Error::OutsideTrustRegion(format!(
            "mean is off by {drift:e}"
        )));
    }
    // Shifting by less than an ulp of α cannot improve the mean.
    let base = if drift.abs() > f64::EPSILON * (1.0 + spec.alpha.abs()) {
        w.shifted(-drift)
    } else {
        w.clone()
    };
    let target = spec.tol_area * spec.beta;
    let phi0 = area_f(&base, p) - spec.beta;
    if phi0.abs() > 0.5 * spec.beta {
        return Err(Error::OutsideTrustRegion(format!(
            "area is off by {phi0:e}"
        )));
    }
    if phi0.abs() <= target {
        return Ok(Retraction {
            field: base,
            newton_steps: 0,
        });
    }

    let dir = chemical_potential(&base, p).centered();
    let margin = dir.l2_norm();
    if margin < DEGENERACY_THRESHOLD {
        return Err(Error::DegenerateDirection {
            margin,
            threshold: DEGENERACY_THRESHOLD,
        });
    }

    let no_convergence = |iterations: usize, value: f64| Error::NoConvergence {
        what: "area retraction",
        iterations,
        residual: value.abs() / spec.beta,
    };
    let eval = |s: f64| {
        let x = base.add_scaled(s, &dir);
        let value = area_f(&x, p) - spec.beta;
        let slope = dot(&chemical_potential(&x, p), &dir);
        (value, slope)
    };

    // Bracket endpoints with negative / positive excess, when known.
    let mut neg: Option<f64> = None;
    let mut pos: Option<f64> = None;
    let mut s = 0.0;
    let (mut value, mut slope) = (phi0, margin * margin);
    let mut steps = 0;
    let record = |s: f64, v: f64, neg: &mut Option<f64>, pos: &mut Option<f64>| {
        if v < 0.0 {
            *neg = Some(s);
        } else {
            *pos = Some(s);
        }
    };
    record(s, value, &mut neg, &mut pos);

    while value.abs() > target {
        if steps >= NEWTON_MAX_ITERS + BISECTION_MAX_ITERS {
            return Err(no_convergence(steps, value));
        }
        let newton = s - value / slope;
        let bracketed = match (neg, pos) {
            (Some(a), Some(b)) => Some((a.min(b), a.max(b))),
            _ => None,
        };
        let Some((lo, hi)) = bracketed else {
            // No sign change seen yet: damped Newton on |F - β|.
            if !(slope != 0.0 && newton.is_finite()) || steps >= NEWTON_MAX_ITERS {
                return Err(no_convergence(steps, value));
            }
            let mut t = 1.0;
            loop {
                let cand = s - t * value / slope;
                let (v, sl) = eval(cand);
                if v.abs() < value.abs() {
                    (s, value, slope) = (cand, v, sl);
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    return Err(no_convergence(steps, value));
                }
            }
            record(s, value, &mut neg, &mut pos);
            steps += 1;
            continue;
        };
        let use_newton = steps < NEWTON_MAX_ITERS
            && slope > 0.0
            && newton.is_finite()
            && newton > lo
            && newton < hi;
        s = if use_newton { newton } else { 0.5 * (lo + hi) };
        (value, slope) = eval(s);
        record(s, value, &mut neg, &mut pos);
        steps += 1;
    }

    // One more Newton step usually lands on the roundoff floor.
    let mut field = base.add_scaled(s, &dir);
    if slope > 0.0 {
        let polished_s = s - value / slope;
        let polished = base.add_scaled(polished_s, &dir);
        if (area_f(&polished, p) - spec.beta).abs() < value.abs() {
            field = polished;
        }
    }
    Ok(Retraction {
        field,
        newton_steps: steps,
    })
}

/// Closed-form sufficient test for emptiness of the degenerate set:
/// `2β + (a|Ω|/2)(2α² - 1 - 27α⁴/16) > 0`.
pub fn z_empty_sufficient(spec: &ConstraintSpec, p: &PotentialParams, grid: &Grid) -> bool {
    z_empty_lhs(spec.alpha, spec.beta, p.a(), grid.measure()) > 0.0
}

pub(crate) fn z_empty_lhs(alpha: f64, beta: f64, a: f64, measure: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * beta + 0.5 * a * measure * (2.0 * a2 - 1.0 - 27.0 * a2 * a2 / 16.0)
}

/// Observed `m_M`: smallest `‖∇N(μ - mean μ)‖²` over the given states.
pub fn m_m_probe(states: &[PhaseState], plan: &NeumannSolvePlan) -> f64 {
    states
        .iter()
        .map(|s| {
            plan.dual_norm_sq(&s.mu.centered())
                .expect("centered field has zero mean")
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn feasibility_report(
    spec: &ConstraintSpec,
    p: &PotentialParams,
    grid: &Grid,
    states: &[PhaseState],
) -> Result<FeasibilityReport> {
    let beta_alpha_est = beta_alpha_estimate(spec.alpha, p, grid)?;
    let plan = NeumannSolvePlan::new(*grid);
    Ok(FeasibilityReport {
        beta_alpha_est,
        z_empty_sufficient: z_empty_sufficient(spec, p, grid),
        margin_lower_bound_est: m_m_probe(states, &plan),
    })
}
