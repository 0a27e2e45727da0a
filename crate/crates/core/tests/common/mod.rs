#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wpf_core::constraints::{retract_to_manifold, ConstraintSpec};
use wpf_core::functionals::{chemical_potential, energy_e};
use wpf_core::grid::{inner, mean};
use wpf_core::{Field, Grid, PhaseState, PotentialParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random combination of the first few cosine modes plus a little noise.
pub fn random_field(grid: Grid, rng: &mut ChaCha8Rng, amplitude: f64) -> Field {
    random_field_with_noise(grid, rng, amplitude, 0.05)
}

pub fn random_field_with_noise(
    grid: Grid,
    rng: &mut ChaCha8Rng,
    amplitude: f64,
    noise: f64,
) -> Field {
    let (lx, ly) = (grid.extents()[0], *grid.extents().get(1).unwrap_or(&1.0));
    let two_d = grid.dim() == 2;
    let mut terms = Vec::new();
    for kx in 0..5 {
        for ky in 0..if two_d { 4 } else { 1 } {
            let c: f64 = rng.gen_range(-1.0..1.0) / (1.0 + (kx + ky) as f64);
            terms.push((kx as f64, ky as f64, c));
        }
    }
    let base = Field::from_fn(grid, |x, y| {
        terms
            .iter()
            .map(|&(kx, ky, c)| c * (kx * PI * x / lx).cos() * (ky * PI * y / ly).cos())
            .sum::<f64>()
    });
    let noise: Vec<f64> = (0..grid.len())
        .map(|_| rng.gen_range(-1.0..1.0) * noise)
        .collect();
    base.add(&Field::new(grid, noise).unwrap())
        .scaled(amplitude)
}

pub fn random_mean_zero(grid: Grid, rng: &mut ChaCha8Rng) -> Field {
    let values: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Field::new(grid, values).unwrap().centered()
}

/// Central-difference directional derivative.
pub fn central(fun: &dyn Fn(&Field) -> f64, w: &Field, d: &Field, eps: f64) -> f64 {
    (fun(&w.add_scaled(eps, d)) - fun(&w.add_scaled(-eps, d))) / (2.0 * eps)
}

/// Relative error at step `1e-5` and the ratio of errors at `1e-4` and `1e-5`.
pub fn directional_check(
    fun: &dyn Fn(&Field) -> f64,
    exact: f64,
    w: &Field,
    d: &Field,
) -> (f64, f64) {
    let e4 = (central(fun, w, d, 1e-4) - exact).abs();
    let e5 = (central(fun, w, d, 1e-5) - exact).abs();
    (e5 / exact.abs(), e4 / e5)
}

/// Minimum of `‖u - f‖²/(2τ) + E[u]` over the manifold through `f`, found by
/// Newton iterations with finite-difference derivatives in tangent charts
/// `c ↦ retract(u + Σ cᵢ tᵢ)` re-centred at every iterate `u`, restarted from
/// random points around `f`.
pub struct BruteForce<'a> {
    pub f: &'a PhaseState,
    pub spec: &'a ConstraintSpec,
    pub p: &'a PotentialParams,
    pub tau: f64,
}

pub struct BruteForceResult {
    pub best: f64,
    pub best_field: Field,
    pub converged_restarts: usize,
}

struct Chart {
    centre: Field,
    basis: Vec<Field>,
}

impl<'a> BruteForce<'a> {
    pub fn new(
        f: &'a PhaseState,
        spec: &'a ConstraintSpec,
        p: &'a PotentialParams,
        tau: f64,
    ) -> Self {
        Self { f, spec, p, tau }
    }

    /// Orthonormal complement of `{1, μ(u)}` in the quadrature inner product.
    fn chart(&self, u: &Field) -> Chart {
        let grid = *u.grid();
        let n = grid.len();
        let mut span: Vec<Field> = Vec::new();
        let push = |v: Field, span: &mut Vec<Field>| {
            let mut v = v;
            for _ in 0..2 {
                for b in span.iter() {
                    let c = inner(&v, b).unwrap();
                    v = v.add_scaled(-c, b);
                }
            }
            let norm = inner(&v, &v).unwrap().sqrt();
            if norm > 1e-8 {
                span.push(v.scaled(1.0 / norm));
            }
        };
        push(Field::constant(grid, 1.0), &mut span);
        push(chemical_potential(u, self.p), &mut span);
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            push(Field::new(grid, e).unwrap(), &mut span);
        }
        assert_eq!(span.len(), n);
        Chart {
            centre: u.clone(),
            basis: span.split_off(2),
        }
    }

    pub fn objective(&self, u: &Field) -> f64 {
        let d = u.sub(&self.f.v);
        inner(&d, &d).unwrap() / (2.0 * self.tau) + energy_e(u, self.p)
    }

    fn point(&self, chart: &Chart, c: &DVector<f64>) -> Option<Field> {
        let mut w = chart.centre.clone();
        for (ci, b) in c.iter().zip(&chart.basis) {
            w = w.add_scaled(*ci, b);
        }
        let u = retract_to_manifold(&w, self.spec, self.p).ok()?.field;
        let ok = (mean(&u) - self.spec.alpha).abs() <= self.spec.tol_mean
            && self.spec.area_residual(&u, self.p) <= self.spec.tol_area;
        ok.then_some(u)
    }

    fn value(&self, chart: &Chart, c: &DVector<f64>) -> Option<f64> {
        self.point(chart, c).map(|u| self.objective(&u))
    }

    fn gradient(&self, chart: &Chart, h: f64) -> Option<DVector<f64>> {
        let m = chart.basis.len();
        let mut g = DVector::zeros(m);
        for i in 0..m {
            let mut cp = DVector::zeros(m);
            let mut cm = DVector::zeros(m);
            cp[i] = h;
            cm[i] = -h;
            g[i] = (self.value(chart, &cp)? - self.value(chart, &cm)?) / (2.0 * h);
        }
        Some(g)
    }

    fn hessian(&self, chart: &Chart, f0: f64, h: f64) -> Option<DMatrix<f64>> {
        let m = chart.basis.len();
        let mut hm = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let at = |si: f64, sj: f64| {
                    let mut x = DVector::zeros(m);
                    x[i] += si * h;
                    x[j] += sj * h;
                    self.value(chart, &x)
                };
                let v = if i == j {
                    (at(1.0, 1.0)? - 2.0 * f0 + at(-1.0, -1.0)?) / (4.0 * h * h)
                } else {
                    (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?)
                        / (4.0 * h * h)
                };
                hm[(i, j)] = v;
                hm[(j, i)] = v;
            }
        }
        Some(hm)
    }

    /// Damped Newton from the feasible point `u`. Returns the final point and
    /// value when the chart gradient falls below tolerance.
    pub fn descend(&self, mut u: Field) -> Option<(Field, f64)> {
        let mut val = self.objective(&u);
        for _ in 0..200 {
            let chart = self.chart(&u);
            let g = self.gradient(&chart, 1e-6)?;
            if g.norm() < 1e-9 * (1.0 + val.abs()) {
                return Some((u, val));
            }
            let h = self.hessian(&chart, val, 1e-4)?;
            let eig = h.clone().symmetric_eigen();
            let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.amax());
            let shift = if lo <= 1e-6 * hi {
                1e-6 * hi - lo + 1e-3 * hi
            } else {
                0.0
            };
            let m = g.len();
            let step = (h + DMatrix::identity(m, m) * shift)
                .cholesky()?
                .solve(&(-&g));
            let slope = g.dot(&step);
            let mut t = 1.0;
            loop {
                if t < 1e-12 {
                    // Cannot decrease further: stationary to working precision.
                    return (g.norm() < 1e-6 * (1.0 + val.abs())).then_some((u, val));
                }
                if let Some(next) = self.point(&chart, &(&step * t)) {
                    let v = self.objective(&next);
                    if v <= val + 1e-4 * t * slope {
                        u = next;
                        val = v;
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        None
    }

    /// Runs `restarts` descents from random points of varying radius in the
    /// tangent chart at `f`.
    pub fn minimize(&self, restarts: usize, seed: u64) -> BruteForceResult {
        let mut rng = rng(seed);
        let radii = [0.0, 1e-3, 3e-3, 1e-2, 3e-2, 0.1];
        let start_chart = self.chart(&self.f.v);
        let m = start_chart.basis.len();
        let mut best = f64::INFINITY;
        let mut best_field = self.f.v.clone();
        let mut converged = 0;
        for k in 0..restarts {
            let r = radii[k % radii.len()];
            let c = DVector::from_fn(m, |_, _| r * rng.gen_range(-1.0..1.0));
            let Some(u0) = self.point(&start_chart, &c) else {
                continue;
            };
            if let Some((u, v)) = self.descend(u0) {
                converged += 1;
                if v < best {
                    best = v;
                    best_field = u;
                }
            }
        }
        BruteForceResult {
            best,
            best_field,
            converged_restarts: converged,
        }
    }
}

/// Reflected-ghost Laplacian written out directly (1D only).
pub fn oracle_laplacian(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let left = if i == 0 { values[0] } else { values[i - 1] };
            let right = if i + 1 == n {
                values[n - 1]
            } else {
                values[i + 1]
            };
            (left - 2.0 * values[i] + right) / (h * h)
        })
        .collect()
}

/// `(μ, E, F, mean)` of a 1D field on `[0, L]` with `W = a(r²-1)²/4`.
pub fn oracle_functionals(values: &[f64], length: f64, a: f64) -> (Vec<f64>, f64, f64, f64) {
    let n = values.len();
    let h = length / n as f64;
    let lap = oracle_laplacian(values, h);
    let mu: Vec<f64> = values
        .iter()
        .zip(&lap)
        .map(|(&v, &l)| -l + a * (v * v * v - v))
        .collect();
    let e = 0.5 * h * mu.iter().map(|m| m * m).sum::<f64>();
    let grad_sq: f64 = values
        .windows(2)
        .map(|w| (w[1] - w[0]).powi(2))
        .sum::<f64>()
        / h;
    let pot: f64 = values
        .iter()
        .map(|&v| 0.25 * a * (v * v - 1.0).powi(2))
        .sum::<f64>()
        * h;
    let f = 0.5 * grad_sq + pot;
    let mean = values.iter().sum::<f64>() / n as f64;
    (mu, e, f, mean)
}
