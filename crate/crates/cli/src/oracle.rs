//! Brute-force minimisation of the per-step objective on tiny grids.
//!
//! Newton iterations with finite-difference derivatives in tangent charts
//! `c ↦ retract(u + Σ cᵢ tᵢ)` that are re-centred at each iterate, restarted
//! from random points around `f`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use wpf_core::constraints::{retract_to_manifold, ConstraintSpec};
use wpf_core::functionals::{chemical_potential, energy_e};
use wpf_core::grid::{inner, mean};
use wpf_core::{Field, PotentialParams};

pub struct Oracle<'a> {
    f: &'a Field,
    spec: &'a ConstraintSpec,
    p: &'a PotentialParams,
    tau: f64,
}

struct Chart {
    centre: Field,
    basis: Vec<Field>,
}

pub struct Minimum {
    pub value: f64,
    pub converged: usize,
}

impl<'a> Oracle<'a> {
    pub fn new(f: &'a Field, spec: &'a ConstraintSpec, p: &'a PotentialParams, tau: f64) -> Self {
        Self { f, spec, p, tau }
    }

    pub fn objective(&self, u: &Field) -> f64 {
        let d = u.sub(self.f);
        inner(&d, &d).expect("same grid") / (2.0 * self.tau) + energy_e(u, self.p)
    }

    fn chart(&self, u: &Field) -> Chart {
        let grid = *u.grid();
        let mut span: Vec<Field> = Vec::new();
        let mut push = |mut v: Field| {
            for _ in 0..2 {
                for b in &span {
                    v = v.add_scaled(-inner(&v, b).expect("same grid"), b);
                }
            }
            let norm = inner(&v, &v).expect("same grid").sqrt();
            if norm > 1e-8 {
                span.push(v.scaled(1.0 / norm));
            }
        };
        push(Field::constant(grid, 1.0));
        push(chemical_potential(u, self.p));
        for i in 0..grid.len() {
            let mut e = vec![0.0; grid.len()];
            e[i] = 1.0;
            push(Field::new(grid, e).expect("grid length"));
        }
        let basis = span.split_off(2.min(span.len()));
        Chart {
            centre: u.clone(),
            basis,
        }
    }

    fn point(&self, chart: &Chart, c: &DVector<f64>) -> Option<Field> {
        let mut w = chart.centre.clone();
        for (ci, b) in c.iter().zip(&chart.basis) {
            w = w.add_scaled(*ci, b);
        }
        let u = retract_to_manifold(&w, self.spec, self.p).ok()?.field;
        let feasible = (mean(&u) - self.spec.alpha).abs() <= self.spec.tol_mean
            && self.spec.area_residual(&u, self.p) <= self.spec.tol_area;
        feasible.then_some(u)
    }

    fn value(&self, chart: &Chart, c: &DVector<f64>) -> Option<f64> {
        self.point(chart, c).map(|u| self.objective(&u))
    }

    fn derivatives(&self, chart: &Chart, f0: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let m = chart.basis.len();
        let at = |steps: &[(usize, f64)]| {
            let mut x = DVector::zeros(m);
            for &(i, s) in steps {
                x[i] += s;
            }
            self.value(chart, &x)
        };
        let (hg, hh) = (1e-6, 1e-4);
        let mut g = DVector::zeros(m);
        let mut h = DMatrix::zeros(m, m);
        for i in 0..m {
            g[i] = (at(&[(i, hg)])? - at(&[(i, -hg)])?) / (2.0 * hg);
            for j in i..m {
                let v = if i == j {
                    (at(&[(i, 2.0 * hh)])? - 2.0 * f0 + at(&[(i, -2.0 * hh)])?) / (4.0 * hh * hh)
                } else {
                    (at(&[(i, hh), (j, hh)])?
                        - at(&[(i, hh), (j, -hh)])?
                        - at(&[(i, -hh), (j, hh)])?
                        + at(&[(i, -hh), (j, -hh)])?)
                        / (4.0 * hh * hh)
                };
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Some((g, h))
    }

    fn descend(&self, mut u: Field) -> Option<f64> {
        let mut val = self.objective(&u);
        for _ in 0..200 {
            let chart = self.chart(&u);
            let (g, h) = self.derivatives(&chart, val)?;
            if g.norm() < 1e-9 * (1.0 + val.abs()) {
                return Some(val);
            }
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
                    return (g.norm() < 1e-6 * (1.0 + val.abs())).then_some(val);
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

    pub fn minimize(&self, restarts: usize, rng: &mut ChaCha8Rng) -> Minimum {
        let radii = [0.0, 1e-3, 3e-3, 1e-2, 3e-2, 0.1];
        let start = self.chart(self.f);
        let m = start.basis.len();
        let mut value = f64::INFINITY;
        let mut converged = 0;
        for k in 0..restarts {
            let r = radii[k % radii.len()];
            let c = DVector::from_fn(m, |_, _| r * rng.gen_range(-1.0..1.0));
            let Some(u0) = self.point(&start, &c) else {
                continue;
            };
            if let Some(v) = self.descend(u0) {
                converged += 1;
                value = value.min(v);
            }
        }
        Minimum { value, converged }
    }
}
