//! Inverse Neumann Laplacian on mean-zero fields.
//!
//! `N(w)` is the unique mean-zero solution of `-Δu = w` with the reflected
//! ghost stencil of [`crate::grid::laplacian`]. The stencil is diagonalised
//! exactly by the type-II cosine basis `cos(kπ(i + ½)/n)`, which is also
//! used here to apply other functions of the Laplacian (preconditioners).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{dot, laplacian, mean, stencil_eigenvalue, Field, Grid};

pub const DEFAULT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Cosine-transform diagonalisation.
    Spectral,
    /// Conjugate gradients with mean projection.
    Iterative,
}

/// Orthonormal cosine basis for one axis together with the stencil
/// eigenvalue of each mode.
#[derive(Debug, Clone)]
struct AxisBasis {
    n: usize,
    /// Row `k` holds mode `k` sampled at the `n` nodes.
    modes: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl AxisBasis {
    fn new(n: usize, h: f64) -> Self {
        let mut modes = Vec::with_capacity(n * n);
        for k in 0..n {
            let s = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                modes.push(s * (k as f64 * PI * (i as f64 + 0.5) / n as f64).cos());
            }
        }
        let eigenvalues = (0..n).map(|k| stencil_eigenvalue(h, n, k)).collect();
        Self {
            n,
            modes,
            eigenvalues,
        }
    }

    /// Coefficients of `src` (stride `stride`) written into `dst` with the same stride.
    fn forward(&self, src: &[f64], dst: &mut [f64], offset: usize, stride: usize) {
        for k in 0..self.n {
            let row = &self.modes[k * self.n..(k + 1) * self.n];
            let mut acc = 0.0;
            for (i, m) in row.iter().enumerate() {
                acc += m * src[offset + i * stride];
            }
            dst[offset + k * stride] = acc;
        }
    }

    fn inverse(&self, src: &[f64], dst: &mut [f64], offset: usize, stride: usize) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in 0..self.n {
                acc += self.modes[k * self.n + i] * src[offset + k * stride];
            }
            dst[offset + i * stride] = acc;
        }
    }
}

/// Precomputed solver for the inverse Neumann Laplacian on one grid.
#[derive(Debug, Clone)]
pub struct NeumannSolvePlan {
    grid: Grid,
    method: SolveMethod,
    tolerance: f64,
    max_iterations: usize,
    x: AxisBasis,
    y: Option<AxisBasis>,
}

impl NeumannSolvePlan {
    pub fn new(grid: Grid) -> Self {
        Self::with_method(grid, SolveMethod::Spectral, DEFAULT_TOLERANCE)
    }

    pub fn with_method(grid: Grid, method: SolveMethod, tolerance: f64) -> Self {
        let x = AxisBasis::new(grid.nx(), grid.spacing()[0]);
        let y = (grid.dim() == 2).then(|| AxisBasis::new(grid.ny(), grid.spacing()[1]));
        Self {
            grid,
            method,
            tolerance,
            max_iterations: 20 * grid.len() + 100,
            x,
            y,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn method(&self) -> SolveMethod {
        self.method
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Stencil eigenvalue of the `(kx, ky)` mode (`ky` ignored in 1D).
    pub fn eigenvalue(&self, kx: usize, ky: usize) -> f64 {
        let ex = self.x.eigenvalues[kx];
        match &self.y {
            Some(y) => ex + y.eigenvalues[ky],
            None => ex,
        }
    }

    fn transform(&self, w: &Field, forward: bool) -> Vec<f64> {
        let nx = self.grid.nx();
        let ny = self.grid.ny();
        let src = w.values();
        let mut tmp = vec![0.0; src.len()];
        for j in 0..ny {
            if forward {
                self.x.forward(src, &mut tmp, j * nx, 1);
            } else {
                self.x.inverse(src, &mut tmp, j * nx, 1);
            }
        }
        let Some(yb) = &self.y else {
            return tmp;
        };
        let mut out = vec![0.0; src.len()];
        for i in 0..nx {
            if forward {
                yb.forward(&tmp, &mut out, i, nx);
            } else {
                yb.inverse(&tmp, &mut out, i, nx);
            }
        }
        out
    }

    /// Applies `symbol(λ)` to every cosine mode of `w`, where `λ ≤ 0` is the
    /// stencil eigenvalue of that mode.
    pub fn apply_symbol(&self, w: &Field, symbol: impl Fn(f64) -> f64) -> Field {
        let mut coeffs = self.transform(w, true);
        let nx = self.grid.nx();
        for (idx, c) in coeffs.iter_mut().enumerate() {
            *c *= symbol(self.eigenvalue(idx % nx, idx / nx));
        }
        let spectral = Field::new(self.grid, coeffs).expect("same grid");
        let values = self.transform(&spectral, false);
        Field::new(self.grid, values).expect("same grid")
    }

    fn check_mean(&self, w: &Field) -> Result<f64> {
        let m = mean(w);
        let tolerance = 1e-10 * (w.l2_norm() + 1.0);
        if m.abs() > tolerance {
            return Err(Error::NonZeroMean { mean: m, tolerance });
        }
        Ok(m)
    }

    /// `N(w)`: mean-zero `u` with `-Δu = w`. The mean of `w` is projected
    /// out first; it must already be below `1e-10 (‖w‖ + 1)`.
    pub fn solve_n(&self, w: &Field) -> Result<Field> {
        let m = self.check_mean(w)?;
        let rhs = w.shifted(-m);
        let u = match self.method {
            SolveMethod::Spectral => {
                self.apply_symbol(&rhs, |lam| if lam < 0.0 { -1.0 / lam } else { 0.0 })
            }
            SolveMethod::Iterative => self.conjugate_gradient(&rhs)?,
        };
        Ok(u.centered())
    }

    fn conjugate_gradient(&self, rhs: &Field) -> Result<Field> {
        let bnorm = rhs.l2_norm();
        let mut x = Field::zeros(self.grid);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        for _ in 0..self.max_iterations {
            let ap = laplacian(&p).scaled(-1.0);
            let alpha = rr / dot(&p, &ap);
            x = x.add_scaled(alpha, &p);
            r = r.add_scaled(-alpha, &ap).centered();
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= self.tolerance * bnorm {
                return Ok(x);
            }
            p = r.add_scaled(rr_new / rr, &p);
            rr = rr_new;
        }
        Err(Error::NoConvergence {
            what: "conjugate gradient",
            iterations: self.max_iterations,
            residual: rr.sqrt() / bnorm,
        })
    }

    /// `‖∇N(w)‖² = ⟨N(w), w⟩`.
    pub fn dual_norm_sq(&self, w: &Field) -> Result<f64> {
        let u = self.solve_n(w)?;
        Ok(dot(&u, &w.centered()))
    }
}
