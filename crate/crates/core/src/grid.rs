//! Uniform cell-centered grids on rectangular boxes with homogeneous Neumann
//! discrete calculus.
//!
//! Nodes sit at cell centers `x_i = (i + 1/2) h` with `h = L / n`. The
//! Laplacian uses reflected ghost nodes (`w_{-1} = w_0`, `w_n = w_{n-1}`),
//! which makes the discrete no-flux condition and the discrete conservation
//! identity `∫ Δw = 0` hold exactly. Quadrature is the midpoint rule, so the
//! stencil is symmetric with respect to [`inner`].

use crate::error::{Error, Result};

/// Smallest admissible number of nodes per axis.
pub const MIN_NODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: [f64; 2],
    counts: [usize; 2],
    spacing: [f64; 2],
}

impl Grid {
    pub fn new_1d(length: f64, n: usize) -> Result<Self> {
        Self::build(1, [length, 1.0], [n, 1])
    }

    pub fn new_2d(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::build(2, [lx, ly], [nx, ny])
    }

    fn build(dim: usize, extents: [f64; 2], counts: [usize; 2]) -> Result<Self> {
        for axis in 0..dim {
            if !(extents[axis].is_finite() && extents[axis] > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "extent along axis {axis} must be positive and finite, got {}",
                    extents[axis]
                )));
            }
            if counts[axis] < MIN_NODES {
                return Err(Error::InvalidGrid(format!(
                    "need at least {MIN_NODES} nodes along axis {axis}, got {}",
                    counts[axis]
                )));
            }
        }
        let spacing = [extents[0] / counts[0] as f64, extents[1] / counts[1] as f64];
        Ok(Self {
            dim,
            extents,
            counts,
            spacing,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Box side lengths; only the first `dim` entries are meaningful.
    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn nx(&self) -> usize {
        self.counts[0]
    }

    /// Number of rows; 1 for one-dimensional grids.
    pub fn ny(&self) -> usize {
        self.counts[1]
    }

    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of a single node (cell volume).
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    /// `|Ω|`, the product of the extents.
    pub fn measure(&self) -> f64 {
        self.extents[..self.dim].iter().product()
    }

    /// Cell-center coordinate of node `i` along `axis`.
    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing[axis]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.counts[0] && j < self.counts[1]);
        j * self.counts[0] + i
    }
}

/// Nodal values on a [`Grid`], stored row-major (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x, y)` at cell centers. In 1D the closure receives `y = 0`.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            let y = if grid.dim() == 2 {
                grid.coordinate(1, j)
            } else {
                0.0
            };
            for i in 0..grid.nx() {
                values.push(f(grid.coordinate(0, i), y));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn shifted(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Field) -> Self {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn sub(&self, other: &Field) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Field) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        dot(self, self).sqrt()
    }

    /// The field minus its mean.
    pub fn centered(&self) -> Self {
        self.shifted(-mean(self))
    }

    /// `‖w‖²_{H¹} = ‖w‖² + 2 D(w)` with `D` the stencil Dirichlet energy.
    pub fn h1_norm(&self) -> f64 {
        (dot(self, self) + 2.0 * dirichlet_energy(self))
            .max(0.0)
            .sqrt()
    }

    /// `‖w‖²_{H²} = ‖w‖²_{H¹} + ‖Δw‖²`.
    pub fn h2_norm(&self) -> f64 {
        let lap = laplacian(self);
        let h1 = self.h1_norm();
        (h1 * h1 + dot(&lap, &lap)).sqrt()
    }

    /// Mirror image along the x axis (`i ↦ n_x - 1 - i`).
    pub fn reflect_x(&self) -> Self {
        let nx = self.grid.nx();
        let mut values = self.values.clone();
        for row in values.chunks_mut(nx) {
            row.reverse();
        }
        Self {
            grid: self.grid,
            values,
        }
    }
}

/// Midpoint quadrature `Σ w_i · |cell|`.
pub fn integrate(w: &Field) -> f64 {
    w.values.iter().sum::<f64>() * w.grid.cell_volume()
}

pub fn mean(w: &Field) -> f64 {
    integrate(w) / w.grid.measure()
}

/// Quadrature inner product; fails when the operands live on different grids.
pub fn inner(u: &Field, v: &Field) -> Result<f64> {
    if u.grid != v.grid {
        return Err(Error::GridMismatch);
    }
    Ok(dot(u, v))
}

/// Unchecked [`inner`] for crate-internal use where grids agree by construction.
pub(crate) fn dot(u: &Field, v: &Field) -> f64 {
    debug_assert_eq!(u.values.len(), v.values.len());
    u.values
        .iter()
        .zip(&v.values)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * u.grid.cell_volume()
}

/// Neumann 3-point / 5-point Laplacian.
///
/// Written in flux form (differences of neighbours first) so that smooth
/// fields lose almost nothing to cancellation. The fourth-order terms of the
/// flow apply this twice, and the naive `w[i-1] - 2 w[i] + w[i+1]` ordering
/// amplifies roundoff by `h⁻⁴`.
pub fn laplacian(w: &Field) -> Field {
    let grid = w.grid;
    let mut out = vec![0.0; grid.len()];
    let nx = grid.nx();
    let ny = grid.ny();
    let hx2 = grid.spacing[0] * grid.spacing[0];
    let v = &w.values;

    for j in 0..ny {
        let row = &v[j * nx..(j + 1) * nx];
        let dst = &mut out[j * nx..(j + 1) * nx];
        for i in 0..nx {
            let left = if i > 0 { row[i] - row[i - 1] } else { 0.0 };
            let right = if i + 1 < nx { row[i + 1] - row[i] } else { 0.0 };
            dst[i] = (right - left) / hx2;
        }
    }
    if grid.dim == 2 {
        let hy2 = grid.spacing[1] * grid.spacing[1];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let down = if j > 0 { v[k] - v[k - nx] } else { 0.0 };
                let up = if j + 1 < ny { v[k + nx] - v[k] } else { 0.0 };
                out[k] += (up - down) / hy2;
            }
        }
    }
    Field { grid, values: out }
}

/// `-⟨w, Δw⟩ / 2`, i.e. `‖∇w‖²/2` for the stencil.
pub fn dirichlet_energy(w: &Field) -> f64 {
    -0.5 * dot(w, &laplacian(w))
}

/// Eigenvalue of the 1D Neumann stencil for the cosine mode `k`.
pub fn stencil_eigenvalue(h: f64, n: usize, k: usize) -> f64 {
    -(2.0 / (h * h)) * (1.0 - (k as f64 * std::f64::consts::PI / n as f64).cos())
}
