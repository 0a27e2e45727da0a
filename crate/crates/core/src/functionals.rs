//! Double-well potential, area functional `F`, Willmore-type energy `E` and
//! their exact discrete gradients.
//!
//! With the stencil Dirichlet energy `D(w) = -⟨w, Δw⟩/2`,
//!
//! ```text
//! F[w] = D(w) + ∫ W(w),        grad F = μ = -Δw + W'(w)
//! E[w] = ½ ‖μ‖²,               grad E = -Δμ + W''(w) μ
//! ```
//!
//! Both gradient formulas are the exact derivatives of the discrete
//! functionals with respect to the quadrature inner product, because the
//! Laplacian is symmetric for that pairing.

use crate::error::{Error, Result};
use crate::grid::{dirichlet_energy, dot, integrate, laplacian, mean, Field};

/// Coefficient `a > 0` of the quartic double well `W(r) = a (r² - 1)² / 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    a: f64,
}

impl PotentialParams {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "well coefficient a must be positive, got {a}"
            )));
        }
        Ok(Self { a })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn w(&self, r: f64) -> f64 {
        let s = r * r - 1.0;
        0.25 * self.a * s * s
    }

    #[inline]
    pub fn w1(&self, r: f64) -> f64 {
        self.a * (r * r * r - r)
    }

    #[inline]
    pub fn w2(&self, r: f64) -> f64 {
        self.a * (3.0 * r * r - 1.0)
    }

    #[inline]
    pub fn w3(&self, r: f64) -> f64 {
        6.0 * self.a * r
    }
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self { a: 1.0 }
    }
}

pub fn area_f(w: &Field, p: &PotentialParams) -> f64 {
    dirichlet_energy(w) + integrate(&w.map(|r| p.w(r)))
}

pub fn chemical_potential(w: &Field, p: &PotentialParams) -> Field {
    laplacian(w).zip_map(w, |lap, r| p.w1(r) - lap)
}

pub fn energy_e(w: &Field, p: &PotentialParams) -> f64 {
    let mu = chemical_potential(w, p);
    0.5 * dot(&mu, &mu)
}

/// Gradient of [`energy_e`] given a precomputed chemical potential.
pub fn grad_e_with_mu(w: &Field, mu: &Field, p: &PotentialParams) -> Field {
    let lap_mu = laplacian(mu);
    let mut out = lap_mu;
    for ((o, &r), &m) in out.values_mut().iter_mut().zip(w.values()).zip(mu.values()) {
        *o = p.w2(r) * m - *o;
    }
    out
}

pub fn grad_e(w: &Field, p: &PotentialParams) -> Field {
    let mu = chemical_potential(w, p);
    grad_e_with_mu(w, &mu, p)
}

/// A field together with the quantities the flow keeps asking for.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub v: Field,
    pub mu: Field,
    pub energy_e: f64,
    pub area_f: f64,
    pub mean_v: f64,
    /// `‖μ - mean(μ)‖₂`, the distance from the degenerate set.
    pub margin: f64,
}

impl PhaseState {
    pub fn new(v: Field, p: &PotentialParams) -> Self {
        make_state(v, p)
    }

    pub fn mean_mu(&self) -> f64 {
        mean(&self.mu)
    }
}

pub fn make_state(v: Field, p: &PotentialParams) -> PhaseState {
    let mu = chemical_potential(&v, p);
    let energy_e = 0.5 * dot(&mu, &mu);
    let area_f = area_f(&v, p);
    let mean_v = mean(&v);
    let margin = mu.centered().l2_norm();
    PhaseState {
        v,
        mu,
        energy_e,
        area_f,
        mean_v,
        margin,
    }
}
