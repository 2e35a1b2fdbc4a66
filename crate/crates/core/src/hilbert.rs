//! The weighted state space: survival weights, weighted inner products, the
//! transport generator and its adjoint, cone and halfspace membership.
//!
//! The first and third components are measured in `L^2` weighted by
//! `1 / pi_S^2` and `1 / pi_R^2`; the infected component carries no weight.
//! `apply_a` uses upwind differences and `apply_a_star` the mirrored
//! downwind stencil, so the two are adjoint up to `O(da)` terms coming from
//! the variation of the weights.

use serde::{Deserialize, Serialize};

use crate::epi::{EpiParams, EpiState};
use crate::grid::{AgeGrid, Field1D};

/// Default floor on the survival weights.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-8;

/// A point of the discretized state space (or of its dual).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub h1: Field1D,
    pub h2: Field1D,
    pub h3: Field1D,
}

impl Triple {
    pub fn new(h1: Field1D, h2: Field1D, h3: Field1D) -> Self {
        Self { h1, h2, h3 }
    }

    pub fn zeros(grid: &AgeGrid) -> Self {
        Self::new(grid.zeros(), grid.zeros(), grid.zeros())
    }

    pub fn constant(grid: &AgeGrid, v: f64) -> Self {
        Self::new(grid.constant(v), grid.constant(v), grid.constant(v))
    }

    pub fn from_state(state: &EpiState) -> Self {
        Self::new(state.s.clone(), state.i.clone(), state.r.clone())
    }

    pub fn components(&self) -> [&Field1D; 3] {
        [&self.h1, &self.h2, &self.h3]
    }

    pub fn map(&self, f: impl Fn(&Field1D) -> Field1D) -> Triple {
        Triple::new(f(&self.h1), f(&self.h2), f(&self.h3))
    }

    pub fn zip(&self, other: &Triple, f: impl Fn(&Field1D, &Field1D) -> Field1D) -> Triple {
        Triple::new(
            f(&self.h1, &other.h1),
            f(&self.h2, &other.h2),
            f(&self.h3, &other.h3),
        )
    }

    pub fn scale(&self, k: f64) -> Triple {
        self.map(|f| f.scale(k))
    }

    pub fn add(&self, other: &Triple) -> Triple {
        self.zip(other, Field1D::add)
    }

    pub fn sub(&self, other: &Triple) -> Triple {
        self.zip(other, Field1D::sub)
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|f| f.is_finite())
    }
}

/// Survival probabilities `pi_S`, `pi_R` on the cell centres, floored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalWeights {
    pub pi_s: Field1D,
    pub pi_r: Field1D,
    pub floor: f64,
}

fn survival(grid: &AgeGrid, mu: &Field1D, floor: f64) -> Field1D {
    let da = grid.da();
    let mut cumulative = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &m in mu.values() {
        // midpoint cumulative hazard up to the cell centre
        let at_centre = cumulative + 0.5 * da * m;
        out.push((-at_centre).exp().max(floor));
        cumulative += da * m;
    }
    Field1D::new(out)
}

impl SurvivalWeights {
    pub fn new(grid: &AgeGrid, mu_s: &Field1D, mu_r: &Field1D, floor: f64) -> Self {
        Self {
            pi_s: survival(grid, mu_s, floor),
            pi_r: survival(grid, mu_r, floor),
            floor,
        }
    }

    pub fn from_params(grid: &AgeGrid, epi: &EpiParams) -> Self {
        Self::new(grid, &epi.mu_s, &epi.mu_r, DEFAULT_WEIGHT_FLOOR)
    }

    /// Unit weights (no mortality).
    pub fn unit(grid: &AgeGrid) -> Self {
        Self {
            pi_s: grid.constant(1.0),
            pi_r: grid.constant(1.0),
            floor: DEFAULT_WEIGHT_FLOOR,
        }
    }

    pub(crate) fn inv_sq_s(&self, j: usize) -> f64 {
        let p = self.pi_s.get(j);
        1.0 / (p * p)
    }

    pub(crate) fn inv_sq_r(&self, j: usize) -> f64 {
        let p = self.pi_r.get(j);
        1.0 / (p * p)
    }
}

/// Costate `(p1, p2, p3, Q)` paired with `(h, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostateField {
    pub p: Triple,
    pub q: f64,
}

impl CostateField {
    pub fn new(p: Triple, q: f64) -> Self {
        Self { p, q }
    }

    pub fn zeros(grid: &AgeGrid) -> Self {
        Self::new(Triple::zeros(grid), 0.0)
    }

    /// Boundary values whose vanishing defines the adjoint domain:
    /// `p1/pi_S(a_max)`, `p2(a_max)`, `p3/pi_R(a_max)`, `p1(0)` (last / first cells).
    pub fn boundary_values(&self, w: &SurvivalWeights) -> [f64; 4] {
        let last = self.p.h1.len() - 1;
        [
            self.p.h1.get(last) / w.pi_s.get(last),
            self.p.h2.get(last),
            self.p.h3.get(last) / w.pi_r.get(last),
            self.p.h1.get(0),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.q.is_finite()
    }
}

/// `<h, g>_H`, midpoint quadrature of each weighted `L^2` term.
pub fn inner_h(grid: &AgeGrid, h: &Triple, g: &Triple, w: &SurvivalWeights) -> f64 {
    let mut acc = 0.0;
    for j in 0..grid.len() {
        acc += h.h1.get(j) * g.h1.get(j) * w.inv_sq_s(j)
            + h.h2.get(j) * g.h2.get(j)
            + h.h3.get(j) * g.h3.get(j) * w.inv_sq_r(j);
    }
    grid.da() * acc
}

pub fn norm_h(grid: &AgeGrid, h: &Triple, w: &SurvivalWeights) -> f64 {
    inner_h(grid, h, h, w).max(0.0).sqrt()
}

/// Upwind image of the transport generator, with the birth boundary folded into the first cell.
pub fn apply_a(grid: &AgeGrid, h: &Triple, epi: &EpiParams) -> Triple {
    let n = grid.len();
    let da = grid.da();
    let total = h.h1.add(&h.h2).add(&h.h3);
    let inflow = grid.integrate_product(&epi.beta, &total);
    let upwind = |f: &Field1D, boundary: f64, j: usize| {
        let prev = if j == 0 { boundary } else { f.get(j - 1) };
        (f.get(j) - prev) / da
    };
    let mut a1 = Vec::with_capacity(n);
    let mut a2 = Vec::with_capacity(n);
    let mut a3 = Vec::with_capacity(n);
    for j in 0..n {
        let gamma = epi.gamma.get(j);
        a1.push(-upwind(&h.h1, inflow, j) - epi.mu_s.get(j) * h.h1.get(j));
        a2.push(-upwind(&h.h2, 0.0, j) - gamma * h.h2.get(j));
        a3.push(gamma * h.h2.get(j) - upwind(&h.h3, 0.0, j) - epi.mu_r.get(j) * h.h3.get(j));
    }
    Triple::new(Field1D::new(a1), Field1D::new(a2), Field1D::new(a3))
}

/// Downwind image of the adjoint generator; the ghost value past `a_max` is zero.
pub fn apply_a_star(grid: &AgeGrid, p: &Triple, epi: &EpiParams, w: &SurvivalWeights) -> Triple {
    let n = grid.len();
    let da = grid.da();
    let downwind = |f: &Field1D, j: usize| {
        let next = if j + 1 < n { f.get(j + 1) } else { 0.0 };
        (next - f.get(j)) / da
    };
    let mut b1 = Vec::with_capacity(n);
    let mut b2 = Vec::with_capacity(n);
    let mut b3 = Vec::with_capacity(n);
    for j in 0..n {
        let gamma = epi.gamma.get(j);
        b1.push(downwind(&p.h1, j) + epi.mu_s.get(j) * p.h1.get(j));
        b2.push(downwind(&p.h2, j) - gamma * p.h2.get(j) + gamma * w.inv_sq_r(j) * p.h3.get(j));
        b3.push(downwind(&p.h3, j) + epi.mu_r.get(j) * p.h3.get(j));
    }
    Triple::new(Field1D::new(b1), Field1D::new(b2), Field1D::new(b3))
}

/// Unweighted `L^2` norm of the negative parts; zero iff `h` lies in the cone.
pub fn cone_distance(grid: &AgeGrid, h: &Triple) -> f64 {
    let sq: f64 = h
        .components()
        .iter()
        .flat_map(|f| f.values().iter())
        .map(|&v| {
            let neg = (-v).max(0.0);
            neg * neg
        })
        .sum();
    (grid.da() * sq).sqrt()
}

/// `<h, 1>_H`; nonnegative on the enlarged halfspace, positive in its interior.
pub fn halfspace_margin(grid: &AgeGrid, h: &Triple, w: &SurvivalWeights) -> f64 {
    inner_h(grid, h, &Triple::constant(grid, 1.0), w)
}
