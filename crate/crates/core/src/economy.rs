//! Labor aggregation, production, expenditure and capital accumulation.

use serde::{Deserialize, Serialize};

use crate::epi::EpiState;
use crate::error::{ModelError, Result};
use crate::grid::{AgeGrid, Field1D};

/// Aggregate production `Y = F(K, L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProductionSpec {
    /// `A_K K + A_L L`.
    Linear { a_k: f64, a_l: f64 },
    /// `A (omega K^s + (1 - omega) L^s)^(1/s)`.
    ///
    /// With `s < 0` the marginal product in `K` is bounded by `A omega^(1/s)`
    /// for every `L`. `0 < s < 1` is accepted but loses that bound.
    Ces { a: f64, omega: f64, sigma: f64 },
    /// `A K^omega L^(1 - omega)`; not globally Lipschitz in `K`.
    CobbDouglas { a: f64, omega: f64 },
}

impl ProductionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ProductionSpec::Linear { a_k, a_l } => {
                if !(a_k.is_finite() && a_l.is_finite() && a_k >= 0.0 && a_l >= 0.0) {
                    return Err(ModelError::config("linear production needs a_k, a_l >= 0"));
                }
            }
            ProductionSpec::Ces { a, omega, sigma } => {
                if !(a > 0.0 && omega > 0.0 && omega < 1.0) {
                    return Err(ModelError::config(
                        "ces production needs a > 0 and omega in (0,1)",
                    ));
                }
                if !(sigma < 1.0) || sigma == 0.0 || !sigma.is_finite() {
                    return Err(ModelError::config(
                        "ces production needs sigma < 1, sigma != 0",
                    ));
                }
            }
            ProductionSpec::CobbDouglas { a, omega } => {
                if !(a > 0.0 && omega > 0.0 && omega < 1.0) {
                    return Err(ModelError::config(
                        "cobb_douglas production needs a > 0 and omega in (0,1)",
                    ));
                }
            }
        }
        Ok(())
    }

    /// True when `F(., L)` has a Lipschitz constant bounded uniformly in `L`.
    pub fn is_uniformly_lipschitz(&self) -> bool {
        match *self {
            ProductionSpec::Linear { .. } => true,
            ProductionSpec::Ces { sigma, .. } => sigma < 0.0,
            ProductionSpec::CobbDouglas { .. } => false,
        }
    }

    /// Uniform bound on `|dF/dK|` when one exists.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match *self {
            ProductionSpec::Linear { a_k, .. } => Some(a_k),
            ProductionSpec::Ces { a, omega, sigma } if sigma < 0.0 => {
                Some(a * omega.powf(1.0 / sigma))
            }
            _ => None,
        }
    }

    pub fn output(&self, k: f64, l: f64) -> f64 {
        match *self {
            ProductionSpec::Linear { a_k, a_l } => a_k * k + a_l * l,
            ProductionSpec::Ces { a, omega, sigma } => {
                let k = k.max(0.0);
                let l = l.max(0.0);
                if sigma < 0.0 && (k == 0.0 || l == 0.0) {
                    return 0.0;
                }
                let inner = omega * k.powf(sigma) + (1.0 - omega) * l.powf(sigma);
                a * inner.powf(1.0 / sigma)
            }
            ProductionSpec::CobbDouglas { a, omega } => {
                a * k.max(0.0).powf(omega) * l.max(0.0).powf(1.0 - omega)
            }
        }
    }
}

/// Productivity multiplier `phi(theta)` for locked-down workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LockdownProductivitySpec {
    /// `theta^q`.
    Power { q: f64 },
    /// `(1 - l) + l theta`.
    Affine { l: f64 },
}

impl LockdownProductivitySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LockdownProductivitySpec::Power { q } if !(q > 0.0 && q.is_finite()) => {
                Err(ModelError::config("power productivity needs q > 0"))
            }
            LockdownProductivitySpec::Affine { l } if !(0.0..=1.0).contains(&l) => {
                Err(ModelError::config("affine productivity needs l in [0,1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            LockdownProductivitySpec::Power { q } => theta.max(0.0).powf(q),
            LockdownProductivitySpec::Affine { l } => (1.0 - l) + l * theta,
        }
    }
}

impl Default for LockdownProductivitySpec {
    fn default() -> Self {
        LockdownProductivitySpec::Power { q: 1.0 }
    }
}

/// Congestion cost `D(x)` of testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CongestionSpec {
    Linear { d1: f64 },
    ConcavePower { d1: f64, p: f64 },
}

impl CongestionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CongestionSpec::Linear { d1 } if !(d1 >= 0.0 && d1.is_finite()) => {
                Err(ModelError::config("linear congestion needs d1 >= 0"))
            }
            CongestionSpec::ConcavePower { d1, p } if !(d1 >= 0.0 && p > 0.0 && p <= 1.0) => Err(
                ModelError::config("concave_power congestion needs d1 >= 0, p in (0,1]"),
            ),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            CongestionSpec::Linear { d1 } => d1 * x,
            CongestionSpec::ConcavePower { d1, p } => d1 * x.max(0.0).powf(p),
        }
    }
}

/// Which testing level is charged by the congestion cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestingCostBasis {
    /// Cost grows with `eta` itself.
    #[default]
    Eta,
    /// Cost grows with the reduction `1 - eta`.
    Complement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconParams {
    /// Age productivity in efficiency units.
    pub alpha: Field1D,
    /// Age-specific relative testing cost.
    pub e: Field1D,
    pub delta: f64,
    pub production: ProductionSpec,
    pub phi: LockdownProductivitySpec,
    pub congestion: CongestionSpec,
    #[serde(default)]
    pub testing_cost_basis: TestingCostBasis,
}

impl EconParams {
    pub fn validate(&self, grid: &AgeGrid) -> Result<()> {
        for (name, f) in [("alpha", &self.alpha), ("e", &self.e)] {
            if f.len() != grid.len() {
                return Err(ModelError::config(format!(
                    "economy.{name} must have n_age entries"
                )));
            }
            if !f.is_finite() || f.min() < 0.0 {
                return Err(ModelError::config(format!(
                    "economy.{name} must be finite and >= 0"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(ModelError::config("economy.delta must be > 0"));
        }
        self.production.validate()?;
        self.phi.validate()?;
        self.congestion.validate()
    }
}

/// `L = int (s + r) alpha phi(theta) da`; infected do not work.
pub fn labor_supply(grid: &AgeGrid, state: &EpiState, theta: &[f64], econ: &EconParams) -> f64 {
    let s = state.s.values();
    let r = state.r.values();
    let alpha = econ.alpha.values();
    grid.da()
        * (0..grid.len())
            .map(|j| (s[j] + r[j]) * alpha[j] * econ.phi.eval(theta[j]))
            .sum::<f64>()
}

/// `C = int c (s + i + r) da`.
pub fn consumption_total(grid: &AgeGrid, state: &EpiState, c: &[f64]) -> f64 {
    let (s, i, r) = (state.s.values(), state.i.values(), state.r.values());
    grid.da()
        * (0..grid.len())
            .map(|j| c[j] * (s[j] + i[j] + r[j]))
            .sum::<f64>()
}

/// Argument of the congestion cost, `int eta i e da` (or `1 - eta` under the complement basis).
pub fn testing_load(grid: &AgeGrid, state: &EpiState, eta: &[f64], econ: &EconParams) -> f64 {
    let i = state.i.values();
    let e = econ.e.values();
    grid.da()
        * (0..grid.len())
            .map(|j| testing_level(econ.testing_cost_basis, eta[j]) * i[j] * e[j])
            .sum::<f64>()
}

pub(crate) fn testing_level(basis: TestingCostBasis, eta: f64) -> f64 {
    match basis {
        TestingCostBasis::Eta => eta,
        TestingCostBasis::Complement => 1.0 - eta,
    }
}

pub fn testing_cost(grid: &AgeGrid, state: &EpiState, eta: &[f64], econ: &EconParams) -> f64 {
    econ.congestion.eval(testing_load(grid, state, eta, econ))
}

/// One explicit Euler step of the capital accumulation law.
pub fn capital_step(
    k: f64,
    labor: f64,
    consumption: f64,
    testing: f64,
    econ: &EconParams,
    dt: f64,
    time: f64,
) -> Result<f64> {
    let next = k + dt * (econ.production.output(k, labor) - consumption - econ.delta * k - testing);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(ModelError::NonFiniteState {
            what: "capital",
            time,
        })
    }
}
