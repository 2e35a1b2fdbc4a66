//! Running rewards and the six welfare targets evaluated on trajectories.

use serde::{Deserialize, Serialize};

use crate::economy::{self, EconParams};
use crate::epi::{self, ControlSlice, EpiParams, EpiState, PolicyField, Trajectory};
use crate::error::{ModelError, Result};
use crate::grid::AgeGrid;

/// Per-capita utility `u(c, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySpec {
    /// `u0 + (c + eps_c)^(1 - sigma) / (1 - sigma) * (w0 + (1 - w0) theta)`.
    ShiftedCrra {
        u0: f64,
        eps_c: f64,
        sigma: f64,
        w0: f64,
    },
    /// `log(1 + c) + b theta`.
    Separable { b: f64 },
    /// `u0 + a c - b c^2 / 2`; increasing only for `c < a / b`.
    Quadratic { u0: f64, a: f64, b: f64 },
    /// Degenerate utility independent of the controls.
    Constant { u0: f64 },
}

impl UtilitySpec {
    pub fn validate(&self, c_max: f64) -> Result<()> {
        let ok = match *self {
            UtilitySpec::ShiftedCrra {
                u0,
                eps_c,
                sigma,
                w0,
            } => u0 >= 0.0 && eps_c > 0.0 && sigma > 0.0 && sigma < 1.0 && w0 > 0.0 && w0 <= 1.0,
            UtilitySpec::Separable { b } => b >= 0.0,
            UtilitySpec::Quadratic { u0, a, b } => {
                u0 >= 0.0 && a > 0.0 && b > 0.0 && u0 + a * c_max - 0.5 * b * c_max * c_max >= 0.0
            }
            UtilitySpec::Constant { u0 } => u0.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::config(format!(
                "utility {self:?} is not positive on [0, {c_max}] x [0,1]"
            )))
        }
    }

    pub fn eval(&self, c: f64, theta: f64) -> f64 {
        match *self {
            UtilitySpec::ShiftedCrra {
                u0,
                eps_c,
                sigma,
                w0,
            } => u0 + (c + eps_c).powf(1.0 - sigma) / (1.0 - sigma) * (w0 + (1.0 - w0) * theta),
            UtilitySpec::Separable { b } => c.ln_1p() + b * theta,
            UtilitySpec::Quadratic { u0, a, b } => u0 + a * c - 0.5 * b * c * c,
            UtilitySpec::Constant { u0 } => u0,
        }
    }

    /// Marginal utility of consumption.
    pub fn du_dc(&self, c: f64, theta: f64) -> f64 {
        match *self {
            UtilitySpec::ShiftedCrra {
                eps_c, sigma, w0, ..
            } => (c + eps_c).powf(-sigma) * (w0 + (1.0 - w0) * theta),
            UtilitySpec::Separable { .. } => 1.0 / (1.0 + c),
            UtilitySpec::Quadratic { a, b, .. } => a - b * c,
            UtilitySpec::Constant { .. } => 0.0,
        }
    }

    /// Maximizes `weight * u(c, theta) - price * c` over `c` in `[0, c_max]`.
    ///
    /// Returns the maximizer and whether the upper cap binds.
    pub fn best_consumption(&self, weight: f64, price: f64, theta: f64, c_max: f64) -> (f64, bool) {
        let unconstrained = if weight <= 0.0 {
            if price < 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else if price <= 0.0 {
            match *self {
                UtilitySpec::Constant { .. } if price == 0.0 => 0.0,
                // satiated at a / b even when consumption is free
                UtilitySpec::Quadratic { a, b, .. } => (a - price / weight) / b,
                _ => f64::INFINITY,
            }
        } else {
            match *self {
                UtilitySpec::ShiftedCrra {
                    eps_c, sigma, w0, ..
                } => (weight * (w0 + (1.0 - w0) * theta) / price).powf(1.0 / sigma) - eps_c,
                UtilitySpec::Separable { .. } => weight / price - 1.0,
                UtilitySpec::Quadratic { a, b, .. } => (a - price / weight) / b,
                UtilitySpec::Constant { .. } => 0.0,
            }
        };
        if unconstrained > c_max {
            (c_max, true)
        } else {
            (unconstrained.max(0.0), false)
        }
    }
}

/// Which welfare target is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EconTarget {
    J2,
    J3,
    J4,
    J5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum TargetSpec {
    /// Discounted utilitarian welfare (infinite horizon, truncated).
    J1,
    /// Discounted production flow (infinite horizon, truncated).
    J2,
    /// Final production capacity with everyone productive.
    J3,
    /// Final capital.
    J4,
    /// Discounted production flow on `[t0, T]`.
    J5,
    /// Virus deaths on `[t0, T]`.
    J6,
    /// `w_econ * J_econ - w_deaths * J6`.
    Composite {
        econ: EconTarget,
        w_econ: f64,
        w_deaths: f64,
    },
}

/// Direction in which the death count is optimized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathOrientation {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveParams {
    pub rho: f64,
    pub nu: f64,
    /// Truncation horizon (years after `t0`) for the infinite-horizon targets.
    pub t_num: Option<f64>,
    pub utility: UtilitySpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub deaths: DeathOrientation,
    #[serde(default)]
    pub j6_discounted: bool,
}

impl ObjectiveParams {
    pub fn validate(&self, c_max: f64) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(ModelError::config("objective.rho must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(ModelError::config("objective.nu must lie in [0,1]"));
        }
        if let Some(t) = self.t_num {
            if !(t > 0.0) {
                return Err(ModelError::config("objective.t_num must be > 0"));
            }
        }
        self.utility.validate(c_max)
    }

    /// Sign applied to J6 so that larger is always better for the optimizer.
    pub fn death_sign(&self) -> f64 {
        match self.deaths {
            DeathOrientation::Minimize => -1.0,
            DeathOrientation::Maximize => 1.0,
        }
    }
}

/// `U1 = int n^nu u(c, theta) da`.
pub fn u1(
    grid: &AgeGrid,
    state: &EpiState,
    c: &[f64],
    theta: &[f64],
    obj: &ObjectiveParams,
) -> f64 {
    let (s, i, r) = (state.s.values(), state.i.values(), state.r.values());
    grid.da()
        * (0..grid.len())
            .map(|j| {
                let n = (s[j] + i[j] + r[j]).max(0.0);
                n.powf(obj.nu) * obj.utility.eval(c[j], theta[j])
            })
            .sum::<f64>()
}

/// `U2 = F(K, L^theta)`.
pub fn u2(grid: &AgeGrid, state: &EpiState, capital: f64, theta: &[f64], econ: &EconParams) -> f64 {
    econ.production
        .output(capital, economy::labor_supply(grid, state, theta, econ))
}

/// `U3 = int mu_I(a, Xi) i da`, the virus death flow.
pub fn u3(grid: &AgeGrid, state: &EpiState, epi: &EpiParams) -> f64 {
    let xi = epi::critical_load(grid, state, epi);
    grid.integrate_product(&epi::mu_i_field(xi, epi), &state.i)
}

/// Instantaneous reward entering the Hamiltonian, oriented so that larger is better.
pub fn running_reward(
    grid: &AgeGrid,
    state: &EpiState,
    capital: f64,
    controls: ControlSlice<'_>,
    epi: &EpiParams,
    econ: &EconParams,
    obj: &ObjectiveParams,
) -> f64 {
    match obj.target {
        TargetSpec::J1 => u1(grid, state, controls.c, controls.theta, obj),
        TargetSpec::J2 | TargetSpec::J5 => u2(grid, state, capital, controls.theta, econ),
        TargetSpec::J3 | TargetSpec::J4 => 0.0,
        TargetSpec::J6 => obj.death_sign() * u3(grid, state, epi),
        TargetSpec::Composite {
            econ: e,
            w_econ,
            w_deaths,
        } => {
            let econ_part = match e {
                EconTarget::J2 | EconTarget::J5 => u2(grid, state, capital, controls.theta, econ),
                EconTarget::J3 | EconTarget::J4 => 0.0,
            };
            w_econ * econ_part - w_deaths * u3(grid, state, epi)
        }
    }
}

/// Result of evaluating a target on one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// The target value as defined (J6 counts deaths).
    pub value: f64,
    /// Value oriented for maximization.
    pub score: f64,
    pub feasible: bool,
    pub violation: f64,
    pub min_capital: f64,
    /// Bound on the neglected tail of an infinite-horizon target (0 otherwise).
    pub tail_bound: f64,
}

fn discounted_sum(
    traj: &Trajectory,
    rho: f64,
    horizon: Option<f64>,
    mut integrand: impl FnMut(usize) -> f64,
) -> (f64, f64) {
    let t0 = traj.time.t0();
    let dt = traj.time.dt();
    let mut total = 0.0;
    let mut sup = 0.0f64;
    for k in 0..traj.n_steps() {
        let elapsed = traj.time.time(k) - t0;
        if let Some(h) = horizon {
            if elapsed >= h - 1e-12 * h {
                break;
            }
        }
        let u = integrand(k);
        sup = sup.max(u.abs());
        total += (-rho * elapsed).exp() * u * dt;
    }
    (total, sup)
}

fn econ_value(
    which: EconTarget,
    grid: &AgeGrid,
    traj: &Trajectory,
    policy: &PolicyField,
    econ: &EconParams,
    obj: &ObjectiveParams,
) -> (f64, f64) {
    match which {
        EconTarget::J2 | EconTarget::J5 => {
            let horizon = if which == EconTarget::J2 {
                obj.t_num
            } else {
                None
            };
            let (v, sup) = discounted_sum(traj, obj.rho, horizon, |k| {
                u2(
                    grid,
                    &traj.states[k],
                    traj.capital[k],
                    policy.theta.row(k),
                    econ,
                )
            });
            let tail = if which == EconTarget::J2 {
                tail_bound(traj, obj.rho, horizon, sup)
            } else {
                0.0
            };
            (v, tail)
        }
        EconTarget::J3 => {
            let last = traj.final_state();
            let labor = grid.integrate_product(&last.total_density(), &econ.alpha);
            (econ.production.output(traj.final_capital(), labor), 0.0)
        }
        EconTarget::J4 => (traj.final_capital(), 0.0),
    }
}

fn tail_bound(traj: &Trajectory, rho: f64, horizon: Option<f64>, sup: f64) -> f64 {
    let span = traj.time.t_end() - traj.time.t0();
    let covered = horizon.map_or(span, |h| h.min(span));
    (-rho * covered).exp() * sup / rho
}

fn deaths_value(grid: &AgeGrid, traj: &Trajectory, epi: &EpiParams, obj: &ObjectiveParams) -> f64 {
    let rho = if obj.j6_discounted { obj.rho } else { 0.0 };
    discounted_sum(traj, rho, None, |k| u3(grid, &traj.states[k], epi)).0
}

/// Evaluates the configured target by left-endpoint discounted Riemann sums.
pub fn evaluate(
    grid: &AgeGrid,
    traj: &Trajectory,
    policy: &PolicyField,
    epi: &EpiParams,
    econ: &EconParams,
    obj: &ObjectiveParams,
) -> Evaluation {
    let (value, score, tail) = match obj.target {
        TargetSpec::J1 => {
            let (v, sup) = discounted_sum(traj, obj.rho, obj.t_num, |k| {
                u1(
                    grid,
                    &traj.states[k],
                    policy.c.row(k),
                    policy.theta.row(k),
                    obj,
                )
            });
            (v, v, tail_bound(traj, obj.rho, obj.t_num, sup))
        }
        TargetSpec::J2 | TargetSpec::J3 | TargetSpec::J4 | TargetSpec::J5 => {
            let which = match obj.target {
                TargetSpec::J2 => EconTarget::J2,
                TargetSpec::J3 => EconTarget::J3,
                TargetSpec::J4 => EconTarget::J4,
                _ => EconTarget::J5,
            };
            let (v, tail) = econ_value(which, grid, traj, policy, econ, obj);
            (v, v, tail)
        }
        TargetSpec::J6 => {
            let v = deaths_value(grid, traj, epi, obj);
            (v, obj.death_sign() * v, 0.0)
        }
        TargetSpec::Composite {
            econ: which,
            w_econ,
            w_deaths,
        } => {
            let (e, tail) = econ_value(which, grid, traj, policy, econ, obj);
            let d = deaths_value(grid, traj, epi, obj);
            let v = w_econ * e - w_deaths * d;
            (v, v, w_econ.abs() * tail)
        }
    };
    Evaluation {
        value,
        score,
        feasible: traj.feasible,
        violation: traj.violation,
        min_capital: traj.min_capital,
        tail_bound: tail,
    }
}
