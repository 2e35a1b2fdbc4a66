//! Current-value Hamiltonian, its maximization over controls and the
//! verification diagnostics built on it.
//!
//! `H_CV = H0 + H1_CV`: `H0` holds the control-free terms (transport,
//! depreciation, infected mortality), `H1_CV` everything that moves with
//! `(c, theta, eta)` plus the running reward of the configured target.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::economy::{self, TestingCostBasis};
use crate::epi::{self, ControlSlice, Controls, EpiState, PolicyField, Trajectory};
use crate::error::{ModelError, Result};
use crate::grid::{AgeGrid, Field1D, TimeGrid};
use crate::hilbert::{apply_a_star, inner_h, CostateField, SurvivalWeights, Triple};
use crate::objectives::{self, EconTarget, TargetSpec};
use crate::scenario::Scenario;

/// Control-free part: `<h, A* p>_H - delta K Q - <mu_I(Xi) h2, p2>`.
pub fn h0(
    sc: &Scenario,
    w: &SurvivalWeights,
    state: &EpiState,
    capital: f64,
    costate: &CostateField,
) -> f64 {
    let grid = &sc.grid;
    let h = Triple::from_state(state);
    let transport = inner_h(grid, &h, &apply_a_star(grid, &costate.p, &sc.epi, w), w);
    let xi = epi::critical_load(grid, state, &sc.epi);
    let mu_i = epi::mu_i_field(xi, &sc.epi);
    let mortality = grid.da()
        * (0..grid.len())
            .map(|j| mu_i.get(j) * state.i.get(j) * costate.p.h2.get(j))
            .sum::<f64>();
    transport - sc.econ.delta * capital * costate.q - mortality
}

/// `H1_CV` split into its total and the running-reward share of it.
fn h1_parts(
    sc: &Scenario,
    w: &SurvivalWeights,
    state: &EpiState,
    capital: f64,
    costate: &CostateField,
    z: ControlSlice<'_>,
) -> Result<(f64, f64)> {
    let grid = &sc.grid;
    let lambda = epi::force_of_infection(grid, state, z.theta, z.eta, &sc.epi)?;
    let p = &costate.p;
    let transmission = grid.da()
        * (0..grid.len())
            .map(|j| {
                let flow = lambda.get(j) * state.s.get(j);
                flow * (p.h2.get(j) - p.h1.get(j) * w.inv_sq_s(j))
            })
            .sum::<f64>();
    let labor = economy::labor_supply(grid, state, z.theta, &sc.econ);
    let output = sc.econ.production.output(capital, labor);
    let consumption = economy::consumption_total(grid, state, z.c);
    let testing = economy::testing_cost(grid, state, z.eta, &sc.econ);
    let reward = objectives::running_reward(grid, state, capital, z, &sc.epi, &sc.econ, &sc.obj);
    let total = transmission + (output - consumption - testing) * costate.q + reward;
    Ok((total, reward))
}

/// Control-dependent part of the Hamiltonian, including the running reward.
pub fn h1_cv(
    sc: &Scenario,
    w: &SurvivalWeights,
    state: &EpiState,
    capital: f64,
    costate: &CostateField,
    z: ControlSlice<'_>,
) -> Result<f64> {
    h1_parts(sc, w, state, capital, costate, z).map(|(total, _)| total)
}

/// `<(h,K), A~*(p,Q)> + <B~^z(h,K), (p,Q)>`: the time derivative of a test
/// function along the dynamics, before discounting.
pub fn generator_pairing(
    sc: &Scenario,
    w: &SurvivalWeights,
    state: &EpiState,
    capital: f64,
    costate: &CostateField,
    z: ControlSlice<'_>,
) -> Result<f64> {
    let (total, reward) = h1_parts(sc, w, state, capital, costate, z)?;
    Ok(h0(sc, w, state, capital, costate) + total - reward)
}

/// Finite search set for the maximization over controls.
///
/// `theta` and `eta` are constant on each of `age_blocks` contiguous age
/// blocks and take values in the level grids; `c` is optimized per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlLattice {
    pub age_blocks: usize,
    pub theta_levels: Vec<f64>,
    pub eta_levels: Vec<f64>,
    #[serde(default = "default_lattice_iters")]
    pub max_iters: usize,
}

fn default_lattice_iters() -> usize {
    50
}

impl ControlLattice {
    /// `levels` evenly spaced values in `[0, 1]` for both controls.
    pub fn uniform(age_blocks: usize, levels: usize) -> Self {
        let grid: Vec<f64> = (0..levels)
            .map(|l| l as f64 / (levels.max(2) - 1) as f64)
            .collect();
        Self {
            age_blocks,
            theta_levels: grid.clone(),
            eta_levels: grid,
            max_iters: default_lattice_iters(),
        }
    }

    pub fn validate(&self, grid: &AgeGrid) -> Result<()> {
        if self.age_blocks == 0 || self.age_blocks > grid.len() {
            return Err(ModelError::config(format!(
                "lattice.age_blocks must lie in 1..={}",
                grid.len()
            )));
        }
        for (name, levels) in [
            ("theta_levels", &self.theta_levels),
            ("eta_levels", &self.eta_levels),
        ] {
            if levels.is_empty() || levels.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ModelError::config(format!(
                    "lattice.{name} must be a nonempty list of values in [0,1]"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(ModelError::config("lattice.max_iters must be > 0"));
        }
        Ok(())
    }

    pub fn blocks(&self, n: usize) -> Vec<Range<usize>> {
        block_ranges(n, self.age_blocks)
    }
}

/// Splits `0..n` into `parts` contiguous ranges whose sizes differ by at most one.
pub fn block_ranges(n: usize, parts: usize) -> Vec<Range<usize>> {
    (0..parts)
        .map(|b| (b * n / parts)..((b + 1) * n / parts))
        .collect()
}

/// Outcome of `maximize_h1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Max {
    /// `H1_CV` at the returned controls.
    pub value: f64,
    pub controls: Controls,
    /// Some cell wanted more consumption than `c_max`.
    pub cap_binds: bool,
    pub converged: bool,
    pub sweeps: usize,
}

/// `H0`, `H1` and their sum at a state, for given or maximizing controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianEval {
    pub h0: f64,
    pub h1: f64,
    pub total: f64,
    pub argmax_controls: Option<Controls>,
}

pub fn evaluate_hamiltonian(
    sc: &Scenario,
    w: &SurvivalWeights,
    state: &EpiState,
    capital: f64,
    costate: &CostateField,
    z: Option<ControlSlice<'_>>,
    lattice: &ControlLattice,
) -> Result<HamiltonianEval> {
    let h0 = h0(sc, w, state, capital, costate);
    let (h1, argmax_controls) = match z {
        Some(z) => (h1_cv(sc, w, state, capital, costate, z)?, None),
        None => {
            let best = maximize_h1(sc, w, state, capital, costate, lattice, None)?;
            (best.value, Some(best.controls))
        }
    };
    Ok(HamiltonianEval {
        h0,
        h1,
        total: h0 + h1,
        argmax_controls,
    })
}

/// How the running reward depends on the controls.
struct RewardShape {
    /// Coefficient of `int n^nu u(c, theta)`.
    utility: f64,
    /// Coefficient of `F(K, L^theta)`.
    output: f64,
}

fn reward_shape(target: &TargetSpec) -> RewardShape {
    let (utility, output) = match *target {
        TargetSpec::J1 => (1.0, 0.0),
        TargetSpec::J2 | TargetSpec::J5 => (0.0, 1.0),
        TargetSpec::J3 | TargetSpec::J4 | TargetSpec::J6 => (0.0, 0.0),
        TargetSpec::Composite { econ, w_econ, .. } => match econ {
            EconTarget::J2 | EconTarget::J5 => (0.0, w_econ),
            EconTarget::J3 | EconTarget::J4 => (0.0, 0.0),
        },
    };
    RewardShape { utility, output }
}

/// Incremental evaluator of `H1_CV` under block moves.
///
/// The transmission term is `da^2 / N * x^T M y` with
/// `x = theta * s * (p2 - p1 / pi_S^2)` and `y = theta * eta * i`; keeping
/// `G = M y` and `R = M^T x` makes a block move cost `O(|block|^2)`.
struct Search<'a> {
    sc: &'a Scenario,
    capital: f64,
    q: f64,
    output_weight: f64,
    basis: TestingCostBasis,
    scale: f64,
    wt: Vec<f64>,
    infected: Vec<f64>,
    labor_w: Vec<f64>,
    test_w: Vec<f64>,
    density: Vec<f64>,
    util_w: Vec<f64>,
    theta: Vec<f64>,
    eta: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    g: Vec<f64>,
    r: Vec<f64>,
    labor: f64,
    load: f64,
}

impl<'a> Search<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        sc: &'a Scenario,
        w: &SurvivalWeights,
        state: &EpiState,
        capital: f64,
        costate: &CostateField,
        theta: Vec<f64>,
        eta: Vec<f64>,
    ) -> Result<Self> {
        let grid = &sc.grid;
        let n = grid.len();
        let da = grid.da();
        let population = state.population(grid);
        if population <= sc.epi.n_floor || !(population > 0.0) {
            return Err(ModelError::ExtinctPopulation {
                time: state.time,
                population,
                floor: sc.epi.n_floor,
            });
        }
        let shape = reward_shape(&sc.obj.target);
        let p = &costate.p;
        let wt: Vec<f64> = (0..n)
            .map(|j| state.s.get(j) * (p.h2.get(j) - p.h1.get(j) * w.inv_sq_s(j)))
            .collect();
        let infected = state.i.values().to_vec();
        let labor_w: Vec<f64> = (0..n)
            .map(|j| (state.s.get(j) + state.r.get(j)) * sc.econ.alpha.get(j))
            .collect();
        let test_w: Vec<f64> = (0..n).map(|j| state.i.get(j) * sc.econ.e.get(j)).collect();
        let density: Vec<f64> = state.total_density().into_values();
        let util_w: Vec<f64> = density
            .iter()
            .map(|&d| shape.utility * d.max(0.0).powf(sc.obj.nu))
            .collect();
        let x: Vec<f64> = (0..n).map(|j| theta[j] * wt[j]).collect();
        let y: Vec<f64> = (0..n).map(|j| (theta[j] * eta[j]) * infected[j]).collect();
        let kernel = &sc.epi.kernel;
        let g: Vec<f64> = (0..n)
            .map(|j| kernel.row(j).iter().zip(&y).map(|(m, v)| m * v).sum())
            .collect();
        let mut r = vec![0.0; n];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (rk, m) in r.iter_mut().zip(kernel.row(j)) {
                    *rk += m * xj;
                }
            }
        }
        let phi = &sc.econ.phi;
        let basis = sc.econ.testing_cost_basis;
        let labor = da * (0..n).map(|j| labor_w[j] * phi.eval(theta[j])).sum::<f64>();
        let load = da
            * (0..n)
                .map(|j| test_w[j] * economy::testing_level(basis, eta[j]))
                .sum::<f64>();
        Ok(Self {
            sc,
            capital,
            q: costate.q,
            output_weight: costate.q + shape.output,
            basis,
            scale: da * da / population,
            wt,
            infected,
            labor_w,
            test_w,
            density,
            util_w,
            theta,
            eta,
            x,
            y,
            g,
            r,
            labor,
            load,
        })
    }

    /// Best consumption in cell `j` under lockdown level `theta` and its contribution.
    fn consumption(&self, j: usize, theta: f64) -> (f64, f64, bool) {
        let price = self.density[j] * self.q;
        let (c, binds) =
            self.sc
                .obj
                .utility
                .best_consumption(self.util_w[j], price, theta, self.sc.c_max);
        let utility = if self.util_w[j] != 0.0 {
            self.util_w[j] * self.sc.obj.utility.eval(c, theta)
        } else {
            0.0
        };
        (c, self.sc.grid.da() * (utility - c * price), binds)
    }

    fn block_consumption(&self, block: &Range<usize>, theta: impl Fn(usize) -> f64) -> f64 {
        block.clone().map(|j| self.consumption(j, theta(j)).1).sum()
    }

    fn block_labor(&self, block: &Range<usize>, theta: impl Fn(usize) -> f64) -> f64 {
        let phi = &self.sc.econ.phi;
        self.sc.grid.da()
            * block
                .clone()
                .map(|j| self.labor_w[j] * phi.eval(theta(j)))
                .sum::<f64>()
    }

    fn block_load(&self, block: &Range<usize>, eta: impl Fn(usize) -> f64) -> f64 {
        self.sc.grid.da()
            * block
                .clone()
                .map(|j| self.test_w[j] * economy::testing_level(self.basis, eta(j)))
                .sum::<f64>()
    }

    /// Tries every lattice level on one block; applies the best one if it strictly improves.
    fn improve_block(&mut self, block: &Range<usize>, lattice: &ControlLattice) -> bool {
        let econ = &self.sc.econ;
        let kernel = &self.sc.epi.kernel;
        let len = block.len();
        let cons_old = self.block_consumption(block, |j| self.theta[j]);
        let labor_old = self.block_labor(block, |j| self.theta[j]);
        let load_old = self.block_load(block, |j| self.eta[j]);
        let output_old = econ.production.output(self.capital, self.labor);
        let cost_old = econ.congestion.eval(self.load);

        let mut dx = vec![0.0; len];
        let mut dy = vec![0.0; len];
        let mut best: Option<(f64, usize, usize)> = None;
        for (ti, &th) in lattice.theta_levels.iter().enumerate() {
            let cons = self.block_consumption(block, |_| th) - cons_old;
            let d_labor = self.block_labor(block, |_| th) - labor_old;
            let d_output = econ.production.output(self.capital, self.labor + d_labor) - output_old;
            for (b, j) in block.clone().enumerate() {
                dx[b] = th * self.wt[j] - self.x[j];
            }
            let lin_x: f64 = block
                .clone()
                .enumerate()
                .map(|(b, j)| dx[b] * self.g[j])
                .sum();
            for (ei, &et) in lattice.eta_levels.iter().enumerate() {
                let d_load = self.block_load(block, |_| et) - load_old;
                let d_cost = econ.congestion.eval(self.load + d_load) - cost_old;
                let level = th * et;
                for (b, j) in block.clone().enumerate() {
                    dy[b] = level * self.infected[j] - self.y[j];
                }
                let mut bilinear = lin_x;
                for (b, k) in block.clone().enumerate() {
                    bilinear += self.r[k] * dy[b];
                }
                for (a, j) in block.clone().enumerate() {
                    if dx[a] == 0.0 {
                        continue;
                    }
                    let row = &kernel.row(j)[block.clone()];
                    bilinear += dx[a] * row.iter().zip(&dy).map(|(m, v)| m * v).sum::<f64>();
                }
                let delta =
                    self.scale * bilinear + self.output_weight * d_output - self.q * d_cost + cons;
                if best.is_none_or(|(v, _, _)| delta > v) {
                    best = Some((delta, ti, ei));
                }
            }
        }
        match best {
            Some((delta, ti, ei)) if delta > 0.0 => {
                self.apply(
                    block,
                    lattice.theta_levels[ti],
                    lattice.eta_levels[ei],
                    labor_old,
                    load_old,
                );
                true
            }
            _ => false,
        }
    }

    fn apply(&mut self, block: &Range<usize>, th: f64, et: f64, labor_old: f64, load_old: f64) {
        let kernel = &self.sc.epi.kernel;
        let n = self.x.len();
        let d_labor = self.block_labor(block, |_| th) - labor_old;
        let d_load = self.block_load(block, |_| et) - load_old;
        let level = th * et;
        for j in block.clone() {
            let dx = th * self.wt[j] - self.x[j];
            let dy = level * self.infected[j] - self.y[j];
            if dx != 0.0 {
                for (rk, m) in self.r.iter_mut().zip(kernel.row(j)) {
                    *rk += m * dx;
                }
            }
            if dy != 0.0 {
                for i in 0..n {
                    self.g[i] += kernel.get(i, j) * dy;
                }
            }
            self.theta[j] = th;
            self.eta[j] = et;
            self.x[j] = th * self.wt[j];
            self.y[j] = level * self.infected[j];
        }
        self.labor += d_labor;
        self.load += d_load;
    }

    fn controls(&self) -> (Controls, bool) {
        let mut cap_binds = false;
        let c = (0..self.theta.len())
            .map(|j| {
                let (c, _, binds) = self.consumption(j, self.theta[j]);
                cap_binds |= binds;
                c
            })
            .collect();
        (
            Controls {
                c,
                theta: self.theta.clone(),
                eta: self.eta.clone(),
            },
            cap_binds,
        )
    }
}

/// Maximizes `H1_CV` over the control lattice.
///
/// `c` is set to its exact per-cell maximizer for the current `theta`; the
/// `(theta, eta)` blocks are swept in order, each trying every level pair and
/// moving only on strict improvement (lowest index wins ties). Without a seed
/// the sweep starts from the first level of each grid; with one it starts
/// from the seed's `theta`, `eta`.
pub fn maximize_h1(
    sc: &Scenario,
    w: &SurvivalWeights,
    state: &EpiState,
    capital: f64,
    costate: &CostateField,
    lattice: &ControlLattice,
    seed: Option<ControlSlice<'_>>,
) -> Result<H1Max> {
    let n = sc.grid.len();
    let (theta, eta) = match seed {
        Some(z) => (z.theta.to_vec(), z.eta.to_vec()),
        None => (
            vec![lattice.theta_levels[0]; n],
            vec![lattice.eta_levels[0]; n],
        ),
    };
    let mut search = Search::new(sc, w, state, capital, costate, theta, eta)?;
    let blocks = lattice.blocks(n);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < lattice.max_iters {
        sweeps += 1;
        let mut changed = false;
        for block in &blocks {
            changed |= search.improve_block(block, lattice);
        }
        if !changed {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "H1 block ascent did not settle within {} sweeps at t = {}",
            lattice.max_iters,
            state.time
        );
    }
    let (controls, cap_binds) = search.controls();
    let value = h1_cv(sc, w, state, capital, costate, controls.as_slice())?;
    Ok(H1Max {
        value,
        controls,
        cap_binds,
        converged,
        sweeps,
    })
}

/// A smooth functional `v(h, K)` with its gradient, used to probe the HJB machinery.
pub trait TestValueFunction: Send + Sync {
    fn value(&self, grid: &AgeGrid, w: &SurvivalWeights, h: &Triple, capital: f64) -> f64;

    /// `(D_h v, D_K v)`, with `D_h v` represented in the weighted inner product.
    fn gradient(
        &self,
        grid: &AgeGrid,
        w: &SurvivalWeights,
        h: &Triple,
        capital: f64,
    ) -> CostateField;
}

/// The built-in families of test value functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValueFunction {
    Zero,
    /// `<h, w>_H + q K`.
    Linear {
        w: Triple,
        q: f64,
    },
    /// `1/2 <h, omega h>_H + 1/2 q K^2`, with `omega` acting componentwise.
    Quadratic {
        omega: Triple,
        q: f64,
    },
}

impl TestValueFunction for ValueFunction {
    fn value(&self, grid: &AgeGrid, w: &SurvivalWeights, h: &Triple, capital: f64) -> f64 {
        match self {
            ValueFunction::Zero => 0.0,
            ValueFunction::Linear { w: lin, q } => inner_h(grid, h, lin, w) + q * capital,
            ValueFunction::Quadratic { omega, q } => {
                let wh = h.zip(omega, Field1D::mul);
                0.5 * inner_h(grid, h, &wh, w) + 0.5 * q * capital * capital
            }
        }
    }

    fn gradient(
        &self,
        grid: &AgeGrid,
        _w: &SurvivalWeights,
        h: &Triple,
        capital: f64,
    ) -> CostateField {
        match self {
            ValueFunction::Zero => CostateField::zeros(grid),
            ValueFunction::Linear { w: lin, q } => CostateField::new(lin.clone(), *q),
            ValueFunction::Quadratic { omega, q } => {
                CostateField::new(h.zip(omega, Field1D::mul), q * capital)
            }
        }
    }
}

/// `C^2` bump equal to 1 at the centre of `(lo, hi)` and 0 outside.
pub fn smooth_bump(a: f64, lo: f64, hi: f64) -> f64 {
    if a <= lo || a >= hi {
        0.0
    } else {
        let x = (a - lo) / (hi - lo);
        64.0 * (x * (1.0 - x)).powi(3)
    }
}

fn elapsed_discount(time: &TimeGrid, k: usize, rho: f64) -> f64 {
    (-rho * (time.time(k) - time.t0())).exp()
}

fn check_lengths(traj: &Trajectory, policy: &PolicyField) -> Result<()> {
    if policy.n_time() < traj.n_steps() {
        return Err(ModelError::config(format!(
            "policy has {} time rows, the trajectory needs {}",
            policy.n_time(),
            traj.n_steps()
        )));
    }
    Ok(())
}

/// Terms of the discrete chain rule for `t -> e^{-rho t} v(h(t), K(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleReport {
    pub v0: f64,
    /// `e^{-rho T} v(h(T), K(T))`.
    pub discounted_terminal: f64,
    /// `sum_k e^{-rho t_k} [rho v - <x, A~* grad v> - <B~^z x, grad v>] dt`.
    pub integral: f64,
    pub residual: f64,
}

/// `v(x0) - e^{-rho T} v(x_T) - sum_k e^{-rho t_k} [rho v - <x, A~* grad v> - <B~^z(x), grad v>] dt`.
///
/// Vanishes as `dt -> 0` for any smooth `v` whose gradient lies in the adjoint domain.
pub fn chain_rule_residual(
    sc: &Scenario,
    v: &dyn TestValueFunction,
    policy: &PolicyField,
    traj: &Trajectory,
    rho: f64,
) -> Result<ChainRuleReport> {
    check_lengths(traj, policy)?;
    let grid = &sc.grid;
    let w = sc.weights();
    let dt = traj.time.dt();
    let terms: Vec<f64> = (0..traj.n_steps())
        .into_par_iter()
        .map(|k| {
            let state = &traj.states[k];
            let h = Triple::from_state(state);
            let capital = traj.capital[k];
            let grad = v.gradient(grid, &w, &h, capital);
            let value = v.value(grid, &w, &h, capital);
            let pairing = generator_pairing(sc, &w, state, capital, &grad, policy.slice(k))?;
            Ok(elapsed_discount(&traj.time, k, rho) * (rho * value - pairing) * dt)
        })
        .collect::<Result<_>>()?;
    let integral: f64 = terms.iter().sum();
    let v0 = v.value(
        grid,
        &w,
        &Triple::from_state(&traj.states[0]),
        traj.capital[0],
    );
    let last = traj.n_steps();
    let discounted_terminal = elapsed_discount(&traj.time, last, rho)
        * v.value(
            grid,
            &w,
            &Triple::from_state(&traj.states[last]),
            traj.capital[last],
        );
    Ok(ChainRuleReport {
        v0,
        discounted_terminal,
        integral,
        residual: v0 - discounted_terminal - integral,
    })
}

/// Per-step Hamiltonian gaps of a policy along its trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapProfile {
    pub times: Vec<f64>,
    /// `sup_z H_CV - H_CV(z_hat(t_k))` for `k < n_steps`.
    pub gaps: Vec<f64>,
    /// `sum_k e^{-rho t_k} gap_k dt`.
    pub integrated: f64,
    pub cap_binds: bool,
    pub converged: bool,
}

/// Estimates `sup_z H1_CV` at one node: the better of an unseeded lattice
/// ascent, an ascent seeded at `z`, and `z` itself.
fn node_gap(
    sc: &Scenario,
    w: &SurvivalWeights,
    state: &EpiState,
    capital: f64,
    costate: &CostateField,
    z: ControlSlice<'_>,
    lattice: &ControlLattice,
) -> Result<(f64, bool, bool)> {
    let own = h1_cv(sc, w, state, capital, costate, z)?;
    let fresh = maximize_h1(sc, w, state, capital, costate, lattice, None)?;
    let seeded = maximize_h1(sc, w, state, capital, costate, lattice, Some(z))?;
    let sup = own.max(fresh.value).max(seeded.value);
    Ok((
        sup - own,
        fresh.cap_binds || seeded.cap_binds,
        fresh.converged && seeded.converged,
    ))
}

pub fn hamiltonian_gap_profile(
    sc: &Scenario,
    v: &dyn TestValueFunction,
    policy: &PolicyField,
    traj: &Trajectory,
    lattice: &ControlLattice,
    rho: f64,
) -> Result<GapProfile> {
    check_lengths(traj, policy)?;
    lattice.validate(&sc.grid)?;
    let grid = &sc.grid;
    let w = sc.weights();
    let results: Vec<(f64, bool, bool)> = (0..traj.n_steps())
        .into_par_iter()
        .map(|k| {
            let state = &traj.states[k];
            let capital = traj.capital[k];
            let grad = v.gradient(grid, &w, &Triple::from_state(state), capital);
            node_gap(sc, &w, state, capital, &grad, policy.slice(k), lattice)
        })
        .collect::<Result<_>>()?;
    let dt = traj.time.dt();
    let gaps: Vec<f64> = results.iter().map(|r| r.0).collect();
    let integrated = gaps
        .iter()
        .enumerate()
        .map(|(k, g)| elapsed_discount(&traj.time, k, rho) * g * dt)
        .sum();
    Ok(GapProfile {
        times: (0..gaps.len()).map(|k| traj.time.time(k)).collect(),
        gaps,
        integrated,
        cap_binds: results.iter().any(|r| r.1),
        converged: results.iter().all(|r| r.2),
    })
}

/// Terms of the fundamental identity along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub v0: f64,
    /// Discounted running payoff `sum_k e^{-rho t_k} U_k dt` over the simulated horizon.
    pub payoff: f64,
    pub gap_integral: f64,
    pub discounted_terminal: f64,
    /// `v0 - [payoff + gap_integral + discounted_terminal]`.
    pub residual: f64,
}

/// Residual of the fundamental identity; zero for the exact value function.
///
/// The payoff uses the configured target's running reward with the
/// scenario's discount rate. Terminal targets enter only through `v(x_T)`.
pub fn fundamental_identity_residual(
    sc: &Scenario,
    v: &dyn TestValueFunction,
    policy: &PolicyField,
    traj: &Trajectory,
    lattice: &ControlLattice,
) -> Result<IdentityReport> {
    check_lengths(traj, policy)?;
    let rho = sc.discount_rate();
    let grid = &sc.grid;
    let w = sc.weights();
    let dt = traj.time.dt();
    let payoff: f64 = (0..traj.n_steps())
        .map(|k| {
            elapsed_discount(&traj.time, k, rho)
                * objectives::running_reward(
                    grid,
                    &traj.states[k],
                    traj.capital[k],
                    policy.slice(k),
                    &sc.epi,
                    &sc.econ,
                    &sc.obj,
                )
                * dt
        })
        .sum();
    let gaps = hamiltonian_gap_profile(sc, v, policy, traj, lattice, rho)?;
    let v0 = v.value(
        grid,
        &w,
        &Triple::from_state(&traj.states[0]),
        traj.capital[0],
    );
    let last = traj.n_steps();
    let discounted_terminal = elapsed_discount(&traj.time, last, rho)
        * v.value(
            grid,
            &w,
            &Triple::from_state(&traj.states[last]),
            traj.capital[last],
        );
    Ok(IdentityReport {
        v0,
        payoff,
        gap_integral: gaps.integrated,
        discounted_terminal,
        residual: v0 - (payoff + gaps.integrated + discounted_terminal),
    })
}

/// Feedback simulation: at every node the controls maximize `H1_CV` at `grad v`.
pub fn simulate_closed_loop(
    sc: &Scenario,
    v: &dyn TestValueFunction,
    lattice: &ControlLattice,
) -> Result<(Trajectory, PolicyField)> {
    lattice.validate(&sc.grid)?;
    let w = sc.weights();
    let (traj, rows) = epi::simulate_with(
        &sc.grid,
        &sc.time,
        &sc.initial,
        sc.k0,
        &sc.epi,
        &sc.econ,
        |_, state, capital| {
            let grad = v.gradient(&sc.grid, &w, &Triple::from_state(state), capital);
            maximize_h1(sc, &w, state, capital, &grad, lattice, None).map(|m| m.controls)
        },
    )?;
    Ok((traj, PolicyField::from_controls(&rows)?))
}

/// `e^{-rho T} |v(x_T)|` along a horizon ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub horizons: Vec<f64>,
    pub values: Vec<f64>,
    /// Least-squares decay rate of `values` in `T`; absent when a value is exactly 0.
    pub exponent: Option<f64>,
    pub decaying: bool,
}

/// Fits the decay of `e^{-rho T} |v_T|` given `(T, v_T)` pairs (elapsed horizons).
pub fn transversality_from(points: &[(f64, f64)], rho: f64) -> TransversalityReport {
    let horizons: Vec<f64> = points.iter().map(|p| p.0).collect();
    let values: Vec<f64> = points
        .iter()
        .map(|&(t, v)| (-rho * t).exp() * v.abs())
        .collect();
    let exponent = if values.iter().all(|&v| v > 0.0 && v.is_finite()) && points.len() >= 2 {
        let m = points.len() as f64;
        let tm = horizons.iter().sum::<f64>() / m;
        let lm = values.iter().map(|v| v.ln()).sum::<f64>() / m;
        let num: f64 = horizons
            .iter()
            .zip(&values)
            .map(|(t, v)| (t - tm) * (v.ln() - lm))
            .sum();
        let den: f64 = horizons.iter().map(|t| (t - tm) * (t - tm)).sum();
        Some(-num / den)
    } else {
        None
    };
    let decaying = match exponent {
        Some(e) => e > 0.0,
        None => values.iter().all(|&v| v == 0.0) || values.last().is_some_and(|&v| v == 0.0),
    };
    TransversalityReport {
        horizons,
        values,
        exponent,
        decaying,
    }
}

/// Simulates to `T`, `2T` and `4T` (elapsed) under `make_policy` and reports the decay.
pub fn transversality_check(
    sc: &Scenario,
    v: &dyn TestValueFunction,
    horizon: f64,
    make_policy: impl Fn(&TimeGrid) -> PolicyField,
) -> Result<TransversalityReport> {
    let w = sc.weights();
    let rho = sc.discount_rate();
    let mut points = Vec::with_capacity(3);
    for factor in [1.0, 2.0, 4.0] {
        let span = horizon * factor;
        let scenario = sc.with_horizon(sc.time.t0() + span)?;
        let traj = scenario.simulate(&make_policy(&scenario.time))?;
        let value = v.value(
            &sc.grid,
            &w,
            &Triple::from_state(traj.final_state()),
            traj.final_capital(),
        );
        points.push((span, value));
    }
    Ok(transversality_from(&points, rho))
}
