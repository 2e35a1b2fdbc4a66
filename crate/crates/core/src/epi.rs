//! Controlled age-structured SIR dynamics.
//!
//! One step is an operator split along characteristics: exact exponential
//! reaction over `dt`, a one-cell shift in age, newborn injection into the
//! first cell, and an explicit Euler step for capital.

use serde::{Deserialize, Serialize};

use crate::economy::{self, EconParams};
use crate::error::{ModelError, Result};
use crate::grid::{AgeGrid, ContactKernel, Field1D, Field2D, TimeGrid};

/// Age densities of susceptible, infected and recovered at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiState {
    pub s: Field1D,
    pub i: Field1D,
    pub r: Field1D,
    pub time: f64,
}

impl EpiState {
    pub fn new(s: Field1D, i: Field1D, r: Field1D, time: f64) -> Self {
        Self { s, i, r, time }
    }

    /// Total density `n = s + i + r`.
    pub fn total_density(&self) -> Field1D {
        self.s.add(&self.i).add(&self.r)
    }

    pub fn population(&self, grid: &AgeGrid) -> f64 {
        grid.integrate(&self.s) + grid.integrate(&self.i) + grid.integrate(&self.r)
    }

    pub fn is_nonnegative(&self) -> bool {
        [&self.s, &self.i, &self.r]
            .iter()
            .all(|f| f.values().iter().all(|&v| v >= 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.i.is_finite() && self.r.is_finite()
    }

    pub fn validate(&self, grid: &AgeGrid) -> Result<()> {
        for (name, f) in [("s", &self.s), ("i", &self.i), ("r", &self.r)] {
            if f.len() != grid.len() {
                return Err(ModelError::config(format!(
                    "initial.{name} must have n_age entries"
                )));
            }
        }
        if !self.is_finite() {
            return Err(ModelError::config("initial state must be finite"));
        }
        if !self.is_nonnegative() {
            return Err(ModelError::config("initial state must be nonnegative"));
        }
        Ok(())
    }
}

/// Softplus saturation of infected mortality above hospital capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationSpec {
    pub xi_cap: f64,
    pub psi: f64,
    pub smooth: f64,
}

impl SaturationSpec {
    pub fn disabled() -> Self {
        Self {
            xi_cap: 0.0,
            psi: 0.0,
            smooth: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return Err(ModelError::config("epidemic.saturation.psi must be >= 0"));
        }
        if !(self.smooth > 0.0 && self.smooth.is_finite()) {
            return Err(ModelError::config("epidemic.saturation.smooth must be > 0"));
        }
        if !self.xi_cap.is_finite() {
            return Err(ModelError::config(
                "epidemic.saturation.xi_cap must be finite",
            ));
        }
        Ok(())
    }

    /// `1 + psi * softplus((xi - xi_cap) / smooth)`.
    pub fn multiplier(&self, xi: f64) -> f64 {
        if self.psi == 0.0 {
            return 1.0;
        }
        1.0 + self.psi * softplus((xi - self.xi_cap) / self.smooth)
    }

    /// Lipschitz constant of the multiplier in `xi`.
    pub fn lipschitz(&self) -> f64 {
        self.psi / self.smooth
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiParams {
    pub mu_s: Field1D,
    pub mu_r: Field1D,
    pub mu_i_base: Field1D,
    pub gamma: Field1D,
    /// Fertility.
    pub beta: Field1D,
    /// Share of infected needing critical care.
    pub xi: Field1D,
    pub kernel: ContactKernel,
    pub saturation: SaturationSpec,
    /// Force of infection is undefined once `N` drops to this level.
    pub n_floor: f64,
}

impl EpiParams {
    pub fn validate(&self, grid: &AgeGrid) -> Result<()> {
        let fields = [
            ("mu_s", &self.mu_s),
            ("mu_r", &self.mu_r),
            ("mu_i", &self.mu_i_base),
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("xi", &self.xi),
        ];
        for (name, f) in fields {
            if f.len() != grid.len() {
                return Err(ModelError::config(format!(
                    "epidemic.{name} must have n_age entries"
                )));
            }
            if !f.is_finite() || f.min() < 0.0 {
                return Err(ModelError::config(format!(
                    "epidemic.{name} must be finite and >= 0"
                )));
            }
        }
        if self.xi.max() > 1.0 {
            return Err(ModelError::config("epidemic.xi must lie in [0,1]"));
        }
        if self.kernel.len() != grid.len() {
            return Err(ModelError::config(
                "epidemic.contact kernel size differs from n_age",
            ));
        }
        if !(self.n_floor >= 0.0) {
            return Err(ModelError::config("n_floor must be >= 0"));
        }
        self.saturation.validate()
    }
}

/// Controls for one time node, borrowed per age cell.
#[derive(Debug, Clone, Copy)]
pub struct ControlSlice<'a> {
    pub c: &'a [f64],
    pub theta: &'a [f64],
    pub eta: &'a [f64],
}

/// Owned controls for one time node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub c: Vec<f64>,
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Controls {
    pub fn uniform(n: usize, c: f64, theta: f64, eta: f64) -> Self {
        Self {
            c: vec![c; n],
            theta: vec![theta; n],
            eta: vec![eta; n],
        }
    }

    pub fn as_slice(&self) -> ControlSlice<'_> {
        ControlSlice {
            c: &self.c,
            theta: &self.theta,
            eta: &self.eta,
        }
    }
}

impl ControlSlice<'_> {
    pub fn to_owned(&self) -> Controls {
        Controls {
            c: self.c.to_vec(),
            theta: self.theta.to_vec(),
            eta: self.eta.to_vec(),
        }
    }
}

/// Control surfaces on the (time node, age cell) lattice.
///
/// Row `k` applies over `[t_k, t_{k+1})`; the row of the final node is only
/// used for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyField {
    pub c: Field2D,
    pub theta: Field2D,
    pub eta: Field2D,
}

impl PolicyField {
    pub fn uniform(time: &TimeGrid, grid: &AgeGrid, c: f64, theta: f64, eta: f64) -> Self {
        let (nt, na) = (time.n_nodes(), grid.len());
        Self {
            c: Field2D::constant(nt, na, c),
            theta: Field2D::constant(nt, na, theta),
            eta: Field2D::constant(nt, na, eta),
        }
    }

    pub fn laissez_faire(time: &TimeGrid, grid: &AgeGrid, c: f64) -> Self {
        Self::uniform(time, grid, c, 1.0, 1.0)
    }

    pub fn from_fn(
        time: &TimeGrid,
        grid: &AgeGrid,
        f: impl Fn(f64, f64) -> (f64, f64, f64),
    ) -> Self {
        let (nt, na) = (time.n_nodes(), grid.len());
        let mut c = Field2D::constant(nt, na, 0.0);
        let mut theta = c.clone();
        let mut eta = c.clone();
        for k in 0..nt {
            for j in 0..na {
                let (cv, tv, ev) = f(time.time(k), grid.node(j));
                c.set(k, j, cv);
                theta.set(k, j, tv);
                eta.set(k, j, ev);
            }
        }
        Self { c, theta, eta }
    }

    pub fn from_controls(rows: &[Controls]) -> Result<Self> {
        let c: Vec<Field1D> = rows.iter().map(|r| Field1D::new(r.c.clone())).collect();
        let theta: Vec<Field1D> = rows.iter().map(|r| Field1D::new(r.theta.clone())).collect();
        let eta: Vec<Field1D> = rows.iter().map(|r| Field1D::new(r.eta.clone())).collect();
        Ok(Self {
            c: Field2D::from_rows(&c)?,
            theta: Field2D::from_rows(&theta)?,
            eta: Field2D::from_rows(&eta)?,
        })
    }

    pub fn n_time(&self) -> usize {
        self.c.n_time()
    }

    pub fn slice(&self, k: usize) -> ControlSlice<'_> {
        ControlSlice {
            c: self.c.row(k),
            theta: self.theta.row(k),
            eta: self.eta.row(k),
        }
    }

    pub fn in_box(&self) -> bool {
        self.c.values().iter().all(|&v| v >= 0.0)
            && self.theta.values().iter().all(|v| (0.0..=1.0).contains(v))
            && self.eta.values().iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn validate(&self, time: &TimeGrid, grid: &AgeGrid) -> Result<()> {
        for f in [&self.c, &self.theta, &self.eta] {
            if f.n_time() != time.n_nodes() || f.n_age() != grid.len() {
                return Err(ModelError::config(format!(
                    "policy must be {} x {} (time nodes x age cells), got {} x {}",
                    time.n_nodes(),
                    grid.len(),
                    f.n_time(),
                    f.n_age()
                )));
            }
            if !f.is_finite() {
                return Err(ModelError::config("policy values must be finite"));
            }
        }
        if !self.in_box() {
            return Err(ModelError::config(
                "policy violates its box: c >= 0, theta and eta in [0,1]",
            ));
        }
        Ok(())
    }
}

/// Critical load `int i xi da`.
pub fn critical_load(grid: &AgeGrid, state: &EpiState, epi: &EpiParams) -> f64 {
    grid.integrate_product(&state.i, &epi.xi)
}

/// Infected mortality at cell `j` under critical load `xi`.
pub fn mu_i(j: usize, xi: f64, epi: &EpiParams) -> f64 {
    epi.mu_i_base.get(j) * epi.saturation.multiplier(xi)
}

/// Infected mortality over the whole mesh.
pub fn mu_i_field(xi: f64, epi: &EpiParams) -> Field1D {
    let mult = epi.saturation.multiplier(xi);
    epi.mu_i_base.map(|m| m * mult)
}

fn check_population(population: f64, time: f64, epi: &EpiParams) -> Result<()> {
    if population <= epi.n_floor || !(population > 0.0) {
        return Err(ModelError::ExtinctPopulation {
            time,
            population,
            floor: epi.n_floor,
        });
    }
    Ok(())
}

/// `lambda(a) = theta(a) / N * int m(a, tau) theta eta i (tau) dtau`.
pub fn force_of_infection(
    grid: &AgeGrid,
    state: &EpiState,
    theta: &[f64],
    eta: &[f64],
    epi: &EpiParams,
) -> Result<Field1D> {
    let population = state.population(grid);
    check_population(population, state.time, epi)?;
    let source = Field1D::new(
        state
            .i
            .values()
            .iter()
            .zip(theta.iter().zip(eta))
            .map(|(i, (t, e))| t * e * i)
            .collect(),
    );
    let pressure = grid.integrate_kernel(&epi.kernel, &source)?;
    Ok(Field1D::new(
        pressure
            .values()
            .iter()
            .zip(theta)
            .map(|(g, t)| (t * g) / population)
            .collect(),
    ))
}

/// Uncontrolled force of infection `1/N int m(a, tau) i(tau) dtau`.
pub fn force_of_infection_free(
    grid: &AgeGrid,
    state: &EpiState,
    epi: &EpiParams,
) -> Result<Field1D> {
    let population = state.population(grid);
    check_population(population, state.time, epi)?;
    let pressure = grid.integrate_kernel(&epi.kernel, &state.i)?;
    Ok(pressure.map(|g| g / population))
}

/// Aggregates recorded at one time node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub time: f64,
    pub susceptible: f64,
    pub infected: f64,
    pub recovered: f64,
    pub population: f64,
    pub critical_load: f64,
    pub capital: f64,
    pub labor: f64,
    pub output: f64,
    pub consumption: f64,
    pub testing_cost: f64,
    pub deaths_flow: f64,
}

impl Aggregates {
    /// Investment `M = Y - C - D`.
    pub fn investment(&self) -> f64 {
        self.output - self.consumption - self.testing_cost
    }
}

/// Computes every per-node aggregate from a state, capital and controls.
pub fn node_aggregates(
    grid: &AgeGrid,
    state: &EpiState,
    capital: f64,
    controls: ControlSlice<'_>,
    epi: &EpiParams,
    econ: &EconParams,
) -> Aggregates {
    let susceptible = grid.integrate(&state.s);
    let infected = grid.integrate(&state.i);
    let recovered = grid.integrate(&state.r);
    let xi = critical_load(grid, state, epi);
    let labor = economy::labor_supply(grid, state, controls.theta, econ);
    let deaths_flow = grid.integrate_product(&mu_i_field(xi, epi), &state.i);
    Aggregates {
        time: state.time,
        susceptible,
        infected,
        recovered,
        population: susceptible + infected + recovered,
        critical_load: xi,
        capital,
        labor,
        output: econ.production.output(capital, labor),
        consumption: economy::consumption_total(grid, state, controls.c),
        testing_cost: economy::testing_cost(grid, state, controls.eta, econ),
        deaths_flow,
    }
}

/// Epidemic part of one step given the force of infection `lambda`.
fn advance_epidemic(
    grid: &AgeGrid,
    state: &EpiState,
    lambda: &Field1D,
    epi: &EpiParams,
    dt: f64,
) -> Result<EpiState> {
    let n = grid.len();
    let xi = critical_load(grid, state, epi);
    let mult = epi.saturation.multiplier(xi);

    let births = grid.integrate_product(&epi.beta, &state.total_density());

    let (s, i, r) = (state.s.values(), state.i.values(), state.r.values());
    let mut s_next = vec![0.0; n];
    let mut i_next = vec![0.0; n];
    let mut r_next = vec![0.0; n];

    for j in 0..n {
        let lam = lambda.get(j);
        let mu_s = epi.mu_s.get(j);
        let mu_r = epi.mu_r.get(j);
        let gamma = epi.gamma.get(j);
        let removal = epi.mu_i_base.get(j) * mult + gamma;

        let s_surv = s[j] * (-(lam + mu_s) * dt).exp();
        let new_inf = s[j] * -(-lam * dt).exp_m1();

        let i_decay = (-removal * dt).exp();
        let i_half = (-0.5 * removal * dt).exp();
        let i_out = i[j] * (1.0 - i_decay) + new_inf * (1.0 - i_half);
        let i_val = i[j] * i_decay + new_inf * i_half;

        let recovered_in = if removal > 0.0 {
            gamma / removal * i_out
        } else {
            0.0
        };
        let r_val = r[j] * (-mu_r * dt).exp() + recovered_in * (-0.5 * mu_r * dt).exp();

        // age by one cell; the last cell leaves the domain
        if j + 1 < n {
            s_next[j + 1] = s_surv;
            i_next[j + 1] = i_val;
            r_next[j + 1] = r_val;
        }
    }
    s_next[0] = births * dt / grid.da();

    let next = EpiState::new(
        Field1D::new(s_next),
        Field1D::new(i_next),
        Field1D::new(r_next),
        state.time + dt,
    );
    if !next.is_finite() {
        return Err(ModelError::NonFiniteState {
            what: "epidemic state",
            time: next.time,
        });
    }
    Ok(next)
}

/// Advances `(state, K)` by one step of length `dt = da`.
pub fn step(
    grid: &AgeGrid,
    state: &EpiState,
    capital: f64,
    controls: ControlSlice<'_>,
    epi: &EpiParams,
    econ: &EconParams,
    dt: f64,
) -> Result<(EpiState, f64)> {
    let lambda = force_of_infection(grid, state, controls.theta, controls.eta, epi)?;
    let agg = node_aggregates(grid, state, capital, controls, epi, econ);
    let next = advance_epidemic(grid, state, &lambda, epi, dt)?;
    let k_next = economy::capital_step(
        capital,
        agg.labor,
        agg.consumption,
        agg.testing_cost,
        econ,
        dt,
        state.time,
    )?;
    Ok((next, k_next))
}

/// Uncontrolled epidemic step: the laissez-faire dynamics with the free force of infection.
pub fn step_laissez_faire(
    grid: &AgeGrid,
    state: &EpiState,
    epi: &EpiParams,
    dt: f64,
) -> Result<EpiState> {
    let lambda = force_of_infection_free(grid, state, epi)?;
    advance_epidemic(grid, state, &lambda, epi, dt)
}

/// A simulated path of `(h, K)` with per-node aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub time: TimeGrid,
    pub states: Vec<EpiState>,
    pub capital: Vec<f64>,
    pub aggregates: Vec<Aggregates>,
    pub lambda: Vec<Field1D>,
    /// True iff every state stayed in the positive cone and `K >= 0` throughout.
    pub feasible: bool,
    /// `sum_k max(0, -K_k)^2 dt` over nodes `1..=n_steps`.
    pub violation: f64,
    pub min_capital: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &EpiState {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn final_capital(&self) -> f64 {
        *self.capital.last().expect("trajectory holds K0")
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Capital-constraint penalty integrand `sum max(0, -K)^2 dt` over post-step nodes.
pub fn capital_violation(capital: &[f64], dt: f64) -> f64 {
    capital
        .iter()
        .skip(1)
        .map(|&k| {
            let neg = (-k).max(0.0);
            neg * neg
        })
        .sum::<f64>()
        * dt
}

/// Runs the controlled dynamics, asking `controls_at(k, state, K)` for the controls of each node.
pub fn simulate_with<F>(
    grid: &AgeGrid,
    time: &TimeGrid,
    initial: &EpiState,
    k0: f64,
    epi: &EpiParams,
    econ: &EconParams,
    mut controls_at: F,
) -> Result<(Trajectory, Vec<Controls>)>
where
    F: FnMut(usize, &EpiState, f64) -> Result<Controls>,
{
    initial.validate(grid)?;
    if !(k0 >= 0.0 && k0.is_finite()) {
        return Err(ModelError::config("K0 must be finite and >= 0"));
    }
    let n_nodes = time.n_nodes();
    let mut states = Vec::with_capacity(n_nodes);
    let mut capital = Vec::with_capacity(n_nodes);
    let mut aggregates = Vec::with_capacity(n_nodes);
    let mut lambdas = Vec::with_capacity(n_nodes);
    let mut used = Vec::with_capacity(n_nodes);

    let mut state = initial.clone();
    state.time = time.t0();
    let mut k = k0;
    let wrap = |step: usize| {
        move |e: ModelError| ModelError::Step {
            step,
            source: Box::new(e),
        }
    };

    for step_idx in 0..n_nodes {
        let ctrl = controls_at(step_idx, &state, k).map_err(wrap(step_idx))?;
        let slice = ctrl.as_slice();
        let lambda = force_of_infection(grid, &state, slice.theta, slice.eta, epi)
            .map_err(wrap(step_idx))?;
        aggregates.push(node_aggregates(grid, &state, k, slice, epi, econ));
        if step_idx + 1 < n_nodes {
            let (next, k_next) =
                step(grid, &state, k, slice, epi, econ, time.dt()).map_err(wrap(step_idx))?;
            states.push(std::mem::replace(&mut state, next));
            capital.push(std::mem::replace(&mut k, k_next));
        } else {
            states.push(state.clone());
            capital.push(k);
        }
        lambdas.push(lambda);
        used.push(ctrl);
    }

    let min_capital = capital.iter().copied().fold(f64::INFINITY, f64::min);
    let violation = capital_violation(&capital, time.dt());
    let feasible = min_capital >= 0.0 && states.iter().all(EpiState::is_nonnegative);
    Ok((
        Trajectory {
            time: *time,
            states,
            capital,
            aggregates,
            lambda: lambdas,
            feasible,
            violation,
            min_capital,
        },
        used,
    ))
}

/// Runs the controlled dynamics under a fixed open-loop policy.
pub fn simulate(
    grid: &AgeGrid,
    time: &TimeGrid,
    initial: &EpiState,
    k0: f64,
    policy: &PolicyField,
    epi: &EpiParams,
    econ: &EconParams,
) -> Result<Trajectory> {
    policy.validate(time, grid)?;
    simulate_with(grid, time, initial, k0, epi, econ, |k, _, _| {
        Ok(policy.slice(k).to_owned())
    })
    .map(|(traj, _)| traj)
}
