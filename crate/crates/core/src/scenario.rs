//! Everything needed to simulate and score a policy, bundled.

use crate::economy::EconParams;
use crate::epi::{self, EpiParams, EpiState, PolicyField, Trajectory};
use crate::error::{ModelError, Result};
use crate::grid::{AgeGrid, TimeGrid};
use crate::hilbert::SurvivalWeights;
use crate::objectives::{self, Evaluation, ObjectiveParams, TargetSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: AgeGrid,
    pub time: TimeGrid,
    pub initial: EpiState,
    pub k0: f64,
    pub epi: EpiParams,
    pub econ: EconParams,
    pub obj: ObjectiveParams,
    /// Upper bound on per-capita consumption.
    pub c_max: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if (self.time.dt() - self.grid.da()).abs() > 1e-12 * self.grid.da() {
            return Err(ModelError::config("time step must equal the age step"));
        }
        if !(self.c_max > 0.0 && self.c_max.is_finite()) {
            return Err(ModelError::config("c_max must be finite and > 0"));
        }
        if !(self.k0 >= 0.0 && self.k0.is_finite()) {
            return Err(ModelError::config("K0 must be finite and >= 0"));
        }
        self.initial.validate(&self.grid)?;
        self.epi.validate(&self.grid)?;
        self.econ.validate(&self.grid)?;
        self.obj.validate(self.c_max)
    }

    pub fn weights(&self) -> SurvivalWeights {
        SurvivalWeights::from_params(&self.grid, &self.epi)
    }

    /// Same scenario on a different time horizon (same step).
    pub fn with_horizon(&self, t_end: f64) -> Result<Scenario> {
        let mut out = self.clone();
        out.time = TimeGrid::spanning(&self.grid, self.time.t0(), t_end)?;
        Ok(out)
    }

    /// Discount rate of the running payoff of the configured target.
    pub fn discount_rate(&self) -> f64 {
        match self.obj.target {
            TargetSpec::J6 if !self.obj.j6_discounted => 0.0,
            _ => self.obj.rho,
        }
    }

    pub fn simulate(&self, policy: &PolicyField) -> Result<Trajectory> {
        epi::simulate(
            &self.grid,
            &self.time,
            &self.initial,
            self.k0,
            policy,
            &self.epi,
            &self.econ,
        )
    }

    pub fn evaluate(&self, policy: &PolicyField) -> Result<(Trajectory, Evaluation)> {
        let traj = self.simulate(policy)?;
        let eval =
            objectives::evaluate(&self.grid, &traj, policy, &self.epi, &self.econ, &self.obj);
        Ok((traj, eval))
    }
}
