//! The JSON scenario document and its translation into model types.

use std::path::Path;

use epiecon::economy::{
    CongestionSpec, EconParams, LockdownProductivitySpec, ProductionSpec, TestingCostBasis,
};
use epiecon::epi::{EpiParams, EpiState, PolicyField, SaturationSpec};
use epiecon::grid::{AgeGrid, ContactKernel, Field1D, TimeGrid};
use epiecon::hamiltonian::{smooth_bump, ControlLattice, ValueFunction};
use epiecon::hilbert::Triple;
use epiecon::objectives::ObjectiveParams;
use epiecon::optimizer::{BlockPolicy, OptimizerConfig};
use epiecon::scenario::Scenario;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub epidemic: EpidemicConfig,
    pub economy: EconomyConfig,
    pub objective: ObjectiveParams,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub a_max: f64,
    pub n_age: usize,
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
}

/// A coefficient over age, either tabulated or from a closed-form family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    Linear {
        intercept: f64,
        slope: f64,
    },
    /// `a * exp(b * age)`.
    Gompertz {
        a: f64,
        b: f64,
    },
    /// `values[k]` on `[breaks[k-1], breaks[k])`; needs one more value than breaks.
    Step {
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
    /// Linear interpolation through `(ages, values)`, flat outside.
    Piecewise {
        ages: Vec<f64>,
        values: Vec<f64>,
    },
    /// One value per age cell.
    Table {
        values: Vec<f64>,
    },
    /// `base + height * 64 (x(1-x))^3` on `(lo, hi)`.
    Bump {
        height: f64,
        lo: f64,
        hi: f64,
        #[serde(default)]
        base: f64,
    },
}

impl FieldSpec {
    /// Samples at cell centres. `base_n` is the configured `n_age`: tables
    /// must match it and are resampled onto refined grids.
    pub fn sample(&self, grid: &AgeGrid, base_n: usize, path: &str) -> Result<Field1D, CliError> {
        let bad = |msg: String| CliError::Config(format!("{path}: {msg}"));
        let field = match self {
            FieldSpec::Constant { value } => grid.constant(*value),
            FieldSpec::Linear { intercept, slope } => grid.sample(|a| intercept + slope * a),
            FieldSpec::Gompertz { a, b } => grid.sample(|x| a * (b * x).exp()),
            FieldSpec::Step { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(bad(format!(
                        "step needs {} values for {} breaks, got {}",
                        breaks.len() + 1,
                        breaks.len(),
                        values.len()
                    )));
                }
                if breaks.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(bad("step breaks must increase".into()));
                }
                grid.sample(|a| values[breaks.iter().take_while(|&&b| a >= b).count()])
            }
            FieldSpec::Piecewise { ages, values } => {
                if ages.is_empty() || ages.len() != values.len() {
                    return Err(bad(
                        "piecewise needs equally many ages and values (at least one)".into(),
                    ));
                }
                if ages.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(bad("piecewise ages must increase".into()));
                }
                grid.sample(|a| interpolate(ages, values, a))
            }
            FieldSpec::Table { values } => {
                if values.len() != base_n {
                    return Err(bad(format!(
                        "table has {} values but n_age = {base_n}",
                        values.len()
                    )));
                }
                let field = Field1D::new(values.clone());
                if grid.len() == base_n {
                    field
                } else {
                    let from = AgeGrid::new(grid.a_max(), base_n).map_err(CliError::from)?;
                    field.resample(&from, grid)
                }
            }
            FieldSpec::Bump {
                height,
                lo,
                hi,
                base,
            } => {
                if !(hi > lo) {
                    return Err(bad("bump needs lo < hi".into()));
                }
                grid.sample(|a| base + height * smooth_bump(a, *lo, *hi))
            }
        };
        if !field.is_finite() {
            return Err(bad("non-finite values".into()));
        }
        Ok(field)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    for k in 1..xs.len() {
        if x <= xs[k] {
            let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
            return ys[k - 1] + w * (ys[k] - ys[k - 1]);
        }
    }
    ys[ys.len() - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Constant {
        m0: f64,
    },
    /// `m0 g(a) g(b)`.
    Separable {
        m0: f64,
        profile: FieldSpec,
    },
    /// `m0 exp(-((a - b) / width)^2)`.
    Gaussian {
        m0: f64,
        width: f64,
    },
    /// Row-major `n_age x n_age` table.
    Table {
        values: Vec<f64>,
    },
}

impl KernelSpec {
    fn build(&self, grid: &AgeGrid, base_n: usize, path: &str) -> Result<ContactKernel, CliError> {
        let kernel = match self {
            KernelSpec::Constant { m0 } => ContactKernel::constant(grid, *m0)?,
            KernelSpec::Separable { m0, profile } => {
                let g = profile.sample(grid, base_n, &format!("{path}.profile"))?;
                ContactKernel::separable(grid, *m0, &g)?
            }
            KernelSpec::Gaussian { m0, width } => {
                if !(*width > 0.0) {
                    return Err(CliError::Config(format!("{path}.width must be > 0")));
                }
                ContactKernel::from_fn(grid, |a, b| m0 * (-((a - b) / width).powi(2)).exp())?
            }
            KernelSpec::Table { values } => {
                if values.len() != base_n * base_n {
                    return Err(CliError::Config(format!(
                        "{path}: table has {} entries, expected n_age^2 = {}",
                        values.len(),
                        base_n * base_n
                    )));
                }
                let kernel = ContactKernel::from_table(base_n, values.clone())?;
                if grid.len() == base_n {
                    kernel
                } else {
                    kernel.resample(&AgeGrid::new(grid.a_max(), base_n)?, grid)
                }
            }
        };
        Ok(kernel)
    }
}

fn default_n_floor() -> f64 {
    1e-9
}

fn default_saturation() -> SaturationSpec {
    SaturationSpec::disabled()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpidemicConfig {
    pub mu_s: FieldSpec,
    pub mu_r: FieldSpec,
    /// Baseline infected mortality (before saturation).
    pub mu_i: FieldSpec,
    pub gamma: FieldSpec,
    pub beta: FieldSpec,
    pub xi: FieldSpec,
    pub kernel: KernelSpec,
    #[serde(default = "default_saturation")]
    pub saturation: SaturationSpec,
    #[serde(default = "default_n_floor")]
    pub n_floor: f64,
    pub initial: InitialConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub s: FieldSpec,
    pub i: FieldSpec,
    pub r: FieldSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomyConfig {
    pub k0: f64,
    pub delta: f64,
    pub alpha: FieldSpec,
    pub e: FieldSpec,
    pub production: ProductionSpec,
    #[serde(default)]
    pub phi: LockdownProductivitySpec,
    pub congestion: CongestionSpec,
    #[serde(default)]
    pub testing_cost_basis: TestingCostBasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Upper bound on per-capita consumption.
    pub c_max: f64,
    pub initial: PolicySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// `theta = eta = 1`.
    LaissezFaire {
        c: f64,
    },
    /// `theta = 0`, `eta = 1`.
    FullLockdown {
        c: f64,
    },
    Uniform {
        c: f64,
        theta: f64,
        eta: f64,
    },
    /// Block-constant values, row-major in time block.
    Blocks {
        age_blocks: usize,
        time_blocks: usize,
        c: Vec<f64>,
        theta: Vec<f64>,
        eta: Vec<f64>,
    },
}

impl PolicySpec {
    pub fn blocks(&self, age_blocks: usize, time_blocks: usize) -> Result<BlockPolicy, CliError> {
        let out = match self {
            PolicySpec::LaissezFaire { c } => {
                BlockPolicy::uniform(age_blocks, time_blocks, *c, 1.0, 1.0)
            }
            PolicySpec::FullLockdown { c } => {
                BlockPolicy::uniform(age_blocks, time_blocks, *c, 0.0, 1.0)
            }
            PolicySpec::Uniform { c, theta, eta } => {
                BlockPolicy::uniform(age_blocks, time_blocks, *c, *theta, *eta)
            }
            PolicySpec::Blocks {
                age_blocks: ab,
                time_blocks: tb,
                c,
                theta,
                eta,
            } => {
                if (*ab, *tb) != (age_blocks, time_blocks) {
                    return Err(CliError::Config(format!(
                        "policy.initial: {ab} x {tb} blocks do not match the requested {age_blocks} x {time_blocks}"
                    )));
                }
                let nb = ab * tb;
                if [c.len(), theta.len(), eta.len()].iter().any(|&l| l != nb) {
                    return Err(CliError::Config(format!(
                        "policy.initial: each channel needs age_blocks * time_blocks = {nb} values"
                    )));
                }
                BlockPolicy {
                    age_blocks: *ab,
                    time_blocks: *tb,
                    c: c.clone(),
                    theta: theta.clone(),
                    eta: eta.clone(),
                }
            }
        };
        Ok(out)
    }

    /// Block shape the spec carries, if any.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            PolicySpec::Blocks {
                age_blocks,
                time_blocks,
                ..
            } => (*age_blocks, *time_blocks),
            _ => (1, 1),
        }
    }

    pub fn field(&self, sc: &Scenario) -> Result<PolicyField, CliError> {
        let (ab, tb) = self.shape();
        if !sc.grid.len().is_multiple_of(ab) || !sc.time.n_steps().max(1).is_multiple_of(tb) {
            return Err(CliError::Config(format!(
                "policy.initial: {ab} x {tb} blocks do not divide the {} x {} grid",
                sc.grid.len(),
                sc.time.n_steps()
            )));
        }
        let field = self.blocks(ab, tb)?.to_field(&sc.time, &sc.grid);
        field.validate(&sc.time, &sc.grid)?;
        if !field.in_box() || field.c.values().iter().any(|&c| c > sc.c_max) {
            return Err(CliError::Config(
                "policy.initial: controls must satisfy 0 <= c <= c_max and theta, eta in [0,1]"
                    .into(),
            ));
        }
        Ok(field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueFunctionSpec {
    Zero,
    /// `<h, w>_H + q K`.
    Linear {
        q: f64,
        w1: FieldSpec,
        w2: FieldSpec,
        w3: FieldSpec,
    },
    /// `1/2 <h, omega h>_H + 1/2 q K^2`.
    Quadratic {
        q: f64,
        omega1: FieldSpec,
        omega2: FieldSpec,
        omega3: FieldSpec,
    },
}

impl ValueFunctionSpec {
    pub fn build(&self, grid: &AgeGrid, base_n: usize) -> Result<ValueFunction, CliError> {
        let p = "verification.value_function";
        Ok(match self {
            ValueFunctionSpec::Zero => ValueFunction::Zero,
            ValueFunctionSpec::Linear { q, w1, w2, w3 } => ValueFunction::Linear {
                w: Triple::new(
                    w1.sample(grid, base_n, &format!("{p}.w1"))?,
                    w2.sample(grid, base_n, &format!("{p}.w2"))?,
                    w3.sample(grid, base_n, &format!("{p}.w3"))?,
                ),
                q: *q,
            },
            ValueFunctionSpec::Quadratic {
                q,
                omega1,
                omega2,
                omega3,
            } => ValueFunction::Quadratic {
                omega: Triple::new(
                    omega1.sample(grid, base_n, &format!("{p}.omega1"))?,
                    omega2.sample(grid, base_n, &format!("{p}.omega2"))?,
                    omega3.sample(grid, base_n, &format!("{p}.omega3"))?,
                ),
                q: *q,
            },
        })
    }
}

fn default_lattice() -> ControlLattice {
    ControlLattice::uniform(4, 5)
}

fn default_refinements() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    pub value_function: ValueFunctionSpec,
    #[serde(default = "default_lattice")]
    pub lattice: ControlLattice,
    /// Number of grids (n_age, 2 n_age, ...) in the convergence table.
    #[serde(default = "default_refinements")]
    pub refinements: usize,
    /// Base horizon of the transversality ladder; defaults to `t_end - t0`.
    #[serde(default)]
    pub transversality_horizon: Option<f64>,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            value_function: ValueFunctionSpec::Zero,
            lattice: default_lattice(),
            refinements: default_refinements(),
            transversality_horizon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Uniform lockdown level.
    Theta,
    /// Uniform testing level.
    Eta,
    /// Uniform consumption.
    C,
    K0,
    Delta,
    Rho,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Theta => "theta",
            SweepParam::Eta => "eta",
            SweepParam::C => "c",
            SweepParam::K0 => "k0",
            SweepParam::Delta => "delta",
            SweepParam::Rho => "rho",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub x: SweepAxis,
    #[serde(default)]
    pub y: Option<SweepAxis>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Default output directory (overridden by `--out`).
    #[serde(default)]
    pub dir: Option<String>,
    /// Times of the age-resolved snapshots (nearest node).
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

/// Parses a document, reporting the offending field path on failure.
pub fn parse(text: &str) -> Result<Config, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner().to_string();
        // serde reports a missing field at its parent; name the field itself
        let full = match inner.strip_prefix("missing field `") {
            Some(rest) => {
                let field = rest.split('`').next().unwrap_or_default();
                if path == "." || path.is_empty() {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                }
            }
            None => path,
        };
        CliError::Config(format!("{full}: {inner}"))
    })
}

pub fn load(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Canonical serialization; parsing it back yields an identical config.
pub fn echo(config: &Config) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

impl Config {
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        self.scenario_with(self.grid.n_age)
    }

    /// Builds the scenario on `n_age` cells over the same horizon.
    pub fn scenario_with(&self, n_age: usize) -> Result<Scenario, CliError> {
        let base = self.grid.n_age;
        let grid = AgeGrid::new(self.grid.a_max, n_age)?;
        let time = TimeGrid::spanning(&grid, self.grid.t0, self.grid.t_end)?;
        let ep = &self.epidemic;
        let f = |spec: &FieldSpec, path: &str| spec.sample(&grid, base, path);
        let epi = EpiParams {
            mu_s: f(&ep.mu_s, "epidemic.mu_s")?,
            mu_r: f(&ep.mu_r, "epidemic.mu_r")?,
            mu_i_base: f(&ep.mu_i, "epidemic.mu_i")?,
            gamma: f(&ep.gamma, "epidemic.gamma")?,
            beta: f(&ep.beta, "epidemic.beta")?,
            xi: f(&ep.xi, "epidemic.xi")?,
            kernel: ep.kernel.build(&grid, base, "epidemic.kernel")?,
            saturation: ep.saturation,
            n_floor: ep.n_floor,
        };
        let initial = EpiState::new(
            f(&ep.initial.s, "epidemic.initial.s")?,
            f(&ep.initial.i, "epidemic.initial.i")?,
            f(&ep.initial.r, "epidemic.initial.r")?,
            self.grid.t0,
        );
        let ec = &self.economy;
        let econ = EconParams {
            alpha: f(&ec.alpha, "economy.alpha")?,
            e: f(&ec.e, "economy.e")?,
            delta: ec.delta,
            production: ec.production.clone(),
            phi: ec.phi.clone(),
            congestion: ec.congestion.clone(),
            testing_cost_basis: ec.testing_cost_basis,
        };
        let sc = Scenario {
            grid,
            time,
            initial,
            k0: ec.k0,
            epi,
            econ,
            obj: self.objective.clone(),
            c_max: self.policy.c_max,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn value_function(&self, grid: &AgeGrid) -> Result<ValueFunction, CliError> {
        self.verification
            .value_function
            .build(grid, self.grid.n_age)
    }
}
