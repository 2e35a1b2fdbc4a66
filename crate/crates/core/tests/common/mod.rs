#![allow(dead_code)]

use epiecon::economy::{
    CongestionSpec, EconParams, LockdownProductivitySpec, ProductionSpec, TestingCostBasis,
};
use epiecon::epi::{EpiParams, EpiState, PolicyField, SaturationSpec};
use epiecon::grid::{AgeGrid, ContactKernel, TimeGrid};
use epiecon::hamiltonian::{smooth_bump, ValueFunction};
use epiecon::hilbert::Triple;
use epiecon::objectives::{DeathOrientation, ObjectiveParams, TargetSpec, UtilitySpec};
use epiecon::scenario::Scenario;

pub const A_MAX: f64 = 100.0;

pub fn crra() -> UtilitySpec {
    UtilitySpec::ShiftedCrra {
        u0: 0.5,
        eps_c: 0.1,
        sigma: 0.5,
        w0: 0.6,
    }
}

/// A smooth, fully coupled scenario with no births and compactly supported data.
pub fn smooth_scenario(n_age: usize, horizon: f64, target: TargetSpec) -> Scenario {
    let grid = AgeGrid::new(A_MAX, n_age).unwrap();
    let time = TimeGrid::spanning(&grid, 0.0, horizon).unwrap();
    let epi = EpiParams {
        mu_s: grid.sample(|a| 0.001 + 0.00005 * a * a / 10.0),
        mu_r: grid.sample(|a| 0.0015 + 0.00005 * a * a / 10.0),
        mu_i_base: grid.sample(|a| 0.005 + 0.0008 * a),
        gamma: grid.sample(|a| 0.3 + 0.05 * (a / 15.0).sin()),
        beta: grid.zeros(),
        xi: grid.sample(|a| 0.001 + 0.003 * a),
        kernel: ContactKernel::from_fn(&grid, |a, b| 1.2 * (-((a - b) / 25.0).powi(2)).exp())
            .unwrap(),
        saturation: SaturationSpec {
            xi_cap: 0.3,
            psi: 1.5,
            smooth: 0.05,
        },
        n_floor: 1e-9,
    };
    let econ = EconParams {
        alpha: grid.sample(|a| 0.2 + smooth_bump(a, 15.0, 70.0)),
        e: grid.sample(|a| 0.2 + 0.002 * a),
        delta: 0.05,
        production: ProductionSpec::Ces {
            a: 1.0,
            omega: 0.35,
            sigma: -0.5,
        },
        phi: LockdownProductivitySpec::Power { q: 1.0 },
        congestion: CongestionSpec::ConcavePower { d1: 0.5, p: 0.8 },
        testing_cost_basis: TestingCostBasis::Eta,
    };
    let obj = ObjectiveParams {
        rho: 0.03,
        nu: 1.0,
        t_num: None,
        utility: crra(),
        target,
        deaths: DeathOrientation::Minimize,
        j6_discounted: false,
    };
    let initial = EpiState::new(
        grid.sample(|a| 0.02 * smooth_bump(a, 2.0, 85.0)),
        grid.sample(|a| 0.002 * smooth_bump(a, 10.0, 60.0)),
        grid.sample(|a| 0.004 * smooth_bump(a, 5.0, 70.0)),
        0.0,
    );
    Scenario {
        grid,
        time,
        initial,
        k0: 3.0,
        epi,
        econ,
        obj,
        c_max: 5.0,
    }
}

/// Smooth policy in age and time, parameterized by `seed`-dependent phases.
pub fn smooth_policy(sc: &Scenario, phase: f64, scale: f64) -> PolicyField {
    PolicyField::from_fn(&sc.time, &sc.grid, |t, a| {
        let theta = 0.55 + 0.4 * scale * ((a / 17.0 + t / 3.0 + phase).sin());
        let eta = 0.5 + 0.45 * scale * ((a / 23.0 - t / 5.0 + 2.0 * phase).cos());
        let c = 0.3 + 0.2 * scale * ((a / 31.0 + t / 7.0 + 3.0 * phase).sin()).abs();
        (c, theta.clamp(0.0, 1.0), eta.clamp(0.0, 1.0))
    })
}

pub fn quadratic_value(grid: &AgeGrid, q: f64) -> ValueFunction {
    ValueFunction::Quadratic {
        omega: Triple::new(
            grid.sample(|a| 30.0 * smooth_bump(a, 5.0, 92.0)),
            grid.sample(|a| 80.0 * smooth_bump(a, 3.0, 90.0)),
            grid.sample(|a| 20.0 * smooth_bump(a, 8.0, 95.0)),
        ),
        q,
    }
}

pub fn linear_value(grid: &AgeGrid, q: f64) -> ValueFunction {
    ValueFunction::Linear {
        w: Triple::new(
            grid.sample(|a| 1.5 * smooth_bump(a, 4.0, 90.0)),
            grid.sample(|a| 3.0 * smooth_bump(a, 6.0, 88.0)),
            grid.sample(|a| 0.7 * smooth_bump(a, 10.0, 95.0)),
        ),
        q,
    }
}

/// Convergence order: minus the least-squares slope of `log2(err)` against `-log2(h)`.
pub fn observed_order(steps: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|h| -h.log2()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    let m = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    -num / den
}
