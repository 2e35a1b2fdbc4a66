//! Acceptance suite: one line per criterion, written straight to stderr so it
//! shows up in the plain `cargo test` log.

mod common;

use std::io::Write;
use std::time::Instant;

use common::*;
use epiecon::economy::{self, CongestionSpec, ProductionSpec};
use epiecon::epi::{EpiParams, EpiState, PolicyField, SaturationSpec, Trajectory};
use epiecon::grid::{AgeGrid, ContactKernel, Field1D, Field2D, TimeGrid};
use epiecon::hamiltonian::{
    chain_rule_residual, hamiltonian_gap_profile, simulate_closed_loop, smooth_bump,
    ControlLattice, ValueFunction,
};
use epiecon::hilbert::{apply_a, apply_a_star, inner_h, norm_h, SurvivalWeights, Triple};
use epiecon::objectives::{TargetSpec, UtilitySpec};
use epiecon::optimizer::{
    fd_gradient, optimize, BlockPolicy, GradientMode, OptimizerConfig, PerChannel,
};
use epiecon::scenario::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

/// Scenario with every demographic and epidemic rate switched off.
fn quiet(n_age: usize, horizon: f64) -> Scenario {
    let mut sc = smooth_scenario(n_age, horizon, TargetSpec::J1);
    let g = sc.grid;
    sc.epi.mu_s = g.zeros();
    sc.epi.mu_r = g.zeros();
    sc.epi.mu_i_base = g.zeros();
    sc.epi.gamma = g.zeros();
    sc.epi.beta = g.zeros();
    sc.epi.xi = g.zeros();
    sc.epi.saturation = SaturationSpec::disabled();
    sc
}

fn zero_consumption(sc: &Scenario) -> PolicyField {
    PolicyField::laissez_faire(&sc.time, &sc.grid, 0.0)
}

// 1 ------------------------------------------------------------------------

fn s0(a: f64) -> f64 {
    0.02 * smooth_bump(a, 5.0, 60.0)
}

/// Max pointwise relative error of the final `s` against `s0(a - t) exp(-int mu)`.
fn mckendrick_error(
    n: usize,
    horizon: f64,
    mu: impl Fn(f64) -> f64,
    mu_int: impl Fn(f64, f64) -> f64,
) -> (f64, f64) {
    let mut sc = quiet(n, horizon);
    let g = sc.grid;
    sc.epi.mu_s = g.sample(&mu);
    sc.initial = EpiState::new(g.sample(s0), g.zeros(), g.zeros(), 0.0);
    let traj = sc.simulate(&zero_consumption(&sc)).unwrap();
    let t = sc.time.t_end();
    let s = &traj.final_state().s;
    let exact: Vec<f64> = (0..n)
        .map(|j| {
            let a = g.node(j);
            s0(a - t) * (-mu_int(a - t, a)).exp()
        })
        .collect();
    let peak = exact.iter().copied().fold(0.0, f64::max);
    let err = (0..n)
        .filter(|&j| exact[j] > 1e-10 * peak)
        .map(|j| (s.get(j) - exact[j]).abs() / exact[j])
        .fold(0.0, f64::max);
    (err, g.da())
}

fn criterion_1() -> Outcome {
    let sizes = [100usize, 200, 400];
    let mut worst_const = 0.0f64;
    let mut bound_ok = true;
    for &n in &sizes {
        let (err, dt) = mckendrick_error(n, 20.0, |_| 0.02, |lo, hi| 0.02 * (hi - lo));
        worst_const = worst_const.max(err / dt);
        bound_ok &= err <= 2.0 * dt;
    }
    // with constant mortality the scheme is exact, so the order is measured on an age-dependent rate
    let (c0, c1) = (0.005, 0.0004);
    let mut errs = Vec::new();
    let mut steps = Vec::new();
    for &n in &sizes {
        let (err, dt) = mckendrick_error(
            n,
            20.0,
            |a| c0 + c1 * a,
            |lo, hi| c0 * (hi - lo) + 0.5 * c1 * (hi * hi - lo * lo),
        );
        bound_ok &= err <= 2.0 * dt;
        errs.push(err);
        steps.push(dt);
    }
    let order = observed_order(&steps, &errs);
    Outcome::new(
        bound_ok && order >= 0.9,
        format!(
            "max err/dt = {worst_const:.2e} (constant mu), age-dependent errors {errs:.3?}, order {order:.3}"
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn sir_rhs(y: [f64; 3], m0: f64, gamma: f64) -> [f64; 3] {
    let n = y[0] + y[1] + y[2];
    let inf = m0 * y[0] * y[1] / n;
    [-inf, inf - gamma * y[1], gamma * y[1]]
}

fn rk4(y0: [f64; 3], m0: f64, gamma: f64, dt: f64, nodes: usize, sub: usize) -> Vec<[f64; 3]> {
    let h = dt / sub as f64;
    let mut y = y0;
    let mut out = vec![y];
    let add =
        |y: [f64; 3], k: [f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
    for _ in 1..nodes {
        for _ in 0..sub {
            let k1 = sir_rhs(y, m0, gamma);
            let k2 = sir_rhs(add(y, k1, h / 2.0), m0, gamma);
            let k3 = sir_rhs(add(y, k2, h / 2.0), m0, gamma);
            let k4 = sir_rhs(add(y, k3, h), m0, gamma);
            for c in 0..3 {
                y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        out.push(y);
    }
    out
}

fn criterion_2() -> Outcome {
    // a short age mesh keeps dt small at n_age = 256
    let (m0, gamma, horizon, a_max) = (0.2, 0.1, 30.0, 40.0);
    let mut sc = quiet(256, 0.0);
    let g = AgeGrid::new(a_max, 256).unwrap();
    sc.grid = g;
    sc.time = TimeGrid::spanning(&g, 0.0, horizon).unwrap();
    sc.epi.gamma = g.constant(gamma);
    sc.epi.kernel = ContactKernel::constant(&g, m0).unwrap();
    // everyone starts younger than 8, so nobody reaches the end of the age mesh
    let young = |v: f64| g.sample(|a| if a < 8.0 { v } else { 0.0 });
    sc.initial = EpiState::new(young(0.9), young(0.1), g.zeros(), 0.0);
    let traj = sc.simulate(&zero_consumption(&sc)).unwrap();
    let agg = &traj.aggregates;
    let y0 = [agg[0].susceptible, agg[0].infected, agg[0].recovered];
    let ode = rk4(y0, m0, gamma, sc.time.dt(), sc.time.n_nodes(), 50);
    let k_peak = (0..ode.len())
        .max_by(|&a, &b| ode[a][1].total_cmp(&ode[b][1]))
        .unwrap();
    let sim = [
        agg[k_peak].susceptible,
        agg[k_peak].infected,
        agg[k_peak].recovered,
    ];
    let rel = (0..3)
        .map(|c| (sim[c] - ode[k_peak][c]).abs() / ode[k_peak][c])
        .fold(0.0, f64::max);
    let sim_peak = agg.iter().map(|a| a.infected).fold(0.0, f64::max);
    let peak_rel = (sim_peak - ode[k_peak][1]).abs() / ode[k_peak][1];
    let interior = k_peak > 0 && k_peak + 1 < ode.len();
    Outcome::new(
        interior && rel <= 0.01 && peak_rel <= 0.01,
        format!(
            "peak at t = {:.2}: max rel (S,I,R) err {rel:.3e}, peak height rel err {peak_rel:.3e}",
            sc.time.time(k_peak)
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn random_field(rng: &mut ChaCha8Rng, g: &AgeGrid, scale: f64, zero_share: f64) -> Vec<f64> {
    (0..g.len())
        .map(|_| {
            if rng.gen::<f64>() < zero_share {
                0.0
            } else {
                scale * rng.gen::<f64>()
            }
        })
        .collect()
}

fn random_scenario(rng: &mut ChaCha8Rng) -> (Scenario, PolicyField) {
    let n = [16usize, 24, 32, 40, 48, 64][rng.gen_range(0..6)];
    let horizon_steps = rng.gen_range(1..=n / 2);
    let mut sc = smooth_scenario(n, 0.0, TargetSpec::J1);
    let g = AgeGrid::new(A_MAX, n).unwrap();
    sc.grid = g;
    sc.time = TimeGrid::new(&g, 0.0, horizon_steps);
    let (r1, r2) = (0.02 * rng.gen::<f64>(), 3.0 * rng.gen::<f64>());
    sc.epi = EpiParams {
        mu_s: g.sample(|a| r1 * (r2 * a / A_MAX).exp()),
        mu_r: g.sample(|a| r1 * (r2 * a / A_MAX).exp()),
        mu_i_base: g.constant(0.3 * rng.gen::<f64>()),
        gamma: {
            let g0 = 2.0 * rng.gen::<f64>();
            g.sample(|a| g0 * (1.0 + 0.5 * (a / 9.0).sin()))
        },
        beta: g.sample(|a| 0.1 * smooth_bump(a, 15.0, 45.0)),
        xi: g.sample(|a| 0.3 * a / A_MAX),
        kernel: {
            let (m0, w, m1) = (
                20.0 * rng.gen::<f64>(),
                5.0 + 30.0 * rng.gen::<f64>(),
                rng.gen::<f64>(),
            );
            ContactKernel::from_fn(&g, |a, b| m0 * (-((a - b) / w).powi(2)).exp() + m1).unwrap()
        },
        saturation: SaturationSpec {
            xi_cap: 0.01 * rng.gen::<f64>(),
            psi: 3.0 * rng.gen::<f64>(),
            smooth: 0.001 + 0.1 * rng.gen::<f64>(),
        },
        n_floor: 1e-9,
    };
    sc.econ.alpha = g.sample(|a| smooth_bump(a, 15.0, 70.0));
    sc.econ.e = g.constant(1.0);
    let s = random_field(rng, &g, 0.02, 0.2);
    let i = random_field(rng, &g, 0.002, 0.5);
    let r = random_field(rng, &g, 0.01, 0.5);
    sc.initial = EpiState::new(Field1D::new(s), Field1D::new(i), Field1D::new(r), 0.0);
    let nt = sc.time.n_nodes();
    let mut field = |hi: f64| {
        (0..nt * n)
            .map(|_| hi * rng.gen::<f64>())
            .collect::<Vec<f64>>()
    };
    let (c, theta, eta) = (field(0.5), field(1.0), field(1.0));
    let policy = PolicyField {
        c: Field2D::from_fn(nt, n, |k, j| c[k * n + j]),
        theta: Field2D::from_fn(nt, n, |k, j| theta[k * n + j]),
        eta: Field2D::from_fn(nt, n, |k, j| eta[k * n + j]),
    };
    (sc, policy)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut negative = 0;
    let mut failures = 0;
    let mut worst_drift = 0.0f64;
    for _ in 0..200 {
        let (sc, policy) = random_scenario(&mut rng);
        match sc.simulate(&policy) {
            Ok(traj) => {
                if !traj.states.iter().all(EpiState::is_nonnegative) {
                    negative += 1;
                }
            }
            Err(_) => failures += 1,
        }
        // zero-rate variant, with mass kept clear of the end of the age mesh
        let mut z = sc.clone();
        let g = z.grid;
        z.epi.mu_s = g.zeros();
        z.epi.mu_r = g.zeros();
        z.epi.mu_i_base = g.zeros();
        z.epi.beta = g.zeros();
        let cut = g.len() - z.time.n_steps() - 1;
        let clip = |f: &Field1D| {
            Field1D::new(
                f.values()
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| if j < cut { v } else { 0.0 })
                    .collect(),
            )
        };
        z.initial = EpiState::new(
            clip(&z.initial.s),
            clip(&z.initial.i),
            clip(&z.initial.r),
            0.0,
        );
        match z.simulate(&policy) {
            Ok(traj) => {
                let n0 = traj.aggregates[0].population;
                for a in &traj.aggregates {
                    worst_drift = worst_drift.max((a.population - n0).abs() / n0);
                }
            }
            Err(_) => failures += 1,
        }
    }
    Outcome::new(
        negative == 0 && failures == 0 && worst_drift <= 1e-12,
        format!("200 scenarios: {negative} with negative density, {failures} failed runs, max N drift {worst_drift:.2e}"),
    )
}

// 4 ------------------------------------------------------------------------

// Adjoint pairs live on a shorter age span so that the finest desk-scale
// grid resolves both the weights and the test functions.
const ADJ_A_MAX: f64 = 50.0;

fn adjoint_params(g: &AgeGrid) -> EpiParams {
    let mut p = smooth_scenario(g.len(), 0.0, TargetSpec::J1).epi;
    p.mu_s = g.sample(|a| 0.02 + 0.04 * (a / ADJ_A_MAX).powi(2));
    p.mu_r = g.sample(|a| 0.03 + 0.03 * (a / ADJ_A_MAX).powi(2));
    p.gamma = g.sample(|a| 0.3 + 0.1 * (a / 10.0).sin());
    p.beta = g.sample(|a| 0.05 * smooth_bump(a, 5.0, 25.0));
    p
}

#[derive(Clone, Copy)]
struct BumpSpec {
    lo: f64,
    hi: f64,
    amp: f64,
    wiggle: f64,
    freq: f64,
    phase: f64,
}

impl BumpSpec {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let lo = 1.0 + 9.0 * rng.gen::<f64>();
        let hi = (lo + 35.0 + 10.0 * rng.gen::<f64>()).min(ADJ_A_MAX - 1.0);
        Self {
            lo,
            hi,
            amp: 0.5 + 1.5 * rng.gen::<f64>(),
            wiggle: 0.3 * rng.gen::<f64>(),
            freq: 10.0 + 10.0 * rng.gen::<f64>(),
            phase: 6.0 * rng.gen::<f64>(),
        }
    }

    fn sample(&self, g: &AgeGrid) -> Field1D {
        g.sample(|a| {
            self.amp
                * smooth_bump(a, self.lo, self.hi)
                * (1.0 + self.wiggle * (a / self.freq + self.phase).sin())
        })
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = [64usize, 128, 256];
    let grids: Vec<(AgeGrid, EpiParams, SurvivalWeights)> = sizes
        .iter()
        .map(|&n| {
            let g = AgeGrid::new(ADJ_A_MAX, n).unwrap();
            let p = adjoint_params(&g);
            let w = SurvivalWeights::from_params(&g, &p);
            (g, p, w)
        })
        .collect();
    let steps: Vec<f64> = grids.iter().map(|(g, _, _)| g.da()).collect();
    let mut worst_ratio = 0.0f64;
    let mut family = vec![0.0f64; sizes.len()];
    let mut pair_orders = Vec::new();
    for _ in 0..50 {
        let hs: [BumpSpec; 3] = std::array::from_fn(|_| BumpSpec::random(&mut rng));
        let ps: [BumpSpec; 3] = std::array::from_fn(|_| BumpSpec::random(&mut rng));
        let mut errs = Vec::new();
        for (k, (g, p, w)) in grids.iter().enumerate() {
            let h = Triple::new(hs[0].sample(g), hs[1].sample(g), hs[2].sample(g));
            let q = Triple::new(ps[0].sample(g), ps[1].sample(g), ps[2].sample(g));
            let lhs = inner_h(g, &apply_a(g, &h, p), &q, w);
            let rhs = inner_h(g, &h, &apply_a_star(g, &q, p, w), w);
            let rel = (lhs - rhs).abs() / (norm_h(g, &h, w) * norm_h(g, &q, w));
            worst_ratio = worst_ratio.max(rel / g.da());
            family[k] = family[k].max(rel);
            errs.push(rel);
        }
        pair_orders.push(observed_order(&steps, &errs));
    }
    // The leading defect has no fixed sign, so a single pair can sit near a
    // zero of it; the order is measured on the worst residual over the family.
    let order = observed_order(&steps, &family);
    pair_orders.sort_by(f64::total_cmp);
    let below = pair_orders.iter().filter(|&&o| o < 0.9).count();
    Outcome::new(
        worst_ratio <= 5.0 && order >= 0.9,
        format!(
            "50 pairs: max residual / da = {worst_ratio:.3}, family order {order:.3} \
             (per pair median {:.3}, {below} below 0.9)",
            pair_orders[pair_orders.len() / 2]
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sizes = [64usize, 128, 256];
    let scenarios: Vec<Scenario> = sizes
        .iter()
        .map(|&n| smooth_scenario(n, 12.5, TargetSpec::J1))
        .collect();
    let mut min_order = f64::INFINITY;
    let mut infeasible = 0;
    for _ in 0..20 {
        let (phase, scale) = (6.0 * rng.gen::<f64>(), 0.3 + 0.7 * rng.gen::<f64>());
        for make in [
            quadratic_value as fn(&AgeGrid, f64) -> ValueFunction,
            linear_value,
        ] {
            let mut errs = Vec::new();
            let mut steps = Vec::new();
            for sc in &scenarios {
                let policy = smooth_policy(sc, phase, scale);
                let traj = sc.simulate(&policy).unwrap();
                if !traj.feasible {
                    infeasible += 1;
                }
                let v = make(&sc.grid, 0.3);
                let rep = chain_rule_residual(sc, &v, &policy, &traj, 0.03).unwrap();
                errs.push(rep.residual.abs());
                steps.push(sc.time.dt());
            }
            let o = observed_order(&steps, &errs);
            min_order = min_order.min(o);
        }
    }
    Outcome::new(
        min_order >= 0.9 && infeasible == 0,
        format!("20 policies x 2 families: min order {min_order:.3}, infeasible runs {infeasible}"),
    )
}

// 6 ------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sc = smooth_scenario(40, 10.0, TargetSpec::J1);
    let lattice = ControlLattice::uniform(4, 5);
    let mut min_gap = f64::INFINITY;
    let mut worst_ratio = 0.0f64;
    for v in [quadratic_value(&sc.grid, 0.2), linear_value(&sc.grid, 0.4)] {
        let (traj, policy) = simulate_closed_loop(&sc, &v, &lattice).unwrap();
        let own = hamiltonian_gap_profile(&sc, &v, &policy, &traj, &lattice, 0.03).unwrap();
        min_gap = own.gaps.iter().copied().fold(min_gap, f64::min);
        for _ in 0..5 {
            let random = smooth_policy(&sc, 6.0 * rng.gen::<f64>(), 0.5 + 0.5 * rng.gen::<f64>());
            let rtraj = sc.simulate(&random).unwrap();
            let other = hamiltonian_gap_profile(&sc, &v, &random, &rtraj, &lattice, 0.03).unwrap();
            min_gap = other.gaps.iter().copied().fold(min_gap, f64::min);
            let ratio = if other.integrated > 0.0 {
                own.integrated / other.integrated
            } else {
                f64::INFINITY
            };
            worst_ratio = worst_ratio.max(ratio);
        }
    }
    Outcome::new(
        min_gap >= -1e-10 && worst_ratio <= 1e-8,
        format!("min gap {min_gap:.3e}, max closed-loop / random integrated gap {worst_ratio:.3e}"),
    )
}

// 7 ------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let mut sc = quiet(20, 10.0);
    sc.initial = EpiState::new(
        sc.grid.sample(|a| 0.02 * smooth_bump(a, 2.0, 80.0)),
        sc.grid.zeros(),
        sc.grid.zeros(),
        0.0,
    );
    let (a, b) = (2.0, 1.0);
    sc.obj.utility = UtilitySpec::Quadratic { u0: 0.0, a, b };
    sc.c_max = 3.0;
    sc.k0 = 100.0;
    let cfg = OptimizerConfig {
        active: PerChannel {
            c: true,
            theta: false,
            eta: false,
        },
        tolerance: 1e-14,
        max_iters: 200,
        jitter: 0.1,
        seed: 42,
        ..OptimizerConfig::default()
    };
    let start = BlockPolicy::uniform(1, 1, 0.5, 1.0, 0.0);
    let first = optimize(&sc, &start, &cfg, None).unwrap();
    let second = optimize(&sc, &start, &cfg, None).unwrap();
    let c_star = a / b;
    let rel = (first.blocks.c[0] - c_star).abs() / c_star;
    let monotone = first.objective_trace.windows(2).all(|w| w[1] >= w[0]);
    let identical = first == second
        && first.objective.to_bits() == second.objective.to_bits()
        && first.blocks.c[0].to_bits() == second.blocks.c[0].to_bits();
    Outcome::new(
        rel <= 1e-3 && monotone && identical,
        format!(
            "c = {:.8} vs {c_star} (rel {rel:.2e}), monotone {monotone}, bitwise reproducible {identical}",
            first.blocks.c[0]
        ),
    )
}

// 8 ------------------------------------------------------------------------

/// Largest relative defect of `Y = M + C + D` along a trajectory, with `M`
/// read off the capital path and `L`, `C`, `D` summed here.
fn budget_defect(sc: &Scenario, policy: &PolicyField, traj: &Trajectory) -> f64 {
    let g = &sc.grid;
    let dt = sc.time.dt();
    let mut worst = 0.0f64;
    for k in 0..traj.n_steps() {
        let st = &traj.states[k];
        let (s, i, r) = (st.s.values(), st.i.values(), st.r.values());
        let z = policy.slice(k);
        let mut labor = 0.0;
        let mut cons = 0.0;
        let mut load = 0.0;
        for j in 0..g.len() {
            labor += (s[j] + r[j]) * sc.econ.alpha.get(j) * sc.econ.phi.eval(z.theta[j]);
            cons += z.c[j] * (s[j] + i[j] + r[j]);
            let level = match sc.econ.testing_cost_basis {
                economy::TestingCostBasis::Eta => z.eta[j],
                economy::TestingCostBasis::Complement => 1.0 - z.eta[j],
            };
            load += level * i[j] * sc.econ.e.get(j);
        }
        let (labor, cons, load) = (labor * g.da(), cons * g.da(), load * g.da());
        let kk = traj.capital[k];
        let y = sc.econ.production.output(kk, labor);
        let d = sc.econ.congestion.eval(load);
        let m = (traj.capital[k + 1] - kk) / dt + sc.econ.delta * kk;
        let scale = y
            .abs()
            .max(cons.abs())
            .max(d.abs())
            .max(m.abs())
            .max(1e-300);
        worst = worst.max((y - (m + cons + d)).abs() / scale);
    }
    worst
}

fn criterion_8() -> Outcome {
    let mut cases: Vec<(Scenario, PolicyField)> = Vec::new();
    for target in [TargetSpec::J1, TargetSpec::J4, TargetSpec::J6] {
        let sc = smooth_scenario(50, 10.0, target);
        let p = smooth_policy(&sc, 0.4, 0.9);
        cases.push((sc, p));
    }
    let mut lin = smooth_scenario(50, 10.0, TargetSpec::J5);
    lin.econ.production = ProductionSpec::Linear {
        a_k: 0.03,
        a_l: 0.5,
    };
    lin.econ.congestion = CongestionSpec::Linear { d1: 2.0 };
    lin.econ.testing_cost_basis = economy::TestingCostBasis::Complement;
    let p = smooth_policy(&lin, 2.0, 0.6);
    cases.push((lin, p));
    let mut cd = smooth_scenario(50, 10.0, TargetSpec::J2);
    cd.econ.production = ProductionSpec::CobbDouglas {
        a: 1.0,
        omega: 0.33,
    };
    let p = smooth_policy(&cd, 1.1, 1.0);
    cases.push((cd, p));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        cases.push(random_scenario(&mut rng));
    }
    let mut worst = 0.0f64;
    for (sc, policy) in &cases {
        let traj = sc.simulate(policy).unwrap();
        worst = worst.max(budget_defect(sc, policy, &traj));
    }
    Outcome::new(
        worst <= 1e-12,
        format!(
            "{} scenarios: max relative budget defect {worst:.2e}",
            cases.len()
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for target in [
        TargetSpec::J1,
        TargetSpec::J4,
        TargetSpec::J5,
        TargetSpec::J6,
    ] {
        let sc = smooth_scenario(20, 10.0, target);
        let blocks = BlockPolicy {
            age_blocks: 2,
            time_blocks: 2,
            c: vec![0.4, 0.3, 0.35, 0.45],
            theta: vec![0.6, 0.8, 0.5, 0.7],
            eta: vec![0.5, 0.4, 0.6, 0.3],
        };
        let central = OptimizerConfig {
            age_blocks: 2,
            time_blocks: 2,
            fd_epsilon: PerChannel::splat(1e-5),
            ..OptimizerConfig::default()
        };
        let forward = OptimizerConfig {
            gradient: GradientMode::Forward,
            ..central.clone()
        };
        let gc = fd_gradient(&sc, &blocks, &central).unwrap();
        let gf = fd_gradient(&sc, &blocks, &forward).unwrap();
        let scale = gc.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = gc
            .values
            .iter()
            .zip(&gf.values)
            .fold(0.0f64, |m, (c, f)| m.max((c - f).abs()));
        worst = worst.max(diff / scale);
        cases += 1;
    }
    Outcome::new(
        worst <= 1e-3,
        format!("{cases} targets: max |central - forward| / max |central| = {worst:.2e}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("1 McKendrick analytic solution", criterion_1),
        ("2 homogeneous SIR reduction", criterion_2),
        ("3 positivity and conservation", criterion_3),
        ("4 adjoint identity", criterion_4),
        ("5 chain-rule residual order", criterion_5),
        ("6 Hamiltonian gap certificate", criterion_6),
        ("7 optimizer sanity", criterion_7),
        ("8 budget identity", criterion_8),
        ("9 gradient validity", criterion_9),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (name, run) in criteria {
        let start = Instant::now();
        let out = run();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(
            err,
            "acceptance {tag} [{name}] {} ({:.2}s)",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
