use std::path::Path;

use epiecon::epi::PolicyField;
use epiecon::hamiltonian::{
    chain_rule_residual, fundamental_identity_residual, hamiltonian_gap_profile,
    simulate_closed_loop, smooth_bump, transversality_check, ChainRuleReport, GapProfile,
    IdentityReport, TransversalityReport,
};
use epiecon::hilbert::{apply_a, apply_a_star, inner_h, norm_h, Triple};
use epiecon::objectives::{Evaluation, TargetSpec};
use epiecon::optimizer::optimize as run_optimizer;
use epiecon::scenario::Scenario;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, PolicySpec, SweepAxis, SweepParam};
use crate::output::{self, num};
use crate::CliError;

#[derive(Serialize)]
struct EvaluationDoc<'a> {
    target: &'a TargetSpec,
    #[serde(flatten)]
    evaluation: Evaluation,
    final_capital: f64,
    total_deaths: f64,
}

fn evaluation_doc<'a>(
    sc: &'a Scenario,
    traj: &epiecon::epi::Trajectory,
    ev: Evaluation,
) -> EvaluationDoc<'a> {
    let dt = sc.time.dt();
    let total_deaths = traj.aggregates[..traj.n_steps()]
        .iter()
        .map(|a| a.deaths_flow * dt)
        .sum();
    EvaluationDoc {
        target: &sc.obj.target,
        evaluation: ev,
        final_capital: traj.final_capital(),
        total_deaths,
    }
}

pub fn simulate(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let sc = cfg.scenario()?;
    let policy = cfg.policy.initial.field(&sc)?;
    let traj = sc.simulate(&policy)?;
    output::write_text(&out.join("timeseries.csv"), &output::timeseries_csv(&traj))?;
    output::write_text(
        &out.join("snapshots.csv"),
        &output::snapshots_csv(&traj, &sc.grid, &cfg.output.snapshots),
    )?;
    log::info!("simulated {} steps", traj.n_steps());
    Ok(())
}

pub fn evaluate(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let sc = cfg.scenario()?;
    let policy = cfg.policy.initial.field(&sc)?;
    let (traj, ev) = sc.evaluate(&policy)?;
    let doc = evaluation_doc(&sc, &traj, ev);
    output::write_json(&out.join("evaluation.json"), &doc)?;
    println!("{:<14} {:>24}", "quantity", "value");
    for (name, v) in [
        ("J", ev.value),
        ("score", ev.score),
        ("violation", ev.violation),
        ("min K", ev.min_capital),
        ("tail bound", ev.tail_bound),
        ("final K", doc.final_capital),
        ("deaths", doc.total_deaths),
    ] {
        println!("{name:<14} {:>24}", num(v));
    }
    println!("{:<14} {:>24}", "feasible", ev.feasible);
    Ok(())
}

pub fn optimize(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let sc = cfg.scenario()?;
    let opt = &cfg.optimizer;
    let start = cfg.policy.initial.blocks(opt.age_blocks, opt.time_blocks)?;
    let v = cfg.value_function(&sc.grid)?;
    let lattice = &cfg.verification.lattice;
    let report = run_optimizer(&sc, &start, opt, Some((&v, lattice)))?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let traj = sc.simulate(&report.policy)?;
    output::write_json(&out.join("optim_report.json"), &report)?;
    output::write_text(
        &out.join("best_policy.csv"),
        &output::block_policy_csv(&report.blocks, &sc.time, &sc.grid),
    )?;
    output::write_text(&out.join("timeseries.csv"), &output::timeseries_csv(&traj))?;
    println!(
        "objective {} -> {} in {} iterations ({})",
        num(report.objective_trace[0]),
        num(report.objective),
        report.iterations,
        report.stop_reason
    );
    Ok(())
}

#[derive(Serialize)]
struct ConvergenceRow {
    n_age: usize,
    step: f64,
    adjoint_residual: f64,
    chain_rule: ChainRuleReport,
}

#[derive(Serialize)]
struct Diagnostics {
    convergence: Vec<ConvergenceRow>,
    adjoint_order: Option<f64>,
    chain_rule_order: Option<f64>,
    identity: IdentityReport,
    gap_profile: GapProfile,
    min_gap: f64,
    closed_loop_gap: f64,
    transversality: TransversalityReport,
}

/// Minus the least-squares slope of `log err` against `log h`, when all errors are positive.
fn observed_order(steps: &[f64], errs: &[f64]) -> Option<f64> {
    if steps.len() < 2 || errs.iter().any(|&e| !(e > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let m = xs.len() as f64;
    let (xm, ym) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let den: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    Some(num / den)
}

/// Relative adjointness defect on a fixed pair of smooth, compactly supported fields.
fn adjoint_residual(sc: &Scenario) -> f64 {
    let g = &sc.grid;
    let a = g.a_max();
    let bump = |lo: f64, hi: f64, k: f64| g.sample(|x| k * smooth_bump(x, lo * a, hi * a));
    let h = Triple::new(
        bump(0.05, 0.8, 1.0),
        bump(0.1, 0.6, 0.5),
        bump(0.2, 0.9, 0.8),
    );
    let p = Triple::new(
        bump(0.1, 0.9, 0.7),
        bump(0.05, 0.7, 1.2),
        bump(0.15, 0.85, 0.4),
    );
    let w = sc.weights();
    let lhs = inner_h(g, &apply_a(g, &h, &sc.epi), &p, &w);
    let rhs = inner_h(g, &h, &apply_a_star(g, &p, &sc.epi, &w), &w);
    (lhs - rhs).abs() / (norm_h(g, &h, &w) * norm_h(g, &p, &w))
}

pub fn check(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let sc = cfg.scenario()?;
    let v = cfg.value_function(&sc.grid)?;
    let lattice = &cfg.verification.lattice;
    let rho = sc.discount_rate();

    let mut convergence = Vec::new();
    let mut n = cfg.grid.n_age;
    for _ in 0..cfg.verification.refinements.max(1) {
        let fine = cfg.scenario_with(n)?;
        let vf = cfg.value_function(&fine.grid)?;
        let policy = cfg.policy.initial.field(&fine)?;
        let traj = fine.simulate(&policy)?;
        convergence.push(ConvergenceRow {
            n_age: n,
            step: fine.grid.da(),
            adjoint_residual: adjoint_residual(&fine),
            chain_rule: chain_rule_residual(&fine, &vf, &policy, &traj, rho)?,
        });
        n *= 2;
    }
    let steps: Vec<f64> = convergence.iter().map(|r| r.step).collect();
    let adj: Vec<f64> = convergence.iter().map(|r| r.adjoint_residual).collect();
    let chain: Vec<f64> = convergence
        .iter()
        .map(|r| r.chain_rule.residual.abs())
        .collect();

    let policy = cfg.policy.initial.field(&sc)?;
    let traj = sc.simulate(&policy)?;
    let identity = fundamental_identity_residual(&sc, &v, &policy, &traj, lattice)?;
    let gap_profile = hamiltonian_gap_profile(&sc, &v, &policy, &traj, lattice, rho)?;
    let min_gap = gap_profile
        .gaps
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let (cl_traj, cl_policy) = simulate_closed_loop(&sc, &v, lattice)?;
    let closed_loop_gap =
        hamiltonian_gap_profile(&sc, &v, &cl_policy, &cl_traj, lattice, rho)?.integrated;
    let horizon = cfg
        .verification
        .transversality_horizon
        .unwrap_or(cfg.grid.t_end - cfg.grid.t0);
    let spec = cfg.policy.initial.clone();
    let transversality = transversality_check(&sc, &v, horizon, |time| {
        // the ladder changes the horizon, so block policies fall back to their time-block-0 values
        let mut s = sc.clone();
        s.time = *time;
        spec.field(&s)
            .or_else(|_| first_row_policy(&spec, &s))
            .unwrap_or_else(|_| PolicyField::laissez_faire(time, &sc.grid, 0.0))
    })?;

    let mut table = String::from("n_age,step,adjoint_residual,chain_rule_residual\n");
    for r in &convergence {
        table.push_str(&format!(
            "{},{},{},{}\n",
            r.n_age,
            num(r.step),
            num(r.adjoint_residual),
            num(r.chain_rule.residual)
        ));
    }
    output::write_text(&out.join("convergence.csv"), &table)?;
    let doc = Diagnostics {
        adjoint_order: observed_order(&steps, &adj),
        chain_rule_order: observed_order(&steps, &chain),
        convergence,
        identity,
        gap_profile,
        min_gap,
        closed_loop_gap,
        transversality,
    };
    output::write_json(&out.join("diagnostics.json"), &doc)?;
    println!("adjoint order      {:?}", doc.adjoint_order);
    println!("chain-rule order   {:?}", doc.chain_rule_order);
    println!("identity residual  {}", num(doc.identity.residual));
    println!("min gap            {}", num(doc.min_gap));
    println!("integrated gap     {}", num(doc.gap_profile.integrated));
    println!("closed-loop gap    {}", num(doc.closed_loop_gap));
    println!(
        "transversality     decaying = {}",
        doc.transversality.decaying
    );
    Ok(())
}

fn first_row_policy(spec: &PolicySpec, sc: &Scenario) -> Result<PolicyField, CliError> {
    let (ab, tb) = spec.shape();
    let blocks = spec.blocks(ab, tb)?;
    let row = |v: &[f64]| v[..ab].to_vec();
    let first = epiecon::optimizer::BlockPolicy {
        age_blocks: ab,
        time_blocks: 1,
        c: row(&blocks.c),
        theta: row(&blocks.theta),
        eta: row(&blocks.eta),
    };
    Ok(first.to_field(&sc.time, &sc.grid))
}

fn with_param(cfg: &Config, param: SweepParam, value: f64) -> Config {
    let mut out = cfg.clone();
    let set = |spec: &mut PolicySpec, which: SweepParam| {
        let (c, theta, eta) = match spec {
            PolicySpec::LaissezFaire { c } => (*c, 1.0, 1.0),
            PolicySpec::FullLockdown { c } => (*c, 0.0, 1.0),
            PolicySpec::Uniform { c, theta, eta } => (*c, *theta, *eta),
            PolicySpec::Blocks { c, theta, eta, .. } => {
                let target = match which {
                    SweepParam::Theta => theta,
                    SweepParam::Eta => eta,
                    _ => c,
                };
                target.iter_mut().for_each(|x| *x = value);
                return;
            }
        };
        *spec = match which {
            SweepParam::Theta => PolicySpec::Uniform {
                c,
                theta: value,
                eta,
            },
            SweepParam::Eta => PolicySpec::Uniform {
                c,
                theta,
                eta: value,
            },
            _ => PolicySpec::Uniform {
                c: value,
                theta,
                eta,
            },
        };
    };
    match param {
        SweepParam::Theta | SweepParam::Eta | SweepParam::C => set(&mut out.policy.initial, param),
        SweepParam::K0 => out.economy.k0 = value,
        SweepParam::Delta => out.economy.delta = value,
        SweepParam::Rho => out.objective.rho = value,
    }
    out
}

struct SweepPoint {
    x: f64,
    y: Option<f64>,
    result: Result<Evaluation, String>,
}

pub fn sweep(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep: block missing".into()))?;
    let check_axis = |axis: &SweepAxis, name: &str| {
        if axis.values.is_empty() {
            Err(CliError::Config(format!(
                "sweep.{name}.values must not be empty"
            )))
        } else {
            Ok(())
        }
    };
    check_axis(&spec.x, "x")?;
    let ys: Vec<Option<f64>> = match &spec.y {
        Some(axis) => {
            check_axis(axis, "y")?;
            axis.values.iter().map(|&v| Some(v)).collect()
        }
        None => vec![None],
    };
    let points: Vec<(f64, Option<f64>)> = spec
        .x
        .values
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
        .collect();

    // build every scenario first so config errors surface before any work
    let mut jobs = Vec::with_capacity(points.len());
    for &(x, y) in &points {
        let mut c = with_param(cfg, spec.x.param, x);
        if let (Some(axis), Some(y)) = (&spec.y, y) {
            c = with_param(&c, axis.param, y);
        }
        let sc = c.scenario()?;
        let policy = c.policy.initial.field(&sc)?;
        jobs.push((x, y, sc, policy));
    }
    let results: Vec<SweepPoint> = jobs
        .par_iter()
        .map(|(x, y, sc, policy)| SweepPoint {
            x: *x,
            y: *y,
            result: sc
                .evaluate(policy)
                .map(|(_, ev)| ev)
                .map_err(|e| e.to_string()),
        })
        .collect();

    let y_name = spec.y.as_ref().map(|a| a.param.name());
    let mut csv = String::from(spec.x.param.name());
    if let Some(n) = y_name {
        csv.push(',');
        csv.push_str(n);
    }
    csv.push_str(",value,score,feasible,violation,status\n");
    for p in &results {
        csv.push_str(&num(p.x));
        if let Some(y) = p.y {
            csv.push(',');
            csv.push_str(&num(y));
        }
        match &p.result {
            Ok(ev) => csv.push_str(&format!(
                ",{},{},{},{},ok\n",
                num(ev.value),
                num(ev.score),
                ev.feasible,
                num(ev.violation)
            )),
            Err(e) => {
                log::warn!("sweep point x = {}: {e}", p.x);
                csv.push_str(",NaN,NaN,false,NaN,error\n");
            }
        }
    }
    output::write_text(&out.join("sweep.csv"), &csv)?;

    if let Some(axis) = &spec.y {
        // rows follow x, columns follow y
        let mut m = format!("{}\\{}", spec.x.param.name(), axis.param.name());
        for &y in &axis.values {
            m.push(',');
            m.push_str(&num(y));
        }
        m.push('\n');
        for (row, &x) in results.chunks(axis.values.len()).zip(&spec.x.values) {
            m.push_str(&num(x));
            for p in row {
                m.push(',');
                m.push_str(
                    &p.result
                        .as_ref()
                        .map(|ev| num(ev.value))
                        .unwrap_or_else(|_| "NaN".into()),
                );
            }
            m.push('\n');
        }
        output::write_text(&out.join("sweep_matrix.csv"), &m)?;
    }
    let failed = results.iter().filter(|p| p.result.is_err()).count();
    println!("{} points evaluated, {failed} failed", results.len());
    Ok(())
}
