//! Direct policy search: projected gradient ascent over block-constant
//! control surfaces, with a quadratic penalty on `K < 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epi::PolicyField;
use crate::error::{ModelError, Result};
use crate::grid::{AgeGrid, Field2D, TimeGrid};
use crate::hamiltonian::{hamiltonian_gap_profile, ControlLattice, TestValueFunction};
use crate::objectives::Evaluation;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Forward,
    Central,
}

/// Per-channel values (`c`, `theta`, `eta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerChannel<T> {
    pub c: T,
    pub theta: T,
    pub eta: T,
}

impl<T: Copy> PerChannel<T> {
    pub fn splat(v: T) -> Self {
        Self {
            c: v,
            theta: v,
            eta: v,
        }
    }

    fn get(&self, ch: Channel) -> T {
        match ch {
            Channel::C => self.c,
            Channel::Theta => self.theta,
            Channel::Eta => self.eta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    C,
    Theta,
    Eta,
}

const CHANNELS: [Channel; 3] = [Channel::C, Channel::Theta, Channel::Eta];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub initial_step: f64,
    /// Step multiplier after an accepted move.
    pub step_growth: f64,
    /// Step multiplier after a rejected trial.
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub max_iters: usize,
    pub gradient: GradientMode,
    pub fd_epsilon: PerChannel<f64>,
    /// Which channels are optimized; the others stay at their initial values.
    pub active: PerChannel<bool>,
    pub penalty: f64,
    pub age_blocks: usize,
    pub time_blocks: usize,
    /// Stop once an accepted step changes the objective by less than this (relative).
    pub tolerance: f64,
    pub seed: u64,
    /// Amplitude of the uniform jitter applied to the initial policy, as a fraction of each box.
    pub jitter: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            step_growth: 2.0,
            backtrack: 0.5,
            max_backtracks: 30,
            max_iters: 50,
            gradient: GradientMode::Central,
            fd_epsilon: PerChannel::splat(1e-5),
            active: PerChannel::splat(true),
            penalty: 1e6,
            age_blocks: 1,
            time_blocks: 1,
            tolerance: 1e-10,
            seed: 0,
            jitter: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, grid: &AgeGrid, time: &TimeGrid) -> Result<()> {
        let positive = [
            ("initial_step", self.initial_step),
            ("step_growth", self.step_growth),
            ("backtrack", self.backtrack),
            ("fd_epsilon.c", self.fd_epsilon.c),
            ("fd_epsilon.theta", self.fd_epsilon.theta),
            ("fd_epsilon.eta", self.fd_epsilon.eta),
            ("penalty", self.penalty),
            ("tolerance", self.tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::config(format!(
                    "optimizer.{name} must be finite and > 0"
                )));
            }
        }
        if self.backtrack >= 1.0 {
            return Err(ModelError::config("optimizer.backtrack must be < 1"));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(ModelError::config("optimizer.jitter must lie in [0,1]"));
        }
        if self.age_blocks == 0 || !grid.len().is_multiple_of(self.age_blocks) {
            return Err(ModelError::config(format!(
                "optimizer.age_blocks must divide n_age = {}",
                grid.len()
            )));
        }
        if self.time_blocks == 0 || !time.n_steps().max(1).is_multiple_of(self.time_blocks) {
            return Err(ModelError::config(format!(
                "optimizer.time_blocks must divide the number of steps = {}",
                time.n_steps()
            )));
        }
        Ok(())
    }
}

/// Controls that are constant on (time block x age block) rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPolicy {
    pub age_blocks: usize,
    pub time_blocks: usize,
    /// Row-major in time block.
    pub c: Vec<f64>,
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
}

impl BlockPolicy {
    pub fn uniform(age_blocks: usize, time_blocks: usize, c: f64, theta: f64, eta: f64) -> Self {
        let nb = age_blocks * time_blocks;
        Self {
            age_blocks,
            time_blocks,
            c: vec![c; nb],
            theta: vec![theta; nb],
            eta: vec![eta; nb],
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.age_blocks * self.time_blocks
    }

    fn channel(&self, ch: Channel) -> &[f64] {
        match ch {
            Channel::C => &self.c,
            Channel::Theta => &self.theta,
            Channel::Eta => &self.eta,
        }
    }

    fn channel_mut(&mut self, ch: Channel) -> &mut Vec<f64> {
        match ch {
            Channel::C => &mut self.c,
            Channel::Theta => &mut self.theta,
            Channel::Eta => &mut self.eta,
        }
    }

    /// Block means of a full policy (the final reporting row is ignored).
    pub fn from_field(
        policy: &PolicyField,
        time: &TimeGrid,
        grid: &AgeGrid,
        age_blocks: usize,
        time_blocks: usize,
    ) -> Self {
        let rows = time.n_steps().max(1);
        let per_time = rows / time_blocks;
        let per_age = grid.len() / age_blocks;
        let mean = |f: &Field2D, tb: usize, ab: usize| {
            let mut acc = 0.0;
            for k in tb * per_time..(tb + 1) * per_time {
                for j in ab * per_age..(ab + 1) * per_age {
                    acc += f.get(k.min(f.n_time() - 1), j);
                }
            }
            acc / (per_time * per_age) as f64
        };
        let mut out = Self::uniform(age_blocks, time_blocks, 0.0, 0.0, 0.0);
        for tb in 0..time_blocks {
            for ab in 0..age_blocks {
                let b = tb * age_blocks + ab;
                out.c[b] = mean(&policy.c, tb, ab);
                out.theta[b] = mean(&policy.theta, tb, ab);
                out.eta[b] = mean(&policy.eta, tb, ab);
            }
        }
        out
    }

    /// Expands to one value per (time node, age cell); the final node reuses the last time block.
    pub fn to_field(&self, time: &TimeGrid, grid: &AgeGrid) -> PolicyField {
        let per_time = time.n_steps().max(1) / self.time_blocks;
        let per_age = grid.len() / self.age_blocks;
        let block = |k: usize, j: usize| {
            let tb = (k / per_time).min(self.time_blocks - 1);
            tb * self.age_blocks + (j / per_age).min(self.age_blocks - 1)
        };
        let (nt, na) = (time.n_nodes(), grid.len());
        PolicyField {
            c: Field2D::from_fn(nt, na, |k, j| self.c[block(k, j)]),
            theta: Field2D::from_fn(nt, na, |k, j| self.theta[block(k, j)]),
            eta: Field2D::from_fn(nt, na, |k, j| self.eta[block(k, j)]),
        }
    }

    pub fn projected(&self, c_max: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.c {
            *v = v.clamp(0.0, c_max);
        }
        for v in out.theta.iter_mut().chain(out.eta.iter_mut()) {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }
}

/// Clamps `c` into `[0, c_max]` and `theta`, `eta` into `[0, 1]`.
pub fn project(policy: &PolicyField, c_max: f64) -> PolicyField {
    let clamp = |f: &Field2D, hi: f64| {
        Field2D::from_fn(f.n_time(), f.n_age(), |k, j| f.get(k, j).clamp(0.0, hi))
    };
    PolicyField {
        c: clamp(&policy.c, c_max),
        theta: clamp(&policy.theta, 1.0),
        eta: clamp(&policy.eta, 1.0),
    }
}

/// The penalized objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalized {
    /// `score - penalty * violation`.
    pub value: f64,
    pub evaluation: Evaluation,
}

/// `J(policy) - penalty * sum_k max(0, -K_k)^2 dt`, with `J` oriented for maximization.
pub fn penalized_objective(sc: &Scenario, policy: &PolicyField, penalty: f64) -> Result<Penalized> {
    let (_, evaluation) = sc.evaluate(policy)?;
    Ok(Penalized {
        value: evaluation.score - penalty * evaluation.violation,
        evaluation,
    })
}

fn probe(sc: &Scenario, blocks: &BlockPolicy, penalty: f64) -> Option<Penalized> {
    penalized_objective(sc, &blocks.to_field(&sc.time, &sc.grid), penalty)
        .ok()
        .filter(|p| p.value.is_finite())
}

/// Finite-difference gradient over all blocks, laid out `[c | theta | eta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub base: f64,
    /// Components whose probes failed or were non-finite (set to 0).
    pub skipped: Vec<usize>,
    /// Every successful probe violated `K >= 0`.
    pub all_probes_infeasible: bool,
}

impl Gradient {
    pub fn channel(&self, which: usize, n_blocks: usize) -> &[f64] {
        &self.values[which * n_blocks..(which + 1) * n_blocks]
    }
}

pub fn fd_gradient(sc: &Scenario, blocks: &BlockPolicy, cfg: &OptimizerConfig) -> Result<Gradient> {
    let base = penalized_objective(sc, &blocks.to_field(&sc.time, &sc.grid), cfg.penalty)?;
    let nb = blocks.n_blocks();
    let upper = PerChannel {
        c: sc.c_max,
        theta: 1.0,
        eta: 1.0,
    };
    let index: Vec<(Channel, usize)> = CHANNELS
        .iter()
        .flat_map(|&ch| (0..nb).map(move |b| (ch, b)))
        .collect();
    // (derivative, probes feasible?) per component; None when skipped
    let parts: Vec<Option<(f64, bool)>> = index
        .par_iter()
        .map(|&(ch, b)| {
            if !cfg.active.get(ch) {
                return Some((0.0, false));
            }
            let eps = cfg.fd_epsilon.get(ch);
            let x = blocks.channel(ch)[b];
            let hi = upper.get(ch);
            let shifted = |dx: f64| {
                let mut p = blocks.clone();
                p.channel_mut(ch)[b] = x + dx;
                probe(sc, &p, cfg.penalty)
            };
            let can_up = x + eps <= hi;
            let can_down = x - eps >= 0.0;
            let central = cfg.gradient == GradientMode::Central && can_up && can_down;
            if central {
                let (plus, minus) = (shifted(eps)?, shifted(-eps)?);
                let feasible = plus.evaluation.feasible || minus.evaluation.feasible;
                Some(((plus.value - minus.value) / (2.0 * eps), feasible))
            } else if can_up {
                let plus = shifted(eps)?;
                Some(((plus.value - base.value) / eps, plus.evaluation.feasible))
            } else {
                let minus = shifted(-eps)?;
                Some(((base.value - minus.value) / eps, minus.evaluation.feasible))
            }
        })
        .collect();
    let mut values = Vec::with_capacity(parts.len());
    let mut skipped = Vec::new();
    let mut any_feasible = false;
    for (i, part) in parts.into_iter().enumerate() {
        match part {
            Some((d, feasible)) => {
                values.push(d);
                any_feasible |= feasible;
            }
            None => {
                log::warn!(
                    "finite-difference probe {i} failed or was non-finite; component set to 0"
                );
                values.push(0.0);
                skipped.push(i);
            }
        }
    }
    let any_active = CHANNELS.iter().any(|&ch| cfg.active.get(ch));
    Ok(Gradient {
        values,
        base: base.value,
        skipped,
        all_probes_infeasible: any_active && !any_feasible,
    })
}

/// Hamiltonian-gap certificate of a policy against a test value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub objective_trace: Vec<f64>,
    pub violation_trace: Vec<f64>,
    pub step_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: String,
    pub initial_blocks: BlockPolicy,
    pub blocks: BlockPolicy,
    pub policy: PolicyField,
    pub evaluation: Evaluation,
    pub objective: f64,
    pub feasible: bool,
    pub gap: Option<GapCertificate>,
    pub warnings: Vec<String>,
}

fn jittered(blocks: &BlockPolicy, cfg: &OptimizerConfig, c_max: f64) -> BlockPolicy {
    if cfg.jitter == 0.0 {
        return blocks.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = blocks.clone();
    for ch in CHANNELS {
        if !cfg.active.get(ch) {
            continue;
        }
        let width = if ch == Channel::C { c_max } else { 1.0 };
        for v in out.channel_mut(ch).iter_mut() {
            *v += cfg.jitter * width * rng.gen_range(-1.0..=1.0);
        }
    }
    out.projected(c_max)
}

/// Zeroes components that would push a variable out of its box, then normalizes.
fn ascent_direction(blocks: &BlockPolicy, grad: &Gradient, c_max: f64) -> Option<Vec<f64>> {
    let nb = blocks.n_blocks();
    let mut d = grad.values.clone();
    for (w, ch) in CHANNELS.iter().enumerate() {
        let hi = if *ch == Channel::C { c_max } else { 1.0 };
        for b in 0..nb {
            let x = blocks.channel(*ch)[b];
            let g = &mut d[w * nb + b];
            if (x >= hi && *g > 0.0) || (x <= 0.0 && *g < 0.0) {
                *g = 0.0;
            }
        }
    }
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| d.iter().map(|v| v / norm).collect())
}

fn moved(blocks: &BlockPolicy, dir: &[f64], step: f64, c_max: f64) -> BlockPolicy {
    let nb = blocks.n_blocks();
    let mut out = blocks.clone();
    for (w, ch) in CHANNELS.iter().enumerate() {
        for (b, v) in out.channel_mut(*ch).iter_mut().enumerate() {
            *v += step * dir[w * nb + b];
        }
    }
    out.projected(c_max)
}

/// Projected gradient ascent with a growing / backtracking step.
///
/// Only strictly improving trials are accepted, so the objective trace is
/// nondecreasing. When `certificate` is given the report carries the
/// integrated Hamiltonian gap of the initial and final policies.
pub fn optimize(
    sc: &Scenario,
    initial: &BlockPolicy,
    cfg: &OptimizerConfig,
    certificate: Option<(&dyn TestValueFunction, &ControlLattice)>,
) -> Result<OptimReport> {
    sc.validate()?;
    cfg.validate(&sc.grid, &sc.time)?;
    if initial.age_blocks != cfg.age_blocks || initial.time_blocks != cfg.time_blocks {
        return Err(ModelError::config(
            "initial block policy does not match optimizer.age_blocks x optimizer.time_blocks",
        ));
    }
    let c_max = sc.c_max;
    let start = jittered(&initial.projected(c_max), cfg, c_max);
    let mut current = start.clone();
    let mut best = penalized_objective(sc, &current.to_field(&sc.time, &sc.grid), cfg.penalty)?;
    let mut objective_trace = vec![best.value];
    let mut violation_trace = vec![best.evaluation.violation];
    let mut step_trace = Vec::new();
    let mut warnings = Vec::new();
    let mut step = cfg.initial_step;
    let mut converged = false;
    let mut stop_reason = String::from("iteration budget exhausted");
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        let grad = fd_gradient(sc, &current, cfg)?;
        if !grad.skipped.is_empty() {
            warnings.push(format!(
                "iteration {iter}: {} gradient probes skipped",
                grad.skipped.len()
            ));
        }
        if iter == 0 && !best.evaluation.feasible && grad.all_probes_infeasible {
            return Err(ModelError::InfeasibleStart);
        }
        let Some(dir) = ascent_direction(&current, &grad, c_max) else {
            converged = true;
            stop_reason = String::from("projected gradient vanished");
            break;
        };
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..=cfg.max_backtracks {
            let trial = moved(&current, &dir, trial_step, c_max);
            if let Some(p) = probe(sc, &trial, cfg.penalty) {
                if p.value > best.value {
                    accepted = Some((trial, p));
                    break;
                }
            }
            trial_step *= cfg.backtrack;
        }
        iterations = iter + 1;
        let Some((trial, p)) = accepted else {
            converged = true;
            stop_reason = String::from("line search found no ascent");
            break;
        };
        let change = (p.value - best.value).abs() / best.value.abs().max(1.0);
        current = trial;
        best = p;
        objective_trace.push(best.value);
        violation_trace.push(best.evaluation.violation);
        step_trace.push(trial_step);
        step = trial_step * cfg.step_growth;
        if change <= cfg.tolerance {
            converged = true;
            stop_reason = String::from("relative objective change below tolerance");
            break;
        }
    }

    let policy = current.to_field(&sc.time, &sc.grid);
    let gap = match certificate {
        Some((v, lattice)) => {
            let rho = sc.discount_rate();
            let gap_of = |blocks: &BlockPolicy| -> Result<f64> {
                let field = blocks.to_field(&sc.time, &sc.grid);
                let traj = sc.simulate(&field)?;
                Ok(hamiltonian_gap_profile(sc, v, &field, &traj, lattice, rho)?.integrated)
            };
            Some(GapCertificate {
                initial: gap_of(&start)?,
                final_gap: gap_of(&current)?,
            })
        }
        None => None,
    };
    Ok(OptimReport {
        objective_trace,
        violation_trace,
        step_trace,
        iterations,
        converged,
        stop_reason,
        initial_blocks: start,
        blocks: current,
        policy,
        evaluation: best.evaluation,
        objective: best.value,
        feasible: best.evaluation.feasible,
        gap,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> (AgeGrid, TimeGrid) {
        let g = AgeGrid::new(10.0, 10).unwrap();
        let t = TimeGrid::new(&g, 0.0, 4);
        (g, t)
    }

    #[test]
    fn projection_cases() {
        let (g, t) = grid();
        let inside = PolicyField::uniform(&t, &g, 0.5, 0.3, 0.9);
        assert_eq!(project(&inside, 2.0), inside);
        let mut wild = inside.clone();
        wild.theta.set(1, 2, 1.7);
        wild.c.set(0, 0, -3.0);
        wild.eta.set(2, 3, -0.1);
        let p = project(&wild, 2.0);
        assert_eq!(p.theta.get(1, 2), 1.0);
        assert_eq!(p.c.get(0, 0), 0.0);
        assert_eq!(p.eta.get(2, 3), 0.0);
        assert_eq!(project(&p, 2.0), p);
    }

    #[test]
    fn block_expansion_round_trips() {
        let (g, t) = grid();
        let mut b = BlockPolicy::uniform(2, 2, 0.5, 0.5, 0.5);
        b.c = vec![0.1, 0.2, 0.3, 0.4];
        b.theta = vec![1.0, 0.9, 0.8, 0.7];
        let field = b.to_field(&t, &g);
        assert_eq!(field.c.get(0, 0), 0.1);
        assert_eq!(field.c.get(1, 9), 0.2);
        assert_eq!(field.c.get(2, 4), 0.3);
        assert_eq!(field.c.get(4, 5), 0.4);
        let back = BlockPolicy::from_field(&field, &t, &g, 2, 2);
        for (x, y) in back
            .c
            .iter()
            .chain(&back.theta)
            .zip(b.c.iter().chain(&b.theta))
        {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn config_rejects_uneven_blocks() {
        let (g, t) = grid();
        let mut cfg = OptimizerConfig {
            age_blocks: 3,
            ..OptimizerConfig::default()
        };
        assert!(cfg.validate(&g, &t).is_err());
        cfg.age_blocks = 5;
        cfg.time_blocks = 3;
        assert!(cfg.validate(&g, &t).is_err());
        cfg.time_blocks = 2;
        assert!(cfg.validate(&g, &t).is_ok());
    }

    #[test]
    fn ascent_direction_respects_the_box() {
        let b = BlockPolicy::uniform(1, 1, 0.0, 1.0, 0.5);
        let g = Gradient {
            values: vec![-1.0, 2.0, 3.0],
            base: 0.0,
            skipped: vec![],
            all_probes_infeasible: false,
        };
        let d = ascent_direction(&b, &g, 1.0).unwrap();
        assert_eq!(d, vec![0.0, 0.0, 1.0]);
        let g = Gradient {
            values: vec![-1.0, 2.0, 0.0],
            ..g
        };
        assert!(ascent_direction(&b, &g, 1.0).is_none());
    }

    #[test]
    fn jitter_is_seeded() {
        let b = BlockPolicy::uniform(2, 1, 0.5, 0.5, 0.5);
        let cfg = OptimizerConfig {
            jitter: 0.1,
            seed: 7,
            ..OptimizerConfig::default()
        };
        let a = jittered(&b, &cfg, 1.0);
        assert_eq!(a, jittered(&b, &cfg, 1.0));
        assert_ne!(a, b);
        let other = OptimizerConfig {
            seed: 8,
            ..cfg.clone()
        };
        assert_ne!(a, jittered(&b, &other, 1.0));
    }
}
