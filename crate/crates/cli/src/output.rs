//! CSV and JSON writers. Floats are printed with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use epiecon::epi::Trajectory;
use epiecon::grid::{AgeGrid, TimeGrid};
use epiecon::optimizer::BlockPolicy;
use serde::Serialize;

use crate::CliError;

pub const TIMESERIES_HEADER: &str = "t,S,I,R,N,Xi,K,L,Y,C,Dcost,deaths_flow";

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn timeseries_csv(traj: &Trajectory) -> String {
    let mut out = String::from(TIMESERIES_HEADER);
    out.push('\n');
    for a in &traj.aggregates {
        let row = [
            a.time,
            a.susceptible,
            a.infected,
            a.recovered,
            a.population,
            a.critical_load,
            a.capital,
            a.labor,
            a.output,
            a.consumption,
            a.testing_cost,
            a.deaths_flow,
        ];
        let cells: Vec<String> = row.iter().map(|&x| num(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Age-resolved densities at the nodes nearest to `times`.
pub fn snapshots_csv(traj: &Trajectory, grid: &AgeGrid, times: &[f64]) -> String {
    let mut out = String::from("t,a,s,i,r\n");
    for &t in times {
        let k = traj.time.node_of(t);
        let state = &traj.states[k];
        for j in 0..grid.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                num(traj.time.time(k)),
                num(grid.node(j)),
                num(state.s.get(j)),
                num(state.i.get(j)),
                num(state.r.get(j))
            );
        }
    }
    out
}

pub fn block_policy_csv(blocks: &BlockPolicy, time: &TimeGrid, grid: &AgeGrid) -> String {
    let mut out = String::from("time_block,age_block,t_start,t_end,a_start,a_end,c,theta,eta\n");
    let steps = time.n_steps().max(1) / blocks.time_blocks;
    let cells = grid.len() / blocks.age_blocks;
    for tb in 0..blocks.time_blocks {
        for ab in 0..blocks.age_blocks {
            let b = tb * blocks.age_blocks + ab;
            let _ = writeln!(
                out,
                "{tb},{ab},{},{},{},{},{},{},{}",
                num(time.t0() + (tb * steps) as f64 * time.dt()),
                num(time.t0() + ((tb + 1) * steps) as f64 * time.dt()),
                num((ab * cells) as f64 * grid.da()),
                num(((ab + 1) * cells) as f64 * grid.da()),
                num(blocks.c[b]),
                num(blocks.theta[b]),
                num(blocks.eta[b])
            );
        }
    }
    out
}
