//! Shifted candidate for the next step: the tail of the previous optimal sequence
//! followed by the constant-rate control at the old terminal step.

use crate::assets::Fleet;
use crate::conic::program::WorstViolation;
use crate::conic::VariableIndex;
use crate::error::{Error, Result};
use crate::network::NetworkModel;

use super::config::ControllerContext;
use super::stage1::ReferenceTrajectory;
use super::stage2::{build_stage2_program, MpcSolution, SystemState};

#[derive(Debug, Clone)]
pub struct ShiftedCandidate {
    /// Step at which the candidate starts.
    pub step: usize,
    pub index: VariableIndex,
    pub x: Vec<f64>,
    pub state: SystemState,
}

/// Builds the candidate at `prev.step + 1` for `next_fleet`, the fleet of `prev`
/// after plug-out removals and before any new admission.
pub fn construct_shifted_candidate(
    model: &NetworkModel,
    ctx: &ControllerContext,
    reference: &ReferenceTrajectory,
    prev: &MpcSolution,
    next_fleet: &Fleet,
) -> Result<ShiftedCandidate> {
    let n = ctx.horizon.n;
    let dt = ctx.dt();
    let old = &prev.index;
    let idx = VariableIndex::new(model, next_fleet.shapeable.len(), n);
    let mut x = vec![0.0; idx.num_vars()];
    let t = prev.step + n;

    let mut map = Vec::with_capacity(next_fleet.shapeable.len());
    for load in &next_fleet.shapeable {
        let j = prev
            .load_ids
            .iter()
            .position(|id| *id == load.id)
            .ok_or_else(|| Error::Config(format!("load {} not in previous solution", load.id)))?;
        map.push(j);
    }
    let px = &prev.report.x;
    let nb = model.batteries().len();

    for s in 0..n - 1 {
        for li in 0..model.n_lines() {
            x[idx.p(li, s)] = px[old.p(li, s + 1)];
            x[idx.q(li, s)] = px[old.q(li, s + 1)];
            x[idx.l(li, s)] = px[old.l(li, s + 1)];
        }
        for bus in 1..model.n_buses() {
            x[idx.nu(bus, s)] = px[old.nu(bus, s + 1)];
            if let Some(c) = idx.qg(bus, s) {
                x[c] = px[old.qg(bus, s + 1).expect("same network")];
            }
        }
        for b in 0..nb {
            x[idx.pbat(b, s)] = px[old.pbat(b, s + 1)];
        }
        for (jn, &jo) in map.iter().enumerate() {
            x[idx.c(jn, s)] = px[old.c(jo, s + 1)];
        }
    }
    for s in 0..n {
        for (jn, &jo) in map.iter().enumerate() {
            x[idx.e_shp(jn, s)] = px[old.e_shp(jo, s + 1)];
        }
        for b in 0..nb {
            x[idx.e_bat(b, s)] = px[old.e_bat(b, s + 1)];
        }
    }

    // Appended step at the old terminal time.
    let last = n - 1;
    let flow = reference.flow(t);
    for li in 0..model.n_lines() {
        x[idx.p(li, last)] = flow.p[li];
        x[idx.q(li, last)] = flow.q[li];
        x[idx.l(li, last)] = flow.l[li];
    }
    for bus in 1..model.n_buses() {
        x[idx.nu(bus, last)] = flow.nu[bus];
        if let Some(c) = idx.qg(bus, last) {
            x[c] = reference.q_hat(bus, t);
        }
    }
    let p_def = next_fleet.deferrable_power(model.n_buses(), t);
    let mut shp_draw = vec![0.0; model.n_buses()];
    for (jn, load) in next_fleet.shapeable.iter().enumerate() {
        let e_t = x[idx.e_shp(jn, last)];
        let c = if t < load.k_out {
            (load.e_des - e_t) / ((load.k_out - t) as f64 * load.eta * dt)
        } else {
            if e_t < load.e_des - super::terminal::TERMINAL_TOL {
                return Err(Error::DegenerateTail {
                    load: load.id.clone(),
                    step: t,
                    soc: e_t,
                    desired: load.e_des,
                });
            }
            0.0
        };
        x[idx.c(jn, last)] = c;
        x[idx.e_shp(jn, n)] = e_t + load.eta * dt * c;
        shp_draw[load.bus] += c;
    }
    for bat in model.batteries() {
        let b = bat.id;
        let p = reference.p_hat(b, t) - p_def[bat.bus] - shp_draw[bat.bus];
        x[idx.pbat(b, last)] = p;
        x[idx.e_bat(b, n)] = x[idx.e_bat(b, last)] + dt * p;
    }

    let state = SystemState {
        e_shp: (0..map.len()).map(|j| x[idx.e_shp(j, 0)]).collect(),
        e_bat: (0..nb).map(|b| x[idx.e_bat(b, 0)]).collect(),
    };
    Ok(ShiftedCandidate {
        step: prev.step + 1,
        index: idx,
        x,
        state,
    })
}

/// Largest violation of the next-step program (feasible set, dynamics, terminal
/// set and margin rows) at the candidate.
pub fn candidate_residual(
    model: &NetworkModel,
    ctx: &ControllerContext,
    reference: &ReferenceTrajectory,
    next_fleet: &Fleet,
    candidate: &ShiftedCandidate,
) -> Result<WorstViolation> {
    let (prog, idx) = build_stage2_program(
        model,
        ctx,
        reference,
        next_fleet,
        &candidate.state,
        candidate.step,
    )?;
    debug_assert_eq!(idx, candidate.index);
    let mut worst = prog.worst_violation(&candidate.x);
    if let Some((q, e, s)) = worst
        .location
        .strip_prefix("bound on column ")
        .and_then(|c| c.parse::<usize>().ok())
        .and_then(|c| idx.decode(c))
    {
        worst.location = format!("bound on {q:?}[{e}]@{s}");
    }
    Ok(worst)
}
