use crate::assets::Fleet;
use crate::conic::{
    assemble_dynamics, assemble_feasible_set, deferrable_injections, extract_flows,
    pin_initial_state, solve, ConicProgram, SolveStatus, SolverReport, SolverSettings,
    VariableIndex, Window,
};
use crate::distflow::FlowSolution;
use crate::error::{Error, Result};
use crate::network::NetworkModel;

use super::config::ControllerContext;
use super::stage1::{add_network_costs, ReferenceTrajectory};
use super::terminal::{add_terminal_rows, build_terminal_set, margin_rows};

/// Measured storage state at the start of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// SOC per shapeable load, in fleet order.
    pub e_shp: Vec<f64>,
    pub e_bat: Vec<f64>,
}

impl SystemState {
    pub fn from_fleet(fleet: &Fleet, e_bat: Vec<f64>) -> Self {
        Self {
            e_shp: fleet.shapeable.iter().map(|l| l.e).collect(),
            e_bat,
        }
    }
}

/// Controls applied during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    /// Reactive injection per bus, zero without a capacitor.
    pub q_g: Vec<f64>,
    /// Grid power per shapeable load, in fleet order.
    pub c_shp: Vec<f64>,
    pub p_bat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub step: usize,
    pub index: VariableIndex,
    /// Shapeable load ids in the order used by the columns.
    pub load_ids: Vec<String>,
    pub controls: Vec<StepControl>,
    /// `e_shp[s][j]` for `s` in `0..=N`.
    pub e_shp: Vec<Vec<f64>>,
    pub e_bat: Vec<Vec<f64>>,
    pub flows: FlowSolution,
    pub objective: f64,
    pub report: SolverReport,
}

impl MpcSolution {
    pub fn first_control(&self) -> &StepControl {
        &self.controls[0]
    }
}

/// Assembles the stage-2 program at step `k` for `fleet`, with the initial state
/// pinned, the terminal set and the battery margin rows.
pub fn build_stage2_program(
    model: &NetworkModel,
    ctx: &ControllerContext,
    reference: &ReferenceTrajectory,
    fleet: &Fleet,
    state: &SystemState,
    k: usize,
) -> Result<(ConicProgram, VariableIndex)> {
    if state.e_shp.len() != fleet.shapeable.len() {
        return Err(Error::Dimension {
            what: "shapeable state",
            expected: fleet.shapeable.len(),
            got: state.e_shp.len(),
        });
    }
    if state.e_bat.len() != model.batteries().len() {
        return Err(Error::Dimension {
            what: "battery state",
            expected: model.batteries().len(),
            got: state.e_bat.len(),
        });
    }
    let n = ctx.horizon.n;
    let dt = ctx.dt();
    let window = Window {
        start: k,
        steps: n,
        dt,
        wrap: true,
        fixed_initial: true,
    };
    let deferrable = deferrable_injections(model, fleet, &window);
    let (mut prog, idx) = assemble_feasible_set(model, fleet, &window, &deferrable)?;
    prog.rows.extend(assemble_dynamics(fleet, model, &idx, dt));
    pin_initial_state(&mut prog, &idx, &state.e_shp, &state.e_bat);
    let set = build_terminal_set(model, reference, fleet, k, n, dt);
    let margins = margin_rows(model, reference, fleet, k, n, dt);
    add_terminal_rows(&mut prog, &idx, &set, &margins);

    for s in 0..n {
        let price = ctx.price.at(k + s);
        for j in 0..fleet.shapeable.len() {
            prog.add_linear_cost(idx.c(j, s), price);
        }
    }
    add_network_costs(
        &mut prog,
        model,
        &idx,
        &ctx.weights.t3,
        ctx.nu_nom,
        ctx.weights.loss_weight,
    );
    Ok((prog, idx))
}

/// Outcome of a stage-2 solve that did not fail outright.
pub enum Stage2Outcome {
    Optimal(Box<MpcSolution>),
    Infeasible,
    NumericalFailure(Error),
}

/// Solves stage-2 and classifies the result without turning infeasibility into an error.
pub fn try_stage2(
    model: &NetworkModel,
    ctx: &ControllerContext,
    reference: &ReferenceTrajectory,
    fleet: &Fleet,
    state: &SystemState,
    k: usize,
) -> Result<Stage2Outcome> {
    let (prog, idx) = build_stage2_program(model, ctx, reference, fleet, state, k)?;
    let report = solve(&prog, &SolverSettings::default());
    Ok(match &report.status {
        SolveStatus::Optimal => Stage2Outcome::Optimal(Box::new(decode_solution(
            model, fleet, k, idx, report,
        ))),
        SolveStatus::Infeasible => Stage2Outcome::Infeasible,
        SolveStatus::NumericalFailure { code } => Stage2Outcome::NumericalFailure(Error::Solver {
            code: code.clone(),
            vars: prog.n_vars(),
            rows: prog.rows.len(),
            cones: prog.cones.len(),
        }),
    })
}

/// Solves stage-2 at step `k`; infeasibility is a protocol violation.
pub fn solve_stage2(
    model: &NetworkModel,
    ctx: &ControllerContext,
    reference: &ReferenceTrajectory,
    fleet: &Fleet,
    state: &SystemState,
    k: usize,
) -> Result<MpcSolution> {
    match try_stage2(model, ctx, reference, fleet, state, k)? {
        Stage2Outcome::Optimal(sol) => Ok(*sol),
        Stage2Outcome::Infeasible => Err(Error::Stage2Infeasible { step: k }),
        Stage2Outcome::NumericalFailure(e) => Err(e),
    }
}

fn decode_solution(
    model: &NetworkModel,
    fleet: &Fleet,
    k: usize,
    idx: VariableIndex,
    report: SolverReport,
) -> MpcSolution {
    let x = &report.x;
    let h = idx.horizon();
    let m = fleet.shapeable.len();
    let nb = model.batteries().len();
    let controls = (0..h)
        .map(|s| StepControl {
            q_g: (0..model.n_buses())
                .map(|bus| idx.qg(bus, s).map_or(0.0, |c| x[c]))
                .collect(),
            c_shp: (0..m).map(|j| x[idx.c(j, s)]).collect(),
            p_bat: (0..nb).map(|b| x[idx.pbat(b, s)]).collect(),
        })
        .collect();
    let e_shp = (0..=h).map(|s| (0..m).map(|j| x[idx.e_shp(j, s)]).collect()).collect();
    let e_bat = (0..=h).map(|s| (0..nb).map(|b| x[idx.e_bat(b, s)]).collect()).collect();
    MpcSolution {
        step: k,
        load_ids: fleet.shapeable.iter().map(|l| l.id.clone()).collect(),
        controls,
        e_shp,
        e_bat,
        flows: extract_flows(model, &idx, x),
        objective: report.objective,
        index: idx,
        report,
    }
}
