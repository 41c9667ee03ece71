use serde::{Deserialize, Serialize};

use crate::assets::Fleet;
use crate::conic::{
    assemble_dynamics, assemble_feasible_set, extract_flows, solve, ConicProgram, LinExpr, RowKind,
    RowTag, Sense, SolveStatus, SolverReport, SolverSettings, VariableIndex, Window,
};
use crate::distflow::{FlowSolution, FlowStep};
use crate::error::{Error, Result};
use crate::network::NetworkModel;

use super::config::{ControllerContext, ResolvedWeights};

/// Periodic operating point of the network without flexible loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub period: usize,
    /// `e_bat[t][b]` for `t` in `0..=period`; the last entry closes the cycle.
    pub e_bat: Vec<Vec<f64>>,
    /// `p_bat[t][b]`.
    pub p_bat: Vec<Vec<f64>>,
    /// `q_g[t][bus]`, zero at buses without a capacitor.
    pub q_g: Vec<Vec<f64>>,
    pub flows: FlowSolution,
    pub objective: f64,
    pub max_relaxation_gap: f64,
}

impl ReferenceTrajectory {
    pub fn e_hat(&self, battery: usize, t: usize) -> f64 {
        self.e_bat[t % self.period][battery]
    }

    pub fn p_hat(&self, battery: usize, t: usize) -> f64 {
        self.p_bat[t % self.period][battery]
    }

    pub fn q_hat(&self, bus: usize, t: usize) -> f64 {
        self.q_g[t % self.period][bus]
    }

    pub fn flow(&self, t: usize) -> &FlowStep {
        &self.flows.steps[t % self.period]
    }

    /// Largest `|e(period) - e(0)|` over batteries.
    pub fn periodicity_error(&self) -> f64 {
        let first = &self.e_bat[0];
        let last = &self.e_bat[self.period];
        first
            .iter()
            .zip(last)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Adds the voltage tracking and loss terms shared by both stages.
pub(crate) fn add_network_costs(
    prog: &mut ConicProgram,
    model: &NetworkModel,
    idx: &VariableIndex,
    voltage_weight: &[f64],
    nu_nom: f64,
    loss_weight: f64,
) {
    for s in 0..idx.horizon() {
        for bus in 1..model.n_buses() {
            let w = voltage_weight[bus - 1];
            prog.add_square(&LinExpr::var(idx.nu(bus, s)).plus(-nu_nom), w);
        }
        if loss_weight > 0.0 {
            for (li, line) in model.lines().iter().enumerate() {
                prog.add_linear_cost(idx.l(li, s), loss_weight * line.r_pu);
            }
        }
    }
}

fn add_control_costs(prog: &mut ConicProgram, model: &NetworkModel, idx: &VariableIndex, w: &ResolvedWeights) {
    let caps = model.capacitor_buses();
    for s in 0..idx.horizon() {
        for (c, &bus) in caps.iter().enumerate() {
            let col = idx.qg(bus, s).expect("capacitor bus has a column");
            prog.add_square(&LinExpr::var(col), w.t1[c]);
        }
        for b in 0..model.batteries().len() {
            prog.add_square(&LinExpr::var(idx.pbat(b, s)), w.t1[caps.len() + b]);
        }
    }
}

/// Assembles the periodic reference program over one period.
pub fn build_stage1_program(model: &NetworkModel, ctx: &ControllerContext) -> Result<(ConicProgram, VariableIndex)> {
    let n_r = ctx.horizon.n_r;
    let fleet = Fleet::new();
    let window = Window {
        start: 0,
        steps: n_r,
        dt: ctx.dt(),
        wrap: false,
        fixed_initial: false,
    };
    let deferrable = vec![vec![0.0; model.n_buses()]; n_r];
    let (mut prog, idx) = assemble_feasible_set(model, &fleet, &window, &deferrable)?;
    prog.rows.extend(assemble_dynamics(&fleet, model, &idx, ctx.dt()));
    for b in 0..model.batteries().len() {
        prog.add_row(
            LinExpr::var(idx.e_bat(b, n_r)).add(idx.e_bat(b, 0), -1.0),
            Sense::Eq,
            RowTag {
                kind: RowKind::Periodicity,
                element: b,
                step: n_r,
            },
        );
    }
    add_control_costs(&mut prog, model, &idx, &ctx.weights);
    add_network_costs(
        &mut prog,
        model,
        &idx,
        &ctx.weights.t2,
        ctx.nu_nom,
        ctx.weights.loss_weight,
    );
    Ok((prog, idx))
}

/// Solves the periodic reference problem without flexible loads.
pub fn solve_stage1(model: &NetworkModel, ctx: &ControllerContext) -> Result<ReferenceTrajectory> {
    let (prog, idx) = build_stage1_program(model, ctx)?;
    let report = solve(&prog, &SolverSettings::default());
    reference_from_report(model, &prog, &idx, report)
}

fn reference_from_report(
    model: &NetworkModel,
    prog: &ConicProgram,
    idx: &VariableIndex,
    report: SolverReport,
) -> Result<ReferenceTrajectory> {
    match &report.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Stage1Infeasible("infeasible".into())),
        SolveStatus::NumericalFailure { code } => {
            return Err(Error::Solver {
                code: code.clone(),
                vars: prog.n_vars(),
                rows: prog.rows.len(),
                cones: prog.cones.len(),
            })
        }
    }
    let n_r = idx.horizon();
    let x = &report.x;
    let nb = model.batteries().len();
    let e_bat = (0..=n_r)
        .map(|t| (0..nb).map(|b| x[idx.e_bat(b, t)]).collect())
        .collect();
    let p_bat = (0..n_r)
        .map(|t| (0..nb).map(|b| x[idx.pbat(b, t)]).collect())
        .collect();
    let q_g = (0..n_r)
        .map(|t| {
            (0..model.n_buses())
                .map(|bus| idx.qg(bus, t).map_or(0.0, |c| x[c]))
                .collect()
        })
        .collect();
    Ok(ReferenceTrajectory {
        period: n_r,
        e_bat,
        p_bat,
        q_g,
        flows: extract_flows(model, idx, x),
        objective: report.objective,
        max_relaxation_gap: report.max_relaxation_gap,
    })
}
