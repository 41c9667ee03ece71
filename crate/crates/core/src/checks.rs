//! Diagnostic harnesses shared by the CLI and the acceptance tests.

use serde::Serialize;

use crate::assets::Fleet;
use crate::conic::{
    assemble_feasible_set, deferrable_injections, extract_flows, solve, SolverReport,
    SolverSettings, Window,
};
use crate::controller::{ControllerContext, ReferenceTrajectory};
use crate::distflow::{solve_exact_distflow, BusInjections, FlowStep, SweepOptions};
use crate::error::{Error, Result};
use crate::fixtures::random_radial_case;
use crate::network::NetworkModel;
use crate::scenario::{gen_scenario, GenParams};
use crate::simulator::{run_with_reference, SimulationOptions};

/// Relaxed single-step power flow for the forecast at step 0, with losses as the
/// only cost. Every control is absent, so the result is a pure flow solution.
pub fn relaxed_power_flow(model: &NetworkModel, settings: &SolverSettings) -> Result<(FlowStep, SolverReport)> {
    let window = Window {
        start: 0,
        steps: 1,
        dt: 1.0,
        wrap: true,
        fixed_initial: true,
    };
    let fleet = Fleet::new();
    let def = deferrable_injections(model, &fleet, &window);
    let (mut prog, idx) = assemble_feasible_set(model, &fleet, &window, &def)?;
    for (li, line) in model.lines().iter().enumerate() {
        prog.add_linear_cost(idx.l(li, 0), line.r_pu);
    }
    let report = solve(&prog, settings);
    if !report.status.is_optimal() {
        return Err(Error::Solver {
            code: format!("{:?}", report.status),
            vars: prog.n_vars(),
            rows: prog.rows.len(),
            cones: prog.cones.len(),
        });
    }
    let flow = extract_flows(model, &idx, &report.x).steps.remove(0);
    Ok((flow, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub seed: u64,
    pub buses: usize,
    /// Largest `|nu_relaxed - nu_exact|` over buses.
    pub max_nu_error: f64,
    pub relaxation_gap: f64,
}

/// Compares the relaxed flow against the exact sweep on random radial feeders.
pub fn oracle_agreement(seeds: impl IntoIterator<Item = u64>, max_buses: usize) -> Result<Vec<OracleCase>> {
    let settings = SolverSettings::default();
    seeds
        .into_iter()
        .map(|seed| {
            let (model, inj): (NetworkModel, BusInjections) = random_radial_case(seed, max_buses);
            let exact = solve_exact_distflow(&model, &inj, SweepOptions::default())?;
            let (relaxed, report) = relaxed_power_flow(&model, &settings)?;
            let max_nu_error = relaxed
                .nu
                .iter()
                .zip(&exact.nu)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(OracleCase {
                seed,
                buses: model.n_buses(),
                max_nu_error,
                relaxation_gap: report.max_relaxation_gap,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub seed: u64,
    pub requests: usize,
    pub accepted: usize,
    pub deferred: usize,
    /// `None` when the run completed; otherwise the error that stopped it.
    pub failure: Option<String>,
    pub infeasible: bool,
    pub max_relaxation_gap: f64,
    pub max_candidate_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub scenarios: usize,
    pub steps: usize,
    pub infeasible_steps: usize,
    pub other_failures: usize,
    pub outcomes: Vec<ScenarioOutcome>,
}

/// Runs `count` generated scenarios (seeds `base_seed..base_seed + count`) through
/// the closed loop and counts stage-2 infeasibilities.
pub fn recursive_feasibility(
    model: &NetworkModel,
    ctx: &ControllerContext,
    reference: &ReferenceTrajectory,
    base_seed: u64,
    count: usize,
    params: &GenParams,
) -> Result<FeasibilityReport> {
    let mut outcomes = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let seed = base_seed + i;
        let scenario = gen_scenario(&GenParams {
            seed,
            dt_hours: ctx.dt(),
            ..params.clone()
        })?;
        let requests = scenario.requests.len();
        let options = SimulationOptions {
            check_candidates: true,
            audit_delays: false,
        };
        let outcome = match run_with_reference(model, ctx, reference, &scenario, options) {
            Ok((_, m)) => ScenarioOutcome {
                seed,
                requests,
                accepted: m.accepted,
                deferred: m.deferred_requests,
                failure: None,
                infeasible: false,
                max_relaxation_gap: m.max_relaxation_gap,
                max_candidate_residual: m.max_candidate_residual.unwrap_or(0.0),
            },
            Err(e) => ScenarioOutcome {
                seed,
                requests,
                accepted: 0,
                deferred: 0,
                infeasible: matches!(e, Error::Stage2Infeasible { .. }),
                failure: Some(e.to_string()),
                max_relaxation_gap: f64::NAN,
                max_candidate_residual: f64::NAN,
            },
        };
        if let Some(f) = &outcome.failure {
            log::warn!("scenario seed {seed}: {f}");
        }
        outcomes.push(outcome);
    }
    Ok(FeasibilityReport {
        scenarios: count,
        steps: params.steps,
        infeasible_steps: outcomes.iter().filter(|o| o.infeasible).count(),
        other_failures: outcomes.iter().filter(|o| o.failure.is_some() && !o.infeasible).count(),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_oracle_batch_agrees() {
        let cases = oracle_agreement(0..3, 6).unwrap();
        assert_eq!(cases.len(), 3);
        for c in cases {
            assert!(c.max_nu_error <= 1e-6, "{c:?}");
        }
    }
}
