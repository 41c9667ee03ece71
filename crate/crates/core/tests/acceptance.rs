//! End-to-end acceptance checks on the bundled feeders. Prints one verdict line per
//! criterion and exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gridshaper::checks::{oracle_agreement, recursive_feasibility};
use gridshaper::controller::{solve_stage1, ControllerConfig, ControllerContext, ReferenceTrajectory};
use gridshaper::network::NetworkModel;
use gridshaper::scenario::{GenParams, Scenario};
use gridshaper::simulator::{
    export_trace, run_with_reference, uncontrolled_baseline, Metrics, SimulationOptions, SimulationTrace,
};

const NU_TOL: f64 = 1e-6;
const SATISFACTION_TOL: f64 = 1e-6;
const CANDIDATE_TOL: f64 = 1e-6;
const GAP_TOL: f64 = 1e-5;
const ORACLE_TOL: f64 = 1e-6;
const PERIODICITY_TOL: f64 = 1e-7;
const EVENING_RATIO: f64 = 0.85;
const RUNTIME_LIMIT_S: f64 = 120.0;
const FEASIBILITY_SEED: u64 = 7;
const FEASIBILITY_SCENARIOS: usize = 100;
const STRESS_INTENSITY: f64 = 2.0;
const AUDIT_SCENARIOS: u64 = 10;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

struct Setup {
    model: NetworkModel,
    ctx: ControllerContext,
    reference: ReferenceTrajectory,
}

fn setup(network: &str) -> Setup {
    let model = NetworkModel::from_path(&data(network)).expect("bundled network loads");
    let config = ControllerConfig::from_path(&data("default.json")).expect("bundled config loads");
    let ctx = ControllerContext::new(&model, &config, None).expect("config fits network");
    let reference = solve_stage1(&model, &ctx).expect("stage-1 solvable");
    Setup { model, ctx, reference }
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {id:>2} {name:<32} {} {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn run(s: &Setup, scenario: &Scenario, options: SimulationOptions) -> (SimulationTrace, Metrics) {
    run_with_reference(&s.model, &s.ctx, &s.reference, scenario, options).expect("closed loop completes")
}

fn main() {
    let mut report = Report { failures: 0 };
    let feeder12 = setup("feeder12.json");
    let feeder6 = setup("feeder6.json");
    let bench = Scenario::from_path(&data("benchmark.json")).unwrap();
    let all_checks = SimulationOptions {
        check_candidates: true,
        audit_delays: true,
    };

    // 1. Voltage safety on the replicated schedule.
    let started = Instant::now();
    let (trace, metrics) = run(&feeder12, &bench, all_checks);
    let elapsed = started.elapsed().as_secs_f64();
    let (lo, hi) = (feeder12.model.nu_min() - NU_TOL, feeder12.model.nu_max() + NU_TOL);
    let nus: Vec<f64> = trace.records.iter().flat_map(|r| r.flow.nu[1..].to_vec()).collect();
    let nu_min = nus.iter().copied().fold(f64::INFINITY, f64::min);
    let nu_max = nus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.line(
        1,
        "voltage safety",
        trace.records.len() == 60 && nu_min >= lo && nu_max <= hi && elapsed <= RUNTIME_LIMIT_S,
        format!(
            "nu in [{nu_min:.6}, {nu_max:.6}] over {} steps, {} of {} requests admitted, {elapsed:.1} s",
            trace.records.len(),
            metrics.accepted,
            metrics.requests
        ),
    );

    // 2. User satisfaction.
    let shp_short = trace
        .shapeable
        .iter()
        .map(|o| o.e_des - o.e_final)
        .fold(f64::NEG_INFINITY, f64::max);
    let def_short = trace
        .deferrable
        .iter()
        .map(|o| (o.required - o.delivered).abs())
        .fold(0.0, f64::max);
    let served = trace.shapeable.len() + trace.deferrable.len();
    report.line(
        2,
        "user satisfaction",
        shp_short <= SATISFACTION_TOL && def_short <= 1e-9 && trace.unfinished.is_empty() && served == metrics.accepted,
        format!(
            "{served} loads finished, worst SOC shortfall {:.2e}, worst energy mismatch {def_short:.2e}",
            shp_short.max(0.0)
        ),
    );

    // 3. Recursive feasibility over generated scenarios.
    let params = GenParams {
        steps: 60,
        intensity: STRESS_INTENSITY,
        buses: feeder6.model.batteries().iter().map(|b| b.bus).collect(),
        ..GenParams::default()
    };
    let started = Instant::now();
    let rf = recursive_feasibility(
        &feeder6.model,
        &feeder6.ctx,
        &feeder6.reference,
        FEASIBILITY_SEED,
        FEASIBILITY_SCENARIOS,
        &params,
    )
    .unwrap();
    let admitted: usize = rf.outcomes.iter().map(|o| o.accepted).sum();
    let requested: usize = rf.outcomes.iter().map(|o| o.requests).sum();
    let deferred: usize = rf.outcomes.iter().map(|o| o.deferred).sum();
    let rf_candidate = rf.outcomes.iter().map(|o| o.max_candidate_residual).fold(0.0, f64::max);
    let rf_gap = rf.outcomes.iter().map(|o| o.max_relaxation_gap).fold(0.0, f64::max);
    report.line(
        3,
        "recursive feasibility",
        rf.infeasible_steps == 0 && rf.other_failures == 0,
        format!(
            "{} infeasible steps across {} scenarios ({admitted}/{requested} admitted, {deferred} deferred, {:.1} s)",
            rf.infeasible_steps,
            rf.scenarios,
            started.elapsed().as_secs_f64()
        ),
    );

    // 4. Minimal delay, re-checked by exhaustive enumeration.
    let mut audits = trace.delay_audits.clone();
    let mut audit_gap: f64 = 0.0;
    for seed in FEASIBILITY_SEED..FEASIBILITY_SEED + AUDIT_SCENARIOS {
        let sc = gridshaper::scenario::gen_scenario(&GenParams { seed, ..params.clone() }).unwrap();
        let (t, m) = run(&feeder6, &sc, all_checks);
        audits.extend(t.delay_audits);
        audit_gap = audit_gap.max(m.max_relaxation_gap);
    }
    let non_minimal = audits.iter().filter(|a| !a.is_minimal()).count();
    let positive = audits.iter().filter(|a| a.chosen > 0).count();
    report.line(
        4,
        "minimal-delay optimality",
        non_minimal == 0 && !audits.is_empty(),
        format!("{} admitted deferrable requests audited ({positive} with delay > 0), {non_minimal} not minimal", audits.len()),
    );

    // 5. Shifted candidate feasibility at every step of the replicated run.
    let residuals: Vec<f64> = trace.records.iter().filter_map(|r| r.candidate_residual).collect();
    let worst_candidate = residuals.iter().copied().fold(0.0, f64::max);
    report.line(
        5,
        "shifted-candidate feasibility",
        residuals.len() == trace.records.len() - 1 && worst_candidate <= CANDIDATE_TOL,
        format!("{} candidates, worst residual {worst_candidate:.2e}", residuals.len()),
    );

    // 6. Relaxation exactness over every optimal solve above.
    let worst_gap = [metrics.max_relaxation_gap, rf_gap, audit_gap, feeder12.reference.max_relaxation_gap, feeder6.reference.max_relaxation_gap]
        .into_iter()
        .fold(0.0, f64::max);
    report.line(
        6,
        "relaxation exactness",
        worst_gap <= GAP_TOL && rf_candidate <= CANDIDATE_TOL,
        format!("worst relative gap {worst_gap:.2e} (generated runs: candidate residual {rf_candidate:.2e})"),
    );

    // 7. Relaxed flow against the exact sweep.
    let cases = oracle_agreement(0..20, 10).unwrap();
    let worst_nu = cases.iter().map(|c| c.max_nu_error).fold(0.0, f64::max);
    report.line(
        7,
        "exact DistFlow agreement",
        cases.len() == 20 && worst_nu <= ORACLE_TOL,
        format!("20 random feeders, worst |nu - nu_exact| {worst_nu:.2e}"),
    );

    // 8. Peak reduction.
    let evening = Scenario::from_path(&data("evening_peak.json")).unwrap();
    let (_, em) = run(&feeder12, &evening, SimulationOptions::default());
    let baseline = uncontrolled_baseline(&feeder12.model, &bench, feeder12.ctx.dt()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_trace(&feeder12.model, &trace, &metrics, dir.path()).unwrap();
    let exported: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    let ratio_reported = exported.get("peak_ratio").and_then(|v| v.as_f64()).is_some();
    report.line(
        8,
        "peak reduction",
        metrics.peak_controlled < baseline.peak_uncontrolled && em.peak_ratio <= EVENING_RATIO && ratio_reported,
        format!(
            "replicated {:.4} < {:.4} p.u.; evening peak ratio {:.3} (limit {EVENING_RATIO})",
            metrics.peak_controlled, baseline.peak_uncontrolled, em.peak_ratio
        ),
    );

    // 9. Stage-1 periodicity, from the states and from the summed battery powers.
    let mut worst_period: f64 = 0.0;
    for s in [&feeder12, &feeder6] {
        let r = &s.reference;
        worst_period = worst_period.max(r.periodicity_error());
        for b in 0..s.model.batteries().len() {
            let net: f64 = (0..r.period).map(|t| r.p_bat[t][b] * s.ctx.dt()).sum();
            worst_period = worst_period.max(net.abs());
        }
    }
    report.line(
        9,
        "stage-1 periodicity",
        worst_period <= PERIODICITY_TOL,
        format!("worst |e(N_r) - e(0)| {worst_period:.2e}"),
    );

    // 10. Determinism of the exported artifacts.
    let (trace2, metrics2) = run(&feeder12, &bench, all_checks);
    let dir2 = tempfile::tempdir().unwrap();
    export_trace(&feeder12.model, &trace2, &metrics2, dir2.path()).unwrap();
    let files = ["voltages.csv", "soc_shapeable.csv", "soc_battery.csv", "aggregate_power.csv", "decisions.csv", "metrics.json"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dir.path().join(f)).unwrap() != std::fs::read(dir2.path().join(f)).unwrap())
        .collect();
    report.line(
        10,
        "determinism",
        differing.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", files.len()),
    );

    println!("{} of 10 criteria failed", report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
