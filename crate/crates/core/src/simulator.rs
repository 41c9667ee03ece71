//! Closed receding-horizon loop over a scripted request schedule.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::assets::{step_soc, Fleet};
use crate::controller::{
    candidate_residual, construct_shifted_candidate, solve_stage1, solve_stage2, ControllerContext,
    MpcSolution, ReferenceTrajectory, SystemState,
};
use crate::distflow::FlowStep;
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::pnp::{
    admit_deferrable, admit_shapeable, apply_decision, enumerate_delays, AdmissionContext,
    DecisionRecord, DelayVerdict, PlugRequest, RequestKind,
};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimulationOptions {
    /// Build and check the shifted candidate at every step.
    pub check_candidates: bool,
    /// Re-solve every delay of each admitted deferrable request with the exhaustive
    /// enumeration and keep the verdicts.
    pub audit_delays: bool,
}

/// Exhaustive delay verdicts for one admitted deferrable request.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayAudit {
    pub request_id: String,
    pub step: usize,
    pub chosen: usize,
    pub verdicts: Vec<DelayVerdict>,
}

impl DelayAudit {
    /// Every delay below the chosen one is infeasible.
    pub fn is_minimal(&self) -> bool {
        self.verdicts[..self.chosen]
            .iter()
            .all(|v| *v == DelayVerdict::Infeasible)
            && self.verdicts[self.chosen] == DelayVerdict::Feasible
    }
}

/// Aggregate real power during one step, split by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PowerSplit {
    pub fixed: f64,
    pub shapeable: f64,
    pub deferrable: f64,
    pub battery: f64,
    pub losses: f64,
    pub substation: f64,
}

impl PowerSplit {
    /// Demand seen by the peak metric: fixed plus flexible loads.
    pub fn load(&self) -> f64 {
        self.fixed + self.shapeable + self.deferrable
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub flow: FlowStep,
    /// `(load id, SOC at the start of the step, applied power)`.
    pub shapeable: Vec<(String, f64, f64)>,
    pub e_bat: Vec<f64>,
    pub p_bat: Vec<f64>,
    pub q_g: Vec<f64>,
    pub power: PowerSplit,
    pub objective: f64,
    pub relaxation_gap: f64,
    pub max_residual: f64,
    pub energy_cost: f64,
    /// Worst violation of the shifted candidate built from the previous step.
    pub candidate_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeableOutcome {
    pub id: String,
    pub bus: usize,
    pub k_in: usize,
    pub k_out: usize,
    pub e_final: f64,
    pub e_des: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeferrableOutcome {
    pub id: String,
    pub bus: usize,
    pub request_step: usize,
    pub plug_in_step: usize,
    pub delivered: f64,
    pub required: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub records: Vec<StepRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub shapeable: Vec<ShapeableOutcome>,
    pub deferrable: Vec<DeferrableOutcome>,
    /// Loads still connected at the end of the run.
    pub unfinished: Vec<String>,
    pub delay_audits: Vec<DelayAudit>,
    /// Relaxation gap of every accepted admission witness.
    pub admission_gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub steps: usize,
    pub peak_controlled: f64,
    pub peak_uncontrolled: f64,
    pub peak_reduction_ratio: f64,
    pub peak_ratio: f64,
    pub substation_peak: f64,
    pub v_max: f64,
    pub v_min: f64,
    pub energy_cost: f64,
    pub requests: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub deferred_requests: usize,
    pub mean_delay: f64,
    pub max_relaxation_gap: f64,
    pub max_candidate_residual: Option<f64>,
}

/// Solves the periodic reference and runs the loop.
pub fn run(
    model: &NetworkModel,
    ctx: &ControllerContext,
    scenario: &Scenario,
    options: SimulationOptions,
) -> Result<(SimulationTrace, Metrics)> {
    let reference = solve_stage1(model, ctx)?;
    run_with_reference(model, ctx, &reference, scenario, options)
}

/// Runs the loop against a precomputed reference.
pub fn run_with_reference(
    model: &NetworkModel,
    ctx: &ControllerContext,
    reference: &ReferenceTrajectory,
    scenario: &Scenario,
    options: SimulationOptions,
) -> Result<(SimulationTrace, Metrics)> {
    let scenario = scenario.to_pu(&model.base());
    let problems = scenario.validate(model);
    if !problems.is_empty() {
        return Err(Error::Scenario(problems.join("; ")));
    }
    let dt = ctx.dt();
    let nbus = model.n_buses();
    let mut fleet = Fleet::new();
    let mut e_bat: Vec<f64> = reference.e_bat[0].clone();
    let mut trace = SimulationTrace {
        records: Vec::new(),
        decisions: Vec::new(),
        shapeable: Vec::new(),
        deferrable: Vec::new(),
        unfinished: Vec::new(),
        delay_audits: Vec::new(),
        admission_gaps: Vec::new(),
    };
    let mut delivered: std::collections::HashMap<String, f64> = Default::default();
    let mut prev: Option<MpcSolution> = None;
    let mut retry: Vec<PlugRequest> = Vec::new();

    for k in 0..scenario.steps {
        let (done_shp, done_def) = fleet.remove_finished(k);
        record_outcomes(&mut trace, &done_shp, &done_def, &mut delivered, dt);

        let candidate = match (&prev, options.check_candidates) {
            (Some(p), true) => {
                let cand = construct_shifted_candidate(model, ctx, reference, p, &fleet)?;
                Some(candidate_residual(model, ctx, reference, &fleet, &cand)?.value)
            }
            _ => None,
        };

        let mut witness: Option<MpcSolution> = None;
        let pending: Vec<PlugRequest> = std::mem::take(&mut retry)
            .into_iter()
            .chain(scenario.requests_at(k).cloned())
            .collect();
        for req in pending {
            let actx = AdmissionContext {
                model,
                ctx,
                reference,
                e_bat: &e_bat,
            };
            let decision = match req.kind {
                RequestKind::Shapeable(_) => admit_shapeable(&actx, &fleet, &req, k)?,
                RequestKind::Deferrable(_) => admit_deferrable(&actx, &fleet, &req, k)?,
            };
            trace.decisions.push(decision.record());
            if decision.retry {
                retry.push(req);
                continue;
            }
            if decision.accepted {
                if options.audit_delays && decision.kind == "deferrable" {
                    trace.delay_audits.push(DelayAudit {
                        request_id: req.id.clone(),
                        step: k,
                        chosen: decision.delay.unwrap_or(0),
                        verdicts: enumerate_delays(&actx, &fleet, &req, k)?,
                    });
                }
                if let Some(w) = &decision.witness {
                    trace.admission_gaps.push(w.report.max_relaxation_gap);
                }
                apply_decision(&mut fleet, &decision)?;
                witness = decision.witness.map(|w| *w);
            }
        }

        let sol = match witness {
            Some(w) => w,
            None => {
                let state = SystemState::from_fleet(&fleet, e_bat.clone());
                solve_stage2(model, ctx, reference, &fleet, &state, k)?
            }
        };

        let u = sol.first_control();
        let t = model.forecast_index(k, true)?;
        let fixed: f64 = (1..nbus).map(|b| model.fixed_p(t, b)).sum();
        let def_now = fleet.deferrable_power(nbus, k);
        for l in &fleet.deferrable {
            *delivered.entry(l.id.clone()).or_insert(0.0) += l.power_at(k) * dt;
        }
        let flow = sol.flows.steps[0].clone();
        let power = PowerSplit {
            fixed,
            shapeable: u.c_shp.iter().sum(),
            deferrable: def_now.iter().sum(),
            battery: u.p_bat.iter().sum(),
            losses: flow.losses(model),
            substation: flow.substation_p(model),
        };
        let energy_cost = ctx.price.at(k) * power.shapeable * dt;
        let shapeable = fleet
            .shapeable
            .iter()
            .zip(&u.c_shp)
            .map(|(l, c)| (l.id.clone(), l.e, *c))
            .collect();
        trace.records.push(StepRecord {
            step: k,
            flow,
            shapeable,
            e_bat: e_bat.clone(),
            p_bat: u.p_bat.clone(),
            q_g: u.q_g.clone(),
            power,
            objective: sol.objective,
            relaxation_gap: sol.report.max_relaxation_gap,
            max_residual: sol.report.max_residual,
            energy_cost,
            candidate_residual: candidate,
        });

        for (load, &c) in fleet.shapeable.iter_mut().zip(&u.c_shp) {
            load.e = step_soc(load.e, c, load.eta, dt, load.e_low, load.e_max)?;
        }
        for (b, bat) in model.batteries().iter().enumerate() {
            e_bat[b] = step_soc(e_bat[b], u.p_bat[b], 1.0, dt, bat.e_low, bat.e_max)?;
        }
        prev = Some(sol);
    }

    let (done_shp, done_def) = fleet.remove_finished(scenario.steps);
    record_outcomes(&mut trace, &done_shp, &done_def, &mut delivered, dt);
    trace.unfinished = fleet
        .shapeable
        .iter()
        .map(|l| l.id.clone())
        .chain(fleet.deferrable.iter().map(|l| l.id.clone()))
        .collect();

    let baseline = uncontrolled_baseline(model, &scenario, dt)?;
    let metrics = compute_metrics(&trace, baseline.peak_uncontrolled);
    Ok((trace, metrics))
}

fn record_outcomes(
    trace: &mut SimulationTrace,
    shp: &[crate::assets::ShapeableLoad],
    def: &[crate::assets::DeferrableLoad],
    delivered: &mut std::collections::HashMap<String, f64>,
    dt: f64,
) {
    for l in shp {
        trace.shapeable.push(ShapeableOutcome {
            id: l.id.clone(),
            bus: l.bus,
            k_in: l.k_in,
            k_out: l.k_out,
            e_final: l.e,
            e_des: l.e_des,
        });
    }
    for l in def {
        trace.deferrable.push(DeferrableOutcome {
            id: l.id.clone(),
            bus: l.bus,
            request_step: l.request_step,
            plug_in_step: l.plug_in_step.unwrap_or(l.request_step),
            delivered: delivered.remove(&l.id).unwrap_or(0.0),
            required: l.energy(dt),
        });
    }
}

fn compute_metrics(trace: &SimulationTrace, peak_uncontrolled: f64) -> Metrics {
    let peak_controlled = trace.records.iter().map(|r| r.power.load()).fold(0.0, f64::max);
    let substation_peak = trace
        .records
        .iter()
        .map(|r| r.power.substation)
        .fold(0.0, f64::max);
    let volts = trace
        .records
        .iter()
        .flat_map(|r| r.flow.nu[1..].iter().map(|v| v.max(0.0).sqrt()));
    let (v_min, v_max) = volts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let accepted: Vec<&DecisionRecord> = trace.decisions.iter().filter(|d| d.accepted).collect();
    let delays: Vec<usize> = accepted
        .iter()
        .filter(|d| d.kind == "deferrable")
        .filter_map(|d| d.delay)
        .collect();
    let candidates: Vec<f64> = trace.records.iter().filter_map(|r| r.candidate_residual).collect();
    let ratio = if peak_uncontrolled > 0.0 {
        peak_controlled / peak_uncontrolled
    } else {
        1.0
    };
    let finals: std::collections::HashSet<&str> = trace
        .decisions
        .iter()
        .filter(|d| d.accepted || !d.reason.as_deref().unwrap_or("").starts_with("solver failure"))
        .map(|d| d.request_id.as_str())
        .collect();
    Metrics {
        steps: trace.records.len(),
        peak_controlled,
        peak_uncontrolled,
        peak_reduction_ratio: 1.0 - ratio,
        peak_ratio: ratio,
        substation_peak,
        v_max: if v_max.is_finite() { v_max } else { 0.0 },
        v_min: if v_min.is_finite() { v_min } else { 0.0 },
        energy_cost: trace.records.iter().map(|r| r.energy_cost).sum(),
        requests: finals.len(),
        accepted: accepted.len(),
        rejected: finals.len() - accepted.len(),
        deferred_requests: delays.iter().filter(|d| **d > 0).count(),
        mean_delay: if delays.is_empty() {
            0.0
        } else {
            delays.iter().sum::<usize>() as f64 / delays.len() as f64
        },
        max_relaxation_gap: trace
            .records
            .iter()
            .map(|r| r.relaxation_gap)
            .chain(trace.admission_gaps.iter().copied())
            .fold(0.0, f64::max),
        max_candidate_residual: if candidates.is_empty() {
            None
        } else {
            Some(candidates.iter().copied().fold(0.0, f64::max))
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineMetrics {
    pub steps: usize,
    pub peak_fixed: f64,
    pub peak_uncontrolled: f64,
    /// Fixed plus flexible demand per step.
    pub aggregate: Vec<f64>,
}

/// Every load connects at its request step and draws at its nominal rate:
/// shapeable loads at `c_max` until `e_des` (the last step partially), deferrable
/// loads their base profile. Devices idle; network limits are not enforced.
pub fn uncontrolled_baseline(model: &NetworkModel, scenario: &Scenario, dt: f64) -> Result<BaselineMetrics> {
    let scenario = scenario.to_pu(&model.base());
    let steps = scenario.steps;
    let mut aggregate = Vec::with_capacity(steps);
    let mut peak_fixed: f64 = 0.0;
    for k in 0..steps {
        let t = model.forecast_index(k, true)?;
        let fixed: f64 = (1..model.n_buses()).map(|b| model.fixed_p(t, b)).sum();
        peak_fixed = peak_fixed.max(fixed);
        aggregate.push(fixed);
    }
    for r in &scenario.requests {
        match &r.kind {
            RequestKind::Shapeable(s) => {
                let mut e = s.e0;
                let mut k = r.step;
                while e < s.e_des - 1e-12 && k < steps.min(s.k_out.max(r.step)) {
                    let c = s.c_max.min((s.e_des - e) / (s.eta * dt));
                    aggregate[k] += c;
                    e += s.eta * dt * c;
                    k += 1;
                }
            }
            RequestKind::Deferrable(d) => {
                for (i, p) in d.profile.iter().enumerate() {
                    if let Some(a) = aggregate.get_mut(r.step + i) {
                        *a += p;
                    }
                }
            }
        }
    }
    Ok(BaselineMetrics {
        steps,
        peak_fixed,
        peak_uncontrolled: aggregate.iter().copied().fold(0.0, f64::max),
        aggregate,
    })
}

/// Formats with 12 significant digits.
pub fn fmt12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{:.*e}", 11, v);
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..15).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, v);
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{exp}")
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Error::Io { path, source })
}

/// Writes voltages.csv, soc_shapeable.csv, soc_battery.csv, aggregate_power.csv,
/// decisions.csv and metrics.json into `dir`.
pub fn export_trace(model: &NetworkModel, trace: &SimulationTrace, metrics: &Metrics, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let nbus = model.n_buses();

    let mut v = String::from("step");
    for b in 1..nbus {
        let _ = write!(v, ",v{b}");
    }
    v.push('\n');
    for r in &trace.records {
        let _ = write!(v, "{}", r.step);
        for b in 1..nbus {
            let _ = write!(v, ",{}", fmt12(r.flow.nu[b].max(0.0).sqrt()));
        }
        v.push('\n');
    }
    write_file(dir, "voltages.csv", &v)?;

    let mut s = String::from("step,load,soc,power\n");
    for r in &trace.records {
        for (id, e, c) in &r.shapeable {
            let _ = writeln!(s, "{},{id},{},{}", r.step, fmt12(*e), fmt12(*c));
        }
    }
    write_file(dir, "soc_shapeable.csv", &s)?;

    let mut b = String::from("step");
    for bat in model.batteries() {
        let _ = write!(b, ",soc_bus{0},p_bus{0}", bat.bus);
    }
    b.push('\n');
    for r in &trace.records {
        let _ = write!(b, "{}", r.step);
        for (e, p) in r.e_bat.iter().zip(&r.p_bat) {
            let _ = write!(b, ",{},{}", fmt12(*e), fmt12(*p));
        }
        b.push('\n');
    }
    write_file(dir, "soc_battery.csv", &b)?;

    let mut a = String::from("step,fixed,shapeable,deferrable,battery,losses,substation\n");
    for r in &trace.records {
        let p = &r.power;
        let _ = writeln!(
            a,
            "{},{},{},{},{},{},{}",
            r.step,
            fmt12(p.fixed),
            fmt12(p.shapeable),
            fmt12(p.deferrable),
            fmt12(p.battery),
            fmt12(p.losses),
            fmt12(p.substation)
        );
    }
    write_file(dir, "aggregate_power.csv", &a)?;

    let mut d = String::from("step,request_id,kind,accepted,plug_in_step,delay,reason\n");
    for r in &trace.decisions {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let reason = r.reason.clone().unwrap_or_default().replace('"', "'");
        let _ = writeln!(
            d,
            "{},{},{},{},{},{},\"{}\"",
            r.step,
            r.request_id,
            r.kind,
            r.accepted,
            opt(r.plug_in_step),
            opt(r.delay),
            reason
        );
    }
    write_file(dir, "decisions.csv", &d)?;

    write_file(dir, "metrics.json", &metrics_json(metrics))
}

fn metrics_json(m: &Metrics) -> String {
    let value = serde_json::to_value(m).expect("metrics serialize");
    let mut out = String::from("{\n");
    let obj = value.as_object().expect("metrics is an object");
    let n = obj.len();
    for (i, (k, v)) in obj.iter().enumerate() {
        let text = match v {
            serde_json::Value::Number(num) if num.is_f64() => fmt12(num.as_f64().unwrap_or(0.0)),
            other => other.to_string(),
        };
        let _ = write!(out, "  \"{k}\": {text}");
        out.push_str(if i + 1 < n { ",\n" } else { "\n" });
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::pnp::{PlugRequest, ShapeableRequest};

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(1.0), "1");
        assert_eq!(fmt12(0.1 + 0.2), "0.3");
        assert_eq!(fmt12(2.0 / 3.0), "0.666666666667");
        assert_eq!(fmt12(-1234.5678), "-1234.5678");
        assert_eq!(fmt12(1.5e-9), "1.5e-9");
        assert_eq!(fmt12(0.0), "0");
    }

    fn empty(steps: usize) -> Scenario {
        Scenario {
            name: String::new(),
            network: None,
            config: None,
            steps,
            seed: None,
            units: Default::default(),
            requests: vec![],
        }
    }

    #[test]
    fn baseline_without_requests_is_fixed_peak() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let b = uncontrolled_baseline(&model, &empty(96), 0.5).unwrap();
        assert_eq!(b.peak_uncontrolled, b.peak_fixed);
        assert!((b.peak_fixed - 1.0).abs() < 1e-6);
    }

    #[test]
    fn baseline_superposes_max_rate_charging() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let mut s = empty(60);
        s.requests.push(PlugRequest {
            id: "ev".into(),
            step: 38,
            bus: 3,
            kind: RequestKind::Shapeable(ShapeableRequest {
                e0: 0.0,
                e_low: 0.0,
                e_max: 1.0,
                e_des: 0.5,
                c_max: 0.1,
                eta: 1.0,
                k_out: 59,
            }),
        });
        let b = uncontrolled_baseline(&model, &s, 0.5).unwrap();
        assert!((b.peak_uncontrolled - (b.peak_fixed + 0.1)).abs() < 1e-9);
        let extra: f64 = b
            .aggregate
            .iter()
            .zip(uncontrolled_baseline(&model, &empty(60), 0.5).unwrap().aggregate)
            .map(|(a, f)| a - f)
            .sum();
        assert!((extra * 0.5 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn empty_trace_exports_headers_only() {
        let model = NetworkModel::new(fixtures::feeder6()).unwrap();
        let trace = SimulationTrace {
            records: vec![],
            decisions: vec![],
            shapeable: vec![],
            deferrable: vec![],
            unfinished: vec![],
            delay_audits: vec![],
            admission_gaps: vec![],
        };
        let m = compute_metrics(&trace, 0.0);
        let dir = tempfile::tempdir().unwrap();
        export_trace(&model, &trace, &m, dir.path()).unwrap();
        for f in ["voltages.csv", "soc_shapeable.csv", "soc_battery.csv", "aggregate_power.csv", "decisions.csv"] {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert_eq!(text.lines().count(), 1, "{f}");
        }
        assert!(dir.path().join("metrics.json").exists());
    }
}
