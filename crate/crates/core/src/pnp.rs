//! Plug-and-play admission of shapeable and deferrable loads.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assets::{DeferrableLoad, Fleet, ShapeableLoad};
use crate::controller::{try_stage2, ControllerContext, MpcSolution, ReferenceTrajectory, Stage2Outcome, SystemState};
use crate::error::{Error, Result};
use crate::network::NetworkModel;

/// Advisory returned to a shapeable load that cannot be admitted.
pub const LOWER_REQUIREMENTS: &str = "lower requirements: later k_out or lower e_des";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeableRequest {
    pub e0: f64,
    pub e_low: f64,
    pub e_max: f64,
    pub e_des: f64,
    pub c_max: f64,
    #[serde(default = "one")]
    pub eta: f64,
    pub k_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeferrableRequest {
    pub profile: Vec<f64>,
    pub d_max: usize,
    #[serde(default = "one")]
    pub eta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestKind {
    Shapeable(ShapeableRequest),
    Deferrable(DeferrableRequest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugRequest {
    pub id: String,
    pub step: usize,
    pub bus: usize,
    #[serde(flatten)]
    pub kind: RequestKind,
}

impl PlugRequest {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            RequestKind::Shapeable(_) => "shapeable",
            RequestKind::Deferrable(_) => "deferrable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admitted {
    Shapeable(ShapeableLoad),
    Deferrable(DeferrableLoad),
}

#[derive(Debug, Clone)]
pub struct AdmissionDecision {
    pub request_id: String,
    pub kind: &'static str,
    pub step: usize,
    pub accepted: bool,
    pub plug_in_step: Option<usize>,
    pub delay: Option<usize>,
    pub reason: Option<String>,
    /// Set when a solver failure prevented a verdict; the request should be retried.
    pub retry: bool,
    /// Delays skipped because of solver failures.
    pub skipped_delays: Vec<usize>,
    pub admitted: Option<Admitted>,
    /// Stage-2 solution of the extended system that witnesses feasibility.
    pub witness: Option<Box<MpcSolution>>,
    pub solve_time_ms: f64,
}

impl AdmissionDecision {
    fn rejected(req: &PlugRequest, k: usize, reason: impl Into<String>) -> Self {
        Self {
            request_id: req.id.clone(),
            kind: req.kind_name(),
            step: k,
            accepted: false,
            plug_in_step: None,
            delay: None,
            reason: Some(reason.into()),
            retry: false,
            skipped_delays: Vec::new(),
            admitted: None,
            witness: None,
            solve_time_ms: 0.0,
        }
    }

    pub fn record(&self) -> DecisionRecord {
        DecisionRecord {
            step: self.step,
            request_id: self.request_id.clone(),
            kind: self.kind.to_string(),
            accepted: self.accepted,
            plug_in_step: self.plug_in_step,
            delay: self.delay,
            reason: self.reason.clone(),
            solve_time_ms: self.solve_time_ms,
        }
    }
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: usize,
    pub request_id: String,
    pub kind: String,
    pub accepted: bool,
    pub plug_in_step: Option<usize>,
    pub delay: Option<usize>,
    pub reason: Option<String>,
    pub solve_time_ms: f64,
}

/// Writes records as line-delimited JSON.
pub fn write_decision_log(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Everything admission needs besides the request and the fleet.
pub struct AdmissionContext<'a> {
    pub model: &'a NetworkModel,
    pub ctx: &'a ControllerContext,
    pub reference: &'a ReferenceTrajectory,
    pub e_bat: &'a [f64],
}

impl AdmissionContext<'_> {
    fn try_fleet(&self, fleet: &Fleet, k: usize) -> Result<Stage2Outcome> {
        let state = SystemState::from_fleet(fleet, self.e_bat.to_vec());
        try_stage2(self.model, self.ctx, self.reference, fleet, &state, k)
    }
}

fn check_bus(model: &NetworkModel, req: &PlugRequest) -> Result<()> {
    if req.bus == 0 || req.bus >= model.n_buses() {
        return Err(Error::UnknownBus(req.bus));
    }
    Ok(())
}

/// Builds the shapeable load a request describes, connected at step `k`.
pub fn shapeable_from_request(req: &PlugRequest, spec: &ShapeableRequest, k: usize) -> ShapeableLoad {
    ShapeableLoad {
        id: req.id.clone(),
        bus: req.bus,
        e: spec.e0,
        e_low: spec.e_low,
        e_max: spec.e_max,
        e_des: spec.e_des,
        c_max: spec.c_max,
        eta: spec.eta,
        k_in: k,
        k_out: spec.k_out,
    }
}

pub fn deferrable_from_request(req: &PlugRequest, spec: &DeferrableRequest, plug_in: Option<usize>) -> DeferrableLoad {
    DeferrableLoad {
        id: req.id.clone(),
        bus: req.bus,
        profile: spec.profile.clone(),
        eta: spec.eta,
        request_step: req.step,
        d_max: spec.d_max,
        plug_in_step: plug_in,
    }
}

/// Admits a shapeable load at `k` if the extended stage-2 problem is feasible.
pub fn admit_shapeable(
    actx: &AdmissionContext<'_>,
    fleet: &Fleet,
    req: &PlugRequest,
    k: usize,
) -> Result<AdmissionDecision> {
    let RequestKind::Shapeable(spec) = &req.kind else {
        return Err(Error::Scenario(format!("request {} is not shapeable", req.id)));
    };
    check_bus(actx.model, req)?;
    if fleet.contains_id(&req.id) {
        return Err(Error::DuplicateAsset(req.id.clone()));
    }
    let load = shapeable_from_request(req, spec, k);
    let dt = actx.ctx.dt();
    if spec.k_out <= k {
        return Ok(AdmissionDecision::rejected(req, k, format!("plug-out step not after request; {LOWER_REQUIREMENTS}")));
    }
    if spec.e0 > spec.e_des {
        return Ok(AdmissionDecision::rejected(req, k, "initial SOC already above desired SOC"));
    }
    if spec.e0 < load.soc_min(k, dt) - crate::assets::ENVELOPE_TOL || spec.e0 < spec.e_low {
        return Ok(AdmissionDecision::rejected(req, k, format!("desired SOC unreachable before plug-out; {LOWER_REQUIREMENTS}")));
    }
    let mut trial = fleet.clone();
    trial.shapeable.push(load.clone());
    let start = Instant::now();
    let outcome = actx.try_fleet(&trial, k)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut d = AdmissionDecision::rejected(req, k, LOWER_REQUIREMENTS);
    d.solve_time_ms = ms;
    match outcome {
        Stage2Outcome::Optimal(sol) => {
            d.accepted = true;
            d.plug_in_step = Some(k);
            d.delay = Some(0);
            d.reason = None;
            d.admitted = Some(Admitted::Shapeable(load));
            d.witness = Some(sol);
        }
        Stage2Outcome::Infeasible => {}
        Stage2Outcome::NumericalFailure(e) => {
            log::warn!("admission of {} deferred one step: {e}", req.id);
            d.retry = true;
            d.reason = Some(format!("solver failure, retry next step: {e}"));
        }
    }
    Ok(d)
}

/// Feasibility of one delay choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayVerdict {
    Feasible,
    Infeasible,
    SolverFailure,
}

/// Solves the extended problem for every delay `0..=d_max` (the exhaustive oracle).
pub fn enumerate_delays(
    actx: &AdmissionContext<'_>,
    fleet: &Fleet,
    req: &PlugRequest,
    k: usize,
) -> Result<Vec<DelayVerdict>> {
    let RequestKind::Deferrable(spec) = &req.kind else {
        return Err(Error::Scenario(format!("request {} is not deferrable", req.id)));
    };
    (0..=spec.d_max)
        .map(|d| {
            let mut trial = fleet.clone();
            trial.deferrable.push(deferrable_from_request(req, spec, Some(k + d)));
            Ok(match actx.try_fleet(&trial, k)? {
                Stage2Outcome::Optimal(_) => DelayVerdict::Feasible,
                Stage2Outcome::Infeasible => DelayVerdict::Infeasible,
                Stage2Outcome::NumericalFailure(_) => DelayVerdict::SolverFailure,
            })
        })
        .collect()
}

/// Admits a deferrable load with the smallest feasible delay, trying delays in
/// ascending order.
pub fn admit_deferrable(
    actx: &AdmissionContext<'_>,
    fleet: &Fleet,
    req: &PlugRequest,
    k: usize,
) -> Result<AdmissionDecision> {
    let RequestKind::Deferrable(spec) = &req.kind else {
        return Err(Error::Scenario(format!("request {} is not deferrable", req.id)));
    };
    check_bus(actx.model, req)?;
    if fleet.contains_id(&req.id) {
        return Err(Error::DuplicateAsset(req.id.clone()));
    }
    if spec.d_max >= actx.ctx.horizon.n {
        return Ok(AdmissionDecision::rejected(
            req,
            k,
            format!("maximum delay {} must be below the horizon {}", spec.d_max, actx.ctx.horizon.n),
        ));
    }
    let start = Instant::now();
    let mut d = AdmissionDecision::rejected(req, k, "no feasible delay");
    for delay in 0..=spec.d_max {
        let load = deferrable_from_request(req, spec, Some(k + delay));
        let mut trial = fleet.clone();
        trial.deferrable.push(load.clone());
        match actx.try_fleet(&trial, k)? {
            Stage2Outcome::Optimal(sol) => {
                d.accepted = true;
                d.plug_in_step = Some(k + delay);
                d.delay = Some(delay);
                d.reason = None;
                d.admitted = Some(Admitted::Deferrable(load));
                d.witness = Some(sol);
                break;
            }
            Stage2Outcome::Infeasible => {}
            Stage2Outcome::NumericalFailure(e) => {
                log::warn!("delay {delay} for {} skipped: {e}", req.id);
                d.skipped_delays.push(delay);
            }
        }
    }
    if !d.accepted && !d.skipped_delays.is_empty() {
        d.reason = Some(format!("no feasible delay; solver failed for delays {:?}", d.skipped_delays));
    }
    d.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(d)
}

/// Adds an accepted decision's load to the fleet; rejected decisions leave it unchanged.
pub fn apply_decision(fleet: &mut Fleet, decision: &AdmissionDecision) -> Result<()> {
    let Some(admitted) = &decision.admitted else {
        return Ok(());
    };
    let id = match admitted {
        Admitted::Shapeable(l) => &l.id,
        Admitted::Deferrable(l) => &l.id,
    };
    if fleet.contains_id(id) {
        return Err(Error::DuplicateAsset(id.clone()));
    }
    match admitted {
        Admitted::Shapeable(l) => fleet.shapeable.push(l.clone()),
        Admitted::Deferrable(l) => fleet.deferrable.push(l.clone()),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{solve_stage1, ControllerConfig};
    use crate::fixtures;

    struct Setup {
        model: NetworkModel,
        ctx: ControllerContext,
        reference: ReferenceTrajectory,
    }

    fn setup() -> Setup {
        let model = NetworkModel::new(fixtures::feeder6()).unwrap();
        let ctx = ControllerContext::new(&model, &ControllerConfig::default(), None).unwrap();
        let reference = solve_stage1(&model, &ctx).unwrap();
        Setup { model, ctx, reference }
    }

    fn actx(s: &Setup) -> AdmissionContext<'_> {
        AdmissionContext {
            model: &s.model,
            ctx: &s.ctx,
            reference: &s.reference,
            e_bat: &s.reference.e_bat[0],
        }
    }

    fn ev(id: &str, e0: f64, e_des: f64, k_out: usize) -> PlugRequest {
        PlugRequest {
            id: id.into(),
            step: 0,
            bus: 3,
            kind: RequestKind::Shapeable(ShapeableRequest {
                e0,
                e_low: 0.0,
                e_max: 1.0,
                e_des,
                c_max: 0.08,
                eta: 0.9,
                k_out,
            }),
        }
    }

    #[test]
    fn satisfied_shapeable_is_accepted() {
        let s = setup();
        let d = admit_shapeable(&actx(&s), &Fleet::new(), &ev("a", 0.3, 0.3, 20), 0).unwrap();
        assert!(d.accepted, "{:?}", d.reason);
        assert_eq!(d.plug_in_step, Some(0));
        assert!(d.witness.unwrap().report.status.is_optimal());
    }

    #[test]
    fn short_deadline_fails_precheck() {
        let s = setup();
        // 0.5 p.u.h at 0.08 * 0.9 * 0.5 per step needs 7 steps.
        let d = admit_shapeable(&actx(&s), &Fleet::new(), &ev("a", 0.0, 0.5, 5), 0).unwrap();
        assert!(!d.accepted);
        assert!(d.reason.unwrap().contains(LOWER_REQUIREMENTS));
        assert_eq!(d.solve_time_ms, 0.0);
    }

    #[test]
    fn duplicate_application_is_rejected() {
        let s = setup();
        let d = admit_shapeable(&actx(&s), &Fleet::new(), &ev("a", 0.2, 0.3, 20), 0).unwrap();
        let mut fleet = Fleet::new();
        apply_decision(&mut fleet, &d).unwrap();
        assert_eq!(fleet.shapeable.len(), 1);
        assert!(matches!(apply_decision(&mut fleet, &d), Err(Error::DuplicateAsset(_))));
        assert_eq!(fleet.shapeable.len(), 1);
    }

    #[test]
    fn rejected_decision_leaves_fleet() {
        let s = setup();
        let d = admit_shapeable(&actx(&s), &Fleet::new(), &ev("a", 0.0, 0.5, 5), 0).unwrap();
        let mut fleet = Fleet::new();
        apply_decision(&mut fleet, &d).unwrap();
        assert!(fleet.is_empty());
    }

    #[test]
    fn small_deferrable_starts_immediately() {
        let s = setup();
        let req = PlugRequest {
            id: "w".into(),
            step: 2,
            bus: 5,
            kind: RequestKind::Deferrable(DeferrableRequest {
                profile: vec![0.05, 0.05],
                d_max: 3,
                eta: 1.0,
            }),
        };
        let d = admit_deferrable(&actx(&s), &Fleet::new(), &req, 2).unwrap();
        assert!(d.accepted);
        assert_eq!(d.delay, Some(0));
        let mut fleet = Fleet::new();
        apply_decision(&mut fleet, &d).unwrap();
        assert_eq!(fleet.deferrable[0].power_at(2), 0.05);
    }

    #[test]
    fn congested_bus_defers_past_the_busy_load() {
        let s = setup();
        let k = 20;
        let actx = AdmissionContext {
            e_bat: &s.reference.e_bat[k],
            ..actx(&s)
        };
        let deferrable = |id: &str, profile: Vec<f64>, d_max| PlugRequest {
            id: id.into(),
            step: k,
            bus: 3,
            kind: RequestKind::Deferrable(DeferrableRequest { profile, d_max, eta: 1.0 }),
        };
        let mut fleet = Fleet::new();
        let busy = admit_deferrable(&actx, &fleet, &deferrable("busy", vec![0.5, 0.5], 0), k).unwrap();
        assert!(busy.accepted);
        apply_decision(&mut fleet, &busy).unwrap();

        let req = deferrable("new", vec![0.3; 3], 4);
        let d = admit_deferrable(&actx, &fleet, &req, k).unwrap();
        assert_eq!(d.delay, Some(2));
        assert_eq!(d.plug_in_step, Some(k + 2));
        let verdicts = enumerate_delays(&actx, &fleet, &req, k).unwrap();
        assert_eq!(verdicts[..3], [DelayVerdict::Infeasible, DelayVerdict::Infeasible, DelayVerdict::Feasible]);

        apply_decision(&mut fleet, &d).unwrap();
        let load = &fleet.deferrable[1];
        assert_eq!(load.power_at(k + 1), 0.0);
        assert_eq!(load.power_at(k + 2), 0.3);
        assert!((load.energy(0.5) - 0.45).abs() < 1e-12);
    }

    #[test]
    fn delay_too_long_for_horizon_is_rejected() {
        let s = setup();
        let req = PlugRequest {
            id: "w".into(),
            step: 0,
            bus: 5,
            kind: RequestKind::Deferrable(DeferrableRequest {
                profile: vec![0.05],
                d_max: 10,
                eta: 1.0,
            }),
        };
        let d = admit_deferrable(&actx(&s), &Fleet::new(), &req, 0).unwrap();
        assert!(!d.accepted);
    }

    #[test]
    fn request_serde_round_trip() {
        let r = ev("a", 0.1, 0.3, 20);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"kind\":\"shapeable\""));
        assert_eq!(serde_json::from_str::<PlugRequest>(&text).unwrap(), r);
    }
}
