//! Scenario files: a request schedule plus references to network and controller
//! configuration, and a seeded generator of random schedules.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{read_json, Error, Result};
use crate::fixtures::FEEDER12_BATTERY_BUSES;
use crate::network::{NetworkModel, PerUnitBase};
use crate::pnp::{DeferrableRequest, PlugRequest, RequestKind, ShapeableRequest};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Energies in p.u.h, powers in p.u.
    #[default]
    Pu,
    /// Energies in kWh, powers in kW, converted with the network base.
    Si,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Network file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub units: Units,
    pub requests: Vec<PlugRequest>,
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Copy with every quantity in per-unit.
    pub fn to_pu(&self, base: &PerUnitBase) -> Self {
        let mut out = self.clone();
        if self.units == Units::Pu {
            return out;
        }
        out.units = Units::Pu;
        for r in &mut out.requests {
            match &mut r.kind {
                RequestKind::Shapeable(s) => {
                    s.e0 = base.energy_to_pu(s.e0);
                    s.e_low = base.energy_to_pu(s.e_low);
                    s.e_max = base.energy_to_pu(s.e_max);
                    s.e_des = base.energy_to_pu(s.e_des);
                    s.c_max = base.power_to_pu(s.c_max);
                }
                RequestKind::Deferrable(d) => {
                    for p in &mut d.profile {
                        *p = base.power_to_pu(*p);
                    }
                }
            }
        }
        out
    }

    /// Structural checks against a network; returns every problem found.
    pub fn validate(&self, model: &NetworkModel) -> Vec<String> {
        let mut problems = Vec::new();
        let mut ids = HashSet::new();
        for r in &self.requests {
            if !ids.insert(r.id.as_str()) {
                problems.push(format!("duplicate request id {}", r.id));
            }
            if r.step >= self.steps {
                problems.push(format!("request {} at step {} outside [0, {})", r.id, r.step, self.steps));
            }
            if r.bus == 0 || r.bus >= model.n_buses() {
                problems.push(format!("request {} names unknown or root bus {}", r.id, r.bus));
            }
            match &r.kind {
                RequestKind::Shapeable(s) => {
                    let finite = [s.e0, s.e_low, s.e_max, s.e_des, s.c_max, s.eta]
                        .iter()
                        .all(|v| v.is_finite());
                    if !finite
                        || s.c_max <= 0.0
                        || !(s.eta > 0.0 && s.eta <= 1.0)
                        || s.e_low > s.e_max
                        || s.e_des > s.e_max
                        || s.e0 < s.e_low
                        || s.e0 > s.e_max
                    {
                        problems.push(format!("request {} has inconsistent shapeable parameters", r.id));
                    }
                }
                RequestKind::Deferrable(d) => {
                    if d.profile.is_empty() || d.profile.iter().any(|p| !p.is_finite() || *p < 0.0) {
                        problems.push(format!("request {} has an empty or negative profile", r.id));
                    }
                }
            }
        }
        if self.requests.windows(2).any(|w| w[1].step < w[0].step) {
            problems.push("requests are not ordered by step".into());
        }
        problems
    }

    pub fn requests_at(&self, k: usize) -> impl Iterator<Item = &PlugRequest> {
        self.requests.iter().filter(move |r| r.step == k)
    }
}

/// Parameters of the random scenario generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub steps: usize,
    pub dt_hours: f64,
    /// Multiplier on the base arrival rates of 14 shapeable and 17 deferrable
    /// requests per 30 hours.
    pub intensity: f64,
    /// Candidate buses, sampled uniformly.
    pub buses: Vec<usize>,
    pub e0: (f64, f64),
    pub delta_e: (f64, f64),
    pub c_max: f64,
    pub eta: f64,
    /// Extra steps beyond the minimum charging time before plug-out.
    pub slack_steps: (usize, usize),
    pub def_power: (f64, f64),
    pub def_len: (usize, usize),
    pub d_max: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 60,
            dt_hours: 0.5,
            intensity: 1.0,
            buses: FEEDER12_BATTERY_BUSES.to_vec(),
            e0: (0.05, 0.3),
            delta_e: (0.05, 0.2),
            c_max: 0.1,
            eta: 0.9,
            slack_steps: (2, 16),
            def_power: (0.04, 0.12),
            def_len: (2, 8),
            d_max: 4,
        }
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Deterministic random schedule: Poisson arrivals per step, uniform bus choice.
pub fn gen_scenario(params: &GenParams) -> Result<Scenario> {
    if params.buses.is_empty() || !(params.intensity >= 0.0) || params.dt_hours <= 0.0 {
        return Err(Error::Config("generator needs buses, intensity >= 0 and dt > 0".into()));
    }
    if params.e0.0 > params.e0.1
        || params.delta_e.0 > params.delta_e.1
        || params.slack_steps.0 > params.slack_steps.1
        || params.def_power.0 > params.def_power.1
        || params.def_len.0 > params.def_len.1
        || params.def_len.0 == 0
    {
        return Err(Error::Config("generator ranges must be ordered and profiles non-empty".into()));
    }
    if params.c_max <= 0.0 || params.eta <= 0.0 {
        log::warn!("c_max or eta not positive: every shapeable request will be infeasible");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let rate_shp = params.intensity * 14.0 * params.dt_hours / 30.0;
    let rate_def = params.intensity * 17.0 * params.dt_hours / 30.0;
    let mut requests = Vec::new();
    let mut counter = 0usize;
    for k in 0..params.steps {
        let n_shp = poisson(&mut rng, rate_shp);
        let n_def = poisson(&mut rng, rate_def);
        for _ in 0..n_shp {
            let bus = params.buses[rng.random_range(0..params.buses.len())];
            let e0 = round6(rng.random_range(params.e0.0..=params.e0.1));
            let de = round6(rng.random_range(params.delta_e.0..=params.delta_e.1));
            let need = (de / (params.eta * params.dt_hours * params.c_max)).ceil() as usize;
            let slack = rng.random_range(params.slack_steps.0..=params.slack_steps.1);
            counter += 1;
            requests.push(PlugRequest {
                id: format!("shp{counter:03}"),
                step: k,
                bus,
                kind: RequestKind::Shapeable(ShapeableRequest {
                    e0,
                    e_low: 0.0,
                    e_max: 1.0,
                    e_des: round6(e0 + de),
                    c_max: params.c_max,
                    eta: params.eta,
                    k_out: k + need + slack,
                }),
            });
        }
        for _ in 0..n_def {
            let bus = params.buses[rng.random_range(0..params.buses.len())];
            let len = rng.random_range(params.def_len.0..=params.def_len.1);
            let power = round6(rng.random_range(params.def_power.0..=params.def_power.1));
            counter += 1;
            requests.push(PlugRequest {
                id: format!("def{counter:03}"),
                step: k,
                bus,
                kind: RequestKind::Deferrable(DeferrableRequest {
                    profile: vec![power; len],
                    d_max: params.d_max,
                    eta: 1.0,
                }),
            });
        }
    }
    Ok(Scenario {
        name: format!("generated-{}", params.seed),
        network: None,
        config: None,
        steps: params.steps,
        seed: Some(params.seed),
        units: Units::Pu,
        requests,
    })
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map_or(0, |d| d.sample(rng) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn same_seed_same_file() {
        let p = GenParams { seed: 11, ..Default::default() };
        assert_eq!(gen_scenario(&p).unwrap().to_json(), gen_scenario(&p).unwrap().to_json());
        let q = GenParams { seed: 12, ..Default::default() };
        assert_ne!(gen_scenario(&p).unwrap().to_json(), gen_scenario(&q).unwrap().to_json());
    }

    #[test]
    fn zero_intensity_is_empty() {
        let p = GenParams { intensity: 0.0, ..Default::default() };
        assert!(gen_scenario(&p).unwrap().requests.is_empty());
    }

    #[test]
    fn generated_requests_validate() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        for seed in 0..20 {
            let s = gen_scenario(&GenParams { seed, ..Default::default() }).unwrap();
            assert!(s.validate(&model).is_empty(), "{:?}", s.validate(&model));
        }
    }

    #[test]
    fn unit_intensity_matches_table_counts_on_average() {
        let (mut shp, mut def) = (0usize, 0usize);
        for seed in 0..200 {
            let s = gen_scenario(&GenParams { seed, ..Default::default() }).unwrap();
            for r in &s.requests {
                match r.kind {
                    RequestKind::Shapeable(_) => shp += 1,
                    RequestKind::Deferrable(_) => def += 1,
                }
            }
        }
        let (ms, md) = (shp as f64 / 200.0, def as f64 / 200.0);
        assert!((ms - 14.0).abs() < 1.0, "{ms}");
        assert!((md - 17.0).abs() < 1.0, "{md}");
    }

    #[test]
    fn si_units_convert_with_base() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let s = Scenario {
            name: String::new(),
            network: None,
            config: None,
            steps: 4,
            seed: None,
            units: Units::Si,
            requests: vec![PlugRequest {
                id: "d".into(),
                step: 0,
                bus: 3,
                kind: RequestKind::Deferrable(DeferrableRequest {
                    profile: vec![50.0],
                    d_max: 1,
                    eta: 1.0,
                }),
            }],
        };
        let pu = s.to_pu(&model.base());
        let RequestKind::Deferrable(d) = &pu.requests[0].kind else { unreachable!() };
        assert!((d.profile[0] - 0.05).abs() < 1e-12);
    }
}
