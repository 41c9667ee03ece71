//! Synthetic feeders and small cases shared by tests, the CLI and the bundled data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distflow::BusInjections;
use crate::network::{
    BatteryBank, Bus, CapacitorLimits, FixedLoadForecast, Line, NetworkData, NetworkModel,
    PerUnitBase,
};
use crate::pnp::{DeferrableRequest, PlugRequest, RequestKind, ShapeableRequest};
use crate::scenario::{Scenario, Units};

/// Hourly demand relative to the daily peak, lowest before dawn and highest around 19h.
pub const EVENING_PEAK_HOURLY: [f64; 24] = [
    0.55, 0.50, 0.47, 0.45, 0.45, 0.48, 0.55, 0.63, 0.68, 0.70, 0.72, 0.74, 0.75, 0.74, 0.74,
    0.76, 0.82, 0.92, 0.98, 1.00, 0.96, 0.86, 0.74, 0.63,
];

/// Evening-peak curve sampled every `dt` hours, linear between hourly points.
pub fn evening_peak_curve(steps: usize, dt: f64) -> Vec<f64> {
    (0..steps)
        .map(|k| {
            let h = (k as f64 * dt).rem_euclid(24.0);
            let lo = h.floor() as usize % 24;
            let hi = (lo + 1) % 24;
            let w = h - h.floor();
            EVENING_PEAK_HOURLY[lo] * (1.0 - w) + EVENING_PEAK_HOURLY[hi] * w
        })
        .collect()
}

fn plain_buses(n: usize) -> Vec<Bus> {
    (0..=n)
        .map(|id| Bus {
            id,
            capacitor: None,
            battery: None,
        })
        .collect()
}

/// Unloaded chain `0 - 1 - ... - n` with identical lines and a one-step forecast.
pub fn chain(n: usize, r: f64, x: f64) -> NetworkData {
    let lines = (0..n)
        .map(|i| Line {
            from: i,
            to: i + 1,
            r_pu: r,
            x_pu: x,
        })
        .collect();
    NetworkData {
        name: "chain".into(),
        base: PerUnitBase::default(),
        v0_pu: 1.0,
        v_bounds_pu: [0.95, 1.0],
        buses: plain_buses(n),
        lines,
        batteries: vec![],
        fixed_load: FixedLoadForecast::constant(1, &vec![0.0; n], &vec![0.0; n]),
    }
}

/// Random radial feeder with up to `max_buses` buses (root included) and random
/// fixed injections that the exact sweep can solve.
pub fn random_radial_case(seed: u64, max_buses: usize) -> (NetworkModel, BusInjections) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.random_range(2..=max_buses.max(2));
    let n = nb - 1;
    let lines = (1..nb)
        .map(|j| Line {
            from: rng.random_range(0..j),
            to: j,
            r_pu: rng.random_range(0.002..0.02),
            x_pu: rng.random_range(0.002..0.02),
        })
        .collect();
    let mut inj = BusInjections::zeros(nb);
    for j in 1..nb {
        inj.p[j] = rng.random_range(0.0..0.15);
        inj.q[j] = rng.random_range(-0.02..0.06);
    }
    let data = NetworkData {
        name: format!("random-{seed}"),
        base: PerUnitBase::default(),
        v0_pu: 1.0,
        v_bounds_pu: [0.8, 1.05],
        buses: plain_buses(n),
        lines,
        batteries: vec![],
        fixed_load: FixedLoadForecast::constant(1, &inj.p[1..], &inj.q[1..]),
    };
    (NetworkModel::new(data).expect("random tree is radial"), inj)
}

struct FeederSpec<'a> {
    name: &'a str,
    lines: &'a [(usize, usize, f64, f64)],
    load_share: &'a [f64],
    peak: f64,
    power_factor_q: f64,
    batteries: &'a [usize],
    battery: (f64, f64, f64),
    capacitors: &'a [usize],
    q_max: f64,
    steps: usize,
    dt: f64,
}

fn build_feeder(spec: FeederSpec<'_>) -> NetworkData {
    let n = spec.load_share.len();
    let mut buses = plain_buses(n);
    let batteries: Vec<BatteryBank> = spec
        .batteries
        .iter()
        .enumerate()
        .map(|(id, &bus)| {
            buses[bus].battery = Some(id);
            BatteryBank {
                id,
                bus,
                e_low: spec.battery.0,
                e_max: spec.battery.1,
                p_min: -spec.battery.2,
                p_max: spec.battery.2,
                efficiency: 1.0,
            }
        })
        .collect();
    for &bus in spec.capacitors {
        buses[bus].capacitor = Some(CapacitorLimits {
            q_min: 0.0,
            q_max: spec.q_max,
        });
    }
    let lines = spec
        .lines
        .iter()
        .map(|&(from, to, r_pu, x_pu)| Line {
            from,
            to,
            r_pu,
            x_pu,
        })
        .collect();
    let total: f64 = spec.load_share.iter().sum();
    let curve = evening_peak_curve(spec.steps, spec.dt);
    let p: Vec<Vec<f64>> = curve
        .iter()
        .map(|c| {
            spec.load_share
                .iter()
                .map(|s| round9(spec.peak * c * s / total))
                .collect()
        })
        .collect();
    let q = p
        .iter()
        .map(|row| row.iter().map(|v| round9(v * spec.power_factor_q)).collect())
        .collect();
    NetworkData {
        name: spec.name.into(),
        base: PerUnitBase::default(),
        v0_pu: 1.0,
        v_bounds_pu: [0.95, 1.0],
        buses,
        lines,
        batteries,
        fixed_load: FixedLoadForecast { p, q },
    }
}

fn round9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Buses hosting a battery bank in [`feeder12`].
pub const FEEDER12_BATTERY_BUSES: [usize; 7] = [3, 5, 6, 8, 9, 11, 12];

/// 13-bus radial feeder (12 load buses): a six-section trunk with two three-bus
/// laterals, seven battery banks and four switched capacitors, 48 h evening-peak
/// forecast at half-hour resolution.
pub fn feeder12() -> NetworkData {
    const R: f64 = 0.0095;
    const X: f64 = 0.007;
    build_feeder(FeederSpec {
        name: "feeder12",
        lines: &[
            (0, 1, R, X),
            (1, 2, R, X),
            (2, 3, R, X),
            (3, 4, R, X),
            (4, 5, R, X),
            (5, 6, R, X),
            (2, 7, 1.5 * R, 1.5 * X),
            (7, 8, 1.5 * R, 1.5 * X),
            (8, 9, 1.5 * R, 1.5 * X),
            (4, 10, 1.5 * R, 1.5 * X),
            (10, 11, 1.5 * R, 1.5 * X),
            (11, 12, 1.5 * R, 1.5 * X),
        ],
        load_share: &[0.6, 0.8, 1.0, 0.8, 1.0, 1.0, 0.8, 1.0, 1.0, 0.8, 1.0, 1.0],
        peak: 1.0,
        power_factor_q: 0.3,
        batteries: &FEEDER12_BATTERY_BUSES,
        battery: (0.12, 1.0, 0.12),
        capacitors: &[3, 6, 9, 12],
        q_max: 0.15,
        steps: 96,
        dt: 0.5,
    })
}

/// Buses hosting a battery bank in [`feeder6`].
pub const FEEDER6_BATTERY_BUSES: [usize; 3] = [3, 5, 6];

/// Small 7-bus feeder (6 load buses) used by the randomized scenario harness.
pub fn feeder6() -> NetworkData {
    const R: f64 = 0.02;
    const X: f64 = 0.016;
    build_feeder(FeederSpec {
        name: "feeder6",
        lines: &[
            (0, 1, R, X),
            (1, 2, R, X),
            (2, 3, R, X),
            (1, 4, R, X),
            (4, 5, R, X),
            (2, 6, R, X),
        ],
        load_share: &[0.8, 1.0, 1.0, 0.8, 1.0, 1.0],
        peak: 1.0,
        power_factor_q: 0.3,
        batteries: &FEEDER6_BATTERY_BUSES,
        battery: (0.12, 1.0, 0.12),
        capacitors: &[3, 5],
        q_max: 0.1,
        steps: 96,
        dt: 0.5,
    })
}

/// Shapeable request hours and feeder-numbered buses of the replicated schedule.
const SHAPEABLE_SCHEDULE: [(f64, &[usize]); 8] = [
    (1.0, &[6, 9]),
    (8.0, &[5, 19]),
    (11.0, &[15]),
    (12.0, &[25]),
    (13.0, &[4, 31]),
    (15.0, &[19, 19]),
    (16.0, &[15, 15]),
    (16.5, &[25, 15]),
];

const DEFERRABLE_SCHEDULE: [(f64, &[usize]); 9] = [
    (4.0, &[8]),
    (6.0, &[33]),
    (10.0, &[4, 5, 5, 16, 17]),
    (11.0, &[28]),
    (12.0, &[19, 38]),
    (17.0, &[8, 20, 22]),
    (18.0, &[12]),
    (18.5, &[5, 22]),
    (19.5, &[12]),
];

/// 30 h benchmark schedule of 14 shapeable and 17 deferrable requests on [`feeder12`].
/// Its bus labels come from a larger feeder and are folded onto the battery buses;
/// asset parameters vary deterministically with the request index.
pub fn benchmark_scenario() -> Scenario {
    const DT: f64 = 0.5;
    const STEPS: usize = 60;
    let fold = |b: usize| FEEDER12_BATTERY_BUSES[b % FEEDER12_BATTERY_BUSES.len()];
    let mut requests = Vec::new();
    let mut i = 0usize;
    for (hour, buses) in SHAPEABLE_SCHEDULE {
        let step = (hour / DT).round() as usize;
        for &b in buses {
            let e0 = round9(0.1 + 0.02 * (i % 5) as f64);
            requests.push(PlugRequest {
                id: format!("shp{:02}", i + 1),
                step,
                bus: fold(b),
                kind: RequestKind::Shapeable(ShapeableRequest {
                    e0,
                    e_low: 0.0,
                    e_max: 0.6,
                    e_des: round9(e0 + 0.1 + 0.025 * (i % 4) as f64),
                    c_max: 0.08,
                    eta: 0.9,
                    k_out: STEPS.min(step + 16 + 2 * (i % 5)),
                }),
            });
            i += 1;
        }
    }
    let mut j = 0usize;
    for (hour, buses) in DEFERRABLE_SCHEDULE {
        let step = (hour / DT).round() as usize;
        for &b in buses {
            requests.push(PlugRequest {
                id: format!("def{:02}", j + 1),
                step,
                bus: fold(b),
                kind: RequestKind::Deferrable(DeferrableRequest {
                    profile: vec![round9(0.04 + 0.01 * (j % 4) as f64); 3 + j % 3],
                    d_max: 6,
                    eta: 1.0,
                }),
            });
            j += 1;
        }
    }
    requests.sort_by_key(|r| r.step);
    Scenario {
        name: "benchmark".into(),
        network: None,
        config: None,
        steps: STEPS,
        seed: None,
        units: Units::Pu,
        requests,
    }
}

/// Sixteen vehicles arriving between 16h and 19h, all leaving at the end of a 30 h
/// run. Uncontrolled, their charging lands on the evening peak of [`feeder12`].
pub fn evening_peak_scenario() -> Scenario {
    let requests = (0..16)
        .map(|i| {
            let e0 = round9(0.1 + 0.01 * (i % 4) as f64);
            PlugRequest {
                id: format!("ev{:02}", i + 1),
                step: 32 + (i * 7) / 16,
                bus: FEEDER12_BATTERY_BUSES[i % FEEDER12_BATTERY_BUSES.len()],
                kind: RequestKind::Shapeable(ShapeableRequest {
                    e0,
                    e_low: 0.0,
                    e_max: 0.6,
                    e_des: round9(e0 + 0.25),
                    c_max: 0.1,
                    eta: 0.9,
                    k_out: 60,
                }),
            }
        })
        .collect();
    Scenario {
        name: "evening-peak".into(),
        network: None,
        config: None,
        steps: 60,
        seed: None,
        units: Units::Pu,
        requests,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate_topology;

    #[test]
    fn bundled_feeders_are_valid() {
        for data in [feeder12(), feeder6()] {
            assert!(validate_topology(&data).is_empty(), "{}", data.name);
            assert_eq!(data.fixed_load.len(), 96);
        }
    }

    #[test]
    fn curve_peaks_at_nineteen() {
        let c = evening_peak_curve(48, 0.5);
        let (argmax, _) = c
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert_eq!(argmax, 38);
        assert_eq!(c[3], 0.5 * (0.50 + 0.47));
    }

    #[test]
    fn random_cases_are_reproducible() {
        let (a, ia) = random_radial_case(3, 10);
        let (b, ib) = random_radial_case(3, 10);
        assert_eq!(a.data(), b.data());
        assert_eq!(ia, ib);
        assert!(a.n_buses() <= 10);
    }

    #[test]
    fn replicated_schedule_counts() {
        let s = benchmark_scenario();
        let model = NetworkModel::new(feeder12()).unwrap();
        assert!(s.validate(&model).is_empty());
        let shp = s.requests.iter().filter(|r| r.kind_name() == "shapeable").count();
        assert_eq!((shp, s.requests.len() - shp), (14, 17));
        assert!(evening_peak_scenario().validate(&model).is_empty());
    }
}
