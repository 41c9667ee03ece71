//! Flexible loads (shapeable and deferrable) and the fleet of connected loads.
//!
//! SOC is energy in p.u.-hours, powers are p.u., and step lengths are hours.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack applied when checking a stepped SOC against its envelope.
pub const ENVELOPE_TOL: f64 = 1e-6;

/// Load with a continuously controllable charging power and an energy deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeableLoad {
    pub id: String,
    pub bus: usize,
    /// Current SOC.
    pub e: f64,
    pub e_low: f64,
    pub e_max: f64,
    pub e_des: f64,
    pub c_max: f64,
    pub eta: f64,
    pub k_in: usize,
    pub k_out: usize,
}

impl ShapeableLoad {
    /// Lower SOC bound at step `k`: the SOC below which `e_des` can no longer be
    /// reached by `k_out`, clamped at the physical floor.
    pub fn soc_min(&self, k: usize, dt: f64) -> f64 {
        shp_soc_min(self, k, dt)
    }

    /// Connected and allowed to draw power during step `k`.
    pub fn is_active(&self, k: usize) -> bool {
        k < self.k_out
    }
}

pub fn shp_soc_min(load: &ShapeableLoad, k: usize, dt: f64) -> f64 {
    let steps_left = load.k_out as f64 - k as f64;
    let reachable = (steps_left * load.c_max * load.eta * dt).max(0.0);
    (load.e_des - reachable).max(load.e_low)
}

/// Load with a fixed power profile that may only be shifted in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeferrableLoad {
    pub id: String,
    pub bus: usize,
    /// Base power profile, one entry per step from plug-in.
    pub profile: Vec<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    pub request_step: usize,
    pub d_max: usize,
    /// Step at which the profile starts, once admitted.
    #[serde(default)]
    pub plug_in_step: Option<usize>,
}

fn default_eta() -> f64 {
    1.0
}

impl DeferrableLoad {
    /// Power drawn during absolute step `k` (zero before plug-in or when not admitted).
    pub fn power_at(&self, k: usize) -> f64 {
        match self.plug_in_step {
            Some(s) if k >= s => self.profile.get(k - s).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// First step after the profile has been fully delivered.
    pub fn end_step(&self) -> Option<usize> {
        self.plug_in_step.map(|s| s + self.profile.len())
    }

    pub fn energy(&self, dt: f64) -> f64 {
        self.profile.iter().sum::<f64>() * dt
    }
}

/// The base profile prefixed by `d` idle steps.
pub fn shifted_profile(load: &DeferrableLoad, d: usize) -> Result<Vec<f64>> {
    if d > load.d_max {
        return Err(Error::DelayOutOfRange {
            delay: d,
            d_max: load.d_max,
        });
    }
    let mut out = vec![0.0; d];
    out.extend_from_slice(&load.profile);
    Ok(out)
}

/// SOC update `e + eta * dt * power`, checked against `[low, high]`.
pub fn step_soc(e: f64, power: f64, eta: f64, dt: f64, low: f64, high: f64) -> Result<f64> {
    let next = e + eta * dt * power;
    if next < low - ENVELOPE_TOL || next > high + ENVELOPE_TOL || !next.is_finite() {
        return Err(Error::Envelope {
            asset: "soc".into(),
            value: next,
            low,
            high,
        });
    }
    Ok(next)
}

/// Connected flexible loads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub shapeable: Vec<ShapeableLoad>,
    pub deferrable: Vec<DeferrableLoad>,
}

impl Fleet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.shapeable.is_empty() && self.deferrable.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.shapeable.iter().any(|l| l.id == id) || self.deferrable.iter().any(|l| l.id == id)
    }

    pub fn shapeable_index(&self, id: &str) -> Option<usize> {
        self.shapeable.iter().position(|l| l.id == id)
    }

    /// Bus-by-load incidence, rows indexed by bus id (root row included, always zero).
    pub fn incidence(&self, n_buses: usize) -> Vec<Vec<u8>> {
        let mut k = vec![vec![0u8; self.shapeable.len()]; n_buses];
        for (j, load) in self.shapeable.iter().enumerate() {
            k[load.bus][j] = 1;
        }
        k
    }

    /// Number of shapeable and deferrable loads per bus.
    pub fn counts_per_bus(&self, n_buses: usize) -> (Vec<usize>, Vec<usize>) {
        let mut shp = vec![0; n_buses];
        let mut def = vec![0; n_buses];
        for l in &self.shapeable {
            shp[l.bus] += 1;
        }
        for l in &self.deferrable {
            def[l.bus] += 1;
        }
        (shp, def)
    }

    /// Deferrable demand per bus during absolute step `k`.
    pub fn deferrable_power(&self, n_buses: usize, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_buses];
        for l in &self.deferrable {
            out[l.bus] += l.power_at(k);
        }
        out
    }

    /// Latest step at which any connected load still needs power: plug-out for
    /// shapeable loads, end of profile for deferrable ones.
    pub fn k_out_max(&self) -> Option<usize> {
        let shp = self.shapeable.iter().map(|l| l.k_out);
        let def = self.deferrable.iter().filter_map(|l| l.end_step());
        shp.chain(def).max()
    }

    /// Drops loads that are finished by step `k`; returns the removed shapeable loads.
    pub fn remove_finished(&mut self, k: usize) -> (Vec<ShapeableLoad>, Vec<DeferrableLoad>) {
        let (done_shp, keep_shp): (Vec<_>, Vec<_>) =
            self.shapeable.drain(..).partition(|l| l.k_out <= k);
        let (done_def, keep_def): (Vec<_>, Vec<_>) = self
            .deferrable
            .drain(..)
            .partition(|l| l.end_step().is_some_and(|e| e <= k));
        self.shapeable = keep_shp;
        self.deferrable = keep_def;
        (done_shp, done_def)
    }
}

/// Per-bus shapeable and deferrable demand at step `k` for shapeable powers `u_shp`.
pub fn aggregate_bus_power(
    fleet: &Fleet,
    n_buses: usize,
    u_shp: &[f64],
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if u_shp.len() != fleet.shapeable.len() {
        return Err(Error::Dimension {
            what: "shapeable power vector",
            expected: fleet.shapeable.len(),
            got: u_shp.len(),
        });
    }
    let mut p_shp = vec![0.0; n_buses];
    for (load, u) in fleet.shapeable.iter().zip(u_shp) {
        if load.bus >= n_buses {
            return Err(Error::UnknownBus(load.bus));
        }
        p_shp[load.bus] += u;
    }
    Ok((p_shp, fleet.deferrable_power(n_buses, k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn ev(k_out: usize) -> ShapeableLoad {
        ShapeableLoad {
            id: "ev".into(),
            bus: 1,
            e: 0.0,
            e_low: 0.0,
            e_max: 12.0,
            e_des: 10.0,
            c_max: 4.0,
            eta: 0.9,
            k_in: 0,
            k_out,
        }
    }

    fn washer(profile: Vec<f64>, d_max: usize) -> DeferrableLoad {
        DeferrableLoad {
            id: "w".into(),
            bus: 4,
            profile,
            eta: 1.0,
            request_step: 0,
            d_max,
            plug_in_step: None,
        }
    }

    // Backward simulation of charging at full rate from e_des, clamped at e_low.
    fn soc_min_oracle(load: &ShapeableLoad, k: usize, dt: f64) -> f64 {
        let mut e = load.e_des;
        let mut t = load.k_out;
        while t > k {
            e -= load.c_max * load.eta * dt;
            t -= 1;
        }
        e.max(load.e_low)
    }

    #[test]
    fn soc_min_examples() {
        let load = ev(4);
        assert!((shp_soc_min(&load, 0, 0.5) - 2.8).abs() < 1e-12);
        assert!((soc_min_oracle(&load, 0, 0.5) - 2.8).abs() < 1e-12);
        assert_eq!(shp_soc_min(&ev(20), 0, 0.5), 0.0);
        assert_eq!(shp_soc_min(&load, 4, 0.5), 10.0);
        assert_eq!(shp_soc_min(&load, 9, 0.5), 10.0);
    }

    #[test]
    fn step_soc_examples() {
        assert_eq!(step_soc(3.0, 0.0, 0.9, 0.5, 0.0, 12.0).unwrap(), 3.0);
        assert!((step_soc(2.8, 4.0, 0.9, 0.5, 0.0, 12.0).unwrap() - 4.6).abs() < 1e-12);
        assert!((step_soc(0.5, -0.2, 1.0, 0.5, 0.0, 1.0).unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(
            step_soc(11.0, 4.0, 1.0, 0.5, 0.0, 12.0),
            Err(Error::Envelope { .. })
        ));
    }

    #[test]
    fn shifted_profile_examples() {
        let w = washer(vec![3.0, 3.0, 0.0], 2);
        assert_eq!(shifted_profile(&w, 0).unwrap(), vec![3.0, 3.0, 0.0]);
        assert_eq!(shifted_profile(&w, 2).unwrap(), vec![0.0, 0.0, 3.0, 3.0, 0.0]);
        assert!(matches!(shifted_profile(&w, 3), Err(Error::DelayOutOfRange { .. })));
    }

    #[test]
    fn aggregate_examples() {
        let empty = Fleet::new();
        let (p, d) = aggregate_bus_power(&empty, 5, &[], 0).unwrap();
        assert!(p.iter().chain(&d).all(|v| *v == 0.0));

        let mut fleet = Fleet::new();
        for (i, _) in [1.0, 2.0].iter().enumerate() {
            let mut l = ev(10);
            l.id = format!("ev{i}");
            l.bus = 4;
            fleet.shapeable.push(l);
        }
        let (p, _) = aggregate_bus_power(&fleet, 5, &[1.0, 2.0], 0).unwrap();
        assert_eq!(p[4], 3.0);
        assert!(matches!(
            aggregate_bus_power(&fleet, 5, &[1.0], 0),
            Err(Error::Dimension { .. })
        ));

        let mut w = washer(vec![3.0], 1);
        w.plug_in_step = Some(1);
        fleet.deferrable.push(w);
        assert_eq!(fleet.deferrable_power(5, 1)[4], 3.0);
        assert_eq!(fleet.deferrable_power(5, 2)[4], 0.0);
        assert_eq!(fleet.deferrable_power(5, 0)[4], 0.0);
    }

    #[test]
    fn remove_finished_loads() {
        let mut fleet = Fleet::new();
        fleet.shapeable.push(ev(3));
        let mut w = washer(vec![1.0, 1.0], 0);
        w.plug_in_step = Some(2);
        fleet.deferrable.push(w);
        assert_eq!(fleet.k_out_max(), Some(4));
        let (s, d) = fleet.remove_finished(3);
        assert_eq!((s.len(), d.len()), (1, 0));
        let (_, d) = fleet.remove_finished(4);
        assert_eq!(d.len(), 1);
        assert!(fleet.is_empty());
    }

    proptest! {
        #[test]
        fn soc_min_is_nondecreasing(k_out in 0usize..60, k in 0usize..59,
                                    c in 0.01f64..5.0, eta in 0.5f64..1.0, dt in 0.1f64..1.0) {
            let mut load = ev(k_out);
            load.c_max = c;
            load.eta = eta;
            prop_assert!(shp_soc_min(&load, k, dt) <= shp_soc_min(&load, k + 1, dt) + 1e-12);
            prop_assert!((shp_soc_min(&load, k, dt) - soc_min_oracle(&load, k, dt)).abs() < 1e-9);
        }

        #[test]
        fn full_rate_from_envelope_meets_target(k_out in 1usize..40, k in 0usize..40,
                                                c in 0.1f64..5.0, eta in 0.5f64..1.0) {
            let dt = 0.5;
            let mut load = ev(k_out);
            load.c_max = c;
            load.eta = eta;
            let mut e = shp_soc_min(&load, k, dt);
            for _ in k..k_out {
                e += eta * dt * c;
            }
            prop_assert!(e >= load.e_des - 1e-9);
        }

        #[test]
        fn shifting_preserves_energy(profile in proptest::collection::vec(0.0f64..10.0, 0..12), d in 0usize..8) {
            let w = washer(profile.clone(), 8);
            let s = shifted_profile(&w, d).unwrap();
            prop_assert_eq!(s.len(), profile.len() + d);
            prop_assert!((s.iter().sum::<f64>() - profile.iter().sum::<f64>()).abs() < 1e-12);
        }

        #[test]
        fn incidence_columns_sum_to_one(buses in proptest::collection::vec(1usize..8, 0..10)) {
            let mut fleet = Fleet::new();
            for (i, b) in buses.iter().enumerate() {
                let mut l = ev(5);
                l.id = format!("l{i}");
                l.bus = *b;
                fleet.shapeable.push(l);
            }
            let k = fleet.incidence(8);
            for (j, b) in buses.iter().enumerate() {
                let col: u32 = k.iter().map(|row| row[j] as u32).sum();
                prop_assert_eq!(col, 1);
                prop_assert_eq!(k[*b][j], 1);
            }
        }
    }
}
