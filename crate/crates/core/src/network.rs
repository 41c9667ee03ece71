//! Radial distribution network: topology, per-unit limits and fixed-load forecasts.
//!
//! All quantities are per-unit on the base declared in the network file. Bus 0 is
//! the substation; it carries no loads or devices and its squared voltage is fixed.
//! Bus-indexed vectors throughout the crate have length `n_buses()` (root included,
//! entry 0 unused) so that a bus id doubles as a vector index.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_json, Error, Result};

/// System base used to convert between SI units and per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    #[serde(rename = "S_base_kVA")]
    pub s_base_kva: f64,
    #[serde(rename = "V_base_kV")]
    pub v_base_kv: f64,
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self {
            s_base_kva: 1000.0,
            v_base_kv: 12.47,
        }
    }
}

impl PerUnitBase {
    /// Base impedance in ohms.
    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_kv * self.v_base_kv * 1000.0 / self.s_base_kva
    }

    pub fn power_to_pu(&self, kw: f64) -> f64 {
        kw / self.s_base_kva
    }

    pub fn power_from_pu(&self, pu: f64) -> f64 {
        pu * self.s_base_kva
    }

    /// kWh to p.u.-hours.
    pub fn energy_to_pu(&self, kwh: f64) -> f64 {
        kwh / self.s_base_kva
    }

    pub fn energy_from_pu(&self, pu_h: f64) -> f64 {
        pu_h * self.s_base_kva
    }

    pub fn impedance_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.z_base_ohm()
    }

    pub fn impedance_from_pu(&self, pu: f64) -> f64 {
        pu * self.z_base_ohm()
    }

    pub fn voltage_to_pu(&self, kv: f64) -> f64 {
        kv / self.v_base_kv
    }

    pub fn voltage_from_pu(&self, pu: f64) -> f64 {
        pu * self.v_base_kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitorLimits {
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitor: Option<CapacitorLimits>,
    /// Index into the network's battery list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

/// Stationary battery bank. SOC is energy in p.u.-hours; positive power charges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryBank {
    pub id: usize,
    pub bus: usize,
    pub e_low: f64,
    pub e_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Charging efficiency. The controller's linear model assumes 1.
    #[serde(default = "one")]
    pub efficiency: f64,
}

fn one() -> f64 {
    1.0
}

/// Fixed-load forecast, `p[t][i-1]` is the demand at bus `i` during step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLoadForecast {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl FixedLoadForecast {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Forecast with identical demand at every step.
    pub fn constant(steps: usize, p: &[f64], q: &[f64]) -> Self {
        Self {
            p: vec![p.to_vec(); steps],
            q: vec![q.to_vec(); steps],
        }
    }
}

fn default_v_bounds() -> [f64; 2] {
    [0.95, 1.0]
}

/// Raw network description, as stored in a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkData {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: PerUnitBase,
    pub v0_pu: f64,
    #[serde(default = "default_v_bounds")]
    pub v_bounds_pu: [f64; 2],
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub batteries: Vec<BatteryBank>,
    pub fixed_load: FixedLoadForecast,
}

impl NetworkData {
    pub fn from_path(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network data serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyViolation {
    BusIdMismatch { index: usize, id: usize },
    RootHasDevice,
    CapacitorBounds { bus: usize },
    BatteryReference { bus: usize, battery: usize },
    BatteryBounds { battery: usize },
    UnknownBus { line: usize, bus: usize },
    NegativeImpedance { line: usize },
    NonFinite { what: String },
    SelfLoop { line: usize },
    Cycle { line: usize, from: usize, to: usize },
    LineCount { expected: usize, got: usize },
    Unreachable { bus: usize },
    Misoriented { line: usize, from: usize, to: usize },
    VoltageBounds,
    ForecastShape { detail: String },
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TopologyViolation::*;
        match self {
            BusIdMismatch { index, id } => write!(f, "bus at position {index} has id {id}"),
            RootHasDevice => write!(f, "substation bus 0 must not carry devices"),
            CapacitorBounds { bus } => write!(f, "capacitor at bus {bus} has q_min > q_max"),
            BatteryReference { bus, battery } => {
                write!(f, "bus {bus} references battery {battery} which is missing or placed elsewhere")
            }
            BatteryBounds { battery } => {
                write!(f, "battery {battery} has inconsistent bounds (e_low > e_max or p_min > p_max)")
            }
            UnknownBus { line, bus } => write!(f, "line {line} references unknown bus {bus}"),
            NegativeImpedance { line } => write!(f, "line {line} has negative resistance or reactance"),
            NonFinite { what } => write!(f, "non-finite value in {what}"),
            SelfLoop { line } => write!(f, "line {line} is a self-loop"),
            Cycle { line, from, to } => write!(f, "line {line} ({from}->{to}) closes a cycle"),
            LineCount { expected, got } => {
                write!(f, "radial network with {expected} non-root buses needs {expected} lines, found {got}")
            }
            Unreachable { bus } => write!(f, "bus {bus} is not connected to the substation"),
            Misoriented { line, from, to } => {
                write!(f, "line {line} ({from}->{to}) is not oriented away from the substation")
            }
            VoltageBounds => write!(f, "voltage bounds must satisfy 0 < v_min <= v0 <= v_max"),
            ForecastShape { detail } => write!(f, "fixed-load forecast: {detail}"),
        }
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Checks that the lines form a spanning tree rooted at bus 0, oriented away from
/// the root, and that every bound and forecast entry is well formed. An empty
/// result means the data can be turned into a [`NetworkModel`].
pub fn validate_topology(data: &NetworkData) -> Vec<TopologyViolation> {
    use TopologyViolation::*;
    let mut out = Vec::new();
    let nb = data.buses.len();

    for (index, bus) in data.buses.iter().enumerate() {
        if bus.id != index {
            out.push(BusIdMismatch { index, id: bus.id });
        }
        if let Some(cap) = bus.capacitor {
            if !(cap.q_min.is_finite() && cap.q_max.is_finite()) {
                out.push(NonFinite {
                    what: format!("capacitor at bus {index}"),
                });
            } else if cap.q_min > cap.q_max {
                out.push(CapacitorBounds { bus: index });
            }
        }
        if let Some(b) = bus.battery {
            if data.batteries.get(b).is_none_or(|bat| bat.bus != index) {
                out.push(BatteryReference { bus: index, battery: b });
            }
        }
    }
    if let Some(root) = data.buses.first() {
        if root.capacitor.is_some() || root.battery.is_some() {
            out.push(RootHasDevice);
        }
    }
    for (i, bat) in data.batteries.iter().enumerate() {
        let vals = [bat.e_low, bat.e_max, bat.p_min, bat.p_max, bat.efficiency];
        if vals.iter().any(|v| !v.is_finite()) {
            out.push(NonFinite {
                what: format!("battery {i}"),
            });
        } else if bat.e_low > bat.e_max || bat.p_min > bat.p_max {
            out.push(BatteryBounds { battery: i });
        }
        if bat.bus == 0 || bat.bus >= nb || data.buses[bat.bus].battery != Some(i) {
            out.push(BatteryReference {
                bus: bat.bus,
                battery: i,
            });
        }
    }

    let [vmin, vmax] = data.v_bounds_pu;
    if !(vmin.is_finite() && vmax.is_finite() && data.v0_pu.is_finite())
        || vmin <= 0.0
        || vmin > data.v0_pu
        || data.v0_pu > vmax
    {
        out.push(VoltageBounds);
    }

    let n = nb.saturating_sub(1);
    if data.lines.len() != n {
        out.push(LineCount {
            expected: n,
            got: data.lines.len(),
        });
    }
    let mut dsu = DisjointSet::new(nb.max(1));
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nb];
    for (li, line) in data.lines.iter().enumerate() {
        let mut ok = true;
        for bus in [line.from, line.to] {
            if bus >= nb {
                out.push(UnknownBus { line: li, bus });
                ok = false;
            }
        }
        if !(line.r_pu.is_finite() && line.x_pu.is_finite()) {
            out.push(NonFinite {
                what: format!("line {li}"),
            });
        } else if line.r_pu < 0.0 || line.x_pu < 0.0 {
            out.push(NegativeImpedance { line: li });
        }
        if !ok {
            continue;
        }
        if line.from == line.to {
            out.push(SelfLoop { line: li });
            continue;
        }
        if !dsu.union(line.from, line.to) {
            out.push(Cycle {
                line: li,
                from: line.from,
                to: line.to,
            });
            continue;
        }
        adjacency[line.from].push((line.to, li));
        adjacency[line.to].push((line.from, li));
    }
    if nb > 0 {
        let mut seen = vec![false; nb];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &(v, li) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    let line = &data.lines[li];
                    if line.from != u || line.to != v {
                        out.push(Misoriented {
                            line: li,
                            from: line.from,
                            to: line.to,
                        });
                    }
                    queue.push_back(v);
                }
            }
        }
        for (bus, s) in seen.iter().enumerate() {
            if !s {
                out.push(Unreachable { bus });
            }
        }
    }

    let fc = &data.fixed_load;
    if fc.p.is_empty() {
        out.push(ForecastShape {
            detail: "forecast is empty".into(),
        });
    }
    if fc.p.len() != fc.q.len() {
        out.push(ForecastShape {
            detail: format!("p has {} steps but q has {}", fc.p.len(), fc.q.len()),
        });
    }
    for (name, series) in [("p", &fc.p), ("q", &fc.q)] {
        for (t, row) in series.iter().enumerate() {
            if row.len() != n {
                out.push(ForecastShape {
                    detail: format!("{name}[{t}] has width {} (expected {n})", row.len()),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                out.push(NonFinite {
                    what: format!("forecast {name}[{t}]"),
                });
            }
        }
    }
    out
}

/// Validated radial network with cached topology.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    data: NetworkData,
    parent_line: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    bfs_order: Vec<usize>,
    capacitor_buses: Vec<usize>,
}

impl NetworkModel {
    pub fn new(data: NetworkData) -> Result<Self> {
        let violations = validate_topology(&data);
        if !violations.is_empty() {
            return Err(Error::InvalidNetwork(violations));
        }
        let nb = data.buses.len();
        let mut parent_line = vec![None; nb];
        let mut children = vec![Vec::new(); nb];
        for (li, line) in data.lines.iter().enumerate() {
            parent_line[line.to] = Some(li);
            children[line.from].push(li);
        }
        let mut bfs_order = Vec::with_capacity(nb);
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            bfs_order.push(u);
            for &li in &children[u] {
                queue.push_back(data.lines[li].to);
            }
        }
        let capacitor_buses = data
            .buses
            .iter()
            .filter(|b| b.capacitor.is_some())
            .map(|b| b.id)
            .collect();
        Ok(Self {
            data,
            parent_line,
            children,
            bfs_order,
            capacitor_buses,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::new(NetworkData::from_path(path)?)
    }

    pub fn data(&self) -> &NetworkData {
        &self.data
    }

    pub fn name(&self) -> &str {
        &self.data.name
    }

    /// Number of buses including the substation.
    pub fn n_buses(&self) -> usize {
        self.data.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.data.lines.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.data.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.data.lines
    }

    pub fn line(&self, li: usize) -> &Line {
        &self.data.lines[li]
    }

    pub fn batteries(&self) -> &[BatteryBank] {
        &self.data.batteries
    }

    pub fn base(&self) -> PerUnitBase {
        self.data.base
    }

    pub fn battery_at(&self, bus: usize) -> Option<usize> {
        self.data.buses.get(bus).and_then(|b| b.battery)
    }

    pub fn capacitor(&self, bus: usize) -> Option<CapacitorLimits> {
        self.data.buses.get(bus).and_then(|b| b.capacitor)
    }

    /// Buses carrying a capacitor, in id order.
    pub fn capacitor_buses(&self) -> &[usize] {
        &self.capacitor_buses
    }

    /// Squared substation voltage.
    pub fn nu0(&self) -> f64 {
        self.data.v0_pu * self.data.v0_pu
    }

    pub fn nu_min(&self) -> f64 {
        self.data.v_bounds_pu[0] * self.data.v_bounds_pu[0]
    }

    pub fn nu_max(&self) -> f64 {
        self.data.v_bounds_pu[1] * self.data.v_bounds_pu[1]
    }

    pub fn forecast_len(&self) -> usize {
        self.data.fixed_load.len()
    }

    /// Fixed real demand at `bus` during forecast step `t` (no wrapping).
    pub fn fixed_p(&self, t: usize, bus: usize) -> f64 {
        if bus == 0 {
            0.0
        } else {
            self.data.fixed_load.p[t][bus - 1]
        }
    }

    pub fn fixed_q(&self, t: usize, bus: usize) -> f64 {
        if bus == 0 {
            0.0
        } else {
            self.data.fixed_load.q[t][bus - 1]
        }
    }

    /// Total fixed real demand during forecast step `t`.
    pub fn fixed_total(&self, t: usize) -> f64 {
        self.data.fixed_load.p[t].iter().sum()
    }

    /// Maps an absolute step onto the forecast, wrapping periodically when allowed.
    pub fn forecast_index(&self, step: usize, wrap: bool) -> Result<usize> {
        let len = self.forecast_len();
        if step < len {
            Ok(step)
        } else if wrap {
            Ok(step % len)
        } else {
            Err(Error::ForecastTooShort { len, step })
        }
    }

    /// Line feeding `bus` (None for the substation).
    pub fn parent_line(&self, bus: usize) -> Option<usize> {
        self.parent_line.get(bus).copied().flatten()
    }

    /// Lines `(bus, k)` leaving `bus` towards the leaves.
    pub fn downstream_lines(&self, bus: usize) -> Result<&[usize]> {
        self.children
            .get(bus)
            .map(|c| c.as_slice())
            .ok_or(Error::UnknownBus(bus))
    }

    /// Buses in breadth-first order from the substation.
    pub fn bfs_order(&self) -> &[usize] {
        &self.bfs_order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::chain;

    #[test]
    fn two_bus_chain_is_valid() {
        assert!(validate_topology(&chain(1, 0.01, 0.01)).is_empty());
    }

    #[test]
    fn extra_edge_is_reported_as_cycle() {
        let mut d = chain(2, 0.01, 0.01);
        d.lines = vec![
            Line { from: 0, to: 1, r_pu: 0.01, x_pu: 0.01 },
            Line { from: 0, to: 2, r_pu: 0.01, x_pu: 0.01 },
            Line { from: 1, to: 2, r_pu: 0.01, x_pu: 0.01 },
        ];
        let v = validate_topology(&d);
        assert!(v.iter().any(|x| matches!(x, TopologyViolation::Cycle { line: 2, .. })), "{v:?}");
        assert!(v.iter().any(|x| matches!(x, TopologyViolation::LineCount { expected: 2, got: 3 })));
    }

    #[test]
    fn negative_resistance_is_reported() {
        let mut d = chain(1, 0.01, 0.01);
        d.lines[0].r_pu = -0.01;
        assert_eq!(
            validate_topology(&d),
            vec![TopologyViolation::NegativeImpedance { line: 0 }]
        );
    }

    #[test]
    fn disconnected_and_misoriented() {
        let mut d = chain(3, 0.01, 0.01);
        d.lines[1] = Line { from: 2, to: 1, r_pu: 0.01, x_pu: 0.01 };
        let v = validate_topology(&d);
        assert!(v.iter().any(|x| matches!(x, TopologyViolation::Misoriented { line: 1, .. })));

        let mut d = chain(3, 0.01, 0.01);
        d.lines[2] = Line { from: 1, to: 2, r_pu: 0.01, x_pu: 0.01 };
        let v = validate_topology(&d);
        assert!(v.iter().any(|x| matches!(x, TopologyViolation::Unreachable { bus: 3 })));
    }

    #[test]
    fn bounds_and_forecast_shape() {
        let mut d = chain(2, 0.01, 0.01);
        d.v0_pu = 1.02;
        d.buses[1].capacitor = Some(CapacitorLimits { q_min: 0.2, q_max: 0.1 });
        d.fixed_load.p[0].pop();
        let v = validate_topology(&d);
        assert!(v.contains(&TopologyViolation::VoltageBounds));
        assert!(v.contains(&TopologyViolation::CapacitorBounds { bus: 1 }));
        assert!(v.iter().any(|x| matches!(x, TopologyViolation::ForecastShape { .. })));
    }

    #[test]
    fn downstream_lines_follow_tree() {
        let m = NetworkModel::new(chain(3, 0.01, 0.01)).unwrap();
        assert!(m.downstream_lines(3).unwrap().is_empty());
        assert_eq!(m.downstream_lines(1).unwrap(), &[1]);
        assert_eq!(m.downstream_lines(0).unwrap(), &[0]);
        assert!(matches!(m.downstream_lines(9), Err(Error::UnknownBus(9))));

        let m = NetworkModel::new(chain(1, 0.01, 0.01)).unwrap();
        assert_eq!(m.downstream_lines(0).unwrap(), &[0]);
    }

    #[test]
    fn forecast_wraps_only_when_allowed() {
        let m = NetworkModel::new(chain(1, 0.01, 0.01)).unwrap();
        assert_eq!(m.forecast_index(3, true).unwrap(), 0);
        assert!(matches!(
            m.forecast_index(3, false),
            Err(Error::ForecastTooShort { len: 1, step: 3 })
        ));
    }

    proptest::proptest! {
        #[test]
        fn per_unit_round_trip(s in 10.0f64..1e5, v in 0.1f64..400.0, val in -1e4f64..1e4) {
            let base = PerUnitBase { s_base_kva: s, v_base_kv: v };
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
            proptest::prop_assert!(close(base.power_from_pu(base.power_to_pu(val)), val));
            proptest::prop_assert!(close(base.energy_from_pu(base.energy_to_pu(val)), val));
            proptest::prop_assert!(close(base.impedance_from_pu(base.impedance_to_pu(val)), val));
            proptest::prop_assert!(close(base.voltage_from_pu(base.voltage_to_pu(val)), val));
        }
    }
}
