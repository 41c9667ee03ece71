//! Terminal set of the receding-horizon problem and the battery margin conditions
//! that keep the constant-rate tail beyond the horizon admissible.
//!
//! Expressions here live in "load space": column `j` stands for the terminal SOC
//! `e_j(T)` of the `j`-th shapeable load in the fleet. [`remap`] moves them onto
//! the columns of an assembled program.

use serde::Serialize;

use crate::assets::Fleet;
use crate::conic::{ConicProgram, LinExpr, RowKind, RowTag, Sense, VariableIndex};
use crate::error::{Error, Result};
use crate::network::NetworkModel;

use super::stage1::ReferenceTrajectory;

/// Tolerance when judging a numeric terminal SOC against the set.
pub const TERMINAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeableTerminal {
    pub load: usize,
    pub lower: f64,
    pub upper: f64,
}

/// `e_bat(T) = constant + sum coef_j e_j(T)` for one battery.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryTarget {
    pub battery: usize,
    pub bus: usize,
    pub target: LinExpr,
}

/// Buses without storage must see no flexible demand past the horizon:
/// `expr = 0` for each such bus.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroTail {
    pub bus: usize,
    pub tail: LinExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSet {
    /// Absolute terminal step `T = k + N`.
    pub step: usize,
    pub shapeable: Vec<ShapeableTerminal>,
    pub batteries: Vec<BatteryTarget>,
    pub zero_tails: Vec<ZeroTail>,
}

/// One battery margin pair at bus `bus` and absolute step `step`; both must be `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginRow {
    pub bus: usize,
    pub battery: usize,
    pub step: usize,
    /// `p_hat - p_def - p_tail - p_min`.
    pub power: LinExpr,
    /// `e_max - (e_hat + remaining deferrable energy + remaining shapeable energy)`.
    pub energy: LinExpr,
}

fn tail_rate(load: &crate::assets::ShapeableLoad, t: usize, dt: f64) -> f64 {
    1.0 / ((load.k_out - t) as f64 * load.eta * dt)
}

/// Latest plug-out or end of profile over the fleet, at least `t`.
pub fn k_out_max(fleet: &Fleet, t: usize) -> usize {
    fleet.k_out_max().unwrap_or(t).max(t)
}

/// Builds the terminal set at `T = k + n`.
pub fn build_terminal_set(
    model: &NetworkModel,
    reference: &ReferenceTrajectory,
    fleet: &Fleet,
    k: usize,
    n: usize,
    dt: f64,
) -> TerminalSet {
    let t = k + n;
    let kmax = k_out_max(fleet, t);
    let shapeable = fleet
        .shapeable
        .iter()
        .enumerate()
        .map(|(j, load)| {
            let lower = load.soc_min(t, dt).min(load.e_des);
            ShapeableTerminal {
                load: j,
                lower: if load.k_out <= t { load.e_des } else { lower },
                upper: load.e_des,
            }
        })
        .collect();

    let mut tails = vec![LinExpr::new(); model.n_buses()];
    for (j, load) in fleet.shapeable.iter().enumerate() {
        if load.k_out > t {
            let tail = &mut tails[load.bus];
            tail.constant += load.e_des / load.eta;
            tail.push(j, -1.0 / load.eta);
        }
    }
    for bus in 0..model.n_buses() {
        let energy: f64 = (t..kmax)
            .map(|l| fleet.deferrable_power(model.n_buses(), l)[bus])
            .sum::<f64>()
            * dt;
        tails[bus].constant += energy;
    }

    let mut batteries = Vec::new();
    let mut zero_tails = Vec::new();
    for (bus, tail) in tails.into_iter().enumerate() {
        match model.battery_at(bus) {
            Some(b) => batteries.push(BatteryTarget {
                battery: b,
                bus,
                target: tail.plus(reference.e_hat(b, t)),
            }),
            None if !tail.terms.is_empty() || tail.constant != 0.0 => {
                zero_tails.push(ZeroTail { bus, tail })
            }
            None => {}
        }
    }
    TerminalSet {
        step: t,
        shapeable,
        batteries,
        zero_tails,
    }
}

/// Battery margin rows for every battery bus hosting flexible demand past `T`,
/// at every step `l` in `[T, k_out_max]`.
pub fn margin_rows(
    model: &NetworkModel,
    reference: &ReferenceTrajectory,
    fleet: &Fleet,
    k: usize,
    n: usize,
    dt: f64,
) -> Vec<MarginRow> {
    let t = k + n;
    let kmax = k_out_max(fleet, t);
    let nb = model.n_buses();
    let def: Vec<Vec<f64>> = (t..=kmax).map(|l| fleet.deferrable_power(nb, l)).collect();
    let mut rows = Vec::new();
    for bat in model.batteries() {
        let bus = bat.bus;
        let b = bat.id;
        let loads: Vec<usize> = fleet
            .shapeable
            .iter()
            .enumerate()
            .filter(|(_, l)| l.bus == bus && l.k_out > t)
            .map(|(j, _)| j)
            .collect();
        let has_def = def.iter().any(|d| d[bus] != 0.0);
        if loads.is_empty() && !has_def {
            continue;
        }
        for l in t..=kmax {
            let p_def = def[l - t][bus];
            let mut power = LinExpr::constant(reference.p_hat(b, l) - p_def - bat.p_min);
            let remaining_def: f64 = def[l - t..].iter().map(|d| d[bus]).sum::<f64>() * dt;
            let mut energy = LinExpr::constant(bat.e_max - reference.e_hat(b, l) - remaining_def);
            for &j in &loads {
                let load = &fleet.shapeable[j];
                if l < load.k_out {
                    let rate = tail_rate(load, t, dt);
                    power.constant -= load.e_des * rate;
                    power.push(j, rate);
                }
                let frac = (load.k_out.saturating_sub(l)) as f64
                    / (load.eta * (load.k_out - t) as f64);
                if frac > 0.0 {
                    energy.constant -= load.e_des * frac;
                    energy.push(j, frac);
                }
            }
            rows.push(MarginRow {
                bus,
                battery: b,
                step: l,
                power,
                energy,
            });
        }
    }
    rows
}

/// Rewrites load-space columns onto `e_shp(j, H)` of a program.
pub fn remap(expr: &LinExpr, idx: &VariableIndex) -> LinExpr {
    LinExpr {
        terms: expr
            .terms
            .iter()
            .map(|&(j, a)| (idx.e_shp(j, idx.horizon()), a))
            .collect(),
        constant: expr.constant,
    }
}

/// Adds the terminal set and margin rows to a stage-2 style program.
pub fn add_terminal_rows(prog: &mut ConicProgram, idx: &VariableIndex, set: &TerminalSet, margins: &[MarginRow]) {
    let h = idx.horizon();
    for st in &set.shapeable {
        prog.add_range(
            LinExpr::var(idx.e_shp(st.load, h)),
            st.lower,
            st.upper,
            RowTag {
                kind: RowKind::TerminalShapeable,
                element: st.load,
                step: h,
            },
        );
    }
    for bt in &set.batteries {
        let mut row = remap(&bt.target, idx).scaled(-1.0);
        row.push(idx.e_bat(bt.battery, h), 1.0);
        prog.add_row(
            row,
            Sense::Eq,
            RowTag {
                kind: RowKind::TerminalBattery,
                element: bt.bus,
                step: h,
            },
        );
    }
    for zt in &set.zero_tails {
        prog.add_row(
            remap(&zt.tail, idx),
            Sense::Eq,
            RowTag {
                kind: RowKind::TerminalBattery,
                element: zt.bus,
                step: h,
            },
        );
    }
    for m in margins {
        let step = m.step - set.step + h;
        prog.add_row(
            remap(&m.power, idx),
            Sense::Ge,
            RowTag {
                kind: RowKind::BatteryPowerMargin,
                element: m.bus,
                step,
            },
        );
        prog.add_row(
            remap(&m.energy, idx),
            Sense::Ge,
            RowTag {
                kind: RowKind::BatteryEnergyMargin,
                element: m.bus,
                step,
            },
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginCheck {
    pub bus: usize,
    pub step: usize,
    pub power_margin: f64,
    pub energy_margin: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginReport {
    pub entries: Vec<MarginCheck>,
    pub worst_margin: f64,
    pub holds: bool,
}

/// Evaluates the battery margin conditions at numeric terminal SOCs `e_t`
/// (one per shapeable load in fleet order).
pub fn check_margin_conditions(
    model: &NetworkModel,
    reference: &ReferenceTrajectory,
    fleet: &Fleet,
    e_t: &[f64],
    k: usize,
    n: usize,
    dt: f64,
) -> Result<MarginReport> {
    if e_t.len() != fleet.shapeable.len() {
        return Err(Error::Dimension {
            what: "terminal shapeable SOCs",
            expected: fleet.shapeable.len(),
            got: e_t.len(),
        });
    }
    let mut report = MarginReport {
        entries: Vec::new(),
        worst_margin: f64::INFINITY,
        holds: true,
    };
    for row in margin_rows(model, reference, fleet, k, n, dt) {
        let power_margin = row.power.eval(e_t);
        let energy_margin = row.energy.eval(e_t);
        let ok = power_margin >= -TERMINAL_TOL && energy_margin >= -TERMINAL_TOL;
        report.worst_margin = report.worst_margin.min(power_margin).min(energy_margin);
        report.holds &= ok;
        report.entries.push(MarginCheck {
            bus: row.bus,
            step: row.step,
            power_margin,
            energy_margin,
            ok,
        });
    }
    Ok(report)
}

/// Numeric battery targets for given terminal SOCs; errors on a degenerate tail.
pub fn evaluate_terminal_set(set: &TerminalSet, fleet: &Fleet, e_t: &[f64]) -> Result<Vec<f64>> {
    for st in &set.shapeable {
        let load = &fleet.shapeable[st.load];
        if load.k_out == set.step && e_t[st.load] < load.e_des - TERMINAL_TOL {
            return Err(Error::DegenerateTail {
                load: load.id.clone(),
                step: set.step,
                soc: e_t[st.load],
                desired: load.e_des,
            });
        }
    }
    Ok(set.batteries.iter().map(|b| b.target.eval(e_t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::{DeferrableLoad, ShapeableLoad};
    use crate::distflow::FlowSolution;
    use crate::fixtures;

    fn flat_reference(model: &NetworkModel, period: usize, e: f64, p: f64) -> ReferenceTrajectory {
        let nb = model.batteries().len();
        ReferenceTrajectory {
            period,
            e_bat: vec![vec![e; nb]; period + 1],
            p_bat: vec![vec![p; nb]; period],
            q_g: vec![vec![0.0; model.n_buses()]; period],
            flows: FlowSolution::default(),
            objective: 0.0,
            max_relaxation_gap: 0.0,
        }
    }

    fn ev(bus: usize, e: f64, e_des: f64, k_out: usize) -> ShapeableLoad {
        ShapeableLoad {
            id: format!("ev{bus}"),
            bus,
            e,
            e_low: 0.0,
            e_max: 1.0,
            e_des,
            c_max: 0.1,
            eta: 0.9,
            k_in: 0,
            k_out,
        }
    }

    #[test]
    fn empty_fleet_targets_reference() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let r = flat_reference(&model, 96, 0.4, 0.0);
        let set = build_terminal_set(&model, &r, &Fleet::new(), 3, 10, 0.5);
        assert_eq!(set.batteries.len(), 7);
        assert!(set.batteries.iter().all(|b| b.target.terms.is_empty() && b.target.constant == 0.4));
        assert!(set.zero_tails.is_empty());
        assert!(margin_rows(&model, &r, &Fleet::new(), 3, 10, 0.5).is_empty());
    }

    #[test]
    fn satisfied_load_adds_no_tail() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let r = flat_reference(&model, 96, 0.4, 0.0);
        let fleet = Fleet { shapeable: vec![ev(3, 0.5, 0.5, 40)], deferrable: vec![] };
        let set = build_terminal_set(&model, &r, &fleet, 0, 10, 0.5);
        let targets = evaluate_terminal_set(&set, &fleet, &[0.5]).unwrap();
        let b = model.battery_at(3).unwrap();
        assert!((targets[set.batteries.iter().position(|t| t.battery == b).unwrap()] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn deferrable_tail_energy_is_added() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let r = flat_reference(&model, 96, 0.4, 0.0);
        let def = DeferrableLoad {
            id: "wash".into(),
            bus: 5,
            profile: vec![0.1, 0.2, 0.3, 0.2],
            eta: 1.0,
            request_step: 8,
            d_max: 2,
            plug_in_step: Some(8),
        };
        let fleet = Fleet { shapeable: vec![], deferrable: vec![def] };
        // T = 10: the profile entries at steps 10 and 11 remain.
        let set = build_terminal_set(&model, &r, &fleet, 0, 10, 0.5);
        let bt = set.batteries.iter().find(|b| b.bus == 5).unwrap();
        assert!((bt.target.constant - (0.4 + 0.5 * (0.3 + 0.2))).abs() < 1e-12);
    }

    #[test]
    fn degenerate_tail_is_rejected() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let r = flat_reference(&model, 96, 0.4, 0.0);
        let fleet = Fleet { shapeable: vec![ev(3, 0.2, 0.5, 10)], deferrable: vec![] };
        let set = build_terminal_set(&model, &r, &fleet, 0, 10, 0.5);
        assert_eq!((set.shapeable[0].lower, set.shapeable[0].upper), (0.5, 0.5));
        assert!(matches!(
            evaluate_terminal_set(&set, &fleet, &[0.3]),
            Err(Error::DegenerateTail { .. })
        ));
    }

    #[test]
    fn lower_bound_never_exceeds_desired() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let r = flat_reference(&model, 96, 0.4, 0.0);
        for k_out in 11..40 {
            let fleet = Fleet { shapeable: vec![ev(3, 0.0, 0.7, k_out)], deferrable: vec![] };
            let set = build_terminal_set(&model, &r, &fleet, 0, 10, 0.5);
            assert!(set.shapeable[0].lower <= set.shapeable[0].upper);
        }
    }

    #[test]
    fn oversized_deferrable_violates_power_margin() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        // p_hat = 0 with p_min = -0.12: a 0.3 draw at step 12 is out of reach.
        let r = flat_reference(&model, 96, 0.4, 0.0);
        let def = DeferrableLoad {
            id: "heat".into(),
            bus: 6,
            profile: vec![0.1, 0.3, 0.1],
            eta: 1.0,
            request_step: 11,
            d_max: 0,
            plug_in_step: Some(11),
        };
        let fleet = Fleet { shapeable: vec![], deferrable: vec![def] };
        let rep = check_margin_conditions(&model, &r, &fleet, &[], 0, 10, 0.5).unwrap();
        let bad: Vec<_> = rep.entries.iter().filter(|e| !e.ok).map(|e| (e.bus, e.step)).collect();
        assert_eq!(bad, vec![(6, 12)]);
        assert!(!rep.holds);
    }

    #[test]
    fn margin_rows_follow_tail_formula() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let r = flat_reference(&model, 96, 0.3, 0.05);
        let load = ev(8, 0.1, 0.6, 14);
        let fleet = Fleet { shapeable: vec![load.clone()], deferrable: vec![] };
        let e_t = 0.4;
        let p_min = model.batteries()[0].p_min;
        let rep = check_margin_conditions(&model, &r, &fleet, &[e_t], 0, 10, 0.5).unwrap();
        // Direct evaluation of the tail: constant rate over steps 10..14.
        let rate = (0.6 - e_t) / (4.0 * 0.9 * 0.5);
        for e in &rep.entries {
            let draw = if e.step < 14 { rate } else { 0.0 };
            assert!((e.power_margin - (0.05 - draw - p_min)).abs() < 1e-12);
            let left = rate * 0.5 * (14usize.saturating_sub(e.step)) as f64;
            assert!((e.energy_margin - (1.0 - 0.3 - left)).abs() < 1e-12);
        }
        assert_eq!(rep.entries.len(), 5);
        assert!(rep.holds);
    }
}
