//! Assembly of the relaxed multi-period feasible set and the storage dynamics.

use crate::assets::Fleet;
use crate::distflow::{FlowSolution, FlowStep};
use crate::error::{Error, Result};
use crate::network::NetworkModel;

use super::index::VariableIndex;
use super::program::{ConeTag, ConicProgram, LinExpr, LinearRow, RowKind, RowTag, Sense};

/// Default relative gap above which a line/step is flagged as not exact.
pub const GAP_TOL: f64 = 1e-5;

/// Absolute steps `start..start + steps` covered by a program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: usize,
    pub steps: usize,
    pub dt: f64,
    /// Wrap forecast indices modulo the forecast length.
    pub wrap: bool,
    /// When true the step-0 states are pinned elsewhere and carry no envelope rows.
    pub fixed_initial: bool,
}

fn tag(kind: RowKind, element: usize, step: usize) -> RowTag {
    RowTag {
        kind,
        element,
        step,
    }
}

/// Deferrable demand per local step and bus implied by the fleet's admitted profiles.
pub fn deferrable_injections(model: &NetworkModel, fleet: &Fleet, window: &Window) -> Vec<Vec<f64>> {
    (0..window.steps)
        .map(|s| fleet.deferrable_power(model.n_buses(), window.start + s))
        .collect()
}

/// Flow balance, voltage drop and cone rows per line and step, device boxes, and
/// SOC envelope rows. Deferrable demand enters as the fixed `deferrable[s][bus]`.
pub fn assemble_feasible_set(
    model: &NetworkModel,
    fleet: &Fleet,
    window: &Window,
    deferrable: &[Vec<f64>],
) -> Result<(ConicProgram, VariableIndex)> {
    if deferrable.len() != window.steps {
        return Err(Error::Dimension {
            what: "deferrable injection steps",
            expected: window.steps,
            got: deferrable.len(),
        });
    }
    if let Some(row) = deferrable.iter().find(|r| r.len() != model.n_buses()) {
        return Err(Error::Dimension {
            what: "deferrable injection buses",
            expected: model.n_buses(),
            got: row.len(),
        });
    }
    let idx = VariableIndex::new(model, fleet.shapeable.len(), window.steps);
    let mut prog = ConicProgram::new(idx.num_vars());
    let nu0 = model.nu0();
    let nu_expr = |bus: usize, s: usize| {
        if bus == 0 {
            LinExpr::constant(nu0)
        } else {
            LinExpr::var(idx.nu(bus, s))
        }
    };

    for s in 0..window.steps {
        let k = window.start + s;
        let t = model.forecast_index(k, window.wrap)?;
        for (li, line) in model.lines().iter().enumerate() {
            let (i, j) = (line.from, line.to);
            let (r, x) = (line.r_pu, line.x_pu);
            let children = model.downstream_lines(j)?;

            let mut pe = LinExpr::var(idx.p(li, s)).add(idx.l(li, s), -r);
            let mut qe = LinExpr::var(idx.q(li, s)).add(idx.l(li, s), -x);
            for &c in children {
                pe.push(idx.p(c, s), -1.0);
                qe.push(idx.q(c, s), -1.0);
            }
            if let Some(b) = model.battery_at(j) {
                pe.push(idx.pbat(b, s), -1.0);
            }
            for (m, load) in fleet.shapeable.iter().enumerate() {
                if load.bus == j {
                    pe.push(idx.c(m, s), -1.0);
                }
            }
            if let Some(col) = idx.qg(j, s) {
                qe.push(col, 1.0);
            }
            pe.constant = -(model.fixed_p(t, j) + deferrable[s][j]);
            qe.constant = -model.fixed_q(t, j);
            prog.add_row(pe, Sense::Eq, tag(RowKind::RealBalance, li, s));
            prog.add_row(qe, Sense::Eq, tag(RowKind::ReactiveBalance, li, s));

            let mut ve = LinExpr::var(idx.nu(j, s))
                .add(idx.l(li, s), -(r * r + x * x))
                .add(idx.p(li, s), 2.0 * r)
                .add(idx.q(li, s), 2.0 * x);
            let up = nu_expr(i, s);
            for &(c, a) in &up.terms {
                ve.push(c, -a);
            }
            ve.constant -= up.constant;
            prog.add_row(ve, Sense::Eq, tag(RowKind::VoltageDrop, li, s));

            let mut head = LinExpr::var(idx.l(li, s));
            let mut last = LinExpr::var(idx.l(li, s));
            for &(c, a) in &up.terms {
                head.push(c, a);
                last.push(c, -a);
            }
            head.constant += up.constant;
            last.constant -= up.constant;
            prog.add_cone(
                vec![
                    head,
                    LinExpr::var(idx.p(li, s)).scaled(2.0),
                    LinExpr::var(idx.q(li, s)).scaled(2.0),
                    last,
                ],
                ConeTag::DistFlow { line: li, step: s },
            );
        }

        for bus in 1..model.n_buses() {
            prog.bound(idx.nu(bus, s), model.nu_min(), model.nu_max());
            if let (Some(col), Some(cap)) = (idx.qg(bus, s), model.capacitor(bus)) {
                prog.bound(col, cap.q_min, cap.q_max);
            }
        }
        for (b, bat) in model.batteries().iter().enumerate() {
            prog.bound(idx.pbat(b, s), bat.p_min, bat.p_max);
        }
        for (m, load) in fleet.shapeable.iter().enumerate() {
            if k < load.k_out && k >= load.k_in {
                prog.bound(idx.c(m, s), 0.0, load.c_max);
            } else {
                prog.fix(idx.c(m, s), 0.0);
            }
        }
    }

    let first = usize::from(window.fixed_initial);
    for s in first..window.steps {
        for (m, load) in fleet.shapeable.iter().enumerate() {
            let lo = load.soc_min(window.start + s, window.dt);
            prog.add_range(
                LinExpr::var(idx.e_shp(m, s)),
                lo,
                load.e_max,
                tag(RowKind::ShapeableEnvelope, m, s),
            );
        }
    }
    for s in first..=window.steps {
        for (b, bat) in model.batteries().iter().enumerate() {
            prog.add_range(
                LinExpr::var(idx.e_bat(b, s)),
                bat.e_low,
                bat.e_max,
                tag(RowKind::BatteryEnvelope, b, s),
            );
        }
    }
    Ok((prog, idx))
}

/// `e(s+1) - e(s) - eta dt c(s) = 0` per shapeable load and
/// `e(s+1) - e(s) - dt p(s) = 0` per battery, for every step of the horizon.
pub fn assemble_dynamics(
    fleet: &Fleet,
    model: &NetworkModel,
    idx: &VariableIndex,
    dt: f64,
) -> Vec<LinearRow> {
    let mut rows = Vec::new();
    for s in 0..idx.horizon() {
        for (m, load) in fleet.shapeable.iter().enumerate() {
            rows.push(LinearRow {
                expr: LinExpr::var(idx.e_shp(m, s + 1))
                    .add(idx.e_shp(m, s), -1.0)
                    .add(idx.c(m, s), -load.eta * dt),
                sense: Sense::Eq,
                tag: tag(RowKind::ShapeableDynamics, m, s),
            });
        }
        for b in 0..model.batteries().len() {
            rows.push(LinearRow {
                expr: LinExpr::var(idx.e_bat(b, s + 1))
                    .add(idx.e_bat(b, s), -1.0)
                    .add(idx.pbat(b, s), -dt),
                sense: Sense::Eq,
                tag: tag(RowKind::BatteryDynamics, b, s),
            });
        }
    }
    rows
}

/// Pins the step-0 states to the measured values.
pub fn pin_initial_state(prog: &mut ConicProgram, idx: &VariableIndex, e_shp: &[f64], e_bat: &[f64]) {
    for (m, &e) in e_shp.iter().enumerate() {
        prog.add_row(
            LinExpr::var(idx.e_shp(m, 0)).plus(-e),
            Sense::Eq,
            tag(RowKind::InitialState, m, 0),
        );
    }
    for (b, &e) in e_bat.iter().enumerate() {
        prog.add_row(
            LinExpr::var(idx.e_bat(b, 0)).plus(-e),
            Sense::Eq,
            tag(RowKind::InitialState, idx.n_shapeable() + b, 0),
        );
    }
}

/// Flow variables of a solution vector, with the root voltage restored.
pub fn extract_flows(model: &NetworkModel, idx: &VariableIndex, x: &[f64]) -> FlowSolution {
    let steps = (0..idx.horizon())
        .map(|s| {
            let mut f = FlowStep::zeros(model);
            for li in 0..model.n_lines() {
                f.p[li] = x[idx.p(li, s)];
                f.q[li] = x[idx.q(li, s)];
                f.l[li] = x[idx.l(li, s)];
            }
            for bus in 1..model.n_buses() {
                f.nu[bus] = x[idx.nu(bus, s)];
            }
            f
        })
        .collect();
    FlowSolution { steps }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineGap {
    pub line: usize,
    pub step: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub tol: f64,
    pub max_gap: f64,
    /// Lines and steps whose relative gap exceeds `tol`.
    pub flagged: Vec<LineGap>,
}

impl GapReport {
    pub fn is_exact(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Relative gap `|l nu_from - P^2 - Q^2| / max(1, P^2 + Q^2)` per line and step.
pub fn check_relaxation_exactness(model: &NetworkModel, flows: &FlowSolution, tol: f64) -> GapReport {
    let mut report = GapReport {
        tol,
        max_gap: 0.0,
        flagged: Vec::new(),
    };
    for (step, f) in flows.steps.iter().enumerate() {
        for (line, l) in model.lines().iter().enumerate() {
            let pq = f.p[line].powi(2) + f.q[line].powi(2);
            let gap = (f.l[line] * f.nu[l.from] - pq).abs() / pq.max(1.0);
            report.max_gap = report.max_gap.max(gap);
            if gap > tol {
                report.flagged.push(LineGap { line, step, gap });
            }
        }
    }
    report
}
