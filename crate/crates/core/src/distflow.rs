//! Branch-flow quantities and the exact (non-relaxed) DistFlow solver.
//!
//! The backward-forward sweep here solves the original equality form
//! `l_ij * nu_i = P_ij^2 + Q_ij^2` and is used as an independent reference for the
//! relaxed conic model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkModel;

/// Line flows and squared bus voltages for one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStep {
    /// Real power entering each line at its sending end.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Squared current magnitude per line.
    pub l: Vec<f64>,
    /// Squared voltage per bus, root included.
    pub nu: Vec<f64>,
}

impl FlowStep {
    pub fn zeros(model: &NetworkModel) -> Self {
        Self {
            p: vec![0.0; model.n_lines()],
            q: vec![0.0; model.n_lines()],
            l: vec![0.0; model.n_lines()],
            nu: vec![model.nu0(); model.n_buses()],
        }
    }

    /// Real power drawn from the substation.
    pub fn substation_p(&self, model: &NetworkModel) -> f64 {
        model
            .downstream_lines(0)
            .map(|ls| ls.iter().map(|&li| self.p[li]).sum())
            .unwrap_or(0.0)
    }

    /// Ohmic losses `sum r_ij l_ij`.
    pub fn losses(&self, model: &NetworkModel) -> f64 {
        model
            .lines()
            .iter()
            .zip(&self.l)
            .map(|(line, l)| line.r_pu * l)
            .sum()
    }
}

/// Flows over a horizon, one [`FlowStep`] per step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    pub steps: Vec<FlowStep>,
}

/// Net consumption per bus (root entry ignored).
#[derive(Debug, Clone, PartialEq)]
pub struct BusInjections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl BusInjections {
    pub fn zeros(n_buses: usize) -> Self {
        Self {
            p: vec![0.0; n_buses],
            q: vec![0.0; n_buses],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-12,
        }
    }
}

/// Largest residual of the four exact DistFlow relations at `flow`.
pub fn distflow_residual(model: &NetworkModel, inj: &BusInjections, flow: &FlowStep) -> f64 {
    let mut worst: f64 = 0.0;
    for (li, line) in model.lines().iter().enumerate() {
        let (i, j) = (line.from, line.to);
        let children = model.downstream_lines(j).unwrap_or(&[]);
        let sum_p: f64 = children.iter().map(|&c| flow.p[c]).sum();
        let sum_q: f64 = children.iter().map(|&c| flow.q[c]).sum();
        let (r, x) = (line.r_pu, line.x_pu);
        let ra = flow.p[li] - (inj.p[j] + r * flow.l[li] + sum_p);
        let rb = flow.q[li] - (inj.q[j] + x * flow.l[li] + sum_q);
        let rc = flow.nu[j]
            - (flow.nu[i] + (r * r + x * x) * flow.l[li] - 2.0 * (r * flow.p[li] + x * flow.q[li]));
        let rd = flow.l[li] * flow.nu[i] - (flow.p[li].powi(2) + flow.q[li].powi(2));
        worst = worst.max(ra.abs()).max(rb.abs()).max(rc.abs()).max(rd.abs());
    }
    worst
}

/// Solves the exact DistFlow equations by backward-forward sweep.
pub fn solve_exact_distflow(
    model: &NetworkModel,
    inj: &BusInjections,
    opts: SweepOptions,
) -> Result<FlowStep> {
    let nb = model.n_buses();
    if inj.p.len() != nb || inj.q.len() != nb {
        return Err(Error::Dimension {
            what: "bus injections",
            expected: nb,
            got: inj.p.len().min(inj.q.len()),
        });
    }
    let mut flow = FlowStep::zeros(model);
    let order = model.bfs_order();
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        for &bus in order.iter().rev().filter(|&&b| b != 0) {
            let li = model.parent_line(bus).expect("non-root bus has a parent");
            let line = model.line(li);
            let children = model.downstream_lines(bus)?;
            let sum_p: f64 = children.iter().map(|&c| flow.p[c]).sum();
            let sum_q: f64 = children.iter().map(|&c| flow.q[c]).sum();
            flow.p[li] = inj.p[bus] + line.r_pu * flow.l[li] + sum_p;
            flow.q[li] = inj.q[bus] + line.x_pu * flow.l[li] + sum_q;
        }
        for &bus in order.iter().filter(|&&b| b != 0) {
            let li = model.parent_line(bus).expect("non-root bus has a parent");
            let line = model.line(li);
            let (r, x) = (line.r_pu, line.x_pu);
            flow.nu[bus] = flow.nu[line.from] + (r * r + x * x) * flow.l[li]
                - 2.0 * (r * flow.p[li] + x * flow.q[li]);
        }
        if flow.nu.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            break;
        }
        for (li, line) in model.lines().iter().enumerate() {
            flow.l[li] = (flow.p[li].powi(2) + flow.q[li].powi(2)) / flow.nu[line.from];
        }
        residual = distflow_residual(model, inj, &flow);
        if residual <= opts.tol {
            return Ok(flow);
        }
    }
    Err(Error::Diverged {
        iterations: opts.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn two_bus_loaded_voltage() {
        let model = NetworkModel::new(fixtures::chain(1, 0.01, 0.01)).unwrap();
        let mut inj = BusInjections::zeros(2);
        inj.p[1] = 0.1;
        inj.q[1] = 0.05;
        let f = solve_exact_distflow(&model, &inj, SweepOptions::default()).unwrap();
        // Independent scalar fixed-point iteration of the two-bus equations.
        assert!((f.nu[1] - 0.996_997_492_471_1).abs() < 1e-10, "{}", f.nu[1]);
        assert!((f.nu[1].sqrt() - 0.9985).abs() < 1e-4);
        assert!(distflow_residual(&model, &inj, &f) <= 1e-10);
    }

    #[test]
    fn zero_load_gives_flat_voltage() {
        let model = NetworkModel::new(fixtures::chain(4, 0.02, 0.01)).unwrap();
        let f = solve_exact_distflow(&model, &BusInjections::zeros(5), SweepOptions::default()).unwrap();
        assert!(f.p.iter().chain(&f.q).chain(&f.l).all(|v| *v == 0.0));
        assert!(f.nu.iter().all(|v| *v == model.nu0()));
    }

    #[test]
    fn voltage_decreases_along_loaded_chain() {
        let model = NetworkModel::new(fixtures::chain(3, 0.01, 0.008)).unwrap();
        let inj = BusInjections {
            p: vec![0.0, 0.1, 0.1, 0.1],
            q: vec![0.0, 0.03, 0.03, 0.03],
        };
        let f = solve_exact_distflow(&model, &inj, SweepOptions::default()).unwrap();
        assert!(f.nu.windows(2).all(|w| w[1] < w[0]), "{:?}", f.nu);
    }

    #[test]
    fn absurd_load_diverges() {
        let model = NetworkModel::new(fixtures::chain(2, 0.5, 0.5)).unwrap();
        let inj = BusInjections {
            p: vec![0.0, 5.0, 5.0],
            q: vec![0.0, 5.0, 5.0],
        };
        let err = solve_exact_distflow(&model, &inj, SweepOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn dimension_mismatch() {
        let model = NetworkModel::new(fixtures::chain(2, 0.01, 0.01)).unwrap();
        let err = solve_exact_distflow(&model, &BusInjections::zeros(2), SweepOptions::default());
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    proptest::proptest! {
        #[test]
        fn sweep_satisfies_exact_equations(seed in 0u64..500) {
            let (model, inj) = fixtures::random_radial_case(seed, 10);
            let f = solve_exact_distflow(&model, &inj, SweepOptions::default()).unwrap();
            proptest::prop_assert!(distflow_residual(&model, &inj, &f) <= 1e-10);
        }
    }
}
