//! Adapter from [`ConicProgram`] to the Clarabel interior-point solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::program::{ConeTag, ConicProgram, Sense};

/// Tolerance used to judge constant rows before calling the solver.
const CONSTANT_ROW_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let tol = std::env::var("GRIDSHAPER_SOLVER_TOL")
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|t| t.is_finite() && *t > 0.0)
            .unwrap_or(1e-8);
        Self { tol, max_iter: 400 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure { code: String },
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        matches!(self, SolveStatus::Optimal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    /// Largest bound, row or cone violation of `x`.
    pub max_residual: f64,
    /// Largest relative gap over the DistFlow cones, zero when there are none.
    pub max_relaxation_gap: f64,
    pub iterations: u32,
}

impl SolverReport {
    fn early(status: SolveStatus, n: usize) -> Self {
        Self {
            status,
            objective: f64::NAN,
            x: vec![f64::NAN; n],
            max_residual: f64::INFINITY,
            max_relaxation_gap: f64::INFINITY,
            iterations: 0,
        }
    }
}

/// `|l nu - P^2 - Q^2| / max(1, P^2 + Q^2)` per DistFlow cone.
pub fn relaxation_gaps(program: &ConicProgram, x: &[f64]) -> Vec<(ConeTag, f64)> {
    program
        .cones
        .iter()
        .filter_map(|c| {
            c.relaxation_gap(x)
                .map(|(gap, pq)| (c.tag, gap.abs() / pq.max(1.0)))
        })
        .collect()
}

pub fn max_relaxation_gap(program: &ConicProgram, x: &[f64]) -> f64 {
    relaxation_gaps(program, x)
        .into_iter()
        .map(|(_, g)| g)
        .fold(0.0, f64::max)
}

struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
}

impl Triplets {
    fn push_row(&mut self, terms: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let r = self.b.len();
        for (c, v) in terms {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
        self.b.push(rhs);
    }
}

/// Solves `program`. Never panics on solver trouble: failures are reported in the status.
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> SolverReport {
    let n = program.n_vars();
    let mut trip = Triplets {
        rows: Vec::new(),
        cols: Vec::new(),
        vals: Vec::new(),
        b: Vec::new(),
    };

    // Zero cone block: equality rows and fixed variables.
    for row in program.rows.iter().filter(|r| r.sense == Sense::Eq) {
        if row.expr.terms.is_empty() {
            if row.expr.constant.abs() > CONSTANT_ROW_TOL {
                return SolverReport::early(SolveStatus::Infeasible, n);
            }
            continue;
        }
        trip.push_row(row.expr.terms.iter().copied(), -row.expr.constant);
    }
    for i in 0..n {
        if program.lower[i] == program.upper[i] {
            trip.push_row([(i, 1.0)], program.lower[i]);
        }
    }
    let n_zero = trip.b.len();

    // Nonnegative block: inequalities and remaining bounds.
    for row in program.rows.iter().filter(|r| r.sense != Sense::Eq) {
        let sign = if row.sense == Sense::Le { 1.0 } else { -1.0 };
        if row.expr.terms.is_empty() {
            if sign * row.expr.constant > CONSTANT_ROW_TOL {
                return SolverReport::early(SolveStatus::Infeasible, n);
            }
            continue;
        }
        trip.push_row(
            row.expr.terms.iter().map(|&(c, a)| (c, sign * a)),
            -sign * row.expr.constant,
        );
    }
    for i in 0..n {
        let (lo, hi) = (program.lower[i], program.upper[i]);
        if lo == hi {
            continue;
        }
        if hi.is_finite() {
            trip.push_row([(i, 1.0)], hi);
        }
        if lo.is_finite() {
            trip.push_row([(i, -1.0)], -lo);
        }
    }
    let n_nonneg = trip.b.len() - n_zero;

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_zero > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_zero));
    }
    if n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }
    for cone in &program.cones {
        for e in &cone.exprs {
            trip.push_row(e.terms.iter().map(|&(c, a)| (c, -a)), e.constant);
        }
        cones.push(SupportedConeT::SecondOrderConeT(cone.exprs.len()));
    }

    let m = trip.b.len();
    let a = CscMatrix::new_from_triplets(m, n, trip.rows, trip.cols, trip.vals);

    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (&(i, j), &w) in &program.objective.quad {
        pi.push(i);
        pj.push(j);
        pv.push(if i == j { 2.0 * w } else { w });
    }
    let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    let q = &program.objective.linear;
    let mut attempt = clarabel_attempt(&p, q, &a, &trip.b, &cones, settings, false);
    if matches!(attempt.0, SolveStatus::NumericalFailure { .. }) {
        log::debug!("clarabel {:?}, retrying with stronger regularization", attempt.0);
        attempt = clarabel_attempt(&p, q, &a, &trip.b, &cones, settings, true);
    }
    let (status, x, iterations) = attempt;
    if let SolveStatus::NumericalFailure { code } = &status {
        dump_failed(program, code);
    }
    if x.is_empty() {
        return SolverReport::early(status, n);
    }
    let worst = program.worst_violation(&x);
    log::debug!(
        "clarabel {:?} in {} iterations, worst violation {:.2e} at {}",
        status,
        iterations,
        worst.value,
        worst.location
    );
    SolverReport {
        status,
        objective: program.objective.eval(&x),
        max_relaxation_gap: max_relaxation_gap(program, &x),
        max_residual: worst.value,
        iterations,
        x,
    }
}

/// Writes the listing of a failed program when `GRIDSHAPER_DUMP_DIR` is set.
fn dump_failed(program: &ConicProgram, code: &str) {
    let Some(dir) = std::env::var_os("GRIDSHAPER_DUMP_DIR") else {
        return;
    };
    let dir = std::path::PathBuf::from(dir);
    let seq = DUMP_SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let path = dir.join(format!("failed-{seq:04}.txt"));
    let text = format!("# status {code}\n{}", program.to_listing());
    if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(&path, text)) {
        log::warn!("could not dump failed program to {}: {e}", path.display());
    }
}

static DUMP_SEQ: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

/// One Clarabel run. The robust variant raises the static regularization and the
/// refinement budget, which helps near the feasibility boundary.
fn clarabel_attempt(
    p: &CscMatrix<f64>,
    q: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    settings: &SolverSettings,
    robust: bool,
) -> (SolveStatus, Vec<f64>, u32) {
    let mut cl = DefaultSettings::<f64> {
        verbose: false,
        max_iter: settings.max_iter,
        tol_gap_abs: settings.tol,
        tol_gap_rel: settings.tol,
        tol_feas: settings.tol,
        ..DefaultSettings::default()
    };
    if robust {
        cl.max_iter = settings.max_iter * 2;
        cl.static_regularization_constant = 1e-7;
        cl.iterative_refinement_max_iter = 50;
        cl.equilibrate_max_iter = 50;
    }
    let mut solver = match DefaultSolver::new(p, q, a, b, cones, cl) {
        Ok(s) => s,
        Err(e) => {
            return (
                SolveStatus::NumericalFailure {
                    code: format!("setup: {e}"),
                },
                Vec::new(),
                0,
            )
        }
    };
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        other => SolveStatus::NumericalFailure {
            code: format!("{other:?}"),
        },
    };
    (status, sol.x.clone(), sol.iterations)
}
