use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

/// Affine expression `sum coef * x[col] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(col: usize) -> Self {
        Self {
            terms: vec![(col, 1.0)],
            constant: 0.0,
        }
    }

    pub fn add(mut self, col: usize, coef: f64) -> Self {
        self.push(col, coef);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn push(&mut self, col: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((col, coef));
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(c, a)| a * x[c]).sum::<f64>() + self.constant
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(c, a)| (c, a * s)).collect(),
            constant: self.constant * s,
        }
    }
}

/// Relation between a row's expression and zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RowKind {
    RealBalance,
    ReactiveBalance,
    VoltageDrop,
    ShapeableDynamics,
    BatteryDynamics,
    ShapeableEnvelope,
    BatteryEnvelope,
    InitialState,
    Periodicity,
    TerminalShapeable,
    TerminalBattery,
    BatteryPowerMargin,
    BatteryEnergyMargin,
}

/// Identifies a row by what it encodes: element is a line, bus, load or battery
/// index depending on the kind, step is local to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowTag {
    pub kind: RowKind,
    pub element: usize,
    pub step: usize,
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}[{}]@{}", self.kind, self.element, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub expr: LinExpr,
    pub sense: Sense,
    pub tag: RowTag,
}

impl LinearRow {
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.expr.eval(x);
        match self.sense {
            Sense::Eq => v.abs(),
            Sense::Le => v.max(0.0),
            Sense::Ge => (-v).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeTag {
    /// Rotated cone `l * nu >= P^2 + Q^2` written as
    /// `(l + nu, 2P, 2Q, l - nu)` in the standard second-order cone.
    DistFlow { line: usize, step: usize },
    Generic,
}

/// `exprs[0] >= || exprs[1..] ||`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub exprs: Vec<LinExpr>,
    pub tag: ConeTag,
}

impl ConeBlock {
    pub fn violation(&self, x: &[f64]) -> f64 {
        let head = self.exprs[0].eval(x);
        let tail = self.exprs[1..]
            .iter()
            .map(|e| e.eval(x).powi(2))
            .sum::<f64>()
            .sqrt();
        (tail - head).max(0.0)
    }

    /// For a DistFlow cone, `(l * nu - P^2 - Q^2, P^2 + Q^2)` at `x`.
    pub fn relaxation_gap(&self, x: &[f64]) -> Option<(f64, f64)> {
        match self.tag {
            ConeTag::DistFlow { .. } => {
                let v: Vec<f64> = self.exprs.iter().map(|e| e.eval(x)).collect();
                let pq = (v[1] * v[1] + v[2] * v[2]) / 4.0;
                let gap = (v[0] * v[0] - v[3] * v[3]) / 4.0 - pq;
                Some((gap, pq))
            }
            ConeTag::Generic => None,
        }
    }
}

/// `constant + linear . x + sum_{i<=j} quad[(i, j)] x_i x_j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub linear: Vec<f64>,
    pub quad: BTreeMap<(usize, usize), f64>,
    pub constant: f64,
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        let quad: f64 = self.quad.iter().map(|(&(i, j), w)| w * x[i] * x[j]).sum();
        self.constant + lin + quad
    }
}

/// Where a candidate point violates a program the most.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstViolation {
    pub value: f64,
    pub location: String,
}

/// A second-order-cone program over `n_vars` columns:
/// minimize the objective subject to variable bounds, linear rows and cone blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LinearRow>,
    pub cones: Vec<ConeBlock>,
    pub objective: Objective,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n_vars],
            upper: vec![f64::INFINITY; n_vars],
            rows: Vec::new(),
            cones: Vec::new(),
            objective: Objective {
                linear: vec![0.0; n_vars],
                ..Default::default()
            },
        }
    }

    pub fn n_vars(&self) -> usize {
        self.lower.len()
    }

    /// Intersects the existing bounds of `col` with `[lo, hi]`.
    pub fn bound(&mut self, col: usize, lo: f64, hi: f64) {
        self.lower[col] = self.lower[col].max(lo);
        self.upper[col] = self.upper[col].min(hi);
    }

    pub fn fix(&mut self, col: usize, value: f64) {
        self.bound(col, value, value);
    }

    pub fn add_row(&mut self, expr: LinExpr, sense: Sense, tag: RowTag) {
        self.rows.push(LinearRow { expr, sense, tag });
    }

    /// Adds `lo <= expr <= hi`, as a single equality when the bounds coincide.
    pub fn add_range(&mut self, expr: LinExpr, lo: f64, hi: f64, tag: RowTag) {
        if lo == hi {
            self.add_row(expr.plus(-lo), Sense::Eq, tag);
            return;
        }
        if lo.is_finite() {
            self.add_row(expr.clone().plus(-lo), Sense::Ge, tag);
        }
        if hi.is_finite() {
            self.add_row(expr.plus(-hi), Sense::Le, tag);
        }
    }

    pub fn add_cone(&mut self, exprs: Vec<LinExpr>, tag: ConeTag) {
        assert!(!exprs.is_empty(), "cone needs at least one expression");
        self.cones.push(ConeBlock { exprs, tag });
    }

    pub fn add_linear_cost(&mut self, col: usize, coef: f64) {
        self.objective.linear[col] += coef;
    }

    /// Adds `weight * expr^2` to the objective.
    pub fn add_square(&mut self, expr: &LinExpr, weight: f64) {
        if weight == 0.0 {
            return;
        }
        let obj = &mut self.objective;
        for (a, &(ci, ai)) in expr.terms.iter().enumerate() {
            for (b, &(cj, aj)) in expr.terms.iter().enumerate().skip(a) {
                let key = (ci.min(cj), ci.max(cj));
                let mult = if a == b { 1.0 } else { 2.0 };
                *obj.quad.entry(key).or_insert(0.0) += weight * ai * aj * mult;
            }
            obj.linear[ci] += 2.0 * weight * expr.constant * ai;
        }
        obj.constant += weight * expr.constant * expr.constant;
    }

    /// Largest violation of any bound, row or cone at `x`.
    pub fn worst_violation(&self, x: &[f64]) -> WorstViolation {
        let mut worst = WorstViolation {
            value: 0.0,
            location: String::from("none"),
        };
        let mut note = |v: f64, loc: &dyn Fn() -> String| {
            if v > worst.value || v.is_nan() {
                worst.value = if v.is_nan() { f64::INFINITY } else { v };
                worst.location = loc();
            }
        };
        for (i, &v) in x.iter().enumerate() {
            note((self.lower[i] - v).max(v - self.upper[i]).max(0.0), &|| {
                format!("bound on column {i}")
            });
        }
        for row in &self.rows {
            note(row.violation(x), &|| format!("row {}", row.tag));
        }
        for (ci, cone) in self.cones.iter().enumerate() {
            note(cone.violation(x), &|| format!("cone {ci} {:?}", cone.tag));
        }
        worst
    }

    /// Plain-text listing of the program for inspection with external tools.
    pub fn to_listing(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# conic program: {} vars, {} rows, {} cones",
            self.n_vars(),
            self.rows.len(),
            self.cones.len()
        );
        let _ = writeln!(s, "OBJECTIVE constant {}", fmt_num(self.objective.constant));
        for (i, c) in self.objective.linear.iter().enumerate() {
            if *c != 0.0 {
                let _ = writeln!(s, "  lin x{i} {}", fmt_num(*c));
            }
        }
        for (&(i, j), w) in &self.objective.quad {
            let _ = writeln!(s, "  quad x{i} x{j} {}", fmt_num(*w));
        }
        let _ = writeln!(s, "BOUNDS");
        for i in 0..self.n_vars() {
            let _ = writeln!(
                s,
                "  x{i} {} {}",
                fmt_num(self.lower[i]),
                fmt_num(self.upper[i])
            );
        }
        let _ = writeln!(s, "ROWS");
        for row in &self.rows {
            let sense = match row.sense {
                Sense::Eq => "=",
                Sense::Le => "<=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(s, "  {} {} {sense} 0", row.tag, fmt_expr(&row.expr));
        }
        let _ = writeln!(s, "CONES");
        for cone in &self.cones {
            let parts: Vec<String> = cone.exprs.iter().map(fmt_expr).collect();
            let _ = writeln!(s, "  {:?} soc({})", cone.tag, parts.join(" ; "));
        }
        s
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:e}")
    }
}

fn fmt_expr(e: &LinExpr) -> String {
    let mut parts: Vec<String> = e
        .terms
        .iter()
        .map(|&(c, a)| format!("{} x{c}", fmt_num(a)))
        .collect();
    parts.push(fmt_num(e.constant));
    parts.join(" + ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_expands_correctly() {
        let mut p = ConicProgram::new(2);
        let e = LinExpr::var(0).add(1, -2.0).plus(3.0);
        p.add_square(&e, 0.5);
        for x in [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.25]] {
            let direct = 0.5 * e.eval(&x).powi(2);
            assert!((p.objective.eval(&x) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn range_with_equal_bounds_is_equality() {
        let mut p = ConicProgram::new(1);
        let tag = RowTag {
            kind: RowKind::TerminalShapeable,
            element: 0,
            step: 0,
        };
        p.add_range(LinExpr::var(0), 2.0, 2.0, tag);
        assert_eq!(p.rows.len(), 1);
        assert_eq!(p.rows[0].sense, Sense::Eq);
        assert_eq!(p.rows[0].violation(&[2.5]), 0.5);
    }

    #[test]
    fn cone_gap_of_rotated_form() {
        // l = 2, nu = 1, P = 1, Q = 0 -> l nu - P^2 - Q^2 = 1
        let exprs = vec![
            LinExpr::var(0).add(1, 1.0),
            LinExpr::var(2).scaled(2.0),
            LinExpr::var(3).scaled(2.0),
            LinExpr::var(0).add(1, -1.0),
        ];
        let cone = ConeBlock {
            exprs,
            tag: ConeTag::DistFlow { line: 0, step: 0 },
        };
        let (gap, pq) = cone.relaxation_gap(&[2.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((gap - 1.0).abs() < 1e-12 && (pq - 1.0).abs() < 1e-12);
        assert_eq!(cone.violation(&[2.0, 1.0, 1.0, 0.0]), 0.0);
        assert!(cone.violation(&[0.5, 1.0, 1.0, 0.0]) > 0.0);
    }
}
