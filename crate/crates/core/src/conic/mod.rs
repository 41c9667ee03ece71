//! Second-order-cone programs over the relaxed DistFlow feasible set.

pub mod assemble;
pub mod index;
pub mod program;
pub mod solver;

pub use assemble::{
    assemble_dynamics, assemble_feasible_set, check_relaxation_exactness, deferrable_injections,
    extract_flows, pin_initial_state, GapReport, LineGap, Window, GAP_TOL,
};
pub use index::{Quantity, VariableIndex};
pub use program::{ConeTag, ConicProgram, LinExpr, LinearRow, RowKind, RowTag, Sense};
pub use solver::{solve, SolveStatus, SolverReport, SolverSettings};
