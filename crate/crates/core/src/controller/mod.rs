//! Two-stage controller: a periodic reference without flexible loads and a
//! price-driven receding-horizon problem with a terminal set.

pub mod candidate;
pub mod config;
pub mod stage1;
pub mod stage2;
pub mod terminal;

pub use candidate::{candidate_residual, construct_shifted_candidate, ShiftedCandidate};
pub use config::{
    ControllerConfig, ControllerContext, ControllerWeights, Diagonal, HorizonConfig, PriceSignal,
    PriceSpec, ResolvedWeights,
};
pub use stage1::{build_stage1_program, solve_stage1, ReferenceTrajectory};
pub use stage2::{
    build_stage2_program, solve_stage2, try_stage2, MpcSolution, Stage2Outcome, StepControl,
    SystemState,
};
pub use terminal::{
    build_terminal_set, check_margin_conditions, evaluate_terminal_set, margin_rows, MarginReport,
    TerminalSet,
};
