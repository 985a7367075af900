//! Solvability analysis for finite-horizon discrete-time linear-quadratic
//! optimal control with possibly indefinite weights.
//!
//! Three independent routes are provided:
//!
//! * [`riccati`]: generalized Riccati recursion with the pseudoinverse and
//!   the closed-loop regularity test;
//! * [`perturbation`]: the ε-regularized family, its limit control and the
//!   weak closed-loop gains on a truncated window;
//! * [`oracle`]: the stacked finite-dimensional quadratic, used as ground
//!   truth for convexity and minimizers.
//!
//! [`report`] runs all three and cross-checks them.

pub mod error;
pub mod export;
pub mod kernel;
pub mod oracle;
pub mod perturbation;
pub mod problem;
pub mod report;
pub mod riccati;
pub mod stationarity;

pub use error::{LqError, Result};
pub use oracle::{assemble, oracle_classify, uniform_convexity_margin, OracleResult, OracleVerdict, StackedQuadratic};
pub use perturbation::{
    apply_weak_law, classify_open_loop, epsilon_gain, epsilon_riccati, extract_weak_gains, run_sweep,
    run_sweep_parallel, value_convergence_report, EpsilonSchedule, PerturbationSweep, SweepVerdict,
    WeakClosedLoopResult,
};
pub use problem::{cost, simulate, simulate_feedback, ControlSequence, FeedbackLaw, LqProblem, Trajectory};
pub use report::{classify, oracle_report, solve, sweep_report, ClassifyOptions, SolvabilityReport, SolveReport};
pub use riccati::{
    check_closed_loop_solvable, closed_loop_policy, completion_of_squares_residual, solve_generalized_riccati,
    value_function, ClosedLoopPolicy, Provenance, RiccatiSolution,
};
pub use stationarity::{costates, equilibrium_residual, feedback_fbde_check};

pub use nalgebra::{DMatrix, DVector};
