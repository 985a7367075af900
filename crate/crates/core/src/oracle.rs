//! Stacked quadratic-program view of the LQ cost.
//!
//! With `u = (u_0, …, u_{N−1}) ∈ R^{mN}` the cost is exactly
//! `J(x0, u) = c + gᵀu + ½ uᵀ H_uu u`. This module assembles `(H_uu, g, c)`
//! by impulse propagation and decides convexity and attainment directly from
//! the finite-dimensional quadratic, independently of any Riccati recursion.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Result;
use crate::kernel::{max_abs, pinv, range_included, sorted_eigenvalues, symmetrize};
use crate::problem::{LqProblem, Trajectory, ControlSequence, simulate};

/// Relative threshold separating a negative eigenvalue from rounding noise.
pub const NEGATIVE_EIG_TOL: f64 = 1e-9;
/// Eigenvalues in `[−BORDERLINE_FACTOR·tol, −tol)` are reported as inconclusive.
pub const BORDERLINE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedQuadratic {
    /// Hessian of `u ↦ J(x0, u)`, independent of `x0`.
    pub huu: DMatrix<f64>,
    /// Gradient at `u = 0`.
    pub g: DVector<f64>,
    /// `J(x0, 0)`
    pub c: f64,
    pub control_dim: usize,
}

impl StackedQuadratic {
    pub fn evaluate(&self, u: &DVector<f64>) -> f64 {
        self.c + self.g.dot(u) + 0.5 * u.dot(&(&self.huu * u))
    }
}

/// Bilinear form of the cost's quadratic part on two (state, control) runs.
fn cost_bilinear(problem: &LqProblem, x1: &Trajectory, u1: &ControlSequence, x2: &Trajectory, u2: &ControlSequence) -> f64 {
    let mut total = 0.0;
    for t in 0..problem.horizon() {
        let (xa, ua, xb, ub) = (&x1[t], &u1[t], &x2[t], &u2[t]);
        total += xa.dot(&(problem.q(t) * xb))
            + ua.dot(&(problem.s(t) * xb))
            + ub.dot(&(problem.s(t) * xa))
            + ua.dot(&(problem.r(t) * ub));
    }
    total + x1.terminal().dot(&(problem.h() * x2.terminal()))
}

/// Builds `(H_uu, g, c)` from `N·m` unit-impulse rollouts plus the free
/// response from `x0`.
pub fn assemble(problem: &LqProblem, x0: &DVector<f64>) -> Result<StackedQuadratic> {
    let (horizon, m, n) = (problem.horizon(), problem.control_dim(), problem.state_dim());
    let dim = horizon * m;
    let free_u = ControlSequence::zeros(horizon, m);
    let free_x = simulate(problem, x0, &free_u)?;
    let zero_state = DVector::zeros(n);

    let mut impulses = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        let u = ControlSequence::from_stacked(&e, m);
        let x = simulate(problem, &zero_state, &u)?;
        impulses.push((x, u));
    }

    let mut huu = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for i in 0..dim {
        let (xi, ui) = &impulses[i];
        g[i] = 2.0 * cost_bilinear(problem, xi, ui, &free_x, &free_u);
        for j in i..dim {
            let (xj, uj) = &impulses[j];
            let v = 2.0 * cost_bilinear(problem, xi, ui, xj, uj);
            huu[(i, j)] = v;
            huu[(j, i)] = v;
        }
    }
    let c = cost_bilinear(problem, &free_x, &free_u, &free_x, &free_u);
    Ok(StackedQuadratic { huu, g, c, control_dim: m })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleVerdict {
    /// Convex and the minimum is attained.
    Solvable,
    /// Convex, but the gradient has a component in the Hessian kernel: the
    /// infimum is −∞ along an unpenalized affine direction.
    ConvexUnattained,
    /// The Hessian has a clearly negative eigenvalue.
    NotOpenLoopSolvable,
    /// Smallest eigenvalue too close to the threshold to decide.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub verdict: OracleVerdict,
    /// Ascending eigenvalues of `H_uu`.
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    /// Minimum-norm minimizer `−H_uu† g` when the minimum is attained.
    pub minimizer: Option<ControlSequence>,
    /// Optimal value; `None` together with `unbounded_below` means −∞.
    pub value: Option<f64>,
    pub unbounded_below: bool,
    pub tolerance_used: f64,
}

pub fn oracle_classify(sq: &StackedQuadratic) -> Result<OracleResult> {
    let tol = NEGATIVE_EIG_TOL * (1.0 + max_abs(&sq.huu));
    let eigenvalues = sorted_eigenvalues(&sq.huu);
    let min_eigenvalue = eigenvalues.first().copied().unwrap_or(0.0);
    let mut out = OracleResult {
        verdict: OracleVerdict::Inconclusive,
        eigenvalues,
        min_eigenvalue,
        minimizer: None,
        value: None,
        unbounded_below: false,
        tolerance_used: tol,
    };

    if min_eigenvalue < -BORDERLINE_FACTOR * tol {
        out.verdict = OracleVerdict::NotOpenLoopSolvable;
        out.unbounded_below = true;
        return Ok(out);
    }
    if min_eigenvalue < -tol {
        return Ok(out);
    }

    let huu = symmetrize(&sq.huu);
    let g_col = DMatrix::from_column_slice(sq.g.len(), 1, sq.g.as_slice());
    if range_included(&g_col, &huu, tol)? {
        let step = pinv(&huu)? * &sq.g;
        let value = sq.c - 0.5 * sq.g.dot(&step);
        out.verdict = OracleVerdict::Solvable;
        out.minimizer = Some(ControlSequence::from_stacked(&(-step), sq.control_dim));
        out.value = Some(value);
    } else {
        out.verdict = OracleVerdict::ConvexUnattained;
        out.unbounded_below = true;
    }
    Ok(out)
}

/// Best `α` with `J(0, u) ≥ α Σ|u_t|²`, i.e. `λ_min(H_uu) / 2`.
pub fn uniform_convexity_margin(sq: &StackedQuadratic) -> f64 {
    sorted_eigenvalues(&sq.huu).first().copied().unwrap_or(0.0) / 2.0
}

/// Solvability for every initial state: `H_uu ⪰ 0` and the gradient lies in
/// `Range(H_uu)` for each basis vector `e_i` as `x0`.
pub fn solvable_for_all_initial_states(problem: &LqProblem) -> Result<bool> {
    let n = problem.state_dim();
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let verdict = oracle_classify(&assemble(problem, &e)?)?.verdict;
        if verdict != OracleVerdict::Solvable {
            return Ok(false);
        }
    }
    Ok(true)
}
