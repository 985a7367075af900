//! Costate recursion and equilibrium residuals of the forward–backward
//! difference equations.
//!
//! Costates are stored as `λ[0..N]` where `λ[t]` pairs with step `t`:
//! `λ[N−1] = H x_N` and `λ[t−1] = Q_t x_t + S_tᵀ u_t + A_tᵀ λ[t]`.
//! The equilibrium residual at step `t` is `R_t u_t + S_t x_t + B_tᵀ λ[t]`,
//! half the gradient of `J(x0, ·)` with respect to `u_t`.

use nalgebra::DVector;

use crate::error::{LqError, Result};
use crate::kernel::max_abs_vec;
use crate::problem::{simulate, simulate_feedback, ControlSequence, FeedbackLaw, LqProblem, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct CostateSequence(Vec<DVector<f64>>);

impl CostateSequence {
    pub fn as_slice(&self) -> &[DVector<f64>] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for CostateSequence {
    type Output = DVector<f64>;
    fn index(&self, t: usize) -> &DVector<f64> {
        &self.0[t]
    }
}

pub fn costates(problem: &LqProblem, traj: &Trajectory, u: &ControlSequence) -> Result<CostateSequence> {
    let horizon = problem.horizon();
    if traj.len() != horizon + 1 {
        return Err(LqError::mismatch("trajectory length", 0, horizon + 1, traj.len()));
    }
    if u.len() != horizon {
        return Err(LqError::mismatch("control sequence length", 0, horizon, u.len()));
    }
    let mut lambda = vec![DVector::zeros(problem.state_dim()); horizon];
    lambda[horizon - 1] = problem.h() * traj.terminal();
    for t in (1..horizon).rev() {
        lambda[t - 1] = problem.q(t) * &traj[t] + problem.s(t).transpose() * &u[t] + problem.a(t).transpose() * &lambda[t];
    }
    Ok(CostateSequence(lambda))
}

/// Per-step residual vectors `R_t u_t + S_t x_t + B_tᵀ λ_t`.
pub fn equilibrium_residuals(
    problem: &LqProblem,
    x0: &DVector<f64>,
    u: &ControlSequence,
) -> Result<Vec<DVector<f64>>> {
    let traj = simulate(problem, x0, u)?;
    let lambda = costates(problem, &traj, u)?;
    Ok((0..problem.horizon())
        .map(|t| problem.r(t) * &u[t] + problem.s(t) * &traj[t] + problem.b(t).transpose() * &lambda[t])
        .collect())
}

/// `max_t ‖R_t u_t + S_t x_t + B_tᵀ λ_t‖_max`
pub fn equilibrium_residual(problem: &LqProblem, x0: &DVector<f64>, u: &ControlSequence) -> Result<f64> {
    Ok(equilibrium_residuals(problem, x0, u)?
        .iter()
        .map(max_abs_vec)
        .fold(0.0, f64::max))
}

/// Residual of the feedback form of the equilibrium condition,
/// `max_t ‖(R_t K_t + S_t) x_t + R_t v_t + B_tᵀ λ_t‖_max`, with `x` driven by
/// the law and `λ` from `λ[t−1] = (Q_t + S_tᵀK_t) x_t + S_tᵀ v_t + A_tᵀ λ[t]`.
pub fn feedback_fbde_check(problem: &LqProblem, x0: &DVector<f64>, law: &FeedbackLaw) -> Result<f64> {
    let (traj, _) = simulate_feedback(problem, x0, law)?;
    let horizon = problem.horizon();
    let mut lambda = vec![DVector::zeros(problem.state_dim()); horizon];
    lambda[horizon - 1] = problem.h() * traj.terminal();
    for t in (1..horizon).rev() {
        let (k, v) = (law.gain(t), law.offset(t));
        let st = problem.s(t).transpose();
        lambda[t - 1] = (problem.q(t) + &st * k) * &traj[t] + &st * v + problem.a(t).transpose() * &lambda[t];
    }
    let mut worst = 0.0_f64;
    for t in 0..horizon {
        let (k, v) = (law.gain(t), law.offset(t));
        let res = (problem.r(t) * k + problem.s(t)) * &traj[t] + problem.r(t) * v + problem.b(t).transpose() * &lambda[t];
        worst = worst.max(max_abs_vec(&res));
    }
    Ok(worst)
}
