//! Generalized Riccati recursion with the Moore–Penrose pseudoinverse,
//! closed-loop regularity conditions, canonical gains and the value function.
//!
//! The backward step is evaluated in closed-loop form
//!
//! ```text
//! P_t = Q_t + (A_t + B_t K_t)ᵀ P_{t+1} (A_t + B_t K_t) + K_tᵀ R_t K_t + S_tᵀ K_t + K_tᵀ S_t
//! ```
//!
//! with `K_t = −R̂_t† (B_tᵀ P_{t+1} A_t + S_t)`. Expanding and using
//! `R̂† R̂ R̂† = R̂†` gives exactly
//! `Q_t + A_tᵀP_{t+1}A_t − (A_tᵀP_{t+1}B_t + S_tᵀ) R̂_t† (B_tᵀP_{t+1}A_t + S_t)`,
//! but the closed-loop form does not cancel two large terms when `R̂_t` is
//! nearly singular.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LqError, Result};
use crate::kernel::{self, all_finite, is_psd, range_included, symmetrize, PsdVerdict};
use crate::problem::{simulate, ControlSequence, FeedbackLaw, LqProblem};

/// Regularity record of one backward step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRegularity {
    pub psd: PsdVerdict,
    pub psd_ok: bool,
    pub gain_finite: bool,
    pub range_ok: bool,
}

impl StepRegularity {
    pub fn is_regular(&self) -> bool {
        self.psd_ok && self.gain_finite && self.range_ok
    }
}

/// Output of [`solve_generalized_riccati`].
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// `P_0 … P_N`, with `P_N = H`.
    pub p: Vec<DMatrix<f64>>,
    /// `R̂_t = R_t + B_tᵀ P_{t+1} B_t`
    pub rhat: Vec<DMatrix<f64>>,
    /// `B_tᵀ P_{t+1} A_t + S_t`
    pub cross: Vec<DMatrix<f64>>,
    /// `K̂_t = −R̂_t† (B_tᵀ P_{t+1} A_t + S_t)`
    pub hat_gains: Vec<DMatrix<f64>>,
    pub regularity: Vec<StepRegularity>,
}

/// One of the three closed-loop regularity conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `R̂_t ⪰ 0`
    KernelPsd,
    /// `K̂_t` finite
    GainFinite,
    /// `Range(B_tᵀP_{t+1}A_t + S_t) ⊆ Range(R̂_t)`
    RangeInclusion,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::KernelPsd => "kernel positive semidefinite",
            Condition::GainFinite => "finite gain",
            Condition::RangeInclusion => "range inclusion",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub step: usize,
    pub condition: Condition,
}

/// Aggregate closed-loop verdict with per-step evidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopVerdict {
    pub closed_loop_solvable: bool,
    pub first_violation: Option<Violation>,
    /// Steps whose kernel passed the PSD test only within tolerance.
    pub borderline_steps: Vec<usize>,
}

/// Where a feedback policy came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "epsilon", rename_all = "snake_case")]
pub enum Provenance {
    ExactRiccati,
    Perturbed(f64),
    WeakLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopPolicy {
    pub law: FeedbackLaw,
    pub provenance: Provenance,
    /// The free parameters `z_t`, `y_t` of the gain family were set to zero.
    pub free_params_zeroed: bool,
}

/// `Q + (A+BK)ᵀP(A+BK) + KᵀRK + SᵀK + KᵀS`, symmetrized.
pub(crate) fn closed_loop_update(
    p_next: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    s: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gain: &DMatrix<f64>,
) -> DMatrix<f64> {
    let closed = a + b * gain;
    let sk = s.transpose() * gain;
    let p = q + closed.transpose() * p_next * &closed + gain.transpose() * r * gain + &sk + sk.transpose();
    symmetrize(&p)
}

/// Backward sweep from `P_N = H` with the pseudoinverse of `R̂_t`.
pub fn solve_generalized_riccati(problem: &LqProblem) -> Result<RiccatiSolution> {
    let horizon = problem.horizon();
    let mut p = vec![DMatrix::zeros(0, 0); horizon + 1];
    let mut rhat = vec![DMatrix::zeros(0, 0); horizon];
    let mut cross = vec![DMatrix::zeros(0, 0); horizon];
    let mut hat_gains = vec![DMatrix::zeros(0, 0); horizon];
    let mut regularity = Vec::with_capacity(horizon);
    p[horizon] = problem.h().clone();

    for t in (0..horizon).rev() {
        let (a, b) = (problem.a(t), problem.b(t));
        let p_next = &p[t + 1];
        let bt_p = b.transpose() * p_next;
        let kernel_t = symmetrize(&(problem.r(t) + &bt_p * b));
        let cross_t = &bt_p * a + problem.s(t);
        if !all_finite(&kernel_t) || !all_finite(&cross_t) {
            return Err(LqError::NumericalFailure { stage: "generalized Riccati", step: t });
        }
        let gain = -(kernel::pinv(&kernel_t)? * &cross_t);

        let psd = is_psd(&kernel_t, kernel::PSD_TOL)?;
        let gain_finite = all_finite(&gain);
        let range_ok = range_included(&cross_t, &kernel_t, kernel::RANGE_TOL)?;
        regularity.push(StepRegularity {
            psd,
            psd_ok: psd.is_psd,
            gain_finite,
            range_ok,
        });

        let p_t = closed_loop_update(p_next, a, b, problem.q(t), problem.s(t), problem.r(t), &gain);
        if !all_finite(&p_t) {
            return Err(LqError::NumericalFailure { stage: "generalized Riccati", step: t });
        }
        p[t] = p_t;
        rhat[t] = kernel_t;
        cross[t] = cross_t;
        hat_gains[t] = gain;
    }
    regularity.reverse();
    Ok(RiccatiSolution {
        p,
        rhat,
        cross,
        hat_gains,
        regularity,
    })
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.rhat.len()
    }

    pub fn verdict(&self) -> ClosedLoopVerdict {
        let mut first_violation = None;
        let mut borderline_steps = Vec::new();
        for (t, reg) in self.regularity.iter().enumerate() {
            if reg.psd.is_borderline() {
                borderline_steps.push(t);
            }
            if first_violation.is_some() {
                continue;
            }
            let condition = if !reg.psd_ok {
                Some(Condition::KernelPsd)
            } else if !reg.gain_finite {
                Some(Condition::GainFinite)
            } else if !reg.range_ok {
                Some(Condition::RangeInclusion)
            } else {
                None
            };
            first_violation = condition.map(|condition| Violation { step: t, condition });
        }
        ClosedLoopVerdict {
            closed_loop_solvable: first_violation.is_none(),
            first_violation,
            borderline_steps,
        }
    }

    fn require_solvable(&self) -> Result<()> {
        match self.verdict().first_violation {
            None => Ok(()),
            Some(v) => Err(LqError::NotClosedLoopSolvable {
                step: v.step,
                condition: v.condition.to_string(),
            }),
        }
    }
}

/// Closed-loop solvability test: every step regular.
pub fn check_closed_loop_solvable(sol: &RiccatiSolution, problem: &LqProblem) -> ClosedLoopVerdict {
    debug_assert_eq!(sol.horizon(), problem.horizon());
    sol.verdict()
}

/// Canonical closed-loop solution `K*_t = K̂_t`, `v*_t = 0`.
pub fn closed_loop_policy(sol: &RiccatiSolution, problem: &LqProblem) -> Result<ClosedLoopPolicy> {
    debug_assert_eq!(sol.horizon(), problem.horizon());
    sol.require_solvable()?;
    Ok(ClosedLoopPolicy {
        law: FeedbackLaw::from_gains(sol.hat_gains.clone())?,
        provenance: Provenance::ExactRiccati,
        free_params_zeroed: true,
    })
}

/// `V(x0) = x0ᵀ P_0 x0`; refused when the problem is not closed-loop solvable.
pub fn value_function(sol: &RiccatiSolution, x0: &DVector<f64>) -> Result<f64> {
    sol.require_solvable()?;
    let p0 = &sol.p[0];
    if x0.len() != p0.nrows() {
        return Err(LqError::mismatch("x0", 0, p0.nrows(), x0.len()));
    }
    Ok(x0.dot(&(p0 * x0)))
}

/// `J(x0,u) − x0ᵀP_0x0 − Σ_t (u_t − K*_t x_t)ᵀ R̂_t (u_t − K*_t x_t)`, which
/// vanishes identically on closed-loop solvable problems.
pub fn completion_of_squares_residual(
    problem: &LqProblem,
    sol: &RiccatiSolution,
    x0: &DVector<f64>,
    u: &ControlSequence,
) -> Result<f64> {
    let traj = simulate(problem, x0, u)?;
    let j = crate::problem::cost_along(problem, &traj, u);
    let mut squares = 0.0;
    for t in 0..problem.horizon() {
        let d = &u[t] - &sol.hat_gains[t] * &traj[t];
        squares += d.dot(&(&sol.rhat[t] * &d));
    }
    Ok(j - x0.dot(&(&sol.p[0] * x0)) - squares)
}

/// Textbook recursion
/// `P_t = Q_t + A_tᵀP_{t+1}A_t − (A_tᵀP_{t+1}B_t + S_tᵀ)(R_t + B_tᵀP_{t+1}B_t)⁻¹(B_tᵀP_{t+1}A_t + S_t)`
/// with an ordinary inverse. Fails on a singular kernel.
pub fn solve_classical_riccati(problem: &LqProblem) -> Result<Vec<DMatrix<f64>>> {
    let horizon = problem.horizon();
    let mut p = vec![DMatrix::zeros(0, 0); horizon + 1];
    p[horizon] = problem.h().clone();
    for t in (0..horizon).rev() {
        let (a, b) = (problem.a(t), problem.b(t));
        let p_next = &p[t + 1];
        let kernel_t = problem.r(t) + b.transpose() * p_next * b;
        let inv = kernel_t
            .clone()
            .try_inverse()
            .ok_or(LqError::NumericalFailure { stage: "classical Riccati", step: t })?;
        let left = a.transpose() * p_next * b + problem.s(t).transpose();
        let right = b.transpose() * p_next * a + problem.s(t);
        let p_t = problem.q(t) + a.transpose() * p_next * a - left * inv * right;
        if !all_finite(&p_t) {
            return Err(LqError::NumericalFailure { stage: "classical Riccati", step: t });
        }
        p[t] = symmetrize(&p_t);
    }
    Ok(p)
}
