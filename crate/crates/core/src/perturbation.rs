//! ε-regularization of the LQ problem and the weak closed-loop limit.
//!
//! For each `ε > 0` the cost `J(x0, u) + ε Σ|u_t|²` is solved by a Riccati
//! recursion with kernel `R_t + B_tᵀP^ε_{t+1}B_t + εI`. The resulting family
//! of controls `u^ε` and gains `K^ε` is swept over a decreasing schedule and
//! its limit behaviour decides open-loop solvability: bounded and Cauchy
//! controls certify a minimizer, blow-up of the controls or the values
//! certifies the opposite. Gains converge on the truncated window
//! `{0, …, N−2}`; the last-step gain may diverge and is reported separately.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LqError, Result};
use crate::kernel::{self, all_finite, inverse_or_pinv, is_psd, max_abs, range_included, symmetrize};
use crate::problem::{
    control_from_values, simulate, simulate_feedback, trajectory_from_states, ControlSequence, FeedbackLaw,
    LqProblem, Trajectory,
};
use crate::riccati::{closed_loop_update, solve_generalized_riccati, ClosedLoopPolicy, Provenance};
use crate::stationarity::{equilibrium_residual, equilibrium_residuals};

/// Cauchy tolerance on squared gaps, relative to `1 + Σ|u|²`.
pub const CAUCHY_TOL: f64 = 1e-8;
/// `Σ|u^ε|²` above this counts as divergence.
pub const DIVERGENCE_GUARD: f64 = 1e12;
/// Equilibrium residual accepted as a stationarity certificate.
pub const CERT_TOL: f64 = 1e-6;
/// Squared gaps below this (relative) floor are rounding noise.
const GAP_NOISE_FLOOR: f64 = 1e-24;
const MAX_REFINEMENTS: usize = 3;
/// A perturbed kernel counts as singular only if its smallest singular value
/// is below this fraction of ε as well as below the relative rank cutoff.
const SHIFT_FRACTION: f64 = 1e-3;

/// Strictly decreasing positive values of ε, at least three of them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonSchedule {
    values: Vec<f64>,
}

impl EpsilonSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(LqError::InvalidSchedule(format!(
                "need at least 3 values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(LqError::InvalidSchedule(format!("value {bad} is not a positive number")));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(LqError::InvalidSchedule("values must be strictly decreasing".into()));
        }
        Ok(Self { values })
    }

    /// `ε_k = start · ratio^k` for `k = 0..steps`.
    pub fn geometric(start: f64, ratio: f64, steps: usize) -> Result<Self> {
        if !(start.is_finite() && start > 0.0) {
            return Err(LqError::InvalidSchedule(format!("start {start} must be positive")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(LqError::InvalidSchedule(format!("ratio {ratio} must lie in (0, 1)")));
        }
        let mut values = Vec::with_capacity(steps);
        let mut eps = start;
        for _ in 0..steps {
            values.push(eps);
            eps *= ratio;
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self::geometric(1.0, 0.5, 40).expect("default schedule is valid")
    }
}

/// Per-step state of the perturbed kernel `R_t + B_tᵀP^ε_{t+1}B_t + εI`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelFlags {
    /// Numerically singular; the pseudoinverse was used.
    pub singular: bool,
    /// `R_t + B_tᵀP^ε_{t+1}B_t ⪰ εI` fails.
    pub regularity_violated: bool,
}

impl KernelFlags {
    pub fn label(&self) -> &'static str {
        match (self.singular, self.regularity_violated) {
            (false, false) => "ok",
            (true, false) => "pinv",
            (false, true) => "regularity_violated",
            (true, true) => "pinv+regularity_violated",
        }
    }
}

/// Perturbed Riccati sequence for one ε.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonRiccati {
    pub epsilon: f64,
    /// `P^ε_0 … P^ε_N`
    pub p: Vec<DMatrix<f64>>,
    pub kernels: Vec<DMatrix<f64>>,
    /// Inverse (or pseudoinverse when flagged singular) of each kernel.
    pub kernel_inverses: Vec<DMatrix<f64>>,
    /// `B_tᵀP^ε_{t+1}A_t + S_t`
    pub cross: Vec<DMatrix<f64>>,
    /// `−kernel_t⁻¹ cross_t`, the gains used inside the recursion.
    pub hat_gains: Vec<DMatrix<f64>>,
    pub flags: Vec<KernelFlags>,
}

pub fn epsilon_riccati(problem: &LqProblem, epsilon: f64) -> Result<EpsilonRiccati> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(LqError::InvalidSchedule(format!("epsilon {epsilon} must be positive")));
    }
    let (horizon, m) = (problem.horizon(), problem.control_dim());
    let shift = DMatrix::<f64>::identity(m, m) * epsilon;
    let mut p = vec![DMatrix::zeros(0, 0); horizon + 1];
    let mut kernels = Vec::with_capacity(horizon);
    let mut kernel_inverses = Vec::with_capacity(horizon);
    let mut cross = Vec::with_capacity(horizon);
    let mut hat_gains = Vec::with_capacity(horizon);
    let mut flags = Vec::with_capacity(horizon);
    p[horizon] = problem.h().clone();

    for t in (0..horizon).rev() {
        let (a, b) = (problem.a(t), problem.b(t));
        let bt_p = b.transpose() * &p[t + 1];
        let unshifted = symmetrize(&(problem.r(t) + &bt_p * b));
        let kernel_t = &unshifted + &shift;
        let cross_t = &bt_p * a + problem.s(t);
        if !all_finite(&kernel_t) || !all_finite(&cross_t) {
            return Err(LqError::NumericalFailure { stage: "perturbed Riccati", step: t });
        }
        let (inv, singular) = invert_kernel(&kernel_t, epsilon)?;
        let gain = -(&inv * &cross_t);
        let regularity_violated = !is_psd(&(&unshifted - &shift), kernel::PSD_TOL)?.is_psd;

        let r_eff = problem.r(t) + &shift;
        let p_t = closed_loop_update(&p[t + 1], a, b, problem.q(t), problem.s(t), &r_eff, &gain);
        if !all_finite(&p_t) {
            return Err(LqError::NumericalFailure { stage: "perturbed Riccati", step: t });
        }
        p[t] = p_t;
        kernels.push(kernel_t);
        kernel_inverses.push(inv);
        cross.push(cross_t);
        hat_gains.push(gain);
        flags.push(KernelFlags {
            singular,
            regularity_violated,
        });
    }
    kernels.reverse();
    kernel_inverses.reverse();
    cross.reverse();
    hat_gains.reverse();
    flags.reverse();
    Ok(EpsilonRiccati {
        epsilon,
        p,
        kernels,
        kernel_inverses,
        cross,
        hat_gains,
        flags,
    })
}

/// The shifted kernel has an eigenvalue near ε whenever the unshifted one
/// is singular, so a large condition number alone does not make it singular:
/// `diag(1e6, 1e-6)` at `ε = 1e-6` is inverted exactly. The pseudoinverse is
/// used only when the smallest singular value is negligible against both
/// the largest one and ε.
fn invert_kernel(kernel_t: &DMatrix<f64>, epsilon: f64) -> Result<(DMatrix<f64>, bool)> {
    let sv = kernel_t.singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    let negligible = smin <= kernel::RANK_TOL * smax && smin <= SHIFT_FRACTION * epsilon;
    if !negligible {
        if let Some(inv) = kernel_t.clone().try_inverse().filter(all_finite) {
            return Ok((symmetrize(&inv), false));
        }
    }
    inverse_or_pinv(kernel_t)
}

/// Gains of the perturbed problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGains {
    pub gains: Vec<DMatrix<f64>>,
    /// A singular kernel left a family of optimal gains and the member
    /// producing minimum-norm controls was selected.
    pub min_norm_selected: bool,
}

/// `K^ε_t = −(R_t + B_tᵀP^ε_{t+1}B_t + εI)⁻¹(B_tᵀP^ε_{t+1}A_t + S_t)`, `v^ε_t = 0`.
///
/// When some kernel is singular but every step is still regular (kernel PSD,
/// cross term in its range), the optimal gains form the family
/// `K̂_t + Π_t Z_t` with `Π_t` the kernel projector. The free part is then
/// chosen to minimize `Σ|u_t|²` among optimal controls, which is the limit
/// of the family at `ε + δ` as `δ → 0⁺`. Otherwise the pseudoinverse gain is
/// returned as is.
pub fn epsilon_gain(problem: &LqProblem, ric: &EpsilonRiccati) -> Result<EpsilonGains> {
    if ric.flags.iter().any(|f| f.singular) {
        if let Some(gains) = min_norm_gains(problem, ric)? {
            return Ok(EpsilonGains {
                gains,
                min_norm_selected: true,
            });
        }
    }
    Ok(EpsilonGains {
        gains: ric.hat_gains.clone(),
        min_norm_selected: false,
    })
}

fn min_norm_gains(problem: &LqProblem, ric: &EpsilonRiccati) -> Result<Option<Vec<DMatrix<f64>>>> {
    let (horizon, n, m) = (problem.horizon(), problem.state_dim(), problem.control_dim());
    for t in 0..horizon {
        let kernel_t = &ric.kernels[t];
        if !is_psd(kernel_t, kernel::PSD_TOL)?.is_psd || !range_included(&ric.cross[t], kernel_t, kernel::RANGE_TOL)? {
            return Ok(None);
        }
    }
    // Secondary problem in the free parameter w_t: u_t = K̂_t x_t + Π_t w_t,
    // cost Σ|u_t|², no terminal charge.
    let mut projectors = Vec::with_capacity(horizon);
    let (mut a2, mut b2, mut q2, mut s2, mut r2) = (vec![], vec![], vec![], vec![], vec![]);
    for t in 0..horizon {
        let k_hat = &ric.hat_gains[t];
        let proj = symmetrize(&(DMatrix::<f64>::identity(m, m) - &ric.kernel_inverses[t] * &ric.kernels[t]));
        a2.push(problem.a(t) + problem.b(t) * k_hat);
        b2.push(problem.b(t) * &proj);
        q2.push(symmetrize(&(k_hat.transpose() * k_hat)));
        s2.push(&proj * k_hat);
        r2.push(proj.clone());
        projectors.push(proj);
    }
    let secondary = LqProblem::new(a2, b2, q2, s2, r2, DMatrix::zeros(n, n))?;
    let sol = solve_generalized_riccati(&secondary)?;
    if !sol.verdict().closed_loop_solvable {
        return Ok(None);
    }
    Ok(Some(
        (0..horizon)
            .map(|t| &ric.hat_gains[t] + &projectors[t] * &sol.hat_gains[t])
            .collect(),
    ))
}

/// Newton steps on the perturbed stationarity condition, solved with the
/// Riccati factorization already at hand. The feedback rollout amplifies the
/// rounding in `K^ε` by up to `1/ε`; the correction removes that error.
fn refine_control(
    shifted: &LqProblem,
    ric: &EpsilonRiccati,
    gains: &[DMatrix<f64>],
    x0: &DVector<f64>,
    u: ControlSequence,
) -> Result<ControlSequence> {
    let (horizon, n) = (shifted.horizon(), shifted.state_dim());
    let mut best = u;
    let mut best_res = equilibrium_residual(shifted, x0, &best)?;
    for _ in 0..MAX_REFINEMENTS {
        if best_res == 0.0 || !best_res.is_finite() {
            break;
        }
        let residuals = equilibrium_residuals(shifted, x0, &best)?;
        let mut offsets = vec![DVector::zeros(0); horizon];
        let mut linear = DVector::zeros(n);
        for t in (0..horizon).rev() {
            let v = -(&ric.kernel_inverses[t] * (&residuals[t] + shifted.b(t).transpose() * &linear));
            linear = shifted.a(t).transpose() * &linear + ric.cross[t].transpose() * &v;
            offsets[t] = v;
        }
        let mut dx = DVector::zeros(n);
        let mut values = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let du = &gains[t] * &dx + &offsets[t];
            dx = shifted.a(t) * &dx + shifted.b(t) * &du;
            values.push(&best[t] + du);
        }
        if !values.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            break;
        }
        let candidate = control_from_values(values);
        let res = equilibrium_residual(shifted, x0, &candidate)?;
        if res < best_res {
            best = candidate;
            best_res = res;
        } else {
            break;
        }
    }
    Ok(best)
}

/// Everything computed for one ε.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub riccati: EpsilonRiccati,
    pub gains: Vec<DMatrix<f64>>,
    pub min_norm_selected: bool,
    pub trajectory: Trajectory,
    pub control: ControlSequence,
    /// `x0ᵀ P^ε_0 x0`
    pub value: f64,
}

impl SweepPoint {
    pub fn flags(&self) -> &[KernelFlags] {
        &self.riccati.flags
    }

    pub fn policy(&self) -> Result<ClosedLoopPolicy> {
        Ok(ClosedLoopPolicy {
            law: FeedbackLaw::from_gains(self.gains.clone())?,
            provenance: Provenance::Perturbed(self.epsilon),
            free_params_zeroed: !self.min_norm_selected,
        })
    }
}

/// Solves the ε-problem from `x0`: gains, closed-loop trajectory, control
/// and value.
pub fn sweep_point(problem: &LqProblem, x0: &DVector<f64>, epsilon: f64) -> Result<SweepPoint> {
    let ric = epsilon_riccati(problem, epsilon)?;
    let EpsilonGains { gains, min_norm_selected } = epsilon_gain(problem, &ric)?;
    let law = FeedbackLaw::from_gains(gains.clone())?;
    let (_, raw) = simulate_feedback(problem, x0, &law)?;
    let shifted = problem.with_control_penalty(epsilon);
    let control = refine_control(&shifted, &ric, &gains, x0, raw)?;
    let trajectory = simulate(problem, x0, &control)?;
    let value = x0.dot(&(&ric.p[0] * x0));
    Ok(SweepPoint {
        epsilon,
        riccati: ric,
        gains,
        min_norm_selected,
        trajectory,
        control,
        value,
    })
}

/// Convergence diagnostics recomputable from the sweep points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepDiagnostics {
    /// `Σ_t |u^ε_t|²` per schedule point.
    pub u_norms: Vec<f64>,
    pub sup_u_norm: f64,
    /// `Σ_t |u^{ε_k}_t − u^{ε_{k+1}}_t|²`
    pub cauchy_gaps: Vec<f64>,
    /// `Σ_{t ≤ N−2} |K^{ε_k}_t − K^{ε_{k+1}}_t|²` (squared Frobenius)
    pub k_window_gaps: Vec<f64>,
    /// `‖K^ε_{N−1}‖_max` per schedule point.
    pub tail_gain_norms: Vec<f64>,
}

impl SweepDiagnostics {
    pub fn from_points(points: &[SweepPoint]) -> Self {
        let u_norms: Vec<f64> = points.iter().map(|p| p.control.squared_norm()).collect();
        let sup_u_norm = u_norms.iter().cloned().fold(0.0, |acc: f64, v| if v.is_nan() { f64::INFINITY } else { acc.max(v) });
        let cauchy_gaps = points
            .windows(2)
            .map(|w| w[0].control.squared_distance(&w[1].control))
            .collect();
        let k_window_gaps = points
            .windows(2)
            .map(|w| {
                let window = w[0].gains.len().saturating_sub(1);
                (0..window).map(|t| (&w[0].gains[t] - &w[1].gains[t]).norm_squared()).sum()
            })
            .collect();
        let tail_gain_norms = points
            .iter()
            .map(|p| p.gains.last().map(max_abs).unwrap_or(0.0))
            .collect();
        Self {
            u_norms,
            sup_u_norm,
            cauchy_gaps,
            k_window_gaps,
            tail_gain_norms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSweep {
    pub schedule: EpsilonSchedule,
    pub x0: DVector<f64>,
    pub points: Vec<SweepPoint>,
    pub diagnostics: SweepDiagnostics,
}

impl PerturbationSweep {
    pub fn last(&self) -> &SweepPoint {
        self.points.last().expect("schedule has at least three points")
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }
}

/// Runs the whole schedule sequentially.
pub fn run_sweep(problem: &LqProblem, x0: &DVector<f64>, schedule: &EpsilonSchedule) -> Result<PerturbationSweep> {
    let points = schedule
        .values()
        .iter()
        .map(|&eps| sweep_point(problem, x0, eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_sweep(schedule, x0, points))
}

/// Same as [`run_sweep`] with the ε values spread over `threads` workers.
/// Points are assembled in schedule order, so the result is identical.
pub fn run_sweep_parallel(
    problem: &LqProblem,
    x0: &DVector<f64>,
    schedule: &EpsilonSchedule,
    threads: usize,
) -> Result<PerturbationSweep> {
    if threads <= 1 {
        return run_sweep(problem, x0, schedule);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LqError::Runtime(e.to_string()))?;
    let points = pool.install(|| {
        schedule
            .values()
            .par_iter()
            .map(|&eps| sweep_point(problem, x0, eps))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(assemble_sweep(schedule, x0, points))
}

fn assemble_sweep(schedule: &EpsilonSchedule, x0: &DVector<f64>, points: Vec<SweepPoint>) -> PerturbationSweep {
    let diagnostics = SweepDiagnostics::from_points(&points);
    PerturbationSweep {
        schedule: schedule.clone(),
        x0: x0.clone(),
        points,
        diagnostics,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVerdict {
    OpenLoopSolvable,
    NotOpenLoopSolvable,
    Inconclusive,
}

/// Gains extracted on the truncated window `{0, …, N−2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakGains {
    /// `K^{ε_last}` on the window, present when the window gaps converged.
    pub law: Option<FeedbackLaw>,
    pub window_converged: bool,
    /// `K^ε_{N−1}` grows without bound along the schedule.
    pub tail_gain_diverged: bool,
}

/// Evidence behind a [`WeakClosedLoopResult`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEvidence {
    pub sup_u_norm: f64,
    pub last_cauchy_gap: f64,
    pub controls_cauchy: bool,
    pub control_divergent: bool,
    pub value_divergent: bool,
    /// Equilibrium residual of the original problem at the last control.
    pub certificate_residual: f64,
    pub certified: bool,
    pub last_window_gap: Option<f64>,
    /// Schedule points with at least one flagged kernel.
    pub flagged_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakClosedLoopResult {
    pub verdict: SweepVerdict,
    /// Limit of `u^ε` (last schedule point) when the controls are Cauchy.
    pub u_star: Option<ControlSequence>,
    pub k_star: Option<FeedbackLaw>,
    pub tail_gain_diverged: bool,
    pub evidence: SweepEvidence,
}

fn gaps_settled(gaps: &[f64], scale: f64) -> bool {
    match gaps {
        [] => true,
        [last] => *last <= CAUCHY_TOL * scale,
        [.., prev, last] => {
            *last <= CAUCHY_TOL * scale && (last <= prev || *last <= GAP_NOISE_FLOOR * scale)
        }
    }
}

/// Values strictly decreasing over the last four points with non-shrinking
/// decrements, or non-finite.
fn values_diverge(values: &[f64]) -> bool {
    if values.iter().any(|v| !v.is_finite()) {
        return true;
    }
    if values.len() < 4 {
        return false;
    }
    let tail = &values[values.len() - 4..];
    let drops: Vec<f64> = tail.windows(2).map(|w| w[0] - w[1]).collect();
    drops.iter().all(|&d| d > 0.0) && drops.windows(2).all(|w| w[1] >= w[0])
}

/// Decides open-loop solvability at `x0` from the sweep.
pub fn classify_open_loop(
    sweep: &PerturbationSweep,
    problem: &LqProblem,
    x0: &DVector<f64>,
) -> Result<WeakClosedLoopResult> {
    let diag = &sweep.diagnostics;
    let last = sweep.last();
    let scale = 1.0 + last.control.squared_norm();
    let control_divergent = diag.sup_u_norm.is_nan() || diag.sup_u_norm > DIVERGENCE_GUARD;
    let value_divergent = values_diverge(&sweep.values());
    let controls_cauchy = !control_divergent && gaps_settled(&diag.cauchy_gaps, scale);
    let certificate_residual = equilibrium_residual(problem, x0, &last.control)?;
    let certified = certificate_residual <= CERT_TOL;

    let verdict = if control_divergent || value_divergent {
        SweepVerdict::NotOpenLoopSolvable
    } else if controls_cauchy && certified {
        SweepVerdict::OpenLoopSolvable
    } else {
        SweepVerdict::Inconclusive
    };
    let weak = extract_weak_gains(sweep)?;
    Ok(WeakClosedLoopResult {
        verdict,
        u_star: controls_cauchy.then(|| last.control.clone()),
        k_star: weak.law,
        tail_gain_diverged: weak.tail_gain_diverged,
        evidence: SweepEvidence {
            sup_u_norm: diag.sup_u_norm,
            last_cauchy_gap: diag.cauchy_gaps.last().copied().unwrap_or(0.0),
            controls_cauchy,
            control_divergent,
            value_divergent,
            certificate_residual,
            certified,
            last_window_gap: diag.k_window_gaps.last().copied(),
            flagged_points: sweep
                .points
                .iter()
                .filter(|p| p.flags().iter().any(|f| f.singular || f.regularity_violated))
                .count(),
        },
    })
}

/// `K*_t = K^{ε_last}_t` on `{0, …, N−2}`, accepted when the window gaps are
/// Cauchy. The tail flag is raised when `‖K^ε_{N−1}‖_max` increases strictly
/// over the last three points and at least doubles between the first and
/// the last of them.
pub fn extract_weak_gains(sweep: &PerturbationSweep) -> Result<WeakGains> {
    let last = sweep.last();
    let window = last.gains.len().saturating_sub(1);
    let scale = 1.0 + last.gains[..window].iter().map(|k| k.norm_squared()).sum::<f64>();
    let window_converged = gaps_settled(&sweep.diagnostics.k_window_gaps, scale);
    let law = if window_converged {
        Some(FeedbackLaw::from_gains(last.gains[..window].to_vec())?)
    } else {
        None
    };
    let norms = &sweep.diagnostics.tail_gain_norms;
    let tail_gain_diverged = match norms.len() {
        0..=2 => false,
        len => {
            let (a, b, c) = (norms[len - 3], norms[len - 2], norms[len - 1]);
            (a < b && b < c && c >= 2.0 * a) || !c.is_finite()
        }
    };
    Ok(WeakGains {
        law,
        window_converged,
        tail_gain_diverged,
    })
}

/// Feedback `u_t = K*_t x_t` on the window, stored `u*_t` on the tail.
pub fn apply_weak_law(
    problem: &LqProblem,
    x0: &DVector<f64>,
    result: &WeakClosedLoopResult,
) -> Result<(Trajectory, ControlSequence)> {
    if result.verdict != SweepVerdict::OpenLoopSolvable {
        return Err(LqError::WeakLawUnavailable(format!("sweep verdict is {:?}", result.verdict)));
    }
    let u_star = result
        .u_star
        .as_ref()
        .ok_or_else(|| LqError::WeakLawUnavailable("no limit control".into()))?;
    let law = result
        .k_star
        .as_ref()
        .ok_or_else(|| LqError::WeakLawUnavailable("window gains did not converge".into()))?;
    if x0.len() != problem.state_dim() {
        return Err(LqError::mismatch("x0", 0, problem.state_dim(), x0.len()));
    }
    let horizon = problem.horizon();
    let window = law.window().len();
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon);
    xs.push(x0.clone());
    for t in 0..horizon {
        let ut = if t < window { law.gain(t) * &xs[t] + law.offset(t) } else { u_star[t].clone() };
        let next = problem.a(t) * &xs[t] + problem.b(t) * &ut;
        us.push(ut);
        xs.push(next);
    }
    let control = control_from_values(us);
    let gap = control.max_abs_diff(u_star);
    if gap.is_nan() || gap > 1e-6 {
        return Err(LqError::WeakLawUnavailable(format!(
            "weak feedback reproduces the limit control only to {gap:e}"
        )));
    }
    Ok((trajectory_from_states(xs), control))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueRow {
    pub epsilon: f64,
    pub value: f64,
    /// `V_ε − V` when a reference value is supplied.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueConvergenceReport {
    pub rows: Vec<ValueRow>,
    /// `V_ε ≥ V − 1e−8` for every row; absent without a reference value.
    pub lower_bound_holds: Option<bool>,
}

pub fn value_convergence_report(sweep: &PerturbationSweep, oracle_value: Option<f64>) -> ValueConvergenceReport {
    let rows: Vec<ValueRow> = sweep
        .points
        .iter()
        .map(|p| ValueRow {
            epsilon: p.epsilon,
            value: p.value,
            gap: oracle_value.map(|v| p.value - v),
        })
        .collect();
    let lower_bound_holds = oracle_value.map(|_| rows.iter().all(|r| r.gap.is_some_and(|g| g >= -1e-8)));
    ValueConvergenceReport {
        rows,
        lower_bound_holds,
    }
}
