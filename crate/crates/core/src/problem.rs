//! Finite-horizon discrete-time LQ problem, rollouts and cost evaluation.
//!
//! Dynamics `x_{t+1} = A_t x_t + B_t u_t` for `t = 0..N−1` and cost
//!
//! ```text
//! J(x0, u) = Σ_t [x_tᵀQ_t x_t + 2 u_tᵀS_t x_t + u_tᵀR_t u_t] + x_Nᵀ H x_N
//! ```
//!
//! with no sign condition on any weight.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{LqError, Result};
use crate::kernel::{all_finite, asymmetry, max_abs, symmetrize, SYM_TOL};

/// Time-varying LQ data `(A, B, Q, S, R, H)` over a horizon of `N` steps.
///
/// Immutable once built; `Q_t`, `R_t` and `H` are stored symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct LqProblem {
    n: usize,
    m: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    q: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    h: DMatrix<f64>,
}

fn check_shape(what: &str, mats: &[DMatrix<f64>], rows: usize, cols: usize) -> Result<()> {
    for (t, mat) in mats.iter().enumerate() {
        if mat.shape() != (rows, cols) {
            return Err(LqError::mismatch(
                what,
                t,
                format!("{rows}x{cols}"),
                format!("{}x{}", mat.nrows(), mat.ncols()),
            ));
        }
        if !all_finite(mat) {
            return Err(LqError::NonFinite {
                what: what.into(),
                index: t,
            });
        }
    }
    Ok(())
}

fn symmetric_checked(what: &str, index: usize, mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let deviation = asymmetry(mat);
    if deviation > SYM_TOL * (1.0 + max_abs(mat)) {
        return Err(LqError::Asymmetric {
            what: what.into(),
            index,
            deviation,
        });
    }
    Ok(symmetrize(mat))
}

impl LqProblem {
    /// Builds a problem from per-step sequences; the horizon is `a.len()`.
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        q: Vec<DMatrix<f64>>,
        s: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
        h: DMatrix<f64>,
    ) -> Result<Self> {
        let horizon = a.len();
        if horizon == 0 {
            return Err(LqError::mismatch("horizon", 0, ">= 1", 0));
        }
        let n = a[0].nrows();
        let m = b.first().map(|b0| b0.ncols()).unwrap_or(0);
        if n == 0 || m == 0 {
            return Err(LqError::mismatch("dimensions", 0, "n >= 1 and m >= 1", format!("n={n}, m={m}")));
        }
        for (what, len) in [("B", b.len()), ("Q", q.len()), ("S", s.len()), ("R", r.len())] {
            if len != horizon {
                return Err(LqError::mismatch(format!("{what} sequence length"), 0, horizon, len));
            }
        }
        check_shape("A", &a, n, n)?;
        check_shape("B", &b, n, m)?;
        check_shape("Q", &q, n, n)?;
        check_shape("S", &s, m, n)?;
        check_shape("R", &r, m, m)?;
        check_shape("H", std::slice::from_ref(&h), n, n)?;

        let q = q
            .iter()
            .enumerate()
            .map(|(t, x)| symmetric_checked("Q", t, x))
            .collect::<Result<Vec<_>>>()?;
        let r = r
            .iter()
            .enumerate()
            .map(|(t, x)| symmetric_checked("R", t, x))
            .collect::<Result<Vec<_>>>()?;
        let h = symmetric_checked("H", 0, &h)?;
        Ok(Self { n, m, a, b, q, s, r, h })
    }

    /// Time-invariant data repeated over `horizon` steps.
    pub fn constant(
        horizon: usize,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        s: DMatrix<f64>,
        r: DMatrix<f64>,
        h: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(
            vec![a; horizon],
            vec![b; horizon],
            vec![q; horizon],
            vec![s; horizon],
            vec![r; horizon],
            h,
        )
    }

    /// Scalar (n = m = 1) time-invariant problem.
    pub fn scalar(horizon: usize, a: f64, b: f64, q: f64, s: f64, r: f64, h: f64) -> Result<Self> {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        Self::constant(horizon, one(a), one(b), one(q), one(s), one(r), one(h))
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }
    pub fn state_dim(&self) -> usize {
        self.n
    }
    pub fn control_dim(&self) -> usize {
        self.m
    }
    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a[t]
    }
    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b[t]
    }
    pub fn q(&self, t: usize) -> &DMatrix<f64> {
        &self.q[t]
    }
    pub fn s(&self, t: usize) -> &DMatrix<f64> {
        &self.s[t]
    }
    pub fn r(&self, t: usize) -> &DMatrix<f64> {
        &self.r[t]
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// The same problem with `R_t` replaced by `R_t + εI`, i.e. the cost
    /// `J(x0, u) + ε Σ_t |u_t|²`.
    pub fn with_control_penalty(&self, epsilon: f64) -> Self {
        let shift = DMatrix::<f64>::identity(self.m, self.m) * epsilon;
        let mut out = self.clone();
        for r in &mut out.r {
            *r += &shift;
        }
        out
    }

    fn check_state(&self, x0: &DVector<f64>) -> Result<()> {
        if x0.len() != self.n {
            return Err(LqError::mismatch("x0", 0, self.n, x0.len()));
        }
        if !x0.iter().all(|v| v.is_finite()) {
            return Err(LqError::NonFinite {
                what: "x0".into(),
                index: 0,
            });
        }
        Ok(())
    }

    fn check_control(&self, u: &ControlSequence) -> Result<()> {
        if u.len() != self.horizon() {
            return Err(LqError::mismatch("control sequence length", 0, self.horizon(), u.len()));
        }
        for (t, ut) in u.iter().enumerate() {
            if ut.len() != self.m {
                return Err(LqError::mismatch("u", t, self.m, ut.len()));
            }
        }
        Ok(())
    }
}

/// Control values `u_0 … u_{N−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence(Vec<DVector<f64>>);

impl ControlSequence {
    pub fn new(values: Vec<DVector<f64>>) -> Result<Self> {
        for (t, v) in values.iter().enumerate() {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(LqError::NonFinite {
                    what: "u".into(),
                    index: t,
                });
            }
        }
        Ok(Self(values))
    }

    pub fn zeros(horizon: usize, m: usize) -> Self {
        Self(vec![DVector::zeros(m); horizon])
    }

    /// Splits a stacked vector `(u_0, …, u_{N−1})` into steps of size `m`.
    pub fn from_stacked(stacked: &DVector<f64>, m: usize) -> Self {
        assert!(m > 0 && stacked.len().is_multiple_of(m), "stacked length must be a multiple of m");
        Self(
            stacked
                .as_slice()
                .chunks(m)
                .map(DVector::from_column_slice)
                .collect(),
        )
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.0.iter().map(|v| v.len()).sum(),
            self.0.iter().flat_map(|v| v.iter().cloned()),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DVector<f64>> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[DVector<f64>] {
        &self.0
    }

    /// `Σ_t |u_t|²`
    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|v| v.norm_squared()).sum()
    }

    /// `Σ_t |u_t − w_t|²`
    pub fn squared_distance(&self, other: &ControlSequence) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    }

    pub fn max_abs_diff(&self, other: &ControlSequence) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for ControlSequence {
    type Output = DVector<f64>;
    fn index(&self, t: usize) -> &DVector<f64> {
        &self.0[t]
    }
}

/// States `x_0 … x_N`, terminal state included.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory(Vec<DVector<f64>>);

impl Trajectory {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn iter(&self) -> std::slice::Iter<'_, DVector<f64>> {
        self.0.iter()
    }
    pub fn as_slice(&self) -> &[DVector<f64>] {
        &self.0
    }
    pub fn terminal(&self) -> &DVector<f64> {
        self.0.last().expect("trajectory holds at least x0")
    }
}

impl std::ops::Index<usize> for Trajectory {
    type Output = DVector<f64>;
    fn index(&self, t: usize) -> &DVector<f64> {
        &self.0[t]
    }
}

/// Affine feedback `u_t = K_t x_t + v_t` on the window `0..len`.
///
/// A window shorter than the horizon is a truncated (weak) law.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    gains: Vec<DMatrix<f64>>,
    offsets: Vec<DVector<f64>>,
}

impl FeedbackLaw {
    pub fn new(gains: Vec<DMatrix<f64>>, offsets: Vec<DVector<f64>>) -> Result<Self> {
        if gains.len() != offsets.len() {
            return Err(LqError::mismatch("feedback offsets", 0, gains.len(), offsets.len()));
        }
        for (t, (k, v)) in gains.iter().zip(&offsets).enumerate() {
            if k.nrows() != v.len() {
                return Err(LqError::mismatch("feedback offset", t, k.nrows(), v.len()));
            }
            if !all_finite(k) || !v.iter().all(|x| x.is_finite()) {
                return Err(LqError::NonFinite {
                    what: "feedback law".into(),
                    index: t,
                });
            }
        }
        Ok(Self { gains, offsets })
    }

    /// Pure state feedback (`v ≡ 0`).
    pub fn from_gains(gains: Vec<DMatrix<f64>>) -> Result<Self> {
        let offsets = gains.iter().map(|k| DVector::zeros(k.nrows())).collect();
        Self::new(gains, offsets)
    }

    pub fn window(&self) -> Range<usize> {
        0..self.gains.len()
    }
    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }
    pub fn offsets(&self) -> &[DVector<f64>] {
        &self.offsets
    }
    pub fn gain(&self, t: usize) -> &DMatrix<f64> {
        &self.gains[t]
    }
    pub fn offset(&self, t: usize) -> &DVector<f64> {
        &self.offsets[t]
    }
}

/// Forward rollout of `x_{t+1} = A_t x_t + B_t u_t`.
pub fn simulate(problem: &LqProblem, x0: &DVector<f64>, u: &ControlSequence) -> Result<Trajectory> {
    problem.check_state(x0)?;
    problem.check_control(u)?;
    let mut xs = Vec::with_capacity(problem.horizon() + 1);
    xs.push(x0.clone());
    for t in 0..problem.horizon() {
        let next = problem.a(t) * &xs[t] + problem.b(t) * &u[t];
        xs.push(next);
    }
    Ok(Trajectory(xs))
}

/// Cost of a control sequence from `x0`.
pub fn cost(problem: &LqProblem, x0: &DVector<f64>, u: &ControlSequence) -> Result<f64> {
    let traj = simulate(problem, x0, u)?;
    Ok(cost_along(problem, &traj, u))
}

/// Cost of an already simulated `(trajectory, control)` pair.
pub fn cost_along(problem: &LqProblem, traj: &Trajectory, u: &ControlSequence) -> f64 {
    let mut total = 0.0;
    for t in 0..problem.horizon() {
        let x = &traj[t];
        let ut = &u[t];
        total += x.dot(&(problem.q(t) * x))
            + 2.0 * ut.dot(&(problem.s(t) * x))
            + ut.dot(&(problem.r(t) * ut));
    }
    let xn = traj.terminal();
    total + xn.dot(&(problem.h() * xn))
}

/// Closed-loop rollout `x_{t+1} = (A_t + B_t K_t) x_t + B_t v_t`.
///
/// Returns the trajectory and the realized control `u_t = K_t x_t + v_t`.
pub fn simulate_feedback(
    problem: &LqProblem,
    x0: &DVector<f64>,
    law: &FeedbackLaw,
) -> Result<(Trajectory, ControlSequence)> {
    problem.check_state(x0)?;
    let horizon = problem.horizon();
    if law.window().len() < horizon {
        return Err(LqError::TruncatedWindow {
            window: law.window().len(),
            horizon,
        });
    }
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon);
    xs.push(x0.clone());
    for t in 0..horizon {
        let k = law.gain(t);
        if k.shape() != (problem.control_dim(), problem.state_dim()) {
            return Err(LqError::mismatch(
                "feedback gain",
                t,
                format!("{}x{}", problem.control_dim(), problem.state_dim()),
                format!("{}x{}", k.nrows(), k.ncols()),
            ));
        }
        let ut = k * &xs[t] + law.offset(t);
        let next = problem.a(t) * &xs[t] + problem.b(t) * &ut;
        us.push(ut);
        xs.push(next);
    }
    Ok((Trajectory(xs), ControlSequence(us)))
}

/// Trajectory built from already known states; used by rollouts elsewhere in
/// the crate that mix feedback and open-loop segments.
pub(crate) fn trajectory_from_states(states: Vec<DVector<f64>>) -> Trajectory {
    Trajectory(states)
}

pub(crate) fn control_from_values(values: Vec<DVector<f64>>) -> ControlSequence {
    ControlSequence(values)
}
