//! Pipelines combining the Riccati test, the ε-sweep and the stacked oracle
//! into serializable reports.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{LqError, Result};
use crate::export::{matrix_rows, problem_digest, vector_values};
use crate::oracle::{assemble, oracle_classify, solvable_for_all_initial_states, OracleResult, OracleVerdict};
use crate::perturbation::{
    apply_weak_law, classify_open_loop, extract_weak_gains, run_sweep_parallel, value_convergence_report,
    EpsilonSchedule, PerturbationSweep, SweepDiagnostics, SweepEvidence, SweepVerdict, ValueRow,
    WeakClosedLoopResult, WeakGains,
};
use crate::problem::{cost, simulate_feedback, ControlSequence, LqProblem, Trajectory};
use crate::riccati::{closed_loop_policy, solve_generalized_riccati, value_function, ClosedLoopVerdict, RiccatiSolution};

/// Relative tolerance for value agreement between stages.
pub const VALUE_AGREEMENT_TOL: f64 = 1e-8;
/// Max-norm tolerance for control agreement between stages.
pub const CONTROL_AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub schedule: EpsilonSchedule,
    /// Worker threads for the ε-sweep; 0 or 1 runs sequentially.
    pub threads: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            schedule: EpsilonSchedule::default(),
            threads: 1,
        }
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    ClosedLoopSolvable,
    OpenLoopSolvableOnly,
    NotOpenLoopSolvable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub verdict: OracleVerdict,
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub tolerance_used: f64,
    pub minimizer: Option<Rows>,
    pub value: Option<f64>,
    pub unbounded_below: bool,
}

impl OracleSummary {
    fn new(res: &OracleResult) -> Self {
        Self {
            verdict: res.verdict,
            eigenvalues: res.eigenvalues.clone(),
            min_eigenvalue: res.min_eigenvalue,
            tolerance_used: res.tolerance_used,
            minimizer: res.minimizer.as_ref().map(control_rows),
            value: res.value,
            unbounded_below: res.unbounded_below,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub verdict: SweepVerdict,
    pub epsilon_first: f64,
    pub epsilon_last: f64,
    pub points: usize,
    pub u_star: Option<Rows>,
    pub evidence: SweepEvidence,
    pub diagnostics: SweepDiagnostics,
}

impl SweepSummary {
    fn new(sweep: &PerturbationSweep, res: &WeakClosedLoopResult) -> Self {
        let eps = sweep.schedule.values();
        Self {
            verdict: res.verdict,
            epsilon_first: eps[0],
            epsilon_last: eps[eps.len() - 1],
            points: eps.len(),
            u_star: res.u_star.as_ref().map(control_rows),
            evidence: res.evidence.clone(),
            diagnostics: sweep.diagnostics.clone(),
        }
    }
}

/// `K*` on the truncated window `{0, …, N−2}` and the last-step flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakGainsSummary {
    pub window: Vec<usize>,
    pub converged: bool,
    pub gains: Option<Vec<Rows>>,
    pub tail_step: usize,
    pub tail_gain_diverged: bool,
}

impl WeakGainsSummary {
    fn new(weak: &WeakGains, horizon: usize) -> Self {
        Self {
            window: (0..horizon - 1).collect(),
            converged: weak.window_converged,
            gains: weak.law.as_ref().map(|l| l.gains().iter().map(matrix_rows).collect()),
            tail_step: horizon - 1,
            tail_gain_diverged: weak.tail_gain_diverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Values {
    pub v_riccati: Option<f64>,
    pub v_oracle: Option<f64>,
    pub oracle_unbounded_below: bool,
    pub v_eps: Vec<ValueRow>,
    pub lower_bound_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub x0_index: usize,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub consistent: bool,
    pub checks: Vec<String>,
    pub discrepancies: Vec<Discrepancy>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialStateReport {
    pub x0: Vec<f64>,
    pub oracle: OracleSummary,
    pub sweep: SweepSummary,
    pub values: Values,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolvabilityReport {
    pub problem_digest: String,
    pub dimensions: Dimensions,
    pub classification: Classification,
    pub riccati_verdict: ClosedLoopVerdict,
    pub weak_gains: WeakGainsSummary,
    pub initial_states: Vec<InitialStateReport>,
    pub agreement: Agreement,
}

fn control_rows(u: &ControlSequence) -> Rows {
    u.iter().map(vector_values).collect()
}

fn trajectory_rows(x: &Trajectory) -> Rows {
    x.iter().map(vector_values).collect()
}

fn check_x0(problem: &LqProblem, x0s: &[DVector<f64>]) -> Result<()> {
    if x0s.is_empty() {
        return Err(LqError::Schema("at least one initial state is required".into()));
    }
    for (i, x0) in x0s.iter().enumerate() {
        if x0.len() != problem.state_dim() {
            return Err(LqError::mismatch("x0", i, problem.state_dim(), x0.len()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(LqError::NonFinite { what: "x0".into(), index: i });
        }
    }
    Ok(())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUE_AGREEMENT_TOL * (1.0 + b.abs())
}

fn oracle_says_solvable(v: OracleVerdict) -> Option<bool> {
    match v {
        OracleVerdict::Solvable => Some(true),
        OracleVerdict::ConvexUnattained | OracleVerdict::NotOpenLoopSolvable => Some(false),
        OracleVerdict::Inconclusive => None,
    }
}

fn sweep_says_solvable(v: SweepVerdict) -> Option<bool> {
    match v {
        SweepVerdict::OpenLoopSolvable => Some(true),
        SweepVerdict::NotOpenLoopSolvable => Some(false),
        SweepVerdict::Inconclusive => None,
    }
}

struct Stage {
    x0: DVector<f64>,
    oracle: OracleResult,
    sweep: PerturbationSweep,
    weak: WeakClosedLoopResult,
}

fn run_stage(problem: &LqProblem, x0: &DVector<f64>, opts: &ClassifyOptions) -> Result<Stage> {
    let oracle = oracle_classify(&assemble(problem, x0)?)?;
    let sweep = run_sweep_parallel(problem, x0, &opts.schedule, opts.threads)?;
    let weak = classify_open_loop(&sweep, problem, x0)?;
    Ok(Stage {
        x0: x0.clone(),
        oracle,
        sweep,
        weak,
    })
}

fn cross_check(
    problem: &LqProblem,
    index: usize,
    stage: &Stage,
    riccati: &ClosedLoopVerdict,
    v_riccati: Option<f64>,
    checks: &mut Vec<String>,
    found: &mut Vec<Discrepancy>,
) -> Result<()> {
    let mut flag = |kind: &str, detail: String| {
        found.push(Discrepancy {
            x0_index: index,
            kind: kind.into(),
            detail,
        })
    };
    let oracle = &stage.oracle;
    let sweep = stage.weak.verdict;
    match (oracle_says_solvable(oracle.verdict), sweep_says_solvable(sweep)) {
        (Some(a), Some(b)) if a != b => {
            let why = if b && oracle.verdict == OracleVerdict::NotOpenLoopSolvable {
                format!(
                    "; the sweep limit is a stationary point but the stacked Hessian has eigenvalue {:.6e}, so J(x0, .) is unbounded below",
                    oracle.min_eigenvalue
                )
            } else {
                String::new()
            };
            flag(
                "oracle_vs_sweep",
                format!("oracle verdict {:?} but sweep verdict {:?}{why}", oracle.verdict, sweep),
            );
        }
        (Some(_), Some(_)) => checks.push(format!("x0[{index}]: oracle and sweep verdicts agree")),
        _ => checks.push(format!("x0[{index}]: oracle or sweep inconclusive, verdicts not compared")),
    }
    if riccati.closed_loop_solvable && oracle_says_solvable(oracle.verdict) == Some(false) {
        flag(
            "riccati_vs_oracle",
            format!("Riccati test is closed-loop solvable but oracle verdict is {:?}", oracle.verdict),
        );
    }
    if let (Some(vr), Some(vo)) = (v_riccati, oracle.value) {
        if close(vr, vo) {
            checks.push(format!("x0[{index}]: Riccati and oracle values agree"));
        } else {
            flag("value", format!("Riccati value {vr:.16e} vs oracle value {vo:.16e}"));
        }
    }
    if let (Some(u), Some(minimizer), Some(vo)) = (&stage.weak.u_star, &oracle.minimizer, oracle.value) {
        let gap = u.max_abs_diff(minimizer);
        let limit_cost = cost(problem, &stage.x0, u)?;
        if gap <= CONTROL_AGREEMENT_TOL {
            checks.push(format!("x0[{index}]: sweep limit control equals oracle minimizer"));
        } else if close(limit_cost, vo) {
            checks.push(format!("x0[{index}]: sweep limit control is optimal (minimizer not unique)"));
        } else {
            flag(
                "control",
                format!("sweep limit control differs from oracle minimizer by {gap:.6e} with cost {limit_cost:.16e} vs {vo:.16e}"),
            );
        }
    }
    Ok(())
}

fn overall(riccati: &ClosedLoopVerdict, stages: &[Stage]) -> Classification {
    if riccati.closed_loop_solvable {
        return Classification::ClosedLoopSolvable;
    }
    let verdicts: Vec<Option<bool>> = stages
        .iter()
        .map(|s| oracle_says_solvable(s.oracle.verdict).or(sweep_says_solvable(s.weak.verdict)))
        .collect();
    if verdicts.contains(&Some(false)) {
        Classification::NotOpenLoopSolvable
    } else if verdicts.iter().all(|v| *v == Some(true)) {
        Classification::OpenLoopSolvableOnly
    } else {
        Classification::Inconclusive
    }
}

/// Runs the Riccati test once and the oracle and sweep for every `x0`.
pub fn classify(problem: &LqProblem, x0s: &[DVector<f64>], opts: &ClassifyOptions) -> Result<SolvabilityReport> {
    check_x0(problem, x0s)?;
    let sol = solve_generalized_riccati(problem)?;
    let riccati = sol.verdict();
    let stages = x0s
        .iter()
        .map(|x0| run_stage(problem, x0, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut checks = Vec::new();
    let mut discrepancies = Vec::new();
    let mut initial_states = Vec::with_capacity(stages.len());
    for (i, stage) in stages.iter().enumerate() {
        let v_riccati = riccati_value(&sol, &riccati, &stage.x0)?;
        cross_check(problem, i, stage, &riccati, v_riccati, &mut checks, &mut discrepancies)?;
        let table = value_convergence_report(&stage.sweep, stage.oracle.value);
        initial_states.push(InitialStateReport {
            x0: vector_values(&stage.x0),
            oracle: OracleSummary::new(&stage.oracle),
            sweep: SweepSummary::new(&stage.sweep, &stage.weak),
            values: Values {
                v_riccati,
                v_oracle: stage.oracle.value,
                oracle_unbounded_below: stage.oracle.unbounded_below,
                v_eps: table.rows,
                lower_bound_holds: table.lower_bound_holds,
            },
        });
    }
    let weak = extract_weak_gains(&stages[0].sweep)?;
    Ok(SolvabilityReport {
        problem_digest: problem_digest(problem),
        dimensions: dimensions(problem),
        classification: overall(&riccati, &stages),
        riccati_verdict: riccati,
        weak_gains: WeakGainsSummary::new(&weak, problem.horizon()),
        initial_states,
        agreement: Agreement {
            consistent: discrepancies.is_empty(),
            checks,
            discrepancies,
        },
    })
}

fn dimensions(problem: &LqProblem) -> Dimensions {
    Dimensions {
        n: problem.state_dim(),
        m: problem.control_dim(),
        horizon: problem.horizon(),
    }
}

fn riccati_value(sol: &RiccatiSolution, verdict: &ClosedLoopVerdict, x0: &DVector<f64>) -> Result<Option<f64>> {
    if verdict.closed_loop_solvable {
        value_function(sol, x0).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvePath {
    /// Exact feedback from the generalized Riccati recursion.
    Feedback,
    /// Limit of the ε-sweep with weak gains on the truncated window.
    Weak,
    /// No optimal control could be produced.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub x0: Vec<f64>,
    pub path: SolvePath,
    pub control: Option<Rows>,
    pub trajectory: Option<Rows>,
    pub value: Option<f64>,
    pub gains: Option<Vec<Rows>>,
    pub free_params_zeroed: Option<bool>,
    pub tail_gain_diverged: Option<bool>,
    pub sweep_verdict: Option<SweepVerdict>,
    pub oracle_verdict: OracleVerdict,
    pub oracle_min_eigenvalue: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub problem_digest: String,
    pub dimensions: Dimensions,
    pub riccati_verdict: ClosedLoopVerdict,
    pub solutions: Vec<Solution>,
}

/// Feedback solution when the Riccati test passes, otherwise the weak limit
/// when the sweep finds one, otherwise the evidence only.
pub fn solve(problem: &LqProblem, x0s: &[DVector<f64>], opts: &ClassifyOptions) -> Result<SolveReport> {
    check_x0(problem, x0s)?;
    let sol = solve_generalized_riccati(problem)?;
    let riccati = sol.verdict();
    let mut solutions = Vec::with_capacity(x0s.len());
    for x0 in x0s {
        let oracle = oracle_classify(&assemble(problem, x0)?)?;
        let mut out = Solution {
            x0: vector_values(x0),
            path: SolvePath::None,
            control: None,
            trajectory: None,
            value: None,
            gains: None,
            free_params_zeroed: None,
            tail_gain_diverged: None,
            sweep_verdict: None,
            oracle_verdict: oracle.verdict,
            oracle_min_eigenvalue: oracle.min_eigenvalue,
            warnings: Vec::new(),
        };
        if riccati.closed_loop_solvable {
            let policy = closed_loop_policy(&sol, problem)?;
            let (traj, u) = simulate_feedback(problem, x0, &policy.law)?;
            out.path = SolvePath::Feedback;
            out.value = Some(value_function(&sol, x0)?);
            out.control = Some(control_rows(&u));
            out.trajectory = Some(trajectory_rows(&traj));
            out.gains = Some(policy.law.gains().iter().map(matrix_rows).collect());
            out.free_params_zeroed = Some(policy.free_params_zeroed);
        } else {
            let sweep = run_sweep_parallel(problem, x0, &opts.schedule, opts.threads)?;
            let weak = classify_open_loop(&sweep, problem, x0)?;
            out.sweep_verdict = Some(weak.verdict);
            out.tail_gain_diverged = Some(weak.tail_gain_diverged);
            if weak.verdict == SweepVerdict::OpenLoopSolvable {
                out.path = SolvePath::Weak;
                match apply_weak_law(problem, x0, &weak) {
                    Ok((traj, u)) => {
                        out.value = Some(cost(problem, x0, &u)?);
                        out.control = Some(control_rows(&u));
                        out.trajectory = Some(trajectory_rows(&traj));
                        out.gains = weak.k_star.as_ref().map(|l| l.gains().iter().map(matrix_rows).collect());
                    }
                    Err(LqError::WeakLawUnavailable(why)) => {
                        let u = weak.u_star.as_ref().expect("solvable verdict carries the limit control");
                        let traj = crate::problem::simulate(problem, x0, u)?;
                        out.value = Some(cost(problem, x0, u)?);
                        out.control = Some(control_rows(u));
                        out.trajectory = Some(trajectory_rows(&traj));
                        out.warnings.push(format!("weak feedback not applied: {why}"));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if oracle_says_solvable(oracle.verdict) == Some(false) && out.path != SolvePath::None {
            out.warnings.push(format!(
                "oracle verdict {:?} (min eigenvalue {:.6e}): the emitted control is stationary but J(x0, .) has no minimum",
                oracle.verdict, oracle.min_eigenvalue
            ));
        }
        solutions.push(out);
    }
    Ok(SolveReport {
        problem_digest: problem_digest(problem),
        dimensions: dimensions(problem),
        riccati_verdict: riccati,
        solutions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub problem_digest: String,
    pub dimensions: Dimensions,
    pub solvable_for_all_initial_states: bool,
    pub initial_states: Vec<OracleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEntry {
    pub x0: Vec<f64>,
    #[serde(flatten)]
    pub result: OracleSummary,
}

pub fn oracle_report(problem: &LqProblem, x0s: &[DVector<f64>]) -> Result<OracleReport> {
    check_x0(problem, x0s)?;
    let initial_states = x0s
        .iter()
        .map(|x0| {
            Ok(OracleEntry {
                x0: vector_values(x0),
                result: OracleSummary::new(&oracle_classify(&assemble(problem, x0)?)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleReport {
        problem_digest: problem_digest(problem),
        dimensions: dimensions(problem),
        solvable_for_all_initial_states: solvable_for_all_initial_states(problem)?,
        initial_states,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub problem_digest: String,
    pub x0: Vec<f64>,
    pub schedule: Vec<f64>,
    #[serde(flatten)]
    pub summary: SweepSummary,
    pub weak_gains: WeakGainsSummary,
    pub v_eps: Vec<ValueRow>,
}

/// Runs the sweep for one `x0`; the caller writes the CSV from the
/// returned [`PerturbationSweep`].
pub fn sweep_report(
    problem: &LqProblem,
    x0: &DVector<f64>,
    opts: &ClassifyOptions,
) -> Result<(PerturbationSweep, SweepReport)> {
    check_x0(problem, std::slice::from_ref(x0))?;
    let sweep = run_sweep_parallel(problem, x0, &opts.schedule, opts.threads)?;
    let weak = classify_open_loop(&sweep, problem, x0)?;
    let gains = extract_weak_gains(&sweep)?;
    let report = SweepReport {
        problem_digest: problem_digest(problem),
        x0: vector_values(x0),
        schedule: opts.schedule.values().to_vec(),
        summary: SweepSummary::new(&sweep, &weak),
        weak_gains: WeakGainsSummary::new(&gains, problem.horizon()),
        v_eps: value_convergence_report(&sweep, None).rows,
    };
    Ok((sweep, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn two_step_example_flags_discrepancy() {
        let p = LqProblem::scalar(2, 1.0, 1.0, 0.0, 0.0, -1.0, 1.0).unwrap();
        let rep = classify(&p, &[one(1.0)], &ClassifyOptions::default()).unwrap();
        assert!(!rep.riccati_verdict.closed_loop_solvable);
        assert_eq!(rep.initial_states[0].oracle.verdict, OracleVerdict::NotOpenLoopSolvable);
        assert_eq!(rep.initial_states[0].sweep.verdict, SweepVerdict::OpenLoopSolvable);
        assert!(!rep.agreement.consistent);
        assert_eq!(rep.agreement.discrepancies[0].kind, "oracle_vs_sweep");
        assert_eq!(rep.classification, Classification::NotOpenLoopSolvable);
        assert!(rep.weak_gains.tail_gain_diverged);
    }

    #[test]
    fn classical_example_agrees() {
        let p = LqProblem::scalar(2, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        let rep = classify(&p, &[one(1.0)], &ClassifyOptions::default()).unwrap();
        assert!(rep.agreement.consistent, "{:?}", rep.agreement);
        assert_eq!(rep.classification, Classification::ClosedLoopSolvable);
        let v = rep.initial_states[0].values.v_riccati.unwrap();
        assert!((v - 1.6).abs() < 1e-14);
    }

    #[test]
    fn solve_paths() {
        let classical = LqProblem::scalar(2, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        let rep = solve(&classical, &[one(0.0)], &ClassifyOptions::default()).unwrap();
        assert_eq!(rep.solutions[0].path, SolvePath::Feedback);
        assert_eq!(rep.solutions[0].value, Some(0.0));

        let sec5 = LqProblem::scalar(2, 1.0, 1.0, 0.0, 0.0, -1.0, 1.0).unwrap();
        let rep = solve(&sec5, &[one(2.0)], &ClassifyOptions::default()).unwrap();
        let s = &rep.solutions[0];
        assert_eq!(s.path, SolvePath::Weak);
        let u = s.control.as_ref().unwrap();
        assert!((u[0][0] + 2.0).abs() < 1e-8 && (u[1][0] + 2.0).abs() < 1e-8);
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn x0_dimension_is_checked() {
        let p = LqProblem::scalar(2, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        let err = classify(&p, &[DVector::zeros(2)], &ClassifyOptions::default()).unwrap_err();
        assert!(err.is_input_error());
        assert!(classify(&p, &[], &ClassifyOptions::default()).is_err());
    }
}
