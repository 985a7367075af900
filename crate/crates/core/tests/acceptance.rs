//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use lq_solvability::export::load_problem;
use lq_solvability::kernel::{max_abs, pinv};
use lq_solvability::oracle::{assemble, oracle_classify, OracleVerdict};
use lq_solvability::perturbation::{
    classify_open_loop, epsilon_gain, epsilon_riccati, extract_weak_gains, run_sweep, sweep_point, EpsilonSchedule,
    SweepVerdict,
};
use lq_solvability::report::{classify, ClassifyOptions};
use lq_solvability::riccati::{solve_classical_riccati, Condition};
use lq_solvability::{
    check_closed_loop_solvable, closed_loop_policy, completion_of_squares_residual, cost, equilibrium_residual,
    simulate_feedback, solve_generalized_riccati, value_function, ControlSequence, DMatrix, DVector, LqProblem,
};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Fastest of `reps` runs, to keep scheduler noise out of the timing bounds.
fn best_time<T>(reps: usize, mut f: impl FnMut() -> T) -> (T, Duration) {
    let mut best = Duration::MAX;
    let mut out = None;
    for _ in 0..reps {
        let start = Instant::now();
        let v = f();
        best = best.min(start.elapsed());
        out = Some(v);
    }
    (out.unwrap(), best)
}

fn one(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn riccati_reproduction() -> Outcome {
    let problem = load_problem(&fixture("lq_example_sec5.json")).map_err(|e| e.to_string())?;
    let (sol, elapsed) = best_time(5, || solve_generalized_riccati(&problem).unwrap());
    for (t, p) in sol.p.iter().enumerate() {
        ensure((p[(0, 0)] - 1.0).abs() <= 1e-14, || format!("P_{t} = {:e}", p[(0, 0)]))?;
    }
    let verdict = check_closed_loop_solvable(&sol, &problem);
    ensure(!verdict.closed_loop_solvable, || "reported closed-loop solvable".into())?;
    let v = verdict.first_violation.ok_or("no violation reported")?;
    ensure(v.step == 0 && v.condition == Condition::RangeInclusion, || format!("first violation {v:?}"))?;
    ensure(elapsed < Duration::from_millis(1), || format!("runtime {elapsed:?}"))?;
    Ok(format!("P = (1, 1, 1), first violation range inclusion at t=0, {elapsed:?}"))
}

fn perturbed_family() -> Outcome {
    let problem = two_step();
    let eps_values: Vec<f64> = (0..=20).map(|k| 0.5f64.powi(k)).collect();
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / b.abs() };
    let mut worst: f64 = 0.0;
    for x0 in [1.0, -2.5] {
        let (points, elapsed) = best_time(5, || {
            eps_values
                .iter()
                .map(|&eps| sweep_point(&problem, &one(x0), eps).unwrap())
                .collect::<Vec<_>>()
        });
        ensure(elapsed < Duration::from_millis(10), || format!("runtime {elapsed:?}"))?;
        for pt in &points {
            let eps = pt.epsilon;
            for t in 0..2 {
                let shift = eps + (1.0 - t as f64);
                let p_err = rel(pt.riccati.p[t][(0, 0)], (eps - 1.0) / shift);
                let k_err = rel(pt.gains[t][(0, 0)], -1.0 / shift);
                ensure(p_err <= 1e-12, || format!("eps={eps:e} t={t}: P relative error {p_err:e}"))?;
                ensure(k_err <= 1e-12, || format!("eps={eps:e} t={t}: K relative error {k_err:e}"))?;
                let u_expected = -x0 / (eps + 1.0);
                let u_err = (pt.control[t][0] - u_expected).abs() / x0.abs().max(1.0);
                ensure(u_err <= 1e-12, || format!("eps={eps:e} t={t}: u error {u_err:e}"))?;
                worst = worst.max(p_err).max(k_err).max(u_err);
            }
            ensure(pt.riccati.p[2][(0, 0)] == 1.0, || "P_2 != H".into())?;
            let norm = pt.control.squared_norm();
            let closed = 2.0 * x0 * x0 / (eps + 1.0).powi(2);
            ensure(rel(norm, closed) <= 1e-12, || format!("eps={eps:e}: sum |u|^2 = {norm:e}, expected {closed:e}"))?;
            ensure(norm <= 2.0 * x0 * x0, || format!("eps={eps:e}: sum |u|^2 exceeds 2 x0^2"))?;
        }
    }
    Ok(format!("21 values of eps, x0 in {{1, -2.5}}, worst error {worst:.2e}"))
}

fn two_step_limits() -> Outcome {
    let problem = two_step();
    let mut notes = Vec::new();
    for x0 in [1.0, 3.0] {
        let sweep = run_sweep(&problem, &one(x0), &EpsilonSchedule::default()).map_err(|e| e.to_string())?;
        let res = classify_open_loop(&sweep, &problem, &one(x0)).map_err(|e| e.to_string())?;
        let u = res.u_star.as_ref().ok_or("no limit control")?;
        for t in 0..2 {
            ensure((u[t][0] + x0).abs() <= 1e-5, || format!("x0={x0}: u*_{t} = {:e}", u[t][0]))?;
        }
        let weak = extract_weak_gains(&sweep).map_err(|e| e.to_string())?;
        let law = weak.law.ok_or("window gains did not converge")?;
        let k0 = law.gain(0)[(0, 0)];
        ensure((k0 + 1.0).abs() <= 1e-5, || format!("K*_0 = {k0:e}"))?;
        ensure(weak.tail_gain_diverged, || "tail flag not set at t=1".into())?;
        notes.push(format!("x0={x0}: u*=({:.6}, {:.6})", u[0][0], u[1][0]));
        if x0 == 1.0 {
            notes.push(format!("K*_0={k0:.6}"));
        }
    }
    Ok(format!("{}, tail flag set", notes.join(", ")))
}

fn oracle_discrepancy() -> Outcome {
    let problem = load_problem(&fixture("lq_example_sec5.json")).map_err(|e| e.to_string())?;
    let x0 = one(1.0);
    let res = oracle_classify(&assemble(&problem, &x0).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let ev = &res.eigenvalues;
    ensure(ev.len() == 2 && (ev[0] + 2.0).abs() <= 1e-10 && (ev[1] - 2.0).abs() <= 1e-10, || {
        format!("eigenvalues {ev:?}")
    })?;
    ensure(res.verdict == OracleVerdict::NotOpenLoopSolvable, || format!("verdict {:?}", res.verdict))?;
    let report = classify(&problem, &[x0], &ClassifyOptions::default()).map_err(|e| e.to_string())?;
    ensure(!report.agreement.discrepancies.is_empty(), || "no discrepancy listed".into())?;
    Ok(format!(
        "eigenvalues {{{}, {}}}, {} discrepancy entr{}",
        ev[0],
        ev[1],
        report.agreement.discrepancies.len(),
        if report.agreement.discrepancies.len() == 1 { "y" } else { "ies" }
    ))
}

fn random_control(rng: &mut impl Rng, problem: &LqProblem) -> ControlSequence {
    ControlSequence::new(
        (0..problem.horizon())
            .map(|_| uniform_vec(rng, problem.control_dim()) * 2.0)
            .collect(),
    )
    .unwrap()
}

fn convex_suite() -> Vec<(LqProblem, DVector<f64>)> {
    let mut rng = rng(5);
    (0..200)
        .map(|_| {
            let p = convex_instance(&mut rng);
            let x0 = uniform_vec(&mut rng, p.state_dim()) * 2.0;
            (p, x0)
        })
        .collect()
}

fn convex_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(55);
    let mut worst = [0.0f64; 4];
    for (i, (problem, x0)) in convex_suite().iter().enumerate() {
        let fail = |what: &str, v: f64| format!("instance {i}: {what} = {v:e}");
        let sol = solve_generalized_riccati(problem).unwrap();
        ensure(sol.verdict().closed_loop_solvable, || format!("instance {i}: not closed-loop solvable"))?;
        let oracle = oracle_classify(&assemble(problem, x0).unwrap()).unwrap();
        let v_oracle = oracle.value.ok_or_else(|| format!("instance {i}: oracle verdict {:?}", oracle.verdict))?;
        let v = value_function(&sol, x0).unwrap();
        let dv = (v - v_oracle).abs();
        ensure(dv <= 1e-8 * (1.0 + v_oracle.abs()), || fail("value gap", dv))?;
        let law = closed_loop_policy(&sol, problem).unwrap().law;
        let (_, u) = simulate_feedback(problem, x0, &law).unwrap();
        let du = u.max_abs_diff(oracle.minimizer.as_ref().unwrap());
        ensure(du <= 1e-6, || fail("control gap", du))?;
        let res = equilibrium_residual(problem, x0, &u).unwrap();
        ensure(res <= 1e-8, || fail("equilibrium residual", res))?;
        let mut cs: f64 = 0.0;
        for _ in 0..5 {
            let w = random_control(&mut rng, problem);
            cs = cs.max(completion_of_squares_residual(problem, &sol, x0, &w).unwrap().abs());
        }
        ensure(cs <= 1e-8, || fail("completion-of-squares residual", cs))?;
        worst = [worst[0].max(dv), worst[1].max(du), worst[2].max(res), worst[3].max(cs)];
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "200 instances, worst value gap {:.1e}, control gap {:.1e}, residual {:.1e}, completion {:.1e}, {elapsed:.2?}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn perturbation_consistency() -> Outcome {
    let schedule = EpsilonSchedule::default();
    let (mut worst_cost, mut worst_bound): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for (i, (problem, x0)) in convex_suite().iter().enumerate() {
        let oracle = oracle_classify(&assemble(problem, x0).unwrap()).unwrap();
        let v_oracle = oracle.value.ok_or_else(|| format!("instance {i}: oracle verdict {:?}", oracle.verdict))?;
        let u_bar_norm = oracle.minimizer.as_ref().unwrap().squared_norm();
        let sweep = run_sweep(problem, x0, &schedule).unwrap();
        let res = classify_open_loop(&sweep, problem, x0).unwrap();
        ensure(res.verdict == SweepVerdict::OpenLoopSolvable, || {
            format!("instance {i}: sweep verdict {:?} ({:?})", res.verdict, res.evidence)
        })?;
        let u_star = res.u_star.as_ref().unwrap();
        let dc = (cost(problem, x0, u_star).unwrap() - v_oracle).abs();
        ensure(dc <= 1e-6, || format!("instance {i}: |cost(u*) - V| = {dc:e}"))?;
        worst_cost = worst_cost.max(dc);
        for pt in &sweep.points {
            let gap = pt.value - v_oracle;
            ensure(gap >= -1e-8, || format!("instance {i}: eps={:e}: V_eps - V = {gap:e}", pt.epsilon))?;
            let slack = gap - pt.epsilon * u_bar_norm;
            ensure(slack <= 1e-8, || format!("instance {i}: eps={:e}: V_eps - V exceeds eps |u|^2 by {slack:e}", pt.epsilon))?;
            worst_bound = worst_bound.max(slack);
        }
    }
    Ok(format!(
        "200/200 open-loop solvable, worst |cost(u*) - V| {worst_cost:.1e}, worst bound slack {worst_bound:.1e}"
    ))
}

fn classical_reduction() -> Outcome {
    let mut rng = rng(7);
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut drawn = 0;
    while accepted < 100 {
        drawn += 1;
        ensure(drawn < 10_000, || "could not draw 100 instances with invertible kernels".into())?;
        let problem = mixed_instance(&mut rng);
        let Ok(classical) = solve_classical_riccati(&problem) else { continue };
        let sol = solve_generalized_riccati(&problem).unwrap();
        // invertibility made quantitative: every kernel well away from singular
        let invertible = sol.rhat.iter().all(|k| {
            let sv = k.singular_values();
            sv.min() >= 1e-3 * sv.max().max(1.0)
        });
        if !invertible {
            continue;
        }
        accepted += 1;
        for (t, (pg, pc)) in sol.p.iter().zip(&classical).enumerate() {
            let d = max_abs(&(pg - pc));
            ensure(d <= 1e-10, || format!("instance {accepted}: step {t}: elementwise gap {d:e}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("100 instances ({drawn} drawn), worst elementwise gap {worst:.1e}"))
}

fn penrose_suite() -> Outcome {
    let mut rng = rng(8);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        let rank = rng.random_range(0..rows.min(cols));
        let m = rank_deficient(&mut rng, rows, cols, rank);
        let p = pinv(&m).unwrap();
        let scale = 1.0 + max_abs(&m);
        let errs = [
            max_abs(&(&m * &p * &m - &m)),
            max_abs(&(&p * &m * &p - &p)),
            max_abs(&((&m * &p).transpose() - &m * &p)),
            max_abs(&((&p * &m).transpose() - &p * &m)),
        ];
        for (k, e) in errs.iter().enumerate() {
            ensure(*e <= 1e-10 * scale, || format!("matrix {i} ({rows}x{cols}, rank {rank}): identity {} off by {e:e}", k + 1))?;
            worst = worst.max(e / scale);
        }
    }
    Ok(format!("500 rank-deficient matrices, worst scaled error {worst:.1e}"))
}

/// Indefinite in the first control (negative `R`) and linear in the second
/// (no dynamics, no quadratic weight, nonzero cross weight). `J(x0, ·)` then
/// has no stationary point at all.
fn divergent_instance(rng: &mut impl Rng) -> (LqProblem, DVector<f64>) {
    let horizon = rng.random_range(2..=6);
    let n = rng.random_range(1..=3);
    let (mut a, mut b, mut q, mut s, mut r) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..horizon {
        a.push(uniform(rng, n, n));
        let mut bt = DMatrix::zeros(n, 2);
        bt.set_column(0, &(uniform_vec(rng, n) + DVector::from_element(n, 1.5)));
        b.push(bt);
        q.push(gram(rng, n) * 0.1);
        let mut st = DMatrix::zeros(2, n);
        st.set_row(1, &(uniform_vec(rng, n).transpose() + DMatrix::from_element(1, n, 1.5)));
        s.push(st);
        let mut rt = DMatrix::zeros(2, 2);
        rt[(0, 0)] = -rng.random_range(0.5..2.0);
        r.push(rt);
    }
    let problem = LqProblem::new(a, b, q, s, r, gram(rng, n) * 0.1).unwrap();
    let x0 = uniform_vec(rng, n).map(|v| v.abs() + 0.5);
    (problem, x0)
}

fn divergence_detection() -> Outcome {
    let mut rng = rng(9);
    let (mut not_solvable, mut inconclusive) = (0, 0);
    let mut max_lambda = f64::NEG_INFINITY;
    for i in 0..20 {
        let (problem, x0) = divergent_instance(&mut rng);
        let oracle = oracle_classify(&assemble(&problem, &x0).unwrap()).unwrap();
        ensure(oracle.min_eigenvalue <= -0.1, || format!("instance {i}: lambda_min = {:e}", oracle.min_eigenvalue))?;
        max_lambda = max_lambda.max(oracle.min_eigenvalue);
        let sweep = run_sweep(&problem, &x0, &EpsilonSchedule::default()).unwrap();
        let res = classify_open_loop(&sweep, &problem, &x0).unwrap();
        ensure(!res.evidence.certified, || {
            format!("instance {i}: certificate passed (residual {:e})", res.evidence.certificate_residual)
        })?;
        match res.verdict {
            SweepVerdict::NotOpenLoopSolvable => not_solvable += 1,
            SweepVerdict::Inconclusive => inconclusive += 1,
            SweepVerdict::OpenLoopSolvable => return Err(format!("instance {i}: OpenLoopSolvable")),
        }
    }
    Ok(format!(
        "20 instances (lambda_min <= {max_lambda:.3}): {not_solvable} NotOpenLoopSolvable, {inconclusive} Inconclusive, no certificate passed"
    ))
}

fn main() {
    // keep the perturbed kernel singular case exercised at eps = 1
    let singular_at_one = epsilon_riccati(&two_step(), 1.0).map(|r| r.flags[0].singular).unwrap_or(false);
    let min_norm = epsilon_riccati(&two_step(), 1.0)
        .and_then(|r| epsilon_gain(&two_step(), &r))
        .map(|g| g.min_norm_selected)
        .unwrap_or(false);
    assert!(singular_at_one && min_norm, "two-step example lost its singular perturbed kernel");

    let criteria: [Criterion; 9] = [
        ("two-step Riccati reproduction", riccati_reproduction),
        ("two-step perturbed family", perturbed_family),
        ("two-step limits", two_step_limits),
        ("oracle discrepancy surfaced", oracle_discrepancy),
        ("convex-suite equivalence", convex_equivalence),
        ("perturbation consistency", perturbation_consistency),
        ("classical reduction", classical_reduction),
        ("Moore-Penrose identities", penrose_suite),
        ("divergence detection", divergence_detection),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", k + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
