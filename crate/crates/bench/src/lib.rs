//! Deterministic problem instances for the benchmarks.

use lq_solvability::{DMatrix, LqProblem};

fn wave(seed: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| ((seed * 31 + i * 7 + j * 13) as f64 * 0.618).sin())
}

/// Time-varying convex instance: `Q`, `H` Gram matrices, `R ⪰ 0.1 I`, `S = 0`.
pub fn convex_instance(horizon: usize, n: usize, m: usize) -> LqProblem {
    let gram = |seed: usize, k: usize| {
        let w = wave(seed, k, k);
        w.transpose() * w
    };
    let mut a = Vec::with_capacity(horizon);
    let (mut b, mut q, mut s, mut r) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for t in 0..horizon {
        a.push(wave(4 * t, n, n) * (0.9 / n as f64));
        b.push(wave(4 * t + 1, n, m));
        q.push(gram(4 * t + 2, n));
        s.push(DMatrix::zeros(m, n));
        r.push(gram(4 * t + 3, m) + DMatrix::identity(m, m) * 0.1);
    }
    LqProblem::new(a, b, q, s, r, gram(9999, n)).expect("generated data is consistent")
}

/// Scalar two-step problem with `R = −1`, `A = B = H = 1`.
pub fn two_step() -> LqProblem {
    LqProblem::scalar(2, 1.0, 1.0, 0.0, 0.0, -1.0, 1.0).expect("valid scalar data")
}
