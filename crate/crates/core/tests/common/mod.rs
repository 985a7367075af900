#![allow(dead_code)]

use std::path::PathBuf;

use lq_solvability::{DMatrix, DVector, LqProblem};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn uniform_vec(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

pub fn gram(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let m = uniform(rng, n, n);
    m.transpose() * m
}

pub fn symmetric(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let m = uniform(rng, n, n);
    (&m + m.transpose()) * 0.5
}

/// Time-varying instance with `R = R₀ᵀR₀ + 0.1 I`, `Q = Q₀ᵀQ₀`, `S = 0`,
/// `H = H₀ᵀH₀`, `N ≤ 8`, `n ≤ 3`, `m ≤ 2`.
pub fn convex_instance(rng: &mut impl Rng) -> LqProblem {
    let horizon = rng.random_range(1..=8);
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let mut a = Vec::new();
    let (mut b, mut q, mut s, mut r) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..horizon {
        a.push(uniform(rng, n, n));
        b.push(uniform(rng, n, m));
        q.push(gram(rng, n));
        s.push(DMatrix::zeros(m, n));
        r.push(gram(rng, m) + DMatrix::identity(m, m) * 0.1);
    }
    LqProblem::new(a, b, q, s, r, gram(rng, n)).unwrap()
}

/// Instance with indefinite `Q`, `H`, nonzero `S` and `R = R₀ᵀR₀ + 0.5 I`.
pub fn mixed_instance(rng: &mut impl Rng) -> LqProblem {
    let horizon = rng.random_range(1..=6);
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let (mut a, mut b, mut q, mut s, mut r) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..horizon {
        a.push(uniform(rng, n, n) * 0.8);
        b.push(uniform(rng, n, m));
        q.push(symmetric(rng, n));
        s.push(uniform(rng, m, n) * 0.5);
        r.push(gram(rng, m) + DMatrix::identity(m, m) * 0.5);
    }
    LqProblem::new(a, b, q, s, r, symmetric(rng, n)).unwrap()
}

/// Random orthogonal matrix from the QR factor of a uniform matrix.
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    uniform(rng, n, n).qr().q()
}

/// `rows × cols` matrix of rank `rank` with nonzero singular values in `[0.1, 10]`.
pub fn rank_deficient(rng: &mut impl Rng, rows: usize, cols: usize, rank: usize) -> DMatrix<f64> {
    let u = orthogonal(rng, rows);
    let v = orthogonal(rng, cols);
    let mut sigma = DMatrix::zeros(rows, cols);
    for i in 0..rank {
        sigma[(i, i)] = 10f64.powf(rng.random_range(-1.0..1.0));
    }
    u * sigma * v.transpose()
}

/// Scalar two-step problem `A = B = H = 1`, `Q = S = 0`, `R = −1`.
pub fn two_step() -> LqProblem {
    LqProblem::scalar(2, 1.0, 1.0, 0.0, 0.0, -1.0, 1.0).unwrap()
}
