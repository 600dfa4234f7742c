//! Shared oracles for the integration tests: independent evaluations built
//! on nalgebra's own determinant, finite differences, and instance
//! generators. Nothing here calls back into the gradient code under test.

#![allow(dead_code)]

use nalgebra::DMatrix;
use ndpp::learning::init_model;
use ndpp::{LearningConfig, NdppModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random model with Gaussian V, B and block-skew C.
pub fn random_model(n: usize, d: usize, seed: u64) -> NdppModel {
    let cfg = LearningConfig::new(n, d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_model(&cfg, &mut rng).unwrap()
}

/// Direct log det(V_S^T V_S + B_S^T C B_S + I_s) on the s x s matrix,
/// via nalgebra's determinant (independent of the factored route).
pub fn direct_logdet_plus_identity(v: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let s = v.ncols();
    let m = v.tr_mul(v) + b.tr_mul(&(c * b)) + DMatrix::identity(s, s);
    m.determinant().ln()
}

/// Direct log det(V_S^T V_S + B_S^T C B_S).
pub fn direct_logdet(v: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let m = v.tr_mul(v) + b.tr_mul(&(c * b));
    m.determinant().ln()
}

/// psi_t evaluated directly: log det(M) - log det(M + I) - R.
pub fn direct_psi(
    v: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> f64 {
    let r = alpha * v.iter().map(|x| x * x).sum::<f64>()
        + beta * b.iter().map(|x| x * x).sum::<f64>();
    direct_logdet(v, b, c) - direct_logdet_plus_identity(v, b, c) - r
}

pub const FD_STEP: f64 = 1e-6;

/// Central finite differences of `f` with respect to every entry of the
/// matrix passed to it.
pub fn fd_matrix_gradient(
    base: &DMatrix<f64>,
    mut f: impl FnMut(&DMatrix<f64>) -> f64,
) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(base.nrows(), base.ncols());
    for i in 0..base.nrows() {
        for j in 0..base.ncols() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[(i, j)] += FD_STEP;
            minus[(i, j)] -= FD_STEP;
            grad[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        }
    }
    grad
}

/// Directional finite differences of `f` over the skew basis
/// D_ij = e_i e_j^T - e_j e_i^T (i < j), compared against the analytic
/// pairing <G, D_ij> = G[i,j] - G[j,i]. Returns the worst relative error.
pub fn fd_skew_error(
    c: &DMatrix<f64>,
    analytic: &DMatrix<f64>,
    mut f: impl FnMut(&DMatrix<f64>) -> f64,
) -> f64 {
    let d = c.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let mut plus = c.clone();
            let mut minus = c.clone();
            plus[(i, j)] += FD_STEP;
            plus[(j, i)] -= FD_STEP;
            minus[(i, j)] -= FD_STEP;
            minus[(j, i)] += FD_STEP;
            let fd = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
            let an = analytic[(i, j)] - analytic[(j, i)];
            worst = worst.max(rel_err(fd, an));
        }
    }
    worst
}

/// |a - b| scaled by max(1, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Worst entrywise relative error between two matrices.
pub fn rel_err_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Gaussian column blocks (v_s, b_s) plus a random invertible block-skew C.
pub fn random_blocks(d: usize, s: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || {
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let v = DMatrix::from_fn(d, s, |_, _| gauss());
    let b = DMatrix::from_fn(d, s, |_, _| gauss());
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut c = DMatrix::zeros(d, d);
    for blk in 0..d / 2 {
        let lambda = rng2.gen_range(0.5..=1.5);
        c[(2 * blk, 2 * blk + 1)] = lambda;
        c[(2 * blk + 1, 2 * blk)] = -lambda;
    }
    (v, b, c)
}
