//! Small dense helpers shared by the smoothers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

/// Cholesky factorisation; on failure retries once with `1e-8 × mean
/// diagonal` added to the diagonal.
pub fn cholesky_with_jitter(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let dim = m.nrows();
    if dim == 0 {
        return Cholesky::new(m);
    }
    let jitter = 1e-8 * m.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    match Cholesky::new(m.clone()) {
        Some(c) => Some(c),
        None => {
            let mut m = m;
            for i in 0..dim {
                m[(i, i)] += jitter;
            }
            Cholesky::new(m)
        }
    }
}

/// Row means of an ensemble matrix (one member per column), accumulated in
/// member order.
pub fn row_means(x: &DMatrix<f64>) -> DVector<f64> {
    let mut mean = DVector::zeros(x.nrows());
    for col in x.column_iter() {
        mean += col;
    }
    mean / x.ncols() as f64
}

/// Member deviations from the ensemble mean.
pub fn deviations(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = row_means(x);
    let mut d = x.clone();
    for mut col in d.column_iter_mut() {
        col -= &mean;
    }
    d
}

/// Draws from `N(mean, cov)`. Uses a Cholesky factor when possible and a
/// clipped eigen-decomposition for (numerically) semi-definite covariances.
pub fn sample_mvn(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut impl Rng) -> DVector<f64> {
    let dim = mean.len();
    let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sym = (cov + cov.transpose()) * 0.5;
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return mean + ch.l() * z;
    }
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    mean + &eig.eigenvectors * z.component_mul(&scale)
}

/// Solves `a x = b` for symmetric positive (semi-)definite `a`, falling back
/// to a pseudo-inverse when the factorisation fails.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    if let Some(ch) = cholesky_with_jitter(sym.clone()) {
        return ch.solve(b);
    }
    let svd = sym.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    svd.solve(b, tol).expect("svd computed with both factors")
}
