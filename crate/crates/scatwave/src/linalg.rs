//! Small dense helpers shared by the solvers.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Eigenvalues of a complex square matrix through its Schur form.
pub fn complex_eigenvalues(m: DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    let schur = nalgebra::Schur::try_new(m, 1e-14, 100_000)
        .ok_or_else(|| Error::Numeric(format!("Schur iteration did not converge (n = {n})")))?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Real least squares `min |A x - b|` by SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-14 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, tol)
        .map_err(|e| Error::Numeric(format!("least squares: {e}")))
}

/// Complex least squares `min |A x - b|` by SVD.
pub fn lstsq_c(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-14 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, tol)
        .map_err(|e| Error::Numeric(format!("least squares: {e}")))
}

/// Roots of the monic polynomial `z^d + c[d-1] z^(d-1) + ... + c[0]`.
pub fn monic_roots(c: &[Complex64]) -> Result<Vec<Complex64>> {
    let d = c.len();
    if d == 0 {
        return Ok(Vec::new());
    }
    let mut m = DMatrix::<Complex64>::zeros(d, d);
    for i in 1..d {
        m[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    for i in 0..d {
        m[(i, d - 1)] = -c[i];
    }
    complex_eigenvalues(m)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, z);
        x[i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}
