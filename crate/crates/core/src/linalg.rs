//! Small dense helpers: matrix exponential and a vectorized Lyapunov solve.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Discriminant magnitude below which a 2x2 matrix is treated as
/// near-defective and exponentiated by scaling and squaring.
const DEFECTIVE_DISCRIMINANT: f64 = 1e-12;

/// `exp(m)`.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    match m.nrows() {
        1 => DMatrix::from_element(1, 1, m[(0, 0)].exp()),
        2 => expm_2x2(m).unwrap_or_else(|| expm_scaling_squaring(m)),
        _ => expm_scaling_squaring(m),
    }
}

/// Closed form via `M = mu I + N`, `N^2 = disc I`. `None` when the
/// discriminant is too small to divide by safely.
fn expm_2x2(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let mu = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc.abs() < DEFECTIVE_DISCRIMINANT {
        return None;
    }
    let (ch, sh_over_s) = if disc > 0.0 {
        let s = disc.sqrt();
        (s.cosh(), s.sinh() / s)
    } else {
        let s = (-disc).sqrt();
        (s.cos(), s.sin() / s)
    };
    let e = mu.exp();
    Some(DMatrix::from_row_slice(
        2,
        2,
        &[
            e * (ch + sh_over_s * (a - mu)),
            e * sh_over_s * b,
            e * sh_over_s * c,
            e * (ch + sh_over_s * (d - mu)),
        ],
    ))
}

pub(crate) fn expm_scaling_squaring(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = m * scale;
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &a / k as f64;
        result += &term;
        if term.abs().max() < 1e-18 * result.abs().max() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Solves `B P + P B^T + A = 0` through the Kronecker system
/// `(I (x) B + B (x) I) vec(P) = -vec(A)`.
pub fn solve_lyapunov(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = b.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(b) + b.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, a.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// `B P + P B^T + A` in max-abs norm.
pub fn lyapunov_residual(b: &DMatrix<f64>, p: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    (b * p + p * b.transpose() + a).abs().max()
}

/// Symmetric square root of a positive semidefinite matrix; negative
/// eigenvalues from rounding are clipped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}
