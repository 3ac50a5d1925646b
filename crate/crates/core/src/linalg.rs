//! Small dense helpers shared by the assembly and dynamics code.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Largest entry magnitude of a complex matrix.
pub fn max_abs(a: &DMatrix<Complex64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// (A + A†)/2
pub fn hermitize(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let adj = a.adjoint();
    (a + adj).scale(0.5)
}

/// Column-major vectorization.
pub fn vectorize(a: &DMatrix<Complex64>) -> nalgebra::DVector<Complex64> {
    nalgebra::DVector::from_column_slice(a.as_slice())
}

pub fn unvectorize(v: &nalgebra::DVector<Complex64>, dim: usize) -> DMatrix<Complex64> {
    assert_eq!(v.len(), dim * dim);
    DMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// Matrix exponential by scaling-and-squaring over a truncated Taylor series.
///
/// Accurate to close to machine precision for the well-scaled generators
/// used here (‖A‖₁ after scaling ≤ 1/4, ~20 series terms).
pub fn expm(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let norm = one_norm(a);
    let s = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.map(|x| x / 2f64.powi(s as i32));

    let mut result = DMatrix::<Complex64>::identity(n, n);
    let mut term = DMatrix::<Complex64>::identity(n, n);
    for k in 1..=24 {
        term = (&term * &scaled).map(|x| x / k as f64);
        result += &term;
        if one_norm(&term) < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

fn one_norm(a: &DMatrix<Complex64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}
