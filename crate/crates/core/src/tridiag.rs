//! Thomas elimination for tridiagonal systems.

/// Solves `T x = rhs` in place, where `T` has sub-diagonal `lower`, diagonal
/// `diag` and super-diagonal `upper` (`lower[i]` couples rows `i+1` and `i`).
///
/// No pivoting: the matrices assembled in this crate are diagonally dominant.
pub fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    assert_eq!(rhs.len(), n);
    assert!(lower.len() + 1 >= n && upper.len() + 1 >= n);
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    rhs[0] /= denom;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / denom;
        denom = diag[i] - lower[i - 1] * c[i - 1];
        rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// `y = T x` for the same storage convention as [`solve`].
pub fn multiply(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64], y: &mut [f64]) {
    let n = diag.len();
    for i in 0..n {
        let mut acc = diag[i] * x[i];
        if i > 0 {
            acc += lower[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            acc += upper[i] * x[i + 1];
        }
        y[i] = acc;
    }
}
