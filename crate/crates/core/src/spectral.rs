use nalgebra::{DMatrix, DVector};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration, stopping
/// once successive Rayleigh quotients agree to `rel_tol`.
pub(crate) fn max_eigenvalue(m: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    max_eigenvalue_op(m.nrows(), |v, out| out.gemv(1.0, m, v, 0.0), rel_tol, max_iter)
}

/// [`max_eigenvalue`] for an operator given only through `matvec(v, out)`.
pub(crate) fn max_eigenvalue_op(
    n: usize,
    matvec: impl Fn(&DVector<f64>, &mut DVector<f64>),
    rel_tol: f64,
    max_iter: usize,
) -> f64 {
    if n == 0 {
        return 0.0;
    }
    // Deterministic start with no exact zero components.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 101) as f64 / 101.0);
    v.normalize_mut();
    let mut lambda = 0.0;
    let mut w = DVector::zeros(n);
    for _ in 0..max_iter {
        matvec(&v, &mut w);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v.copy_from(&w);
        v /= norm;
        if (next - lambda).abs() <= rel_tol * next.abs() {
            return next.max(lambda);
        }
        lambda = next;
    }
    lambda
}

/// Upper estimate of the smallest eigenvalue of a symmetric matrix.
///
/// Exact for small matrices. Larger ones run a bounded number of power
/// iterations on `lambda_max I - m`; the resulting Rayleigh quotient is always
/// `>= lambda_min`, so a negative answer proves indefiniteness.
pub(crate) fn min_eigenvalue_estimate(m: &DMatrix<f64>, lambda_max: f64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if n <= EXACT_EIGEN_LIMIT {
        return m.clone().symmetric_eigenvalues().min();
    }
    let mut v = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + (i % 13) as f64));
    v.normalize_mut();
    let mut w = DVector::zeros(n);
    let mut rayleigh = f64::INFINITY;
    for _ in 0..SHIFTED_POWER_STEPS {
        w.gemv(1.0, m, &v, 0.0);
        rayleigh = rayleigh.min(v.dot(&w));
        // w <- (lambda_max I - m) v
        w.axpy(lambda_max, &v, -1.0);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v.copy_from(&w);
        v /= norm;
    }
    rayleigh
}

const EXACT_EIGEN_LIMIT: usize = 64;
const SHIFTED_POWER_STEPS: usize = 12;
