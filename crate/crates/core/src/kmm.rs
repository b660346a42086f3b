//! Kernel mean matching as a box-constrained quadratic program.
//!
//! For training points `x_1..x_n`, test points `t_1..t_m` and weights `beta`,
//!
//! ```text
//! L(beta)^2 = | (1/n) sum_i beta_i phi(x_i) - (1/m) sum_j phi(t_j) |_H^2
//!           = beta' Q beta + q' beta + c
//! Q   = K_tr / n^2
//! q_i = -(2 / (n m)) sum_j k(x_i, t_j)
//! c   = (1 / m^2) sum_{j,l} k(t_j, t_l)
//! ```
//!
//! minimised over the box `0 <= beta_i <= B`. No normalisation constraint on
//! `mean(beta)` is imposed; [`Weights::normalization_gap`] reports it.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::features::FeatureMatrix;
use crate::kernels::{gauss_sum_1d, KernelFamily, KernelSpec, FAST_SUM_THRESHOLD};
use crate::spectral;

/// Storage for `Q`.
#[derive(Clone, Debug)]
enum Quad {
    Dense(DMatrix<f64>),
    /// `Q = K / scale` for a one-dimensional Gaussian Gram matrix, applied by
    /// series summation without forming `K`.
    Gauss1d { sigma: f64, points: Vec<f64>, scale: f64 },
}

impl Quad {
    fn apply(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            Self::Dense(m) => out.gemv(1.0, m, v, 0.0),
            Self::Gauss1d { sigma, points, scale } => {
                let sums = gauss_sum_1d(*sigma, points, points, Some(v.as_slice()));
                for (o, s) in out.iter_mut().zip(sums) {
                    *o = s / scale;
                }
            }
        }
    }
}

/// Quadratic program `min beta' Q beta + q' beta + c` over `[0, B]^n`.
#[derive(Clone, Debug)]
pub struct QpProblem {
    quad: Quad,
    linear: DVector<f64>,
    const_term: f64,
    box_upper: f64,
}

fn check_box_upper(b: f64) -> Result<()> {
    ensure(b.is_finite() && b >= 1.0, || {
        format!("box bound B = {b} is invalid: B >= 1 due to the normalization constraint")
    })
}

impl QpProblem {
    pub fn new(quad: DMatrix<f64>, linear: DVector<f64>, const_term: f64, box_upper: f64) -> Result<Self> {
        let n = linear.len();
        ensure(n >= 1, || "quadratic program needs at least one variable".into())?;
        ensure(quad.shape() == (n, n), || {
            format!("quadratic term is {:?}, expected {n}x{n}", quad.shape())
        })?;
        ensure(
            quad.iter().chain(linear.iter()).all(|v| v.is_finite()) && const_term.is_finite(),
            || "non-finite entry in quadratic program".into(),
        )?;
        check_box_upper(box_upper)?;
        Ok(Self { quad: Quad::Dense(quad), linear, const_term, box_upper })
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    /// `Q` as a dense matrix, materialised if it is held implicitly.
    pub fn quad(&self) -> Cow<'_, DMatrix<f64>> {
        match &self.quad {
            Quad::Dense(m) => Cow::Borrowed(m),
            Quad::Gauss1d { sigma, points, scale } => {
                let spec = KernelSpec::gaussian(*sigma).expect("validated at assembly");
                Cow::Owned(DMatrix::from_fn(points.len(), points.len(), |i, j| {
                    spec.value(&points[i..=i], &points[j..=j]) / scale
                }))
            }
        }
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn const_term(&self) -> f64 {
        self.const_term
    }

    pub fn box_upper(&self) -> f64 {
        self.box_upper
    }

    fn check_len(&self, beta: &[f64]) -> Result<()> {
        ensure(beta.len() == self.len(), || {
            format!("weight vector has length {}, expected {}", beta.len(), self.len())
        })
    }

    /// `beta' Q beta + q' beta + c`, the squared discrepancy.
    pub fn objective(&self, beta: &[f64]) -> Result<f64> {
        self.check_len(beta)?;
        let b = DVector::from_column_slice(beta);
        let mut qb = DVector::zeros(b.len());
        self.quad.apply(&b, &mut qb);
        Ok(b.dot(&qb) + self.linear.dot(&b) + self.const_term)
    }

    /// `2 Q beta + q`.
    pub fn gradient(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(beta)?;
        let b = DVector::from_column_slice(beta);
        let mut qb = DVector::zeros(b.len());
        self.quad.apply(&b, &mut qb);
        let g = qb * 2.0 + &self.linear;
        Ok(g.iter().copied().collect())
    }
}

/// Builds the KMM program for the given samples and box bound.
pub fn assemble_qp(
    spec: &KernelSpec,
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    box_upper: f64,
) -> Result<QpProblem> {
    check_box_upper(box_upper)?;
    ensure(!train.is_empty(), || "training sample is empty".into())?;
    ensure(!test.is_empty(), || "test sample is empty".into())?;
    ensure(train.dim() == test.dim(), || {
        format!("training features have {} columns, test features {}", train.dim(), test.dim())
    })?;
    let n = train.nrows() as f64;
    let m = test.nrows() as f64;
    let cross = spec.kernel_sums(train, test, None)?;
    let linear = DVector::from_iterator(cross.len(), cross.iter().map(|s| -2.0 * s / (n * m)));
    let const_term = spec.total_sum(test)? / (m * m);
    match spec.family() {
        KernelFamily::Gaussian { sigma } if train.dim() == 1 && train.nrows().pow(2) >= FAST_SUM_THRESHOLD => {
            ensure(linear.iter().all(|v| v.is_finite()) && const_term.is_finite(), || {
                "non-finite entry in quadratic program".into()
            })?;
            let quad = Quad::Gauss1d { sigma: *sigma, points: train.as_slice().to_vec(), scale: n * n };
            Ok(QpProblem { quad, linear, const_term, box_upper })
        }
        _ => QpProblem::new(spec.gram(train, train)? / (n * n), linear, const_term, box_upper),
    }
}

/// `L(beta) = sqrt(max(objective(beta), 0))`.
///
/// The squared discrepancy is non-negative in exact arithmetic; rounding can
/// push it slightly below zero near a perfect match (observed magnitudes are
/// under `1e-10`), and those values are clamped to zero.
pub fn objective_norm(problem: &QpProblem, beta: &[f64]) -> Result<f64> {
    Ok(problem.objective(beta)?.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stopping threshold on `|beta - clip(beta - grad f(beta), 0, B)|_inf`.
    pub tol: f64,
    /// Defaults to `50 n + 10_000` when `None`.
    pub max_iter: Option<usize>,
    /// Nesterov momentum with restart on any objective increase.
    pub accelerate: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None, accelerate: true }
    }
}

impl SolverOptions {
    pub fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(50 * n + 10_000)
    }
}

/// Solved KMM weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub beta: Vec<f64>,
    pub box_upper: f64,
    /// `L(beta)`, the discrepancy norm (not its square).
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final projected-gradient stationarity residual.
    pub residual: f64,
}

impl Weights {
    pub fn mean(&self) -> f64 {
        self.beta.iter().sum::<f64>() / self.beta.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.beta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.beta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `|mean(beta) - 1|`, reported but never constrained.
    pub fn normalization_gap(&self) -> f64 {
        (self.mean() - 1.0).abs()
    }
}

pub fn solve_kmm(problem: &QpProblem, opts: &SolverOptions) -> Result<Weights> {
    solve_kmm_traced(problem, opts, |_, _| {})
}

/// Projected gradient descent on the box, optionally accelerated.
///
/// `observer(iteration, objective)` is called with the squared discrepancy of
/// every accepted iterate; the sequence it sees is non-increasing.
pub fn solve_kmm_traced(
    problem: &QpProblem,
    opts: &SolverOptions,
    mut observer: impl FnMut(usize, f64),
) -> Result<Weights> {
    ensure(opts.tol.is_finite() && opts.tol > 0.0, || format!("tol must be positive, got {}", opts.tol))?;
    let max_iter = opts.max_iter_for(problem.len());
    ensure(max_iter >= 1, || "max_iter must be at least 1".into())?;

    let n = problem.len();
    let upper = problem.box_upper;
    let linear = &problem.linear;
    let (jittered, lambda_max) = match &problem.quad {
        Quad::Dense(m) => {
            let (j, l) = psd_checked(m)?;
            (j.map(Quad::Dense), l)
        }
        // Gaussian Gram matrices are positive definite.
        q @ Quad::Gauss1d { .. } => (None, spectral::max_eigenvalue_op(n, |v, out| q.apply(v, out), 1e-6, 10_000)),
    };
    let quad = jittered.as_ref().unwrap_or(&problem.quad);
    let lambda_max = lambda_max * 1.05;
    // Gradient of beta' Q beta is 2 Q beta, so its Lipschitz constant is 2 lambda_max.
    let step = if lambda_max > 0.0 { 1.0 / (2.0 * lambda_max) } else { 1.0 };

    let clip = |v: f64| v.clamp(0.0, upper);
    let matvec = |v: &DVector<f64>, out: &mut DVector<f64>| quad.apply(v, out);
    let value = |b: &DVector<f64>, qb: &DVector<f64>| b.dot(qb) + linear.dot(b);
    let residual = |b: &DVector<f64>, qb: &DVector<f64>| {
        b.iter()
            .zip(qb.iter().zip(linear.iter()))
            .map(|(&bi, (&qbi, &li))| (bi - clip(bi - (2.0 * qbi + li))).abs())
            .fold(0.0, f64::max)
    };

    let mut b = DVector::from_element(n, clip(1.0));
    let mut qb = DVector::zeros(n);
    matvec(&b, &mut qb);
    let mut fb = value(&b, &qb);
    let mut y = b.clone();
    let mut qy = qb.clone();
    let mut bn = DVector::zeros(n);
    let mut qbn = DVector::zeros(n);
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut res = residual(&b, &qb);

    while res > opts.tol && iterations < max_iter {
        iterations += 1;
        project_step(&y, &qy, linear, step, clip, &mut bn);
        matvec(&bn, &mut qbn);
        let mut fbn = value(&bn, &qbn);
        if fbn > fb {
            // Momentum overshot: restart with a plain projected step from b.
            t = 1.0;
            project_step(&b, &qb, linear, step, clip, &mut bn);
            matvec(&bn, &mut qbn);
            fbn = value(&bn, &qbn);
            if fbn > fb {
                // Only reachable through rounding at the optimum.
                bn.copy_from(&b);
                qbn.copy_from(&qb);
                fbn = fb;
            }
        }
        let momentum = if opts.accelerate {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let mom = (t - 1.0) / t_next;
            t = t_next;
            mom
        } else {
            0.0
        };
        // y = bn + mom (bn - b), and likewise for Q y.
        y.copy_from(&bn);
        y.axpy(-momentum, &b, 1.0 + momentum);
        qy.copy_from(&qbn);
        qy.axpy(-momentum, &qb, 1.0 + momentum);
        std::mem::swap(&mut b, &mut bn);
        std::mem::swap(&mut qb, &mut qbn);
        fb = fbn;
        observer(iterations, fb + problem.const_term);
        res = residual(&b, &qb);
    }

    let objective_value = (fb + problem.const_term).max(0.0).sqrt();
    Ok(Weights {
        beta: b.iter().copied().collect(),
        box_upper: upper,
        objective_value,
        iterations,
        converged: res <= opts.tol,
        residual: res,
    })
}

fn project_step(
    from: &DVector<f64>,
    q_from: &DVector<f64>,
    linear: &DVector<f64>,
    step: f64,
    clip: impl Fn(f64) -> f64,
    out: &mut DVector<f64>,
) {
    for i in 0..from.len() {
        out[i] = clip(from[i] - step * (2.0 * q_from[i] + linear[i]));
    }
}

/// Returns the matrix to optimise with (`Some(jittered)` when diagonal jitter
/// was needed to pass the PSD check) and its largest eigenvalue.
fn psd_checked(quad: &DMatrix<f64>) -> Result<(Option<DMatrix<f64>>, f64)> {
    let n = quad.nrows();
    let trace = quad.trace();
    let threshold = -1e-8 * trace.abs().max(f64::MIN_POSITIVE);
    let lmax = spectral::max_eigenvalue(quad, 1e-6, 10_000);
    let lmin = spectral::min_eigenvalue_estimate(quad, lmax);
    if lmin >= threshold {
        return Ok((None, lmax));
    }
    let mut jittered = quad.clone();
    let jitter = 1e-10 * trace / n as f64;
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    let lmax = spectral::max_eigenvalue(&jittered, 1e-6, 10_000);
    let lmin = spectral::min_eigenvalue_estimate(&jittered, lmax);
    if lmin < threshold {
        return Err(Error::Numerical(format!(
            "quadratic term is indefinite (smallest eigenvalue estimate {lmin:.3e} after jitter {jitter:.3e})"
        )));
    }
    Ok((Some(jittered), lmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `|(1/n) sum beta_i phi(x_i) - (1/m) sum phi(t_j)|^2` by explicit double sums.
    fn double_sum_objective(spec: &KernelSpec, x: &FeatureMatrix, t: &FeatureMatrix, beta: &[f64]) -> f64 {
        let (n, m) = (x.nrows() as f64, t.nrows() as f64);
        let mut tr = 0.0;
        for i in 0..x.nrows() {
            for j in 0..x.nrows() {
                tr += beta[i] * beta[j] * spec.value(x.row(i), x.row(j));
            }
        }
        let mut cross = 0.0;
        for i in 0..x.nrows() {
            for j in 0..t.nrows() {
                cross += beta[i] * spec.value(x.row(i), t.row(j));
            }
        }
        let mut te = 0.0;
        for i in 0..t.nrows() {
            for j in 0..t.nrows() {
                te += spec.value(t.row(i), t.row(j));
            }
        }
        tr / (n * n) - 2.0 * cross / (n * m) + te / (m * m)
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureMatrix {
        let data = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMatrix::new(n, d, data).unwrap()
    }

    #[test]
    fn implicit_gaussian_quad_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<f64> = (0..1100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ts: Vec<f64> = (0..300).map(|_| rng.gen_range(0.2..1.0)).collect();
        let x = FeatureMatrix::from_column(&xs).unwrap();
        let t = FeatureMatrix::from_column(&ts).unwrap();
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let implicit = assemble_qp(&spec, &x, &t, 3.0).unwrap();
        assert!(matches!(implicit.quad, Quad::Gauss1d { .. }));
        let dense = QpProblem::new(
            implicit.quad().into_owned(),
            implicit.linear().clone(),
            implicit.const_term(),
            3.0,
        )
        .unwrap();
        let beta: Vec<f64> = (0..1100).map(|_| rng.gen_range(0.0..3.0)).collect();
        assert_relative_eq!(implicit.objective(&beta).unwrap(), dense.objective(&beta).unwrap(), max_relative = 1e-12);
        let (gi, gd) = (implicit.gradient(&beta).unwrap(), dense.gradient(&beta).unwrap());
        for (a, b) in gi.iter().zip(&gd) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let wi = solve_kmm(&implicit, &SolverOptions::default()).unwrap();
        let wd = solve_kmm(&dense, &SolverOptions::default()).unwrap();
        assert!(wi.converged && wd.converged);
        assert!((wi.objective_value - wd.objective_value).abs() < 1e-6);
    }

    #[test]
    fn matched_single_point() {
        let spec = KernelSpec::inverse_multiquadric(2.0, 0.5).unwrap();
        let x = FeatureMatrix::from_rows(&[[0.3, 0.4]]).unwrap();
        let p = assemble_qp(&spec, &x, &x, 1.0).unwrap();
        let k = spec.value(x.row(0), x.row(0));
        assert_eq!(p.quad()[(0, 0)], k);
        assert_eq!(p.linear()[0], -2.0 * k);
        assert_eq!(p.const_term(), k);
        assert_eq!(p.objective(&[1.0]).unwrap(), 0.0);
        assert_eq!(objective_norm(&p, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_built_two_by_one() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let x = FeatureMatrix::from_column(&[0.0, 1.0]).unwrap();
        let t = FeatureMatrix::from_column(&[0.5]).unwrap();
        let p = assemble_qp(&spec, &x, &t, 2.0).unwrap();
        let e1 = (-1.0f64).exp();
        let kappa = (-0.25f64).exp();
        for beta in [[0.0, 0.0], [1.0, 1.0], [0.3, 1.7], [2.0, 0.1]] {
            // sum_ij beta_i beta_j k_ij / 4 - sum_i beta_i kappa_i + k_te
            let expected = (beta[0] * beta[0] + beta[1] * beta[1] + 2.0 * beta[0] * beta[1] * e1) / 4.0
                - (beta[0] + beta[1]) * kappa
                + 1.0;
            assert_relative_eq!(p.objective(&beta).unwrap(), expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_weights_give_test_embedding_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = KernelSpec::gaussian(0.8).unwrap();
        let x = random_points(&mut rng, 5, 2);
        let t = random_points(&mut rng, 7, 2);
        let p = assemble_qp(&spec, &x, &t, 3.0).unwrap();
        let zero = vec![0.0; 5];
        assert_eq!(p.objective(&zero).unwrap(), p.const_term());
        assert_relative_eq!(objective_norm(&p, &zero).unwrap(), p.const_term().sqrt());
    }

    #[test]
    fn objective_matches_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = KernelSpec::gaussian(0.6).unwrap();
        for _ in 0..20 {
            let n = rng.gen_range(1..6);
            let x = random_points(&mut rng, n, 2);
            let m = rng.gen_range(1..6);
            let t = random_points(&mut rng, m, 2);
            let p = assemble_qp(&spec, &x, &t, 2.0).unwrap();
            let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let direct = double_sum_objective(&spec, &x, &t, &beta);
            assert!((p.objective(&beta).unwrap() - direct).abs() <= 1e-12);
            assert!((objective_norm(&p, &beta).unwrap() - direct.max(0.0).sqrt()).abs() <= 1e-12 + 1e-6 * direct.sqrt());
        }
    }

    #[test]
    fn assemble_rejects_bad_inputs() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let x = FeatureMatrix::from_column(&[0.0]).unwrap();
        let err = assemble_qp(&spec, &x, &x, 0.5).unwrap_err();
        assert!(err.to_string().contains("B >= 1 due to the normalization constraint"));
        let empty = FeatureMatrix::new(0, 1, vec![]).unwrap();
        assert!(assemble_qp(&spec, &empty, &x, 1.0).is_err());
        assert!(assemble_qp(&spec, &x, &empty, 1.0).is_err());
        let wide = FeatureMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(assemble_qp(&spec, &x, &wide, 1.0).is_err());
        let p = assemble_qp(&spec, &x, &x, 1.0).unwrap();
        assert!(p.objective(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn non_finite_problem_rejected() {
        let q = DMatrix::from_element(1, 1, f64::NAN);
        assert!(QpProblem::new(q, DVector::from_element(1, 0.0), 0.0, 1.0).is_err());
    }

    #[test]
    fn identical_samples_recover_unit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = KernelSpec::gaussian(0.5).unwrap();
        let x = random_points(&mut rng, 40, 2);
        let p = assemble_qp(&spec, &x, &x, 2.0).unwrap();
        let opts = SolverOptions::default();
        let w = solve_kmm(&p, &opts).unwrap();
        assert!(w.converged);
        assert!(w.objective_value <= opts.tol * 10.0, "{}", w.objective_value);
    }

    #[test]
    fn feasible_origin_is_returned() {
        let p = QpProblem::new(DMatrix::identity(3, 3) * 0.5, DVector::zeros(3), 0.0, 1.0).unwrap();
        let w = solve_kmm(&p, &SolverOptions::default()).unwrap();
        assert!(w.converged);
        assert!(w.beta.iter().all(|b| b.abs() <= 1e-8), "{:?}", w.beta);
    }

    /// Minimum of the objective over the grid {0, 0.01, ..., B}^n.
    fn grid_minimum(p: &QpProblem) -> f64 {
        let n = p.len();
        let steps = (p.box_upper() / 0.01).round() as usize;
        let mut idx = vec![0usize; n];
        let mut best = f64::INFINITY;
        let q = p.quad();
        let l = p.linear();
        let mut beta = vec![0.0; n];
        loop {
            for i in 0..n {
                beta[i] = idx[i] as f64 * 0.01;
            }
            let mut v = p.const_term();
            for i in 0..n {
                v += l[i] * beta[i];
                for j in 0..n {
                    v += beta[i] * q[(i, j)] * beta[j];
                }
            }
            best = best.min(v);
            let mut k = 0;
            loop {
                if k == n {
                    return best.max(0.0).sqrt();
                }
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn three_variable_instance_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let x = random_points(&mut rng, 3, 1);
        let t = FeatureMatrix::from_column(&[0.9, 1.1, 1.3, 0.2]).unwrap();
        let p = assemble_qp(&spec, &x, &t, 2.0).unwrap();
        let w = solve_kmm(&p, &SolverOptions::default()).unwrap();
        let grid = grid_minimum(&p);
        assert!(w.objective_value <= grid + 1e-3, "{} vs {grid}", w.objective_value);
        assert!(w.beta.iter().all(|&b| (0.0..=2.0).contains(&b)));
    }

    #[test]
    fn descent_is_monotone_and_kkt_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = KernelSpec::gaussian(0.4).unwrap();
        for accelerate in [true, false] {
            let x = random_points(&mut rng, 60, 1);
            let t: Vec<f64> = (0..80).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t = FeatureMatrix::from_column(&t).unwrap();
            let p = assemble_qp(&spec, &x, &t, 3.0).unwrap();
            let opts = SolverOptions { accelerate, ..Default::default() };
            let mut last = f64::INFINITY;
            let w = solve_kmm_traced(&p, &opts, |_, f| {
                assert!(f <= last, "objective increased: {last} -> {f}");
                last = f;
            })
            .unwrap();
            if !accelerate {
                // Plain projected gradient is monotone but far too slow on this conditioning.
                continue;
            }
            assert!(w.converged, "iters={} res={}", w.iterations, w.residual);
            let g = p.gradient(&w.beta).unwrap();
            for (b, g) in w.beta.iter().zip(&g) {
                assert!((0.0..=3.0).contains(b));
                if *b <= opts.tol {
                    assert!(*g >= -opts.tol);
                } else if *b >= 3.0 - opts.tol {
                    assert!(*g <= opts.tol);
                } else {
                    assert!(g.abs() <= opts.tol);
                }
            }
        }
    }

    #[test]
    fn duplicated_training_points_keep_their_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = KernelSpec::gaussian(0.5).unwrap();
        let x = random_points(&mut rng, 6, 1);
        let t = random_points(&mut rng, 9, 1);
        let beta: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0)).collect();
        let single = assemble_qp(&spec, &x, &t, 2.0).unwrap();
        let doubled = assemble_qp(&spec, &x.repeated(2), &t, 2.0).unwrap();
        let beta2: Vec<f64> = beta.iter().chain(&beta).copied().collect();
        assert_relative_eq!(
            single.objective(&beta).unwrap(),
            doubled.objective(&beta2).unwrap(),
            epsilon = 1e-14
        );
        let w1 = solve_kmm(&single, &SolverOptions::default()).unwrap();
        let w2 = solve_kmm(&doubled, &SolverOptions::default()).unwrap();
        assert!((w1.objective_value - w2.objective_value).abs() < 1e-6);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let x = random_points(&mut rng, 30, 1);
        let t = random_points(&mut rng, 30, 1);
        let p = assemble_qp(&spec, &x, &t, 5.0).unwrap();
        let w = solve_kmm(&p, &SolverOptions { tol: 1e-14, max_iter: Some(2), accelerate: true }).unwrap();
        assert!(!w.converged);
        assert_eq!(w.iterations, 2);
        assert!(solve_kmm(&p, &SolverOptions { tol: 0.0, ..Default::default() }).is_err());
        assert!(solve_kmm(&p, &SolverOptions { max_iter: Some(0), ..Default::default() }).is_err());
    }

    #[test]
    fn indefinite_quadratic_is_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = QpProblem::new(q, DVector::zeros(2), 0.0, 1.0).unwrap();
        assert!(matches!(solve_kmm(&p, &SolverOptions::default()), Err(Error::Numerical(_))));
    }
}
