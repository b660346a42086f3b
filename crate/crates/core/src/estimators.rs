//! Point estimates of the test-set label mean.
//!
//! Labels are stored on the unit interval. A dataset whose labels live on
//! another range must declare that range up front; estimates are computed on
//! the unit scale and mapped back through [`LabelAffine`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, input, Error, Result};
use crate::features::FeatureMatrix;
use crate::kernels::KernelSpec;
use crate::kmm::{assemble_qp, solve_kmm, SolverOptions, Weights};

/// Map from stored unit-interval labels back to original units:
/// `original = stored * scale + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAffine {
    pub scale: f64,
    pub offset: f64,
}

impl LabelAffine {
    pub const IDENTITY: Self = Self { scale: 1.0, offset: 0.0 };

    /// Affine map sending `[min, max]` onto `[0, 1]`.
    pub fn from_range(min: f64, max: f64) -> Result<Self> {
        ensure(min.is_finite() && max.is_finite() && max > min, || {
            format!("declared label range [{min}, {max}] is empty or not finite")
        })?;
        Ok(Self { scale: max - min, offset: min })
    }

    pub fn to_original(&self, unit: f64) -> f64 {
        unit * self.scale + self.offset
    }

    pub fn to_unit(&self, original: f64) -> f64 {
        (original - self.offset) / self.scale
    }
}

/// Features with optional labels stored on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: FeatureMatrix,
    labels: Option<Vec<f64>>,
    label_affine: LabelAffine,
}

impl Dataset {
    pub fn unlabeled(features: FeatureMatrix) -> Self {
        Self { features, labels: None, label_affine: LabelAffine::IDENTITY }
    }

    /// Ingests labels. Without `declared_range` every label must already lie
    /// in `[0, 1]`; with it, labels are rescaled from that range and must lie
    /// inside it. Ranges are never inferred from the data.
    pub fn labeled(features: FeatureMatrix, labels: Vec<f64>, declared_range: Option<(f64, f64)>) -> Result<Self> {
        ensure(labels.len() == features.nrows(), || {
            format!("{} labels for {} feature rows", labels.len(), features.nrows())
        })?;
        let affine = match declared_range {
            Some((lo, hi)) => LabelAffine::from_range(lo, hi)?,
            None => LabelAffine::IDENTITY,
        };
        let unit = to_unit_labels(&labels, affine, declared_range)?;
        Ok(Self { features, labels: Some(unit), label_affine: affine })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn label_affine(&self) -> LabelAffine {
        self.label_affine
    }

    /// Unit-scale labels.
    pub fn labels(&self) -> Result<&[f64]> {
        self.labels.as_deref().ok_or_else(|| Error::Input("training data has no label column".into()))
    }
}

fn to_unit_labels(values: &[f64], affine: LabelAffine, declared: Option<(f64, f64)>) -> Result<Vec<f64>> {
    let (lo, hi) = declared.unwrap_or((0.0, 1.0));
    let mut out = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        if !(v.is_finite() && v >= lo && v <= hi) {
            let hint = if declared.is_none() { "; declare the label range to rescale" } else { "" };
            return input(format!("label {v} at row {i} lies outside [{lo}, {hi}]{hint}"));
        }
        out.push(affine.to_unit(v).clamp(0.0, 1.0));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Kmm,
    Plugin,
    KdeRatio,
    Oracle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Kmm, Self::Plugin, Self::KdeRatio, Self::Oracle];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Kmm => "kmm",
            Self::Plugin => "plugin",
            Self::KdeRatio => "kde_ratio",
            Self::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Embedding discrepancy at the weights, when a KMM solve produced them.
    pub lhat: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub normalization_gap: f64,
}

impl WeightsSummary {
    fn of_values(beta: &[f64]) -> Self {
        let mean = beta.iter().sum::<f64>() / beta.len() as f64;
        Self {
            min: beta.iter().copied().fold(f64::INFINITY, f64::min),
            max: beta.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            lhat: None,
            iterations: None,
            converged: None,
            normalization_gap: (mean - 1.0).abs(),
        }
    }

    fn of_kmm(w: &Weights) -> Self {
        Self {
            lhat: Some(w.objective_value),
            iterations: Some(w.iterations),
            converged: Some(w.converged),
            ..Self::of_values(&w.beta)
        }
    }
}

/// Split of the weighted-mean error into its computable parts:
/// `estimate - E[Y_te] = label_noise + weight_error + sampling`, with
///
/// - `label_noise  = (1/n) sum b_i (y_i - m(x_i))`
/// - `weight_error = (1/n) sum (b_i - beta(x_i)) m(x_i)`
/// - `sampling     = (1/n) sum beta(x_i) m(x_i) - E[Y_te]`
///
/// Only available when `m` and `beta` are known, i.e. for synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub label_noise: f64,
    pub weight_error: f64,
    pub sampling: f64,
}

impl Decomposition {
    pub fn compute(weights: &[f64], labels: &[f64], m_train: &[f64], beta_true: &[f64], ey_te: f64) -> Result<Self> {
        let n = weights.len();
        ensure(labels.len() == n && m_train.len() == n && beta_true.len() == n, || {
            "decomposition inputs must all have the training-sample length".into()
        })?;
        let nf = n as f64;
        let mut noise = 0.0;
        let mut weight = 0.0;
        let mut oracle = 0.0;
        for i in 0..n {
            noise += weights[i] * (labels[i] - m_train[i]);
            weight += (weights[i] - beta_true[i]) * m_train[i];
            oracle += beta_true[i] * m_train[i];
        }
        Ok(Self { label_noise: noise / nf, weight_error: weight / nf, sampling: oracle / nf - ey_te })
    }

    pub fn total(&self) -> f64 {
        self.label_noise + self.weight_error + self.sampling
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator_kind: EstimatorKind,
    /// Estimate in original label units.
    pub point: f64,
    /// Estimate on the unit label scale used by the bounds.
    pub point_unit_scale: f64,
    pub label_affine: LabelAffine,
    pub weights_summary: Option<WeightsSummary>,
    pub diagnostics: Option<Decomposition>,
}

impl EstimateReport {
    fn new(kind: EstimatorKind, unit: f64, affine: LabelAffine, summary: Option<WeightsSummary>) -> Self {
        Self {
            estimator_kind: kind,
            point: affine.to_original(unit),
            point_unit_scale: unit,
            label_affine: affine,
            weights_summary: summary,
            diagnostics: None,
        }
    }
}

/// `(1/n) sum_i w_i y_i`.
pub fn weighted_mean(weights: &[f64], labels: &[f64]) -> f64 {
    weights.iter().zip(labels).map(|(w, y)| w * y).sum::<f64>() / weights.len() as f64
}

/// KMM estimate together with the weights that produced it.
pub fn kmm_estimate_with_weights(
    train: &Dataset,
    test_features: &FeatureMatrix,
    spec: &KernelSpec,
    box_upper: f64,
    opts: &SolverOptions,
) -> Result<(EstimateReport, Weights)> {
    let labels = train.labels()?;
    let problem = assemble_qp(spec, train.features(), test_features, box_upper)?;
    let weights = solve_kmm(&problem, opts)?;
    let unit = weighted_mean(&weights.beta, labels);
    let report = EstimateReport::new(
        EstimatorKind::Kmm,
        unit,
        train.label_affine(),
        Some(WeightsSummary::of_kmm(&weights)),
    );
    Ok((report, weights))
}

/// `(1/n_tr) sum beta_i y_i` with KMM weights. Non-convergence of the solver is
/// reported through `weights_summary.converged`, not as an error.
pub fn kmm_estimate(
    train: &Dataset,
    test_features: &FeatureMatrix,
    spec: &KernelSpec,
    box_upper: f64,
    opts: &SolverOptions,
) -> Result<EstimateReport> {
    kmm_estimate_with_weights(train, test_features, spec, box_upper, opts).map(|(r, _)| r)
}

/// Regularisation used when none is given: `n_tr^(-2/3)`.
pub fn default_lambda(n_tr: usize) -> f64 {
    (n_tr as f64).powf(-2.0 / 3.0)
}

/// Plug-in estimate: fit kernel ridge regression on the training sample and
/// average its predictions over the test covariates.
///
/// The coefficients solve `(K_tr + n_tr lambda I) a = y`. Predictions are not
/// clipped individually; the averaged estimate is projected onto `[0, 1]`,
/// where the true mean lives.
pub fn plugin_estimate(
    train: &Dataset,
    test_features: &FeatureMatrix,
    spec: &KernelSpec,
    lambda: Option<f64>,
) -> Result<EstimateReport> {
    let labels = train.labels()?;
    let n = train.len();
    ensure(n >= 1 && !test_features.is_empty(), || "plug-in estimate needs non-empty samples".into())?;
    let lambda = lambda.unwrap_or_else(|| default_lambda(n));
    ensure(lambda.is_finite() && lambda > 0.0, || format!("lambda must be positive, got {lambda}"))?;
    let coef = ridge_coefficients(spec, train.features(), labels, lambda)?;
    let sums = spec.kernel_sums(train.features(), test_features, None)?;
    let mean_prediction = coef.iter().zip(&sums).map(|(a, s)| a * s).sum::<f64>() / test_features.nrows() as f64;
    let unit = mean_prediction.clamp(0.0, 1.0);
    Ok(EstimateReport::new(EstimatorKind::Plugin, unit, train.label_affine(), None))
}

/// Solves `(K + n lambda I) a = y` by Cholesky.
pub fn ridge_coefficients(spec: &KernelSpec, x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = x.nrows();
    let mut system: DMatrix<f64> = spec.gram(x, x)?;
    let ridge = n as f64 * lambda;
    for i in 0..n {
        system[(i, i)] += ridge;
    }
    let diag_max = system.diagonal().max();
    let diag_min = system.diagonal().min();
    let chol = system.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "ridge system is not positive definite (n = {n}, n*lambda = {ridge:.3e}, \
             diagonal range [{diag_min:.3e}, {diag_max:.3e}]); increase lambda"
        ))
    })?;
    let a = chol.solve(&DVector::from_column_slice(y));
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "ridge solve produced non-finite coefficients (n*lambda = {ridge:.3e}, \
             diagonal range [{diag_min:.3e}, {diag_max:.3e}])"
        )));
    }
    Ok(a.iter().copied().collect())
}

/// Silverman's rule of thumb, `sigma (4 / ((d + 2) n))^(1 / (d + 4))`, with
/// `sigma` the mean per-coordinate sample standard deviation.
pub fn silverman_bandwidth(x: &FeatureMatrix) -> Result<f64> {
    let (n, d) = (x.nrows(), x.dim());
    ensure(n >= 2, || "Silverman bandwidth needs at least two points".into())?;
    let mut sd_sum = 0.0;
    for c in 0..d {
        let mean = x.rows().map(|r| r[c]).sum::<f64>() / n as f64;
        let var = x.rows().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        sd_sum += var.sqrt();
    }
    let h = sd_sum / d as f64 * (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    ensure(h > 0.0, || "sample has zero spread; Silverman bandwidth is zero".into())?;
    Ok(h)
}

/// Gaussian kernel density estimate of `sample`, evaluated at `at`.
pub fn gaussian_kde(sample: &FeatureMatrix, at: &FeatureMatrix, bandwidth: f64) -> Result<Vec<f64>> {
    ensure(bandwidth.is_finite() && bandwidth > 0.0, || format!("bandwidth must be positive, got {bandwidth}"))?;
    // exp(-|x|^2 / (2 h^2)) is the Gaussian family with sigma = h sqrt(2).
    let kernel = KernelSpec::gaussian(bandwidth * std::f64::consts::SQRT_2)?;
    let d = sample.dim() as f64;
    let norm = (2.0 * std::f64::consts::PI * bandwidth * bandwidth).powf(-d / 2.0) / sample.nrows() as f64;
    Ok(kernel.kernel_sums(at, sample, None)?.into_iter().map(|s| s * norm).collect())
}

/// Floor applied to the training density before division.
pub const KDE_DENSITY_FLOOR: f64 = 1e-12;

/// Density-ratio weights `clip(p_te(x) / max(p_tr(x), floor), 0, B)` at the training points.
pub fn kde_ratio_weights(
    train_features: &FeatureMatrix,
    test_features: &FeatureMatrix,
    bandwidth_tr: f64,
    bandwidth_te: f64,
    box_upper: f64,
) -> Result<Vec<f64>> {
    ensure(box_upper.is_finite() && box_upper >= 1.0, || format!("B must be >= 1, got {box_upper}"))?;
    let p_tr = gaussian_kde(train_features, train_features, bandwidth_tr)?;
    let p_te = gaussian_kde(test_features, train_features, bandwidth_te)?;
    Ok(p_te.iter().zip(&p_tr).map(|(te, tr)| (te / tr.max(KDE_DENSITY_FLOOR)).clamp(0.0, box_upper)).collect())
}

/// Naive density-ratio estimate. Bandwidths default to Silverman's rule per sample.
pub fn kde_ratio_estimate(
    train: &Dataset,
    test_features: &FeatureMatrix,
    bandwidth_tr: Option<f64>,
    bandwidth_te: Option<f64>,
    box_upper: f64,
) -> Result<EstimateReport> {
    let labels = train.labels()?;
    let h_tr = match bandwidth_tr {
        Some(h) => h,
        None => silverman_bandwidth(train.features())?,
    };
    let h_te = match bandwidth_te {
        Some(h) => h,
        None => silverman_bandwidth(test_features)?,
    };
    let beta = kde_ratio_weights(train.features(), test_features, h_tr, h_te, box_upper)?;
    let unit = weighted_mean(&beta, labels);
    Ok(EstimateReport::new(
        EstimatorKind::KdeRatio,
        unit,
        train.label_affine(),
        Some(WeightsSummary::of_values(&beta)),
    ))
}

/// Weighted mean with the true density ratio at the training points.
pub fn oracle_estimate(train: &Dataset, true_beta: &[f64], box_upper: f64) -> Result<EstimateReport> {
    let labels = train.labels()?;
    ensure(true_beta.len() == labels.len(), || {
        format!("{} true weights for {} training rows", true_beta.len(), labels.len())
    })?;
    if let Some(i) = true_beta.iter().position(|b| !(*b >= 0.0 && *b <= box_upper)) {
        return input(format!("true weight {} at row {i} outside [0, {box_upper}]", true_beta[i]));
    }
    let unit = weighted_mean(true_beta, labels);
    Ok(EstimateReport::new(
        EstimatorKind::Oracle,
        unit,
        train.label_affine(),
        Some(WeightsSummary::of_values(true_beta)),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedClassifier {
    /// Column index of the classifier in the loss matrix.
    pub classifier: usize,
    pub rank: usize,
    /// Estimated shifted risk in original loss units.
    pub estimate: f64,
    pub estimate_unit_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<RankedClassifier>,
    /// All estimates use one set of KMM weights.
    pub weights_shared: bool,
    pub weights_summary: WeightsSummary,
}

/// Ranks classifiers by KMM-weighted training loss.
///
/// `loss_columns[j][i]` is the loss of classifier `j` on training point `i`.
/// The weights depend only on covariates, so one solve serves every column.
/// Ties are broken by column index.
pub fn rank_classifiers(
    train_features: &FeatureMatrix,
    loss_columns: &[Vec<f64>],
    test_features: &FeatureMatrix,
    spec: &KernelSpec,
    box_upper: f64,
    opts: &SolverOptions,
    declared_range: Option<(f64, f64)>,
) -> Result<Ranking> {
    ensure(!loss_columns.is_empty(), || "at least one classifier loss column is required".into())?;
    let affine = match declared_range {
        Some((lo, hi)) => LabelAffine::from_range(lo, hi)?,
        None => LabelAffine::IDENTITY,
    };
    let mut unit_columns = Vec::with_capacity(loss_columns.len());
    for (j, col) in loss_columns.iter().enumerate() {
        ensure(col.len() == train_features.nrows(), || {
            format!("loss column {j} has {} rows, training features have {}", col.len(), train_features.nrows())
        })?;
        let unit = to_unit_labels(col, affine, declared_range)
            .map_err(|e| Error::Input(format!("loss column {j}: {e}")))?;
        unit_columns.push(unit);
    }
    let problem = assemble_qp(spec, train_features, test_features, box_upper)?;
    let weights = solve_kmm(&problem, opts)?;
    let mut entries: Vec<RankedClassifier> = unit_columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let unit = weighted_mean(&weights.beta, col);
            RankedClassifier { classifier: j, rank: 0, estimate: affine.to_original(unit), estimate_unit_scale: unit }
        })
        .collect();
    entries.sort_by(|a, b| {
        a.estimate_unit_scale.total_cmp(&b.estimate_unit_scale).then(a.classifier.cmp(&b.classifier))
    });
    for (r, e) in entries.iter_mut().enumerate() {
        e.rank = r + 1;
    }
    Ok(Ranking { entries, weights_shared: true, weights_summary: WeightsSummary::of_kmm(&weights) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(v: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_column(v).unwrap()
    }

    fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn labels_must_be_declared_when_outside_unit_interval() {
        let x = column(&[0.0, 1.0]);
        assert!(Dataset::labeled(x.clone(), vec![0.5, 3.0], None).is_err());
        let d = Dataset::labeled(x.clone(), vec![-1.0, 3.0], Some((-1.0, 5.0))).unwrap();
        assert_eq!(d.labels().unwrap(), &[0.0, 4.0 / 6.0]);
        assert!(Dataset::labeled(x.clone(), vec![-1.0, 6.0], Some((-1.0, 5.0))).is_err());
        assert!(Dataset::labeled(x, vec![0.5], None).is_err());
    }

    #[test]
    fn unlabeled_training_data_is_rejected() {
        let x = column(&[0.0, 1.0]);
        let d = Dataset::unlabeled(x.clone());
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(kmm_estimate(&d, &x, &k, 1.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn kmm_without_shift_returns_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = uniform(&mut rng, 50);
        let ys = uniform(&mut rng, 50);
        let x = column(&xs);
        let train = Dataset::labeled(x.clone(), ys.clone(), None).unwrap();
        let k = KernelSpec::gaussian(0.3).unwrap();
        let r = kmm_estimate(&train, &x, &k, 2.0, &SolverOptions::default()).unwrap();
        let mean = ys.iter().sum::<f64>() / 50.0;
        assert!((r.point - mean).abs() < 1e-5, "{} vs {mean}", r.point);
        let s = r.weights_summary.unwrap();
        assert!(s.converged.unwrap());
        assert!(s.lhat.unwrap() < 1e-7);
    }

    #[test]
    fn constant_labels_scale_with_mean_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = column(&uniform(&mut rng, 40));
        let t = column(&uniform(&mut rng, 30).iter().map(|v| 0.3 + 0.7 * v).collect::<Vec<_>>());
        let train = Dataset::labeled(x, vec![0.6; 40], None).unwrap();
        let k = KernelSpec::gaussian(0.4).unwrap();
        let (r, w) = kmm_estimate_with_weights(&train, &t, &k, 3.0, &SolverOptions::default()).unwrap();
        assert_relative_eq!(r.point_unit_scale, 0.6 * w.mean(), max_relative = 1e-12);
    }

    #[test]
    fn plugin_single_point_closed_form() {
        let x = column(&[0.2]);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let coef = ridge_coefficients(&k, &x, &[0.8], 1.0).unwrap();
        assert_relative_eq!(coef[0], 0.4, max_relative = 1e-15);
        let train = Dataset::labeled(x, vec![0.8], None).unwrap();
        let t = column(&[0.7]);
        let r = plugin_estimate(&train, &t, &k, Some(1.0)).unwrap();
        assert_relative_eq!(r.point, 0.8 * (-0.25f64).exp() / 2.0, max_relative = 1e-14);
        assert_eq!(r.estimator_kind, EstimatorKind::Plugin);
    }

    #[test]
    fn plugin_constant_labels_with_tiny_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = column(&uniform(&mut rng, 30));
        let t = column(&uniform(&mut rng, 25));
        let train = Dataset::labeled(x, vec![0.7; 30], None).unwrap();
        let k = KernelSpec::inverse_multiquadric(0.5, 1.0).unwrap();
        let r = plugin_estimate(&train, &t, &k, Some(1e-8)).unwrap();
        assert!((r.point - 0.7).abs() < 1e-4, "{}", r.point);
        assert!(plugin_estimate(&train, &t, &k, Some(0.0)).is_err());
    }

    #[test]
    fn kde_ratio_identical_samples_and_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs = uniform(&mut rng, 600);
        let ys: Vec<f64> = xs.iter().map(|x| if rng.gen_bool(*x) { 1.0 } else { 0.0 }).collect();
        let x = column(&xs);
        let train = Dataset::labeled(x.clone(), ys.clone(), None).unwrap();
        let h = silverman_bandwidth(&x).unwrap();
        let r = kde_ratio_estimate(&train, &x, Some(h), Some(h), 4.0).unwrap();
        let mean = ys.iter().sum::<f64>() / 600.0;
        assert!((r.point - mean).abs() < 0.1);
        let s = r.weights_summary.unwrap();
        assert!((s.min - 1.0).abs() < 1e-12 && (s.max - 1.0).abs() < 1e-12);

        // A sharply peaked test density over a diffuse training density is
        // clipped at B; far from the test sample the ratio underflows to 0.
        let far = column(&[100.0, 0.0]);
        let w = kde_ratio_weights(&far, &column(&[0.0, 0.01]), 1.0, 1e-3, 5.0).unwrap();
        assert!(w.iter().all(|v| v.is_finite() && (0.0..=5.0).contains(v)));
        assert_eq!(w, vec![0.0, 5.0]);
        assert!(kde_ratio_weights(&far, &far, 0.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn oracle_hand_sums() {
        let x = column(&[0.0, 0.1, 0.2, 0.3]);
        let train = Dataset::labeled(x, vec![1.0, 1.0, 0.0, 0.0], None).unwrap();
        let r = oracle_estimate(&train, &[2.0, 2.0, 0.0, 0.0], 2.0).unwrap();
        assert_eq!(r.point, 1.0);
        let r = oracle_estimate(&train, &[1.0; 4], 2.0).unwrap();
        assert_eq!(r.point, 0.5);
        assert!(oracle_estimate(&train, &[1.0; 3], 2.0).is_err());
        assert!(oracle_estimate(&train, &[3.0; 4], 2.0).is_err());
    }

    #[test]
    fn decomposition_sums_to_error() {
        let w = [0.5, 1.5, 2.0];
        let y = [1.0, 0.0, 1.0];
        let m = [0.7, 0.2, 0.9];
        let b = [0.8, 1.2, 1.0];
        let d = Decomposition::compute(&w, &y, &m, &b, 0.55).unwrap();
        assert_relative_eq!(d.total(), weighted_mean(&w, &y) - 0.55, epsilon = 1e-15);
    }

    #[test]
    fn ranking_ties_and_single_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = column(&uniform(&mut rng, 20));
        let t = column(&uniform(&mut rng, 20));
        let k = KernelSpec::gaussian(0.5).unwrap();
        let opts = SolverOptions::default();
        let col = uniform(&mut rng, 20);
        let one = rank_classifiers(&x, std::slice::from_ref(&col), &t, &k, 2.0, &opts, None).unwrap();
        assert_eq!(one.entries.len(), 1);
        assert_eq!(one.entries[0].rank, 1);

        let worse: Vec<f64> = col.iter().map(|v| (v + 0.5).min(1.0)).collect();
        let cols = vec![worse, col.clone(), col.clone()];
        let r = rank_classifiers(&x, &cols, &t, &k, 2.0, &opts, None).unwrap();
        let order: Vec<usize> = r.entries.iter().map(|e| e.classifier).collect();
        assert_eq!(order, vec![1, 2, 0]);
        assert_eq!(r.entries[0].estimate, r.entries[1].estimate);

        // Same weights as a per-column KMM estimate.
        let train = Dataset::labeled(x.clone(), col.clone(), None).unwrap();
        let single = kmm_estimate(&train, &t, &k, 2.0, &opts).unwrap();
        assert_eq!(single.point_unit_scale, r.entries[0].estimate_unit_scale);

        let bad = vec![col.iter().map(|v| v * 3.0).collect::<Vec<_>>()];
        assert!(rank_classifiers(&x, &bad, &t, &k, 2.0, &opts, None).is_err());
        assert!(rank_classifiers(&x, &bad, &t, &k, 2.0, &opts, Some((0.0, 3.0))).is_ok());
        assert!(rank_classifiers(&x, &[vec![0.5; 3]], &t, &k, 2.0, &opts, None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn affine_equivariance(scale in 0.1f64..50.0, offset in -20.0f64..20.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs = uniform(&mut rng, 15);
            let ys = uniform(&mut rng, 15);
            let t = column(&uniform(&mut rng, 10));
            let k = KernelSpec::gaussian(0.5).unwrap();
            let opts = SolverOptions::default();
            let unit = Dataset::labeled(column(&xs), ys.clone(), None).unwrap();
            let mapped: Vec<f64> = ys.iter().map(|y| y * scale + offset).collect();
            let orig = Dataset::labeled(column(&xs), mapped, Some((offset, offset + scale))).unwrap();
            let a = kmm_estimate(&unit, &t, &k, 2.0, &opts).unwrap();
            let b = kmm_estimate(&orig, &t, &k, 2.0, &opts).unwrap();
            prop_assert!((b.point - (a.point * scale + offset)).abs() <= 1e-12 * (1.0 + b.point.abs()));
            prop_assert!((b.label_affine.to_unit(b.point) - a.point).abs() <= 1e-12 * (1.0 + scale));
        }

        #[test]
        fn weighted_means_stay_in_box(seed in 0u64..1000, b in 1.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs = uniform(&mut rng, 25);
            let ys = uniform(&mut rng, 25);
            let t = column(&uniform(&mut rng, 25).iter().map(|v| v * v).collect::<Vec<_>>());
            let train = Dataset::labeled(column(&xs), ys, None).unwrap();
            let k = KernelSpec::gaussian(0.3).unwrap();
            for r in [
                kmm_estimate(&train, &t, &k, b, &SolverOptions::default()).unwrap(),
                plugin_estimate(&train, &t, &k, None).unwrap(),
                kde_ratio_estimate(&train, &t, None, None, b).unwrap(),
            ] {
                prop_assert!(r.point_unit_scale >= 0.0 && r.point_unit_scale <= b, "{:?}", r);
            }
        }
    }
}
