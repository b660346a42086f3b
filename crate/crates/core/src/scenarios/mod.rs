//! Synthetic covariate-shift problems with known ground truth, and the
//! Monte-Carlo harness built on them.
//!
//! Every builtin lives on the unit box `[0, 1]^d`. Marginals are mixtures of
//! products of truncated normals, normalised on the box by quadrature, so the
//! true weight function `beta = p_te / p_tr` is an exact density ratio.
//! Labels are `Bernoulli(m(x))`.

mod harness;
mod quadrature;
mod stats;

pub use harness::{
    compare_estimators, derive_seed, measure_coverage, population_consistency_check, run_trial,
    run_trial_timed, sweep_rates, Comparison, ComparisonRow, CoverageConfig, CoverageResult, EstimatorConfig,
    HarnessOptions, Sweep, TrialRecord,
};
pub use stats::{median, wilson_interval, RateFit, WILSON_Z95};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::Regime;
use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::features::FeatureMatrix;
use crate::kernels::{KernelFamily, KernelSpec};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_94;
const QUAD_TOL: f64 = 1e-13;

/// Normal(mean, sd) restricted to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    /// Mass of the untruncated normal on `[0, 1]`.
    mass: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(Error::Input(format!("truncated normal needs finite mean and sd > 0, got ({mean}, {sd})")));
        }
        let mass = quadrature::integrate(|x| std_normal_pdf(x, mean, sd), 0.0, 1.0, QUAD_TOL);
        if mass < 1e-6 {
            return Err(Error::Domain(format!("Normal({mean}, {sd}) puts almost no mass on [0, 1]")));
        }
        Ok(Self { mean, sd, mass })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        std_normal_pdf(x, self.mean, self.sd) / self.mass
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let x = self.mean + self.sd * z;
            if (0.0..=1.0).contains(&x) {
                return x;
            }
        }
    }
}

fn std_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    INV_SQRT_2PI / sd * (-0.5 * z * z).exp()
}

/// A product of one truncated normal per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductComponent {
    pub weight: f64,
    pub factors: Vec<TruncatedNormal>,
}

/// Finite mixture of product components on `[0, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    components: Vec<ProductComponent>,
}

impl Marginal {
    pub fn truncated_normal(mean: f64, sd: f64) -> Result<Self> {
        Self::mixture(vec![(1.0, vec![(mean, sd)])])
    }

    /// `parts[c] = (weight, [(mean, sd) per coordinate])`; weights are
    /// normalised to sum to one.
    pub fn mixture(parts: Vec<(f64, Vec<(f64, f64)>)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Input("a marginal needs at least one component".into()));
        }
        let dim = parts[0].1.len();
        let total: f64 = parts.iter().map(|p| p.0).sum();
        let mut components = Vec::with_capacity(parts.len());
        for (weight, coords) in parts {
            if coords.len() != dim || dim == 0 {
                return Err(Error::Input("all mixture components need the same positive dimension".into()));
            }
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::Input(format!("mixture weights must be positive, got {weight}")));
            }
            let factors = coords
                .into_iter()
                .map(|(m, s)| TruncatedNormal::new(m, s))
                .collect::<Result<Vec<_>>>()?;
            components.push(ProductComponent { weight: weight / total, factors });
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].factors.len()
    }

    pub fn components(&self) -> &[ProductComponent] {
        &self.components
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.factors.iter().zip(x).map(|(f, xi)| f.pdf(*xi)).product::<f64>())
            .sum()
    }

    /// Appends one draw to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        let component = if self.components.len() == 1 {
            &self.components[0]
        } else {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = self.components.last().unwrap();
            for c in &self.components {
                acc += c.weight;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            chosen
        };
        for f in &component.factors {
            out.push(f.sample(rng));
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> FeatureMatrix {
        let mut data = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            self.sample_into(rng, &mut data);
        }
        FeatureMatrix::new(n, self.dim(), data).expect("sampled points lie in the unit box")
    }
}

/// The regression function `m(x) = E[Y | x]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regression {
    /// `sum_j a_j exp(-|x - z_j|^2 / sigma^2)`, an element of the Gaussian
    /// RKHS with the same `sigma`.
    GaussianBumps { centers: FeatureMatrix, coef: Vec<f64>, sigma: f64 },
    /// `2 min(x, 1 - x)` on `[0, 1]`: Lipschitz with a kink at 1/2.
    Triangle,
}

impl Regression {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::GaussianBumps { centers, coef, sigma } => centers
                .rows()
                .zip(coef)
                .map(|(z, a)| a * (-crate::kernels::squared_distance(x, z) / (sigma * sigma)).exp())
                .sum(),
            Self::Triangle => 2.0 * x[0].min(1.0 - x[0]),
        }
    }

    /// RKHS norm under the Gaussian kernel of width `sigma`, when `m` lies in it.
    pub fn rkhs_norm(&self) -> Option<f64> {
        match self {
            Self::GaussianBumps { centers, coef, sigma } => {
                let spec = KernelSpec::gaussian(*sigma).ok()?;
                let mut q = 0.0;
                for (i, zi) in centers.rows().enumerate() {
                    for (j, zj) in centers.rows().enumerate() {
                        q += coef[i] * coef[j] * spec.value(zi, zj);
                    }
                }
                Some(q.max(0.0).sqrt())
            }
            Self::Triangle => None,
        }
    }

    fn kinks(&self) -> &'static [f64] {
        match self {
            Self::GaussianBumps { .. } => &[],
            Self::Triangle => &[0.5],
        }
    }
}

/// Which bound hypothesis a scenario satisfies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum RegimeTag {
    /// `m` lies in the kernel's RKHS with the given norm.
    InRkhs { norm_m: f64 },
    /// `m` is outside the RKHS and its approximation constants are unknown.
    Rough,
}

/// One training/test draw together with the ground truth at the training points.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub train: Dataset,
    pub test: FeatureMatrix,
    pub beta_true: Vec<f64>,
    pub m_train: Vec<f64>,
}

/// A synthetic covariate-shift problem. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenario {
    id: String,
    description: String,
    train: Marginal,
    test: Marginal,
    regression: Regression,
    kernel: KernelSpec,
    b_true: f64,
    ey_te: f64,
    regime: RegimeTag,
}

impl ShiftScenario {
    /// Builds a scenario and computes `B_true` and `E[Y_te]` numerically.
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        train: Marginal,
        test: Marginal,
        regression: Regression,
        kernel: KernelSpec,
    ) -> Result<Self> {
        let dim = train.dim();
        if test.dim() != dim || !(1..=2).contains(&dim) {
            return Err(Error::Input("scenarios support matching marginals in one or two dimensions".into()));
        }
        if matches!(regression, Regression::Triangle) && dim != 1 {
            return Err(Error::Input("the triangle regression function is one-dimensional".into()));
        }
        let regime = match (&regression, kernel.family()) {
            (Regression::GaussianBumps { sigma, .. }, KernelFamily::Gaussian { sigma: ks }) if sigma == ks => {
                RegimeTag::InRkhs { norm_m: regression.rkhs_norm().unwrap_or(f64::NAN) }
            }
            _ => RegimeTag::Rough,
        };
        let ratio = |x: &[f64]| ratio_of(&train, &test, x);
        let b_true = if dim == 1 { maximize_1d(|x| ratio(&[x])) } else { maximize_2d(|x, y| ratio(&[x, y])) };
        let ey_te = if dim == 1 {
            quadrature::integrate_with_breaks(
                |x| regression.value(&[x]) * test.pdf(&[x]),
                0.0,
                1.0,
                regression.kinks(),
                1e-12,
            )
        } else {
            quadrature::integrate(
                |x| quadrature::integrate(|y| regression.value(&[x, y]) * test.pdf(&[x, y]), 0.0, 1.0, 1e-12),
                0.0,
                1.0,
                1e-11,
            )
        };
        Ok(Self {
            id: id.into(),
            description: description.into(),
            train,
            test,
            regression,
            kernel,
            b_true,
            ey_te,
            regime,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    pub fn train_marginal(&self) -> &Marginal {
        &self.train
    }

    pub fn test_marginal(&self) -> &Marginal {
        &self.test
    }

    pub fn regression(&self) -> &Regression {
        &self.regression
    }

    /// The kernel the scenario is designed for.
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// `sup_x beta(x)`.
    pub fn b_true(&self) -> f64 {
        self.b_true
    }

    /// `E[Y_te] = int m dP_te`.
    pub fn ey_te(&self) -> f64 {
        self.ey_te
    }

    pub fn regime(&self) -> &RegimeTag {
        &self.regime
    }

    /// The bound regime matching this scenario, if its constants are known.
    pub fn bound_regime(&self) -> Option<Regime> {
        match self.regime {
            RegimeTag::InRkhs { norm_m } => Some(Regime::InRkhs { norm_m }),
            RegimeTag::Rough => None,
        }
    }

    /// `beta(x) = p_te(x) / p_tr(x)`.
    pub fn beta(&self, x: &[f64]) -> f64 {
        ratio_of(&self.train, &self.test, x)
    }

    pub fn m(&self, x: &[f64]) -> f64 {
        self.regression.value(x)
    }

    /// [`ShiftScenario::sample`] driven by `ChaCha8Rng::seed_from_u64(seed)`,
    /// the generator every harness trial uses.
    pub fn sample_seeded(&self, seed: u64, n_tr: usize, n_te: usize) -> SyntheticSample {
        use rand::SeedableRng;
        self.sample(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), n_tr, n_te)
    }

    /// Draws `n_tr` labelled training points, then `n_te` test points.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n_tr: usize, n_te: usize) -> SyntheticSample {
        let dim = self.dim();
        let mut xs = Vec::with_capacity(n_tr * dim);
        let mut labels = Vec::with_capacity(n_tr);
        let mut beta_true = Vec::with_capacity(n_tr);
        let mut m_train = Vec::with_capacity(n_tr);
        for _ in 0..n_tr {
            let start = xs.len();
            self.train.sample_into(rng, &mut xs);
            let x = &xs[start..];
            let m = self.m(x);
            let u: f64 = rng.gen();
            labels.push(if u < m { 1.0 } else { 0.0 });
            beta_true.push(self.beta(x));
            m_train.push(m);
        }
        let features = FeatureMatrix::new(n_tr, dim, xs).expect("sampled points lie in the unit box");
        let train = Dataset::labeled(features, labels, None).expect("Bernoulli labels lie in [0, 1]");
        let test = self.test.sample(rng, n_te);
        SyntheticSample { train, test, beta_true, m_train }
    }
}

fn ratio_of(train: &Marginal, test: &Marginal, x: &[f64]) -> f64 {
    if train == test {
        return 1.0;
    }
    test.pdf(x) / train.pdf(x)
}

/// Maximum of `f` on `[0, 1]`: grid search, then golden-section refinement
/// around the best grid point.
pub(crate) fn maximize_1d(f: impl Fn(f64) -> f64) -> f64 {
    const GRID: usize = 20_000;
    let h = 1.0 / GRID as f64;
    let (mut best_i, mut best) = (0, f(0.0));
    for i in 1..=GRID {
        let v = f(i as f64 * h);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut a = (best_i as f64 - 1.0).max(0.0) * h;
    let mut b = (best_i as f64 + 1.0).min(GRID as f64) * h;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-14 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        best = best.max(fc).max(fd);
    }
    best.max(f(a)).max(f(b))
}

/// Maximum of `f` on `[0, 1]^2`: grid search, then a shrinking compass search.
pub(crate) fn maximize_2d(f: impl Fn(f64, f64) -> f64) -> f64 {
    const GRID: usize = 200;
    let h = 1.0 / GRID as f64;
    let (mut px, mut py, mut best) = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..=GRID {
        for j in 0..=GRID {
            let (x, y) = (i as f64 * h, j as f64 * h);
            let v = f(x, y);
            if v > best {
                (px, py, best) = (x, y, v);
            }
        }
    }
    let mut step = h;
    while step > 1e-13 {
        let mut moved = false;
        for (dx, dy) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let (x, y) = ((px + dx).clamp(0.0, 1.0), (py + dy).clamp(0.0, 1.0));
            let v = f(x, y);
            if v > best {
                (px, py, best) = (x, y, v);
                moved = true;
            }
        }
        if !moved {
            step /= 2.0;
        }
    }
    best
}

/// Scales nonnegative bump coefficients so that `max m = peak`.
fn bumps_with_peak(centers: FeatureMatrix, raw: &[f64], sigma: f64, peak: f64) -> Regression {
    let unscaled = Regression::GaussianBumps { centers: centers.clone(), coef: raw.to_vec(), sigma };
    let top = if centers.dim() == 1 {
        maximize_1d(|x| unscaled.value(&[x]))
    } else {
        maximize_2d(|x, y| unscaled.value(&[x, y]))
    };
    let coef = raw.iter().map(|a| a * peak / top).collect();
    Regression::GaussianBumps { centers, coef, sigma }
}

const S1_SIGMA: f64 = 0.3;
const S3_SIGMA: f64 = 0.5;

fn s1_regression() -> Regression {
    let centers = FeatureMatrix::from_column(&[0.2, 0.5, 0.8]).expect("finite centres");
    bumps_with_peak(centers, &[0.5, 1.0, 0.7], S1_SIGMA, 1.0)
}

fn shifted_pair() -> Result<(Marginal, Marginal)> {
    Ok((Marginal::truncated_normal(0.3, 0.3)?, Marginal::truncated_normal(0.6, 0.2)?))
}

/// No shift: both samples from the training marginal of `s1`, so `beta = 1`.
pub fn scenario_s0() -> ShiftScenario {
    let tr = Marginal::truncated_normal(0.3, 0.3).expect("valid marginal");
    ShiftScenario::new(
        "s0",
        "no shift; 1-d, TN(0.3, 0.3) for both samples, smooth m in the Gaussian RKHS",
        tr.clone(),
        tr,
        s1_regression(),
        KernelSpec::gaussian(S1_SIGMA).expect("valid kernel"),
    )
    .expect("builtin scenario")
}

/// Smooth shift with `m` in the Gaussian RKHS (sigma = 0.3).
pub fn scenario_s1() -> ShiftScenario {
    let (tr, te) = shifted_pair().expect("valid marginals");
    ShiftScenario::new(
        "s1",
        "1-d shift TN(0.3, 0.3) -> TN(0.6, 0.2) on [0, 1]; m is a sum of three Gaussian bumps in the RKHS",
        tr,
        te,
        s1_regression(),
        KernelSpec::gaussian(S1_SIGMA).expect("valid kernel"),
    )
    .expect("builtin scenario")
}

/// Same shift as `s1` with a Lipschitz, non-smooth `m`.
pub fn scenario_s2() -> ShiftScenario {
    let (tr, te) = shifted_pair().expect("valid marginals");
    ShiftScenario::new(
        "s2",
        "1-d shift TN(0.3, 0.3) -> TN(0.6, 0.2) on [0, 1]; m(x) = 2 min(x, 1 - x) lies outside the RKHS",
        tr,
        te,
        Regression::Triangle,
        KernelSpec::gaussian(S1_SIGMA).expect("valid kernel"),
    )
    .expect("builtin scenario")
}

/// Two-dimensional shift towards a two-component mixture.
pub fn scenario_s3() -> ShiftScenario {
    let tr = Marginal::mixture(vec![(1.0, vec![(0.5, 0.3), (0.5, 0.3)])]).expect("valid marginal");
    let te = Marginal::mixture(vec![
        (0.5, vec![(0.35, 0.2), (0.65, 0.2)]),
        (0.5, vec![(0.65, 0.2), (0.35, 0.2)]),
    ])
    .expect("valid marginal");
    let centers = FeatureMatrix::from_rows(&[[0.3, 0.7], [0.7, 0.3], [0.5, 0.5]]).expect("finite centres");
    ShiftScenario::new(
        "s3",
        "2-d shift from a product TN(0.5, 0.3)^2 to an anti-diagonal two-component mixture; smooth m",
        tr,
        te,
        bumps_with_peak(centers, &[0.6, 0.4, 0.5], S3_SIGMA, 1.0),
        KernelSpec::gaussian(S3_SIGMA).expect("valid kernel"),
    )
    .expect("builtin scenario")
}

pub const BUILTIN_IDS: [&str; 4] = ["s0", "s1", "s2", "s3"];

pub fn builtin_scenarios() -> Vec<ShiftScenario> {
    vec![scenario_s0(), scenario_s1(), scenario_s2(), scenario_s3()]
}

/// Looks up a builtin by id (case-insensitive).
pub fn scenario_by_id(id: &str) -> Result<ShiftScenario> {
    match id.to_ascii_lowercase().as_str() {
        "s0" => Ok(scenario_s0()),
        "s1" => Ok(scenario_s1()),
        "s2" => Ok(scenario_s2()),
        "s3" => Ok(scenario_s3()),
        _ => Err(Error::Input(format!("unknown scenario '{id}'; available: {}", BUILTIN_IDS.join(", ")))),
    }
}
