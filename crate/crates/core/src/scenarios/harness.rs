use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::{median, wilson_interval, RateFit, WILSON_Z95};
use super::{ShiftScenario, SyntheticSample};
use crate::bounds::{BoundInputs, BoundValue, Regime};
use crate::error::{Error, Result};
use crate::estimators::{
    kde_ratio_estimate, kmm_estimate_with_weights, oracle_estimate, plugin_estimate, Decomposition,
    EstimateReport, EstimatorKind, WeightsSummary,
};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::kmm::SolverOptions;

/// Estimator choice plus its tuning. Unset fields fall back to the scenario:
/// its kernel, and `B = B_true`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub box_upper: Option<f64>,
    /// Plug-in ridge parameter; `n_tr^(-2/3)` when unset.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind, kernel: None, box_upper: None, lambda: None, solver: SolverOptions::default() }
    }

    pub fn kmm() -> Self {
        Self::new(EstimatorKind::Kmm)
    }

    pub fn plugin() -> Self {
        Self::new(EstimatorKind::Plugin)
    }

    pub fn kde_ratio() -> Self {
        Self::new(EstimatorKind::KdeRatio)
    }

    pub fn oracle() -> Self {
        Self::new(EstimatorKind::Oracle)
    }

    pub fn with_box_upper(mut self, b: f64) -> Self {
        self.box_upper = Some(b);
        self
    }

    pub fn with_kernel(mut self, spec: KernelSpec) -> Self {
        self.kernel = Some(spec);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Self {
        self.solver = solver;
        self
    }

    /// The report, plus the weights when they are worth decomposing.
    fn run(&self, scenario: &ShiftScenario, sample: &SyntheticSample) -> Result<(EstimateReport, Option<Vec<f64>>)> {
        let kernel = self.kernel.as_ref().unwrap_or(scenario.kernel());
        let b = self.box_upper.unwrap_or(scenario.b_true());
        match self.kind {
            EstimatorKind::Kmm => kmm_estimate_with_weights(&sample.train, &sample.test, kernel, b, &self.solver)
                .map(|(r, w)| (r, Some(w.beta))),
            EstimatorKind::Plugin => Ok((plugin_estimate(&sample.train, &sample.test, kernel, self.lambda)?, None)),
            EstimatorKind::KdeRatio => Ok((kde_ratio_estimate(&sample.train, &sample.test, None, None, b)?, None)),
            // The numerically located sup can sit a rounding error below a sampled ratio.
            EstimatorKind::Oracle => {
                let b = self.box_upper.unwrap_or(scenario.b_true() * (1.0 + 1e-9));
                Ok((oracle_estimate(&sample.train, &sample.beta_true, b)?, Some(sample.beta_true.clone())))
            }
        }
    }
}

/// Outcome of one seeded trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario: String,
    pub estimator: EstimatorKind,
    pub n_tr: usize,
    pub n_te: usize,
    pub seed: u64,
    /// Estimate on the unit label scale; `None` when the estimator failed.
    pub estimate: Option<f64>,
    /// `|estimate - E[Y_te]|`; `None` when the estimator failed.
    pub abs_error: Option<f64>,
    pub weights: Option<WeightsSummary>,
    pub diagnostics: Option<Decomposition>,
    /// Wall time, recorded only by [`run_trial_timed`].
    pub runtime_ms: Option<f64>,
    pub failure: Option<String>,
}

impl TrialRecord {
    /// Embedding discrepancy of the KMM weights.
    pub fn lhat(&self) -> Option<f64> {
        self.weights.as_ref().and_then(|w| w.lhat)
    }
}

/// Seed of trial `index` under `master`: the first output of the ChaCha
/// stream numbered `index`, so seeds do not depend on scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

fn check_sizes(n_tr: usize, n_te: usize) -> Result<()> {
    if n_tr == 0 || n_te == 0 {
        return Err(Error::Input(format!("trial sizes must be positive, got n_tr = {n_tr}, n_te = {n_te}")));
    }
    Ok(())
}

fn trial_on_sample(
    scenario: &ShiftScenario,
    cfg: &EstimatorConfig,
    sample: &SyntheticSample,
    n_te: usize,
    seed: u64,
) -> TrialRecord {
    let n_tr = sample.train.len();
    let mut record = TrialRecord {
        scenario: scenario.id().to_string(),
        estimator: cfg.kind,
        n_tr,
        n_te,
        seed,
        estimate: None,
        abs_error: None,
        weights: None,
        diagnostics: None,
        runtime_ms: None,
        failure: None,
    };
    let (report, weights) = match cfg.run(scenario, sample) {
        Ok(r) => r,
        Err(e) => {
            record.failure = Some(e.to_string());
            return record;
        }
    };
    let estimate = report.point_unit_scale;
    record.estimate = Some(estimate);
    record.abs_error = Some((estimate - scenario.ey_te()).abs());
    record.weights = report.weights_summary;
    if let (Some(w), Ok(labels)) = (weights, sample.train.labels()) {
        record.diagnostics =
            Decomposition::compute(&w, labels, &sample.m_train, &sample.beta_true, scenario.ey_te()).ok();
    }
    record
}

/// Draws a sample from `seed` and runs one estimator on it.
///
/// The same `(scenario, n_tr, n_te, seed)` always yields the same sample, so
/// different estimators run with one seed see identical data.
pub fn run_trial(
    scenario: &ShiftScenario,
    cfg: &EstimatorConfig,
    n_tr: usize,
    n_te: usize,
    seed: u64,
) -> Result<TrialRecord> {
    check_sizes(n_tr, n_te)?;
    let sample = scenario.sample_seeded(seed, n_tr, n_te);
    Ok(trial_on_sample(scenario, cfg, &sample, n_te, seed))
}

/// [`run_trial`] with `runtime_ms` filled in.
pub fn run_trial_timed(
    scenario: &ShiftScenario,
    cfg: &EstimatorConfig,
    n_tr: usize,
    n_te: usize,
    seed: u64,
) -> Result<TrialRecord> {
    let start = Instant::now();
    let mut record = run_trial(scenario, cfg, n_tr, n_te, seed)?;
    record.runtime_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    Ok(record)
}

/// Runs `f(0..count)` and returns the results in index order. `threads`
/// of `Some(1)` runs inline; otherwise trials fan out over a worker pool.
fn map_indexed<T: Send>(count: usize, threads: Option<usize>, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if threads != Some(1) {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(t) = threads {
                builder = builder.num_threads(t);
            }
            let pool = builder.build().map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
            return Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()));
        }
    }
    let _ = threads;
    Ok((0..count).map(f).collect())
}

fn timed<T>(timing: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    if !timing {
        return (f(), None);
    }
    let start = Instant::now();
    let out = f();
    (out, Some(start.elapsed().as_secs_f64() * 1e3))
}

/// Trial table and log-log fit of a rate sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub records: Vec<TrialRecord>,
    pub fit: RateFit,
    pub n_te: usize,
}

/// Options shared by the multi-trial operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessOptions {
    pub seed: u64,
    /// `Some(1)` is single-threaded and byte-reproducible; `None` uses all cores.
    pub threads: Option<usize>,
    pub record_timing: bool,
}

impl HarnessOptions {
    pub fn seeded(seed: u64) -> Self {
        Self { seed, threads: Some(1), record_timing: false }
    }
}

fn check_grid(n_grid: &[usize], reps: usize, min_reps: usize) -> Result<()> {
    if n_grid.is_empty() || n_grid.contains(&0) || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input(format!("n-grid must be strictly ascending positive sizes, got {n_grid:?}")));
    }
    if reps < min_reps {
        return Err(Error::Input(format!("at least {min_reps} repetitions are required, got {reps}")));
    }
    Ok(())
}

fn grid_medians(records: &[TrialRecord], n_grid: &[usize], reps: usize, stride: usize, offset: usize) -> Result<Vec<f64>> {
    n_grid
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            let errors: Vec<f64> = (0..reps)
                .filter_map(|r| records[(g * reps + r) * stride + offset].abs_error)
                .collect();
            median(&errors).ok_or_else(|| Error::Numerical(format!("every trial failed at n = {n}")))
        })
        .collect()
}

/// Runs `reps` trials at every size in `n_grid` (test size fixed, default
/// `10 max(n_grid)`) and fits `ln median|error|` against `ln n`.
///
/// Trial `g * reps + r` uses seed `derive_seed(opts.seed, g * reps + r)`.
pub fn sweep_rates(
    scenario: &ShiftScenario,
    cfg: &EstimatorConfig,
    n_grid: &[usize],
    reps: usize,
    n_te: Option<usize>,
    opts: &HarnessOptions,
) -> Result<Sweep> {
    check_grid(n_grid, reps, 30)?;
    let n_te = n_te.unwrap_or(10 * n_grid[n_grid.len() - 1]);
    check_sizes(1, n_te)?;
    let records = map_indexed(n_grid.len() * reps, opts.threads, |i| {
        let seed = derive_seed(opts.seed, i as u64);
        let (record, ms) = timed(opts.record_timing, || run_trial(scenario, cfg, n_grid[i / reps], n_te, seed));
        let mut record = record.expect("sizes validated above");
        record.runtime_ms = ms;
        record
    })?;
    let medians = grid_medians(&records, n_grid, reps, 1, 0)?;
    let fit = RateFit::fit(n_grid, &medians)?;
    Ok(Sweep { records, fit, n_te })
}

/// Inputs of a coverage experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub n_tr: usize,
    pub n_te: usize,
    pub delta: f64,
    pub reps: usize,
    /// `B` handed to both the solver and the bound; defaults to `B_true`.
    #[serde(default)]
    pub box_upper: Option<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub scenario: String,
    pub bound_inputs: BoundInputs,
    pub bound: BoundValue,
    pub reps: usize,
    pub covered: usize,
    pub failures: usize,
    pub fraction: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub median_abs_error: Option<f64>,
    pub max_abs_error: Option<f64>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

/// Fraction of KMM trials whose error lies inside the bound for `regime`.
///
/// Only scenarios whose regression function is in the RKHS have known bound
/// constants, and `regime` must carry that exact norm. `C` is the kernel's
/// sup bound. Failed trials count as not covered.
pub fn measure_coverage(
    scenario: &ShiftScenario,
    regime: &Regime,
    cfg: &CoverageConfig,
    opts: &HarnessOptions,
) -> Result<CoverageResult> {
    let expected = scenario.bound_regime().ok_or_else(|| {
        Error::Usage(format!("scenario '{}' has no computable bound constants; coverage is undefined", scenario.id()))
    })?;
    match (regime, &expected) {
        (Regime::InRkhs { norm_m: given }, Regime::InRkhs { norm_m: exact })
            if (given - exact).abs() <= 1e-12 * exact.abs() => {}
        _ => {
            return Err(Error::Usage(format!(
                "scenario '{}' matches {expected:?}, not the requested {regime:?}",
                scenario.id()
            )))
        }
    }
    check_sizes(cfg.n_tr, cfg.n_te)?;
    if cfg.reps == 0 {
        return Err(Error::Input("coverage needs at least one repetition".into()));
    }
    let b = cfg.box_upper.unwrap_or(scenario.b_true());
    let bound_inputs = BoundInputs {
        b,
        c: scenario.kernel().sup_bound()?,
        delta: cfg.delta,
        n_tr: cfg.n_tr as u64,
        n_te: cfg.n_te as u64,
        regime: regime.clone(),
    };
    let bound = bound_inputs.evaluate()?;
    let est = EstimatorConfig::kmm().with_box_upper(b).with_solver(cfg.solver.clone());
    let records = map_indexed(cfg.reps, opts.threads, |i| {
        let seed = derive_seed(opts.seed, i as u64);
        let (record, ms) = timed(opts.record_timing, || run_trial(scenario, &est, cfg.n_tr, cfg.n_te, seed));
        let mut record = record.expect("sizes validated above");
        record.runtime_ms = ms;
        record
    })?;
    let errors: Vec<f64> = records.iter().filter_map(|r| r.abs_error).collect();
    let covered = errors.iter().filter(|e| **e <= bound.total).count();
    let (wilson_low, wilson_high) = wilson_interval(covered, cfg.reps, WILSON_Z95);
    Ok(CoverageResult {
        scenario: scenario.id().to_string(),
        bound_inputs,
        reps: cfg.reps,
        covered,
        failures: cfg.reps - errors.len(),
        fraction: covered as f64 / cfg.reps as f64,
        wilson_low,
        wilson_high,
        median_abs_error: median(&errors),
        max_abs_error: errors.iter().copied().reduce(f64::max),
        bound,
        records,
    })
}

/// Per-estimator summary at one training size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub estimator: EstimatorKind,
    pub n_tr: usize,
    pub n_te: usize,
    pub reps: usize,
    pub failures: usize,
    pub median_abs_error: f64,
    pub mean_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub records: Vec<TrialRecord>,
}

impl Comparison {
    pub fn row(&self, kind: EstimatorKind, n_tr: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.estimator == kind && r.n_tr == n_tr)
    }
}

/// Runs every estimator in `configs` on the same seeded samples, for each size
/// in `n_grid`, and summarises the absolute errors.
///
/// Records are ordered by size, then repetition, then estimator.
pub fn compare_estimators(
    scenario: &ShiftScenario,
    configs: &[EstimatorConfig],
    n_grid: &[usize],
    reps: usize,
    n_te: Option<usize>,
    opts: &HarnessOptions,
) -> Result<Comparison> {
    check_grid(n_grid, reps, 1)?;
    if configs.is_empty() {
        return Err(Error::Input("no estimators to compare".into()));
    }
    let n_te = n_te.unwrap_or(10 * n_grid[n_grid.len() - 1]);
    check_sizes(1, n_te)?;
    let per_size = map_indexed(n_grid.len() * reps, opts.threads, |i| {
        let n_tr = n_grid[i / reps];
        let seed = derive_seed(opts.seed, i as u64);
        let sample = scenario.sample_seeded(seed, n_tr, n_te);
        configs
            .iter()
            .map(|cfg| {
                let (mut record, ms) =
                    timed(opts.record_timing, || trial_on_sample(scenario, cfg, &sample, n_te, seed));
                record.runtime_ms = ms;
                record
            })
            .collect::<Vec<_>>()
    })?;
    let records: Vec<TrialRecord> = per_size.into_iter().flatten().collect();
    let k = configs.len();
    let mut rows = Vec::with_capacity(n_grid.len() * k);
    for (g, &n_tr) in n_grid.iter().enumerate() {
        for (e, cfg) in configs.iter().enumerate() {
            let errors: Vec<f64> = (0..reps).filter_map(|r| records[(g * reps + r) * k + e].abs_error).collect();
            let failures = reps - errors.len();
            let (median_abs_error, mean_abs_error) = match median(&errors) {
                Some(m) => (m, errors.iter().sum::<f64>() / errors.len() as f64),
                None => (f64::NAN, f64::NAN),
            };
            rows.push(ComparisonRow { estimator: cfg.kind, n_tr, n_te, reps, failures, median_abs_error, mean_abs_error });
        }
    }
    Ok(Comparison { rows, records })
}

/// `(1/n) sum_i (beta_hat_i - beta(x_i))^2` for KMM weights fitted with
/// `n_tr = n_te = n` under the scenario's Gaussian kernel and `B = B_true`.
pub fn population_consistency_check(
    scenario: &ShiftScenario,
    n: usize,
    seed: u64,
    solver: &SolverOptions,
) -> Result<f64> {
    if !matches!(scenario.kernel().family(), KernelFamily::Gaussian { .. }) {
        return Err(Error::Usage("population consistency needs a characteristic (Gaussian) kernel".into()));
    }
    check_sizes(n, n)?;
    let sample = scenario.sample_seeded(seed, n, n);
    let (_, weights) =
        kmm_estimate_with_weights(&sample.train, &sample.test, scenario.kernel(), scenario.b_true(), solver)?;
    Ok(weights.beta.iter().zip(&sample.beta_true).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64)
}
