use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::info;
use serde::Serialize;
use shiftweigh::bounds::{BoundInputs, BoundValue, Regime};
use shiftweigh::estimators::{
    kde_ratio_estimate, kmm_estimate_with_weights, oracle_estimate, plugin_estimate, rank_classifiers, Dataset,
    EstimateReport, EstimatorKind, WeightsSummary,
};
use shiftweigh::kernels::KernelSpec;
use shiftweigh::kmm::{assemble_qp, solve_kmm, SolverOptions};
use shiftweigh::scenarios::{
    builtin_scenarios, compare_estimators, scenario_by_id, wilson_interval, Comparison, EstimatorConfig,
    HarnessOptions, RateFit, RegimeTag, ShiftScenario, WILSON_Z95,
};

use crate::args::{BoundArgs, EstimateArgs, ExperimentArgs, ExportArgs, RankArgs, RegimeArg, SolverArgs, WeightsArgs};
use crate::failure::CliError;
use crate::ingest::{read_loss_table, read_table, LOSS_PREFIX};

type CliResult<T> = Result<T, CliError>;

fn load_json<T: serde::de::DeserializeOwned>(arg: &str, what: &str) -> CliResult<T> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| CliError::input(format!("cannot read {what} file '{arg}': {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("invalid {what} JSON: {e}")))
}

fn load_kernel(arg: &str) -> CliResult<KernelSpec> {
    load_json(arg, "kernel")
}

fn solver_options(args: &SolverArgs) -> SolverOptions {
    SolverOptions { tol: args.tol, max_iter: args.max_iter, accelerate: true }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn write_text(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| CliError::io(e.to_string()))
        }
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    write_text(&to_json(value)?, out)
}

/// Renders rows as CSV with shortest round-trip float formatting.
fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::internal(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::internal(e.to_string()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[derive(Serialize)]
struct WeightsReport {
    n_tr: usize,
    n_te: usize,
    box_upper: f64,
    lhat: f64,
    iterations: usize,
    converged: bool,
    residual: f64,
    mean_beta: f64,
    min_beta: f64,
    max_beta: f64,
    normalization_gap: f64,
    /// Present when the training CSV carries a `beta_true` column.
    pearson_with_beta_true: Option<f64>,
}

pub fn weights(args: &WeightsArgs) -> CliResult<()> {
    let train = read_table(&args.train)?;
    let test = read_table(&args.test)?;
    train.check_features_match(&test, &args.train, &args.test)?;
    let spec = load_kernel(&args.kernel)?;
    let problem = assemble_qp(&spec, train.features(), test.features(), args.b)?;
    let w = solve_kmm(&problem, &solver_options(&args.solver))?;
    info!("solved {} weights in {} iterations (converged: {})", w.beta.len(), w.iterations, w.converged);

    let mut header = vec!["row", "beta"];
    if train.beta_true.is_some() {
        header.push("beta_true");
    }
    let rows = w.beta.iter().enumerate().map(|(i, b)| {
        let mut row = vec![(i + 1).to_string(), num(*b)];
        if let Some(t) = &train.beta_true {
            row.push(num(t[i]));
        }
        row
    });
    write_text(&csv_text(&header, rows)?, args.out.as_deref())?;

    let report = WeightsReport {
        n_tr: train.features().nrows(),
        n_te: test.features().nrows(),
        box_upper: w.box_upper,
        lhat: w.objective_value,
        iterations: w.iterations,
        converged: w.converged,
        residual: w.residual,
        mean_beta: w.mean(),
        min_beta: w.min(),
        max_beta: w.max(),
        normalization_gap: w.normalization_gap(),
        pearson_with_beta_true: train.beta_true.as_ref().and_then(|t| pearson(&w.beta, t)),
    };
    match (&args.summary, &args.out) {
        (Some(path), _) => write_json(&report, Some(path)),
        (None, Some(_)) => write_json(&report, None),
        (None, None) => Ok(()),
    }
}

pub fn estimate(args: &EstimateArgs) -> CliResult<()> {
    let train_table = read_table(&args.train)?;
    let test = read_table(&args.test)?;
    train_table.check_features_match(&test, &args.train, &args.test)?;
    let labels = train_table.require_labels(&args.train)?.to_vec();
    let train = Dataset::labeled(train_table.features().clone(), labels, args.label_range)?;
    let kind: EstimatorKind = args.estimator.into();
    let need_kernel = || -> CliResult<KernelSpec> {
        let arg = args.kernel.as_deref().ok_or_else(|| CliError::usage(format!("--kernel is required for {kind}")))?;
        load_kernel(arg)
    };
    let need_b = || args.b.ok_or_else(|| CliError::usage(format!("--B is required for {kind}")));
    let report: EstimateReport = match kind {
        EstimatorKind::Kmm => {
            let (report, w) =
                kmm_estimate_with_weights(&train, test.features(), &need_kernel()?, need_b()?, &solver_options(&args.solver))?;
            info!("KMM weights: {} iterations, converged {}", w.iterations, w.converged);
            report
        }
        EstimatorKind::Plugin => plugin_estimate(&train, test.features(), &need_kernel()?, args.lambda)?,
        EstimatorKind::KdeRatio => {
            kde_ratio_estimate(&train, test.features(), args.bandwidth_train, args.bandwidth_test, need_b()?)?
        }
        EstimatorKind::Oracle => {
            let beta = train_table
                .beta_true
                .as_deref()
                .ok_or_else(|| CliError::input(format!("{}: oracle needs a 'beta_true' column", args.train.display())))?;
            let b = args.b.unwrap_or_else(|| beta.iter().copied().fold(1.0, f64::max));
            oracle_estimate(&train, beta, b)?
        }
    };
    write_json(&report, args.out.as_deref())
}

#[derive(Serialize)]
struct BoundReport {
    inputs: BoundInputs,
    bound: BoundValue,
}

fn bound_inputs(args: &BoundArgs) -> CliResult<BoundInputs> {
    if let Some(text) = &args.inputs {
        return load_json(text, "bound inputs");
    }
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| CliError::usage(format!("this regime needs --{flag}")));
    let regime = match args.regime.expect("clap enforces --regime") {
        RegimeArg::InRkhs => Regime::InRkhs { norm_m: need(args.norm_m, "norm-m")? },
        RegimeArg::PolyApprox => Regime::PolyApprox { c2: need(args.c2, "c2")?, theta: need(args.theta, "theta")? },
        RegimeArg::LogApprox => Regime::LogApprox { c_inf: need(args.c_inf, "c-inf")?, s: need(args.s, "s")? },
        RegimeArg::PluginPoly => Regime::PluginPoly { c1: need(args.c1, "c1")?, theta: need(args.theta, "theta")? },
    };
    Ok(BoundInputs {
        b: args.b.expect("clap enforces --B"),
        c: args.c.expect("clap enforces --C"),
        delta: args.delta.expect("clap enforces --delta"),
        n_tr: args.n_tr.expect("clap enforces --n-tr"),
        n_te: args.n_te.expect("clap enforces --n-te"),
        regime,
    })
}

pub fn bound(args: &BoundArgs) -> CliResult<()> {
    let inputs = bound_inputs(args)?;
    let bound = inputs.evaluate()?;
    write_json(&BoundReport { inputs, bound }, args.out.as_deref())
}

#[derive(Serialize)]
struct RateFitFile<'a> {
    scenario: &'a str,
    n_te: usize,
    reps: usize,
    seed: u64,
    /// Keyed by estimator; `null` when the grid has a single size.
    fits: BTreeMap<&'static str, Option<RateFit>>,
}

#[derive(Serialize)]
struct CoverageRow {
    n_tr: usize,
    n_te: usize,
    bound: f64,
    reps: usize,
    covered: usize,
    fraction: f64,
    wilson_low: f64,
    wilson_high: f64,
}

#[derive(Serialize)]
struct CoverageFile {
    scenario: String,
    delta: f64,
    applicable: bool,
    reason: Option<String>,
    regime: Option<Regime>,
    box_upper: f64,
    rows: Vec<CoverageRow>,
}

fn coverage_summary(
    scenario: &ShiftScenario,
    args: &ExperimentArgs,
    kernel_override: Option<&KernelSpec>,
    comparison: &Comparison,
    n_te: usize,
) -> CliResult<CoverageFile> {
    let b = args.b.unwrap_or(scenario.b_true());
    let mut file = CoverageFile {
        scenario: scenario.id().to_string(),
        delta: args.delta,
        applicable: false,
        reason: None,
        regime: scenario.bound_regime(),
        box_upper: b,
        rows: Vec::new(),
    };
    let reason = if !matches!(scenario.regime(), RegimeTag::InRkhs { .. }) {
        Some("the regression function is outside the RKHS; no bound constants are known".to_string())
    } else if kernel_override.is_some_and(|k| k != scenario.kernel()) {
        Some("the RKHS norm of m is only known for the scenario's own kernel".to_string())
    } else if !args.estimator.iter().any(|e| EstimatorKind::from(*e) == EstimatorKind::Kmm) {
        Some("coverage is measured for the kmm estimator, which was not run".to_string())
    } else {
        None
    };
    if let Some(r) = reason {
        file.reason = Some(r);
        return Ok(file);
    }
    let regime = scenario.bound_regime().expect("checked above");
    let c = scenario.kernel().sup_bound()?;
    for &n_tr in &args.n_grid {
        let inputs =
            BoundInputs { b, c, delta: args.delta, n_tr: n_tr as u64, n_te: n_te as u64, regime: regime.clone() };
        let bound = inputs.evaluate()?.total;
        let kmm: Vec<_> =
            comparison.records.iter().filter(|r| r.estimator == EstimatorKind::Kmm && r.n_tr == n_tr).collect();
        let covered = kmm.iter().filter(|r| r.abs_error.is_some_and(|e| e <= bound)).count();
        let (wilson_low, wilson_high) = wilson_interval(covered, kmm.len(), WILSON_Z95);
        file.rows.push(CoverageRow {
            n_tr,
            n_te,
            bound,
            reps: kmm.len(),
            covered,
            fraction: covered as f64 / kmm.len() as f64,
            wilson_low,
            wilson_high,
        });
    }
    file.applicable = true;
    Ok(file)
}

#[derive(Serialize)]
struct ExperimentSummary {
    scenario: String,
    out: String,
    files: Vec<&'static str>,
    slopes: BTreeMap<&'static str, Option<f64>>,
}

pub fn experiment(args: &ExperimentArgs) -> CliResult<()> {
    let scenario = scenario_by_id(&args.scenario)?;
    if args.reps == 0 {
        return Err(CliError::input("--reps must be at least 1"));
    }
    if args.estimator.is_empty() {
        return Err(CliError::input("--estimator needs at least one estimator"));
    }
    let kernel = args.kernel.as_deref().map(load_kernel).transpose()?;
    let mut kinds: Vec<EstimatorKind> = Vec::new();
    for e in &args.estimator {
        let k = EstimatorKind::from(*e);
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    let configs: Vec<EstimatorConfig> = kinds
        .iter()
        .map(|k| EstimatorConfig {
            kind: *k,
            kernel: kernel.clone(),
            box_upper: args.b,
            lambda: args.lambda,
            solver: solver_options(&args.solver),
        })
        .collect();
    let opts = HarnessOptions { seed: args.seed, threads: args.threads, record_timing: args.timing };
    info!(
        "scenario {}: {} estimators x {} sizes x {} reps",
        scenario.id(),
        configs.len(),
        args.n_grid.len(),
        args.reps
    );
    let comparison = compare_estimators(&scenario, &configs, &args.n_grid, args.reps, args.n_te, &opts)?;
    let n_te = comparison.rows[0].n_te;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", args.out.display())))?;
    let out = |name: &str| args.out.join(name);

    let trials = csv_text(
        &["scenario", "estimator", "n_tr", "n_te", "seed", "abs_error", "lhat", "runtime_ms"],
        comparison.records.iter().map(|r| {
            vec![
                r.scenario.clone(),
                r.estimator.name().to_string(),
                r.n_tr.to_string(),
                r.n_te.to_string(),
                r.seed.to_string(),
                opt_num(r.abs_error),
                opt_num(r.lhat()),
                opt_num(r.runtime_ms),
            ]
        }),
    )?;
    write_text(&trials, Some(&out("trials.csv")))?;

    let mut fits = BTreeMap::new();
    for k in &kinds {
        let rows: Vec<_> = comparison.rows.iter().filter(|r| r.estimator == *k).collect();
        let grid: Vec<usize> = rows.iter().map(|r| r.n_tr).collect();
        let medians: Vec<f64> = rows.iter().map(|r| r.median_abs_error).collect();
        let fit = if grid.len() >= 2 { RateFit::fit(&grid, &medians).ok() } else { None };
        fits.insert(k.name(), fit);
    }
    let medians = csv_text(
        &["estimator", "n_tr", "n_te", "reps", "failures", "median_abs_error", "mean_abs_error", "fitted_median"],
        comparison.rows.iter().map(|r| {
            let fitted = fits.get(r.estimator.name()).and_then(|f| f.as_ref()).map(|f| f.predict(r.n_tr));
            vec![
                r.estimator.name().to_string(),
                r.n_tr.to_string(),
                r.n_te.to_string(),
                r.reps.to_string(),
                r.failures.to_string(),
                num(r.median_abs_error),
                num(r.mean_abs_error),
                opt_num(fitted),
            ]
        }),
    )?;
    write_text(&medians, Some(&out("medians.csv")))?;

    let slopes = fits.iter().map(|(k, f)| (*k, f.as_ref().map(|f| f.slope))).collect();
    let rate_file = RateFitFile { scenario: scenario.id(), n_te, reps: args.reps, seed: args.seed, fits };
    write_json(&rate_file, Some(&out("rate_fit.json")))?;

    let coverage = coverage_summary(&scenario, args, kernel.as_ref(), &comparison, n_te)?;
    write_json(&coverage, Some(&out("coverage.json")))?;

    write_json(
        &ExperimentSummary {
            scenario: scenario.id().to_string(),
            out: args.out.display().to_string(),
            files: vec!["trials.csv", "medians.csv", "rate_fit.json", "coverage.json"],
            slopes,
        },
        None,
    )
}

#[derive(Serialize)]
struct RankEntry {
    rank: usize,
    classifier: usize,
    name: String,
    estimate: f64,
    estimate_unit_scale: f64,
}

#[derive(Serialize)]
struct RankReport {
    entries: Vec<RankEntry>,
    weights_shared: bool,
    weights_summary: WeightsSummary,
}

pub fn rank(args: &RankArgs) -> CliResult<()> {
    let train = read_table(&args.train)?;
    let test = read_table(&args.test)?;
    train.check_features_match(&test, &args.train, &args.test)?;
    let losses = match &args.losses {
        Some(path) => {
            let t = read_loss_table(path)?;
            if t.rows != train.rows {
                return Err(CliError::input(format!(
                    "row mismatch: {} has {} rows, {} has {}",
                    path.display(),
                    t.rows,
                    args.train.display(),
                    train.rows
                )));
            }
            t.losses
        }
        None => train.losses.clone(),
    };
    if losses.is_empty() {
        return Err(CliError::input(format!("no '{LOSS_PREFIX}*' columns found")));
    }
    let spec = load_kernel(&args.kernel)?;
    let columns: Vec<Vec<f64>> = losses.iter().map(|(_, v)| v.clone()).collect();
    let ranking = rank_classifiers(
        train.features(),
        &columns,
        test.features(),
        &spec,
        args.b,
        &solver_options(&args.solver),
        args.label_range,
    )?;
    let report = RankReport {
        entries: ranking
            .entries
            .iter()
            .map(|e| RankEntry {
                rank: e.rank,
                classifier: e.classifier,
                name: losses[e.classifier].0.clone(),
                estimate: e.estimate,
                estimate_unit_scale: e.estimate_unit_scale,
            })
            .collect(),
        weights_shared: ranking.weights_shared,
        weights_summary: ranking.weights_summary,
    };
    write_json(&report, args.out.as_deref())
}

pub fn export(args: &ExportArgs) -> CliResult<()> {
    let scenario = scenario_by_id(&args.scenario)?;
    if args.n_tr == 0 || args.n_te == 0 {
        return Err(CliError::input("--n-tr and --n-te must be positive"));
    }
    let sample = scenario.sample_seeded(args.seed, args.n_tr, args.n_te);
    let dim = scenario.dim();
    let names: Vec<String> = if dim == 1 { vec!["x".into()] } else { (1..=dim).map(|k| format!("x{k}")).collect() };

    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.extend(["y", "beta_true"]);
    let labels = sample.train.labels()?;
    let train = csv_text(
        &header,
        (0..args.n_tr).map(|i| {
            let mut row: Vec<String> = sample.train.features().row(i).iter().map(|v| num(*v)).collect();
            row.push(num(labels[i]));
            row.push(num(sample.beta_true[i]));
            row
        }),
    )?;
    let test_header: Vec<&str> = names.iter().map(String::as_str).collect();
    let test = csv_text(&test_header, sample.test.rows().map(|r| r.iter().map(|v| num(*v)).collect()))?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", args.out.display())))?;
    write_text(&train, Some(&args.out.join("train.csv")))?;
    write_text(&test, Some(&args.out.join("test.csv")))
}

#[derive(Serialize)]
struct ScenarioInfo {
    id: String,
    description: String,
    dim: usize,
    b_true: f64,
    ey_te: f64,
    regime: RegimeTag,
    kernel: KernelSpec,
}

pub fn scenarios() -> CliResult<()> {
    let list: Vec<ScenarioInfo> = builtin_scenarios()
        .into_iter()
        .map(|s| ScenarioInfo {
            id: s.id().to_string(),
            description: s.description().to_string(),
            dim: s.dim(),
            b_true: s.b_true(),
            ey_te: s.ey_te(),
            regime: s.regime().clone(),
            kernel: s.kernel().clone(),
        })
        .collect();
    write_json(&list, None)
}
