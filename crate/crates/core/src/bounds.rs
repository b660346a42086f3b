//! Finite-sample confidence bounds on `|(1/n_tr) sum beta_i Y_i - E[Y_te]|`.
//!
//! Every function is a closed-form expression of the regime parameters. All
//! bounds hold with probability at least `1 - delta` under bounded labels in
//! `[0, 1]`, a density ratio bounded by `B` and a kernel with `k(x, x) <= C^2`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Which assumption on the regression function the bound relies on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    /// The regression function lies in the RKHS with the given norm.
    InRkhs { norm_m: f64 },
    /// L2 approximation error decays as `c2 R^(-theta/2)`.
    PolyApprox { c2: f64, theta: f64 },
    /// Sup-norm approximation error decays as `c_inf (log R)^(-s)`.
    LogApprox { c_inf: f64, s: f64 },
    /// Plug-in regularised least squares with source condition `theta`.
    PluginPoly { c1: f64, theta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Upper bound on the density ratio, `B >= 1`.
    #[serde(rename = "B")]
    pub b: f64,
    /// Kernel sup constant with `k(x, x) <= C^2`.
    #[serde(rename = "C")]
    pub c: f64,
    pub delta: f64,
    pub n_tr: u64,
    pub n_te: u64,
    #[serde(flatten)]
    pub regime: Regime,
}

/// A bound split into additive terms plus the derived constants that enter them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    /// Exponent of `n_tr` in the dominant term (negative), or 0 for logarithmic rates.
    pub rate_exponent_tr: f64,
    pub rate_exponent_te: f64,
    pub rate_label: String,
}

impl BoundValue {
    fn from_terms(
        terms: &[(&str, f64)],
        constants: &[(&str, f64)],
        rate_exponent_tr: f64,
        rate_exponent_te: f64,
        rate_label: String,
    ) -> Self {
        let total = terms.iter().map(|(_, v)| v).sum();
        let own = |kv: &[(&str, f64)]| kv.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self { total, terms: own(terms), constants: own(constants), rate_exponent_tr, rate_exponent_te, rate_label }
    }
}

fn check_common(b: f64, delta: f64, n_tr: u64, n_te: u64) -> Result<()> {
    ensure(b.is_finite() && b >= 1.0, || {
        format!("B = {b} is invalid: B >= 1 due to the normalization constraint")
    })?;
    ensure(delta > 0.0 && delta < 1.0, || format!("delta must lie strictly inside (0, 1), got {delta}"))?;
    ensure(n_tr >= 1 && n_te >= 1, || "sample sizes must be at least 1".into())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    ensure(v.is_finite() && v >= 0.0, || format!("{name} must be non-negative, got {v}"))
}

fn check_pos(name: &str, v: f64) -> Result<()> {
    ensure(v.is_finite() && v > 0.0, || format!("{name} must be positive, got {v}"))
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        check_common(self.b, self.delta, self.n_tr, self.n_te)?;
        check_pos("C", self.c)?;
        match self.regime {
            Regime::InRkhs { norm_m } => check_nonneg("norm_m", norm_m),
            Regime::PolyApprox { c2, theta } => check_nonneg("C2", c2).and(check_pos("theta", theta)),
            Regime::LogApprox { c_inf, s } => check_nonneg("C_inf", c_inf).and(check_pos("s", s)),
            Regime::PluginPoly { c1, theta } => check_nonneg("C1", c1).and(check_pos("theta", theta)),
        }
    }

    /// Evaluates the bound matching `self.regime`.
    pub fn evaluate(&self) -> Result<BoundValue> {
        match self.regime {
            Regime::InRkhs { .. } => bound_thm1(self),
            Regime::PolyApprox { .. } => bound_thm2(self),
            Regime::LogApprox { .. } => bound_thm3(self),
            Regime::PluginPoly { .. } => bound_thm4(self),
        }
    }
}

/// `sqrt(2 (B^2/n_tr + 1/n_te) log(k/delta))`, shared by several bounds.
fn sampling_scale(b: f64, n_tr: u64, n_te: u64, log_arg: f64) -> f64 {
    (2.0 * (b * b / n_tr as f64 + 1.0 / n_te as f64) * log_arg.ln()).sqrt()
}

/// Hoeffding bound on the oracle-weighted mean: `B sqrt(log(2/delta) / (2 n_tr))`.
///
/// `B = 0` is accepted here (and yields 0) since the term is a plain scale.
pub fn hoeffding_last_term(b: f64, n_tr: u64, delta: f64) -> Result<f64> {
    check_nonneg("B", b)?;
    ensure(delta > 0.0 && delta < 1.0, || format!("delta must lie strictly inside (0, 1), got {delta}"))?;
    ensure(n_tr >= 1, || "n_tr must be at least 1".into())?;
    Ok(b * ((2.0 / delta).ln() / (2.0 * n_tr as f64)).sqrt())
}

/// Bound on the embedding discrepancy at the true weights:
/// `C sqrt(2 (B^2/n_tr + 1/n_te) log(2/delta))`.
pub fn emp_discrepancy_bound(b: f64, c: f64, n_tr: u64, n_te: u64, delta: f64) -> Result<f64> {
    check_common(b, delta, n_tr, n_te)?;
    check_pos("C", c)?;
    Ok(c * sampling_scale(b, n_tr, n_te, 2.0 / delta))
}

/// `C_theta = (1 + 2/theta) (theta/2)^(2/(theta+2))`.
pub fn c_theta(theta: f64) -> Result<f64> {
    check_pos("theta", theta)?;
    Ok((1.0 + 2.0 / theta) * (theta / 2.0).powf(2.0 / (theta + 2.0)))
}

/// `D_2 = 2C sqrt(2 (B^2/n_tr + 1/n_te) log(8/delta)) + BC sqrt(log(8/delta) / (2 n_tr))`.
pub fn d2(b: f64, c: f64, n_tr: u64, n_te: u64, delta: f64) -> Result<f64> {
    check_common(b, delta, n_tr, n_te)?;
    check_pos("C", c)?;
    let l = (8.0 / delta).ln();
    Ok(2.0 * c * sampling_scale(b, n_tr, n_te, 8.0 / delta) + b * c * (l / (2.0 * n_tr as f64)).sqrt())
}

/// `D_inf = 2C sqrt(2 (B^2/n_tr + 1/n_te) log(6/delta))`.
pub fn d_inf(b: f64, c: f64, n_tr: u64, n_te: u64, delta: f64) -> Result<f64> {
    check_common(b, delta, n_tr, n_te)?;
    check_pos("C", c)?;
    Ok(2.0 * c * sampling_scale(b, n_tr, n_te, 6.0 / delta))
}

fn wrong_regime(expected: &str, got: &Regime) -> Error {
    Error::Usage(format!("this bound needs the {expected} regime, got {got:?}"))
}

/// Regression function in the RKHS: `M sqrt(2 (B^2/n_tr + 1/n_te) log(6/delta))`
/// with `M = 1 + 2 C |m|_H`.
pub fn bound_thm1(inputs: &BoundInputs) -> Result<BoundValue> {
    let Regime::InRkhs { norm_m } = inputs.regime else {
        return Err(wrong_regime("in_rkhs", &inputs.regime));
    };
    inputs.validate()?;
    let m = 1.0 + 2.0 * inputs.c * norm_m;
    let main = m * sampling_scale(inputs.b, inputs.n_tr, inputs.n_te, 6.0 / inputs.delta);
    Ok(BoundValue::from_terms(
        &[("parametric", main)],
        &[("M", m)],
        -0.5,
        -0.5,
        "O(n_tr^-1/2 + n_te^-1/2)".into(),
    ))
}

/// Polynomially decaying L2 approximation error.
pub fn bound_thm2(inputs: &BoundInputs) -> Result<BoundValue> {
    let Regime::PolyApprox { c2, theta } = inputs.regime else {
        return Err(wrong_regime("poly_approx", &inputs.regime));
    };
    inputs.validate()?;
    let BoundInputs { b, c, delta, n_tr, n_te, .. } = *inputs;
    let d2 = d2(b, c, n_tr, n_te, delta)?;
    let c_theta = c_theta(theta)?;
    let hoeffding = b * (9.0 / (2.0 * n_tr as f64) * (8.0 / delta).ln()).sqrt();
    let approximation = c_theta * (b * c2).powf(2.0 / (theta + 2.0)) * d2.powf(theta / (theta + 2.0));
    let exponent = -rate_exponent_kmm(theta)?;
    Ok(BoundValue::from_terms(
        &[("hoeffding", hoeffding), ("approximation", approximation)],
        &[("C_theta", c_theta), ("D2", d2)],
        exponent,
        exponent,
        format!("O(n_tr^{exponent} + n_te^{exponent})"),
    ))
}

/// Logarithmically decaying sup-norm approximation error.
///
/// Defined only once `s B C_inf / D_inf > 1`, i.e. for sample sizes large
/// enough that the optimal RKHS radius is at least 1.
pub fn bound_thm3(inputs: &BoundInputs) -> Result<BoundValue> {
    let Regime::LogApprox { c_inf, s } = inputs.regime else {
        return Err(wrong_regime("log_approx", &inputs.regime));
    };
    inputs.validate()?;
    let BoundInputs { b, c, delta, n_tr, n_te, .. } = *inputs;
    let d_inf = d_inf(b, c, n_tr, n_te, delta)?;
    let log_arg = s * b * c_inf / d_inf;
    if !(log_arg > 1.0) {
        return Err(Error::Domain(format!(
            "log argument s*B*C_inf/D_inf = {log_arg:.6} must exceed 1; increase n_tr and n_te \
             (D_inf = {d_inf:.6} shrinks with the sample sizes)"
        )));
    }
    let approximation = (1.0 + 1.0 / s).powf(s) * b * c_inf * log_arg.ln().powf(-s);
    let hoeffding = b * (2.0 / n_tr as f64 * (6.0 / delta).ln()).sqrt();
    let tradeoff = (s * b * c_inf).powf(s / (s + 1.0)) * d_inf.powf(1.0 / (s + 1.0));
    let radius = log_arg.powf(s / (s + 1.0));
    Ok(BoundValue::from_terms(
        &[("approximation", approximation), ("hoeffding", hoeffding), ("tradeoff", tradeoff)],
        &[("D_inf", d_inf), ("R", radius), ("log_argument", log_arg)],
        0.0,
        0.0,
        format!("O(log^-{s}(n_tr n_te / (n_tr + n_te)))"),
    ))
}

/// Plug-in kernel ridge regression:
/// `sqrt(log(4/delta) / (2 n_te)) + sqrt(B) C_1 n_tr^(-3 theta / (12 theta + 16))`.
pub fn bound_thm4(inputs: &BoundInputs) -> Result<BoundValue> {
    let Regime::PluginPoly { c1, theta } = inputs.regime else {
        return Err(wrong_regime("plugin_poly", &inputs.regime));
    };
    inputs.validate()?;
    let BoundInputs { b, delta, n_tr, n_te, .. } = *inputs;
    let exponent = -rate_exponent_plugin(theta)?;
    let test_sampling = ((4.0 / delta).ln() / (2.0 * n_te as f64)).sqrt();
    let regression = b.sqrt() * c1 * (n_tr as f64).powf(exponent);
    Ok(BoundValue::from_terms(
        &[("test_sampling", test_sampling), ("regression", regression)],
        &[],
        exponent,
        -0.5,
        format!("O(n_tr^{exponent} + n_te^-1/2)"),
    ))
}

/// Magnitude `theta / (2 (theta + 2))` of the KMM rate exponent.
pub fn rate_exponent_kmm(theta: f64) -> Result<f64> {
    check_pos("theta", theta)?;
    if theta.is_infinite() {
        return Ok(0.5);
    }
    Ok(theta / (2.0 * (theta + 2.0)))
}

/// Magnitude `3 theta / (12 theta + 16)` of the plug-in rate exponent in `n_tr`.
pub fn rate_exponent_plugin(theta: f64) -> Result<f64> {
    check_pos("theta", theta)?;
    Ok(3.0 * theta / (12.0 * theta + 16.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn inputs(regime: Regime) -> BoundInputs {
        BoundInputs { b: 2.0, c: 1.0, delta: 0.05, n_tr: 100, n_te: 100, regime }
    }

    #[test]
    fn hoeffding_edge_cases() {
        let delta = 2.0 / std::f64::consts::E.powi(2);
        assert_relative_eq!(hoeffding_last_term(1.0, 2, delta).unwrap(), 0.5f64.sqrt(), max_relative = 1e-15);
        let a = hoeffding_last_term(3.0, 50, 0.1).unwrap();
        let b = hoeffding_last_term(3.0, 200, 0.1).unwrap();
        assert_relative_eq!(b, a / 2.0, max_relative = 1e-14);
        assert_eq!(hoeffding_last_term(0.0, 10, 0.1).unwrap(), 0.0);
        assert!(hoeffding_last_term(1.0, 10, 1.0).is_err());
    }

    #[test]
    fn discrepancy_collapses_and_limits() {
        let n = 37;
        let v = emp_discrepancy_bound(1.0, 1.0, n, n, 0.1).unwrap();
        assert_relative_eq!(v, (4.0 / n as f64 * 20f64.ln()).sqrt(), max_relative = 1e-14);
        let lim = emp_discrepancy_bound(2.0, 1.5, 300, 1_000_000_000_000, 0.1).unwrap();
        let expected = 1.5 * 2.0 * (2.0 * 20f64.ln() / 300.0).sqrt();
        assert_relative_eq!(lim, expected, max_relative = 1e-5);
        assert!(emp_discrepancy_bound(0.5, 1.0, 10, 10, 0.1).is_err());
    }

    #[test]
    fn thm1_shapes() {
        let v = bound_thm1(&inputs(Regime::InRkhs { norm_m: 0.0 })).unwrap();
        assert_eq!(v.constants["M"], 1.0);
        assert_relative_eq!(v.total, (2.0 * (4.0 / 100.0 + 0.01) * 120f64.ln()).sqrt(), max_relative = 1e-14);
        let mut i = inputs(Regime::InRkhs { norm_m: 0.7 });
        let a = bound_thm1(&i).unwrap().total;
        i.n_tr *= 4;
        i.n_te *= 4;
        assert_relative_eq!(bound_thm1(&i).unwrap().total, a / 2.0, max_relative = 1e-14);
        assert!(matches!(bound_thm1(&inputs(Regime::LogApprox { c_inf: 1.0, s: 1.0 })), Err(Error::Usage(_))));
    }

    #[test]
    fn thm2_limits() {
        let v = bound_thm2(&inputs(Regime::PolyApprox { c2: 0.0, theta: 1.5 })).unwrap();
        assert_relative_eq!(v.total, 2.0 * (9.0 / 200.0 * 160f64.ln()).sqrt(), max_relative = 1e-14);
        assert_eq!(c_theta(2.0).unwrap(), 2.0);
        assert!(c_theta(0.0).is_err());
        assert!(bound_thm2(&inputs(Regime::PolyApprox { c2: 1.0, theta: -1.0 })).is_err());
    }

    #[test]
    fn thm3_domain_and_closed_form() {
        let err = bound_thm3(&inputs(Regime::LogApprox { c_inf: 0.0, s: 1.0 })).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        // Pick C_inf so that s B C_inf / D_inf = e with s = 1, B = 1.
        let mut i = inputs(Regime::LogApprox { c_inf: 1.0, s: 1.0 });
        i.b = 1.0;
        let d = d_inf(1.0, 1.0, 100, 100, 0.05).unwrap();
        i.regime = Regime::LogApprox { c_inf: std::f64::consts::E * d, s: 1.0 };
        let v = bound_thm3(&i).unwrap();
        assert_relative_eq!(v.terms["approximation"], 2.0 * std::f64::consts::E * d, max_relative = 1e-14);
    }

    #[test]
    fn thm4_limits() {
        let mut i = inputs(Regime::PluginPoly { c1: 0.0, theta: 2.0 });
        i.n_te = 400;
        let v = bound_thm4(&i).unwrap();
        assert_relative_eq!(v.total, (80f64.ln() / 800.0).sqrt(), max_relative = 1e-14);
        let far = bound_thm4(&inputs(Regime::PluginPoly { c1: 1.0, theta: 1e6 })).unwrap();
        assert!((far.rate_exponent_tr + 0.25).abs() < 1e-5);
        assert_eq!(far.rate_exponent_te, -0.5);
    }

    #[test]
    fn exponents() {
        assert_eq!(rate_exponent_kmm(2.0).unwrap(), 0.25);
        assert!((rate_exponent_kmm(1e6).unwrap() - 0.5).abs() < 1e-5);
        assert!(rate_exponent_kmm(1e-12).unwrap() < 1e-12);
        assert!(rate_exponent_kmm(0.0).is_err());
    }

    #[test]
    fn invalid_common_inputs() {
        let mut i = inputs(Regime::InRkhs { norm_m: 1.0 });
        i.delta = 0.0;
        assert!(i.evaluate().is_err());
        i.delta = 0.1;
        i.b = 0.9;
        assert!(i.evaluate().is_err());
        i.b = 1.0;
        i.n_tr = 0;
        assert!(i.evaluate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let i = inputs(Regime::PolyApprox { c2: 1.0, theta: 2.0 });
        let s = serde_json::to_string(&i).unwrap();
        assert_eq!(s, r#"{"B":2.0,"C":1.0,"delta":0.05,"n_tr":100,"n_te":100,"regime":"poly_approx","c2":1.0,"theta":2.0}"#);
        let back: BoundInputs = serde_json::from_str(&s).unwrap();
        assert_eq!(back, i);
    }
}
