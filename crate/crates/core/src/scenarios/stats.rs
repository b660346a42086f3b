use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% standard normal quantile.
pub const WILSON_Z95: f64 = 1.959_963_984_540_054;

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Least-squares line through `(ln n, ln median)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_grid: Vec<usize>,
    pub medians: Vec<f64>,
}

impl RateFit {
    pub fn fit(n_grid: &[usize], medians: &[f64]) -> Result<Self> {
        if n_grid.len() != medians.len() || n_grid.len() < 2 {
            return Err(Error::Input("a rate fit needs at least two (n, median) pairs".into()));
        }
        if n_grid.contains(&0) || medians.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Domain("rate fits need positive sizes and positive medians".into()));
        }
        let xs: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
        let k = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / k;
        let my = ys.iter().sum::<f64>() / k;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        if sxx == 0.0 {
            return Err(Error::Domain("rate fits need at least two distinct sizes".into()));
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
        Ok(Self { slope, intercept, r_squared, n_grid: n_grid.to_vec(), medians: medians.to_vec() })
    }

    /// Fitted median at size `n`.
    pub fn predict(&self, n: usize) -> f64 {
        (self.intercept + self.slope * (n as f64).ln()).exp()
    }
}
