//! Kernel families, Gram matrices and kernel sums.
//!
//! The feature map of a kernel is never materialised. Every Hilbert-space
//! quantity used elsewhere (mean embeddings, their distances, inner products
//! with functions in the RKHS) is expressed through the Gram entries computed
//! here.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, input, Error, Result};
use crate::features::FeatureMatrix;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Kernel family and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-|x - y|^2 / sigma^2)`
    Gaussian { sigma: f64 },
    /// `<x, y>`
    Linear,
    /// `(<x, y> + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `(c^2 + |x - y|^2)^(-alpha)`
    InverseMultiquadric { c: f64, alpha: f64 },
}

/// A kernel together with the radius of the compact domain it is used on.
///
/// The radius is only needed for kernels that are unbounded on `R^d`
/// (linear, polynomial); [`KernelSpec::sup_bound`] refuses to answer for those
/// without it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec", into = "RawKernelSpec")]
pub struct KernelSpec {
    family: KernelFamily,
    domain_radius: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawKernelSpec {
    #[serde(flatten)]
    family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain_radius: Option<f64>,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        KernelSpec::new(raw.family, raw.domain_radius)
    }
}

impl From<KernelSpec> for RawKernelSpec {
    fn from(spec: KernelSpec) -> Self {
        RawKernelSpec { family: spec.family, domain_radius: spec.domain_radius }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    ensure(v.is_finite() && v > 0.0, || format!("{name} must be a positive finite number, got {v}"))
}

impl KernelSpec {
    pub fn new(family: KernelFamily, domain_radius: Option<f64>) -> Result<Self> {
        match family {
            KernelFamily::Gaussian { sigma } => positive("sigma", sigma)?,
            KernelFamily::Linear => {}
            KernelFamily::Polynomial { degree, offset } => {
                ensure(degree >= 1, || "polynomial degree must be at least 1".into())?;
                ensure(offset.is_finite() && offset >= 0.0, || {
                    format!("polynomial offset must be non-negative, got {offset}")
                })?;
            }
            KernelFamily::InverseMultiquadric { c, alpha } => {
                positive("c", c)?;
                positive("alpha", alpha)?;
            }
        }
        if let Some(r) = domain_radius {
            positive("domain_radius", r)?;
        }
        Ok(Self { family, domain_radius })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian { sigma }, None)
    }

    pub fn inverse_multiquadric(c: f64, alpha: f64) -> Result<Self> {
        Self::new(KernelFamily::InverseMultiquadric { c, alpha }, None)
    }

    pub fn linear(domain_radius: f64) -> Result<Self> {
        Self::new(KernelFamily::Linear, Some(domain_radius))
    }

    pub fn polynomial(degree: u32, offset: f64, domain_radius: f64) -> Result<Self> {
        Self::new(KernelFamily::Polynomial { degree, offset }, Some(domain_radius))
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Result<Self> {
        positive("domain_radius", radius)?;
        self.domain_radius = Some(radius);
        Ok(self)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn domain_radius(&self) -> Option<f64> {
        self.domain_radius
    }

    /// Kernel value without dimension or finiteness checks.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.family {
            KernelFamily::Gaussian { sigma } => (-squared_distance(x, y) / (sigma * sigma)).exp(),
            KernelFamily::Linear => dot(x, y),
            KernelFamily::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
            KernelFamily::InverseMultiquadric { c, alpha } => {
                (c * c + squared_distance(x, y)).powf(-alpha)
            }
        }
    }

    /// `k(x, y)`, validating both arguments.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        ensure(x.len() == y.len(), || {
            format!("dimension mismatch: {} vs {}", x.len(), y.len())
        })?;
        ensure(x.iter().chain(y).all(|v| v.is_finite()), || "non-finite kernel argument".into())?;
        Ok(self.value(x, y))
    }

    /// The constant `C` with `sup_x k(x, x) <= C^2` on the declared domain.
    pub fn sup_bound(&self) -> Result<f64> {
        match self.family {
            KernelFamily::Gaussian { .. } => Ok(1.0),
            KernelFamily::InverseMultiquadric { c, alpha } => Ok(c.powf(-alpha)),
            KernelFamily::Linear => self.radius_or_refuse(),
            KernelFamily::Polynomial { degree, offset } => {
                let r = self.radius_or_refuse()?;
                Ok((r * r + offset).powf(degree as f64 / 2.0))
            }
        }
    }

    fn radius_or_refuse(&self) -> Result<f64> {
        self.domain_radius.ok_or_else(|| {
            Error::Input(
                "linear and polynomial kernels are unbounded on R^d; declare domain_radius \
                 to obtain a sup bound"
                    .into(),
            )
        })
    }

    /// Gram matrix with entry `(i, j) = k(a_i, b_j)`.
    pub fn gram(&self, a: &FeatureMatrix, b: &FeatureMatrix) -> Result<DMatrix<f64>> {
        check_dims(a, b)?;
        let (n, m) = (a.nrows(), b.nrows());
        let mut out = DMatrix::<f64>::zeros(n, m);
        if n == 0 || m == 0 {
            return Ok(out);
        }
        // Column-major storage: column j holds k(a_i, b_j) for all i.
        let fill = |(j, col): (usize, &mut [f64])| {
            let bj = b.row(j);
            for (i, slot) in col.iter_mut().enumerate() {
                *slot = self.value(a.row(i), bj);
            }
        };
        #[cfg(feature = "parallel")]
        out.as_mut_slice().par_chunks_mut(n).enumerate().for_each(fill);
        #[cfg(not(feature = "parallel"))]
        out.as_mut_slice().chunks_mut(n).enumerate().for_each(fill);
        Ok(out)
    }

    /// `out_i = sum_j w_j k(points_i, centers_j)`, with `w_j = 1` when no weights are given.
    ///
    /// Large one-dimensional Gaussian sums go through [`gauss_sum_1d`], whose
    /// truncation error is below double-precision rounding; everything else is
    /// summed directly.
    pub fn kernel_sums(
        &self,
        points: &FeatureMatrix,
        centers: &FeatureMatrix,
        weights: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        check_dims(points, centers)?;
        if let Some(w) = weights {
            ensure(w.len() == centers.nrows(), || {
                format!("{} weights for {} centers", w.len(), centers.nrows())
            })?;
            ensure(w.iter().all(|v| v.is_finite()), || "non-finite kernel-sum weight".into())?;
        }
        if let KernelFamily::Gaussian { sigma } = self.family {
            if points.dim() == 1 && points.nrows() * centers.nrows() >= FAST_SUM_THRESHOLD {
                return Ok(gauss_sum_1d(sigma, points.as_slice(), centers.as_slice(), weights));
            }
        }
        let row_sum = |i: usize| {
            let p = points.row(i);
            let mut acc = 0.0;
            for (j, c) in centers.rows().enumerate() {
                let w = weights.map_or(1.0, |w| w[j]);
                acc += w * self.value(p, c);
            }
            acc
        };
        #[cfg(feature = "parallel")]
        let sums = (0..points.nrows()).into_par_iter().map(row_sum).collect();
        #[cfg(not(feature = "parallel"))]
        let sums = (0..points.nrows()).map(row_sum).collect();
        Ok(sums)
    }

    /// `sum_{i,j} k(x_i, x_j)`.
    pub fn total_sum(&self, x: &FeatureMatrix) -> Result<f64> {
        Ok(self.kernel_sums(x, x, None)?.iter().sum())
    }
}

fn check_dims(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return input(format!("feature dimension mismatch: {} vs {}", a.dim(), b.dim()));
    }
    Ok(())
}

/// Squared Euclidean distance accumulated from coordinate differences, never
/// from `|x|^2 + |y|^2 - 2<x, y>`, so it is exactly symmetric and never negative.
#[inline]
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Product size above which one-dimensional Gaussian sums use the series evaluator.
pub const FAST_SUM_THRESHOLD: usize = 1 << 20;

// Series parameters, all in units of sigma. Sources are binned into cells of
// width CELL so |offset from cell centre| <= CELL / 2; cells farther than
// CUTOFF + CELL / 2 from a target contribute less than exp(-CUTOFF^2) ~ 4.5e-19
// per unit weight. With |2ab| <= 2 (CUTOFF + CELL/2) (CELL/2) ~ 3.4 the
// remainder after TERMS terms is below 1e-16 relative.
const CELL: f64 = 0.5;
const CUTOFF: f64 = 6.5;
const TERMS: usize = 30;

/// `out_i = sum_j w_j exp(-(x_i - t_j)^2 / sigma^2)` for scalar points, by a
/// truncated Taylor expansion of the Gaussian around cell centres.
///
/// With `a = (x - c)/sigma` and `b = (t - c)/sigma`,
/// `exp(-(a - b)^2) = exp(-a^2) exp(-b^2) sum_k (2ab)^k / k!`, so each cell
/// is summarised by `TERMS` moments and every target costs a few hundred
/// flops instead of one exponential per source.
pub fn gauss_sum_1d(sigma: f64, targets: &[f64], sources: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    if sources.is_empty() {
        return vec![0.0; targets.len()];
    }
    let lo = sources.iter().map(|t| t / sigma).fold(f64::INFINITY, f64::min);
    let hi = sources.iter().map(|t| t / sigma).fold(f64::NEG_INFINITY, f64::max);
    let ncells = (((hi - lo) / CELL).floor() as usize) + 1;
    let centre = |cell: usize| lo + (cell as f64 + 0.5) * CELL;

    let mut moments = vec![0.0; ncells * TERMS];
    let mut occupied = vec![false; ncells];
    for (j, &t) in sources.iter().enumerate() {
        let v = t / sigma;
        let cell = (((v - lo) / CELL) as usize).min(ncells - 1);
        occupied[cell] = true;
        let b = v - centre(cell);
        let w = weights.map_or(1.0, |w| w[j]);
        let m = &mut moments[cell * TERMS..(cell + 1) * TERMS];
        let mut term = w * (-b * b).exp();
        for (k, slot) in m.iter_mut().enumerate() {
            *slot += term;
            term *= 2.0 * b / (k as f64 + 1.0);
        }
    }

    let reach = CUTOFF + CELL / 2.0;
    let eval = |&x: &f64| {
        let u = x / sigma;
        let first = ((u - reach - lo) / CELL).floor().max(0.0) as usize;
        let last = ((u + reach - lo) / CELL).floor();
        if last < 0.0 {
            return 0.0;
        }
        let last = (last as usize).min(ncells - 1);
        let mut acc = 0.0;
        for cell in first..=last {
            if !occupied[cell] {
                continue;
            }
            let a = u - centre(cell);
            let m = &moments[cell * TERMS..(cell + 1) * TERMS];
            // Horner in a.
            let mut poly = 0.0;
            for &coef in m.iter().rev() {
                poly = poly * a + coef;
            }
            acc += (-a * a).exp() * poly;
        }
        acc
    };
    #[cfg(feature = "parallel")]
    let out = targets.par_iter().map(eval).collect();
    #[cfg(not(feature = "parallel"))]
    let out = targets.iter().map(eval).collect();
    out
}
