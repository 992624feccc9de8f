//! Stationary covariance functions: Matern (nu in {1/2, 3/2, 5/2}) and RBF.
//!
//! Hyperparameters live in log space so positivity is structural; the length
//! scale additionally carries box bounds in input units (kilometres for
//! spatial kernels) that optimizers clamp to after every step. Only the
//! closed-form Matern orders are implemented; the general-nu form via modified
//! Bessel functions is out of scope.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SQRT3: f64 = 1.732_050_807_568_877_2;
pub const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern12,
    Matern32,
    Matern52,
    Rbf,
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Matern12 => "matern12",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Rbf => "rbf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matern12" | "matern-1/2" => Ok(KernelFamily::Matern12),
            "matern32" | "matern-3/2" => Ok(KernelFamily::Matern32),
            "matern52" | "matern-5/2" | "matern" => Ok(KernelFamily::Matern52),
            "rbf" | "gaussian" | "sqexp" => Ok(KernelFamily::Rbf),
            other => Err(Error::ConfigError(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Box bounds for the length scale, in input units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleBounds {
    pub min: f64,
    pub max: f64,
}

impl LengthscaleBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max >= min && max.is_finite()) {
            return Err(Error::ConfigError(format!(
                "lengthscale bounds must satisfy 0 < min <= max < inf, got [{min}, {max}]"
            )));
        }
        Ok(LengthscaleBounds { min, max })
    }

    pub fn clamp(&self, ell: f64) -> f64 {
        ell.clamp(self.min, self.max)
    }

    /// Geometric midpoint, the default initial length scale.
    pub fn geometric_mean(&self) -> f64 {
        (self.min * self.max).sqrt()
    }
}

/// A stationary kernel: family, output scale, and one length scale (or one
/// per input dimension when ARD is on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Length scales; a single entry is shared across dimensions.
    pub lengthscales: Vec<f64>,
    /// Output scale sigma^2 (the zero-distance covariance).
    pub outputscale: f64,
    pub bounds: LengthscaleBounds,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64, outputscale: f64, bounds: LengthscaleBounds) -> Result<Self> {
        let spec = KernelSpec { family, lengthscales: vec![lengthscale], outputscale, bounds };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::ConfigError("length scales must be positive and finite".into()));
        }
        if !(self.outputscale > 0.0) || !self.outputscale.is_finite() {
            return Err(Error::ConfigError("outputscale must be positive and finite".into()));
        }
        for &l in &self.lengthscales {
            if l < self.bounds.min - 1e-12 || l > self.bounds.max + 1e-12 {
                return Err(Error::ConfigError(format!(
                    "lengthscale {l} outside bounds [{}, {}]",
                    self.bounds.min, self.bounds.max
                )));
            }
        }
        Ok(())
    }

    fn lengthscale_for(&self, dim: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[dim]
        }
    }

    /// Scaled squared distance sum((x_k - y_k) / ell_k)^2.
    fn scaled_r2(&self, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> f64 {
        let mut r2 = 0.0;
        if self.lengthscales.len() == 1 {
            let inv = 1.0 / self.lengthscales[0];
            for (a, b) in x.iter().zip(y.iter()) {
                let d = (a - b) * inv;
                r2 += d * d;
            }
        } else {
            for (k, (a, b)) in x.iter().zip(y.iter()).enumerate() {
                let d = (a - b) / self.lengthscales[k];
                r2 += d * d;
            }
        }
        r2
    }

    /// Kernel profile at scaled distance `r` with unit output scale.
    fn profile(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Matern12 => (-r).exp(),
            KernelFamily::Matern32 => {
                let a = SQRT3 * r;
                (1.0 + a) * (-a).exp()
            }
            KernelFamily::Matern52 => {
                let a = SQRT5 * r;
                (1.0 + a + 5.0 * r * r / 3.0) * (-a).exp()
            }
            KernelFamily::Rbf => (-0.5 * r * r).exp(),
        }
    }

    /// d(profile)/d(r^2) with unit output scale, used for gradients w.r.t.
    /// inputs (inducing points). Returns the finite limit at r = 0 where one
    /// exists; Matern12 has an absolute-value kink there and gets the
    /// subgradient 0.
    fn dprofile_dr2(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Matern12 => {
                if r == 0.0 {
                    0.0
                } else {
                    -(-r).exp() / (2.0 * r)
                }
            }
            KernelFamily::Matern32 => -1.5 * (-SQRT3 * r).exp(),
            KernelFamily::Matern52 => {
                let a = SQRT5 * r;
                -(5.0 / 6.0) * (1.0 + a) * (-a).exp()
            }
            KernelFamily::Rbf => -0.5 * (-0.5 * r * r).exp(),
        }
    }

    /// d(profile)/d(log ell) for a shared length scale, expressed through the
    /// scaled distance `r`.
    fn dprofile_dlog_ell(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Matern12 => r * (-r).exp(),
            KernelFamily::Matern32 => 3.0 * r * r * (-SQRT3 * r).exp(),
            KernelFamily::Matern52 => {
                let a = SQRT5 * r;
                (5.0 / 3.0) * r * r * (1.0 + a) * (-a).exp()
            }
            KernelFamily::Rbf => r * r * (-0.5 * r * r).exp(),
        }
    }
}

/// Covariance between two points.
pub fn kernel_value(spec: &KernelSpec, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeError(format!(
            "kernel inputs have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    let r = spec.scaled_r2(x, y).sqrt();
    Ok(spec.outputscale * spec.profile(r))
}

/// Gram matrix `K[i, j] = k(xs_i, ys_j)`.
pub fn gram(spec: &KernelSpec, xs: &ArrayView2<f64>, ys: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if xs.ncols() != ys.ncols() {
        return Err(Error::ShapeError(format!(
            "gram inputs have {} and {} columns",
            xs.ncols(),
            ys.ncols()
        )));
    }
    let mut k = Array2::zeros((xs.nrows(), ys.nrows()));
    for i in 0..xs.nrows() {
        let xi = xs.row(i);
        for j in 0..ys.nrows() {
            let r = spec.scaled_r2(&xi, &ys.row(j)).sqrt();
            k[[i, j]] = spec.outputscale * spec.profile(r);
        }
    }
    Ok(k)
}

/// Gram matrix together with everything its gradients need: the scaled
/// distances and the per-entry profile derivatives.
#[derive(Debug, Clone)]
pub struct GramWithGrads {
    pub k: Array2<f64>,
    /// dK/d(log sigma^2); equals K for every family.
    pub d_log_outputscale: Array2<f64>,
    /// dK/d(log ell), one matrix per length scale entry.
    pub d_log_lengthscales: Vec<Array2<f64>>,
}

/// Analytic partials of every Gram entry w.r.t. log ell and log sigma^2.
pub fn kernel_grads(spec: &KernelSpec, xs: &ArrayView2<f64>, ys: &ArrayView2<f64>) -> Result<GramWithGrads> {
    if xs.ncols() != ys.ncols() {
        return Err(Error::ShapeError(format!(
            "gram inputs have {} and {} columns",
            xs.ncols(),
            ys.ncols()
        )));
    }
    let n = xs.nrows();
    let m = ys.nrows();
    let ard = spec.lengthscales.len() > 1;
    let k = gram(spec, xs, ys)?;

    let mut d_ells = vec![Array2::zeros((n, m)); spec.lengthscales.len()];
    for i in 0..n {
        let xi = xs.row(i);
        for j in 0..m {
            let yj = ys.row(j);
            let r2 = spec.scaled_r2(&xi, &yj);
            let r = r2.sqrt();
            if !ard {
                d_ells[0][[i, j]] = spec.outputscale * spec.dprofile_dlog_ell(r);
            } else {
                // Through the chain rule: dk/dlog ell_k = dk/dr2 * (-2 d_k^2 / ell_k^2).
                let dk_dr2 = spec.outputscale * spec.dprofile_dr2(r);
                for (kdim, d_ell) in d_ells.iter_mut().enumerate() {
                    let diff = (xi[kdim] - yj[kdim]) / spec.lengthscales[kdim];
                    d_ell[[i, j]] = dk_dr2 * (-2.0 * diff * diff);
                }
            }
        }
    }
    Ok(GramWithGrads { d_log_outputscale: k.clone(), k, d_log_lengthscales: d_ells })
}

/// d k(x, y) / d x, used for inducing-point gradients. Stationary families
/// give `dk/dr2 * 2 (x - y) / ell^2` per coordinate.
pub fn kernel_grad_wrt_x(spec: &KernelSpec, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Array1<f64> {
    let r = spec.scaled_r2(x, y).sqrt();
    let dk_dr2 = spec.outputscale * spec.dprofile_dr2(r);
    let mut g = Array1::zeros(x.len());
    for k in 0..x.len() {
        let ell = spec.lengthscale_for(k);
        g[k] = dk_dr2 * 2.0 * (x[k] - y[k]) / (ell * ell);
    }
    g
}

/// Scalar profile-derivative accessor used by the SVGP backward pass, which
/// wants to sweep whole Gram blocks without re-deriving distances.
pub fn dk_dr2_entry(spec: &KernelSpec, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> f64 {
    let r = spec.scaled_r2(x, y).sqrt();
    spec.outputscale * spec.dprofile_dr2(r)
}
