//! Diagonal Gaussians, categoricals, reparameterized sampling and the
//! closed-form KL divergences every objective is built from.
//!
//! Gaussians are parameterized by log-variance. Every place that turns a
//! log-variance into a variance goes through [`clamp_log_var`] first, so
//! the effective log-variance always lies in `[-15, 15]`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const LOG_VAR_MIN: f64 = -15.0;
pub const LOG_VAR_MAX: f64 = 15.0;

/// Floor applied to categorical probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default Gumbel-Softmax temperature, held constant during training.
pub const DEFAULT_TEMPERATURE: f64 = 0.67;

#[inline]
pub fn clamp_log_var(lv: f64) -> f64 {
    lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

/// Derivative of [`clamp_log_var`]; zero where the clamp is active.
#[inline]
pub(crate) fn clamp_grad(lv: f64) -> f64 {
    if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&lv) {
        1.0
    } else {
        0.0
    }
}

/// Factorized Normal `N(mean, diag(exp(log_var)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::param("gaussian must have at least one dimension"));
        }
        check_len("DiagGaussian log_var", mean.len(), log_var.len())?;
        if log_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("log_var must be finite"));
        }
        Ok(DiagGaussian { mean, log_var })
    }

    /// Builds from means and variances (`var > 0`).
    pub fn from_variance(mean: Vec<f64>, var: &[f64]) -> Result<Self> {
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::param("variance must be positive"));
        }
        Self::new(mean, var.iter().map(|v| v.ln()).collect())
    }

    /// The standard normal prior `N(0, I)`.
    pub fn standard(dim: usize) -> Self {
        assert!(dim > 0);
        DiagGaussian {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    /// Variances after log-variance clamping.
    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|&lv| clamp_log_var(lv).exp()).collect()
    }

    /// Sub-distribution over `range` of the dimensions.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.dim() {
            return Err(Error::param(format!(
                "slice {range:?} out of bounds for dimension {}",
                self.dim()
            )));
        }
        Ok(DiagGaussian {
            mean: self.mean[range.clone()].to_vec(),
            log_var: self.log_var[range].to_vec(),
        })
    }

    /// Log-density at `z`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        check_len("DiagGaussian::log_density", self.dim(), z.len())?;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        Ok(self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(z)
            .map(|((&m, &lv), &x)| {
                let lv = clamp_log_var(lv);
                -0.5 * (ln_2pi + lv + (x - m).powi(2) / lv.exp())
            })
            .sum())
    }
}

/// Categorical distribution over `K` outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("categorical needs at least one outcome"));
        }
        if probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::param("categorical probabilities must lie in (0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!(
                "categorical probabilities sum to {total}, not 1"
            )));
        }
        Ok(CategoricalDist { probs })
    }

    /// Softmax of unnormalized logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::param("categorical needs at least one outcome"));
        }
        let probs = softmax(logits);
        Ok(CategoricalDist {
            probs: probs.into_iter().map(|p| p.max(PROB_FLOOR)).collect(),
        })
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0);
        CategoricalDist {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `mean + exp(0.5 * log_var) * noise`.
pub fn sample_reparam_gaussian(d: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    check_len("sample_reparam_gaussian noise", d.dim(), noise.len())?;
    Ok(d.mean
        .iter()
        .zip(&d.log_var)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (0.5 * clamp_log_var(lv)).exp() * e)
        .collect())
}

/// Per-coordinate term of `KL(N(a, e^la) || N(b, e^lb))` on clamped log-variances.
#[inline]
pub(crate) fn kl_gaussian_elem(a: f64, la: f64, b: f64, lb: f64) -> f64 {
    let (la, lb) = (clamp_log_var(la), clamp_log_var(lb));
    let vb = lb.exp();
    0.5 * (lb - la) + 0.5 * (la.exp() / vb - 1.0) + (a - b).powi(2) / (2.0 * vb)
}

/// Partials of [`kl_gaussian_elem`] as `(d/da, d/dla, d/db, d/dlb)`.
#[inline]
pub(crate) fn kl_gaussian_elem_grad(a: f64, la: f64, b: f64, lb: f64) -> [f64; 4] {
    let (gla, glb) = (clamp_grad(la), clamp_grad(lb));
    let (la, lb) = (clamp_log_var(la), clamp_log_var(lb));
    let (va, vb) = (la.exp(), lb.exp());
    let d = a - b;
    [
        d / vb,
        gla * (0.5 * va / vb - 0.5),
        -d / vb,
        glb * (0.5 - (va + d * d) / (2.0 * vb)),
    ]
}

/// Per-coordinate term of `KL(N(m, e^lv) || N(0, 1))`.
#[inline]
pub(crate) fn kl_std_elem(m: f64, lv: f64) -> f64 {
    let lv = clamp_log_var(lv);
    -0.5 * (1.0 + lv - m * m - lv.exp())
}

/// Partials of [`kl_std_elem`] as `(d/dm, d/dlv)`.
#[inline]
pub(crate) fn kl_std_elem_grad(m: f64, lv: f64) -> [f64; 2] {
    [m, clamp_grad(lv) * 0.5 * (clamp_log_var(lv).exp() - 1.0)]
}

/// Closed-form `KL(p || q)` between diagonal Gaussians, in nats.
pub fn kl_gaussian(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_len("kl_gaussian", p.dim(), q.dim())?;
    Ok((0..p.dim())
        .map(|i| kl_gaussian_elem(p.mean[i], p.log_var[i], q.mean[i], q.log_var[i]))
        .sum())
}

/// `KL(d || N(0, I))`.
pub fn kl_gaussian_to_std_prior(d: &DiagGaussian) -> f64 {
    d.mean
        .iter()
        .zip(&d.log_var)
        .map(|(&m, &lv)| kl_std_elem(m, lv))
        .sum()
}

/// `Σ p_i ln(p_i / q_i)` with both sides floored at [`PROB_FLOOR`].
pub fn kl_categorical(p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
    check_len("kl_categorical", p.support(), q.support())?;
    Ok(kl_probs(&p.probs, &q.probs))
}

pub(crate) fn kl_probs(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (a.max(PROB_FLOOR), b.max(PROB_FLOOR));
            a * (a / b).ln()
        })
        .sum()
}

fn combine(
    context: &'static str,
    a: &DiagGaussian,
    b: &DiagGaussian,
    f: impl Fn(f64, f64, f64, f64) -> (f64, f64),
) -> Result<DiagGaussian> {
    check_len(context, a.dim(), b.dim())?;
    let (mean, log_var) = (0..a.dim())
        .map(|i| f(a.mean[i], a.log_var[i], b.mean[i], b.log_var[i]))
        .unzip();
    Ok(DiagGaussian { mean, log_var })
}

/// Normalized product of two Gaussian densities (precision-weighted).
pub fn product_of_gaussians(a: &DiagGaussian, b: &DiagGaussian) -> Result<DiagGaussian> {
    combine("product_of_gaussians", a, b, product_elem)
}

/// Elementwise parameter average: mean and variance both averaged with weight 0.5.
/// This is not the mixture of `a` and `b`.
pub fn average_gaussians(a: &DiagGaussian, b: &DiagGaussian) -> Result<DiagGaussian> {
    combine("average_gaussians", a, b, average_elem)
}

#[inline]
pub(crate) fn product_elem(ma: f64, la: f64, mb: f64, lb: f64) -> (f64, f64) {
    let (pa, pb) = ((-clamp_log_var(la)).exp(), (-clamp_log_var(lb)).exp());
    let prec = pa + pb;
    ((ma * pa + mb * pb) / prec, -prec.ln())
}

/// Jacobian of [`product_elem`]: rows are (mean, log_var) outputs, columns
/// are (ma, la, mb, lb).
#[inline]
pub(crate) fn product_elem_grad(ma: f64, la: f64, mb: f64, lb: f64) -> [[f64; 4]; 2] {
    let (ga, gb) = (clamp_grad(la), clamp_grad(lb));
    let (pa, pb) = ((-clamp_log_var(la)).exp(), (-clamp_log_var(lb)).exp());
    let prec = pa + pb;
    let (wa, wb) = (pa / prec, pb / prec);
    let mean = ma * wa + mb * wb;
    [
        [wa, ga * wa * (mean - ma), wb, gb * wb * (mean - mb)],
        [0.0, ga * wa, 0.0, gb * wb],
    ]
}

#[inline]
pub(crate) fn average_elem(ma: f64, la: f64, mb: f64, lb: f64) -> (f64, f64) {
    let var = 0.5 * clamp_log_var(la).exp() + 0.5 * clamp_log_var(lb).exp();
    (0.5 * ma + 0.5 * mb, var.ln())
}

#[inline]
pub(crate) fn average_elem_grad(_ma: f64, la: f64, _mb: f64, lb: f64) -> [[f64; 4]; 2] {
    let (va, vb) = (clamp_log_var(la).exp(), clamp_log_var(lb).exp());
    let s = va + vb;
    [
        [0.5, 0.0, 0.5, 0.0],
        [0.0, clamp_grad(la) * va / s, 0.0, clamp_grad(lb) * vb / s],
    ]
}

/// Standard Gumbel draw from a uniform in (0, 1).
#[inline]
pub(crate) fn gumbel(u: f64) -> f64 {
    let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    -(-u.ln()).ln()
}

/// Relaxed one-hot sample `softmax((ln π + g) / temperature)` with Gumbel
/// noise `g` derived from `uniform_noise`.
pub fn gumbel_softmax_sample(
    d: &CategoricalDist,
    temperature: f64,
    uniform_noise: &[f64],
) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::param(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    check_len("gumbel_softmax_sample noise", d.support(), uniform_noise.len())?;
    if uniform_noise.iter().any(|&u| !(u > 0.0 && u < 1.0)) {
        return Err(Error::param("uniform noise must lie in (0, 1)"));
    }
    let scores: Vec<f64> = d
        .probs
        .iter()
        .zip(uniform_noise)
        .map(|(&p, &u)| (p.max(PROB_FLOOR).ln() + gumbel(u)) / temperature)
        .collect();
    Ok(softmax(&scores))
}
