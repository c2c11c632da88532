//! The skew Laplace normal (SLN) distribution.
//!
//! Density `f(y) = (1/σ) exp(-|y-μ|/σ) Φ(λ (y-μ)/σ)`: a Laplace kernel tilted by
//! a normal CDF. It is the law of `μ + σ Z / V` with `V = (2T)^{-1/2}`,
//! `T ~ Exp(1)` and, given `V = v`, `Z ~ SN(0, 1, λ/v)`. Writing
//! `s = (y-μ)/σ`, the latent variables of that representation have
//! `E(V²|y) = 1/|s|` and `U|y ~ TN(λs, 1)` on `(0, ∞)`, which is what the EM
//! E-step consumes.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Result, SlnError};
use crate::seed::rng_from_seed;
use crate::special::{log_norm_cdf, trunc_normal_moments};

/// Default lower bound on `|y-μ|/σ` inside `E(V²|y)`.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-8;

/// Location, scale and skewness of a single SLN law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlnParams {
    mu: f64,
    sigma: f64,
    lambda: f64,
}

impl SlnParams {
    pub fn new(mu: f64, sigma: f64, lambda: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && lambda.is_finite()) {
            return Err(SlnError::Domain(format!(
                "non-finite SLN parameters (mu={mu}, sigma={sigma}, lambda={lambda})"
            )));
        }
        if sigma <= 0.0 {
            return Err(SlnError::Domain(format!("sigma must be positive, got {sigma}")));
        }
        Ok(SlnParams { mu, sigma, lambda })
    }

    /// Builds parameters from a log-variance, as the regression model does.
    pub fn from_log_sigma2(mu: f64, log_sigma2: f64, lambda: f64) -> Result<Self> {
        Self::new(mu, (0.5 * log_sigma2).exp(), lambda)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn standardize(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(SlnError::Domain(format!("non-finite observation {y}")));
        }
        Ok((y - self.mu) / self.sigma)
    }
}

pub fn log_pdf(y: f64, p: &SlnParams) -> Result<f64> {
    let s = p.standardize(y)?;
    Ok(-p.sigma.ln() - s.abs() + log_norm_cdf(p.lambda * s))
}

pub fn pdf(y: f64, p: &SlnParams) -> Result<f64> {
    log_pdf(y, p).map(f64::exp)
}

/// One draw of `μ + σ Z/V` with `V = (2T)^{-1/2}`, `T ~ Exp(1)`.
///
/// Given `V = v`, `Z` is skew normal with shape `λ/v` (not `λ`): the skewing
/// factor `Φ(λs)` acts on `s = Z/v`. Drawing `Z ~ SN(λ)` independently of `V`
/// gives a different law.
pub fn draw<R: Rng + ?Sized>(p: &SlnParams, rng: &mut R) -> f64 {
    let t: f64 = rng.sample(Exp1);
    // w = 1/V
    let w = (2.0 * t).sqrt();
    let shape = p.lambda * w;
    let delta = shape / (1.0 + shape * shape).sqrt();
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let z = delta * z1.abs() + (1.0 - delta * delta).sqrt() * z2;
    p.mu + p.sigma * z * w
}

/// `n` i.i.d. draws, deterministic given `seed`.
pub fn sample(p: &SlnParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| draw(p, &mut rng)).collect()
}

/// `E(V²|y) = σ/|y-μ|`, with `|y-μ|` floored at `eps·σ`.
pub fn cond_ev2_clamped(y: f64, p: &SlnParams, eps: f64) -> Result<f64> {
    let s = p.standardize(y)?;
    Ok(1.0 / s.abs().max(eps))
}

pub fn cond_ev2(y: f64, p: &SlnParams) -> Result<f64> {
    cond_ev2_clamped(y, p, DEFAULT_CLAMP_EPS)
}

/// `E(U|y)`: the mean of `N(λs, 1)` truncated to the positive half-line.
pub fn cond_eu1(y: f64, p: &SlnParams) -> Result<f64> {
    let s = p.standardize(y)?;
    Ok(trunc_normal_moments(p.lambda * s).0)
}

/// `E(U²|y) = 1 + λs·E(U|y)`.
pub fn cond_eu2(y: f64, p: &SlnParams) -> Result<f64> {
    let s = p.standardize(y)?;
    Ok(trunc_normal_moments(p.lambda * s).1)
}
