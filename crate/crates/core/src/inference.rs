//! Information criteria and paired-bootstrap standard errors.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::em::{fit, FitOptions};
use crate::error::{Result, SlnError};
use crate::model::{Dataset, Theta};
use crate::seed::{mix_seed, rng_from_seed};

/// `-2ℓ + m·c_n` for the three penalties in common use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriteriaReport {
    pub loglik: f64,
    /// Free parameters, `p + q + r`.
    pub m: usize,
    pub n: usize,
    pub aic: f64,
    pub bic: f64,
    pub edc: f64,
}

/// AIC (`c_n = 2`), BIC (`c_n = log n`) and EDC (`c_n = 0.2√n`).
pub fn info_criteria(loglik: f64, m: usize, n: usize) -> CriteriaReport {
    let (mf, nf) = (m as f64, n as f64);
    let base = -2.0 * loglik;
    CriteriaReport {
        loglik,
        m,
        n,
        aic: base + 2.0 * mf,
        bic: base + mf * nf.ln(),
        edc: base + mf * 0.2 * nf.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReport {
    /// Resamples drawn.
    pub b: usize,
    /// Standard deviation of each stacked coefficient over converged resamples.
    pub se: DVector<f64>,
    /// Resamples that errored or did not converge; they are left out of `se`.
    pub n_failed: usize,
}

/// Bootstrap standard errors after fitting the full data first.
pub fn bootstrap_se(d: &Dataset, opts: &FitOptions, b: usize, seed: u64) -> Result<BootstrapReport> {
    let full = fit(d, None, opts)?;
    bootstrap_se_from(d, &full.theta_hat, opts, b, seed)
}

/// Paired bootstrap: resample rows `(y_i, x_i, z_i, w_i)` with replacement and
/// refit from `theta_hat`. Resample `k` draws its rows from
/// `mix_seed(seed, [k])`, so the result does not depend on thread scheduling.
pub fn bootstrap_se_from(
    d: &Dataset,
    theta_hat: &Theta,
    opts: &FitOptions,
    b: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if b < 2 {
        return Err(SlnError::Inference(format!("bootstrap needs B >= 2, got {b}")));
    }
    let n = d.n();
    let fits: Vec<Option<DVector<f64>>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(mix_seed(seed, &[k as u64]));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            match fit(&d.select_rows(&rows), Some(theta_hat), opts) {
                Ok(f) if f.converged => Some(f.theta_hat.stacked()),
                _ => None,
            }
        })
        .collect();
    let ok: Vec<DVector<f64>> = fits.into_iter().flatten().collect();
    let n_failed = b - ok.len();
    if ok.len() < 2 {
        return Err(SlnError::Inference(format!(
            "only {} of {b} bootstrap resamples converged",
            ok.len()
        )));
    }
    let k = ok.len() as f64;
    let mean = ok.iter().fold(DVector::zeros(theta_hat.len()), |acc, v| acc + v) / k;
    let var = ok.iter().fold(DVector::zeros(theta_hat.len()), |acc, v| {
        acc + (v - &mean).map(|e| e * e)
    }) / (k - 1.0);
    Ok(BootstrapReport {
        b,
        se: var.map(f64::sqrt),
        n_failed,
    })
}
