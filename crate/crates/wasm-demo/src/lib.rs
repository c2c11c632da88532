//! Browser bindings for the `sln-lss` demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use wasm_bindgen::prelude::*;

use sln_lss::em::{fit, FitOptions};
use sln_lss::inference::info_criteria;
use sln_lss::io::{FitReport, PerBlock, INTERCEPT_LABEL};
use sln_lss::sim::{gen_dataset, SimCase};
use sln_lss::sln::{pdf, sample};
use sln_lss::SlnParams;

/// Upper bound on points and draws so a slider cannot lock the tab.
const MAX_POINTS: usize = 1_000_000;

fn params(mu: f64, sigma: f64, lambda: f64) -> Result<SlnParams, String> {
    SlnParams::new(mu, sigma, lambda).map_err(|e| e.to_string())
}

/// Density on `points` equally spaced abscissae over `[lo, hi]`.
pub fn density_values(
    mu: f64,
    sigma: f64,
    lambda: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    let p = params(mu, sigma, lambda)?;
    if !(lo < hi) || !(2..=MAX_POINTS).contains(&points) {
        return Err(format!("need lo < hi and 2..={MAX_POINTS} points"));
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| pdf(lo + step * i as f64, &p).map_err(|e| e.to_string()))
        .collect()
}

/// Histogram of `n` draws on `bins` equal bins over `[lo, hi]`, scaled to a
/// density (draws outside the range count toward `n` only).
#[allow(clippy::too_many_arguments)]
pub fn histogram(
    mu: f64,
    sigma: f64,
    lambda: f64,
    n: usize,
    seed: u64,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>, String> {
    let p = params(mu, sigma, lambda)?;
    if !(lo < hi) || bins == 0 || n == 0 || n > MAX_POINTS || bins > MAX_POINTS {
        return Err("need lo < hi, n >= 1 and bins >= 1".into());
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for y in sample(&p, n, seed) {
        if (lo..hi).contains(&y) {
            let k = (((y - lo) / width) as usize).min(bins - 1);
            counts[k] += 1.0;
        }
    }
    let scale = 1.0 / (n as f64 * width);
    Ok(counts.into_iter().map(|c| c * scale).collect())
}

/// Simulates one dataset from a built-in case and fits it.
/// Returns `{"truth": {...}, "report": <fit report>}` as JSON.
pub fn fit_case_json(case: &str, n: usize, seed: u64) -> Result<String, String> {
    let case = SimCase::builtin(case).ok_or_else(|| format!("unknown case \"{case}\""))?;
    if n > 20_000 {
        return Err("n is capped at 20000 in the demo".into());
    }
    let d = gen_dataset(&case, n, seed);
    let res = fit(&d, None, &FitOptions::default()).map_err(|e| e.to_string())?;
    let crit = info_criteria(res.loglik, res.theta_hat.len(), d.n());
    let names = |prefix: &str, k: usize| -> Vec<String> {
        std::iter::once(INTERCEPT_LABEL.to_string())
            .chain((1..k).map(|j| format!("{prefix}{j}")))
            .collect()
    };
    let labels = PerBlock {
        beta: names("x", d.p()),
        gamma: names("z", d.q()),
        alpha: names("w", d.r()),
    };
    let report = FitReport::new(&d, labels, &res, &crit, None);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
    Ok(format!(
        "{{\"truth\":{{\"beta\":[{}],\"gamma\":[{}],\"alpha\":[{}]}},\"report\":{}}}",
        fmt(&case.beta0),
        fmt(&case.gamma0),
        fmt(&case.alpha0),
        report.to_json().map_err(|e| e.to_string())?
    ))
}

#[wasm_bindgen]
pub fn density_curve(
    mu: f64,
    sigma: f64,
    lambda: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    density_values(mu, sigma, lambda, lo, hi, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn sample_histogram(
    mu: f64,
    sigma: f64,
    lambda: f64,
    n: usize,
    seed: u32,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>, JsError> {
    histogram(mu, sigma, lambda, n, u64::from(seed), bins, lo, hi).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fit_case(case: &str, n: usize, seed: u32) -> Result<String, JsError> {
    fit_case_json(case, n, u64::from(seed)).map_err(|e| JsError::new(&e))
}
