//! EM estimation for the joint location, scale and skewness model.
//!
//! The E-step replaces the latent `V²`, `U`, `U²` by their conditional
//! expectations; the M-step takes one Newton step on the resulting
//! Q-function, safeguarded by a ridge on `-H` and step halving against the
//! observed log-likelihood (a generalized EM, monotone by construction).
//!
//! Per row, with `a = (y - x'β) e^{-z'γ/2}` and `η = w'α`,
//!
//! ```text
//! Q_i = -log π - ½ z'γ - ½ (a² v̂ + û₂ - 2 η a û₁ + η² a²)
//! ```
//!
//! Score and Hessian below are the exact derivatives of this expression. In
//! particular the α-block of the score carries the squared residual:
//! `Σ (a û₁ - η a²) w`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlnError};
use crate::linalg::{lstsq, solve_sym};
use crate::model::{
    ensure_valid, linear_predictors, observed_loglik, row_terms, smoothed_loglik, Dataset, RowTerms, Theta,
};
use crate::sln::DEFAULT_CLAMP_EPS;
use crate::special::{ln_pi, trunc_normal_moments};

/// Conditional expectations of the latent variables, one entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepCache {
    /// `E(V²|y)`
    pub v_hat: DVector<f64>,
    /// `E(U|y)`
    pub u1_hat: DVector<f64>,
    /// `E(U²|y)`
    pub u2_hat: DVector<f64>,
    /// `(w'α)(y - x'β) e^{-z'γ/2}` at the parameters the cache was built from.
    pub kappa_hat: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub ridge0: f64,
    pub clamp_eps: f64,
    /// Largest score entry allowed at convergence.
    pub score_tol: f64,
    /// Extra step doublings tried after an accepted full Newton step; 0 keeps
    /// the plain Newton update.
    pub max_doublings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-6,
            max_iter: 1000,
            max_halvings: 30,
            ridge0: 1e-8,
            clamp_eps: DEFAULT_CLAMP_EPS,
            score_tol: 1e-5,
            max_doublings: 20,
        }
    }
}

impl FitOptions {
    pub fn check(&self) -> Result<()> {
        if !(self.tol > 0.0)
            || self.max_iter == 0
            || !(self.ridge0 >= 0.0)
            || !(self.clamp_eps > 0.0)
            || !(self.score_tol > 0.0)
        {
            return Err(SlnError::Structural(format!("invalid fit options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub loglik: f64,
    /// Smoothed log-likelihood at the starting value.
    pub initial_loglik: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Smoothed log-likelihood ([`smoothed_loglik`] at `clamp_eps`) after
    /// each iteration; nondecreasing.
    pub loglik_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Outcome of one safeguarded Newton step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub theta: Theta,
    /// Smoothed log-likelihood at `theta`.
    pub loglik: f64,
    /// Times the Newton step was halved before being accepted.
    pub halvings: usize,
    /// Times an accepted full step was doubled.
    pub doublings: usize,
    /// Ridge added to `-H`.
    pub tau: f64,
    /// False when every halving failed and `theta` is the input unchanged.
    pub accepted: bool,
}

fn check_finite(c: &EStepCache) -> Result<()> {
    for i in 0..c.v_hat.len() {
        let row = [c.v_hat[i], c.u1_hat[i], c.u2_hat[i], c.kappa_hat[i]];
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SlnError::numeric_row(format!("E-step produced {row:?}"), i));
        }
    }
    Ok(())
}

fn terms(d: &Dataset, t: &Theta) -> Result<Vec<RowTerms>> {
    let lp = linear_predictors(d, t)?;
    let rows = row_terms(d, &lp);
    if let Some(i) = rows
        .iter()
        .position(|r| !(r.std_resid.is_finite() && r.inv_sigma.is_finite() && r.lambda.is_finite()))
    {
        return Err(SlnError::numeric_row("non-finite linear predictor", i));
    }
    Ok(rows)
}

pub fn e_step(d: &Dataset, t: &Theta, clamp_eps: f64) -> Result<EStepCache> {
    let rows = terms(d, t)?;
    let n = rows.len();
    let mut c = EStepCache {
        v_hat: DVector::zeros(n),
        u1_hat: DVector::zeros(n),
        u2_hat: DVector::zeros(n),
        kappa_hat: DVector::zeros(n),
    };
    for (i, r) in rows.iter().enumerate() {
        let kappa = r.lambda * r.std_resid;
        let (u1, u2) = trunc_normal_moments(kappa);
        c.v_hat[i] = 1.0 / r.std_resid.abs().max(clamp_eps);
        c.u1_hat[i] = u1;
        c.u2_hat[i] = u2;
        c.kappa_hat[i] = kappa;
    }
    check_finite(&c)?;
    Ok(c)
}

fn check_cache(d: &Dataset, c: &EStepCache) -> Result<()> {
    if c.v_hat.len() != d.n() {
        return Err(SlnError::Structural(format!(
            "cache has {} rows, dataset has {}",
            c.v_hat.len(),
            d.n()
        )));
    }
    Ok(())
}

/// Expected complete-data log-likelihood `Q(θ; θ̂)` with the cache built at `θ̂`.
pub fn q_value(d: &Dataset, t: &Theta, c: &EStepCache) -> Result<f64> {
    check_cache(d, c)?;
    let rows = terms(d, t)?;
    let lnpi = ln_pi();
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let a = r.std_resid;
            let eta = r.lambda;
            -lnpi
                - 0.5 * r.log_sigma2
                - 0.5 * (a * a * c.v_hat[i] + c.u2_hat[i] - 2.0 * eta * a * c.u1_hat[i] + eta * eta * a * a)
        })
        .sum())
}

/// Scales row `i` of `m` by `s[i]`.
fn scale_rows(m: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= s[i];
    }
    out
}

/// `Σ s_i a_i` for row vectors `a_i` of `m`.
fn weighted_col_sum(m: &DMatrix<f64>, s: &[f64]) -> DVector<f64> {
    m.transpose() * DVector::from_column_slice(s)
}

/// Gradient of `Q(·; θ̂)` at `t`, stacked as `(β, γ, α)`.
pub fn score(d: &Dataset, t: &Theta, c: &EStepCache) -> Result<DVector<f64>> {
    check_cache(d, c)?;
    let rows = terms(d, t)?;
    let n = rows.len();
    let (mut gb, mut gg, mut ga) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (i, r) in rows.iter().enumerate() {
        let (a, e, eta, u1) = (r.std_resid, r.inv_sigma, r.lambda, c.u1_hat[i]);
        let big_d = c.v_hat[i] + eta * eta;
        let pull = a * big_d - eta * u1;
        gb[i] = e * pull;
        gg[i] = 0.5 * (a * pull - 1.0);
        ga[i] = a * u1 - a * a * eta;
    }
    let mut g = DVector::zeros(t.len());
    let (p, q, _) = t.dims();
    g.rows_mut(0, p).copy_from(&weighted_col_sum(&d.x, &gb));
    g.rows_mut(p, q).copy_from(&weighted_col_sum(&d.z, &gg));
    g.rows_mut(p + q, t.alpha.len())
        .copy_from(&weighted_col_sum(&d.w, &ga));
    Ok(g)
}

/// Hessian of `Q(·; θ̂)` at `t`; symmetric by construction.
pub fn hessian(d: &Dataset, t: &Theta, c: &EStepCache) -> Result<DMatrix<f64>> {
    check_cache(d, c)?;
    let rows = terms(d, t)?;
    let n = rows.len();
    let mut w = [
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    ];
    for (i, r) in rows.iter().enumerate() {
        let (a, e, eta, u1) = (r.std_resid, r.inv_sigma, r.lambda, c.u1_hat[i]);
        let big_d = c.v_hat[i] + eta * eta;
        let cross = u1 - 2.0 * a * eta;
        w[0][i] = -big_d * e * e; // ββ
        w[1][i] = e * (0.5 * eta * u1 - a * big_d); // βγ
        w[2][i] = -e * cross; // βα
        w[3][i] = 0.25 * a * (eta * u1 - 2.0 * a * big_d); // γγ
        w[4][i] = -0.5 * a * cross; // γα
        w[5][i] = -a * a; // αα
    }
    let (p, q, r) = t.dims();
    let m = p + q + r;
    let mut h = DMatrix::zeros(m, m);
    // (left design, right design, row offset, column offset, row weights)
    let blocks: [HessBlock; 6] = [
        (&d.x, &d.x, 0, 0, &w[0]),
        (&d.x, &d.z, 0, p, &w[1]),
        (&d.x, &d.w, 0, p + q, &w[2]),
        (&d.z, &d.z, p, p, &w[3]),
        (&d.z, &d.w, p, p + q, &w[4]),
        (&d.w, &d.w, p + q, p + q, &w[5]),
    ];
    for (left, right, r0, c0, wt) in blocks {
        let blk = left.transpose() * scale_rows(right, wt);
        h.view_mut((r0, c0), (left.ncols(), right.ncols()))
            .copy_from(&blk);
        if r0 != c0 {
            h.view_mut((c0, r0), (right.ncols(), left.ncols()))
                .copy_from(&blk.transpose());
        }
    }
    // diagonal blocks: symmetrize against rounding in the product
    let sym = (&h + h.transpose()) * 0.5;
    Ok(sym)
}

type HessBlock<'a> = (&'a DMatrix<f64>, &'a DMatrix<f64>, usize, usize, &'a [f64]);

/// One Newton step `θ + (-H)⁻¹ G` with ridge repair and step halving so the
/// smoothed log-likelihood never drops by more than `1e-12`.
pub fn m_step(d: &Dataset, t: &Theta, c: &EStepCache, opts: &FitOptions) -> Result<MStep> {
    let ll0 = smoothed_loglik(d, t, opts.clamp_eps)?;
    let g = score(d, t, c)?;
    m_step_from(d, t, c, &g, opts, ll0)
}

fn m_step_from(
    d: &Dataset,
    t: &Theta,
    c: &EStepCache,
    g: &DVector<f64>,
    opts: &FitOptions,
    ll0: f64,
) -> Result<MStep> {
    let h = hessian(d, t, c)?;
    let solved = solve_sym(&(-h), g, opts.ridge0)?;
    let (p, q, r) = t.dims();
    let base = t.stacked();
    let mut step = solved.x;
    for halvings in 0..=opts.max_halvings {
        let cand = Theta::from_stacked(&(&base + &step), p, q, r);
        // an overflowing candidate counts as a failed step
        if let Ok(ll) = smoothed_loglik(d, &cand, opts.clamp_eps) {
            if ll >= ll0 - 1e-12 {
                let mut out = MStep {
                    theta: cand,
                    loglik: ll,
                    halvings,
                    doublings: 0,
                    tau: solved.tau,
                    accepted: true,
                };
                if halvings == 0 && ll > ll0 {
                    extend(d, &base, &step, opts, &mut out);
                }
                return Ok(out);
            }
        }
        step *= 0.5;
    }
    Ok(MStep {
        theta: t.clone(),
        loglik: ll0,
        halvings: opts.max_halvings,
        doublings: 0,
        tau: solved.tau,
        accepted: false,
    })
}

/// Tries `base + 2^j step` for `j = 1, 2, ...` while the observed
/// log-likelihood keeps rising. Near a Laplace kink the Newton/IRLS update
/// only shrinks the pinned residual by a constant factor per iteration; this
/// jumps most of the remaining way.
fn extend(d: &Dataset, base: &DVector<f64>, step: &DVector<f64>, opts: &FitOptions, best: &mut MStep) {
    let (p, q, r) = best.theta.dims();
    let mut factor = 1.0;
    for j in 1..=opts.max_doublings {
        factor *= 2.0;
        let cand = Theta::from_stacked(&(base + step * factor), p, q, r);
        match smoothed_loglik(d, &cand, opts.clamp_eps) {
            Ok(ll) if ll > best.loglik => {
                best.theta = cand;
                best.loglik = ll;
                best.doublings = j;
            }
            _ => break,
        }
    }
}

/// Least-squares start: `β⁰` from `y ~ X`, `γ⁰` from `log(max(e², 1e-10)) ~ Z`, `α⁰ = 0`.
pub fn default_init(d: &Dataset) -> Result<Theta> {
    ensure_valid(d)?;
    let beta = lstsq(&d.x, &d.y)?;
    let resid = &d.y - &d.x * &beta;
    let log_r2 = resid.map(|e| (e * e).max(1e-10).ln());
    let gamma = lstsq(&d.z, &log_r2)?;
    Ok(Theta {
        beta,
        gamma,
        alpha: DVector::zeros(d.r()),
    })
}

fn max_abs_diff(a: &Theta, b: &Theta) -> f64 {
    (a.stacked() - b.stacked()).amax()
}

/// Runs EM from `init` (or [`default_init`]).
///
/// Stops once the change in log-likelihood and the largest coefficient change
/// are both below `tol` and the score at the current estimate, with the cache
/// rebuilt there, is below `score_tol`. The score condition keeps the loop
/// going while residuals pinned at the Laplace kink are still shrinking
/// towards the clamp.
pub fn fit(d: &Dataset, init: Option<&Theta>, opts: &FitOptions) -> Result<FitResult> {
    opts.check()?;
    ensure_valid(d)?;
    let mut theta = match init {
        Some(t) => {
            t.check_against(d)?;
            if !t.is_finite() {
                return Err(SlnError::Domain("initial value is not finite".into()));
            }
            t.clone()
        }
        None => default_init(d)?,
    };
    let initial_loglik = smoothed_loglik(d, &theta, opts.clamp_eps)?;
    let mut ll = initial_loglik;
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut n_iter = 0;
    let mut small_step = false;

    for k in 1..=opts.max_iter + 1 {
        let cache = e_step(d, &theta, opts.clamp_eps).map_err(|e| e.at_iteration(k))?;
        let g = score(d, &theta, &cache).map_err(|e| e.at_iteration(k))?;
        if small_step && g.amax() < opts.score_tol {
            converged = true;
            break;
        }
        if k > opts.max_iter {
            break;
        }
        n_iter = k;
        let ms = m_step_from(d, &theta, &cache, &g, opts, ll).map_err(|e| e.at_iteration(k))?;
        trace.push(ms.loglik);
        if !ms.accepted {
            warnings.push(format!(
                "iteration {k}: no ascent after {} step halvings; stopped at current estimate",
                opts.max_halvings
            ));
            break;
        }
        let dtheta = max_abs_diff(&ms.theta, &theta);
        let dll = (ms.loglik - ll).abs();
        theta = ms.theta;
        ll = ms.loglik;
        small_step = dll.max(dtheta) < opts.tol;
    }
    if !converged && warnings.is_empty() {
        warnings.push(format!("no convergence within {} iterations", opts.max_iter));
    }
    let loglik = observed_loglik(d, &theta)?;
    Ok(FitResult {
        theta_hat: theta,
        loglik,
        initial_loglik,
        n_iter,
        converged,
        loglik_trace: trace,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::HALF_NORMAL_MEAN;

    fn one_row(y: f64) -> Dataset {
        let one = DMatrix::from_element(1, 1, 1.0);
        Dataset::new(DVector::from_vec(vec![y]), one.clone(), one.clone(), one).unwrap()
    }

    #[test]
    fn zero_kappa_row() {
        let c = e_step(&one_row(1.0), &Theta::zeros(1, 1, 1), 1e-8).unwrap();
        assert_eq!(c.kappa_hat[0], 0.0);
        assert!((c.u1_hat[0] - HALF_NORMAL_MEAN).abs() < 1e-15);
        assert_eq!(c.u2_hat[0], 1.0);
        assert_eq!(c.v_hat[0], 1.0);
    }

    #[test]
    fn residual_equal_to_scale_gives_unit_weight() {
        // σ = exp(0.8/2), residual = σ
        let sigma = 0.4f64.exp();
        let t = Theta::new(vec![0.3], vec![0.8], vec![1.5]);
        let c = e_step(&one_row(0.3 + sigma), &t, 1e-8).unwrap();
        assert!((c.v_hat[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hand_evaluated_q() {
        let d = one_row(1.0);
        let t = Theta::zeros(1, 1, 1);
        let c = e_step(&d, &t, 1e-8).unwrap();
        let q = q_value(&d, &t, &c).unwrap();
        assert!((q - (-std::f64::consts::PI.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn clamp_caps_weight_at_exact_fit() {
        let c = e_step(&one_row(0.0), &Theta::zeros(1, 1, 1), 1e-8).unwrap();
        assert_eq!(c.v_hat[0], 1e8);
    }

    #[test]
    fn hessian_alpha_block_closed_form() {
        let d = Dataset::new(
            DVector::from_vec(vec![1.0, -2.0, 0.5]),
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, -0.3, 1.0, 0.9]),
        )
        .unwrap();
        let t = Theta::new(vec![0.1], vec![0.4], vec![0.2, -0.7]);
        let c = e_step(&d, &t, 1e-8).unwrap();
        let h = hessian(&d, &t, &c).unwrap();
        let mut want = DMatrix::zeros(2, 2);
        for i in 0..3 {
            let r = d.y[i] - 0.1;
            let wi = d.w.row(i).transpose();
            want -= (&wi * wi.transpose()) * (r * r * (-0.4f64).exp());
        }
        let got = h.view((2, 2), (2, 2));
        assert!((got - &want).amax() < 1e-14);
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn stationary_point_is_kept() {
        // y symmetric about 0 with constant designs: α = 0 and β = 0 are
        // stationary, γ solves 1 = mean(v̂ a²) which is a fixed point of EM.
        let y = DVector::from_vec(vec![-2.0, -1.0, 1.0, 2.0]);
        let one = DMatrix::from_element(4, 1, 1.0);
        let d = Dataset::new(y, one.clone(), one.clone(), one).unwrap();
        // mean |y| = 1.5 => σ = 1.5 at the Laplace MLE
        let t = Theta::new(vec![0.0], vec![2.0 * 1.5f64.ln()], vec![0.0]);
        let c = e_step(&d, &t, 1e-8).unwrap();
        let g = score(&d, &t, &c).unwrap();
        assert!(g.amax() < 1e-12, "{g}");
        let ms = m_step(&d, &t, &c, &FitOptions::default()).unwrap();
        assert!(ms.accepted);
        assert!(max_abs_diff(&ms.theta, &t) < 1e-12);
    }

    #[test]
    fn newton_is_exact_on_quadratic_q() {
        // q = r = 0: Q is a weighted least-squares objective in β
        let y = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7, -0.1]);
        let x = DMatrix::from_row_slice(5, 1, &[1.0, 0.5, -1.0, 2.0, 0.3]);
        let d = Dataset::new(y, x, DMatrix::zeros(5, 0), DMatrix::zeros(5, 0)).unwrap();
        let t = Theta::new(vec![0.2], vec![], vec![]);
        let c = e_step(&d, &t, 1e-8).unwrap();
        let opts = FitOptions {
            max_doublings: 0,
            ..FitOptions::default()
        };
        let ms = m_step(&d, &t, &c, &opts).unwrap();
        // maximizer of Σ -½ v̂ (y - xβ)²
        let num: f64 = (0..5).map(|i| c.v_hat[i] * d.x[(i, 0)] * d.y[i]).sum();
        let den: f64 = (0..5).map(|i| c.v_hat[i] * d.x[(i, 0)].powi(2)).sum();
        assert_eq!(ms.halvings, 0);
        assert!((ms.theta.beta[0] - num / den).abs() < 1e-12);
        let g = score(&d, &ms.theta, &c).unwrap();
        assert!(g.amax() < 1e-10);
    }

    #[test]
    fn default_init_recovers_exact_linear_response() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![0.5, -0.5, -1.5, -2.5]);
        let d = Dataset::new(y, x.clone(), x.clone(), x).unwrap();
        let t = default_init(&d).unwrap();
        assert!((t.beta[0] - 0.5).abs() < 1e-12 && (t.beta[1] + 1.0).abs() < 1e-12);
        // residuals are all clamped at 1e-10 ⇒ γ⁰ = (ln 1e-10, 0)
        assert!((t.gamma[0] - 1e-10f64.ln()).abs() < 1e-6 && t.gamma[1].abs() < 1e-6);
        assert_eq!(t.alpha, DVector::zeros(2));
    }

    #[test]
    fn too_few_rows_is_structural() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.1, 0.2, 1.0, 0.3, 0.4]);
        let one = DMatrix::from_element(2, 1, 1.0);
        let d = Dataset::new(DVector::from_vec(vec![1.0, 2.0]), x, one.clone(), one).unwrap();
        assert!(matches!(
            fit(&d, None, &FitOptions::default()),
            Err(SlnError::Structural(_))
        ));
    }

    #[test]
    fn bad_options_rejected() {
        let d = one_row(1.0);
        let opts = FitOptions {
            tol: 0.0,
            ..FitOptions::default()
        };
        assert!(fit(&d, None, &opts).is_err());
    }
}
