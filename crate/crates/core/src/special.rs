//! Standard normal special functions with stable tails.
//!
//! The lower tail (`x < -5`) goes through the Laplace continued fraction for
//! the Mills ratio, which also yields the lower-truncated normal moments
//! without cancellation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// ln(sqrt(2π))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the continued-fraction path is used.
const LOWER_TAIL: f64 = -5.0;

/// Backward-recurrence depth; 40 terms already reach 1 ulp at the threshold.
const CF_DEPTH: usize = 64;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Tail terms of `R(t) = 1/(t + 1/(t + 2/(t + 3/(t + ...))))`.
///
/// With `F_k = k / (t + F_{k+1})` this returns `(F_1, F_2)`. Then
/// `φ(-t)/Φ(-t) = t + F_1`, the mean of `TN(-t, 1)` on `(0, ∞)` is `F_1` and its
/// second moment is `F_1 * F_2`. Requires `t` well into the tail.
fn mills_cf(t: f64) -> (f64, f64) {
    let mut f = 0.0;
    for k in (2..=CF_DEPTH).rev() {
        f = k as f64 / (t + f);
    }
    let f2 = f;
    (1.0 / (t + f2), f2)
}

/// `log Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < LOWER_TAIL {
        let t = -x;
        let (f1, _) = mills_cf(t);
        -0.5 * t * t - LN_SQRT_2PI - (t + f1).ln()
    } else if x < 0.0 {
        (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    }
}

/// Inverse Mills ratio `φ(x)/Φ(x)`.
///
/// Strictly decreasing, tends to `-x` as `x → -∞` and to zero as `x → ∞`
/// (underflows past `x ≈ 38`).
pub fn inv_mills(x: f64) -> f64 {
    if x < LOWER_TAIL {
        let t = -x;
        t + mills_cf(t).0
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// First two moments of `N(m, 1)` truncated to `(0, ∞)`.
///
/// Returns `(m + φ(m)/Φ(m), 1 + m·(m + φ(m)/Φ(m)))`; the lower tail is evaluated
/// without subtracting nearly equal quantities, so both stay positive.
pub fn trunc_normal_moments(m: f64) -> (f64, f64) {
    if m < LOWER_TAIL {
        let (f1, f2) = mills_cf(-m);
        (f1, f1 * f2)
    } else {
        let e1 = m + inv_mills(m);
        (e1, 1.0 + m * e1)
    }
}

/// `sqrt(2/π)`, the mean of a standard half-normal.
pub const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4;

/// `ln π`, the per-row constant of the expected complete-data log-likelihood.
pub(crate) fn ln_pi() -> f64 {
    PI.ln()
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    // Reference values from 50-digit mpmath evaluations.
    const INV_MILLS_REF: &[(f64, f64)] = &[
        (0.0, 0.797_884_560_802_865_355_88),
        (-40.0, 40.024_968_847_207_263_723),
        (10.0, 7.694_598_626_706_419_346_3e-23),
        (-300.0, 300.003_333_259_263_374_15),
        (-5.0, 5.186_503_967_125_842_115_6),
        (-8.0, 8.121_368_112_236_112_680_7),
        (5.0, 1.486_719_940_904_905_712_4e-6),
        (1.0, 0.287_599_970_939_178_361_23),
        (-1.0, 1.525_135_276_160_981_209_1),
        (-2.5, 2.822_744_797_663_907_250_5),
        (37.0, 2.120_006_551_524_605_626_9e-298),
        (-20.0, 20.049_753_068_527_850_542),
    ];

    const LOG_CDF_REF: &[(f64, f64)] = &[
        (0.0, -std::f64::consts::LN_2),
        (-40.0, -804.608_442_013_753_788_17),
        (10.0, -7.619_853_024_160_526_066e-24),
        (-300.0, -45_006.622_732_118_663_366),
        (-5.0, -15.064_998_393_988_725_736),
        (-8.0, -35.013_437_159_914_549_896),
        (5.0, -2.866_516_129_637_635_933_8e-7),
        (1.0, -0.172_753_779_023_449_889_53),
        (-1.0, -1.841_021_645_009_263_505_8),
        (-2.5, -5.081_648_277_278_690_498_4),
        (-20.0, -203.917_155_371_097_263_94),
    ];

    #[test]
    fn inv_mills_matches_high_precision_reference() {
        for &(x, want) in INV_MILLS_REF {
            let got = inv_mills(x);
            assert!(rel(got, want) < 1e-12, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn log_norm_cdf_matches_high_precision_reference() {
        for &(x, want) in LOG_CDF_REF {
            let got = log_norm_cdf(x);
            assert!(rel(got, want) < 1e-12, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn inv_mills_at_zero_is_half_normal_mean() {
        assert!(rel(inv_mills(0.0), HALF_NORMAL_MEAN) < 1e-15);
    }

    #[test]
    fn inv_mills_lower_tail_follows_asymptotic_series() {
        // φ(x)/Φ(x) = t + 1/t - 2/t^3 + 10/t^5 - 74/t^7 + ... with t = -x
        for &t in &[40.0_f64, 100.0, 300.0] {
            let series =
                t + 1.0 / t - 2.0 / t.powi(3) + 10.0 / t.powi(5) - 74.0 / t.powi(7) + 706.0 / t.powi(9);
            assert!(rel(inv_mills(-t), series) < 1e-10, "t={t}");
        }
    }

    #[test]
    fn inv_mills_strictly_decreasing_and_finite() {
        let mut prev = f64::INFINITY;
        let mut x = -300.0;
        while x <= 30.0 {
            let v = inv_mills(x);
            assert!(v.is_finite() && v > 0.0, "x={x}");
            assert!(v < prev, "not decreasing at x={x}");
            prev = v;
            x += 0.01;
        }
    }

    #[test]
    fn branch_boundary_is_continuous() {
        let a = inv_mills(LOWER_TAIL - 1e-12);
        let b = inv_mills(LOWER_TAIL + 1e-12);
        assert!(rel(a, b) < 1e-11);
        let a = log_norm_cdf(LOWER_TAIL - 1e-12);
        let b = log_norm_cdf(LOWER_TAIL + 1e-12);
        assert!(rel(a, b) < 1e-12);
    }

    #[test]
    fn truncated_moments_reference_values() {
        // m, E[U], E[U^2] from mpmath
        let cases = [
            (0.0, 0.797_884_560_802_865_355_88, 1.0),
            (5.0, 5.000_001_486_719_940_904_9, 26.000_007_433_599_704_525),
            (
                -30.0,
                0.033_259_667_433_677_037_071,
                0.002_209_976_989_688_887_866_3,
            ),
            (2.0, 2.055_247_862_678_989_959_1, 5.110_495_725_357_979_918_2),
        ];
        for (m, e1, e2) in cases {
            let (g1, g2) = trunc_normal_moments(m);
            assert!(rel(g1, e1) < 1e-12, "m={m}: {g1} vs {e1}");
            assert!(rel(g2, e2) < 1e-11, "m={m}: {g2} vs {e2}");
        }
    }

    #[test]
    fn truncated_moments_stay_positive_far_in_tail() {
        for &m in &[-1e3, -1e6, -1e150] {
            let (e1, e2) = trunc_normal_moments(m);
            assert!(e1 > 0.0 && e2 > 0.0 && e2 >= e1 * e1, "m={m}");
            assert!(rel(e1, -1.0 / m) < 1e-5);
        }
    }
}
