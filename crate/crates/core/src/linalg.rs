//! Small dense linear algebra: ridge-safeguarded symmetric solves,
//! least squares and numerical rank.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlnError};

/// Relative tolerance on singular values for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// Outcome of [`solve_sym`]: the solution and the ridge that made the
/// factorization succeed.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolve {
    pub x: DVector<f64>,
    pub tau: f64,
}

/// In-place Cholesky of `a + tau*I` (lower triangle). `None` if a pivot is
/// not safely positive.
fn cholesky_shifted(a: &DMatrix<f64>, tau: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(tau.abs(), f64::max);
    let floor = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + tau;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut z = b.clone();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// Solves `(A + τI) x = b` for symmetric `A`, escalating `τ` through
/// `0, ridge0, 10·ridge0, ...` until the Cholesky pivots are positive.
pub fn solve_sym(a: &DMatrix<f64>, b: &DVector<f64>, ridge0: f64) -> Result<RidgeSolve> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(SlnError::Structural(format!(
            "solve_sym: matrix is {}x{}, rhs has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(SlnError::numeric("solve_sym: non-finite system"));
    }
    if n == 0 {
        return Ok(RidgeSolve {
            x: DVector::zeros(0),
            tau: 0.0,
        });
    }
    let norm = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let limit = 1e6 * norm.max(f64::MIN_POSITIVE);
    let base = if ridge0 > 0.0 {
        ridge0
    } else {
        f64::EPSILON * norm.max(1.0)
    };
    let mut tau = 0.0;
    loop {
        if let Some(l) = cholesky_shifted(a, tau) {
            return Ok(RidgeSolve {
                x: cholesky_solve(&l, b),
                tau,
            });
        }
        tau = if tau == 0.0 { base } else { tau * 10.0 };
        if tau > limit {
            return Err(SlnError::Singular { tau, limit });
        }
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Rank with singular values below `RANK_TOL * σ_max` treated as zero.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Ordinary least squares `argmin ||m b - y||`; errors on rank deficiency.
pub fn lstsq(m: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if m.nrows() != y.len() {
        return Err(SlnError::Structural(format!(
            "lstsq: {} rows but {} responses",
            m.nrows(),
            y.len()
        )));
    }
    if m.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    if numerical_rank(m) < m.ncols() {
        return Err(SlnError::Structural("lstsq: design is rank-deficient".into()));
    }
    m.clone()
        .svd(true, true)
        .solve(y, 0.0)
        .map_err(|e| SlnError::numeric(format!("lstsq: {e}")))
}
