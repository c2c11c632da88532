//! Joint location, scale and skewness regression model.
//!
//! Each observation follows `SLN(μ_i, σ_i², λ_i)` with
//! `μ_i = x_i'β`, `log σ_i² = z_i'γ` and `λ_i = w_i'α`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlnError};
use crate::linalg::numerical_rank;
use crate::special::log_norm_cdf;

/// Responses plus the three design matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    /// Location covariates, `n × p`.
    pub x: DMatrix<f64>,
    /// Scale covariates, `n × q`.
    pub z: DMatrix<f64>,
    /// Skewness covariates, `n × r`.
    pub w: DMatrix<f64>,
}

/// Which of the three linear predictors a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Location,
    Scale,
    Skewness,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Location, Block::Scale, Block::Skewness];

    pub fn design_name(self) -> &'static str {
        match self {
            Block::Location => "X",
            Block::Scale => "Z",
            Block::Skewness => "W",
        }
    }

    pub fn coef_name(self) -> &'static str {
        match self {
            Block::Location => "beta",
            Block::Scale => "gamma",
            Block::Skewness => "alpha",
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Location => "Location",
            Block::Scale => "Scale",
            Block::Skewness => "Skewness",
        })
    }
}

impl Dataset {
    /// Checks only that the row counts agree; see [`validate`] for the rest.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        for (name, m) in [("X", &x), ("Z", &z), ("W", &w)] {
            if m.nrows() != n {
                return Err(SlnError::Structural(format!(
                    "{name} has {} rows but y has {n}",
                    m.nrows()
                )));
            }
        }
        Ok(Dataset { y, x, z, w })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn r(&self) -> usize {
        self.w.ncols()
    }

    pub fn design(&self, b: Block) -> &DMatrix<f64> {
        match b {
            Block::Location => &self.x,
            Block::Scale => &self.z,
            Block::Skewness => &self.w,
        }
    }

    /// A new dataset made of the given rows, in order (duplicates allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            x: self.x.select_rows(rows),
            z: self.z.select_rows(rows),
            w: self.w.select_rows(rows),
        }
    }
}

/// Stacked coefficients `(β, γ, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub alpha: DVector<f64>,
}

impl Theta {
    pub fn new(beta: Vec<f64>, gamma: Vec<f64>, alpha: Vec<f64>) -> Self {
        Theta {
            beta: DVector::from_vec(beta),
            gamma: DVector::from_vec(gamma),
            alpha: DVector::from_vec(alpha),
        }
    }

    pub fn zeros(p: usize, q: usize, r: usize) -> Self {
        Theta {
            beta: DVector::zeros(p),
            gamma: DVector::zeros(q),
            alpha: DVector::zeros(r),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.beta.len(), self.gamma.len(), self.alpha.len())
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.gamma.len() + self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, b: Block) -> &DVector<f64> {
        match b {
            Block::Location => &self.beta,
            Block::Scale => &self.gamma,
            Block::Skewness => &self.alpha,
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.beta
                .iter()
                .chain(self.gamma.iter())
                .chain(self.alpha.iter())
                .copied(),
        )
    }

    pub fn from_stacked(v: &DVector<f64>, p: usize, q: usize, r: usize) -> Self {
        assert_eq!(v.len(), p + q + r, "stacked length does not match block sizes");
        Theta {
            beta: v.rows(0, p).into_owned(),
            gamma: v.rows(p, q).into_owned(),
            alpha: v.rows(p + q, r).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.stacked().iter().all(|v| v.is_finite())
    }

    /// Parameter labels like `beta0`, `gamma2`, in stacked order.
    pub fn labels(&self) -> Vec<String> {
        Block::ALL
            .iter()
            .flat_map(|&b| (0..self.block(b).len()).map(move |j| format!("{}{j}", b.coef_name())))
            .collect()
    }

    pub(crate) fn check_against(&self, d: &Dataset) -> Result<()> {
        if self.dims() != (d.p(), d.q(), d.r()) {
            return Err(SlnError::Structural(format!(
                "theta has dimensions {:?} but dataset has (p, q, r) = ({}, {}, {})",
                self.dims(),
                d.p(),
                d.q(),
                d.r()
            )));
        }
        Ok(())
    }
}

/// The three linear predictors evaluated on every row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinPreds {
    pub mu: DVector<f64>,
    pub log_sigma2: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl LinPreds {
    pub fn sigma(&self, i: usize) -> f64 {
        (0.5 * self.log_sigma2[i]).exp()
    }
}

pub fn linear_predictors(d: &Dataset, t: &Theta) -> Result<LinPreds> {
    t.check_against(d)?;
    Ok(LinPreds {
        mu: &d.x * &t.beta,
        log_sigma2: &d.z * &t.gamma,
        lambda: &d.w * &t.alpha,
    })
}

/// Per-row pieces shared by the likelihood, E-step and derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowTerms {
    /// `z'γ`
    pub log_sigma2: f64,
    /// `exp(-z'γ/2) = 1/σ`
    pub inv_sigma: f64,
    /// `(y - x'β)/σ`
    pub std_resid: f64,
    /// `w'α`
    pub lambda: f64,
}

pub(crate) fn row_terms(d: &Dataset, lp: &LinPreds) -> Vec<RowTerms> {
    (0..d.n())
        .map(|i| {
            let inv_sigma = (-0.5 * lp.log_sigma2[i]).exp();
            RowTerms {
                log_sigma2: lp.log_sigma2[i],
                inv_sigma,
                std_resid: (d.y[i] - lp.mu[i]) * inv_sigma,
                lambda: lp.lambda[i],
            }
        })
        .collect()
}

/// Observed-data log-likelihood
/// `-½Σ z'γ - Σ |y - x'β| e^{-z'γ/2} + Σ log Φ(κ)`, `κ = (w'α)(y - x'β) e^{-z'γ/2}`.
pub fn observed_loglik(d: &Dataset, t: &Theta) -> Result<f64> {
    let lp = linear_predictors(d, t)?;
    let mut total = 0.0;
    for (i, rt) in row_terms(d, &lp).iter().enumerate() {
        let kappa = rt.lambda * rt.std_resid;
        let li = -0.5 * rt.log_sigma2 - rt.std_resid.abs() + log_norm_cdf(kappa);
        if !li.is_finite() {
            return Err(SlnError::numeric_row(
                format!("log-likelihood contribution is {li}"),
                i,
            ));
        }
        total += li;
    }
    Ok(total)
}

/// `|a|` with the tip of the cone replaced by a parabola on `|a| < eps`.
pub(crate) fn huber_abs(a: f64, eps: f64) -> f64 {
    let m = a.abs();
    if m < eps {
        0.5 * (a * a / eps + eps)
    } else {
        m
    }
}

/// Observed log-likelihood with `|y - x'β| e^{-z'γ/2}` smoothed by
/// [`huber_abs`] at `eps`.
///
/// EM with the residual clamp is a minorize–maximize scheme for exactly this
/// function, so it is what each iteration increases. It sits below
/// [`observed_loglik`] by at most `n·eps/2`.
pub fn smoothed_loglik(d: &Dataset, t: &Theta, eps: f64) -> Result<f64> {
    let lp = linear_predictors(d, t)?;
    let mut total = 0.0;
    for (i, rt) in row_terms(d, &lp).iter().enumerate() {
        let kappa = rt.lambda * rt.std_resid;
        let li = -0.5 * rt.log_sigma2 - huber_abs(rt.std_resid, eps) + log_norm_cdf(kappa);
        if !li.is_finite() {
            return Err(SlnError::numeric_row(
                format!("log-likelihood contribution is {li}"),
                i,
            ));
        }
        total += li;
    }
    Ok(total)
}

/// A problem found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LengthMismatch {
        matrix: &'static str,
        rows: usize,
        n: usize,
    },
    NonFiniteResponse {
        row: usize,
    },
    NonFiniteCovariate {
        matrix: &'static str,
        row: usize,
        col: usize,
    },
    TooFewRows {
        matrix: &'static str,
        n: usize,
        cols: usize,
    },
    RankDeficient {
        matrix: &'static str,
        rank: usize,
        cols: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { matrix, rows, n } => {
                write!(f, "{matrix} has {rows} rows but y has {n}")
            }
            Violation::NonFiniteResponse { row } => write!(f, "y is not finite at row {row}"),
            Violation::NonFiniteCovariate { matrix, row, col } => {
                write!(f, "{matrix} is not finite at row {row}, column {col}")
            }
            Violation::TooFewRows { matrix, n, cols } => {
                write!(f, "{matrix} has {cols} columns but only {n} rows")
            }
            Violation::RankDeficient { matrix, rank, cols } => {
                write!(f, "{matrix} rank-deficient (rank {rank} < {cols} columns)")
            }
        }
    }
}

/// Reports every structural problem with a dataset; `Ok` when there are none.
pub fn validate(d: &Dataset) -> std::result::Result<(), Vec<Violation>> {
    let n = d.n();
    let mut out = Vec::new();
    for (row, v) in d.y.iter().enumerate() {
        if !v.is_finite() {
            out.push(Violation::NonFiniteResponse { row });
        }
    }
    for b in Block::ALL {
        let m = d.design(b);
        let matrix = b.design_name();
        if m.nrows() != n {
            out.push(Violation::LengthMismatch {
                matrix,
                rows: m.nrows(),
                n,
            });
            continue;
        }
        let mut finite = true;
        for row in 0..m.nrows() {
            for col in 0..m.ncols() {
                if !m[(row, col)].is_finite() {
                    out.push(Violation::NonFiniteCovariate { matrix, row, col });
                    finite = false;
                }
            }
        }
        if m.ncols() > n {
            out.push(Violation::TooFewRows {
                matrix,
                n,
                cols: m.ncols(),
            });
        } else if finite && m.ncols() > 0 {
            let rank = numerical_rank(m);
            if rank < m.ncols() {
                out.push(Violation::RankDeficient {
                    matrix,
                    rank,
                    cols: m.ncols(),
                });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// [`validate`] folded into a single structural error.
pub fn ensure_valid(d: &Dataset) -> Result<()> {
    validate(d)
        .map_err(|vs| SlnError::Structural(vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sln::{log_pdf, SlnParams};
    use rand::Rng;

    fn random_dataset(n: usize, p: usize, q: usize, r: usize, seed: u64) -> Dataset {
        let mut rng = crate::seed::rng_from_seed(seed);
        let mut m = |c: usize| {
            DMatrix::from_fn(
                n,
                c,
                |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) },
            )
        };
        let x = m(p);
        let z = m(q);
        let w = m(r);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        Dataset::new(y, x, z, w).unwrap()
    }

    #[test]
    fn zero_theta_gives_zero_predictors() {
        let d = random_dataset(10, 3, 2, 2, 1);
        let lp = linear_predictors(&d, &Theta::zeros(3, 2, 2)).unwrap();
        assert!(lp
            .mu
            .iter()
            .chain(lp.log_sigma2.iter())
            .chain(lp.lambda.iter())
            .all(|&v| v == 0.0));
        assert!((0..10).all(|i| lp.sigma(i) == 1.0));
    }

    #[test]
    fn single_row_dot_product() {
        let d = Dataset::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let t = Theta::new(vec![0.5, -1.0], vec![0.0], vec![0.0]);
        assert_eq!(linear_predictors(&d, &t).unwrap().mu[0], -1.5);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let d = random_dataset(10, 3, 2, 2, 1);
        assert!(matches!(
            linear_predictors(&d, &Theta::zeros(2, 2, 2)),
            Err(SlnError::Structural(_))
        ));
        assert!(Dataset::new(
            DVector::zeros(3),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(3, 1)
        )
        .is_err());
    }

    #[test]
    fn single_row_loglik_is_log_half() {
        let d = Dataset::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let l = observed_loglik(&d, &Theta::zeros(1, 1, 1)).unwrap();
        assert!((l - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loglik_is_sum_of_row_log_densities() {
        let mut rng = crate::seed::rng_from_seed(77);
        for seed in 0..10 {
            let d = random_dataset(25, 3, 2, 3, seed);
            let t = Theta::new(
                (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..3).map(|_| rng.random_range(-5.0..5.0)).collect(),
            );
            let lp = linear_predictors(&d, &t).unwrap();
            let want: f64 = (0..d.n())
                .map(|i| {
                    let p = SlnParams::from_log_sigma2(lp.mu[i], lp.log_sigma2[i], lp.lambda[i]).unwrap();
                    log_pdf(d.y[i], &p).unwrap()
                })
                .sum();
            let got = observed_loglik(&d, &t).unwrap();
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn loglik_finite_under_extreme_skew() {
        let d = random_dataset(30, 2, 2, 2, 4);
        let t = Theta::new(vec![5.0, -5.0], vec![-8.0, 3.0], vec![300.0, -250.0]);
        assert!(observed_loglik(&d, &t).unwrap().is_finite());
    }

    #[test]
    fn smoothed_loglik_brackets_exact() {
        let d = random_dataset(30, 2, 2, 2, 9);
        let t = Theta::new(vec![0.1, -0.4], vec![0.3, 0.2], vec![1.0, -2.0]);
        let exact = observed_loglik(&d, &t).unwrap();
        for eps in [1e-8, 1e-3, 0.5] {
            let sm = smoothed_loglik(&d, &t, eps).unwrap();
            assert!(sm <= exact && exact - sm <= 0.5 * eps * d.n() as f64 + 1e-12);
        }
        assert_eq!(huber_abs(-3.0, 1e-8), 3.0);
        assert_eq!(huber_abs(0.0, 1e-8), 0.5e-8);
    }

    #[test]
    fn validate_accepts_well_formed() {
        assert_eq!(validate(&random_dataset(40, 3, 3, 3, 2)), Ok(()));
    }

    #[test]
    fn validate_flags_duplicate_column() {
        let mut d = random_dataset(40, 3, 3, 3, 2);
        let c = d.x.column(1).into_owned();
        d.x.set_column(2, &c);
        let v = validate(&d).unwrap_err();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("X rank-deficient"));
    }

    #[test]
    fn validate_names_nan_row() {
        let mut d = random_dataset(40, 3, 3, 3, 2);
        d.y[17] = f64::NAN;
        let v = validate(&d).unwrap_err();
        assert_eq!(v, vec![Violation::NonFiniteResponse { row: 17 }]);
        assert!(v[0].to_string().contains("row 17"));
    }

    #[test]
    fn validate_flags_wide_design() {
        let d = random_dataset(2, 3, 1, 1, 2);
        let v = validate(&d).unwrap_err();
        assert!(v
            .iter()
            .any(|e| matches!(e, Violation::TooFewRows { matrix: "X", .. })));
    }

    #[test]
    fn stacked_round_trip_and_labels() {
        let t = Theta::new(vec![1.0, 2.0], vec![3.0], vec![4.0, 5.0, 6.0]);
        assert_eq!(Theta::from_stacked(&t.stacked(), 2, 1, 3), t);
        assert_eq!(
            t.labels(),
            ["beta0", "beta1", "gamma0", "alpha0", "alpha1", "alpha2"]
        );
    }
}
