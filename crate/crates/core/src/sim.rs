//! Monte Carlo harness: synthetic data from known coefficients, replicated
//! EM fits, and per-parameter mean / MSE tables.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::em::{fit, FitOptions};
use crate::error::{Result, SlnError};
use crate::io::fmt_sig;
use crate::model::{linear_predictors, Block, Dataset, Theta};
use crate::seed::{mix_seed, rng_from_seed};
use crate::sln::{draw, SlnParams};

/// True coefficients of a simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCase {
    pub beta0: Vec<f64>,
    pub gamma0: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub label: String,
    /// First column of each design is the constant 1 (the rest are U(-1, 1)).
    pub intercept: bool,
}

impl SimCase {
    pub fn new(label: &str, beta0: Vec<f64>, gamma0: Vec<f64>, alpha0: Vec<f64>) -> Result<Self> {
        if beta0.is_empty() || gamma0.is_empty() || alpha0.is_empty() {
            return Err(SlnError::Structural(format!(
                "case {label}: every coefficient vector needs at least one entry"
            )));
        }
        if beta0.iter().chain(&gamma0).chain(&alpha0).any(|v| !v.is_finite()) {
            return Err(SlnError::Domain(format!("case {label}: non-finite coefficient")));
        }
        Ok(SimCase {
            beta0,
            gamma0,
            alpha0,
            label: label.to_string(),
            intercept: true,
        })
    }

    pub fn case_i() -> Self {
        Self::new(
            "I",
            vec![0.0, -1.0, -1.0],
            vec![0.0, -1.0, -1.0],
            vec![0.0, -1.0, -1.0],
        )
        .unwrap()
    }

    pub fn case_ii() -> Self {
        Self::new(
            "II",
            vec![0.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
        )
        .unwrap()
    }

    pub fn case_iii() -> Self {
        Self::new(
            "III",
            vec![1.0, 1.0, 0.0, 0.0, 1.0],
            vec![0.7, 0.7, 0.0, 0.0, 0.7],
            vec![0.5, 0.5, 0.0, 0.0, 0.5],
        )
        .unwrap()
    }

    /// Looks up a built-in case by its roman-numeral label.
    pub fn builtin(label: &str) -> Option<Self> {
        match label {
            "I" | "i" | "1" => Some(Self::case_i()),
            "II" | "ii" | "2" => Some(Self::case_ii()),
            "III" | "iii" | "3" => Some(Self::case_iii()),
            _ => None,
        }
    }

    pub fn theta(&self) -> Theta {
        Theta::new(self.beta0.clone(), self.gamma0.clone(), self.alpha0.clone())
    }

    pub fn max_dim(&self) -> usize {
        self.beta0.len().max(self.gamma0.len()).max(self.alpha0.len())
    }
}

/// Covariates i.i.d. U(-1, 1), optionally preceded by a column of ones.
fn design<R: Rng>(rng: &mut R, n: usize, cols: usize, intercept: bool) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols, |_, j| {
        if intercept && j == 0 {
            1.0
        } else {
            rng.random_range(-1.0..1.0)
        }
    })
}

/// One synthetic dataset of size `n` drawn from `case`.
pub fn gen_dataset(case: &SimCase, n: usize, stream_seed: u64) -> Dataset {
    let mut rng = rng_from_seed(stream_seed);
    let x = design(&mut rng, n, case.beta0.len(), case.intercept);
    let z = design(&mut rng, n, case.gamma0.len(), case.intercept);
    let w = design(&mut rng, n, case.alpha0.len(), case.intercept);
    let mut d = Dataset::new(DVector::zeros(n), x, z, w).expect("designs share n rows");
    let lp = linear_predictors(&d, &case.theta()).expect("case dimensions match its designs");
    for i in 0..n {
        let p = SlnParams::from_log_sigma2(lp.mu[i], lp.log_sigma2[i], lp.lambda[i])
            .expect("finite predictors from finite coefficients");
        d.y[i] = draw(&p, &mut rng);
    }
    d
}

/// Per-coordinate `(1/N) Σ (θ̂_j - θ)²` around the true value.
pub fn mse(estimates: &[Theta], truth: &Theta) -> Result<DVector<f64>> {
    if estimates.is_empty() {
        return Err(SlnError::Structural("mse: no estimates".into()));
    }
    let t = truth.stacked();
    let mut acc = DVector::zeros(t.len());
    for e in estimates {
        if e.dims() != truth.dims() {
            return Err(SlnError::Structural(
                "mse: estimate dimensions differ from truth".into(),
            ));
        }
        acc += (e.stacked() - &t).map(|v| v * v);
    }
    Ok(acc / estimates.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub case: SimCase,
    pub n_list: Vec<usize>,
    /// Replications per sample size.
    pub reps: usize,
    pub seed: u64,
    pub fit_options: FitOptions,
}

impl SimConfig {
    pub fn new(case: SimCase, n_list: Vec<usize>, reps: usize, seed: u64) -> Self {
        SimConfig {
            case,
            n_list,
            reps,
            seed,
            fit_options: FitOptions::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(SlnError::Structural("need at least one replication".into()));
        }
        if self.n_list.is_empty() {
            return Err(SlnError::Structural("no sample sizes given".into()));
        }
        let need = self.case.max_dim();
        if let Some(&n) = self.n_list.iter().find(|&&n| n < need) {
            return Err(SlnError::Structural(format!(
                "sample size {n} is smaller than the {need} coefficients of a block"
            )));
        }
        self.fit_options.check()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub block: Block,
    /// Index within the block (`beta1` has index 1).
    pub index: usize,
    pub n: usize,
    pub mean: f64,
    pub mse: f64,
}

impl SimRow {
    pub fn name(&self) -> String {
        format!("{}{}", self.block.coef_name(), self.index)
    }
}

/// Bookkeeping for one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSizeSummary {
    pub n: usize,
    pub converged: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTable {
    pub case_label: String,
    pub reps: usize,
    pub rows: Vec<SimRow>,
    pub sizes: Vec<SimSizeSummary>,
    pub warnings: Vec<String>,
}

/// Share of failed replications that triggers a table warning.
const FAILURE_WARN_FRACTION: f64 = 0.2;

/// Fits every replication for each sample size and tabulates mean and MSE.
///
/// Replication `j` at size `n` draws from seed `mix_seed(seed, [n, j])`, so the
/// table is identical however rayon schedules the work.
pub fn run_mc(config: &SimConfig) -> Result<SimTable> {
    config.check()?;
    let truth = config.case.theta();
    let (p, q, r) = truth.dims();
    let mut rows = Vec::new();
    let mut sizes = Vec::new();
    let mut warnings = Vec::new();

    for &n in &config.n_list {
        let outcomes: Vec<Option<Theta>> = (0..config.reps)
            .into_par_iter()
            .map(|j| {
                let d = gen_dataset(&config.case, n, mix_seed(config.seed, &[n as u64, j as u64]));
                match fit(&d, None, &config.fit_options) {
                    Ok(f) if f.converged => Some(f.theta_hat),
                    _ => None,
                }
            })
            .collect();
        let good: Vec<Theta> = outcomes.into_iter().flatten().collect();
        let failed = config.reps - good.len();
        sizes.push(SimSizeSummary {
            n,
            converged: good.len(),
            failed,
        });
        if failed as f64 > FAILURE_WARN_FRACTION * config.reps as f64 {
            warnings.push(format!(
                "n={n}: {failed} of {} replications did not converge",
                config.reps
            ));
        }
        if good.is_empty() {
            continue;
        }
        let errs = mse(&good, &truth)?;
        let mut mean = DVector::zeros(p + q + r);
        for t in &good {
            mean += t.stacked();
        }
        mean /= good.len() as f64;
        let mut k = 0;
        for block in Block::ALL {
            for index in 0..truth.block(block).len() {
                rows.push(SimRow {
                    block,
                    index,
                    n,
                    mean: mean[k],
                    mse: errs[k],
                });
                k += 1;
            }
        }
    }
    Ok(SimTable {
        case_label: config.case.label.clone(),
        reps: config.reps,
        rows,
        sizes,
        warnings,
    })
}

impl SimTable {
    pub fn get(&self, block: Block, index: usize, n: usize) -> Option<&SimRow> {
        self.rows
            .iter()
            .find(|r| r.block == block && r.index == index && r.n == n)
    }

    fn ns(&self) -> Vec<usize> {
        self.sizes.iter().map(|s| s.n).collect()
    }

    /// Parameter keys in table order.
    fn params(&self) -> Vec<(Block, usize)> {
        let mut out: Vec<(Block, usize)> = Vec::new();
        for r in &self.rows {
            if !out.contains(&(r.block, r.index)) {
                out.push((r.block, r.index));
            }
        }
        out
    }

    /// Long-format TSV: one line per (parameter, n).
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("case\tblock\tparam\tn\tmean\tmse\tconverged\tfailed\n");
        for r in &self.rows {
            let size = self
                .sizes
                .iter()
                .find(|z| z.n == r.n)
                .expect("row n has a summary");
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                self.case_label,
                r.block,
                r.name(),
                r.n,
                fmt_sig(r.mean),
                fmt_sig(r.mse),
                size.converged,
                size.failed
            );
        }
        s
    }

    /// Wide aligned text: model blocks down, (Mean, MSE) per n across.
    pub fn to_text(&self) -> String {
        let ns = self.ns();
        let mut s = format!(
            "Case {}: mean of the estimators and MSE ({} replications)\n",
            self.case_label, self.reps
        );
        let _ = write!(s, "{:<16}{:<8}", "Model", "n");
        for n in &ns {
            let _ = write!(s, "{:>26}", n);
        }
        s.push('\n');
        let _ = write!(s, "{:<24}", "");
        for _ in &ns {
            let _ = write!(s, "{:>13}{:>13}", "Mean", "MSE");
        }
        s.push('\n');
        let mut last_block = None;
        for (block, index) in self.params() {
            let label = if last_block != Some(block) {
                format!("{block} Model")
            } else {
                String::new()
            };
            last_block = Some(block);
            let _ = write!(s, "{:<16}{:<8}", label, format!("{}{}", block.coef_name(), index));
            for &n in &ns {
                match self.get(block, index, n) {
                    Some(r) => {
                        let _ = write!(s, "{:>13}{:>13}", fmt_sig(r.mean), fmt_sig(r.mse));
                    }
                    None => {
                        let _ = write!(s, "{:>13}{:>13}", "-", "-");
                    }
                }
            }
            s.push('\n');
        }
        for z in &self.sizes {
            if z.failed > 0 {
                let _ = writeln!(s, "n={}: {} converged, {} excluded", z.n, z.converged, z.failed);
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
