//! CSV tables, dataset assembly from named columns, and fit reports.

use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{Result, SlnError};
use crate::inference::{BootstrapReport, CriteriaReport};
use crate::model::{Block, Dataset, Theta};

pub const SCHEMA_VERSION: u32 = 1;

pub const INTERCEPT_LABEL: &str = "(intercept)";

/// Six significant digits, fixed notation for moderate magnitudes.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Numeric columns read from a CSV file with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| {
                SlnError::Structural(format!(
                    "column \"{name}\" not found (available: {})",
                    self.names.join(", ")
                ))
            })
    }
}

pub fn read_table<R: Read>(src: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(SlnError::Structural("CSV has no header row".into()));
    }
    for (j, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(SlnError::Structural(format!("CSV header {} is empty", j + 1)));
        }
        if names[..j].contains(name) {
            return Err(SlnError::Structural(format!("duplicate CSV column \"{name}\"")));
        }
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // the header is line 1
        let row = i + 1;
        for (j, name) in names.iter().enumerate() {
            let cell = rec.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                SlnError::Structural(format!(
                    "non-numeric value \"{cell}\" in column \"{name}\" at data row {row}"
                ))
            })?;
            if !v.is_finite() {
                return Err(SlnError::Structural(format!(
                    "non-finite value \"{cell}\" in column \"{name}\" at data row {row}"
                )));
            }
            columns[j].push(v);
        }
    }
    Ok(Table { names, columns })
}

pub fn read_table_path(path: &std::path::Path) -> Result<Table> {
    let f = std::fs::File::open(path).map_err(|e| SlnError::Io(format!("{}: {e}", path.display())))?;
    read_table(std::io::BufReader::new(f))
}

/// One value per coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerBlock<T> {
    pub beta: Vec<T>,
    pub gamma: Vec<T>,
    pub alpha: Vec<T>,
}

impl<T> PerBlock<T> {
    pub fn get(&self, b: Block) -> &[T] {
        match b {
            Block::Location => &self.beta,
            Block::Scale => &self.gamma,
            Block::Skewness => &self.alpha,
        }
    }
}

impl PerBlock<f64> {
    pub fn from_theta(t: &Theta) -> Self {
        PerBlock {
            beta: t.beta.iter().copied().collect(),
            gamma: t.gamma.iter().copied().collect(),
            alpha: t.alpha.iter().copied().collect(),
        }
    }

    pub fn from_stacked(v: &DVector<f64>, p: usize, q: usize, r: usize) -> Self {
        Self::from_theta(&Theta::from_stacked(v, p, q, r))
    }
}

/// Which table columns feed which linear predictor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSpec {
    pub response: String,
    pub loc: Vec<String>,
    pub scale: Vec<String>,
    pub skew: Vec<String>,
    /// Prepend a constant column to the location, scale, skewness designs.
    pub intercept: [bool; 3],
}

impl ModelSpec {
    fn block_cols(&self, b: Block) -> (&[String], bool) {
        match b {
            Block::Location => (&self.loc, self.intercept[0]),
            Block::Scale => (&self.scale, self.intercept[1]),
            Block::Skewness => (&self.skew, self.intercept[2]),
        }
    }
}

/// Builds the dataset and the coefficient labels for each block.
pub fn build_dataset(t: &Table, spec: &ModelSpec) -> Result<(Dataset, PerBlock<String>)> {
    let n = t.nrows();
    let y = DVector::from_column_slice(t.column(&spec.response)?);
    let mut designs = Vec::with_capacity(3);
    let mut labels = Vec::with_capacity(3);
    for b in Block::ALL {
        let (cols, icpt) = spec.block_cols(b);
        if cols.is_empty() && !icpt {
            return Err(SlnError::Structural(format!(
                "{} block has no columns and no intercept",
                b.to_string().to_lowercase()
            )));
        }
        let mut data: Vec<f64> = Vec::with_capacity(n * (cols.len() + 1));
        let mut names = Vec::new();
        if icpt {
            data.extend(std::iter::repeat_n(1.0, n));
            names.push(INTERCEPT_LABEL.to_string());
        }
        for c in cols {
            if *c == spec.response {
                return Err(SlnError::Structural(format!(
                    "response column \"{c}\" is also used as a {} covariate",
                    b.to_string().to_lowercase()
                )));
            }
            if names.contains(c) {
                return Err(SlnError::Structural(format!(
                    "column \"{c}\" listed twice in one block"
                )));
            }
            data.extend_from_slice(t.column(c)?);
            names.push(c.clone());
        }
        designs.push(DMatrix::from_column_slice(n, names.len(), &data));
        labels.push(names);
    }
    let w = designs.pop().unwrap();
    let z = designs.pop().unwrap();
    let x = designs.pop().unwrap();
    let alpha = labels.pop().unwrap();
    let gamma = labels.pop().unwrap();
    let beta = labels.pop().unwrap();
    Ok((Dataset::new(y, x, z, w)?, PerBlock { beta, gamma, alpha }))
}

/// Writes `y, x1.., z1.., w1..`. With `skip_intercept` the leading constant
/// column of each design is left out, to be re-added by the intercept flags.
pub fn write_dataset_csv<W: Write>(out: W, d: &Dataset, skip_intercept: bool) -> Result<()> {
    let skip = usize::from(skip_intercept);
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    for (prefix, m) in [("x", &d.x), ("z", &d.z), ("w", &d.w)] {
        header.extend((1..=m.ncols().saturating_sub(skip)).map(|j| format!("{prefix}{j}")));
    }
    wtr.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![fmt_sig(d.y[i])];
        for m in [&d.x, &d.z, &d.w] {
            rec.extend((skip..m.ncols()).map(|j| fmt_sig(m[(i, j)])));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// The JSON fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub labels: PerBlock<String>,
    pub estimates: PerBlock<f64>,
    pub bse: Option<PerBlock<f64>>,
    /// Bootstrap resamples drawn and how many were dropped.
    pub bootstrap_b: usize,
    pub bootstrap_failed: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub edc: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn new(
        d: &Dataset,
        labels: PerBlock<String>,
        fit: &FitResult,
        crit: &CriteriaReport,
        boot: Option<&BootstrapReport>,
    ) -> Self {
        let (p, q, r) = (d.p(), d.q(), d.r());
        let mut warnings = fit.warnings.clone();
        if let Some(b) = boot.filter(|b| b.n_failed > 0) {
            warnings.push(format!(
                "{} of {} bootstrap resamples failed and were dropped",
                b.n_failed, b.b
            ));
        }
        FitReport {
            schema_version: SCHEMA_VERSION,
            n: d.n(),
            p,
            q,
            r,
            labels,
            estimates: PerBlock::from_theta(&fit.theta_hat),
            bse: boot.map(|b| PerBlock::from_stacked(&b.se, p, q, r)),
            bootstrap_b: boot.map_or(0, |b| b.b),
            bootstrap_failed: boot.map_or(0, |b| b.n_failed),
            loglik: fit.loglik,
            aic: crit.aic,
            bic: crit.bic,
            edc: crit.edc,
            iterations: fit.n_iter,
            converged: fit.converged,
            warnings,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text summary: one row per coefficient, then the criteria.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<[String; 4]> = vec![[
            "Block".into(),
            "Term".into(),
            "Estimate".into(),
            if self.bse.is_some() {
                "BSE".into()
            } else {
                String::new()
            },
        ]];
        for b in Block::ALL {
            for (j, (label, est)) in self.labels.get(b).iter().zip(self.estimates.get(b)).enumerate() {
                let bse = self.bse.as_ref().map_or(String::new(), |s| fmt_sig(s.get(b)[j]));
                let block = if j == 0 { b.to_string() } else { String::new() };
                rows.push([block, format!("{}{j} {label}", b.coef_name()), fmt_sig(*est), bse]);
            }
        }
        let width: Vec<usize> = (0..4)
            .map(|k| rows.iter().map(|r| r[k].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for r in &rows {
            let line = format!(
                "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = width[0],
                w1 = width[1],
                w2 = width[2],
                w3 = width[3]
            );
            let _ = writeln!(s, "{}", line.trim_end());
        }
        let _ = writeln!(s);
        for (name, v) in [
            ("loglik", self.loglik),
            ("AIC", self.aic),
            ("BIC", self.bic),
            ("EDC", self.edc),
        ] {
            let _ = writeln!(s, "{name:<8}{:>14}", fmt_sig(v));
        }
        let _ = writeln!(
            s,
            "n = {}, iterations = {}, converged = {}",
            self.n, self.iterations, self.converged
        );
        if self.bse.is_some() {
            let _ = writeln!(
                s,
                "bootstrap resamples = {} ({} dropped)",
                self.bootstrap_b, self.bootstrap_failed
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
