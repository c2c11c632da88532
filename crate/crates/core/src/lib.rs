//! Joint location, scale and skewness regression under the skew Laplace
//! normal distribution.
//!
//! Each response follows `SLN(x'β, exp(z'γ), w'α)`. Coefficients are
//! estimated by maximum likelihood with an EM algorithm built on the
//! distribution's normal scale-mixture representation; see [`em::fit`].

// NaN has to fail the parameter checks, hence `!(x > 0.0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod seed;
pub mod sim;
pub mod sln;
pub mod special;

pub use em::{e_step, fit, EStepCache, FitOptions, FitResult};
pub use error::{Result, SlnError};
pub use inference::{bootstrap_se, info_criteria, BootstrapReport, CriteriaReport};
pub use model::{observed_loglik, Block, Dataset, Theta};
pub use sim::{SimCase, SimConfig, SimTable};
pub use sln::SlnParams;
