//! Estimators: the stepwise least-squares initial estimator, the one-step
//! Newton correction, full maximum likelihood, Studentized inference, and
//! identifiability diagnostics.

mod fit;
mod infer;
mod initial;
pub(crate) mod optim;

pub use fit::{mle, one_step, FitOptions, MleStart};
pub use infer::{identifiability_diag, matrix_sqrt, studentize, DiagReport, InfoVariant};
pub use initial::{
    initial_estimator, initial_step1, initial_step2, initial_step3, InitialFit, InitialState,
};

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dist::{DistError, MomentTriple};
use crate::model::{ModelError, ParamLayout, Theta};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("optimization failed in {stage}: {reason} (best objective {best_value:.6e})")]
    OptimFailed { stage: &'static str, reason: String, best_value: f64 },
    #[error("skew link is numerically zero (mean s^6 = {mean_s6:.3e}); rho is unidentifiable")]
    DegenerateSkew { mean_s6: f64 },
    #[error("moment inversion failed for triple (mu={}, c={}, rho={}): {source}", triple.mu_v, triple.c_v, triple.rho_v)]
    InversionFailed { triple: MomentTriple, source: DistError },
    #[error("Hessian numerically singular (condition estimate {cond:.3e})")]
    SingularHessian { cond: f64 },
    #[error("information matrix not positive definite (smallest eigenvalue {min_eig:.3e})")]
    IndefiniteInfo { min_eig: f64 },
    #[error("maximum iterations ({0}) exceeded")]
    MaxIterExceeded(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Initial,
    OneStep,
    Mle,
}

impl std::fmt::Display for FitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitMethod::Initial => write!(f, "initial"),
            FitMethod::OneStep => write!(f, "one_step"),
            FitMethod::Mle => write!(f, "mle"),
        }
    }
}

/// The outcome of a fit, on the natural parameter scale. Information
/// matrices, standard errors, and intervals are on the free coordinates of
/// the fit's family and are populated by [`studentize`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub method: FitMethod,
    pub layout: ParamLayout,
    pub loglik_value: f64,
    /// -d2 loglik at theta_hat (observed information), free coordinates.
    pub observed_info: Option<DMatrix<f64>>,
    /// Sum of outer products of per-individual scores at theta_hat.
    pub outer_product_info: Option<DMatrix<f64>>,
    pub se: Option<DVector<f64>>,
    pub ci_low: Option<DVector<f64>>,
    pub ci_high: Option<DVector<f64>>,
    pub level: Option<f64>,
    pub wald_chisq: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Free-coordinate indices that ended on the parameter box boundary.
    pub at_bounds: Vec<usize>,
    pub hessian_singular: bool,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// A point-estimate-only result; information matrices and intervals are
    /// filled in by [`studentize`].
    pub fn bare(theta_hat: Theta, method: FitMethod, layout: ParamLayout) -> Self {
        Self {
            theta_hat,
            method,
            layout,
            loglik_value: f64::NAN,
            observed_info: None,
            outer_product_info: None,
            se: None,
            ci_low: None,
            ci_high: None,
            level: None,
            wald_chisq: None,
            converged: false,
            iterations: 0,
            wall_time: Duration::ZERO,
            at_bounds: Vec::new(),
            hessian_singular: false,
            warnings: Vec::new(),
        }
    }
}
