//! Dataset representation, link functions, the closed-form log-likelihood
//! with its analytic score and Hessian, and the GIG posterior for the
//! random effects.

mod lik;
mod links;
mod posterior;

pub use lik::{
    compute_ab, eval, hessian, hessian_eval_count, loglik, per_individual_scores, score, AbPair,
    EvalLevel, EvalOptions, ModelEval,
};
pub use links::{CustomMean, CustomVar, LinkSpec, MeanLink, VarLink};
pub use posterior::{posterior_gig, posterior_mean_v, predict_fitted};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::specfun::SpecFunError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("record {id}: {reason}")]
    BadRecord { id: String, reason: String },
    #[error("dataset must contain at least one individual")]
    EmptyDataset,
    #[error("theta is not admissible-interior (lambda={lambda}, delta={delta}, gamma={gamma})")]
    InadmissibleTheta { lambda: f64, delta: f64, gamma: f64 },
    #[error("log-likelihood non-finite for individual {id}")]
    NonFinite { id: String },
    #[error("custom link derivative check failed: {0}")]
    LinkDerivativeMismatch(String),
    #[error("custom variance link is not positive at probe point")]
    NonPositiveVariance,
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

/// One individual's responses and covariate matrices. `x`, `z`, `w` have
/// `n_i` rows each; unbalanced designs are the normal case.
#[derive(Debug, Clone)]
pub struct IndividualRecord {
    pub id: String,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl IndividualRecord {
    pub fn new(
        id: impl Into<String>,
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        w: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        let n = y.len();
        for (name, m) in [("x", &x), ("z", &z), ("w", &w)] {
            if m.nrows() != n {
                return Err(ModelError::BadRecord {
                    id,
                    reason: format!("{name} has {} rows, expected {n}", m.nrows()),
                });
            }
        }
        let finite = y.iter().all(|v| v.is_finite())
            && x.iter().all(|v| v.is_finite())
            && z.iter().all(|v| v.is_finite())
            && w.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::BadRecord { id, reason: "non-finite entries".into() });
        }
        Ok(Self { id, y, x, z, w })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
}

/// All individuals. Immutable after construction; covariate dimensions are
/// checked to agree across records here, so downstream code can rely on them.
#[derive(Debug, Clone)]
pub struct LongitudinalDataset {
    records: Vec<IndividualRecord>,
    p_x: usize,
    p_z: usize,
    p_w: usize,
}

impl LongitudinalDataset {
    pub fn new(records: Vec<IndividualRecord>) -> Result<Self, ModelError> {
        let first = records.first().ok_or(ModelError::EmptyDataset)?;
        let (p_x, p_z, p_w) = (first.x.ncols(), first.z.ncols(), first.w.ncols());
        for r in &records {
            if r.n_obs() == 0 {
                return Err(ModelError::BadRecord {
                    id: r.id.clone(),
                    reason: "individual has no observations".into(),
                });
            }
            if r.x.ncols() != p_x || r.z.ncols() != p_z || r.w.ncols() != p_w {
                return Err(ModelError::DimensionMismatch(format!(
                    "record {} covariate widths ({}, {}, {}) differ from ({p_x}, {p_z}, {p_w})",
                    r.id,
                    r.x.ncols(),
                    r.z.ncols(),
                    r.w.ncols()
                )));
            }
        }
        Ok(Self { records, p_x, p_z, p_w })
    }

    pub fn n_individuals(&self) -> usize {
        self.records.len()
    }

    pub fn n_obs_total(&self) -> usize {
        self.records.iter().map(|r| r.n_obs()).sum()
    }

    pub fn records(&self) -> &[IndividualRecord] {
        &self.records
    }

    pub fn covariate_dims(&self) -> (usize, usize, usize) {
        (self.p_x, self.p_z, self.p_w)
    }
}

/// Full parameter point `(beta, alpha, tau, lambda, delta, gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub tau: DVector<f64>,
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl Theta {
    pub fn new(
        beta: DVector<f64>,
        alpha: DVector<f64>,
        tau: DVector<f64>,
        lambda: f64,
        delta: f64,
        gamma: f64,
    ) -> Self {
        Self { beta, alpha, tau, lambda, delta, gamma }
    }

    pub fn admissible_interior(&self) -> bool {
        crate::dist::GigParams::new(self.lambda, self.delta, self.gamma).is_interior()
    }

    pub fn gig(&self) -> crate::dist::GigParams {
        crate::dist::GigParams::new(self.lambda, self.delta, self.gamma)
    }

    /// Full flat coordinates in the order (beta, alpha, tau, lambda, delta, gamma).
    pub fn to_full_vec(&self) -> DVector<f64> {
        let p = self.beta.len() + self.alpha.len() + self.tau.len() + 3;
        let mut v = DVector::zeros(p);
        let mut k = 0;
        for b in self.beta.iter() {
            v[k] = *b;
            k += 1;
        }
        for a in self.alpha.iter() {
            v[k] = *a;
            k += 1;
        }
        for t in self.tau.iter() {
            v[k] = *t;
            k += 1;
        }
        v[k] = self.lambda;
        v[k + 1] = self.delta;
        v[k + 2] = self.gamma;
        v
    }

    pub fn from_full_vec(v: &DVector<f64>, p_beta: usize, p_alpha: usize, p_tau: usize) -> Self {
        assert_eq!(v.len(), p_beta + p_alpha + p_tau + 3);
        let beta = DVector::from_iterator(p_beta, v.iter().take(p_beta).cloned());
        let alpha =
            DVector::from_iterator(p_alpha, v.iter().skip(p_beta).take(p_alpha).cloned());
        let tau = DVector::from_iterator(
            p_tau,
            v.iter().skip(p_beta + p_alpha).take(p_tau).cloned(),
        );
        let base = p_beta + p_alpha + p_tau;
        Self::new(beta, alpha, tau, v[base], v[base + 1], v[base + 2])
    }
}

/// Which of the GIG parameters are estimated.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Estimate (lambda, delta, gamma).
    Full,
    /// Hold lambda fixed at the given value (e.g. -1/2 for inverse Gaussian).
    FixedLambda(f64),
}

impl Family {
    pub fn has_lambda(&self) -> bool {
        matches!(self, Family::Full)
    }
}

/// Index bookkeeping between the full parameter vector and the free
/// coordinates of a family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamLayout {
    pub p_beta: usize,
    pub p_alpha: usize,
    pub p_tau: usize,
    pub family: Family,
}

impl ParamLayout {
    pub fn new(p_beta: usize, p_alpha: usize, p_tau: usize, family: Family) -> Self {
        Self { p_beta, p_alpha, p_tau, family }
    }

    pub fn for_model(ds: &LongitudinalDataset, links: &LinkSpec, family: Family) -> Self {
        let (p_x, p_z, p_w) = ds.covariate_dims();
        let p_alpha = links.mean_param_dim(p_z);
        let p_tau = links.var_param_dim(p_w);
        Self::new(p_x, p_alpha, p_tau, family)
    }

    pub fn full_dim(&self) -> usize {
        self.p_beta + self.p_alpha + self.p_tau + 3
    }

    pub fn free_dim(&self) -> usize {
        self.full_dim() - if self.family.has_lambda() { 0 } else { 1 }
    }

    pub fn lambda_index_full(&self) -> usize {
        self.p_beta + self.p_alpha + self.p_tau
    }

    /// Indices of the free coordinates inside the full vector.
    pub fn free_indices(&self) -> Vec<usize> {
        let lam = self.lambda_index_full();
        (0..self.full_dim())
            .filter(|&i| self.family.has_lambda() || i != lam)
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.free_dim());
        for i in 0..self.p_beta {
            out.push(format!("beta{i}"));
        }
        for i in 0..self.p_alpha {
            out.push(format!("alpha{i}"));
        }
        for i in 0..self.p_tau {
            out.push(format!("tau{i}"));
        }
        if self.family.has_lambda() {
            out.push("lambda".into());
        }
        out.push("delta".into());
        out.push("gamma".into());
        out
    }

    pub fn pack(&self, th: &Theta) -> DVector<f64> {
        let full = th.to_full_vec();
        let idx = self.free_indices();
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| full[i]))
    }

    pub fn unpack(&self, free: &DVector<f64>) -> Theta {
        let mut full = DVector::zeros(self.full_dim());
        if let Family::FixedLambda(l) = self.family {
            full[self.lambda_index_full()] = l;
        }
        for (k, &i) in self.free_indices().iter().enumerate() {
            full[i] = free[k];
        }
        Theta::from_full_vec(&full, self.p_beta, self.p_alpha, self.p_tau)
    }

    pub fn select_vec(&self, full: &DVector<f64>) -> DVector<f64> {
        let idx = self.free_indices();
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| full[i]))
    }

    pub fn select_mat(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        let idx = self.free_indices();
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| full[(idx[r], idx[c])])
    }
}

/// Box constraints on the natural parameter scale.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ThetaBounds {
    pub reg_abs: f64,
    pub lambda: (f64, f64),
    pub delta: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for ThetaBounds {
    fn default() -> Self {
        Self {
            reg_abs: 50.0,
            lambda: (-20.0, 20.0),
            delta: (1e-6, 100.0),
            gamma: (1e-6, 100.0),
        }
    }
}

impl ThetaBounds {
    pub fn contains(&self, th: &Theta) -> bool {
        th.beta.iter().chain(th.alpha.iter()).chain(th.tau.iter()).all(|v| v.abs() <= self.reg_abs)
            && th.lambda >= self.lambda.0
            && th.lambda <= self.lambda.1
            && th.delta >= self.delta.0
            && th.delta <= self.delta.1
            && th.gamma >= self.gamma.0
            && th.gamma <= self.gamma.1
    }

    /// Clip into the interior with the given margin; returns the clipped
    /// point and whether any coordinate moved.
    pub fn clip_interior(&self, th: &Theta, margin: f64) -> (Theta, bool) {
        let mut out = th.clone();
        let mut moved = false;
        let lim = self.reg_abs - margin;
        for v in out.beta.iter_mut().chain(out.alpha.iter_mut()).chain(out.tau.iter_mut()) {
            if v.abs() > lim {
                *v = v.signum() * lim;
                moved = true;
            }
        }
        let mut clip = |v: &mut f64, lo: f64, hi: f64| {
            let c = v.clamp(lo + margin, hi - margin);
            if c != *v {
                *v = c;
                moved = true;
            }
        };
        clip(&mut out.lambda, self.lambda.0, self.lambda.1);
        clip(&mut out.delta, self.delta.0, self.delta.1);
        clip(&mut out.gamma, self.gamma.0, self.gamma.1);
        (out, moved)
    }
}
