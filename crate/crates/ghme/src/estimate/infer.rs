//! Studentized inference (outer-product and observed-information variants)
//! and the design identifiability diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{EstimateError, FitResult};
use crate::model::{self, EvalLevel, EvalOptions, LinkSpec, LongitudinalDataset, Theta};
use crate::util::normal_quantile;

/// Which information estimate Studentizes the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoVariant {
    /// Sum of outer products of per-individual scores.
    OuterProduct,
    /// Negative Hessian of the log-likelihood (observed information).
    ObservedInfo,
}

/// Augment a fit with information matrices, standard errors, confidence
/// intervals at the given level, and (when the true value is supplied, as in
/// the simulation harness) the Wald chi-square statistic.
pub fn studentize(
    ds: &LongitudinalDataset,
    links: &LinkSpec,
    mut fit: FitResult,
    variant: InfoVariant,
    level: f64,
    theta0: Option<&Theta>,
) -> Result<FitResult, EstimateError> {
    assert!(level > 0.0 && level < 1.0, "confidence level must be in (0,1)");
    let layout = fit.layout;
    let ev = model::eval(
        ds,
        &fit.theta_hat,
        links,
        EvalOptions {
            level: EvalLevel::Hessian,
            per_scores: true,
            lambda_derivs: layout.family.has_lambda(),
        },
    )?;
    let observed = -layout.select_mat(&ev.hessian.unwrap());
    let p = layout.free_dim();
    let mut outer = DMatrix::zeros(p, p);
    for s in ev.per_scores.as_ref().unwrap() {
        let sf = layout.select_vec(s);
        outer += &sf * sf.transpose();
    }

    let info = match variant {
        InfoVariant::OuterProduct => &outer,
        InfoVariant::ObservedInfo => &observed,
    };
    let eig = SymmetricEigen::new(info.clone());
    let min_eig = eig.eigenvalues.min();
    if min_eig <= 0.0 {
        return Err(EstimateError::IndefiniteInfo { min_eig });
    }
    // inverse through the eigendecomposition
    let inv = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
        * eig.eigenvectors.transpose();
    let se = DVector::from_fn(p, |i, _| inv[(i, i)].sqrt());
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let est = layout.pack(&fit.theta_hat);
    let ci_low = DVector::from_fn(p, |i, _| est[i] - z * se[i]);
    let ci_high = DVector::from_fn(p, |i, _| est[i] + z * se[i]);
    let wald = theta0.map(|t0| {
        let d = &est - layout.pack(t0);
        (d.transpose() * info * &d)[(0, 0)]
    });

    fit.observed_info = Some(observed);
    fit.outer_product_info = Some(outer);
    fit.se = Some(se);
    fit.ci_low = Some(ci_low);
    fit.ci_high = Some(ci_high);
    fit.level = Some(level);
    fit.wald_chisq = wald;
    Ok(fit)
}

/// Square root of a symmetric positive semi-definite matrix.
pub fn matrix_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * eig.eigenvectors.transpose()
}

/// Smallest eigenvalues of the design Gram matrices over grids of link
/// parameters, plus the sixth-moment skew diagnostic.
#[derive(Debug, Clone)]
pub struct DiagReport {
    pub q1_min_eigs: Vec<f64>,
    pub q2_min_eigs: Vec<f64>,
    pub mean_s6: f64,
    pub warnings: Vec<String>,
}

const EIG_FLOOR: f64 = 1e-6;

pub fn identifiability_diag(
    ds: &LongitudinalDataset,
    links: &LinkSpec,
    alpha_grid: &[DVector<f64>],
    tau_grid: &[DVector<f64>],
    mu0: f64,
    alpha0: &DVector<f64>,
) -> DiagReport {
    let n = ds.n_individuals() as f64;
    let (p_x, p_z, _) = ds.covariate_dims();
    let p_a = links.mean_param_dim(p_z);
    let mut warnings = Vec::new();

    let mut q1_min_eigs = Vec::with_capacity(alpha_grid.len());
    for alpha in alpha_grid {
        let dim = p_a + p_x + 1;
        let mut q = DMatrix::<f64>::zeros(dim, dim);
        let mut d = DVector::<f64>::zeros(dim);
        let mut ds_buf = DVector::<f64>::zeros(p_a);
        for rec in ds.records() {
            for j in 0..rec.n_obs() {
                let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
                links.s_grad(&z, alpha, &mut ds_buf);
                let s0 = links.s_value(&z, alpha0);
                for k in 0..p_a {
                    d[k] = mu0 * ds_buf[k];
                }
                for k in 0..p_x {
                    d[p_a + k] = rec.x[(j, k)];
                }
                d[p_a + p_x] = s0;
                for r in 0..dim {
                    for c in 0..dim {
                        q[(r, c)] += d[r] * d[c];
                    }
                }
            }
        }
        q /= n;
        let min = SymmetricEigen::new(q).eigenvalues.min();
        if min < EIG_FLOOR {
            warnings.push(format!(
                "Q1 smallest eigenvalue {min:.3e} below {EIG_FLOOR:.0e} at alpha = {alpha:?}"
            ));
        }
        q1_min_eigs.push(min);
    }

    let (_, _, p_w) = ds.covariate_dims();
    let p_t = links.var_param_dim(p_w);
    let mut q2_min_eigs = Vec::with_capacity(tau_grid.len());
    for tau in tau_grid {
        let dim = p_t + 1;
        let mut q = DMatrix::<f64>::zeros(dim, dim);
        let mut d = DVector::<f64>::zeros(dim);
        let mut dsig_buf = DVector::<f64>::zeros(p_t);
        for rec in ds.records() {
            for j in 0..rec.n_obs() {
                let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
                let w: Vec<f64> = rec.w.row(j).iter().cloned().collect();
                links.sig2_grad(&w, tau, &mut dsig_buf);
                let s0 = links.s_value(&z, alpha0);
                for k in 0..p_t {
                    d[k] = mu0 * dsig_buf[k];
                }
                d[p_t] = s0 * s0;
                for r in 0..dim {
                    for c in 0..dim {
                        q[(r, c)] += d[r] * d[c];
                    }
                }
            }
        }
        q /= n;
        let min = SymmetricEigen::new(q).eigenvalues.min();
        if min < EIG_FLOOR {
            warnings.push(format!(
                "Q2 smallest eigenvalue {min:.3e} below {EIG_FLOOR:.0e} at tau = {tau:?}"
            ));
        }
        q2_min_eigs.push(min);
    }

    let mut s6 = 0.0;
    for rec in ds.records() {
        for j in 0..rec.n_obs() {
            let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
            let s = links.s_value(&z, alpha0);
            s6 += s.powi(6);
        }
    }
    let mean_s6 = s6 / n;
    if mean_s6 < EIG_FLOOR {
        warnings.push(format!("third-moment diagnostic N^-1 sum s^6 = {mean_s6:.3e} is near zero"));
    }

    DiagReport { q1_min_eigs, q2_min_eigs, mean_s6, warnings }
}
