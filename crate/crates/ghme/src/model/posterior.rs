//! Conditional law of the random effect given an individual's data, and the
//! empirical-Bayes predictions built on it.
//!
//! With a diagonal scale matrix the conditional distribution of `v_i` given
//! `Y_i = y_i` is `GIG(lambda - n_i/2, B_i, A_i)`.

use nalgebra::DVector;

use super::{compute_ab, IndividualRecord, LinkSpec, ModelError, Theta};
use crate::dist::GigParams;
use crate::specfun;

/// Posterior GIG parameters `(lambda - n_i/2, B_i, A_i)` for one individual.
/// With no observations this degenerates to the prior `(lambda, delta, gamma)`.
pub fn posterior_gig(
    rec: &IndividualRecord,
    th: &Theta,
    links: &LinkSpec,
) -> Result<GigParams, ModelError> {
    let ab = compute_ab(rec, th, links)?;
    Ok(GigParams::new(th.lambda - rec.n_obs() as f64 / 2.0, ab.b, ab.a))
}

/// Posterior mean `E[v_i | Y_i] = (K_{nu+1}(eta psi) / K_nu(eta psi)) (eta / psi)`.
pub fn posterior_mean_v(
    rec: &IndividualRecord,
    th: &Theta,
    links: &LinkSpec,
) -> Result<f64, ModelError> {
    let p = posterior_gig(rec, th, links)?;
    let omega = p.delta * p.gamma;
    let lk = specfun::log_k_many(omega, &[p.lambda + 1.0, p.lambda]);
    Ok((lk[0] - lk[1]).exp() * p.delta / p.gamma)
}

/// Plug-in prediction `new_x' beta + s(new_z, alpha) * vhat_i` at fitted
/// parameters, using the posterior mean of the individual's random effect.
pub fn predict_fitted(
    rec: &IndividualRecord,
    th: &Theta,
    links: &LinkSpec,
    new_x: &DVector<f64>,
    new_z: &DVector<f64>,
) -> Result<f64, ModelError> {
    if new_x.len() != th.beta.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "new_x has length {} but beta has length {}",
            new_x.len(),
            th.beta.len()
        )));
    }
    let vhat = posterior_mean_v(rec, th, links)?;
    let z: Vec<f64> = new_z.iter().cloned().collect();
    let s = links.s_value(&z, &th.alpha);
    Ok(new_x.dot(&th.beta) + s * vhat)
}
