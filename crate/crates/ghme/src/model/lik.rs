//! Closed-form log-likelihood of the GH mixed-effects location-scale model,
//! with analytic score and Hessian assembled per individual.
//!
//! Everything is expressed through `log K`, the ratio `R`, and the curvature
//! `S` so that large `delta gamma` or large `A_i B_i` never leave log space.
//! Derivatives with respect to the order (the lambda blocks) use the
//! Richardson stencils from [`crate::specfun`].

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{IndividualRecord, LinkSpec, LongitudinalDataset, ModelError, Theta};
use crate::specfun::{k_derivs, KDerivs, KNeed};
use crate::util::KahanSum;

static HESSIAN_EVALS: AtomicU64 = AtomicU64::new(0);

/// Number of Hessian evaluations since process start (test instrumentation).
pub fn hessian_eval_count() -> u64 {
    HESSIAN_EVALS.load(Ordering::Relaxed)
}

/// The per-individual shorthand quantities
/// `A_i = sqrt(gamma^2 + sum_j s_ij^2 / sigma_ij^2)` and
/// `B_i = sqrt(delta^2 + sum_j (y_ij - x_ij' beta)^2 / sigma_ij^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbPair {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalLevel {
    Value,
    Score,
    Hessian,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub level: EvalLevel,
    pub per_scores: bool,
    /// When false the lambda row/column of score and Hessian is left at
    /// zero, skipping the order-derivative stencils. Fixed-lambda fits use
    /// this; the public `score`/`hessian` wrappers always compute it.
    pub lambda_derivs: bool,
}

impl EvalOptions {
    pub fn value() -> Self {
        Self { level: EvalLevel::Value, per_scores: false, lambda_derivs: false }
    }
    pub fn score() -> Self {
        Self { level: EvalLevel::Score, per_scores: false, lambda_derivs: true }
    }
    pub fn hessian() -> Self {
        Self { level: EvalLevel::Hessian, per_scores: false, lambda_derivs: true }
    }
}

#[derive(Debug, Clone)]
pub struct ModelEval {
    pub loglik: f64,
    pub score: Option<DVector<f64>>,
    pub hessian: Option<DMatrix<f64>>,
    pub per_scores: Option<Vec<DVector<f64>>>,
}

pub fn loglik(ds: &LongitudinalDataset, th: &Theta, links: &LinkSpec) -> Result<f64, ModelError> {
    Ok(eval(ds, th, links, EvalOptions::value())?.loglik)
}

pub fn score(
    ds: &LongitudinalDataset,
    th: &Theta,
    links: &LinkSpec,
) -> Result<DVector<f64>, ModelError> {
    Ok(eval(ds, th, links, EvalOptions::score())?.score.unwrap())
}

pub fn hessian(
    ds: &LongitudinalDataset,
    th: &Theta,
    links: &LinkSpec,
) -> Result<DMatrix<f64>, ModelError> {
    Ok(eval(ds, th, links, EvalOptions::hessian())?.hessian.unwrap())
}

pub fn per_individual_scores(
    ds: &LongitudinalDataset,
    th: &Theta,
    links: &LinkSpec,
) -> Result<Vec<DVector<f64>>, ModelError> {
    let opts = EvalOptions { per_scores: true, ..EvalOptions::score() };
    Ok(eval(ds, th, links, opts)?.per_scores.unwrap())
}

pub fn compute_ab(
    rec: &IndividualRecord,
    th: &Theta,
    links: &LinkSpec,
) -> Result<AbPair, ModelError> {
    check_record_dims(rec, th, links)?;
    let mut sum_s2 = 0.0;
    let mut sum_e2 = 0.0;
    for j in 0..rec.n_obs() {
        let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
        let w: Vec<f64> = rec.w.row(j).iter().cloned().collect();
        let s = links.s_value(&z, &th.alpha);
        let sig2 = links.sig2_value(&w, &th.tau);
        let eps = rec.y[j] - rec.x.row(j).iter().zip(th.beta.iter()).map(|(a, b)| a * b).sum::<f64>();
        sum_s2 += s * s / sig2;
        sum_e2 += eps * eps / sig2;
    }
    Ok(AbPair {
        a: (th.gamma * th.gamma + sum_s2).sqrt(),
        b: (th.delta * th.delta + sum_e2).sqrt(),
    })
}

fn check_record_dims(
    rec: &IndividualRecord,
    th: &Theta,
    links: &LinkSpec,
) -> Result<(), ModelError> {
    if rec.x.ncols() != th.beta.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "x has {} columns but beta has length {}",
            rec.x.ncols(),
            th.beta.len()
        )));
    }
    if links.mean_param_dim(rec.z.ncols()) != th.alpha.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "mean link expects alpha of length {} but got {}",
            links.mean_param_dim(rec.z.ncols()),
            th.alpha.len()
        )));
    }
    if links.var_param_dim(rec.w.ncols()) != th.tau.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "variance link expects tau of length {} but got {}",
            links.var_param_dim(rec.w.ncols()),
            th.tau.len()
        )));
    }
    Ok(())
}

pub fn eval(
    ds: &LongitudinalDataset,
    th: &Theta,
    links: &LinkSpec,
    mut opts: EvalOptions,
) -> Result<ModelEval, ModelError> {
    if opts.per_scores && opts.level < EvalLevel::Score {
        opts.level = EvalLevel::Score;
    }
    if !th.admissible_interior() {
        return Err(ModelError::InadmissibleTheta {
            lambda: th.lambda,
            delta: th.delta,
            gamma: th.gamma,
        });
    }
    check_record_dims(&ds.records()[0], th, links)?;
    if opts.level >= EvalLevel::Hessian {
        HESSIAN_EVALS.fetch_add(1, Ordering::Relaxed);
    }

    let need = match opts.level {
        EvalLevel::Value => KNeed::Value,
        EvalLevel::Score => KNeed::Score,
        EvalLevel::Hessian => KNeed::Hessian,
    };
    let t0 = th.delta * th.gamma;
    let prior = k_derivs(th.lambda, t0, need, opts.lambda_derivs)?;

    let parts: Result<Vec<IndividualTerms>, ModelError> = ds
        .records()
        .par_iter()
        .map(|rec| eval_individual(rec, th, links, &prior, opts, need))
        .collect();
    let parts = parts?;

    let p = th.beta.len() + th.alpha.len() + th.tau.len() + 3;
    let mut ll = KahanSum::new();
    let mut score_acc =
        if opts.level >= EvalLevel::Score { Some(DVector::zeros(p)) } else { None };
    let mut hess_acc =
        if opts.level >= EvalLevel::Hessian { Some(DMatrix::zeros(p, p)) } else { None };
    let mut per = if opts.per_scores { Some(Vec::with_capacity(parts.len())) } else { None };
    for part in parts {
        ll.add(part.zeta);
        if let (Some(acc), Some(s)) = (score_acc.as_mut(), part.score.as_ref()) {
            *acc += s;
        }
        if let (Some(acc), Some(h)) = (hess_acc.as_mut(), part.hess.as_ref()) {
            *acc += h;
        }
        if let Some(pv) = per.as_mut() {
            pv.push(part.score.expect("per_scores requires score level"));
        }
    }
    Ok(ModelEval { loglik: ll.value(), score: score_acc, hessian: hess_acc, per_scores: per })
}

struct IndividualTerms {
    zeta: f64,
    score: Option<DVector<f64>>,
    hess: Option<DMatrix<f64>>,
}

#[allow(clippy::too_many_lines)]
fn eval_individual(
    rec: &IndividualRecord,
    th: &Theta,
    links: &LinkSpec,
    prior: &KDerivs,
    opts: EvalOptions,
    need: KNeed,
) -> Result<IndividualTerms, ModelError> {
    let n = rec.n_obs();
    let (pb, pa, pt) = (th.beta.len(), th.alpha.len(), th.tau.len());
    let p = pb + pa + pt + 3;
    let (ib, ia, it) = (0usize, pb, pb + pa);
    let (il, id, ig) = (pb + pa + pt, pb + pa + pt + 1, pb + pa + pt + 2);
    let want_score = opts.level >= EvalLevel::Score;
    let want_hess = opts.level >= EvalLevel::Hessian;

    // per-observation link buffers
    let mut ds_j = DVector::zeros(pa);
    let mut d2s_j = DMatrix::zeros(pa, pa);
    let mut dsig2_j = DVector::zeros(pt);
    let mut d2sig2_j = DMatrix::zeros(pt, pt);

    // accumulated sums over observations
    let mut sum_log_sig2 = 0.0;
    let mut sum_se = 0.0;
    let mut sum_s2 = 0.0;
    let mut sum_e2 = 0.0;
    let mut sb1 = DVector::<f64>::zeros(pb);
    let mut bb = DVector::<f64>::zeros(pb);
    let mut sa1 = DVector::<f64>::zeros(pa);
    let mut aa = DVector::<f64>::zeros(pa);
    let mut st1 = DVector::<f64>::zeros(pt);
    let mut st2 = DVector::<f64>::zeros(pt);
    let mut ga = DVector::<f64>::zeros(pt);
    let mut gb = DVector::<f64>::zeros(pt);
    let mut hxx = DMatrix::zeros(pb, pb);
    let mut hxa = DMatrix::zeros(pb, pa);
    let mut hxt = DMatrix::zeros(pb, pt);
    let mut hbt = DMatrix::zeros(pb, pt);
    let mut haa_d2 = DMatrix::zeros(pa, pa);
    let mut aaa = DMatrix::zeros(pa, pa);
    let mut hat = DMatrix::zeros(pa, pt);
    let mut awt = DMatrix::zeros(pa, pt);
    let mut t1m = DMatrix::zeros(pt, pt);
    let mut t2m = DMatrix::zeros(pt, pt);
    let mut a2tt = DMatrix::zeros(pt, pt);
    let mut b2tt = DMatrix::zeros(pt, pt);

    let mut zrow = vec![0.0; rec.z.ncols()];
    let mut wrow = vec![0.0; rec.w.ncols()];
    let mut xrow = vec![0.0; pb];
    for j in 0..n {
        for (k, v) in zrow.iter_mut().enumerate() {
            *v = rec.z[(j, k)];
        }
        for (k, v) in wrow.iter_mut().enumerate() {
            *v = rec.w[(j, k)];
        }
        for (k, v) in xrow.iter_mut().enumerate() {
            *v = rec.x[(j, k)];
        }
        let (s, sig2) = if want_score {
            let s = links.s_grad(&zrow, &th.alpha, &mut ds_j);
            let sig2 = links.sig2_grad(&wrow, &th.tau, &mut dsig2_j);
            (s, sig2)
        } else {
            (links.s_value(&zrow, &th.alpha), links.sig2_value(&wrow, &th.tau))
        };
        if want_hess {
            links.s_hess(&zrow, &th.alpha, &mut d2s_j);
            links.sig2_hess(&wrow, &th.tau, &mut d2sig2_j);
        }
        let eps = rec.y[j] - xrow.iter().zip(th.beta.iter()).map(|(a, b)| a * b).sum::<f64>();
        let inv = 1.0 / sig2;
        let inv2 = inv * inv;

        sum_log_sig2 += sig2.ln();
        sum_se += s * eps * inv;
        sum_s2 += s * s * inv;
        sum_e2 += eps * eps * inv;

        if want_score {
            for k in 0..pb {
                sb1[k] += s * xrow[k] * inv;
                bb[k] += eps * xrow[k] * inv;
            }
            for k in 0..pa {
                sa1[k] += ds_j[k] * eps * inv;
                aa[k] += s * ds_j[k] * inv;
            }
            for k in 0..pt {
                st1[k] += dsig2_j[k] * inv;
                st2[k] += s * eps * dsig2_j[k] * inv2;
                ga[k] += s * s * dsig2_j[k] * inv2;
                gb[k] += eps * eps * dsig2_j[k] * inv2;
            }
        }
        if want_hess {
            for r in 0..pb {
                for c in 0..pb {
                    hxx[(r, c)] += xrow[r] * xrow[c] * inv;
                }
                for c in 0..pa {
                    hxa[(r, c)] += xrow[r] * ds_j[c] * inv;
                }
                for c in 0..pt {
                    hxt[(r, c)] += s * xrow[r] * dsig2_j[c] * inv2;
                    hbt[(r, c)] += eps * xrow[r] * dsig2_j[c] * inv2;
                }
            }
            for r in 0..pa {
                for c in 0..pa {
                    haa_d2[(r, c)] += eps * inv * d2s_j[(r, c)];
                    aaa[(r, c)] += (ds_j[r] * ds_j[c] + s * d2s_j[(r, c)]) * inv;
                }
                for c in 0..pt {
                    hat[(r, c)] += eps * ds_j[r] * dsig2_j[c] * inv2;
                    awt[(r, c)] += s * ds_j[r] * dsig2_j[c] * inv2;
                }
            }
            let inv3 = inv2 * inv;
            for r in 0..pt {
                for c in 0..pt {
                    let dd = dsig2_j[r] * dsig2_j[c];
                    let curved = 2.0 * dd * inv3 - d2sig2_j[(r, c)] * inv2;
                    t1m[(r, c)] += s * eps * curved;
                    t2m[(r, c)] += (sig2 * d2sig2_j[(r, c)] - dd) * inv2;
                    a2tt[(r, c)] += s * s * curved;
                    b2tt[(r, c)] += eps * eps * curved;
                }
            }
        }
    }

    let (lambda, delta, gamma) = (th.lambda, th.delta, th.gamma);
    let a = (gamma * gamma + sum_s2).sqrt();
    let b = (delta * delta + sum_e2).sqrt();
    let t = a * b;
    if !t.is_finite() || !(t > 0.0) {
        return Err(ModelError::NonFinite { id: rec.id.clone() });
    }
    let nu = lambda - n as f64 / 2.0;
    let kd = k_derivs(nu, t, need, opts.lambda_derivs)?;

    let zeta = -(n as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln()
        + lambda * (gamma / delta).ln()
        - prior.log_k
        - 0.5 * sum_log_sig2
        + nu * (b.ln() - a.ln())
        + sum_se
        + kd.log_k;
    if !zeta.is_finite() {
        return Err(ModelError::NonFinite { id: rec.id.clone() });
    }
    if !want_score {
        return Ok(IndividualTerms { zeta, score: None, hess: None });
    }

    let tp = kd.r + nu / t; // T_i'
    let d_b_beta = -&bb / b;
    let d_a_alpha = &aa / a;
    let d_a_tau = -&ga / (2.0 * a);
    let d_b_tau = -&gb / (2.0 * b);

    let mut g = DVector::zeros(p);
    for k in 0..pb {
        g[ib + k] = -sb1[k] + (nu / b) * d_b_beta[k] - tp * a * d_b_beta[k];
    }
    for k in 0..pa {
        g[ia + k] = sa1[k] - (nu / a) * d_a_alpha[k] - tp * b * d_a_alpha[k];
    }
    for k in 0..pt {
        g[it + k] = -0.5 * st1[k] - st2[k] + nu * (d_b_tau[k] / b - d_a_tau[k] / a)
            - tp * (a * d_b_tau[k] + b * d_a_tau[k]);
    }
    if opts.lambda_derivs {
        g[il] = (gamma / delta).ln() + b.ln() - a.ln() - prior.g1 + kd.g1;
    }
    g[id] = gamma * prior.r + nu * delta / (b * b) - tp * a * delta / b;
    g[ig] = 2.0 * lambda / gamma + delta * prior.r - nu * gamma / (a * a) - tp * b * gamma / a;

    if !want_hess {
        return Ok(IndividualTerms { zeta, score: Some(g), hess: None });
    }

    let u = kd.s + kd.r / t - nu / (t * t); // U_i
    let l = kd.l; // L_{nu}(A B)
    let t0 = delta * gamma;

    let d2b_bb = (&hxx - &d_b_beta * d_b_beta.transpose()) / b;
    let d2a_aa = (&aaa - &d_a_alpha * d_a_alpha.transpose()) / a;
    let d2b_bt = (&hbt - &d_b_beta * d_b_tau.transpose()) / b;
    let d2a_at = -(&d_a_alpha * d_a_tau.transpose() + &awt) / a;
    let d2b_tt = (&b2tt - 2.0 * &d_b_tau * d_b_tau.transpose()) / (2.0 * b);
    let d2a_tt = (&a2tt - 2.0 * &d_a_tau * d_a_tau.transpose()) / (2.0 * a);
    let d_ab_tau = b * &d_a_tau + a * &d_b_tau;
    let d2ab_tt = b * &d2a_tt
        + a * &d2b_tt
        + &d_a_tau * d_b_tau.transpose()
        + &d_b_tau * d_a_tau.transpose();

    let mut h = DMatrix::zeros(p, p);
    let set_block = |h: &mut DMatrix<f64>, r0: usize, c0: usize, m: &DMatrix<f64>| {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                h[(r0 + r, c0 + c)] = m[(r, c)];
            }
        }
    };

    // beta-beta
    let m = (b * &d2b_bb - &d_b_beta * d_b_beta.transpose()) * (nu / (b * b))
        - &d2b_bb * (tp * a)
        - (&d_b_beta * d_b_beta.transpose()) * (u * a * a);
    set_block(&mut h, ib, ib, &m);
    // beta-alpha
    let m = -&hxa - (&d_b_beta * d_a_alpha.transpose()) * (tp + u * t);
    set_block(&mut h, ib, ia, &m);
    // beta-tau
    let m = &hxt + (b * &d2b_bt - &d_b_beta * d_b_tau.transpose()) * (nu / (b * b))
        - (&d_b_beta * d_ab_tau.transpose()) * (u * a)
        - (&d_b_beta * d_a_tau.transpose()) * tp
        - &d2b_bt * (tp * a);
    set_block(&mut h, ib, it, &m);
    // alpha-alpha
    let m = &haa_d2 - (a * &d2a_aa - &d_a_alpha * d_a_alpha.transpose()) * (nu / (a * a))
        - (&d_a_alpha * d_a_alpha.transpose()) * (u * b * b)
        - &d2a_aa * (tp * b);
    set_block(&mut h, ia, ia, &m);
    // alpha-tau
    let m = -&hat - (a * &d2a_at - &d_a_alpha * d_a_tau.transpose()) * (nu / (a * a))
        - (&d_a_alpha * d_ab_tau.transpose()) * (u * b)
        - (&d_a_alpha * d_b_tau.transpose() + b * &d2a_at) * tp;
    set_block(&mut h, ia, it, &m);
    // tau-tau
    let m = &t1m - 0.5 * &t2m
        + ((b * &d2b_tt - &d_b_tau * d_b_tau.transpose()) / (b * b)
            - (a * &d2a_tt - &d_a_tau * d_a_tau.transpose()) / (a * a))
            * nu
        - (&d_ab_tau * d_ab_tau.transpose()) * u
        - &d2ab_tt * tp;
    set_block(&mut h, it, it, &m);

    // cross blocks with (lambda, delta, gamma)
    for k in 0..pb {
        if opts.lambda_derivs {
            h[(ib + k, il)] = -a * l * d_b_beta[k];
        }
        h[(ib + k, id)] = -2.0 * nu * delta / (b * b * b) * d_b_beta[k]
            - u * a * a * (delta / b) * d_b_beta[k]
            + tp * a * delta / (b * b) * d_b_beta[k];
        h[(ib + k, ig)] = -gamma * u * b * d_b_beta[k] - tp * (gamma / a) * d_b_beta[k];
    }
    for k in 0..pa {
        if opts.lambda_derivs {
            h[(ia + k, il)] = -2.0 * d_a_alpha[k] / a - b * l * d_a_alpha[k];
        }
        h[(ia + k, id)] = -delta * u * a * d_a_alpha[k] - tp * (delta / b) * d_a_alpha[k];
        h[(ia + k, ig)] = 2.0 * nu * gamma / (a * a * a) * d_a_alpha[k]
            - u * b * b * (gamma / a) * d_a_alpha[k]
            + tp * b * gamma / (a * a) * d_a_alpha[k];
    }
    for k in 0..pt {
        if opts.lambda_derivs {
            h[(it + k, il)] = -2.0 * d_a_tau[k] / a - l * d_ab_tau[k];
        }
        h[(it + k, id)] = -2.0 * nu * delta / (b * b * b) * d_b_tau[k]
            - u * a * (delta / b) * d_ab_tau[k]
            + (delta * tp / b) * ((a / b) * d_b_tau[k] - d_a_tau[k]);
        h[(it + k, ig)] = 2.0 * nu * gamma / (a * a * a) * d_a_tau[k]
            - u * b * (gamma / a) * d_ab_tau[k]
            + (gamma * tp / a) * ((b / a) * d_a_tau[k] - d_b_tau[k]);
    }
    if opts.lambda_derivs {
        h[(il, il)] = kd.g2 - prior.g2;
        h[(il, id)] = gamma * prior.l - a * (delta / b) * l;
        h[(il, ig)] = 2.0 / gamma - 2.0 * gamma / (a * a) + delta * prior.l - b * (gamma / a) * l;
    }
    h[(id, id)] = gamma * gamma * (prior.s + prior.r / t0)
        + nu * (1.0 / (b * b) - 2.0 * delta * delta / (b * b * b * b))
        - u * a * a * delta * delta / (b * b)
        - tp * a * (1.0 / b - delta * delta / (b * b * b));
    h[(id, ig)] = 2.0 * prior.r + t0 * prior.s - u * delta * gamma - tp * delta * gamma / t;
    h[(ig, ig)] = -2.0 * lambda / (gamma * gamma)
        + delta * delta * (prior.s + prior.r / t0)
        - nu * (1.0 / (a * a) - 2.0 * gamma * gamma / (a * a * a * a))
        - u * b * b * gamma * gamma / (a * a)
        - tp * b * (1.0 / a - gamma * gamma / (a * a * a));

    // mirror the upper triangle
    for r in 0..p {
        for c in 0..r {
            h[(r, c)] = h[(c, r)];
        }
    }

    Ok(IndividualTerms { zeta, score: Some(g), hess: Some(h) })
}
