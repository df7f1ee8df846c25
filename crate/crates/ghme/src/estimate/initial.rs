//! The stepwise least-squares initial estimator: trend fit, variance fit,
//! skewness fit, and moment inversion to the GIG parameters.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::optim::{minimize_bfgs, BfgsOptions};
use super::EstimateError;
use crate::dist::{gig_mom_invert, GigParams, InversionMode, MomentTriple};
use crate::model::{Family, LinkSpec, LongitudinalDataset, Theta, ThetaBounds};

const C_MIN: f64 = 1e-8;
const SKEW_FLOOR: f64 = 1e-10;

/// Intermediate quantities of the stepwise construction.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub alpha0: DVector<f64>,
    pub beta0: DVector<f64>,
    pub mu0: f64,
    /// Heteroscedastic residuals, one vector per individual.
    pub e_hat: Vec<Vec<f64>>,
    pub tau0: Option<DVector<f64>>,
    pub c0: Option<f64>,
    pub rho0: Option<f64>,
    pub theta_prime0: Option<GigParams>,
}

#[derive(Debug, Clone)]
pub struct InitialFit {
    pub theta: Theta,
    pub state: InitialState,
    pub warnings: Vec<String>,
    pub wall_time: std::time::Duration,
}

pub struct Step1Out {
    pub alpha0: DVector<f64>,
    pub beta0: DVector<f64>,
    pub mu0: f64,
    pub e_hat: Vec<Vec<f64>>,
    pub objective: f64,
}

fn alpha_starts(p: usize) -> Vec<DVector<f64>> {
    // all nonzero: at alpha = 0 with an odd link the profiled mu is zero and
    // the alpha gradient vanishes identically, wedging the alternation
    let mut starts = vec![
        DVector::from_element(p, 0.1),
        DVector::from_element(p, 0.5),
        DVector::from_element(p, -0.5),
        DVector::from_fn(p, |i, _| if i % 2 == 0 { 0.8 } else { -0.8 }),
        DVector::from_fn(p, |i, _| if i % 2 == 0 { -0.8 } else { 0.8 }),
    ];
    starts.dedup();
    starts
}

/// Step 1: minimize `sum (y_ij - x_ij' beta - s_ij(alpha) mu)^2` by
/// alternating the closed-form linear solve in (beta, mu) with line-searched
/// Newton steps in alpha, from a fixed schedule of starts.
pub fn initial_step1(
    ds: &LongitudinalDataset,
    links: &LinkSpec,
    bounds: &ThetaBounds,
) -> Result<Step1Out, EstimateError> {
    let (p_x, p_z, _) = ds.covariate_dims();
    let p_a = links.mean_param_dim(p_z);
    let n_total = ds.n_obs_total();

    let m1 = |alpha: &DVector<f64>, beta: &DVector<f64>, mu: f64| -> f64 {
        let mut acc = 0.0;
        for rec in ds.records() {
            for j in 0..rec.n_obs() {
                let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
                let s = links.s_value(&z, alpha);
                let mean =
                    rec.x.row(j).iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
                let r = rec.y[j] - mean - s * mu;
                acc += r * r;
            }
        }
        acc
    };

    // closed-form (beta, mu) given alpha; returns None on singular design
    let solve_beta_mu = |alpha: &DVector<f64>| -> Option<(DVector<f64>, f64)> {
        let k = p_x + 1;
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        let mut d = DVector::<f64>::zeros(k);
        for rec in ds.records() {
            for j in 0..rec.n_obs() {
                let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
                let s = links.s_value(&z, alpha);
                for c in 0..p_x {
                    d[c] = rec.x[(j, c)];
                }
                d[p_x] = s;
                for r in 0..k {
                    for c in 0..k {
                        gram[(r, c)] += d[r] * d[c];
                    }
                    rhs[r] += d[r] * rec.y[j];
                }
            }
        }
        // a tiny ridge resolves exactly collinear designs (an intercept plus
        // a group dummy can make the skew column lie in the span of x, as in
        // the depression-study layout); the optimum is set-valued there and
        // any point in it leaves the residuals unchanged
        let ridge = 1e-8 * (gram.trace() / k as f64).max(1e-300);
        for i in 0..k {
            gram[(i, i)] += ridge;
        }
        let sol = gram.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let beta = DVector::from_iterator(p_x, sol.iter().take(p_x).cloned());
        Some((beta, sol[p_x]))
    };

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, f64, f64, usize)> = None;
    for (start_idx, a0) in alpha_starts(p_a).into_iter().enumerate() {
        let mut alpha = a0;
        let Some((mut beta, mut mu)) = solve_beta_mu(&alpha) else { continue };
        let mut obj = m1(&alpha, &beta, mu);
        let mut grad_norm = f64::INFINITY;
        for _ in 0..200 {
            // Newton in alpha at fixed (beta, mu)
            let mut g = DVector::<f64>::zeros(p_a);
            let mut h = DMatrix::<f64>::zeros(p_a, p_a);
            let mut ds_buf = DVector::<f64>::zeros(p_a);
            let mut d2s_buf = DMatrix::<f64>::zeros(p_a, p_a);
            for rec in ds.records() {
                for j in 0..rec.n_obs() {
                    let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
                    let s = links.s_grad(&z, &alpha, &mut ds_buf);
                    links.s_hess(&z, &alpha, &mut d2s_buf);
                    let mean =
                        rec.x.row(j).iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
                    let r = rec.y[j] - mean - s * mu;
                    for a in 0..p_a {
                        g[a] += -2.0 * mu * r * ds_buf[a];
                        for b in 0..p_a {
                            h[(a, b)] += 2.0 * mu * mu * ds_buf[a] * ds_buf[b]
                                - 2.0 * mu * r * d2s_buf[(a, b)];
                        }
                    }
                }
            }
            grad_norm = g.amax();
            let dir = match h.clone().lu().solve(&(-&g)) {
                Some(d) if d.dot(&g) < 0.0 => d,
                _ => -&g,
            };
            let mut step = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let cand = DVector::from_fn(p_a, |i, _| {
                    (alpha[i] + step * dir[i]).clamp(-bounds.reg_abs, bounds.reg_abs)
                });
                let cand_obj = m1(&cand, &beta, mu);
                if cand_obj < obj {
                    alpha = cand;
                    obj = cand_obj;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            // refresh (beta, mu) at the new alpha
            if let Some((b2, m2)) = solve_beta_mu(&alpha) {
                let obj2 = m1(&alpha, &b2, m2);
                if obj2 <= obj {
                    beta = b2;
                    mu = m2;
                    if (obj - obj2).abs() <= 1e-12 * (1.0 + obj) && !improved {
                        obj = obj2;
                        break;
                    }
                    obj = obj2;
                }
            }
            if !improved && grad_norm <= 1e-10 * (1.0 + obj) {
                break;
            }
            if !improved {
                break;
            }
        }
        let usable_mu = mu.abs() > 1e-10;
        let better = match &best {
            None => true,
            Some((bobj, _, _, bmu, bgrad, _)) => {
                let tied = (obj - bobj).abs() <= 1e-10 * bobj.abs().max(1.0);
                obj < bobj * (1.0 - 1e-10)
                    || (tied && usable_mu && bmu.abs() <= 1e-10)
                    || (tied && (usable_mu == (bmu.abs() > 1e-10)) && grad_norm < *bgrad)
            }
        };
        if better {
            best = Some((obj, alpha.clone(), beta.clone(), mu, grad_norm, start_idx));
        }
    }

    let Some((obj, mut alpha, beta, mut mu, _, _)) = best else {
        return Err(EstimateError::OptimFailed {
            stage: "initial step 1",
            reason: "trend fit failed for every start".into(),
            best_value: f64::INFINITY,
        });
    };
    if !obj.is_finite() {
        return Err(EstimateError::OptimFailed {
            stage: "initial step 1",
            reason: "objective non-finite".into(),
            best_value: obj,
        });
    }
    // resolve the (s, mu) sign aliasing when the link is odd
    if mu < 0.0 && links.mean_odd_in_alpha() {
        alpha = -alpha;
        mu = -mu;
    }
    let e_hat: Vec<Vec<f64>> = ds
        .records()
        .iter()
        .map(|rec| {
            (0..rec.n_obs())
                .map(|j| {
                    let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
                    let s = links.s_value(&z, &alpha);
                    let mean =
                        rec.x.row(j).iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
                    rec.y[j] - mean - s * mu
                })
                .collect()
        })
        .collect();
    Ok(Step1Out { alpha0: alpha, beta0: beta, mu0: mu, e_hat, objective: obj })
}

pub struct Step2Out {
    pub tau0: DVector<f64>,
    pub c0: f64,
    pub objective: f64,
}

/// Step 2: minimize `sum (e_ij^2 - sigma_ij^2(tau) mu0 - s_ij^2 c)^2` with c
/// profiled out in closed form for each tau, then clipped below at `C_MIN`.
pub fn initial_step2(
    ds: &LongitudinalDataset,
    links: &LinkSpec,
    s1: &Step1Out,
    bounds: &ThetaBounds,
) -> Result<Step2Out, EstimateError> {
    if !(s1.mu0 > 0.0) {
        return Err(EstimateError::OptimFailed {
            stage: "initial step 2",
            reason: format!("step 1 produced mu0 = {} <= 0", s1.mu0),
            best_value: f64::INFINITY,
        });
    }
    let (_, _, p_w) = ds.covariate_dims();
    let p_t = links.var_param_dim(p_w);
    let mu0 = s1.mu0;

    // per-observation caches of s^2 and e^2
    let mut s2: Vec<Vec<f64>> = Vec::with_capacity(ds.n_individuals());
    for (i, rec) in ds.records().iter().enumerate() {
        let mut row = Vec::with_capacity(rec.n_obs());
        for j in 0..rec.n_obs() {
            let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
            let s = links.s_value(&z, &s1.alpha0);
            row.push(s * s);
        }
        debug_assert_eq!(row.len(), s1.e_hat[i].len());
        s2.push(row);
    }
    let sum_s4: f64 = s2.iter().flatten().map(|&v| v * v).sum();
    if sum_s4 <= 1e-12 * ds.n_obs_total() as f64 {
        return Err(EstimateError::OptimFailed {
            stage: "initial step 2",
            reason: "sum of s^4 is numerically zero; c is unidentifiable".into(),
            best_value: f64::INFINITY,
        });
    }

    let profile = |tau: &DVector<f64>| -> (f64, f64) {
        // c*(tau) and the profiled objective
        let mut num = 0.0;
        for (i, rec) in ds.records().iter().enumerate() {
            for j in 0..rec.n_obs() {
                let w: Vec<f64> = rec.w.row(j).iter().cloned().collect();
                let sig2 = links.sig2_value(&w, tau);
                let e2 = s1.e_hat[i][j] * s1.e_hat[i][j];
                num += (e2 - sig2 * mu0) * s2[i][j];
            }
        }
        let c = (num / sum_s4).max(C_MIN);
        let mut obj = 0.0;
        for (i, rec) in ds.records().iter().enumerate() {
            for j in 0..rec.n_obs() {
                let w: Vec<f64> = rec.w.row(j).iter().cloned().collect();
                let sig2 = links.sig2_value(&w, tau);
                let e2 = s1.e_hat[i][j] * s1.e_hat[i][j];
                let r = e2 - sig2 * mu0 - s2[i][j] * c;
                obj += r * r;
            }
        }
        (obj, c)
    };

    let lo = DVector::from_element(p_t, -bounds.reg_abs);
    let hi = DVector::from_element(p_t, bounds.reg_abs);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for start in [
        DVector::zeros(p_t),
        DVector::from_element(p_t, 0.5),
        DVector::from_element(p_t, -0.5),
    ] {
        let out = minimize_bfgs(
            |tau| profile(tau).0,
            start,
            &lo,
            &hi,
            &BfgsOptions { max_iter: 400, ..Default::default() },
        );
        if best.as_ref().map_or(true, |(b, _)| out.value < *b) {
            best = Some((out.value, out.x));
        }
    }
    let (obj, tau0) = best.expect("at least one start");
    if !obj.is_finite() {
        return Err(EstimateError::OptimFailed {
            stage: "initial step 2",
            reason: "objective non-finite".into(),
            best_value: obj,
        });
    }
    let (_, c0) = profile(&tau0);
    Ok(Step2Out { tau0, c0, objective: obj })
}

/// Step 3: the closed-form skewness estimator
/// `rho = (sum s^6)^{-1} sum s^3 (e^3 - 3 s sigma^2 c)`.
pub fn initial_step3(
    ds: &LongitudinalDataset,
    links: &LinkSpec,
    s1: &Step1Out,
    s2: &Step2Out,
) -> Result<f64, EstimateError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, rec) in ds.records().iter().enumerate() {
        for j in 0..rec.n_obs() {
            let z: Vec<f64> = rec.z.row(j).iter().cloned().collect();
            let w: Vec<f64> = rec.w.row(j).iter().cloned().collect();
            let s = links.s_value(&z, &s1.alpha0);
            let sig2 = links.sig2_value(&w, &s2.tau0);
            let e = s1.e_hat[i][j];
            let s3 = s * s * s;
            num += s3 * (e * e * e - 3.0 * s * sig2 * s2.c0);
            den += s3 * s3;
        }
    }
    let mean_s6 = den / ds.n_obs_total() as f64;
    if mean_s6 < SKEW_FLOOR {
        return Err(EstimateError::DegenerateSkew { mean_s6 });
    }
    Ok(num / den)
}

/// Compose Steps 1-4 into an initial parameter point, clipped to the
/// interior of the parameter box.
pub fn initial_estimator(
    ds: &LongitudinalDataset,
    links: &LinkSpec,
    family: Family,
    bounds: &ThetaBounds,
) -> Result<InitialFit, EstimateError> {
    let start = Instant::now();
    let s1 = initial_step1(ds, links, bounds)?;
    let s2 = initial_step2(ds, links, &s1, bounds)?;
    let mut warnings = Vec::new();

    let (rho0, mode) = match family {
        Family::FixedLambda(l) => (None, InversionMode::FixedLambda(l)),
        Family::Full => {
            let rho = initial_step3(ds, links, &s1, &s2)?;
            (Some(rho), InversionMode::Full)
        }
    };
    let triple = MomentTriple {
        mu_v: s1.mu0,
        c_v: s2.c0,
        rho_v: rho0.unwrap_or(f64::NAN),
    };
    let gig = gig_mom_invert(&triple, mode)
        .map_err(|source| EstimateError::InversionFailed { triple, source })?;

    let theta = Theta::new(
        s1.beta0.clone(),
        s1.alpha0.clone(),
        s2.tau0.clone(),
        gig.lambda,
        gig.delta,
        gig.gamma,
    );
    let (theta, moved) = bounds.clip_interior(&theta, 1e-6);
    if moved {
        warnings.push("initial estimate clipped to the parameter box interior".into());
    }
    Ok(InitialFit {
        theta,
        state: InitialState {
            alpha0: s1.alpha0,
            beta0: s1.beta0,
            mu0: s1.mu0,
            e_hat: s1.e_hat,
            tau0: Some(s2.tau0),
            c0: Some(s2.c0),
            rho0,
            theta_prime0: Some(gig),
        },
        warnings,
        wall_time: start.elapsed(),
    })
}
