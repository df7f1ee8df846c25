//! Shared oracles for integration tests: adaptive Gauss-Kronrod quadrature,
//! an independent integral-representation evaluation of `K_nu`, and finite
//! difference helpers. Everything here is deliberately independent of the
//! library's own evaluation paths.
#![allow(dead_code)]

// G7-K15 abscissae/weights (positive half), the classic QUADPACK pair.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut resk = 0.0;
    let mut resg = 0.0;
    for i in 0..8 {
        let x = h * XGK[i];
        let (fa, fb) = (f(c - x), f(c + x));
        let fsum = if i == 7 { f(c) } else { fa + fb };
        resk += WGK[i] * fsum;
        if i % 2 == 1 {
            resg += WG[i / 2] * fsum;
        }
    }
    if (7..8).contains(&7) {
        // center point belongs to both rules; fsum above already handled it
    }
    (resk * h, (resk - resg).abs() * h)
}

/// Adaptive G7-K15 quadrature to absolute tolerance `tol`.
pub fn quad<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, a, b);
        if err <= tol || depth >= 52 {
            return val;
        }
        let c = 0.5 * (a + b);
        rec(f, a, c, tol / 2.0, depth + 1) + rec(f, c, b, tol / 2.0, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// Oracle for log K_nu(t) from the defining integral
/// K_nu(t) = \int_0^inf exp(-t cosh u) cosh(nu u) du,
/// evaluated with a max-shift so it works far outside the representable
/// range of K itself.
pub fn oracle_log_k(nu: f64, t: f64) -> f64 {
    let nu = nu.abs();
    // g(u) = log cosh(nu u) - t (cosh u - 1)
    let g = |u: f64| {
        let lc = if nu * u > 30.0 {
            nu * u - std::f64::consts::LN_2
        } else {
            (nu * u).cosh().ln()
        };
        lc - t * (u.cosh() - 1.0)
    };
    // coarse scan for the max and an effective upper limit
    let mut m = g(0.0);
    let u_end;
    let mut u = 0.0;
    loop {
        u += 0.005;
        let gu = g(u);
        if gu > m {
            m = gu;
        }
        if gu < m - 80.0 || u > 80.0 {
            u_end = u;
            break;
        }
    }
    let shifted = |u: f64| (g(u) - m).exp();
    let integral = quad(&shifted, 0.0, u_end, 1e-15);
    m + integral.ln() - t
}

/// Sixth-order central difference with Richardson refinement over the step
/// sequence {h, h/2, h/4}; independent of the library's own stencils.
pub fn fd_derivative<F: Fn(f64) -> f64>(f: &F, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

pub fn fd_second_derivative<F: Fn(f64) -> f64>(f: &F, x: f64, h: f64) -> f64 {
    let f0 = f(x);
    let d = |h: f64| (f(x + h) - 2.0 * f0 + f(x - h)) / (h * h);
    let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

pub fn assert_rel_close(got: f64, want: f64, tol: f64, what: &str) {
    let denom = want.abs().max(f64::MIN_POSITIVE);
    let rel = (got - want).abs() / denom;
    assert!(
        rel <= tol,
        "{what}: got {got:.15e}, want {want:.15e} (rel err {rel:.3e} > {tol:.1e})"
    );
}

// ---------------------------------------------------------------------------
// Test-side data simulation, independent of the library's harness module.
// ---------------------------------------------------------------------------

use ghme::dist::{gig_sample_with, GigParams};
use ghme::model::{IndividualRecord, LinkSpec, LongitudinalDataset, Theta};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub fn theta_sec23_case_i() -> Theta {
    Theta::new(
        DVector::from_vec(vec![0.3, 0.5]),
        DVector::from_vec(vec![-0.04, 0.05]),
        DVector::from_vec(vec![0.05, 0.07]),
        1.2,
        1.5,
        2.0,
    )
}

pub fn theta_sec32_ig() -> Theta {
    Theta::new(
        DVector::from_vec(vec![3.0, 5.0]),
        DVector::from_vec(vec![-4.0, 5.0]),
        DVector::from_vec(vec![0.05, 0.07]),
        -0.5,
        1.5,
        0.7,
    )
}

/// Simulate a dataset with iid N(0, I_2) covariates under the given truth;
/// returns the dataset and the latent random effects.
pub fn simulate_gh(
    n_individuals: usize,
    n_obs: usize,
    th: &Theta,
    links: &LinkSpec,
    rng: &mut ChaCha12Rng,
) -> (LongitudinalDataset, Vec<f64>) {
    let gig = GigParams::new(th.lambda, th.delta, th.gamma);
    let v = gig_sample_with(&gig, n_individuals, rng).unwrap();
    let mut records = Vec::with_capacity(n_individuals);
    for (i, &vi) in v.iter().enumerate() {
        let mut y = DVector::zeros(n_obs);
        let mut x = DMatrix::zeros(n_obs, th.beta.len());
        let mut z = DMatrix::zeros(n_obs, th.alpha.len());
        let mut w = DMatrix::zeros(n_obs, th.tau.len());
        for j in 0..n_obs {
            for k in 0..x.ncols() {
                x[(j, k)] = rng.sample::<f64, _>(StandardNormal);
            }
            for k in 0..z.ncols() {
                z[(j, k)] = rng.sample::<f64, _>(StandardNormal);
            }
            for k in 0..w.ncols() {
                w[(j, k)] = rng.sample::<f64, _>(StandardNormal);
            }
            let zr: Vec<f64> = z.row(j).iter().cloned().collect();
            let wr: Vec<f64> = w.row(j).iter().cloned().collect();
            let s = links.s_value(&zr, &th.alpha);
            let sig2 = links.sig2_value(&wr, &th.tau);
            let eps: f64 = rng.sample(StandardNormal);
            let mean: f64 = x.row(j).iter().zip(th.beta.iter()).map(|(a, b)| a * b).sum();
            y[j] = mean + s * vi + (vi * sig2).sqrt() * eps;
        }
        records.push(IndividualRecord::new(format!("id{i}"), y, x, z, w).unwrap());
    }
    (LongitudinalDataset::new(records).unwrap(), v)
}

/// Mixture-integral evaluation of one individual's log-likelihood
/// contribution: log of \int prod_j phi(y_j; x_j'b + s_j v, sig2_j v) p_GIG(v) dv,
/// integrated adaptively in log space.
pub fn oracle_zeta(rec: &IndividualRecord, th: &Theta, links: &LinkSpec) -> f64 {
    use ghme::dist::gig_logpdf;
    let gig = GigParams::new(th.lambda, th.delta, th.gamma);
    let log_integrand = |v: f64| -> f64 {
        let mut acc = gig_logpdf(v, &gig).unwrap();
        for j in 0..rec.n_obs() {
            let zr: Vec<f64> = rec.z.row(j).iter().cloned().collect();
            let wr: Vec<f64> = rec.w.row(j).iter().cloned().collect();
            let s = links.s_value(&zr, &th.alpha);
            let sig2 = links.sig2_value(&wr, &th.tau) * v;
            let mean: f64 =
                rec.x.row(j).iter().zip(th.beta.iter()).map(|(a, b)| a * b).sum::<f64>() + s * v;
            let d = rec.y[j] - mean;
            acc += -0.5 * (2.0 * std::f64::consts::PI * sig2).ln() - 0.5 * d * d / sig2;
        }
        acc
    };
    // substitute v = e^u and max-shift
    let q = |u: f64| log_integrand(u.exp()) + u;
    let mut m = f64::NEG_INFINITY;
    let mut u_peak = 0.0;
    let mut u = -45.0;
    while u <= 45.0 {
        let qu = q(u);
        if qu > m {
            m = qu;
            u_peak = u;
        }
        u += 0.01;
    }
    let mut lo = u_peak;
    while q(lo) > m - 60.0 && lo > -60.0 {
        lo -= 0.5;
    }
    let mut hi = u_peak;
    while q(hi) > m - 60.0 && hi < 60.0 {
        hi += 0.5;
    }
    let f = |u: f64| (q(u) - m).exp();
    m + quad(&f, lo, hi, 1e-13).ln()
}
