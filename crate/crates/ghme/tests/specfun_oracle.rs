//! Cross-checks of the Bessel machinery against an independent quadrature
//! of the defining integral and against finite differences.

mod common;

use common::{assert_rel_close, fd_derivative, oracle_log_k, quad};
use ghme::{bessel_k, bessel_k_dnu, curvature_s, log_bessel_k, mixed_l, ratio_r};
use proptest::prelude::*;

#[test]
fn matches_integral_representation_over_range() {
    let nus = [0.0, 0.3, 1.0, 1.2, 2.2, 5.5, 9.7];
    let ts = [1e-6, 1e-3, 0.1, 1.0, 3.7, 10.0, 100.0, 700.0];
    for &nu in &nus {
        for &t in &ts {
            let got = log_bessel_k(nu, t).unwrap();
            let want = oracle_log_k(nu, t);
            // compare on the log scale: 1e-12 relative on K is 1e-12 absolute
            // in log K (|log K| scaled)
            let err = (got - want).abs() / want.abs().max(1.0);
            assert!(err < 1e-12, "nu={nu} t={t}: got {got}, oracle {want}, err {err:e}");
        }
    }
}

#[test]
fn value_at_one_one_from_quadrature() {
    let got = bessel_k(1.0, 1.0).unwrap();
    let want = oracle_log_k(1.0, 1.0).exp();
    assert_rel_close(got, want, 1e-12, "K_1(1)");
}

#[test]
fn spec_recurrence_example() {
    // K_{2.2}(1.05) - (2*1.2/1.05) K_{1.2}(1.05) - K_{0.2}(1.05) = 0
    let k22 = bessel_k(2.2, 1.05).unwrap();
    let k12 = bessel_k(1.2, 1.05).unwrap();
    let k02 = bessel_k(0.2, 1.05).unwrap();
    let resid = k22 - (2.0 * 1.2 / 1.05) * k12 - k02;
    assert!((resid / k22).abs() < 1e-10, "residual {resid:e}");
}

#[test]
fn log_and_direct_paths_agree() {
    let direct = bessel_k(1.3, 3.7).unwrap().ln();
    let log = log_bessel_k(1.3, 3.7).unwrap();
    assert!((direct - log).abs() < 1e-12 * log.abs());
}

#[test]
fn order_derivative_against_fd_oracle() {
    // independent oracle: 6th-order FD over {1e-2, 5e-3, 2.5e-3}
    for &(nu, t) in &[(1.2, 2.0), (0.7, 0.4), (3.4, 11.0), (-2.6, 5.0)] {
        let f = |v: f64| bessel_k(v, t).unwrap();
        let want = fd_derivative(&f, nu, 1e-2);
        let got = bessel_k_dnu(nu, t, 1).unwrap();
        assert_rel_close(got, want, 1e-7, &format!("dK/dnu at ({nu},{t})"));
    }
}

#[test]
fn second_order_derivative_against_fd_oracle() {
    for &(nu, t) in &[(1.2, 2.0), (0.5, 1.5), (2.3, 7.0)] {
        let f = |v: f64| bessel_k(v, t).unwrap();
        let d2 = |h: f64| (f(nu + h) - 2.0 * f(nu) + f(nu - h)) / (h * h);
        let want = (4.0 * d2(5e-3) - d2(1e-2)) / 3.0;
        let got = bessel_k_dnu(nu, t, 2).unwrap();
        assert_rel_close(got, want, 1e-6, &format!("d2K/dnu2 at ({nu},{t})"));
    }
}

#[test]
fn ratio_from_quadrature_quotient() {
    let got = ratio_r(1.2, 3.0).unwrap();
    let want = (oracle_log_k(0.2, 3.0) - oracle_log_k(1.2, 3.0)).exp();
    assert_rel_close(got, want, 1e-11, "R_1.2(3)");
}

#[test]
fn curvature_from_quadrature_factors() {
    let (nu, t) = (1.5, 2.5);
    let km2 = oracle_log_k(nu - 2.0, t).exp();
    let km1 = oracle_log_k(nu - 1.0, t).exp();
    let k0 = oracle_log_k(nu, t).exp();
    let want = (km1 * km1 - km2 * k0) / (k0 * k0);
    assert_rel_close(curvature_s(nu, t).unwrap(), want, 1e-9, "S_1.5(2.5)");
}

#[test]
fn mixed_l_composed_from_parts() {
    let (nu, z) = (1.2, 2.0);
    let k0 = bessel_k(nu, z).unwrap();
    let km1 = bessel_k(nu - 1.0, z).unwrap();
    let dk0 = bessel_k_dnu(nu, z, 1).unwrap();
    let dkm1 = {
        // derivative of K at order nu-1 with respect to the *order* argument
        let f = |v: f64| bessel_k(v, z).unwrap();
        fd_derivative(&f, nu - 1.0, 1e-2)
    };
    let want = (dkm1 * k0 - dk0 * km1) / (k0 * k0);
    assert_rel_close(mixed_l(nu, z).unwrap(), want, 1e-6, "L_1.2(2)");
}

#[test]
fn gig_normalizer_sanity_through_quadrature() {
    // the quadrature helper itself: integral of K_{1/2} density form
    let t: f64 = 2.0;
    let want = (std::f64::consts::PI / (2.0 * t)).sqrt() * (-t).exp();
    let f = |u: f64| (-t * u.cosh()).exp() * (0.5 * u).cosh();
    let got = quad(&f, 0.0, 40.0, 1e-15);
    assert_rel_close(got, want, 1e-12, "quad self-check");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn evenness(nu in -12.0f64..12.0, t in 1e-3f64..80.0) {
        let a = log_bessel_k(nu, t).unwrap();
        let b = log_bessel_k(-nu, t).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn recurrence(nu in -8.0f64..8.0, t in 0.05f64..60.0) {
        let kp = bessel_k(nu + 1.0, t).unwrap();
        let k0 = bessel_k(nu, t).unwrap();
        let km = bessel_k(nu - 1.0, t).unwrap();
        let resid = (kp - (2.0 * nu / t) * k0 - km) / kp.max(km);
        prop_assert!(resid.abs() < 1e-10);
    }

    #[test]
    fn monotone_in_t(nu in -6.0f64..6.0, t in 0.01f64..50.0, bump in 0.01f64..5.0) {
        let a = log_bessel_k(nu, t).unwrap();
        let b = log_bessel_k(nu, t + bump).unwrap();
        prop_assert!(a > b);
    }

    #[test]
    fn log_derivative_identities(nu in -5.0f64..5.0, t in 0.2f64..30.0) {
        let h = 1e-3 * t.max(1.0);
        let f = |x: f64| log_bessel_k(nu, x).unwrap();
        let fd1 = fd_derivative(&f, t, h);
        let want1 = -ratio_r(nu, t).unwrap() - nu / t;
        prop_assert!((fd1 - want1).abs() <= 1e-6 * want1.abs().max(1e-2));

        let f0 = f(t);
        let d2 = |h: f64| (f(t + h) - 2.0 * f0 + f(t - h)) / (h * h);
        let fd2 = (4.0 * d2(h) - d2(2.0 * h)) / 3.0;
        let want2 = -curvature_s(nu, t).unwrap() - ratio_r(nu, t).unwrap() / t + nu / (t * t);
        prop_assert!((fd2 - want2).abs() <= 1e-6 * want2.abs().max(1e-2));
    }
}
