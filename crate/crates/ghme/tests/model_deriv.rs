//! Analytic score and Hessian against finite differences, plus structural
//! invariances of the likelihood.

mod common;

use common::{simulate_gh, theta_sec23_case_i, theta_sec32_ig};
use ghme::model::{self, EvalOptions, LinkSpec, LongitudinalDataset, Theta};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn perturb(th: &Theta, rng: &mut ChaCha12Rng) -> Theta {
    use rand::Rng;
    let mut out = th.clone();
    let mut bump = |v: &mut f64, scale: f64| *v += (rng.random::<f64>() - 0.5) * scale;
    for b in out.beta.iter_mut().chain(out.alpha.iter_mut()).chain(out.tau.iter_mut()) {
        bump(b, 0.3);
    }
    bump(&mut out.lambda, 0.8);
    out.delta *= 1.0 + (rng.random::<f64>() - 0.5) * 0.4;
    out.gamma *= 1.0 + (rng.random::<f64>() - 0.5) * 0.4;
    out
}

fn theta_step(th: &Theta, coord: usize, h: f64) -> Theta {
    let mut v = th.to_full_vec();
    v[coord] += h;
    Theta::from_full_vec(&v, th.beta.len(), th.alpha.len(), th.tau.len())
}

fn fd_score(
    ds: &LongitudinalDataset,
    th: &Theta,
    links: &LinkSpec,
    coord: usize,
    h: f64,
) -> f64 {
    let f = |hh: f64| model::loglik(ds, &theta_step(th, coord, hh), links).unwrap();
    let d = |hh: f64| (f(hh) - f(-hh)) / (2.0 * hh);
    let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d3 - d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

fn fd_hessian_col(
    ds: &LongitudinalDataset,
    th: &Theta,
    links: &LinkSpec,
    coord: usize,
    h: f64,
) -> DVector<f64> {
    let g = |hh: f64| model::score(ds, &theta_step(th, coord, hh), links).unwrap();
    let d = |hh: f64| (g(hh) - g(-hh)) / (2.0 * hh);
    let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
    let r1 = (4.0 * &d2 - &d1) / 3.0;
    let r2 = (4.0 * &d3 - &d2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

#[test]
fn score_matches_fd_at_random_interior_points() {
    let links = LinkSpec::tanh_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let (ds, _) = simulate_gh(20, 6, &theta_sec23_case_i(), &links, &mut rng);
    for trial in 0..10 {
        let th = perturb(&theta_sec23_case_i(), &mut rng);
        let g = model::score(&ds, &th, &links).unwrap();
        let scale = g.amax();
        for coord in 0..g.len() {
            let fd = fd_score(&ds, &th, &links, coord, 2e-3);
            let denom = g[coord].abs().max(1e-3 * scale);
            assert!(
                (g[coord] - fd).abs() <= 1e-6 * denom,
                "trial {trial} coord {coord}: analytic {}, fd {fd}",
                g[coord]
            );
        }
    }
}

#[test]
fn hessian_matches_fd_of_score() {
    let links = LinkSpec::tanh_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let (ds, _) = simulate_gh(20, 6, &theta_sec23_case_i(), &links, &mut rng);
    for trial in 0..10 {
        let th = perturb(&theta_sec23_case_i(), &mut rng);
        let h = model::hessian(&ds, &th, &links).unwrap();
        let p = h.nrows();
        let mut fd = DMatrix::zeros(p, p);
        for c in 0..p {
            fd.set_column(c, &fd_hessian_col(&ds, &th, &links, c, 2e-3));
        }
        let fd = (&fd + fd.transpose()) / 2.0;
        let scale = h.amax();
        for r in 0..p {
            for c in 0..p {
                let denom = h[(r, c)].abs().max(1e-3 * scale);
                assert!(
                    (h[(r, c)] - fd[(r, c)]).abs() <= 1e-6 * denom,
                    "trial {trial} H[{r},{c}]: analytic {}, fd {}",
                    h[(r, c)],
                    fd[(r, c)]
                );
            }
        }
    }
}

#[test]
fn hessian_matches_fd_in_ig_family_too() {
    let links = LinkSpec::tanh_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let (ds, _) = simulate_gh(15, 5, &theta_sec32_ig(), &links, &mut rng);
    let th = theta_sec32_ig();
    let h = model::hessian(&ds, &th, &links).unwrap();
    let p = h.nrows();
    let scale = h.amax();
    for c in 0..p {
        let fd = fd_hessian_col(&ds, &th, &links, c, 2e-3);
        for r in 0..p {
            let denom = h[(r, c)].abs().max(1e-3 * scale);
            assert!(
                (h[(r, c)] - fd[r]).abs() <= 1e-6 * denom,
                "H[{r},{c}]: analytic {}, fd {}",
                h[(r, c)],
                fd[r]
            );
        }
    }
}

#[test]
fn hessian_exactly_symmetric() {
    let links = LinkSpec::tanh_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let (ds, _) = simulate_gh(10, 4, &theta_sec23_case_i(), &links, &mut rng);
    let h = model::hessian(&ds, &theta_sec23_case_i(), &links).unwrap();
    for r in 0..h.nrows() {
        for c in 0..h.ncols() {
            assert_eq!(h[(r, c)], h[(c, r)]);
        }
    }
}

#[test]
fn per_individual_scores_sum_to_score() {
    let links = LinkSpec::tanh_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let (ds, _) = simulate_gh(12, 5, &theta_sec23_case_i(), &links, &mut rng);
    let th = theta_sec23_case_i();
    let per = model::per_individual_scores(&ds, &th, &links).unwrap();
    assert_eq!(per.len(), 12);
    let total = model::score(&ds, &th, &links).unwrap();
    let mut sum = DVector::zeros(total.len());
    for s in &per {
        sum += s;
    }
    assert!((&sum - &total).amax() <= 1e-10 * total.amax().max(1.0));

    // N = 1: the single vector is the score
    let one = LongitudinalDataset::new(vec![ds.records()[0].clone()]).unwrap();
    let per1 = model::per_individual_scores(&one, &th, &links).unwrap();
    let s1 = model::score(&one, &th, &links).unwrap();
    assert_eq!(per1.len(), 1);
    assert!((&per1[0] - &s1).amax() <= 1e-12 * s1.amax().max(1.0));
}

#[test]
fn loglik_invariant_under_permutation() {
    let links = LinkSpec::tanh_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(19);
    let (ds, _) = simulate_gh(15, 5, &theta_sec23_case_i(), &links, &mut rng);
    let th = theta_sec23_case_i();
    let base = model::loglik(&ds, &th, &links).unwrap();

    // reverse individuals
    let mut recs: Vec<_> = ds.records().to_vec();
    recs.reverse();
    let ds_rev = LongitudinalDataset::new(recs).unwrap();
    let rev = model::loglik(&ds_rev, &th, &links).unwrap();
    assert!((base - rev).abs() <= 1e-12 * base.abs());

    // reverse rows within each individual
    let recs: Vec<_> = ds
        .records()
        .iter()
        .map(|r| {
            let n = r.n_obs();
            let flip_v = DVector::from_fn(n, |j, _| r.y[n - 1 - j]);
            let flip_m = |m: &DMatrix<f64>| {
                DMatrix::from_fn(n, m.ncols(), |j, k| m[(n - 1 - j, k)])
            };
            ghme::model::IndividualRecord::new(
                r.id.clone(),
                flip_v,
                flip_m(&r.x),
                flip_m(&r.z),
                flip_m(&r.w),
            )
            .unwrap()
        })
        .collect();
    let ds_flip = LongitudinalDataset::new(recs).unwrap();
    let flip = model::loglik(&ds_flip, &th, &links).unwrap();
    assert!((base - flip).abs() <= 1e-12 * base.abs());
}

#[test]
fn loglik_translation_equivariance() {
    let links = LinkSpec::tanh_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let (ds, _) = simulate_gh(10, 5, &theta_sec23_case_i(), &links, &mut rng);
    let th = theta_sec23_case_i();
    let base = model::loglik(&ds, &th, &links).unwrap();

    let dbeta = DVector::from_vec(vec![0.7, -0.4]);
    let recs: Vec<_> = ds
        .records()
        .iter()
        .map(|r| {
            let shift = &r.x * &dbeta;
            ghme::model::IndividualRecord::new(
                r.id.clone(),
                &r.y + shift,
                r.x.clone(),
                r.z.clone(),
                r.w.clone(),
            )
            .unwrap()
        })
        .collect();
    let ds_shift = LongitudinalDataset::new(recs).unwrap();
    let mut th_shift = th.clone();
    th_shift.beta += dbeta;
    let shifted = model::loglik(&ds_shift, &th_shift, &links).unwrap();
    assert!((base - shifted).abs() <= 1e-10 * base.abs());
}

#[test]
fn alpha_score_vanishes_when_s_and_grad_are_zero() {
    let links = LinkSpec { mean: ghme::model::MeanLink::Zero, var: ghme::model::VarLink::ExpLinear };
    let mut rng = ChaCha12Rng::seed_from_u64(29);
    let (ds, _) = simulate_gh(8, 4, &theta_sec23_case_i(), &links, &mut rng);
    let th = theta_sec23_case_i();
    let g = model::score(&ds, &th, &links).unwrap();
    let pb = th.beta.len();
    for k in 0..th.alpha.len() {
        assert_eq!(g[pb + k], 0.0);
    }
}

#[test]
fn score_mean_zero_at_truth_monte_carlo() {
    // average score over repeated simulations, scaled by sqrt(N), should sit
    // within a few empirical standard errors of zero per coordinate
    let links = LinkSpec::tanh_exp();
    let th = theta_sec23_case_i();
    let trials = 200;
    let n = 50usize;
    let p = th.to_full_vec().len();
    let mut sums = vec![Vec::with_capacity(trials); p];
    for t in 0..trials {
        let mut rng = ChaCha12Rng::seed_from_u64(1000 + t as u64);
        let (ds, _) = simulate_gh(n, 5, &th, &links, &mut rng);
        let g = model::score(&ds, &th, &links).unwrap() / (n as f64).sqrt();
        for k in 0..p {
            sums[k].push(g[k]);
        }
    }
    for (k, xs) in sums.iter().enumerate() {
        let (mean, var, _, _) = ghme::util::sample_moments(xs);
        let se = (var / trials as f64).sqrt();
        assert!(
            mean.abs() <= 3.5 * se,
            "coordinate {k}: mean {mean}, se {se} (|mean|/se = {})",
            mean.abs() / se
        );
    }
}

#[test]
fn eval_is_deterministic_across_thread_counts() {
    let links = LinkSpec::tanh_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(31);
    let (ds, _) = simulate_gh(40, 5, &theta_sec23_case_i(), &links, &mut rng);
    let th = theta_sec23_case_i();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let quad_pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = single.install(|| model::eval(&ds, &th, &links, EvalOptions::hessian()).unwrap());
    let b = quad_pool.install(|| model::eval(&ds, &th, &links, EvalOptions::hessian()).unwrap());
    assert_eq!(a.loglik, b.loglik);
    assert_eq!(a.hessian.unwrap(), b.hessian.unwrap());
}
