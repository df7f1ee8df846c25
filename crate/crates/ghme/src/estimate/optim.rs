//! Small dense optimizers: an exact trust-region subproblem solver built on
//! the symmetric eigendecomposition (the parameter dimension never exceeds
//! a dozen), and a box-projected BFGS with numeric gradients for the
//! least-squares composition steps.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Solve `min g'p + p'Bp/2` subject to `||p|| <= radius` exactly via the
/// eigendecomposition of the symmetric matrix `B`.
pub fn trust_region_step(g: &DVector<f64>, b: &DMatrix<f64>, radius: f64) -> DVector<f64> {
    let n = g.len();
    let eig = SymmetricEigen::new(b.clone());
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let ghat = q.transpose() * g;
    let lam_min = lam.min();

    let p_norm = |sigma: f64| -> f64 {
        (0..n)
            .map(|i| {
                let d = lam[i] + sigma;
                if d.abs() < 1e-300 { 0.0 } else { (ghat[i] / d).powi(2) }
            })
            .sum::<f64>()
            .sqrt()
    };
    let build = |sigma: f64| -> DVector<f64> {
        let coeffs = DVector::from_fn(n, |i, _| {
            let d = lam[i] + sigma;
            if d.abs() < 1e-300 { 0.0 } else { -ghat[i] / d }
        });
        q * coeffs
    };

    // unconstrained Newton point if B is positive definite and inside
    if lam_min > 0.0 && p_norm(0.0) <= radius {
        return build(0.0);
    }

    // otherwise the solution lies on the boundary: find sigma > max(0, -lam_min)
    // with ||p(sigma)|| = radius by bisection (||p|| is decreasing in sigma)
    let sigma_floor = (-lam_min).max(0.0);
    let mut lo = sigma_floor + 1e-12 * (1.0 + lam_min.abs());
    if p_norm(lo) < radius {
        // hard case: gradient has (numerically) no component on the minimal
        // eigenspace; move along that eigenvector to the boundary
        let p0 = build(lo);
        let residual = (radius * radius - p0.norm_squared()).max(0.0).sqrt();
        let imin = (0..n).fold(0, |best, i| if lam[i] < lam[best] { i } else { best });
        return p0 + residual * q.column(imin);
    }
    let mut hi = lo.max(1.0);
    while p_norm(hi) > radius {
        hi *= 4.0;
        if hi > 1e18 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p_norm(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    build(0.5 * (lo + hi))
}

pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 300, grad_tol: 1e-9, step_tol: 1e-12 }
    }
}

pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Box-projected BFGS minimization with central-difference gradients.
pub fn minimize_bfgs<F>(
    f: F,
    x0: DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    opts: &BfgsOptions,
) -> BfgsOutcome
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let clamp = |x: &DVector<f64>| DVector::from_fn(n, |i, _| x[i].clamp(lo[i], hi[i]));
    let grad = |x: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    };

    let mut x = clamp(&x0);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut iters = 0;
    for it in 0..opts.max_iter {
        iters = it + 1;
        if g.amax() <= opts.grad_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut dir = -(&hinv * &g);
        if dir.dot(&g) >= 0.0 {
            dir = -g.clone();
            hinv = DMatrix::identity(n, n);
        }
        // backtracking with box projection
        let mut step = 1.0;
        let mut accepted = false;
        let mut xn = x.clone();
        let mut fn_ = fx;
        for _ in 0..40 {
            let trial = clamp(&(&x + step * &dir));
            let ft = f(&trial);
            if ft.is_finite() && ft < fx - 1e-4 * step * g.dot(&dir).abs().min(0.0).abs() {
                xn = trial;
                fn_ = ft;
                accepted = true;
                break;
            }
            if ft.is_finite() && ft < fx {
                xn = trial;
                fn_ = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = g.amax() <= 1e-6 * fx.abs().max(1.0);
            break;
        }
        let s = &xn - &x;
        if s.amax() <= opts.step_tol * x.amax().max(1.0) {
            x = xn;
            fx = fn_;
            converged = true;
            break;
        }
        let gn = grad(&xn);
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            // standard BFGS inverse update
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - rho * &s * yv.transpose();
            let right = &i - rho * &yv * s.transpose();
            hinv = &left * hinv * &right + rho * &s * s.transpose();
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    BfgsOutcome { x, value: fx, converged, iterations: iters }
}
