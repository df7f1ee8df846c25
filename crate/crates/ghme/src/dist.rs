//! GIG, GH, and NIG distributions: densities, sampling, moments, and the
//! moment inversions used by the stepwise initial estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::specfun::{self, log_bessel_k};

#[derive(Debug, Error)]
pub enum DistError {
    #[error("inadmissible GIG parameters (lambda={lambda}, delta={delta}, gamma={gamma})")]
    InadmissibleGig { lambda: f64, delta: f64, gamma: f64 },
    #[error("GIG parameters on the admissibility boundary; interior (delta>0, gamma>0) required")]
    BoundaryGig,
    #[error("inadmissible GH parameters")]
    InadmissibleGh,
    #[error("operation requires lambda = -1/2, got {0}")]
    NotNig(f64),
    #[error("argument must be positive, got {0}")]
    NonPositive(f64),
    #[error("moment inversion infeasible: 3K - 5S^2 = {0} must be positive")]
    InfeasibleMoments(f64),
    #[error("moment triple not invertible: {0}")]
    BadMoments(String),
    #[error(
        "moment inversion did not converge (residual {residual:.3e} after {iterations} iterations)"
    )]
    NoSolution { residual: f64, iterations: usize },
    #[error(transparent)]
    SpecFun(#[from] specfun::SpecFunError),
}

/// Parameters of the generalized inverse Gaussian law with density
/// proportional to `x^{lambda-1} exp(-(delta^2/x + gamma^2 x)/2)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GigParams {
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl GigParams {
    pub fn new(lambda: f64, delta: f64, gamma: f64) -> Self {
        Self { lambda, delta, gamma }
    }

    /// Admissible region: three branches depending on the sign of lambda.
    pub fn is_admissible(&self) -> bool {
        let (l, d, g) = (self.lambda, self.delta, self.gamma);
        if !(l.is_finite() && d.is_finite() && g.is_finite()) {
            return false;
        }
        (l > 0.0 && d >= 0.0 && g > 0.0)
            || (l == 0.0 && d > 0.0 && g > 0.0)
            || (l < 0.0 && d > 0.0 && g >= 0.0)
    }

    /// Strictly interior: both delta and gamma positive. The boundary
    /// (gamma / inverse-gamma) families are excluded throughout.
    pub fn is_interior(&self) -> bool {
        self.is_admissible() && self.delta > 0.0 && self.gamma > 0.0
    }

    fn require_interior(&self) -> Result<(), DistError> {
        if !self.is_admissible() {
            return Err(DistError::InadmissibleGig {
                lambda: self.lambda,
                delta: self.delta,
                gamma: self.gamma,
            });
        }
        if !self.is_interior() {
            return Err(DistError::BoundaryGig);
        }
        Ok(())
    }

    /// Mode of the density, `((lambda-1) + sqrt((lambda-1)^2 + delta^2 gamma^2)) / gamma^2`.
    pub fn mode(&self) -> f64 {
        let lm1 = self.lambda - 1.0;
        (lm1 + (lm1 * lm1 + self.delta * self.delta * self.gamma * self.gamma).sqrt())
            / (self.gamma * self.gamma)
    }
}

/// Parameters of the generalized hyperbolic law, the variance-mean mixture
/// `mu + beta Z + sqrt(Z) eta` with `Z ~ GIG(lambda, delta, gamma)` and
/// `alpha^2 = beta^2 + gamma^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhParams {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub mu: f64,
}

impl GhParams {
    pub fn new(lambda: f64, alpha: f64, beta: f64, delta: f64, mu: f64) -> Self {
        Self { lambda, alpha, beta, delta, mu }
    }

    /// Construct from a GIG mixing law and the mixture coefficients.
    pub fn from_mixture(gig: GigParams, beta: f64, mu: f64) -> Self {
        let alpha = (beta * beta + gig.gamma * gig.gamma).sqrt();
        Self { lambda: gig.lambda, alpha, beta, delta: gig.delta, mu }
    }

    pub fn is_admissible(&self) -> bool {
        let (l, a, b, d) = (self.lambda, self.alpha, self.beta, self.delta);
        if ![l, a, b, d, self.mu].iter().all(|v| v.is_finite()) {
            return false;
        }
        (l > 0.0 && d >= 0.0 && a > b.abs())
            || (l == 0.0 && d > 0.0 && a > b.abs())
            || (l < 0.0 && d > 0.0 && a >= b.abs())
    }

    /// Interior of the parameter region (delta > 0 and alpha > |beta|),
    /// where the density formula below is directly evaluable.
    pub fn is_interior(&self) -> bool {
        self.is_admissible() && self.delta > 0.0 && self.alpha > self.beta.abs()
    }
}

/// First three moments of a positive law: mean, variance, third central moment.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MomentTriple {
    pub mu_v: f64,
    pub c_v: f64,
    pub rho_v: f64,
}

/// How to invert a moment triple back to GIG parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InversionMode {
    /// Solve for all of (lambda, delta, gamma) from (mean, variance, third
    /// central moment) by damped Newton.
    Full,
    /// Hold lambda fixed. At `lambda = -1/2` (inverse Gaussian) this is the
    /// closed form `gamma = sqrt(mu/c)`, `delta = sqrt(mu^3/c)`; otherwise
    /// (delta, gamma) are solved from (mean, variance) alone.
    FixedLambda(f64),
}

/// Log-density of `GIG(lambda, delta, gamma)` at `x > 0`.
pub fn gig_logpdf(x: f64, p: &GigParams) -> Result<f64, DistError> {
    p.require_interior()?;
    if !(x > 0.0) {
        return Err(DistError::NonPositive(x));
    }
    let omega = p.delta * p.gamma;
    let norm = p.lambda * (p.gamma / p.delta).ln()
        - std::f64::consts::LN_2
        - log_bessel_k(p.lambda, omega)?;
    Ok(norm + (p.lambda - 1.0) * x.ln()
        - 0.5 * (p.delta * p.delta / x + p.gamma * p.gamma * x))
}

/// Raw moment `E[v^k] = (delta/gamma)^k K_{lambda+k}(delta gamma) / K_lambda(delta gamma)`.
pub fn gig_raw_moment(p: &GigParams, k: u32) -> Result<f64, DistError> {
    p.require_interior()?;
    let omega = p.delta * p.gamma;
    let lk = specfun::log_k_many(omega, &[p.lambda + k as f64, p.lambda]);
    Ok((p.delta / p.gamma).powi(k as i32) * (lk[0] - lk[1]).exp())
}

/// Mean, variance, and third central moment of the GIG law.
pub fn gig_moments(p: &GigParams) -> Result<MomentTriple, DistError> {
    p.require_interior()?;
    let omega = p.delta * p.gamma;
    let lk = specfun::log_k_many(
        omega,
        &[p.lambda, p.lambda + 1.0, p.lambda + 2.0, p.lambda + 3.0],
    );
    let rho1 = p.delta / p.gamma;
    let m1 = rho1 * (lk[1] - lk[0]).exp();
    let m2 = rho1 * rho1 * (lk[2] - lk[0]).exp();
    let m3 = rho1 * rho1 * rho1 * (lk[3] - lk[0]).exp();
    let c = m2 - m1 * m1;
    let rho = m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1;
    Ok(MomentTriple { mu_v: m1, c_v: c, rho_v: rho })
}

/// i.i.d. GIG draws by ratio-of-uniforms with mode shift on the two-parameter
/// standard form (`omega = delta gamma`, scale `delta/gamma`), valid on the
/// whole interior parameter region. Deterministic given the seed.
pub fn gig_sample(p: &GigParams, n: usize, seed: u64) -> Result<Vec<f64>, DistError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    gig_sample_with(p, n, &mut rng)
}

/// Same as [`gig_sample`] but drawing from a caller-owned generator.
pub fn gig_sample_with<R: Rng + ?Sized>(
    p: &GigParams,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>, DistError> {
    p.require_interior()?;
    let sampler = GigSampler::new(p)?;
    Ok((0..n).map(|_| sampler.draw(rng)).collect())
}

/// Precomputed ratio-of-uniforms region for repeated draws.
pub struct GigSampler {
    lambda: f64,
    omega: f64,
    scale: f64,
    mode: f64,
    log_h_mode: f64,
    v_lo: f64,
    v_hi: f64,
}

impl GigSampler {
    pub fn new(p: &GigParams) -> Result<Self, DistError> {
        p.require_interior()?;
        let lambda = p.lambda;
        let omega = p.delta * p.gamma;
        // standard-form density h(x) = x^{lambda-1} exp(-omega (x + 1/x) / 2)
        let lm1 = lambda - 1.0;
        let mode = (lm1 + (lm1 * lm1 + omega * omega).sqrt()) / omega;
        let log_h = |x: f64| lm1 * x.ln() - 0.5 * omega * (x + 1.0 / x);
        let log_h_mode = log_h(mode);
        // stationary points of (x - mode) sqrt(h(x)) solve
        //   x^3 + a x^2 + b x + c = 0
        let a = -(2.0 * (lambda + 1.0) / omega + mode);
        let b = 2.0 * lm1 * mode / omega - 1.0;
        let c = mode;
        let cubic = |x: f64| ((x + a) * x + b) * x + c;
        // one root below the mode, one above; bracket and bisect
        let lower = bisect_root(&cubic, 1e-300, mode);
        let mut hi = mode.max(1.0) * 2.0;
        while cubic(hi) <= 0.0 {
            hi *= 2.0;
        }
        let upper = bisect_root(&cubic, mode, hi);
        let rel = |x: f64| (0.5 * (log_h(x) - log_h_mode)).exp();
        let v_lo = (lower - mode) * rel(lower);
        let v_hi = (upper - mode) * rel(upper);
        Ok(Self { lambda, omega, scale: p.delta / p.gamma, mode, log_h_mode, v_lo, v_hi })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let lm1 = self.lambda - 1.0;
        loop {
            let u: f64 = rng.random::<f64>();
            if u == 0.0 {
                continue;
            }
            let v = self.v_lo + rng.random::<f64>() * (self.v_hi - self.v_lo);
            let x = self.mode + v / u;
            if x <= 0.0 {
                continue;
            }
            let log_h = lm1 * x.ln() - 0.5 * self.omega * (x + 1.0 / x);
            if 2.0 * u.ln() <= log_h - self.log_h_mode {
                return self.scale * x;
            }
        }
    }
}

fn bisect_root<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    debug_assert!(flo * f(hi) <= 0.0, "bisection bracket does not straddle a root");
    let rising = flo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi.abs().max(1e-12) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Recover GIG parameters from a moment triple.
pub fn gig_mom_invert(m: &MomentTriple, mode: InversionMode) -> Result<GigParams, DistError> {
    if !(m.c_v > 0.0) || !(m.mu_v > 0.0) {
        return Err(DistError::BadMoments(format!(
            "need mu_v > 0 and c_v > 0, got mu_v={}, c_v={}",
            m.mu_v, m.c_v
        )));
    }
    match mode {
        InversionMode::FixedLambda(l) if (l + 0.5).abs() < 1e-12 => {
            // inverse Gaussian closed form
            let gamma = (m.mu_v / m.c_v).sqrt();
            let delta = m.mu_v * gamma;
            Ok(GigParams::new(-0.5, delta, gamma))
        }
        InversionMode::FixedLambda(l) => invert_fixed_lambda(m, l),
        InversionMode::Full => invert_full(m),
    }
}

fn invert_fixed_lambda(m: &MomentTriple, lambda: f64) -> Result<GigParams, DistError> {
    // damped Newton on (log delta, log gamma) matching (mean, variance)
    let mut u = (m.mu_v * (m.mu_v / m.c_v).sqrt()).ln(); // log delta, IG-style start
    let mut v = 0.5 * (m.mu_v / m.c_v).ln(); // log gamma
    let resid = |u: f64, v: f64| -> Result<[f64; 2], DistError> {
        let p = GigParams::new(lambda, u.exp(), v.exp());
        let mm = gig_moments(&p)?;
        Ok([(mm.mu_v - m.mu_v) / m.mu_v, (mm.c_v - m.c_v) / m.c_v])
    };
    let mut r = resid(u, v)?;
    for it in 0..100 {
        let rn = r[0].abs().max(r[1].abs());
        if rn < 1e-12 {
            return Ok(GigParams::new(lambda, u.exp(), v.exp()));
        }
        let h = 1e-6;
        let ru = resid(u + h, v)?;
        let rv = resid(u, v + h)?;
        let j = [
            [(ru[0] - r[0]) / h, (rv[0] - r[0]) / h],
            [(ru[1] - r[1]) / h, (rv[1] - r[1]) / h],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 {
            return Err(DistError::NoSolution { residual: rn, iterations: it });
        }
        let du = (r[0] * j[1][1] - r[1] * j[0][1]) / det;
        let dv = (r[1] * j[0][0] - r[0] * j[1][0]) / det;
        let mut step = 1.0;
        loop {
            let (un, vn) = (u - step * du, v - step * dv);
            if let Ok(rn2) = resid(un, vn) {
                if rn2[0].abs().max(rn2[1].abs()) < rn {
                    u = un;
                    v = vn;
                    r = rn2;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-8 {
                return Err(DistError::NoSolution { residual: rn, iterations: it });
            }
        }
    }
    let rn = r[0].abs().max(r[1].abs());
    if rn < 1e-9 {
        Ok(GigParams::new(lambda, u.exp(), v.exp()))
    } else {
        Err(DistError::NoSolution { residual: rn, iterations: 100 })
    }
}

fn invert_full(m: &MomentTriple) -> Result<GigParams, DistError> {
    // damped Newton on (lambda, log delta, log gamma); start from the IG
    // closed form with lambda left free at -1/2
    let gamma0 = (m.mu_v / m.c_v).sqrt();
    let mut x = [-0.5, (m.mu_v * gamma0).ln(), gamma0.ln()];
    let scale_rho = m.rho_v.abs().max(m.c_v.powf(1.5));
    let resid = |x: &[f64; 3]| -> Result<[f64; 3], DistError> {
        let p = GigParams::new(x[0], x[1].exp(), x[2].exp());
        if !p.is_interior() || x[0].abs() > 50.0 {
            return Err(DistError::BadMoments("left admissible region".into()));
        }
        let mm = gig_moments(&p)?;
        Ok([
            (mm.mu_v - m.mu_v) / m.mu_v,
            (mm.c_v - m.c_v) / m.c_v,
            (mm.rho_v - m.rho_v) / scale_rho,
        ])
    };
    let norm = |r: &[f64; 3]| r.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut r = resid(&x)?;
    for it in 0..200 {
        if norm(&r) < 1e-12 {
            break;
        }
        // finite-difference Jacobian
        let h = 1e-6;
        let mut j = [[0.0; 3]; 3];
        for col in 0..3 {
            let mut xp = x;
            xp[col] += h;
            let rp = resid(&xp).map_err(|_| DistError::NoSolution {
                residual: norm(&r),
                iterations: it,
            })?;
            for row in 0..3 {
                j[row][col] = (rp[row] - r[row]) / h;
            }
        }
        let dx = solve3(&j, &r).ok_or(DistError::NoSolution {
            residual: norm(&r),
            iterations: it,
        })?;
        let mut step = 1.0;
        let mut advanced = false;
        while step >= 1e-10 {
            let xn = [x[0] - step * dx[0], x[1] - step * dx[1], x[2] - step * dx[2]];
            if let Ok(rn) = resid(&xn) {
                if norm(&rn) < norm(&r) {
                    x = xn;
                    r = rn;
                    advanced = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    if norm(&r) < 1e-9 {
        Ok(GigParams::new(x[0], x[1].exp(), x[2].exp()))
    } else {
        Err(DistError::NoSolution { residual: norm(&r), iterations: 200 })
    }
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for col in 0..3 {
        let mut m = *a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        out[col] = det(&m) / d;
    }
    Some(out)
}

/// Log-density of the GH law.
pub fn gh_logpdf(y: f64, p: &GhParams) -> Result<f64, DistError> {
    if !p.is_interior() {
        return Err(DistError::InadmissibleGh);
    }
    let gbar2 = p.alpha * p.alpha - p.beta * p.beta;
    let q = (p.delta * p.delta + (y - p.mu) * (y - p.mu)).sqrt();
    let log_norm = 0.5 * p.lambda * gbar2.ln()
        - 0.5 * (2.0 * std::f64::consts::PI).ln()
        - (p.lambda - 0.5) * p.alpha.ln()
        - p.lambda * p.delta.ln()
        - log_bessel_k(p.lambda, p.delta * gbar2.sqrt())?;
    Ok(log_norm
        + (p.lambda - 0.5) * q.ln()
        + log_bessel_k(p.lambda - 0.5, p.alpha * q)?
        + p.beta * (y - p.mu))
}

/// Mean, variance, skewness, and excess kurtosis of `NIG(alpha, beta, delta, mu)`.
pub fn nig_moments(p: &GhParams) -> Result<(f64, f64, f64, f64), DistError> {
    if (p.lambda + 0.5).abs() > 1e-12 {
        return Err(DistError::NotNig(p.lambda));
    }
    if !p.is_interior() {
        return Err(DistError::InadmissibleGh);
    }
    let gbar = (p.alpha * p.alpha - p.beta * p.beta).sqrt();
    let m = p.mu + p.beta * p.delta / gbar;
    let v = p.delta * p.alpha * p.alpha / gbar.powi(3);
    let s = 3.0 * p.beta / (p.alpha * (p.delta * gbar).sqrt());
    let k = 3.0 * (p.alpha * p.alpha + 4.0 * p.beta * p.beta)
        / (p.alpha * p.alpha * p.delta * gbar);
    Ok((m, v, s, k))
}

/// Method-of-moments inversion for the NIG family.
pub fn nig_from_moments(m: f64, v: f64, s: f64, k: f64) -> Result<GhParams, DistError> {
    if !(v > 0.0) {
        return Err(DistError::BadMoments(format!("variance must be positive, got {v}")));
    }
    let disc = 3.0 * k - 5.0 * s * s;
    if !(disc > 0.0) {
        return Err(DistError::InfeasibleMoments(disc));
    }
    let gbar = 3.0 / (v.sqrt() * disc.sqrt());
    let beta = s * v.sqrt() * gbar * gbar / 3.0;
    let alpha = (gbar * gbar + beta * beta).sqrt();
    let delta = v * gbar.powi(3) / (alpha * alpha);
    let mu = m - beta * delta / gbar;
    Ok(GhParams::new(-0.5, alpha, beta, delta, mu))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn admissibility_branches() {
        assert!(GigParams::new(1.0, 0.0, 2.0).is_admissible());
        assert!(!GigParams::new(1.0, 0.0, 2.0).is_interior());
        assert!(GigParams::new(0.0, 1.0, 1.0).is_admissible());
        assert!(!GigParams::new(0.0, 0.0, 1.0).is_admissible());
        assert!(GigParams::new(-0.5, 1.0, 0.0).is_admissible());
        assert!(!GigParams::new(-0.5, 0.0, 1.0).is_admissible());
        assert!(GigParams::new(1.2, 1.5, 2.0).is_interior());
    }

    #[test]
    fn logpdf_rejects_boundary_and_nonpositive() {
        let interior = GigParams::new(1.2, 1.5, 2.0);
        assert!(gig_logpdf(-1.0, &interior).is_err());
        assert!(gig_logpdf(0.0, &interior).is_err());
        let boundary = GigParams::new(1.0, 0.0, 2.0);
        assert!(matches!(gig_logpdf(1.0, &boundary), Err(DistError::BoundaryGig)));
    }

    #[test]
    fn mode_maximizes_logpdf() {
        let p = GigParams::new(1.0, 1.0, 1.0);
        let m = p.mode();
        assert!((m - 1.0).abs() < 1e-14); // ((0) + sqrt(0 + 1)) / 1
        let at = gig_logpdf(m, &p).unwrap();
        for x in [0.8, 0.95, 1.05, 1.3] {
            assert!(gig_logpdf(x, &p).unwrap() < at);
        }
    }

    #[test]
    fn ig_moments_closed_form() {
        let p = GigParams::new(-0.5, 1.5, 0.7);
        let m = gig_moments(&p).unwrap();
        assert!((m.mu_v - 15.0 / 7.0).abs() < 1e-12);
        assert!((m.c_v - 1.5 / 0.7f64.powi(3)).abs() < 1e-10);
        assert!((m.rho_v - 3.0 * 1.5 / 0.7f64.powi(5)).abs() < 1e-8);
    }

    #[test]
    fn variance_positive_everywhere_tested() {
        for p in [
            GigParams::new(1.2, 1.5, 2.0),
            GigParams::new(-3.0, 2.0, 0.1),
            GigParams::new(0.0, 0.5, 3.0),
            GigParams::new(7.0, 0.01, 1.0),
        ] {
            assert!(gig_moments(&p).unwrap().c_v > 0.0, "{p:?}");
        }
    }

    #[test]
    fn ig_closed_form_inversion() {
        let m = MomentTriple { mu_v: 15.0 / 7.0, c_v: 1.5 / 0.7f64.powi(3), rho_v: f64::NAN };
        let p = gig_mom_invert(&m, InversionMode::FixedLambda(-0.5)).unwrap();
        assert!((p.delta - 1.5).abs() < 1e-12);
        assert!((p.gamma - 0.7).abs() < 1e-12);
    }

    #[test]
    fn full_inversion_round_trip() {
        let truth = GigParams::new(1.2, 1.5, 2.0);
        let m = gig_moments(&truth).unwrap();
        let p = gig_mom_invert(&m, InversionMode::Full).unwrap();
        assert!((p.lambda - truth.lambda).abs() < 1e-8, "{p:?}");
        assert!((p.delta - truth.delta).abs() < 1e-8);
        assert!((p.gamma - truth.gamma).abs() < 1e-8);
    }

    #[test]
    fn full_inversion_from_perturbed_triple() {
        let truth = GigParams::new(0.9, 1.2, 0.9);
        let m0 = gig_moments(&truth).unwrap();
        let m = MomentTriple {
            mu_v: m0.mu_v + 1e-6,
            c_v: m0.c_v - 1e-6,
            rho_v: m0.rho_v + 1e-6,
        };
        let p = gig_mom_invert(&m, InversionMode::Full).unwrap();
        assert!((p.lambda - 0.9).abs() < 1e-4);
        assert!((p.delta - 1.2).abs() < 1e-4);
        assert!((p.gamma - 0.9).abs() < 1e-4);
    }

    #[test]
    fn sampler_reproducibility() {
        let p = GigParams::new(1.2, 1.5, 2.0);
        let a = gig_sample(&p, 100, 42).unwrap();
        let b = gig_sample(&p, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = gig_sample(&p, 100, 43).unwrap();
        assert_ne!(a, c);
        assert!(a.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn nig_moment_examples() {
        // (alpha, beta, delta, mu) = (2, 1, 1, 0): gbar = sqrt(3)
        let p = GhParams::new(-0.5, 2.0, 1.0, 1.0, 0.0);
        let (m, v, s, k) = nig_moments(&p).unwrap();
        assert!((m - 1.0 / 3.0f64.sqrt()).abs() < 1e-14);
        assert!((v - 4.0 / 3.0f64.powf(1.5)).abs() < 1e-14);
        assert!(s > 0.0 && k > 0.0);
        // symmetric case
        let p0 = GhParams::new(-0.5, 2.0, 0.0, 1.0, 0.3);
        let (m0, _, s0, _) = nig_moments(&p0).unwrap();
        assert_eq!(s0, 0.0);
        assert!((m0 - 0.3).abs() < 1e-14);
    }

    #[test]
    fn nig_round_trip_and_symmetric_inversion() {
        let p = GhParams::new(-0.5, 2.0, 1.0, 1.0, 0.0);
        let (m, v, s, k) = nig_moments(&p).unwrap();
        let q = nig_from_moments(m, v, s, k).unwrap();
        for (a, b) in [(p.alpha, q.alpha), (p.beta, q.beta), (p.delta, q.delta), (p.mu, q.mu)] {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
        // S = 0 forces beta = 0 and mu = M
        let sym = nig_from_moments(0.7, 1.3, 0.0, 0.5).unwrap();
        assert_eq!(sym.beta, 0.0);
        assert!((sym.mu - 0.7).abs() < 1e-14);
    }

    #[test]
    fn nig_inversion_infeasible_moments() {
        // K = -1 forces 3K - 5S^2 < 0
        assert!(matches!(
            nig_from_moments(0.0, 1.0, 0.0, -1.0),
            Err(DistError::InfeasibleMoments(_))
        ));
        // while (M,V,S,K) = (0,1,0,0.1) is feasible: 0.3 > 0
        assert!(nig_from_moments(0.0, 1.0, 0.0, 0.1).is_ok());
    }

    #[test]
    fn gh_symmetry_when_beta_zero() {
        let p = GhParams::new(1.2, 2.0, 0.0, 1.5, 0.0);
        for y in [0.3, 1.0, 2.5] {
            let a = gh_logpdf(y, &p).unwrap();
            let b = gh_logpdf(-y, &p).unwrap();
            assert!((a - b).abs() < 1e-13);
        }
    }
}
