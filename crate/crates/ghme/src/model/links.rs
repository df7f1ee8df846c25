//! Link functions `s(z, alpha)` and `sigma^2(w, tau)` with their first two
//! parameter derivatives. Built-ins cover the forms used in the experiments;
//! custom links register value plus derivative callbacks and are verified
//! against finite differences on construction.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::ModelError;

/// Custom mean link `s(z, alpha)`.
pub trait CustomMean: Send + Sync {
    fn value(&self, z: &[f64], alpha: &[f64]) -> f64;
    fn grad(&self, z: &[f64], alpha: &[f64], out: &mut [f64]);
    fn hess(&self, z: &[f64], alpha: &[f64], out: &mut DMatrix<f64>);
    /// Parameter dimension given the covariate dimension.
    fn param_dim(&self, p_z: usize) -> usize;
    /// Whether s(z, -alpha) = -s(z, alpha); lets the initial estimator
    /// resolve the sign aliasing between s and the random-effect mean.
    fn odd_in_alpha(&self) -> bool {
        false
    }
}

/// Custom variance link `sigma^2(w, tau) > 0`.
pub trait CustomVar: Send + Sync {
    fn value(&self, w: &[f64], tau: &[f64]) -> f64;
    fn grad(&self, w: &[f64], tau: &[f64], out: &mut [f64]);
    fn hess(&self, w: &[f64], tau: &[f64], out: &mut DMatrix<f64>);
    fn param_dim(&self, p_w: usize) -> usize;
}

#[derive(Clone)]
pub enum MeanLink {
    /// s(z, alpha) = tanh(z' alpha)
    TanhLinear,
    /// s(z, alpha) = z' alpha
    Linear,
    /// s identically zero (no skew term); alpha is carried but unused
    Zero,
    Custom(Arc<dyn CustomMean>),
}

impl std::fmt::Debug for MeanLink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeanLink::TanhLinear => write!(f, "TanhLinear"),
            MeanLink::Linear => write!(f, "Linear"),
            MeanLink::Zero => write!(f, "Zero"),
            MeanLink::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone)]
pub enum VarLink {
    /// sigma^2(w, tau) = exp(w' tau)
    ExpLinear,
    Custom(Arc<dyn CustomVar>),
}

impl std::fmt::Debug for VarLink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VarLink::ExpLinear => write!(f, "ExpLinear"),
            VarLink::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub mean: MeanLink,
    pub var: VarLink,
}

impl LinkSpec {
    /// tanh mean link with log-linear variance, the experiment configuration.
    pub fn tanh_exp() -> Self {
        Self { mean: MeanLink::TanhLinear, var: VarLink::ExpLinear }
    }

    pub fn linear_exp() -> Self {
        Self { mean: MeanLink::Linear, var: VarLink::ExpLinear }
    }

    /// Register custom links; derivative callbacks are probed against finite
    /// differences at a handful of points before acceptance.
    pub fn custom(mean: MeanLink, var: VarLink, p_z: usize, p_w: usize) -> Result<Self, ModelError> {
        let spec = Self { mean, var };
        spec.verify(p_z, p_w)?;
        Ok(spec)
    }

    pub fn mean_param_dim(&self, p_z: usize) -> usize {
        match &self.mean {
            MeanLink::TanhLinear | MeanLink::Linear | MeanLink::Zero => p_z,
            MeanLink::Custom(c) => c.param_dim(p_z),
        }
    }

    pub fn var_param_dim(&self, p_w: usize) -> usize {
        match &self.var {
            VarLink::ExpLinear => p_w,
            VarLink::Custom(c) => c.param_dim(p_w),
        }
    }

    pub fn mean_odd_in_alpha(&self) -> bool {
        match &self.mean {
            MeanLink::TanhLinear | MeanLink::Linear | MeanLink::Zero => true,
            MeanLink::Custom(c) => c.odd_in_alpha(),
        }
    }

    pub fn s_value(&self, z: &[f64], alpha: &DVector<f64>) -> f64 {
        match &self.mean {
            MeanLink::TanhLinear => dot(z, alpha).tanh(),
            MeanLink::Linear => dot(z, alpha),
            MeanLink::Zero => 0.0,
            MeanLink::Custom(c) => c.value(z, alpha.as_slice()),
        }
    }

    /// Value and gradient of s.
    pub fn s_grad(&self, z: &[f64], alpha: &DVector<f64>, out: &mut DVector<f64>) -> f64 {
        match &self.mean {
            MeanLink::TanhLinear => {
                let s = dot(z, alpha).tanh();
                let c = 1.0 - s * s;
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = c * zi;
                }
                s
            }
            MeanLink::Linear => {
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = zi;
                }
                dot(z, alpha)
            }
            MeanLink::Zero => {
                out.fill(0.0);
                0.0
            }
            MeanLink::Custom(c) => {
                c.grad(z, alpha.as_slice(), out.as_mut_slice());
                c.value(z, alpha.as_slice())
            }
        }
    }

    pub fn s_hess(&self, z: &[f64], alpha: &DVector<f64>, out: &mut DMatrix<f64>) {
        match &self.mean {
            MeanLink::TanhLinear => {
                let s = dot(z, alpha).tanh();
                let c = -2.0 * s * (1.0 - s * s);
                outer_scaled(z, c, out);
            }
            MeanLink::Linear | MeanLink::Zero => out.fill(0.0),
            MeanLink::Custom(cb) => cb.hess(z, alpha.as_slice(), out),
        }
    }

    pub fn sig2_value(&self, w: &[f64], tau: &DVector<f64>) -> f64 {
        match &self.var {
            VarLink::ExpLinear => dot(w, tau).exp(),
            VarLink::Custom(c) => c.value(w, tau.as_slice()),
        }
    }

    pub fn sig2_grad(&self, w: &[f64], tau: &DVector<f64>, out: &mut DVector<f64>) -> f64 {
        match &self.var {
            VarLink::ExpLinear => {
                let v = dot(w, tau).exp();
                for (o, &wi) in out.iter_mut().zip(w) {
                    *o = v * wi;
                }
                v
            }
            VarLink::Custom(c) => {
                c.grad(w, tau.as_slice(), out.as_mut_slice());
                c.value(w, tau.as_slice())
            }
        }
    }

    pub fn sig2_hess(&self, w: &[f64], tau: &DVector<f64>, out: &mut DMatrix<f64>) {
        match &self.var {
            VarLink::ExpLinear => {
                let v = dot(w, tau).exp();
                outer_scaled(w, v, out);
            }
            VarLink::Custom(c) => c.hess(w, tau.as_slice(), out),
        }
    }

    fn verify(&self, p_z: usize, p_w: usize) -> Result<(), ModelError> {
        let pa = self.mean_param_dim(p_z);
        let pt = self.var_param_dim(p_w);
        // deterministic probe points
        let probes = [0.37, -0.81, 0.12, 0.55, -0.29, 0.91, -0.64, 0.23];
        let take = |off: usize, n: usize| -> Vec<f64> {
            (0..n).map(|i| probes[(off + i) % probes.len()]).collect()
        };
        for probe in 0..3 {
            let z = take(probe, p_z);
            let alpha = DVector::from_vec(take(probe + 2, pa));
            let mut g = DVector::zeros(pa);
            self.s_grad(&z, &alpha, &mut g);
            let mut h = DMatrix::zeros(pa, pa);
            self.s_hess(&z, &alpha, &mut h);
            check_fd(
                |a: &DVector<f64>| self.s_value(&z, a),
                &alpha,
                &g,
                &h,
                "mean link s",
            )?;

            let w = take(probe + 1, p_w);
            let tau = DVector::from_vec(take(probe + 3, pt));
            let v = self.sig2_value(&w, &tau);
            if !(v > 0.0) {
                return Err(ModelError::NonPositiveVariance);
            }
            let mut gv = DVector::zeros(pt);
            self.sig2_grad(&w, &tau, &mut gv);
            let mut hv = DMatrix::zeros(pt, pt);
            self.sig2_hess(&w, &tau, &mut hv);
            check_fd(
                |t: &DVector<f64>| self.sig2_value(&w, t),
                &tau,
                &gv,
                &hv,
                "variance link sigma^2",
            )?;
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn outer_scaled(v: &[f64], c: f64, out: &mut DMatrix<f64>) {
    for i in 0..v.len() {
        for j in 0..v.len() {
            out[(i, j)] = c * v[i] * v[j];
        }
    }
}

fn check_fd<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    x: &DVector<f64>,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
    what: &str,
) -> Result<(), ModelError> {
    let p = x.len();
    let h = 1e-5;
    let scale = 1.0 + grad.amax();
    for i in 0..p {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        if (fd - grad[i]).abs() > 1e-4 * scale {
            return Err(ModelError::LinkDerivativeMismatch(format!(
                "{what}: gradient[{i}] = {}, finite difference {fd}",
                grad[i]
            )));
        }
        let f0 = f(x);
        let fd2 = (f(&xp) - 2.0 * f0 + f(&xm)) / (h * h);
        if (fd2 - hess[(i, i)]).abs() > 1e-3 * (1.0 + hess[(i, i)].abs()) {
            return Err(ModelError::LinkDerivativeMismatch(format!(
                "{what}: hessian[{i},{i}] = {}, finite difference {fd2}",
                hess[(i, i)]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_links_pass_their_own_fd_check() {
        LinkSpec::tanh_exp().verify(2, 2).unwrap();
        LinkSpec::linear_exp().verify(3, 2).unwrap();
    }

    struct BadMean;
    impl CustomMean for BadMean {
        fn value(&self, z: &[f64], alpha: &[f64]) -> f64 {
            z.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>().sin()
        }
        fn grad(&self, z: &[f64], _alpha: &[f64], out: &mut [f64]) {
            // wrong on purpose: missing the cos factor
            out.copy_from_slice(z);
        }
        fn hess(&self, _z: &[f64], _alpha: &[f64], out: &mut DMatrix<f64>) {
            out.fill(0.0);
        }
        fn param_dim(&self, p_z: usize) -> usize {
            p_z
        }
    }

    #[test]
    fn registration_rejects_wrong_derivatives() {
        let res = LinkSpec::custom(MeanLink::Custom(Arc::new(BadMean)), VarLink::ExpLinear, 2, 2);
        assert!(matches!(res, Err(ModelError::LinkDerivativeMismatch(_))));
    }

    struct SineMean;
    impl CustomMean for SineMean {
        fn value(&self, z: &[f64], alpha: &[f64]) -> f64 {
            z.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>().sin()
        }
        fn grad(&self, z: &[f64], alpha: &[f64], out: &mut [f64]) {
            let u: f64 = z.iter().zip(alpha).map(|(a, b)| a * b).sum();
            for (o, &zi) in out.iter_mut().zip(z) {
                *o = u.cos() * zi;
            }
        }
        fn hess(&self, z: &[f64], alpha: &[f64], out: &mut DMatrix<f64>) {
            let u: f64 = z.iter().zip(alpha).map(|(a, b)| a * b).sum();
            outer_scaled(z, -u.sin(), out);
        }
        fn param_dim(&self, p_z: usize) -> usize {
            p_z
        }
        fn odd_in_alpha(&self) -> bool {
            true
        }
    }

    #[test]
    fn registration_accepts_correct_derivatives() {
        LinkSpec::custom(MeanLink::Custom(Arc::new(SineMean)), VarLink::ExpLinear, 2, 2).unwrap();
    }
}
