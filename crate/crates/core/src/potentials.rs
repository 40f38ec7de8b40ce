//! Double-well potentials split as a convex part plus a smooth concave
//! perturbation, the latent-heat function, and the Yosida/truncation family
//! used to regularize singular potentials.
//!
//! Conventions: `beta_hat` is the convex part and `beta` its derivative;
//! `pi_hat(r) = -a r^2` is the perturbation with `pi = pi_hat'`;
//! `gamma = beta + pi` is the full derivative of the double well.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smooth convex branch of a double-well potential with single-valued
/// derivative on an open interval containing 0, normalized so that
/// `beta_hat(0) = 0` and `beta(0) = 0`.
pub trait ConvexBranch: Debug + Send + Sync {
    /// Open interval `(lo, hi)`; endpoints may be infinite.
    fn domain(&self) -> (f64, f64);
    fn beta_hat(&self, r: f64) -> f64;
    fn beta(&self, r: f64) -> f64;
    fn beta_prime(&self, r: f64) -> f64;
    fn beta_second(&self, r: f64) -> f64;
}

/// Convex part of `r^2 (r - 1)^2`: `r^4 - 2 r^3 + 3/2 r^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuarticBranch;

impl ConvexBranch for QuarticBranch {
    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    fn beta_hat(&self, r: f64) -> f64 {
        r * r * (r * r - 2.0 * r + 1.5)
    }
    fn beta(&self, r: f64) -> f64 {
        r * (4.0 * r * r - 6.0 * r + 3.0)
    }
    fn beta_prime(&self, r: f64) -> f64 {
        let s = 2.0 * r - 1.0;
        3.0 * s * s
    }
    fn beta_second(&self, r: f64) -> f64 {
        12.0 * (2.0 * r - 1.0)
    }
}

/// `(1 + r) ln(1 + r) + (1 - r) ln(1 - r)` on `(-1, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogarithmicBranch;

impl ConvexBranch for LogarithmicBranch {
    fn domain(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
    fn beta_hat(&self, r: f64) -> f64 {
        let xlogx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
        xlogx(1.0 + r) + xlogx(1.0 - r)
    }
    fn beta(&self, r: f64) -> f64 {
        r.ln_1p() - (-r).ln_1p()
    }
    fn beta_prime(&self, r: f64) -> f64 {
        2.0 / ((1.0 - r) * (1.0 + r))
    }
    fn beta_second(&self, r: f64) -> f64 {
        let d = (1.0 - r) * (1.0 + r);
        4.0 * r / (d * d)
    }
}

/// Linear monotone branch `beta(s) = k s`; handy for closed-form checks.
#[derive(Debug, Clone, Copy)]
pub struct LinearBranch {
    pub slope: f64,
}

impl ConvexBranch for LinearBranch {
    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    fn beta_hat(&self, r: f64) -> f64 {
        0.5 * self.slope * r * r
    }
    fn beta(&self, r: f64) -> f64 {
        self.slope * r
    }
    fn beta_prime(&self, _r: f64) -> f64 {
        self.slope
    }
    fn beta_second(&self, _r: f64) -> f64 {
        0.0
    }
}

/// Latent-heat primitive `lambda_hat` with derivative `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentHeat {
    /// `lambda_hat(r) = ell r`, so `lambda` is the constant `ell`.
    Linear { ell: f64 },
    /// `lambda_hat(r) = ln cosh r`, `lambda = tanh`.
    LogCosh,
}

impl Default for LatentHeat {
    fn default() -> Self {
        LatentHeat::Linear { ell: 1.0 }
    }
}

impl LatentHeat {
    pub fn lambda_hat(&self, r: f64) -> f64 {
        match *self {
            LatentHeat::Linear { ell } => ell * r,
            LatentHeat::LogCosh => {
                let a = r.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
        }
    }
    pub fn lambda(&self, r: f64) -> f64 {
        match *self {
            LatentHeat::Linear { ell } => ell,
            LatentHeat::LogCosh => r.tanh(),
        }
    }
    pub fn lambda_prime(&self, r: f64) -> f64 {
        match *self {
            LatentHeat::Linear { .. } => 0.0,
            LatentHeat::LogCosh => {
                let t = r.tanh();
                1.0 - t * t
            }
        }
    }
    pub fn lambda_second(&self, r: f64) -> f64 {
        match *self {
            LatentHeat::Linear { .. } => 0.0,
            LatentHeat::LogCosh => {
                let t = r.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Regular,
    Logarithmic,
    CustomSmooth,
}

#[derive(Debug, Clone)]
pub struct PotentialSpec {
    kind: PotentialKind,
    convex: Arc<dyn ConvexBranch>,
    /// Coefficient `a` of the concave part `pi_hat(r) = -a r^2`.
    concave: f64,
    latent: LatentHeat,
}

impl PotentialSpec {
    /// `W(r) = r^2 (r - 1)^2`.
    pub fn regular(latent: LatentHeat) -> Self {
        PotentialSpec { kind: PotentialKind::Regular, convex: Arc::new(QuarticBranch), concave: 0.5, latent }
    }

    /// `W(r) = (1 + r) ln(1 + r) + (1 - r) ln(1 - r) - a r^2` on `(-1, 1)`.
    pub fn logarithmic(a: f64, latent: LatentHeat) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("logarithmic coefficient a = {a} must be positive")));
        }
        Ok(PotentialSpec { kind: PotentialKind::Logarithmic, convex: Arc::new(LogarithmicBranch), concave: a, latent })
    }

    /// Any convex branch plus `pi_hat(r) = -a r^2`, `a >= 0`.
    pub fn custom(convex: Arc<dyn ConvexBranch>, a: f64, latent: LatentHeat) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("concave coefficient a = {a} must be nonnegative")));
        }
        let (lo, hi) = convex.domain();
        if !(lo < 0.0 && hi > 0.0) {
            return Err(Error::InvalidParameter("domain of the convex branch must contain 0".into()));
        }
        Ok(PotentialSpec { kind: PotentialKind::CustomSmooth, convex, concave: a, latent })
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn latent(&self) -> LatentHeat {
        self.latent
    }

    pub fn with_latent(mut self, latent: LatentHeat) -> Self {
        self.latent = latent;
        self
    }

    pub fn concave_coefficient(&self) -> f64 {
        self.concave
    }

    pub fn domain(&self) -> (f64, f64) {
        self.convex.domain()
    }

    pub fn is_singular(&self) -> bool {
        let (lo, hi) = self.domain();
        lo.is_finite() || hi.is_finite()
    }

    pub fn contains(&self, r: f64) -> bool {
        let (lo, hi) = self.domain();
        r > lo && r < hi
    }

    fn check_domain(&self, r: f64) -> Result<()> {
        if self.contains(r) {
            Ok(())
        } else {
            let (lo, hi) = self.domain();
            Err(Error::OutsideDomain { value: r, lo, hi })
        }
    }

    pub fn beta_hat(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(self.convex.beta_hat(r))
    }
    pub fn beta(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(self.convex.beta(r))
    }
    pub fn beta_prime(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(self.convex.beta_prime(r))
    }
    pub fn beta_second(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(self.convex.beta_second(r))
    }
    pub fn pi_hat(&self, r: f64) -> f64 {
        -self.concave * r * r
    }
    pub fn pi(&self, r: f64) -> f64 {
        -2.0 * self.concave * r
    }
    pub fn pi_prime(&self, _r: f64) -> f64 {
        -2.0 * self.concave
    }
    pub fn lambda_hat(&self, r: f64) -> f64 {
        self.latent.lambda_hat(r)
    }
    pub fn lambda(&self, r: f64) -> f64 {
        self.latent.lambda(r)
    }
    pub fn lambda_prime(&self, r: f64) -> f64 {
        self.latent.lambda_prime(r)
    }
    pub fn lambda_second(&self, r: f64) -> f64 {
        self.latent.lambda_second(r)
    }

    /// The full potential `W = beta_hat + pi_hat`.
    pub fn w(&self, r: f64) -> Result<f64> {
        Ok(self.beta_hat(r)? + self.pi_hat(r))
    }
}

/// `(gamma(r), gamma'(r))` with `gamma = beta + pi`.
pub fn eval_gamma(spec: &PotentialSpec, r: f64) -> Result<(f64, f64)> {
    Ok((spec.beta(r)? + spec.pi(r), spec.beta_prime(r)? + spec.pi_prime(r)))
}

pub const DEFAULT_RESOLVENT_TOL: f64 = 1e-12;
const NEWTON_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub epsilon: f64,
    pub resolvent_tol: f64,
}

impl Regularization {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must lie in (0, 1)")));
        }
        Ok(Regularization { epsilon, resolvent_tol: DEFAULT_RESOLVENT_TOL })
    }
}

/// Resolvent `(I + eps beta)^{-1}(r)`: the unique `s` in the domain with
/// `s + eps beta(s) = r`.
pub fn resolvent(spec: &PotentialSpec, epsilon: f64, r: f64) -> Result<f64> {
    resolvent_with_tol(spec, epsilon, r, DEFAULT_RESOLVENT_TOL)
}

pub fn resolvent_with_tol(spec: &PotentialSpec, epsilon: f64, r: f64, tol: f64) -> Result<f64> {
    if r == 0.0 {
        return Ok(0.0);
    }
    if !r.is_finite() {
        return Err(Error::ResolventNonconvergence { r, iterations: 0 });
    }
    let branch = &spec.convex;
    let (lo, hi) = branch.domain();
    // g(s) = s + eps beta(s) - r is increasing with g(0) = -r, and
    // g(r) = eps beta(r) has the sign of r, so the root lies between 0 and r.
    let (mut a, mut b) = if r > 0.0 { (0.0, r.min(hi)) } else { (r.max(lo), 0.0) };
    let g = |s: f64| s + epsilon * branch.beta(s) - r;
    let mut s = r / (1.0 + epsilon * branch.beta_prime(0.0));
    if !(s > a && s < b) {
        s = 0.5 * (a + b);
    }
    let mut converged = false;
    for it in 0..2 * NEWTON_CAP {
        let gs = g(s);
        let slope = 1.0 + epsilon * branch.beta_prime(s);
        let mut next = s - gs / slope;
        if gs.abs() <= tol {
            // One polishing step keeps (r - s) / eps accurate for small eps.
            if next > a && next < b && next.is_finite() {
                s = next;
            }
            converged = true;
            break;
        }
        if gs < 0.0 {
            a = s;
        } else {
            b = s;
        }
        if !(next > a && next < b && next.is_finite()) || it >= NEWTON_CAP {
            next = 0.5 * (a + b);
        }
        if b - a <= 4.0 * f64::EPSILON * s.abs().max(1.0) {
            s = next;
            converged = true;
            break;
        }
        s = next;
    }
    if converged {
        Ok(s)
    } else {
        Err(Error::ResolventNonconvergence { r, iterations: 2 * NEWTON_CAP })
    }
}

/// Yosida approximation `beta_eps(r) = (r - J_eps r) / eps`.
pub fn yosida(spec: &PotentialSpec, epsilon: f64, r: f64) -> Result<f64> {
    let s = resolvent(spec, epsilon, r)?;
    Ok((r - s) / epsilon)
}

/// `beta_eps'(r) = beta'(s) / (1 + eps beta'(s))`, `s = J_eps r`.
pub fn yosida_derivative(spec: &PotentialSpec, epsilon: f64, r: f64) -> Result<f64> {
    let s = resolvent(spec, epsilon, r)?;
    Ok(yosida_slope(spec.convex.beta_prime(s), epsilon))
}

fn yosida_slope(bp: f64, epsilon: f64) -> f64 {
    if bp.is_finite() {
        bp / (1.0 + epsilon * bp)
    } else {
        1.0 / epsilon
    }
}

/// Moreau envelope `B_eps(r) = beta_hat(J_eps r) + |r - J_eps r|^2 / (2 eps)`,
/// the primitive of the Yosida approximation.
pub fn moreau_envelope(spec: &PotentialSpec, epsilon: f64, r: f64) -> Result<f64> {
    let s = resolvent(spec, epsilon, r)?;
    let d = r - s;
    Ok(spec.convex.beta_hat(s) + d * d / (2.0 * epsilon))
}

/// Smooth cutoff: 1 on `|r| <= 1`, 0 on `|r| >= 2`, logistic blend of
/// `exp(-1/x)` bumps in between.
pub fn zeta(r: f64) -> f64 {
    zeta_derivatives(r).0
}

/// `(zeta, zeta', zeta'')` at `r`.
pub fn zeta_derivatives(r: f64) -> (f64, f64, f64) {
    let a = r.abs();
    if a <= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    if a >= 2.0 {
        return (0.0, 0.0, 0.0);
    }
    let t = a - 1.0;
    let u = 1.0 - t;
    // zeta = 1 / (1 + e^h) with h(t) = 1/u - 1/t.
    let h = 1.0 / u - 1.0 / t;
    let z = if h > 0.0 {
        let e = (-h).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + h.exp())
    };
    let h1 = 1.0 / (u * u) + 1.0 / (t * t);
    let h2 = 2.0 / (u * u * u) - 2.0 / (t * t * t);
    let zz = z * (1.0 - z);
    let d1 = -zz * h1;
    let d2 = -((1.0 - 2.0 * z) * d1 * h1 + zz * h2);
    let sign = r.signum();
    (z, sign * d1, d2)
}

/// Truncated latent heat `(Lambda_eps(r), lambda_eps(r))` with
/// `Lambda_eps(r) = lambda_hat(r) zeta(eps r)`.
pub fn lambda_trunc(spec: &PotentialSpec, epsilon: f64, r: f64) -> (f64, f64) {
    let (z, z1, _) = zeta_derivatives(epsilon * r);
    if z == 0.0 && z1 == 0.0 {
        return (0.0, 0.0);
    }
    let lh = spec.lambda_hat(r);
    (lh * z, spec.lambda(r) * z + epsilon * lh * z1)
}

/// Derivative of the truncated latent heat `lambda_eps'(r)`.
pub fn lambda_trunc_prime(spec: &PotentialSpec, epsilon: f64, r: f64) -> f64 {
    let (z, z1, z2) = zeta_derivatives(epsilon * r);
    spec.lambda_prime(r) * z
        + 2.0 * epsilon * spec.lambda(r) * z1
        + epsilon * epsilon * spec.lambda_hat(r) * z2
}

/// The nonlinearities a solver actually sees: the exact ones, or their
/// Yosida/truncation approximations when a regularization is present.
#[derive(Debug, Clone, Copy)]
pub struct Nonlinearity<'a> {
    spec: &'a PotentialSpec,
    reg: Option<Regularization>,
}

impl<'a> Nonlinearity<'a> {
    pub fn new(spec: &'a PotentialSpec, reg: Option<Regularization>) -> Self {
        Nonlinearity { spec, reg }
    }

    pub fn spec(&self) -> &PotentialSpec {
        self.spec
    }

    pub fn regularization(&self) -> Option<Regularization> {
        self.reg
    }

    /// Interval the order parameter must stay in, shrunk by `margin`;
    /// `None` when the effective `beta` is defined on all reals.
    pub fn guard(&self, margin: f64) -> Option<(f64, f64)> {
        if self.reg.is_some() || !self.spec.is_singular() {
            return None;
        }
        let (lo, hi) = self.spec.domain();
        Some((lo + margin, hi - margin))
    }

    /// `(beta(r), beta'(r))`.
    pub fn beta_pair(&self, r: f64) -> Result<(f64, f64)> {
        match self.reg {
            None => Ok((self.spec.beta(r)?, self.spec.beta_prime(r)?)),
            Some(reg) => {
                let s = resolvent_with_tol(self.spec, reg.epsilon, r, reg.resolvent_tol)?;
                let bp = self.spec.convex.beta_prime(s);
                Ok(((r - s) / reg.epsilon, yosida_slope(bp, reg.epsilon)))
            }
        }
    }

    pub fn beta(&self, r: f64) -> Result<f64> {
        Ok(self.beta_pair(r)?.0)
    }

    pub fn beta_hat(&self, r: f64) -> Result<f64> {
        match self.reg {
            None => self.spec.beta_hat(r),
            Some(reg) => {
                let s = resolvent_with_tol(self.spec, reg.epsilon, r, reg.resolvent_tol)?;
                let d = r - s;
                Ok(self.spec.convex.beta_hat(s) + d * d / (2.0 * reg.epsilon))
            }
        }
    }

    pub fn pi(&self, r: f64) -> f64 {
        self.spec.pi(r)
    }

    pub fn pi_prime(&self, r: f64) -> f64 {
        self.spec.pi_prime(r)
    }

    pub fn lambda(&self, r: f64) -> f64 {
        match self.reg {
            None => self.spec.lambda(r),
            Some(reg) => lambda_trunc(self.spec, reg.epsilon, r).1,
        }
    }

    pub fn lambda_prime(&self, r: f64) -> f64 {
        match self.reg {
            None => self.spec.lambda_prime(r),
            Some(reg) => lambda_trunc_prime(self.spec, reg.epsilon, r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn regular() -> PotentialSpec {
        PotentialSpec::regular(LatentHeat::default())
    }

    fn log2() -> PotentialSpec {
        PotentialSpec::logarithmic(2.0, LatentHeat::default()).unwrap()
    }

    fn linear(slope: f64) -> PotentialSpec {
        PotentialSpec::custom(Arc::new(LinearBranch { slope }), 0.0, LatentHeat::default()).unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        while b - a > 1e-15 {
            let m = 0.5 * (a + b);
            if f(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn normalization_and_convexity() {
        for spec in [regular(), log2(), linear(2.0)] {
            assert_eq!(spec.beta_hat(0.0).unwrap(), 0.0);
            assert_eq!(spec.beta(0.0).unwrap(), 0.0);
            let (lo, hi) = spec.domain();
            let (lo, hi) = (lo.max(-3.0) + 1e-6, hi.min(3.0) - 1e-6);
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=400 {
                let r = lo + (hi - lo) * k as f64 / 400.0;
                let b = spec.beta(r).unwrap();
                assert!(b >= prev);
                assert!(spec.beta_hat(r).unwrap() >= 0.0);
                prev = b;
            }
        }
    }

    #[test]
    fn regular_split_recomposes_the_double_well() {
        let spec = regular();
        for k in 0..100 {
            let r = -1.0 + 3.0 * k as f64 / 99.0;
            let w_prime = 2.0 * r * (r - 1.0) * (2.0 * r - 1.0);
            let (g, _) = eval_gamma(&spec, r).unwrap();
            assert!((g - w_prime).abs() < 1e-12);
            let w = r * r * (r - 1.0) * (r - 1.0);
            assert!((spec.w(r).unwrap() - w).abs() < 1e-12);
            let s = 2.0 * r - 1.0;
            assert!((spec.beta_prime(r).unwrap() - 3.0 * s * s).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_examples() {
        let (g, _) = eval_gamma(&regular(), 0.5).unwrap();
        assert!(g.abs() < 1e-15);
        assert_eq!(eval_gamma(&log2(), 0.0).unwrap().0, 0.0);
        let (g, _) = eval_gamma(&log2(), 0.5).unwrap();
        assert!((g - (3f64.ln() - 2.0)).abs() < 1e-14);
        assert!(matches!(eval_gamma(&log2(), 1.0), Err(Error::OutsideDomain { .. })));
        assert!(eval_gamma(&log2(), -1.5).is_err());
    }

    fn fd_order(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, r: f64) -> f64 {
        let err = |h: f64| ((f(r + h) - f(r - h)) / (2.0 * h) - df(r)).abs();
        let (e1, e2) = (err(1e-3), err(1e-4));
        // Central differences are exact up to round-off on quadratics.
        if e1 < 1e-9 {
            return f64::INFINITY;
        }
        (e1 / e2).log10()
    }

    #[test]
    fn derivative_consistency_by_central_differences() {
        let latents = [LatentHeat::Linear { ell: 1.3 }, LatentHeat::LogCosh];
        for latent in latents {
            for spec in [regular().with_latent(latent), log2().with_latent(latent)] {
                for &r in &[-0.7, -0.2, 0.35, 0.8] {
                    let b = |x: f64| spec.beta_hat(x).unwrap();
                    let db = |x: f64| spec.beta(x).unwrap();
                    let ddb = |x: f64| spec.beta_prime(x).unwrap();
                    let dddb = |x: f64| spec.beta_second(x).unwrap();
                    assert!(fd_order(b, db, r) >= 1.9);
                    assert!(fd_order(db, ddb, r) >= 1.9);
                    assert!(fd_order(ddb, dddb, r) >= 1.9);
                    assert!(fd_order(|x| spec.pi_hat(x), |x| spec.pi(x), r) >= 1.9);
                    assert!(fd_order(|x| spec.lambda_hat(x), |x| spec.lambda(x), r) >= 1.9);
                    assert!(fd_order(|x| spec.lambda(x), |x| spec.lambda_prime(x), r) >= 1.9);
                    assert!(fd_order(|x| spec.lambda_prime(x), |x| spec.lambda_second(x), r) >= 1.9);
                }
            }
        }
    }

    #[test]
    fn resolvent_examples() {
        for spec in [regular(), log2(), linear(3.0)] {
            assert_eq!(resolvent(&spec, 0.3, 0.0).unwrap(), 0.0);
        }
        assert!((resolvent(&linear(1.0), 0.5, 3.0).unwrap() - 2.0).abs() < 1e-12);

        let eps = 0.1;
        let oracle = bisect(|s| s + eps * ((1.0 + s) / (1.0 - s)).ln() - 0.9, -1.0 + 1e-15, 1.0 - 1e-15);
        let s = resolvent(&log2(), eps, 0.9).unwrap();
        assert!((s - oracle).abs() < 1e-12, "{s} vs {oracle}");
    }

    #[test]
    fn resolvent_handles_arguments_far_outside_a_bounded_domain() {
        let spec = log2();
        for &r in &[1.0, 1.05, 3.0, -2.5] {
            let s = resolvent(&spec, 0.025, r).unwrap();
            assert!(s > -1.0 && s < 1.0);
            let b = yosida(&spec, 0.025, r).unwrap();
            assert!(b.is_finite() && b.signum() == r.signum());
        }
    }

    #[test]
    fn yosida_examples() {
        assert_eq!(yosida(&log2(), 0.2, 0.0).unwrap(), 0.0);
        assert!((yosida(&linear(1.0), 1.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        let v = yosida(&log2(), 0.01, 0.5).unwrap();
        assert!(v >= 0.0 && v <= 3f64.ln());
    }

    #[test]
    fn yosida_approaches_beta_monotonically() {
        for spec in [regular(), log2()] {
            for &r in &[-0.9, -0.4, 0.3, 0.75, 0.95] {
                let beta = spec.beta(r).unwrap();
                let errs: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
                    .iter()
                    .map(|&e| (yosida(&spec, e, r).unwrap() - beta).abs())
                    .collect();
                assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
            }
        }
    }

    #[test]
    fn yosida_bounds_and_envelope() {
        for spec in [regular(), log2()] {
            for eps in [0.3, 0.05] {
                for k in 0..81 {
                    let r = -0.98 + 1.96 * k as f64 / 80.0;
                    let b = yosida(&spec, eps, r).unwrap();
                    assert!(b.abs() <= spec.beta(r).unwrap().abs() + 1e-12);
                    let env = moreau_envelope(&spec, eps, r).unwrap();
                    assert!(env >= -1e-15 && env <= spec.beta_hat(r).unwrap() + 1e-12);
                }
                // Envelope is the primitive of the Yosida approximation.
                let r = 0.4;
                let h = 1e-5;
                let fd = (moreau_envelope(&spec, eps, r + h).unwrap() - moreau_envelope(&spec, eps, r - h).unwrap())
                    / (2.0 * h);
                assert!((fd - yosida(&spec, eps, r).unwrap()).abs() < 1e-7);
                let fd = (yosida(&spec, eps, r + h).unwrap() - yosida(&spec, eps, r - h).unwrap()) / (2.0 * h);
                assert!((fd - yosida_derivative(&spec, eps, r).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cutoff_and_truncated_latent_heat() {
        assert_eq!(zeta(0.3), 1.0);
        assert_eq!(zeta(-1.0), 1.0);
        assert_eq!(zeta(2.0), 0.0);
        assert_eq!(zeta(-7.0), 0.0);
        assert!((zeta(1.5) - 0.5).abs() < 1e-15);
        let spec = PotentialSpec::regular(LatentHeat::Linear { ell: 1.0 });
        let (big, small) = lambda_trunc(&spec, 1.0, 1.5);
        assert!((big - 1.5 * zeta(1.5)).abs() < 1e-15);
        assert!((big - 0.75).abs() < 1e-15);
        assert!(small.is_finite());

        let spec = PotentialSpec::regular(LatentHeat::LogCosh);
        let eps = 0.2;
        assert_eq!(lambda_trunc(&spec, eps, 4.0), (spec.lambda_hat(4.0), spec.lambda(4.0)));
        assert_eq!(lambda_trunc(&spec, eps, -10.5), (0.0, 0.0));

        // Derivatives of the cutoff and of the truncated family.
        for &r in &[1.1, 1.37, 1.5, 1.8, -1.6] {
            let h = 1e-6;
            let (_, z1, z2) = zeta_derivatives(r);
            assert!(((zeta(r + h) - zeta(r - h)) / (2.0 * h) - z1).abs() < 1e-6);
            let d = (zeta_derivatives(r + h).1 - zeta_derivatives(r - h).1) / (2.0 * h);
            assert!((d - z2).abs() < 1e-4 * (1.0 + z2.abs()));
            let x = r / eps;
            let fd = (lambda_trunc(&spec, eps, x + h).0 - lambda_trunc(&spec, eps, x - h).0) / (2.0 * h);
            assert!((fd - lambda_trunc(&spec, eps, x).1).abs() < 1e-6);
            let fd = (lambda_trunc(&spec, eps, x + h).1 - lambda_trunc(&spec, eps, x - h).1) / (2.0 * h);
            assert!((fd - lambda_trunc_prime(&spec, eps, x)).abs() < 1e-6);
        }
        // Bounded over the whole line: |lambda| <= 1, |lambda_hat| <= 2/eps on
        // the support, and |zeta'| <= 2 (attained at the midpoint of the ramp).
        let sup = (0..4000)
            .map(|k| lambda_trunc(&spec, eps, -12.0 + 0.006 * k as f64).1.abs())
            .fold(0.0, f64::max);
        assert!(sup <= 1.0 + eps * (2.0 / eps) * 2.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(PotentialSpec::logarithmic(0.0, LatentHeat::default()).is_err());
        assert!(Regularization::new(1.0).is_err());
        assert!(Regularization::new(0.0).is_err());
    }

    proptest! {
        #[test]
        fn resolvent_is_a_contraction(r1 in -3.0f64..3.0, r2 in -3.0f64..3.0, eps in 0.01f64..0.9) {
            for spec in [regular(), log2()] {
                let s1 = resolvent(&spec, eps, r1).unwrap();
                let s2 = resolvent(&spec, eps, r2).unwrap();
                prop_assert!((s1 - s2).abs() <= (r1 - r2).abs() + 1e-12);
            }
        }

        #[test]
        fn yosida_is_monotone_and_lipschitz(r1 in -2.0f64..2.0, r2 in -2.0f64..2.0, eps in 0.01f64..0.9) {
            let spec = log2();
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            let (b1, b2) = (yosida(&spec, eps, lo).unwrap(), yosida(&spec, eps, hi).unwrap());
            prop_assert!(b2 >= b1 - 1e-9);
            prop_assert!(b2 - b1 <= (hi - lo) / eps + 1e-9);
        }
    }
}
