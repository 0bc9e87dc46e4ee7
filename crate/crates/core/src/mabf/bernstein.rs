//! Monotone Bernstein transformation and the per-step flow density.
//!
//! One flow step maps a scaled load `y` to the base space by
//! `h(y) = log(h2(beta * y))`, where `h2` is a Bernstein polynomial with
//! increasing coefficients. Because `h2` maps [0, 1] onto
//! `[theta_0, theta_M]`, the base normal is truncated to
//! `[log theta_0, log theta_M]` and renormalized.

use super::MabfError;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;
use std::f64::consts::FRAC_1_SQRT_2;

pub const THETA_EPS: f64 = 1e-4;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const DOMAIN_SLACK: f64 = 1e-12;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Bernstein basis `b_{j,m}(t) = C(m, j) t^j (1 - t)^(m - j)` for `j = 0..=m`.
pub fn basis(t: f64, m: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m + 1);
    let s = 1.0 - t;
    let mut pw = 1.0;
    for o in out.iter_mut() {
        *o = pw;
        pw *= t;
    }
    let mut ps = 1.0;
    for o in out.iter_mut().rev() {
        *o *= ps;
        ps *= s;
    }
    let mut binom = 1.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o *= binom;
        binom = binom * (m - j) as f64 / (j + 1) as f64;
    }
}

fn check_domain(t: f64) -> Result<f64, MabfError> {
    if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&t) {
        return Err(MabfError::DomainError(t));
    }
    Ok(t.clamp(0.0, 1.0))
}

/// `h2(t) = (M + 1)^-1 sum_i Be_i(t) theta_i`, written with the Bernstein basis.
pub fn bernstein_eval(t: f64, theta: &[f64]) -> Result<f64, MabfError> {
    let t = check_domain(t)?;
    Ok(eval_unchecked(t, theta))
}

fn eval_unchecked(t: f64, theta: &[f64]) -> f64 {
    let m = theta.len() - 1;
    let mut b = vec![0.0; m + 1];
    basis(t, m, &mut b);
    b.iter().zip(theta).map(|(b, th)| b * th).sum()
}

/// `h2'(t) = M sum_j b_{j,M-1}(t) (theta_{j+1} - theta_j)`.
pub fn bernstein_deriv(t: f64, theta: &[f64]) -> Result<f64, MabfError> {
    let t = check_domain(t)?;
    let m = theta.len() - 1;
    if m == 0 {
        return Ok(0.0);
    }
    let mut b = vec![0.0; m];
    basis(t, m - 1, &mut b);
    Ok(m as f64
        * b.iter()
            .enumerate()
            .map(|(j, b)| b * (theta[j + 1] - theta[j]))
            .sum::<f64>())
}

/// Cumulative-softplus map to strictly increasing positive coefficients:
/// `theta_0 = softplus(a_0) + eps`, `theta_j = theta_{j-1} + softplus(a_j)`.
pub fn theta_from_unconstrained(a: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    let mut acc = THETA_EPS;
    for &x in a {
        acc += softplus(x);
        out.push(acc);
    }
    out
}

/// Maps `dL/dtheta` to `dL/da` for [`theta_from_unconstrained`], in place.
pub fn theta_backward(a: &[f64], d_theta: &mut [f64]) {
    let mut suffix = 0.0;
    for j in (0..a.len()).rev() {
        suffix += d_theta[j];
        d_theta[j] = sigmoid(a[j]) * suffix;
    }
}

/// Standard normal cdf.
pub fn norm_cdf(u: f64) -> f64 {
    0.5 * erfc(-u * FRAC_1_SQRT_2)
}

fn norm_pdf(u: f64) -> f64 {
    if u.is_infinite() {
        return 0.0;
    }
    (-0.5 * u * u - LN_SQRT_2PI).exp()
}

/// `Phi(hi) - Phi(lo)` without cancellation in either tail.
fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        0.5 * (erfc(lo * FRAC_1_SQRT_2) - erfc(hi * FRAC_1_SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi * FRAC_1_SQRT_2) - erfc(-lo * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * erfc(hi * FRAC_1_SQRT_2) - 0.5 * erfc(-lo * FRAC_1_SQRT_2)
    }
}

/// Base-normal mass of `[log theta_0, log theta_M]`.
pub fn truncation_mass(theta: &[f64]) -> f64 {
    normal_mass(theta[0].ln(), theta[theta.len() - 1].ln())
}

/// `h(y) = log h2(beta y)`.
pub fn transform(y: f64, beta: f64, theta: &[f64]) -> Result<f64, MabfError> {
    Ok(bernstein_eval(beta * y, theta)?.ln())
}

/// Log-density of one step, `log phi(h(y)) + log h'(y) - log Z`.
pub fn step_log_density(y: f64, beta: f64, theta: &[f64]) -> Result<f64, MabfError> {
    let mut scratch = StepScratch::new(theta.len() - 1);
    let v = scratch.eval(y, beta, theta, false)?;
    Ok(v)
}

/// Reusable buffers for step densities and their gradients.
pub(crate) struct StepScratch {
    m: usize,
    b_m: Vec<f64>,
    b_m1: Vec<f64>,
    b_m2: Vec<f64>,
    /// `d log f / d theta_j` after `eval(.., true)`.
    pub d_theta: Vec<f64>,
    /// `d log f / d beta` after `eval(.., true)`.
    pub d_beta: f64,
}

impl StepScratch {
    pub fn new(m: usize) -> Self {
        StepScratch {
            m,
            b_m: vec![0.0; m + 1],
            b_m1: vec![0.0; m.max(1)],
            b_m2: vec![0.0; m.saturating_sub(1).max(1)],
            d_theta: vec![0.0; m + 1],
            d_beta: 0.0,
        }
    }

    pub fn eval(&mut self, y: f64, beta: f64, theta: &[f64], grad: bool) -> Result<f64, MabfError> {
        let m = self.m;
        debug_assert_eq!(theta.len(), m + 1);
        if m == 0 {
            return Err(MabfError::NonFinite("Bernstein order must be at least 1".into()));
        }
        let t = check_domain(beta * y)?;
        basis(t, m, &mut self.b_m);
        basis(t, m - 1, &mut self.b_m1[..m]);
        let h2: f64 = self.b_m.iter().zip(theta).map(|(b, th)| b * th).sum();
        let mf = m as f64;
        let d2 = mf * (0..m).map(|j| self.b_m1[j] * (theta[j + 1] - theta[j])).sum::<f64>();
        let h = h2.ln();
        let lo = theta[0].ln();
        let hi = theta[m].ln();
        let z = normal_mass(lo, hi);
        let logf = -0.5 * h * h - LN_SQRT_2PI + beta.ln() + d2.ln() - h - z.ln();
        if !logf.is_finite() {
            return Err(MabfError::NonFinite(format!("step log-density at y = {y}")));
        }
        if grad {
            let d3 = if m >= 2 {
                basis(t, m - 2, &mut self.b_m2[..m - 1]);
                mf * (mf - 1.0)
                    * (0..m - 1)
                        .map(|k| self.b_m2[k] * (theta[k + 2] - 2.0 * theta[k + 1] + theta[k]))
                        .sum::<f64>()
            } else {
                0.0
            };
            let g_h2 = (-h - 1.0) / h2;
            let g_d2 = 1.0 / d2;
            let g_t = g_h2 * d2 + g_d2 * d3;
            self.d_beta = y * g_t + 1.0 / beta;
            for j in 0..=m {
                let up = if j >= 1 { self.b_m1[j - 1] } else { 0.0 };
                let down = if j < m { self.b_m1[j] } else { 0.0 };
                self.d_theta[j] = g_h2 * self.b_m[j] + g_d2 * mf * (up - down);
            }
            if theta[0] > 0.0 {
                self.d_theta[0] += norm_pdf(lo) / (theta[0] * z);
            }
            self.d_theta[m] -= norm_pdf(hi) / (theta[m] * z);
        }
        Ok(logf)
    }
}

/// Solves `h(y) = z` for `y` in `[0, 1 / beta]` by bisection on `t = beta y`.
///
/// `z` must lie inside the transform's range `[log theta_0, log theta_M]`.
pub fn invert(z: f64, beta: f64, theta: &[f64], step: usize) -> Result<f64, MabfError> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut t = 0.5;
    for _ in 0..200 {
        t = 0.5 * (lo + hi);
        let r = eval_unchecked(t, theta).ln() - z;
        if r.abs() < 1e-9 {
            break;
        }
        if r < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= f64::EPSILON * t.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let resid = (eval_unchecked(t, theta).ln() - z).abs();
    if !(resid < 1e-6) {
        return Err(MabfError::InversionFailure { step, residual: resid });
    }
    Ok(t / beta)
}

/// Draws a base-space value from the standard normal restricted to the
/// transform's range.
pub fn draw_base<R: Rng>(theta: &[f64], rng: &mut R) -> f64 {
    let lo = theta[0].ln();
    let hi = theta[theta.len() - 1].ln();
    let mass = normal_mass(lo, hi);
    if mass > 0.05 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > lo && z < hi {
                return z;
            }
        }
    }
    // narrow or far-tail window: inverse cdf by bisection on the mass
    let target = rng.random_range(0.0..1.0) * mass;
    let (mut a, mut b) = (lo.max(-40.0), hi.min(40.0));
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if normal_mass(lo, mid) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}
