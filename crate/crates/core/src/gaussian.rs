//! Closed-form Gaussian toolbox: the smoothing kernel, products of normal
//! densities, Gaussian moments and expectations of kernels against Gaussian
//! laws.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};

/// Values below this are returned as exactly zero.
pub const FLUSH: f64 = 1e-300;

/// Largest moment order accepted (double factorials overflow beyond it).
pub const MAX_MOMENT_ORDER: u32 = 170;

#[inline]
fn flush(v: f64) -> f64 {
    if v.abs() < FLUSH {
        0.0
    } else {
        v
    }
}

#[inline]
pub(crate) fn normal_pdf_unchecked(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    flush((-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt())
}

/// Density of N(mean, var) at x.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> Result<f64> {
    ensure(var > 0.0 && var.is_finite(), || format!("variance must be positive, got {var}"))?;
    Ok(normal_pdf_unchecked(x, mean, var))
}

fn check_eps(eps: f64) -> Result<()> {
    ensure(eps > 0.0 && eps.is_finite(), || format!("kernel width must be positive, got {eps}"))
}

/// w_eps(x) = (2 pi eps^2)^(-1/2) exp(-x^2 / (2 eps^2)).
pub fn gaussian_kernel(x: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(normal_pdf_unchecked(x, 0.0, eps * eps))
}

/// First derivative of the kernel, -x/eps^2 w_eps(x).
pub fn gaussian_kernel_d1(x: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(flush(-x / (eps * eps) * normal_pdf_unchecked(x, 0.0, eps * eps)))
}

/// Second derivative of the kernel, (x^2/eps^4 - 1/eps^2) w_eps(x).
pub fn gaussian_kernel_d2(x: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let e2 = eps * eps;
    Ok(flush((x * x / (e2 * e2) - 1.0 / e2) * normal_pdf_unchecked(x, 0.0, e2)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1 {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian1 {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        ensure(mean.is_finite() && var >= 0.0 && var.is_finite(), || {
            format!("invalid Gaussian law N({mean}, {var})")
        })?;
        Ok(Self { mean, var })
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        normal_pdf(x, self.mean, self.var)
    }
}

/// Product of two normal densities: G_f G_g = scale * G(., mean_fg, var_fg).
pub fn kernel_product(f: Gaussian1, g: Gaussian1) -> Result<(Gaussian1, f64)> {
    if !(f.var > 0.0 && g.var > 0.0 && f.mean.is_finite() && g.mean.is_finite()) {
        return invalid("kernel product needs two proper densities");
    }
    let s = f.var + g.var;
    let mean = (f.mean * g.var + g.mean * f.var) / s;
    let var = f.var * g.var / s;
    let scale = normal_pdf_unchecked(f.mean - g.mean, 0.0, s);
    Ok((Gaussian1 { mean, var }, scale))
}

fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// E[X^n] for X ~ N(mean, var) as the sum over j of (2j-1)!! C(n,2j) var^j mean^(n-2j).
pub fn gaussian_moment(n: u32, mean: f64, var: f64) -> Result<f64> {
    ensure(n <= MAX_MOMENT_ORDER, || format!("moment order {n} exceeds {MAX_MOMENT_ORDER}"))?;
    ensure(var >= 0.0, || format!("variance must be non-negative, got {var}"))?;
    let mut total = 0.0;
    let mut dfact = 1.0; // (2j-1)!!
    for j in 0..=n / 2 {
        if j > 0 {
            dfact *= (2 * j - 1) as f64;
        }
        total += dfact * binomial(n, 2 * j) * var.powi(j as i32) * mean.powi((n - 2 * j) as i32);
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BivariateGaussian {
    pub mean_q: f64,
    pub mean_p: f64,
    pub var_q: f64,
    pub var_p: f64,
    pub corr: f64,
}

impl BivariateGaussian {
    pub fn new(mean_q: f64, mean_p: f64, var_q: f64, var_p: f64, corr: f64) -> Result<Self> {
        let law = Self { mean_q, mean_p, var_q, var_p, corr };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.mean_q.is_finite() && self.mean_p.is_finite(),
            || "bivariate means must be finite".into(),
        )?;
        ensure(self.var_q > 0.0 && self.var_p > 0.0, || "bivariate variances must be positive".into())?;
        ensure((-1.0..=1.0).contains(&self.corr), || format!("correlation {} outside [-1, 1]", self.corr))
    }

    pub fn cov_qp(&self) -> f64 {
        self.corr * (self.var_q * self.var_p).sqrt()
    }

    pub fn marginal_q(&self) -> Gaussian1 {
        Gaussian1 { mean: self.mean_q, var: self.var_q }
    }

    /// Coefficients (a1, a2, v) with E[p | q] = a1 + a2 q and Var[p | q] = v.
    pub fn regression_p_on_q(&self) -> (f64, f64, f64) {
        let a2 = self.corr * (self.var_p / self.var_q).sqrt();
        let a1 = self.mean_p - a2 * self.mean_q;
        (a1, a2, (1.0 - self.corr * self.corr) * self.var_p)
    }

    /// Conditional law of p given q = b.
    pub fn conditional_p_given_q(&self, b: f64) -> Result<Gaussian1> {
        self.validate()?;
        ensure(self.corr.abs() < 1.0, || "degenerate law: |corr| = 1 has no conditional density".into())?;
        let (a1, a2, v) = self.regression_p_on_q();
        Gaussian1::new(a1 + a2 * b, v)
    }
}

/// E[w_eps^(deriv)(x - X) X^n] for X ~ law, deriv in {0, 1, 2}.
pub fn expected_kernel_moment(x: f64, law: Gaussian1, eps: f64, deriv: u32, n: u32) -> Result<f64> {
    check_eps(eps)?;
    ensure(deriv <= 2, || format!("kernel derivative order {deriv} not supported"))?;
    ensure(n + 2 <= MAX_MOMENT_ORDER, || format!("moment order {n} too large"))?;
    let e2 = eps * eps;
    let s = e2 + law.var;
    let g = normal_pdf_unchecked(x, law.mean, s);
    if g == 0.0 {
        return Ok(0.0);
    }
    let v = e2 * law.var / s;
    let value = match deriv {
        0 => g * gaussian_moment(n, (x * law.var + law.mean * e2) / s, v)?,
        _ => {
            let nu = (law.mean - x) * e2 / s;
            let mut acc = 0.0;
            for k in 0..=n {
                let c = binomial(n, k) * x.powi((n - k) as i32);
                let term = if deriv == 1 {
                    gaussian_moment(k + 1, nu, v)? / e2
                } else {
                    -gaussian_moment(k, nu, v)? / e2 + gaussian_moment(k + 2, nu, v)? / (e2 * e2)
                };
                acc += c * term;
            }
            g * acc
        }
    };
    Ok(flush(value))
}

/// E[p^a w_eps^(b)(x - q)] for (q, p) ~ law, with a <= 2 and b <= 2.
pub fn expected_kernel_moments(x: f64, law: &BivariateGaussian, eps: f64, b: u32, a: u32) -> Result<f64> {
    law.validate()?;
    ensure(a <= 2, || format!("momentum power {a} not supported (max 2)"))?;
    let (a1, a2, v) = law.regression_p_on_q();
    let q = law.marginal_q();
    let e0 = expected_kernel_moment(x, q, eps, b, 0)?;
    let value = match a {
        0 => e0,
        1 => a1 * e0 + a2 * expected_kernel_moment(x, q, eps, b, 1)?,
        _ => {
            let e1 = expected_kernel_moment(x, q, eps, b, 1)?;
            let e2 = expected_kernel_moment(x, q, eps, b, 2)?;
            (v + a1 * a1) * e0 + 2.0 * a1 * a2 * e1 + a2 * a2 * e2
        }
    };
    Ok(flush(value))
}
