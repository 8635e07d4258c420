//! The von Mises kernel on the torus, its eigenvalues and Q-Wiener increments.
//!
//! The kernel p(x) = exp(cos x / (2 eps^2)) / (2 pi I_0(1 / (2 eps^2))) is the
//! periodic analogue of the Gaussian w_{sqrt(2) eps}. Its Fourier cosine
//! coefficients are lambda_j = I_j(z) / I_0(z) with z = 1 / (2 eps^2).

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, DkError, Result};
use crate::io::{write_csv, write_json};
use crate::rng::normal;

/// Scaled modified Bessel functions e^{-z} I_j(z) for j = 0..=j_max.
///
/// Backward recurrence I_{j-1} = I_{j+1} + (2j / z) I_j from a start order well
/// past the decay region, normalised with e^{-z} (I_0 + 2 sum_{j>=1} I_j) = 1.
pub fn bessel_i_scaled_all(z: f64, j_max: usize) -> Result<Vec<f64>> {
    ensure(z >= 0.0 && z.is_finite(), || format!("Bessel argument must be finite and non-negative, got {z}"))?;
    let mut out = vec![0.0; j_max + 1];
    if z == 0.0 {
        out[0] = 1.0;
        return Ok(out);
    }
    let start = j_max.max(z.ceil() as usize) + 50 + (10.0 * z.sqrt()).ceil() as usize;
    let mut f = vec![0.0; start + 2];
    f[start] = 1.0;
    for k in (1..=start).rev() {
        f[k - 1] = f[k + 1] + (2.0 * k as f64 / z) * f[k];
        if f[k - 1] > 1e250 {
            for v in f[k - 1..=start].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = f[0] + 2.0 * f[1..=start].iter().sum::<f64>();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(DkError::Numerical(format!("Bessel recurrence failed at z = {z}")));
    }
    for (o, v) in out.iter_mut().zip(&f) {
        *o = v / norm;
    }
    Ok(out)
}

pub fn bessel_i_scaled(j: usize, z: f64) -> Result<f64> {
    Ok(bessel_i_scaled_all(z, j)?[j])
}

/// Von Mises density exp(kappa (cos x - 1)) / (2 pi e^{-kappa} I_0(kappa)).
pub fn von_mises_density(x: f64, kappa: f64) -> Result<f64> {
    ensure(kappa >= 0.0 && kappa.is_finite(), || format!("concentration must be non-negative, got {kappa}"))?;
    let i0 = bessel_i_scaled(0, kappa)?;
    Ok((kappa * (x.cos() - 1.0)).exp() / (2.0 * PI * i0))
}

/// The torus kernel p_{sqrt(2) eps}(x) = Z^{-1} exp(-sin^2(x/2) / eps^2).
pub fn von_mises_kernel(x: f64, eps: f64) -> Result<f64> {
    ensure(eps > 0.0 && eps.is_finite(), || format!("kernel width must be positive, got {eps}"))?;
    von_mises_density(x, 1.0 / (2.0 * eps * eps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpectrum {
    pub epsilon: f64,
    pub j_max: usize,
    /// lambda_j for j = 0..=j_max; lambda_{-j} = lambda_j.
    pub lambda: Vec<f64>,
}

pub fn default_j_max(eps: f64) -> usize {
    (3.0 / (2.0 * eps * eps)).ceil() as usize + 64
}

const TAIL_TOL: f64 = 1e-12;

/// Eigenvalues of the covariance operator with kernel p_{sqrt(2) eps}.
pub fn kernel_eigenvalues(eps: f64, j_max: Option<usize>) -> Result<KernelSpectrum> {
    ensure(eps > 0.0 && eps <= 1.0, || format!("epsilon must lie in (0, 1], got {eps}"))?;
    let z = 1.0 / (2.0 * eps * eps);
    let j_max = j_max.unwrap_or_else(|| default_j_max(eps));
    ensure(j_max as f64 >= z, || format!("j_max = {j_max} is below 1/(2 eps^2) = {z:.3}"))?;
    let scaled = bessel_i_scaled_all(z, 2 * j_max)?;
    let i0 = scaled[0];
    let all: Vec<f64> = scaled.iter().map(|v| v / i0).collect();
    let weight = |j: usize| (1.0 + (j * j) as f64) * all[j];
    let head: f64 = (0..=j_max).map(weight).sum();
    let tail: f64 = (j_max + 1..=2 * j_max).map(weight).sum();
    if tail > TAIL_TOL * head {
        return Err(DkError::Numerical(format!(
            "spectrum truncation at j_max = {j_max} leaves relative tail {:.3e}",
            tail / head
        )));
    }
    let mut lambda = all;
    lambda.truncate(j_max + 1);
    lambda[0] = 1.0;
    Ok(KernelSpectrum { epsilon: eps, j_max, lambda })
}

impl KernelSpectrum {
    pub fn lambda(&self, j: i64) -> f64 {
        self.lambda.get(j.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    pub fn alpha(&self, j: i64) -> f64 {
        (1.0 + (j * j) as f64) * self.lambda(j)
    }

    /// sqrt(lambda_j), the weights of the square-root operator.
    pub fn sqrt_weights(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l.sqrt()).collect()
    }

    pub fn write(&self, csv: &Path, sidecar: &Path) -> Result<()> {
        write_csv(
            csv,
            "j,lambda,alpha",
            self.lambda.iter().enumerate().map(|(j, l)| [j as f64, *l, (1.0 + (j * j) as f64) * l]),
        )?;
        write_json(sidecar, &serde_json::json!({ "epsilon": self.epsilon, "j_max": self.j_max }))
    }
}

/// sum over all integers j of lambda_j |j|^n.
pub fn eigen_sum(spec: &KernelSpectrum, n: u32) -> f64 {
    let mut s = if n == 0 { spec.lambda[0] } else { 0.0 };
    for (j, l) in spec.lambda.iter().enumerate().skip(1) {
        s += 2.0 * l * (j as f64).powi(n as i32);
    }
    s
}

/// One increment of the Q-Wiener process with covariance kernel p_{sqrt(2) eps}.
///
/// Coefficients refer to the L2-orthonormal basis 1/sqrt(2 pi), cos(mx)/sqrt(pi),
/// sin(mx)/sqrt(pi); each is N(0, lambda_m dt).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseIncrement {
    pub dt: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

pub fn sample_noise_increment<R: Rng + ?Sized>(
    spec: &KernelSpectrum,
    m_trunc: usize,
    dt: f64,
    rng: &mut R,
) -> Result<NoiseIncrement> {
    ensure(m_trunc <= spec.j_max, || format!("m_trunc = {m_trunc} exceeds j_max = {}", spec.j_max))?;
    ensure(dt >= 0.0 && dt.is_finite(), || format!("dt must be non-negative, got {dt}"))?;
    let mut cos = Vec::with_capacity(m_trunc + 1);
    let mut sin = Vec::with_capacity(m_trunc + 1);
    for m in 0..=m_trunc {
        let s = (spec.lambda[m] * dt).sqrt();
        cos.push(s * normal(rng));
        sin.push(if m == 0 { 0.0 } else { s * normal(rng) });
    }
    Ok(NoiseIncrement { dt, cos, sin })
}

impl NoiseIncrement {
    pub fn m_trunc(&self) -> usize {
        self.cos.len() - 1
    }

    /// Complex Fourier coefficient f_m with f = sum_m f_m e^{imx}.
    pub fn fourier(&self, m: i64) -> num_complex::Complex64 {
        let k = m.unsigned_abs() as usize;
        if k > self.m_trunc() {
            return num_complex::Complex64::new(0.0, 0.0);
        }
        if k == 0 {
            return num_complex::Complex64::new(self.cos[0] / (2.0 * PI).sqrt(), 0.0);
        }
        let c = num_complex::Complex64::new(self.cos[k], -self.sin[k]) / (2.0 * PI.sqrt());
        if m > 0 {
            c
        } else {
            c.conj()
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut v = self.cos[0] / (2.0 * PI).sqrt();
        for m in 1..=self.m_trunc() {
            let mx = m as f64 * x;
            v += (self.cos[m] * mx.cos() + self.sin[m] * mx.sin()) / PI.sqrt();
        }
        v
    }
}
