//! Underdamped Langevin particles: q' = p, p' = -gamma p - V'(q) + sigma beta'.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, DkError, Result};
use crate::gaussian::BivariateGaussian;
use crate::rng::{self, normal, TAG_INIT, TAG_STEP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    Zero,
    /// V(q) = sum_k coeffs[k] q^k, even degree with positive leading coefficient.
    EvenPolynomial { coeffs: Vec<f64> },
    /// V(q) = sum_m a[m-1] cos(m q) + b[m-1] sin(m q).
    PeriodicTrig { a: Vec<f64>, b: Vec<f64> },
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        match self {
            Potential::Zero => Ok(()),
            Potential::EvenPolynomial { coeffs } => {
                let deg = coeffs.len().saturating_sub(1);
                ensure(!coeffs.is_empty() && deg % 2 == 0 && coeffs[deg] > 0.0, || {
                    "polynomial potential needs even degree and a positive leading coefficient".into()
                })?;
                ensure(coeffs.iter().all(|c| c.is_finite()), || "polynomial coefficients must be finite".into())
            }
            Potential::PeriodicTrig { a, b } => ensure(
                a.iter().chain(b).all(|c| c.is_finite()),
                || "trigonometric coefficients must be finite".into(),
            ),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Potential::Zero => true,
            Potential::EvenPolynomial { coeffs } => coeffs.iter().skip(1).all(|&c| c == 0.0),
            Potential::PeriodicTrig { a, b } => a.iter().chain(b).all(|&c| c == 0.0),
        }
    }

    pub fn value(&self, q: f64) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::EvenPolynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * q + c),
            Potential::PeriodicTrig { a, b } => {
                let mut v = 0.0;
                for (m, c) in a.iter().enumerate() {
                    v += c * ((m + 1) as f64 * q).cos();
                }
                for (m, c) in b.iter().enumerate() {
                    v += c * ((m + 1) as f64 * q).sin();
                }
                v
            }
        }
    }

    /// V'(q).
    pub fn derivative(&self, q: f64) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::EvenPolynomial { coeffs } => {
                let mut acc = 0.0;
                for k in (1..coeffs.len()).rev() {
                    acc = acc * q + k as f64 * coeffs[k];
                }
                acc
            }
            Potential::PeriodicTrig { a, b } => {
                let mut v = 0.0;
                for (i, c) in a.iter().enumerate() {
                    let m = (i + 1) as f64;
                    v -= m * c * (m * q).sin();
                }
                for (i, c) in b.iter().enumerate() {
                    let m = (i + 1) as f64;
                    v += m * c * (m * q).cos();
                }
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub gamma: f64,
    pub sigma: f64,
    pub potential: Potential,
}

impl LangevinParams {
    pub fn new(gamma: f64, sigma: f64, potential: Potential) -> Result<Self> {
        let params = Self { gamma, sigma, potential };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with sigma fixed by the fluctuation-dissipation relation sigma^2 / (2 gamma) = kbt.
    pub fn from_temperature(gamma: f64, kbt: f64, potential: Potential) -> Result<Self> {
        ensure(kbt >= 0.0, || format!("temperature must be non-negative, got {kbt}"))?;
        Self::new(gamma, (2.0 * gamma * kbt).sqrt(), potential)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.gamma > 0.0 && self.gamma.is_finite(), || format!("gamma must be positive, got {}", self.gamma))?;
        ensure(self.sigma >= 0.0 && self.sigma.is_finite(), || format!("sigma must be non-negative, got {}", self.sigma))?;
        self.potential.validate()
    }

    pub fn kbt(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.gamma)
    }
}

/// x - (1 - e^{-x}).
fn g2(x: f64) -> f64 {
    if x < 0.5 {
        let mut term = x;
        let mut sum = 0.0;
        for k in 2..30 {
            term *= -x / k as f64;
            sum -= term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        x + (-x).exp_m1()
    }
}

/// x - 2(1 - e^{-x}) + (1 - e^{-2x})/2 = sum_{k>=3} (-1)^{k+1} (2^{k-1} - 2) x^k / k!.
fn g3(x: f64) -> f64 {
    if x < 0.5 {
        let mut fact = 1.0;
        let mut pow = 1.0;
        let mut sum = 0.0;
        for k in 1..40u32 {
            fact *= k as f64;
            pow *= x;
            if k < 3 {
                continue;
            }
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let term = sign * (2f64.powi(k as i32 - 1) - 2.0) * pow / fact;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        x + 2.0 * (-x).exp_m1() - 0.5 * (-2.0 * x).exp_m1()
    }
}

/// Exact transition of the free (V = 0) Langevin pair over one step,
/// including the Brownian increment that drives the momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct OuTransition {
    pub dt: f64,
    pub phi_qp: f64,
    pub phi_pp: f64,
    /// Covariance of (dB, noise_p, noise_q).
    pub cov: [[f64; 3]; 3],
    chol: [[f64; 3]; 3],
}

impl OuTransition {
    pub fn new(gamma: f64, sigma: f64, dt: f64) -> Result<Self> {
        ensure(gamma > 0.0, || format!("gamma must be positive, got {gamma}"))?;
        ensure(dt >= 0.0 && dt.is_finite(), || format!("time step must be non-negative, got {dt}"))?;
        let x = gamma * dt;
        let e1 = -(-x).exp_m1();
        let e2 = -(-2.0 * x).exp_m1();
        let s2 = sigma * sigma;
        let var_p = s2 * e2 / (2.0 * gamma);
        let cov_qp = s2 * e1 * e1 / (2.0 * gamma * gamma);
        let var_q = s2 * g3(x) / gamma.powi(3);
        let cov_bp = sigma * e1 / gamma;
        let cov_bq = sigma * g2(x) / (gamma * gamma);
        let cov = [[dt, cov_bp, cov_bq], [cov_bp, var_p, cov_qp], [cov_bq, cov_qp, var_q]];
        Ok(Self { dt, phi_qp: e1 / gamma, phi_pp: (-x).exp(), cov, chol: cholesky3(&cov) })
    }

    /// Noise covariance of (q, p) accumulated over one step.
    pub fn state_cov(&self) -> [[f64; 2]; 2] {
        [[self.cov[2][2], self.cov[1][2]], [self.cov[1][2], self.cov[1][1]]]
    }

    /// Advance (q, p) with three standard normals; returns (q, p, dB).
    #[inline]
    pub fn apply(&self, q: f64, p: f64, z: [f64; 3]) -> (f64, f64, f64) {
        let l = &self.chol;
        let db = l[0][0] * z[0];
        let np = l[1][0] * z[0] + l[1][1] * z[1];
        let nq = l[2][0] * z[0] + l[2][1] * z[1] + l[2][2] * z[2];
        (q + self.phi_qp * p + nq, self.phi_pp * p + np, db)
    }
}

fn cholesky3(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                l[i][i] = s.max(0.0).sqrt();
            } else {
                l[i][j] = if l[j][j] > 0.0 { s / l[j][j] } else { 0.0 };
            }
        }
    }
    l
}

/// One Euler-Maruyama update; the position moves with the pre-step momentum.
#[inline]
pub fn em_update(q: f64, p: f64, gamma: f64, sigma: f64, force: f64, dt: f64, db: f64) -> (f64, f64) {
    (q + p * dt, p + (-gamma * p + force) * dt + sigma * db)
}

/// Law of (q(t), p(t)) for the free dynamics started from `law0`.
pub fn ou_moments(law0: &BivariateGaussian, params: &LangevinParams, t: f64) -> Result<BivariateGaussian> {
    law0.validate()?;
    params.validate()?;
    ensure(params.potential.is_zero(), || "closed-form moments need V = 0".into())?;
    let tr = OuTransition::new(params.gamma, params.sigma, t)?;
    let (a, b) = (tr.phi_qp, tr.phi_pp);
    let c0 = law0.cov_qp();
    let mean_q = law0.mean_q + a * law0.mean_p;
    let mean_p = b * law0.mean_p;
    let n = tr.state_cov();
    let var_q = law0.var_q + 2.0 * a * c0 + a * a * law0.var_p + n[0][0];
    let cov = b * c0 + a * b * law0.var_p + n[0][1];
    let var_p = b * b * law0.var_p + n[1][1];
    let corr = if var_q > 0.0 && var_p > 0.0 { (cov / (var_q * var_p).sqrt()).clamp(-1.0, 1.0) } else { 0.0 };
    BivariateGaussian::new(mean_q, mean_p, var_q, var_p, corr)
}

/// Draw (q, p) from a bivariate Gaussian with two standard normals.
#[inline]
pub fn sample_bivariate(law: &BivariateGaussian, z1: f64, z2: f64) -> (f64, f64) {
    let sq = law.var_q.sqrt();
    let sp = law.var_p.sqrt();
    let r = law.corr;
    (law.mean_q + sq * z1, law.mean_p + sp * (r * z1 + (1.0 - r * r).max(0.0).sqrt() * z2))
}

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub time: f64,
    pub step: u64,
    pub seed: u64,
    /// Stream identity of each particle; follows the particle under permutation.
    pub ids: Vec<u64>,
    /// Brownian increments of every completed step, kept only when requested.
    pub increments: Option<Vec<Vec<f64>>>,
}

impl ParticleEnsemble {
    pub fn new(q: Vec<f64>, p: Vec<f64>, seed: u64) -> Result<Self> {
        ensure(!q.is_empty() && q.len() == p.len(), || "ensemble needs matching non-empty q and p".into())?;
        ensure(q.iter().chain(&p).all(|v| v.is_finite()), || "initial state must be finite".into())?;
        let ids = (0..q.len() as u64).collect();
        Ok(Self { q, p, time: 0.0, step: 0, seed, ids, increments: None })
    }

    /// Reorder particles (with their streams): new particle k is old particle perm[k].
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        ensure(perm.len() == n && perm.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)), || {
            "not a permutation of the particle indices".into()
        })?;
        Ok(Self {
            q: perm.iter().map(|&i| self.q[i]).collect(),
            p: perm.iter().map(|&i| self.p[i]).collect(),
            ids: perm.iter().map(|&i| self.ids[i]).collect(),
            increments: self
                .increments
                .as_ref()
                .map(|h| h.iter().map(|row| perm.iter().map(|&i| row[i]).collect()).collect()),
            ..self.clone()
        })
    }

    /// N particles drawn i.i.d. from `law`; particle i uses its own stream.
    pub fn sample(n: usize, law: &BivariateGaussian, seed: u64) -> Result<Self> {
        ensure(n >= 1, || "particle count must be at least 1".into())?;
        law.validate()?;
        let (q, p): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|i| {
                let mut r = rng::stream(seed, TAG_INIT, &[i as u64]);
                let z1 = normal(&mut r);
                let z2 = normal(&mut r);
                sample_bivariate(law, z1, z2)
            })
            .unzip();
        Self::new(q, p, seed)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn record_increments(mut self, on: bool) -> Self {
        self.increments = if on { Some(Vec::new()) } else { None };
        self
    }

    fn finish_step(&mut self, dt: f64, db: Vec<f64>) -> Result<()> {
        if self.q.iter().chain(&self.p).any(|v| !v.is_finite()) {
            return Err(DkError::Numerical(format!("non-finite particle state at step {}", self.step + 1)));
        }
        if let Some(hist) = self.increments.as_mut() {
            hist.push(db);
        }
        self.time += dt;
        self.step += 1;
        Ok(())
    }

    /// Euler-Maruyama step for an arbitrary potential.
    pub fn em_step(&mut self, params: &LangevinParams, dt: f64) -> Result<()> {
        params.validate()?;
        ensure(dt > 0.0 && dt.is_finite(), || format!("time step must be positive, got {dt}"))?;
        let (seed, step) = (self.seed, self.step);
        let sdt = dt.sqrt();
        let update = |id: u64, q: &mut f64, p: &mut f64| -> f64 {
            let mut r = rng::stream(seed, TAG_STEP, &[id, step]);
            let db = sdt * normal(&mut r);
            let force = -params.potential.derivative(*q);
            let (nq, np) = em_update(*q, *p, params.gamma, params.sigma, force, dt, db);
            *q = nq;
            *p = np;
            db
        };
        let db = self.map_particles(update);
        self.finish_step(dt, db)
    }

    /// Exact step of the free dynamics (requires V = 0).
    pub fn ou_exact_step(&mut self, params: &LangevinParams, dt: f64) -> Result<()> {
        params.validate()?;
        ensure(params.potential.is_zero(), || "exact transition needs V = 0".into())?;
        let tr = OuTransition::new(params.gamma, params.sigma, dt)?;
        let (seed, step) = (self.seed, self.step);
        let update = |id: u64, q: &mut f64, p: &mut f64| -> f64 {
            let mut r = rng::stream(seed, TAG_STEP, &[id, step]);
            let z = [normal(&mut r), normal(&mut r), normal(&mut r)];
            let (nq, np, db) = tr.apply(*q, *p, z);
            *q = nq;
            *p = np;
            db
        };
        let db = self.map_particles(update);
        self.finish_step(dt, db)
    }

    fn map_particles<F>(&mut self, f: F) -> Vec<f64>
    where
        F: Fn(u64, &mut f64, &mut f64) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.q
                .par_iter_mut()
                .zip(self.p.par_iter_mut())
                .zip(self.ids.par_iter())
                .map(|((q, p), id)| f(*id, q, p))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.q.iter_mut().zip(self.p.iter_mut()).zip(&self.ids).map(|((q, p), id)| f(*id, q, p)).collect()
        }
    }
}

/// Streams the ensemble state as `step,time,particle,q,p` rows.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "step,time,particle,q,p")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, ens: &ParticleEnsemble) -> Result<()> {
        for (i, (q, p)) in ens.q.iter().zip(&ens.p).enumerate() {
            writeln!(self.out, "{},{},{},{},{}", ens.step, ens.time, i, q, p)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
