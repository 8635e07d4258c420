//! Spectral solver for the regularised Dean-Kawasaki SPDE on the torus.
//!
//! State X = (rho, j) with f = sum_m f_m e^{imx}. The linear part
//! rho' = -j_x, j' = -gamma j - c rho_x (c = sigma^2 / (2 gamma)) is integrated
//! exactly per mode; the drift -V'_per rho and the multiplicative noise
//! (sigma / sqrt N) h_delta(rho) xi only feed the current.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, DkError, Result};
use crate::particles::Potential;
use crate::io::write_csv;
use crate::periodic_kernel::{kernel_eigenvalues, sample_noise_increment, KernelSpectrum, NoiseIncrement};
use crate::rng::{self, TAG_SPDE_NOISE};
use crate::stats::{mean_se, wilson_interval, MeanSe};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Fourier coefficients for modes 0..=M; negative modes are the conjugates,
/// so Hermitian symmetry holds by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub rho: Vec<Complex64>,
    pub j: Vec<Complex64>,
    pub time: f64,
}

impl SpectralState {
    pub fn zeros(m_trunc: usize) -> Self {
        Self { rho: vec![ZERO; m_trunc + 1], j: vec![ZERO; m_trunc + 1], time: 0.0 }
    }

    pub fn m_trunc(&self) -> usize {
        self.rho.len() - 1
    }

    /// Project real functions onto modes |m| <= M by sampling on `n_grid` points.
    pub fn from_functions<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(
        rho: F,
        j: G,
        m_trunc: usize,
        n_grid: usize,
    ) -> Result<Self> {
        ensure(n_grid > 2 * m_trunc, || format!("n_grid = {n_grid} cannot resolve {m_trunc} modes"))?;
        let mut t = Transforms::new(n_grid);
        let xs: Vec<f64> = (0..n_grid).map(|k| 2.0 * PI * k as f64 / n_grid as f64).collect();
        let r: Vec<f64> = xs.iter().map(|&x| rho(x)).collect();
        let c: Vec<f64> = xs.iter().map(|&x| j(x)).collect();
        let mut s = Self { rho: t.analyse(&r, m_trunc), j: t.analyse(&c, m_trunc), time: 0.0 };
        s.rho[0].im = 0.0;
        s.j[0].im = 0.0;
        Ok(s)
    }

    /// Coefficient of e^{imx} for any integer m.
    pub fn rho_coeff(&self, m: i64) -> Complex64 {
        coeff(&self.rho, m)
    }

    pub fn j_coeff(&self, m: i64) -> Complex64 {
        coeff(&self.j, m)
    }

    /// (rho, j) sampled on n equispaced points of [0, 2 pi).
    pub fn to_grid(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure(n > 2 * self.m_trunc(), || format!("grid of {n} points cannot hold {} modes", self.m_trunc()))?;
        let mut t = Transforms::new(n);
        Ok((t.synthesise(&self.rho), t.synthesise(&self.j)))
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(&self.j).all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

fn coeff(v: &[Complex64], m: i64) -> Complex64 {
    match v.get(m.unsigned_abs() as usize) {
        None => ZERO,
        Some(c) if m >= 0 => *c,
        Some(c) => c.conj(),
    }
}

/// sum over m of (1 + m^2) (|a_m|^2 + |b_m|^2) over all integer modes, times 2 pi.
fn weighted_sum(a: &[Complex64], b: &[Complex64], c: f64) -> f64 {
    let mut s = 0.0;
    for m in 0..a.len() {
        let w = (1.0 + (m * m) as f64) * (c * a[m].norm_sqr() + b[m].norm_sqr());
        s += if m == 0 { w } else { 2.0 * w };
    }
    2.0 * PI * s
}

/// The W = H^1 x H^1 norm.
pub fn w_norm(x: &SpectralState) -> f64 {
    weighted_sum(&x.rho, &x.j, 1.0).sqrt()
}

/// ||x - y||_W for states with the same truncation.
pub fn w_distance(x: &SpectralState, y: &SpectralState) -> f64 {
    let dr: Vec<Complex64> = x.rho.iter().zip(&y.rho).map(|(a, b)| a - b).collect();
    let dj: Vec<Complex64> = x.j.iter().zip(&y.j).map(|(a, b)| a - b).collect();
    weighted_sum(&dr, &dj, 1.0).sqrt()
}

/// Weighted energy c ||rho||^2_{H1} + ||j||^2_{H1}, non-increasing under the semigroup.
pub fn weighted_energy(x: &SpectralState, kbt: f64) -> f64 {
    weighted_sum(&x.rho, &x.j, kbt)
}

/// Number of Fourier modes of a periodic potential; polynomial potentials are not periodic.
pub fn potential_bandwidth(v: &Potential) -> Result<usize> {
    match v {
        Potential::Zero => Ok(0),
        Potential::PeriodicTrig { a, b } => Ok(a.len().max(b.len())),
        Potential::EvenPolynomial { .. } => invalid("the SPDE solver needs a periodic potential"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub gamma: f64,
    pub sigma: f64,
    pub n_particles: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub m_trunc: usize,
    pub dt: f64,
    pub potential: Potential,
    /// Noise modes sampled per step; defaults to the spectrum truncation.
    pub noise_modes: Option<usize>,
}

impl SolverParams {
    /// gamma = 1, sigma = sqrt 2, M = 128, dt = 1e-3 and delta = 0.1 eta.
    pub fn defaults(epsilon: f64, n_particles: f64, eta: f64) -> Self {
        Self {
            gamma: 1.0,
            sigma: std::f64::consts::SQRT_2,
            n_particles,
            epsilon,
            delta: 0.1 * eta,
            m_trunc: 128,
            dt: 1e-3,
            potential: Potential::Zero,
            noise_modes: None,
        }
    }

    pub fn kbt(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.gamma > 0.0 && self.gamma.is_finite(), || format!("gamma must be positive, got {}", self.gamma))?;
        ensure(self.sigma >= 0.0 && self.sigma.is_finite(), || format!("sigma must be non-negative, got {}", self.sigma))?;
        ensure(self.n_particles >= 1.0, || format!("N must be at least 1, got {}", self.n_particles))?;
        ensure(self.epsilon > 0.0 && self.epsilon <= 1.0, || format!("epsilon must lie in (0, 1], got {}", self.epsilon))?;
        ensure(self.delta > 0.0 && self.delta.is_finite(), || format!("delta must be positive, got {}", self.delta))?;
        ensure(self.m_trunc >= 1, || "need at least one Fourier mode".into())?;
        ensure(self.dt > 0.0 && self.dt.is_finite(), || format!("dt must be positive, got {}", self.dt))?;
        self.potential.validate()?;
        potential_bandwidth(&self.potential).map(|_| ())
    }
}

/// M(eps, N) = N^{-1/2} eps^{-7/2}.
pub fn small_noise_scale(eps: f64, n: f64) -> f64 {
    n.powf(-0.5) * eps.powf(-3.5)
}

/// The C^2 regularisation of sqrt|z|: sqrt|z| for |z| >= delta and the even
/// quartic a + b z^2 + c z^4 inside, matching value, slope and curvature at +-delta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqrtBlend {
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SqrtBlend {
    pub fn new(delta: f64) -> Result<Self> {
        ensure(delta > 0.0 && delta.is_finite(), || format!("delta must be positive, got {delta}"))?;
        let sd = delta.sqrt();
        Ok(Self {
            delta,
            a: 21.0 / 32.0 * sd,
            b: 7.0 / (16.0 * delta * sd),
            c: -3.0 / (32.0 * delta.powi(3) * sd),
        })
    }

    pub fn value(&self, z: f64) -> f64 {
        let az = z.abs();
        if az >= self.delta {
            return az.sqrt();
        }
        let z2 = z * z;
        self.a + z2 * (self.b + self.c * z2)
    }

    pub fn derivative(&self, z: f64) -> f64 {
        let az = z.abs();
        if az >= self.delta {
            return z.signum() * 0.5 / az.sqrt();
        }
        z * (2.0 * self.b + 4.0 * self.c * z * z)
    }

    pub fn second_derivative(&self, z: f64) -> f64 {
        let az = z.abs();
        if az >= self.delta {
            return -0.25 / (az * az.sqrt());
        }
        2.0 * self.b + 12.0 * self.c * z * z
    }

    /// sup |h'|, attained inside the blend at z^2 = 7 delta / 9.
    pub fn lipschitz(&self) -> f64 {
        let u2: f64 = 7.0 / 9.0;
        u2.sqrt() * (7.0 / 8.0 - 3.0 / 8.0 * u2) / self.delta.sqrt()
    }
}

pub fn h_delta(z: f64, delta: f64) -> Result<f64> {
    Ok(SqrtBlend::new(delta)?.value(z))
}

pub fn h_delta_prime(z: f64, delta: f64) -> Result<f64> {
    Ok(SqrtBlend::new(delta)?.derivative(z))
}

/// exp(t A_m) for A_m = [[0, -im], [-i c m, -gamma]] as [[e00, e01], [e10, e11]].
pub fn mode_exponential(m: i64, gamma: f64, kbt: f64, t: f64) -> [[Complex64; 2]; 2] {
    if m == 0 {
        return [[Complex64::new(1.0, 0.0), ZERO], [ZERO, Complex64::new((-gamma * t).exp(), 0.0)]];
    }
    let mf = m as f64;
    // exp(tA) = e^{-gamma t/2} (C I + S (A + gamma/2 I)), with s^2 = gamma^2/4 - c m^2,
    // C = cosh(s t), S = sinh(s t) / s.
    let s2 = 0.25 * gamma * gamma - kbt * mf * mf;
    let x = s2 * t * t;
    let damp = (-0.5 * gamma * t).exp();
    let (ec, es) = if x.abs() <= 1.0 {
        let (mut c, mut s, mut term_c, mut term_s) = (1.0, 1.0, 1.0, 1.0);
        for k in 1..30 {
            term_c *= x / ((2 * k - 1) * (2 * k)) as f64;
            term_s *= x / ((2 * k) * (2 * k + 1)) as f64;
            c += term_c;
            s += term_s;
            if term_c.abs() < 1e-18 && term_s.abs() < 1e-18 {
                break;
            }
        }
        (damp * c, damp * s * t)
    } else if s2 > 0.0 {
        let s = s2.sqrt();
        let ep = ((s - 0.5 * gamma) * t).exp();
        let em = (-(s + 0.5 * gamma) * t).exp();
        (0.5 * (ep + em), 0.5 * (ep - em) / s)
    } else {
        let w = (-s2).sqrt();
        (damp * (w * t).cos(), damp * (w * t).sin() / w)
    };
    let h = 0.5 * gamma;
    [
        [Complex64::new(ec + es * h, 0.0), Complex64::new(0.0, -es * mf)],
        [Complex64::new(0.0, -es * kbt * mf), Complex64::new(ec - es * h, 0.0)],
    ]
}

/// S(t) X: the exact linear flow, mode by mode. The mean density never changes.
pub fn semigroup_apply(x: &SpectralState, t: f64, gamma: f64, kbt: f64) -> Result<SpectralState> {
    ensure(t >= 0.0 && t.is_finite(), || format!("semigroup time must be non-negative, got {t}"))?;
    let mut out = x.clone();
    for m in 1..x.rho.len() {
        let e = mode_exponential(m as i64, gamma, kbt, t);
        out.rho[m] = e[0][0] * x.rho[m] + e[0][1] * x.j[m];
        out.j[m] = e[1][0] * x.rho[m] + e[1][1] * x.j[m];
    }
    out.j[0] = x.j[0] * (-gamma * t).exp();
    out.time = x.time + t;
    Ok(out)
}

/// Forward and inverse transforms between coefficients and grid values.
struct Transforms {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Transforms {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self { n, fwd, inv, buf: vec![ZERO; n], scratch: vec![ZERO; len] }
    }

    /// Grid values of sum_{|m| <= M} c_m e^{imx} from non-negative modes.
    fn synthesise(&mut self, c: &[Complex64]) -> Vec<f64> {
        self.buf.iter_mut().for_each(|v| *v = ZERO);
        self.buf[0] = Complex64::new(c[0].re, 0.0);
        for m in 1..c.len() {
            self.buf[m] = c[m];
            self.buf[self.n - m] = c[m].conj();
        }
        self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        self.buf.iter().map(|v| v.re).collect()
    }

    /// Coefficients for modes 0..=M of real grid values.
    fn analyse(&mut self, v: &[f64], m_trunc: usize) -> Vec<Complex64> {
        for (b, x) in self.buf.iter_mut().zip(v) {
            *b = Complex64::new(*x, 0.0);
        }
        self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        (0..=m_trunc).map(|m| self.buf[m] * scale).collect()
    }
}

/// Drift and noise operators plus the mild Euler step for one parameter set.
pub struct Solver {
    pub params: SolverParams,
    pub spectrum: KernelSpectrum,
    pub grid_size: usize,
    noise_modes: usize,
    bandwidth: usize,
    blend: SqrtBlend,
    transforms: Transforms,
    vprime: Vec<f64>,
    propagators: Vec<[[Complex64; 2]; 2]>,
}

impl Solver {
    pub fn new(params: SolverParams) -> Result<Self> {
        params.validate()?;
        let spectrum = kernel_eigenvalues(params.epsilon, None)?;
        let noise_modes = params.noise_modes.unwrap_or(spectrum.j_max).min(spectrum.j_max);
        let m = params.m_trunc;
        let bandwidth = potential_bandwidth(&params.potential)?;
        let need = (2 * (m + bandwidth) + 1).max(2 * m + noise_modes + 1);
        let grid_size = need.next_power_of_two();
        let xs = (0..grid_size).map(|k| 2.0 * PI * k as f64 / grid_size as f64);
        let vprime = xs.map(|x| params.potential.derivative(x)).collect();
        let (g, c) = (params.gamma, params.kbt());
        let propagators = (0..=m).map(|k| mode_exponential(k as i64, g, c, params.dt)).collect();
        let blend = SqrtBlend::new(params.delta)?;
        Ok(Self { transforms: Transforms::new(grid_size), bandwidth, blend, params, spectrum, grid_size, noise_modes, vprime, propagators })
    }

    pub fn noise_modes(&self) -> usize {
        self.noise_modes
    }

    fn check(&self, x: &SpectralState) -> Result<()> {
        ensure(x.m_trunc() == self.params.m_trunc, || {
            format!("state has {} modes, solver expects {}", x.m_trunc(), self.params.m_trunc)
        })
    }

    /// Coefficients of -V'_per rho, projected onto |m| <= M (the current component).
    pub fn drift_apply(&mut self, x: &SpectralState) -> Result<Vec<Complex64>> {
        self.check(x)?;
        let rho = self.transforms.synthesise(&x.rho);
        let prod: Vec<f64> = rho.iter().zip(&self.vprime).map(|(r, v)| -v * r).collect();
        Ok(self.transforms.analyse(&prod, self.params.m_trunc))
    }

    /// Coefficients of (sigma / sqrt N) h_delta(rho) dW, projected onto |m| <= M.
    /// Also returns the minimum of rho over the grid.
    pub fn noise_apply(&mut self, x: &SpectralState, inc: &NoiseIncrement) -> Result<(Vec<Complex64>, f64)> {
        self.check(x)?;
        let rho = self.transforms.synthesise(&x.rho);
        let min_rho = rho.iter().copied().fold(f64::INFINITY, f64::min);
        let k = inc.m_trunc().min(self.grid_size / 2 - 1);
        let coeffs: Vec<Complex64> = (0..=k).map(|m| inc.fourier(m as i64)).collect();
        let xi = self.transforms.synthesise(&coeffs);
        let pref = self.params.sigma / self.params.n_particles.sqrt();
        let h = self.blend;
        let prod: Vec<f64> = rho.iter().zip(&xi).map(|(r, w)| pref * h.value(*r) * w).collect();
        Ok((self.transforms.analyse(&prod, self.params.m_trunc), min_rho))
    }

    /// Minimum of rho over the solver grid.
    pub fn min_rho(&mut self, x: &SpectralState) -> f64 {
        self.transforms.synthesise(&x.rho).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// X_{n+1} = S(dt) [X_n + drift(X_n) dt + noise(X_n, dW_n)].
    pub fn step_mild(&mut self, x: &SpectralState, inc: Option<&NoiseIncrement>) -> Result<SpectralState> {
        let dt = self.params.dt;
        let mut j = x.j.clone();
        if self.bandwidth > 0 {
            let d = self.drift_apply(x)?;
            for (a, b) in j.iter_mut().zip(&d) {
                *a += b * dt;
            }
        }
        if let Some(inc) = inc {
            let (n, _) = self.noise_apply(x, inc)?;
            for (a, b) in j.iter_mut().zip(&n) {
                *a += b;
            }
        }
        let mut out = x.clone();
        for m in 1..out.rho.len() {
            let e = &self.propagators[m];
            out.rho[m] = e[0][0] * x.rho[m] + e[0][1] * j[m];
            out.j[m] = e[1][0] * x.rho[m] + e[1][1] * j[m];
        }
        out.j[0] = j[0] * self.propagators[0][1][1];
        out.time = x.time + dt;
        if !out.is_finite() {
            return Err(DkError::Numerical(format!("SPDE state became non-finite at t = {}", out.time)));
        }
        Ok(out)
    }

    pub fn sample_increment(&self, seed: u64, path: u64, step: u64) -> Result<NoiseIncrement> {
        let mut r = rng::stream(seed, TAG_SPDE_NOISE, &[path, step]);
        sample_noise_increment(&self.spectrum, self.noise_modes, self.params.dt, &mut r)
    }

    fn n_steps(&self, t_final: f64) -> Result<usize> {
        ensure(t_final >= 0.0 && t_final.is_finite(), || format!("final time must be non-negative, got {t_final}"))?;
        Ok((t_final / self.params.dt).round() as usize)
    }

    /// The deterministic flow with the noise switched off; every state is returned.
    pub fn solve_deterministic(&mut self, x0: &SpectralState, t_final: f64) -> Result<Vec<SpectralState>> {
        let n = self.n_steps(t_final)?;
        let mut out = Vec::with_capacity(n + 1);
        out.push(x0.clone());
        for k in 0..n {
            let next = self.step_mild(&out[k], None)?;
            out.push(next);
        }
        Ok(out)
    }

    /// One stochastic path; `visit` sees every state including the initial one.
    pub fn run_path<F: FnMut(&SpectralState, f64)>(
        &mut self,
        x0: &SpectralState,
        t_final: f64,
        seed: u64,
        path: u64,
        mut visit: F,
    ) -> Result<SpectralState> {
        let n = self.n_steps(t_final)?;
        let mut x = x0.clone();
        let m0 = self.min_rho(&x);
        visit(&x, m0);
        for k in 0..n {
            let inc = self.sample_increment(seed, path, k as u64)?;
            x = self.step_mild(&x, Some(&inc))?;
            let m = self.min_rho(&x);
            visit(&x, m);
        }
        Ok(x)
    }
}

/// Write `time,x,rho,j` rows for the given states on an n-point grid.
pub fn write_trajectory(path: &Path, states: &[SpectralState], n_grid: usize) -> Result<()> {
    let mut rows = Vec::new();
    for s in states {
        let (r, j) = s.to_grid(n_grid)?;
        for k in 0..n_grid {
            rows.push([s.time, 2.0 * PI * k as f64 / n_grid as f64, r[k], j[k]]);
        }
    }
    write_csv(path, "time,x,rho,j", rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailProbability {
    pub radius: f64,
    pub probability: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallNoiseReport {
    pub epsilon: f64,
    pub n_particles: f64,
    pub scale_m: f64,
    pub q: f64,
    pub n_paths: usize,
    /// E sup_t ||X(t) - Z(t)||_W^q
    pub moment: MeanSe,
    pub tails: Vec<TailProbability>,
    pub warning: Option<String>,
}

const MIN_PATHS_FOR_CI: usize = 30;

fn path_warning(n_paths: usize) -> Option<String> {
    (n_paths < MIN_PATHS_FOR_CI).then(|| format!("only {n_paths} paths; confidence intervals are wide"))
}

/// Distance of the stochastic flow from the deterministic one.
pub fn small_noise_experiment(
    params: &SolverParams,
    x0: &SpectralState,
    t_final: f64,
    n_paths: usize,
    q: f64,
    radii: &[f64],
    seed: u64,
) -> Result<SmallNoiseReport> {
    ensure(n_paths >= 2, || "need at least two paths".into())?;
    ensure(q >= 2.0, || format!("moment order must be at least 2, got {q}"))?;
    let mut solver = Solver::new(params.clone())?;
    let det = solver.solve_deterministic(x0, t_final)?;
    let sups = run_paths(params, n_paths, |solver, path| {
        let mut sup: f64 = 0.0;
        let mut k = 0;
        solver.run_path(x0, t_final, seed, path, |x, _| {
            sup = sup.max(w_distance(x, &det[k]));
            k += 1;
        })?;
        Ok(sup)
    })?;
    let moments: Vec<f64> = sups.iter().map(|s| s.powf(q)).collect();
    let tails = radii
        .iter()
        .map(|&r| {
            let k = sups.iter().filter(|s| **s >= r).count();
            let (lo, hi) = wilson_interval(k, n_paths, 1.959_963_984_540_054);
            TailProbability { radius: r, probability: k as f64 / n_paths as f64, wilson_low: lo, wilson_high: hi }
        })
        .collect();
    Ok(SmallNoiseReport {
        epsilon: params.epsilon,
        n_particles: params.n_particles,
        scale_m: small_noise_scale(params.epsilon, params.n_particles),
        q,
        n_paths,
        moment: mean_se(&moments),
        tails,
        warning: path_warning(n_paths),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub threshold: f64,
    pub n_paths: usize,
    pub exceedances: usize,
    pub fraction: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub min_rho: Vec<f64>,
    pub warning: Option<String>,
}

/// Fraction of paths on which rho drops below delta somewhere on [0, T].
pub fn positivity_probability(
    params: &SolverParams,
    x0: &SpectralState,
    t_final: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PositivityReport> {
    ensure(n_paths >= 1, || "need at least one path".into())?;
    let eta = Solver::new(params.clone())?.min_rho(x0);
    ensure(eta > params.delta, || format!("initial minimum density {eta} must exceed delta = {}", params.delta))?;
    let mins = run_paths(params, n_paths, |solver, path| {
        let mut lo = f64::INFINITY;
        solver.run_path(x0, t_final, seed, path, |_, m| lo = lo.min(m))?;
        Ok(lo)
    })?;
    let k = mins.iter().filter(|m| **m < params.delta).count();
    let (lo, hi) = wilson_interval(k, n_paths, 1.959_963_984_540_054);
    Ok(PositivityReport {
        threshold: params.delta,
        n_paths,
        exceedances: k,
        fraction: k as f64 / n_paths as f64,
        wilson_low: lo,
        wilson_high: hi,
        min_rho: mins,
        warning: path_warning(n_paths),
    })
}

fn run_paths<T: Send, F>(params: &SolverParams, n_paths: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(&mut Solver, u64) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_paths as u64)
            .into_par_iter()
            .map_init(|| Solver::new(params.clone()), |s, p| f(s.as_mut().map_err(|e| DkError::InvalidParameter(e.to_string()))?, p))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = Solver::new(params.clone())?;
        (0..n_paths as u64).map(|p| f(&mut s, p)).collect()
    }
}
