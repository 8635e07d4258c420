//! Fluctuation fields of the smoothed particle system against their
//! Dean-Kawasaki counterpart.
//!
//! Z_N(x, t) = (sigma / N) sum_i sum_k w_eps(x - q_i(s_k)) dB_{i,k} is the
//! left-point Ito sum driven by the same increments that move the particles.
//! Y_N(x, t) = (sigma / sqrt N) sum_k sqrt(rho_{eps/sqrt2}(x, s_k)) (w_eps * dxi_k)(x)
//! uses an independent space-time white noise sampled on a grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, DkError, Result};
use crate::fields::{smoothed_density, Grid1D, KernelKind};
use crate::gaussian::{normal_pdf_unchecked, BivariateGaussian};
use crate::particles::{em_update, sample_bivariate, LangevinParams, OuTransition, Potential};
use crate::rng::{self, normal, TAG_PATH, TAG_Y_NOISE};
use crate::stats::{loglog_fit, mean_se, LinearFit, MeanSe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    EulerMaruyama,
    /// Exact free transition; only valid for V = 0.
    ExactOu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub gamma: f64,
    pub sigma: f64,
    pub potential: Potential,
    pub init: BivariateGaussian,
    pub epsilon: f64,
    pub n_particles: usize,
    pub steps_per_unit: usize,
    pub integrator: Integrator,
    /// White-noise cells per kernel width for Y_N.
    pub y_cells_per_eps: f64,
    pub seed: u64,
}

/// Default initial law of the free setup: q ~ N(pi, 1/4), p ~ N(0, 1).
pub fn default_init() -> BivariateGaussian {
    BivariateGaussian { mean_q: PI, mean_p: 0.0, var_q: 0.25, var_p: 1.0, corr: 0.0 }
}

pub fn particles_from_scaling(eps: f64, theta: f64) -> usize {
    (eps.powf(-theta)).round().max(1.0) as usize
}

impl NoiseConfig {
    /// Free dynamics with gamma = 1, sigma = sqrt 2 and N = round(eps^-theta).
    pub fn ou(epsilon: f64, theta: f64, seed: u64) -> Self {
        Self {
            gamma: 1.0,
            sigma: std::f64::consts::SQRT_2,
            potential: Potential::Zero,
            init: default_init(),
            epsilon,
            n_particles: particles_from_scaling(epsilon, theta),
            steps_per_unit: 256,
            integrator: Integrator::EulerMaruyama,
            y_cells_per_eps: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        LangevinParams::new(self.gamma, self.sigma, self.potential.clone())?;
        self.init.validate()?;
        ensure(self.epsilon > 0.0 && self.epsilon.is_finite(), || format!("epsilon must be positive, got {}", self.epsilon))?;
        ensure(self.n_particles >= 1, || "need at least one particle".into())?;
        ensure(self.steps_per_unit >= 1, || "steps_per_unit must be at least 1".into())?;
        ensure(self.y_cells_per_eps >= 1.0, || "y_cells_per_eps must be at least 1".into())?;
        if self.integrator == Integrator::ExactOu {
            ensure(self.potential.is_zero(), || "exact transitions need V = 0".into())?;
        }
        Ok(())
    }

    fn steps(&self, t: f64) -> (usize, f64) {
        if t == 0.0 {
            return (0, 0.0);
        }
        let n = ((t * self.steps_per_unit as f64).round() as usize).max(1);
        (n, t / n as f64)
    }
}

/// Evaluation points: a uniform lattice allows a two-exponential recurrence
/// for all kernel values of one particle.
#[derive(Clone, Debug)]
enum Points {
    Lattice { x0: f64, h: f64, n: usize },
    Scattered(Vec<f64>),
}

impl Points {
    fn from_sorted(xs: &[f64]) -> Self {
        let n = xs.len();
        if n >= 2 {
            let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
            let uniform = h > 0.0
                && xs.iter().enumerate().all(|(i, x)| (x - (xs[0] + i as f64 * h)).abs() <= 1e-9 * h.max(1e-300));
            if uniform {
                return Points::Lattice { x0: xs[0], h, n };
            }
        } else if n == 1 {
            return Points::Lattice { x0: xs[0], h: 1.0, n: 1 };
        }
        Points::Scattered(xs.to_vec())
    }

    fn len(&self) -> usize {
        match self {
            Points::Lattice { n, .. } => *n,
            Points::Scattered(v) => v.len(),
        }
    }

    fn get(&self, a: usize) -> f64 {
        match self {
            Points::Lattice { x0, h, .. } => x0 + a as f64 * h,
            Points::Scattered(v) => v[a],
        }
    }

    fn bounds(&self) -> (f64, f64) {
        (self.get(0), self.get(self.len() - 1))
    }
}

/// Sorted unique point set and index lookups for a list of pairs.
struct PairLayout {
    points: Points,
    /// (index of x1, index of x2, index of the midpoint)
    idx: Vec<(usize, usize, usize)>,
}

impl PairLayout {
    fn new(pairs: &[(f64, f64)]) -> Result<Self> {
        ensure(!pairs.is_empty(), || "need at least one point pair".into())?;
        let mut xs: Vec<f64> = Vec::new();
        for &(a, b) in pairs {
            ensure(a.is_finite() && b.is_finite(), || "points must be finite".into())?;
            xs.extend([a, b, 0.5 * (a + b)]);
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        let scale = xs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
        let find = |x: f64| xs.iter().position(|v| (v - x).abs() <= 1e-12 * scale).expect("point present");
        let idx = pairs.iter().map(|&(a, b)| (find(a), find(b), find(0.5 * (a + b)))).collect();
        Ok(Self { points: Points::from_sorted(&xs), idx })
    }
}

/// Per-path outputs of one simulation.
#[derive(Clone, Debug, Default)]
struct PathOutput {
    z: Vec<f64>,
    y: Vec<f64>,
    /// int_0^t rho_{eps/sqrt2}(x_a, u) du
    rho_int: Vec<f64>,
    /// int_0^t sqrt(rho(x1, u) rho(x2, u)) du per pair
    sqrt_int: Vec<f64>,
}

struct Engine<'a> {
    cfg: &'a NoiseConfig,
    points: &'a Points,
    pairs: &'a [(usize, usize, usize)],
    n_steps: usize,
    dt: f64,
    exact: Option<OuTransition>,
    lattice_decay: Vec<f64>,
    y_weights: Vec<Vec<f64>>,
    y_cells: usize,
    y_dx: f64,
    with_y: bool,
    norm: f64,
    inv_e2: f64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a NoiseConfig, points: &'a Points, pairs: &'a [(usize, usize, usize)], t: f64, with_y: bool) -> Result<Self> {
        cfg.validate()?;
        ensure(t >= 0.0 && t.is_finite(), || format!("final time must be non-negative, got {t}"))?;
        let (n_steps, dt) = cfg.steps(t);
        let exact = match cfg.integrator {
            Integrator::ExactOu => Some(OuTransition::new(cfg.gamma, cfg.sigma, dt)?),
            Integrator::EulerMaruyama => None,
        };
        let eps = cfg.epsilon;
        let lattice_decay = match points {
            Points::Lattice { h, n, .. } => (0..*n).map(|a| (-0.5 * (a as f64 * h / eps).powi(2)).exp()).collect(),
            Points::Scattered(_) => Vec::new(),
        };
        let reach = 8.0 * eps;
        let y_dx = eps / cfg.y_cells_per_eps;
        let (lo, hi) = points.bounds();
        let y_cells = ((hi - lo + 2.0 * reach) / y_dx).ceil() as usize + 1;
        let y_weights = (0..points.len())
            .map(|a| {
                let x = points.get(a);
                (0..y_cells).map(|c| normal_pdf_unchecked(x, lo - reach + c as f64 * y_dx, eps * eps) * y_dx).collect()
            })
            .collect();
        Ok(Self {
            cfg,
            points,
            pairs,
            n_steps,
            dt,
            exact,
            lattice_decay,
            y_weights,
            y_cells,
            y_dx,
            with_y,
            norm: 1.0 / (2.0 * PI * eps * eps).sqrt(),
            inv_e2: 1.0 / (eps * eps),
        })
    }

    #[inline]
    fn kernel_values(&self, q: f64, out: &mut [f64]) {
        let (norm, inv_e2) = (self.norm, self.inv_e2);
        match self.points {
            Points::Lattice { x0, h, n } => {
                // w(u0 + a h) = w(u0) exp(-a h u0 / eps^2) exp(-a^2 h^2 / (2 eps^2)),
                // advanced on two interleaved chains to shorten the dependency.
                let u0 = x0 - q;
                let w0 = norm * (-0.5 * u0 * u0 * inv_e2).exp();
                let ratio = (-h * u0 * inv_e2).exp();
                let r2 = ratio * ratio;
                let (mut even, mut odd) = (w0, w0 * ratio);
                let mut a = 0;
                while a + 1 < *n {
                    out[a] = even * self.lattice_decay[a];
                    out[a + 1] = odd * self.lattice_decay[a + 1];
                    even *= r2;
                    odd *= r2;
                    a += 2;
                }
                if a < *n {
                    out[a] = even * self.lattice_decay[a];
                }
            }
            Points::Scattered(xs) => {
                for (o, x) in out.iter_mut().zip(xs) {
                    let u = x - q;
                    *o = norm * (-0.5 * u * u * inv_e2).exp();
                }
            }
        }
    }

    fn run_path(&self, path: u64) -> Result<PathOutput> {
        let cfg = self.cfg;
        let np = self.points.len();
        let n = cfg.n_particles;
        let reach = 8.0 * cfg.epsilon;
        let (lo, hi) = self.points.bounds();
        let (lo, hi) = (lo - reach, hi + reach);
        let sdt = self.dt.sqrt();
        let mut zacc = vec![0.0; np];
        let mut rho = vec![0.0; self.n_steps * np];
        let mut w = vec![0.0; np];
        for i in 0..n {
            let mut r = rng::stream(cfg.seed, TAG_PATH, &[path, i as u64]);
            let z1 = normal(&mut r);
            let z2 = normal(&mut r);
            let (mut q, mut p) = sample_bivariate(&cfg.init, z1, z2);
            for k in 0..self.n_steps {
                let (nq, nqp, db) = match &self.exact {
                    Some(tr) => tr.apply(q, p, [normal(&mut r), normal(&mut r), normal(&mut r)]),
                    None => {
                        let db = sdt * normal(&mut r);
                        let force = -cfg.potential.derivative(q);
                        let (a, b) = em_update(q, p, cfg.gamma, cfg.sigma, force, self.dt, db);
                        (a, b, db)
                    }
                };
                if q > lo && q < hi {
                    self.kernel_values(q, &mut w);
                    let row = &mut rho[k * np..(k + 1) * np];
                    for a in 0..np {
                        zacc[a] += w[a] * db;
                        row[a] += w[a] * w[a];
                    }
                }
                q = nq;
                p = nqp;
            }
            if !(q.is_finite() && p.is_finite()) {
                return Err(DkError::Numerical(format!("particle {i} diverged on path {path}")));
            }
        }
        let nf = n as f64;
        // w_{eps/sqrt2} = 2 sqrt(pi) eps w_eps^2
        let rho_scale = 2.0 * PI.sqrt() * cfg.epsilon / nf;
        rho.iter_mut().for_each(|v| *v *= rho_scale);
        let z: Vec<f64> = zacc.iter().map(|v| cfg.sigma / nf * v).collect();
        let mut rho_int = vec![0.0; np];
        let mut sqrt_int = vec![0.0; self.pairs.len()];
        for k in 0..self.n_steps {
            let row = &rho[k * np..(k + 1) * np];
            for a in 0..np {
                rho_int[a] += row[a] * self.dt;
            }
            for (s, &(i1, i2, _)) in sqrt_int.iter_mut().zip(self.pairs) {
                *s += (row[i1] * row[i2]).sqrt() * self.dt;
            }
        }
        let mut y = vec![0.0; np];
        if self.with_y {
            let mut ry = rng::stream(cfg.seed, TAG_Y_NOISE, &[path]);
            let scale = (self.dt / self.y_dx).sqrt();
            let pref = cfg.sigma / nf.sqrt();
            let mut xi = vec![0.0; self.y_cells];
            for k in 0..self.n_steps {
                xi.iter_mut().for_each(|v| *v = scale * normal(&mut ry));
                let row = &rho[k * np..(k + 1) * np];
                for a in 0..np {
                    let eta: f64 = self.y_weights[a].iter().zip(&xi).map(|(w, x)| w * x).sum();
                    y[a] += pref * row[a].sqrt() * eta;
                }
            }
        }
        Ok(PathOutput { z, y, rho_int, sqrt_int })
    }

    fn run(&self, n_paths: usize) -> Result<Vec<PathOutput>> {
        ensure(n_paths >= 1, || "need at least one path".into())?;
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n_paths as u64).into_par_iter().map(|p| self.run_path(p)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_paths as u64).map(|p| self.run_path(p)).collect()
        }
    }
}

fn sorted_points(x_points: &[f64]) -> Result<(Points, Vec<usize>)> {
    ensure(!x_points.is_empty(), || "need at least one evaluation point".into())?;
    ensure(x_points.iter().all(|x| x.is_finite()), || "points must be finite".into())?;
    let mut xs = x_points.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    let map = x_points.iter().map(|x| xs.iter().position(|v| v == x).expect("present")).collect();
    Ok((Points::from_sorted(&xs), map))
}

/// Samples of Z_N(x, t), one row per path, one column per point.
pub fn simulate_z(cfg: &NoiseConfig, x_points: &[f64], t: f64, n_paths: usize) -> Result<Vec<Vec<f64>>> {
    let (pts, map) = sorted_points(x_points)?;
    let eng = Engine::new(cfg, &pts, &[], t, false)?;
    Ok(eng.run(n_paths)?.into_iter().map(|o| map.iter().map(|&a| o.z[a]).collect()).collect())
}

/// Samples of Y_N(x, t) driven by the same particle paths as `simulate_z`.
pub fn simulate_y(cfg: &NoiseConfig, x_points: &[f64], t: f64, n_paths: usize) -> Result<Vec<Vec<f64>>> {
    let (pts, map) = sorted_points(x_points)?;
    let eng = Engine::new(cfg, &pts, &[], t, true)?;
    Ok(eng.run(n_paths)?.into_iter().map(|o| map.iter().map(|&a| o.y[a]).collect()).collect())
}

/// Second-moment estimator of Cov[Z_N(x1), Z_N(x2)] from the closed form
/// (sigma^2 / N) w_{sqrt2 eps}(x1 - x2) int_0^t E rho_{eps/sqrt2}((x1 + x2)/2, u) du.
pub fn cov_z_formula(cfg: &NoiseConfig, x1: f64, x2: f64, t: f64, n_paths: usize) -> Result<MeanSe> {
    let layout = PairLayout::new(&[(x1, x2)])?;
    let eng = Engine::new(cfg, &layout.points, &layout.idx, t, false)?;
    let pref = prefactor(cfg, x1 - x2);
    let m = layout.idx[0].2;
    let vals: Vec<f64> = eng.run(n_paths)?.iter().map(|o| pref * o.rho_int[m]).collect();
    Ok(mean_se(&vals))
}

/// (sigma^2 / N) w_{sqrt2 eps}(d).
fn prefactor(cfg: &NoiseConfig, d: f64) -> f64 {
    let e = cfg.epsilon;
    cfg.sigma * cfg.sigma / cfg.n_particles as f64 * normal_pdf_unchecked(d, 0.0, 2.0 * e * e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCovariance {
    pub x1: f64,
    pub x2: f64,
    /// Empirical E[Z(x1) Z(x2)].
    pub cov_z: MeanSe,
    /// Empirical E[Y(x1) Y(x2)].
    pub cov_y: MeanSe,
    /// Closed-form estimator with E rho at the midpoint.
    pub cov_z_formula: MeanSe,
    /// Conditional covariance of Y given the particle paths.
    pub cov_y_formula: MeanSe,
    /// Paired estimate of Cov Z - Cov Y on common particle paths.
    pub diff: MeanSe,
    /// (sigma^2 / N) w_{sqrt2 eps}(x1 - x2) |x1 - x2|^2
    pub bound_diff_unit: f64,
    /// (sigma^2 / N) w_{sqrt2 eps}(x1 - x2)
    pub bound_abs_unit: f64,
    pub noise_dominated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub epsilon: f64,
    pub n_particles: usize,
    pub t: f64,
    pub n_paths: usize,
    pub pairs: Vec<PairCovariance>,
    /// Least-squares constant on log-ratios |diff| / bound_diff_unit.
    pub c_diff_ls: f64,
    /// Smallest constant bounding every pair not dominated by noise.
    pub c_diff: f64,
    pub c_abs_ls: f64,
    pub c_abs: f64,
    pub warning: Option<String>,
}

/// Below this many paths the covariance confidence intervals are flagged as wide.
pub const MIN_COVARIANCE_PATHS: usize = 1000;

impl CovarianceReport {
    /// Does |diff| <= c bound + 3 se hold for every pair?
    pub fn diff_bound_holds(&self, c: f64) -> bool {
        self.pairs.iter().all(|p| p.diff.mean.abs() <= c * p.bound_diff_unit + 3.0 * p.diff.se)
    }

    pub fn abs_bound_holds(&self, c: f64) -> bool {
        self.pairs.iter().all(|p| p.cov_z.mean.abs() <= c * p.bound_abs_unit + 3.0 * p.cov_z.se)
    }

    /// Largest deviation between empirical and closed-form Cov Z in units of
    /// the combined standard error.
    pub fn max_formula_deviation(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| (p.cov_z.mean - p.cov_z_formula.mean).abs() / p.cov_z.se.hypot(p.cov_z_formula.se))
            .fold(0.0, f64::max)
    }
}

fn product_stats(a: &[f64], b: &[f64]) -> MeanSe {
    mean_se(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
}

/// Compare Cov Z and Cov Y on the given point pairs.
pub fn theorem1_report(cfg: &NoiseConfig, pairs: &[(f64, f64)], t: f64, n_paths: usize) -> Result<CovarianceReport> {
    ensure(n_paths >= 2, || "need at least two paths".into())?;
    let layout = PairLayout::new(pairs)?;
    let eng = Engine::new(cfg, &layout.points, &layout.idx, t, true)?;
    let out = eng.run(n_paths)?;
    let col = |f: &dyn Fn(&PathOutput) -> f64| -> Vec<f64> { out.iter().map(f).collect() };
    let mut rows = Vec::with_capacity(pairs.len());
    for (k, (&(x1, x2), &(i1, i2, im))) in pairs.iter().zip(&layout.idx).enumerate() {
        let d = x1 - x2;
        let pref = prefactor(cfg, d);
        let z1 = col(&|o| o.z[i1]);
        let z2 = col(&|o| o.z[i2]);
        let y1 = col(&|o| o.y[i1]);
        let y2 = col(&|o| o.y[i2]);
        let fz = col(&|o| pref * o.rho_int[im]);
        let fy = col(&|o| pref * o.sqrt_int[k]);
        let dd: Vec<f64> = fz.iter().zip(&fy).map(|(a, b)| a - b).collect();
        rows.push(PairCovariance {
            x1,
            x2,
            cov_z: product_stats(&z1, &z2),
            cov_y: product_stats(&y1, &y2),
            cov_z_formula: mean_se(&fz),
            cov_y_formula: mean_se(&fy),
            diff: mean_se(&dd),
            bound_diff_unit: pref * d * d,
            bound_abs_unit: pref,
            noise_dominated: false,
        });
    }
    let log_ls = |ratios: Vec<f64>| -> f64 {
        let logs: Vec<f64> = ratios.into_iter().filter(|r| *r > 0.0).map(f64::ln).collect();
        if logs.is_empty() {
            0.0
        } else {
            (logs.iter().sum::<f64>() / logs.len() as f64).exp()
        }
    };
    let spread: Vec<&PairCovariance> = rows.iter().filter(|p| p.bound_diff_unit > 0.0).collect();
    let c_diff_ls = log_ls(spread.iter().map(|p| p.diff.mean.abs() / p.bound_diff_unit).collect());
    for p in rows.iter_mut() {
        p.noise_dominated = p.bound_diff_unit == 0.0 || p.diff.se > 0.5 * c_diff_ls * p.bound_diff_unit;
    }
    let envelope = |use_all: bool| -> f64 {
        rows.iter()
            .filter(|p| p.bound_diff_unit > 0.0 && (use_all || !p.noise_dominated))
            .map(|p| p.diff.mean.abs() / p.bound_diff_unit)
            .fold(0.0, f64::max)
    };
    let c_diff = if rows.iter().any(|p| p.bound_diff_unit > 0.0 && !p.noise_dominated) {
        envelope(false)
    } else {
        envelope(true)
    };
    let c_abs_ls = log_ls(rows.iter().map(|p| p.cov_z.mean.abs() / p.bound_abs_unit).collect());
    let c_abs = rows.iter().map(|p| p.cov_z.mean.abs() / p.bound_abs_unit).fold(0.0, f64::max);
    Ok(CovarianceReport {
        epsilon: cfg.epsilon,
        n_particles: cfg.n_particles,
        t,
        n_paths,
        pairs: rows,
        c_diff_ls,
        c_diff,
        c_abs_ls,
        c_abs,
        warning: (n_paths < MIN_COVARIANCE_PATHS)
            .then(|| format!("only {n_paths} paths; covariance confidence intervals are wide")),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub epsilons: Vec<f64>,
    pub n_particles: Vec<usize>,
    pub variances: Vec<f64>,
    pub variance_se: Vec<f64>,
    pub fit: LinearFit,
}

impl ScalingReport {
    pub fn fitted_slope(&self) -> f64 {
        self.fit.slope
    }

    pub fn slope_stderr(&self) -> f64 {
        self.fit.slope_se
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceScaling {
    pub theta: f64,
    pub x: f64,
    pub t: f64,
    pub n_paths: usize,
    pub z: ScalingReport,
    pub y: ScalingReport,
    /// Closed-form Var Z for reference.
    pub z_formula: ScalingReport,
}

/// Var Z_N(x, t) and Var Y_N(x, t) along N = eps^-theta, with log-log slopes in eps.
pub fn variance_scaling(
    base: &NoiseConfig,
    epsilons: &[f64],
    theta: f64,
    x: f64,
    t: f64,
    n_paths: usize,
) -> Result<VarianceScaling> {
    ensure(epsilons.len() >= 3, || "need at least three epsilons".into())?;
    ensure(n_paths >= 2, || "need at least two paths".into())?;
    let mut ns = Vec::new();
    let (mut vz, mut vy, mut vf) = (Vec::new(), Vec::new(), Vec::new());
    for &eps in epsilons {
        let cfg = NoiseConfig { epsilon: eps, n_particles: particles_from_scaling(eps, theta), ..base.clone() };
        let rep = theorem1_report(&cfg, &[(x, x)], t, n_paths)?;
        let p = &rep.pairs[0];
        ns.push(cfg.n_particles);
        vz.push(p.cov_z);
        vy.push(p.cov_y);
        vf.push(p.cov_z_formula);
    }
    let build = |v: &[MeanSe]| -> Result<ScalingReport> {
        let variances: Vec<f64> = v.iter().map(|m| m.mean).collect();
        if variances.iter().any(|x| !(*x > 0.0)) {
            return invalid("variance vanished; cannot fit a log-log slope");
        }
        Ok(ScalingReport {
            epsilons: epsilons.to_vec(),
            n_particles: ns.clone(),
            variance_se: v.iter().map(|m| m.se).collect(),
            fit: loglog_fit(epsilons, &variances)?,
            variances,
        })
    };
    Ok(VarianceScaling { theta, x, t, n_paths, z: build(&vz)?, y: build(&vy)?, z_formula: build(&vf)? })
}

/// Advance a particle from time s0 to s1 (exact or Euler-Maruyama substeps).
fn advance(cfg: &NoiseConfig, q: &mut f64, p: &mut f64, s0: f64, s1: f64, r: &mut rng::Stream) -> Result<()> {
    let span = s1 - s0;
    if span <= 0.0 {
        return Ok(());
    }
    match cfg.integrator {
        Integrator::ExactOu => {
            let tr = OuTransition::new(cfg.gamma, cfg.sigma, span)?;
            let (a, b, _) = tr.apply(*q, *p, [normal(r), normal(r), normal(r)]);
            *q = a;
            *p = b;
        }
        Integrator::EulerMaruyama => {
            let (n, dt) = cfg.steps(span);
            let sdt = dt.sqrt();
            for _ in 0..n {
                let db = sdt * normal(r);
                let (a, b) = em_update(*q, *p, cfg.gamma, cfg.sigma, -cfg.potential.derivative(*q), dt, db);
                *q = a;
                *p = b;
            }
        }
    }
    Ok(())
}

/// Positions of all particles at the given increasing times for one path.
fn positions_at(cfg: &NoiseConfig, times: &[f64], path: u64) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; cfg.n_particles]; times.len()];
    for i in 0..cfg.n_particles {
        let mut r = rng::stream(cfg.seed, TAG_PATH, &[path, i as u64]);
        let z1 = normal(&mut r);
        let z2 = normal(&mut r);
        let (mut q, mut p) = sample_bivariate(&cfg.init, z1, z2);
        let mut now = 0.0;
        for (k, &tk) in times.iter().enumerate() {
            advance(cfg, &mut q, &mut p, now, tk, &mut r)?;
            now = tk;
            out[k][i] = q;
        }
        if !q.is_finite() {
            return Err(DkError::Numerical(format!("particle {i} diverged on path {path}")));
        }
    }
    Ok(out)
}

fn par_paths<T: Send, F: Fn(u64) -> Result<T> + Sync + Send>(n_paths: usize, f: F) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_paths as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_paths as u64).map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessEstimate {
    pub s: f64,
    pub t: f64,
    /// E || rho_eps(t) - rho_eps(s) ||^2_{L2}
    pub mean: f64,
    pub se: f64,
    /// The self-interaction part I_1 / N.
    pub i1_component: f64,
    /// The remaining part, the squared distance of the mean fields.
    pub ct_component: f64,
    pub n_paths: usize,
}

/// A line grid wide enough for the free dynamics up to time `t_max`.
pub fn default_tightness_grid(cfg: &NoiseConfig, t_max: f64) -> Result<Grid1D> {
    let law = crate::particles::ou_moments(
        &cfg.init,
        &LangevinParams::new(cfg.gamma, cfg.sigma, Potential::Zero)?,
        t_max,
    )?;
    let spread = 7.0 * law.var_q.max(cfg.init.var_q).sqrt() + 8.0 * cfg.epsilon + t_max * cfg.init.mean_p.abs();
    let lo = cfg.init.mean_q.min(law.mean_q) - spread;
    let hi = cfg.init.mean_q.max(law.mean_q) + spread;
    let cells = ((hi - lo) / (cfg.epsilon / 4.0)).ceil() as usize + 1;
    Grid1D::line(lo, hi, cells)
}

/// E ||rho_eps(t) - rho_eps(s)||^2 for every pair s < t of the given times.
pub fn tightness_lattice(cfg: &NoiseConfig, times: &[f64], n_paths: usize, grid: &Grid1D) -> Result<Vec<TightnessEstimate>> {
    cfg.validate()?;
    ensure(n_paths >= 2, || "need at least two paths".into())?;
    ensure(times.len() >= 2 && times.windows(2).all(|w| w[0] < w[1]) && times[0] >= 0.0, || {
        "times must be increasing and non-negative".into()
    })?;
    let eps = cfg.epsilon;
    let nt = times.len();
    let per_path = par_paths(n_paths, |path| {
        let pos = positions_at(cfg, times, path)?;
        let fields: Vec<Vec<f64>> = pos
            .iter()
            .map(|q| smoothed_density(q, eps, grid, KernelKind::GaussLine).map(|f| f.values))
            .collect::<Result<_>>()?;
        let mut dist = Vec::new();
        let mut i1 = Vec::new();
        for a in 0..nt {
            for b in a + 1..nt {
                let sq: Vec<f64> = fields[a].iter().zip(&fields[b]).map(|(u, v)| (v - u) * (v - u)).collect();
                dist.push(grid.integrate(&sq));
                let norm = 2.0 / (4.0 * PI * eps * eps).sqrt();
                let s: f64 = pos[a].iter().zip(&pos[b]).map(|(u, v)| 1.0 - (-(v - u).powi(2) / (4.0 * eps * eps)).exp()).sum();
                i1.push(norm * s / cfg.n_particles as f64);
            }
        }
        Ok((dist, i1))
    })?;
    let nf = cfg.n_particles as f64;
    let mut out = Vec::new();
    let mut idx = 0;
    for a in 0..nt {
        for b in a + 1..nt {
            let d: Vec<f64> = per_path.iter().map(|(v, _)| v[idx]).collect();
            let i1 = per_path.iter().map(|(_, v)| v[idx]).sum::<f64>() / n_paths as f64;
            let m = mean_se(&d);
            let i1_component = i1 / nf;
            let ct_component = if nf > 1.0 { (m.mean - i1_component) / (1.0 - 1.0 / nf) } else { 0.0 };
            out.push(TightnessEstimate {
                s: times[a],
                t: times[b],
                mean: m.mean,
                se: m.se,
                i1_component,
                ct_component,
                n_paths,
            });
            idx += 1;
        }
    }
    Ok(out)
}

pub fn tightness_statistic(cfg: &NoiseConfig, s: f64, t: f64, n_paths: usize, grid: &Grid1D) -> Result<TightnessEstimate> {
    ensure(s < t, || format!("need s < t, got s = {s}, t = {t}"))?;
    if s == 0.0 {
        return Ok(tightness_lattice(cfg, &[0.0, t], n_paths, grid)?.remove(0));
    }
    Ok(tightness_lattice(cfg, &[0.0, s, t], n_paths, grid)?.remove(2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseMoment {
    pub epsilon: f64,
    pub n_particles: usize,
    pub x: f64,
    pub t: f64,
    pub estimate: MeanSe,
    /// Paths where rho_eps(x, t) underflowed to zero; excluded from the estimate.
    pub zero_density_paths: usize,
    pub samples: Vec<f64>,
}

impl InverseMoment {
    pub fn batch_means(&self, n_batches: usize) -> Vec<f64> {
        let size = self.samples.len() / n_batches.max(1);
        if size == 0 {
            return Vec::new();
        }
        self.samples.chunks(size).take(n_batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }
}

/// E[rho_eps(x, t)^-2].
pub fn inverse_density_moment(cfg: &NoiseConfig, x: f64, t: f64, n_paths: usize) -> Result<InverseMoment> {
    cfg.validate()?;
    ensure(n_paths >= 2, || "need at least two paths".into())?;
    ensure(t >= 0.0, || "time must be non-negative".into())?;
    let e2 = cfg.epsilon * cfg.epsilon;
    let rhos = par_paths(n_paths, |path| {
        let pos = positions_at(cfg, &[t], path)?;
        let s: f64 = pos[0].iter().map(|q| normal_pdf_unchecked(x, *q, e2)).sum();
        Ok(s / cfg.n_particles as f64)
    })?;
    let zero = rhos.iter().filter(|r| **r == 0.0).count();
    let samples: Vec<f64> = rhos.iter().filter(|r| **r > 0.0).map(|r| r.powi(-2)).collect();
    Ok(InverseMoment {
        epsilon: cfg.epsilon,
        n_particles: cfg.n_particles,
        x,
        t,
        estimate: mean_se(&samples),
        zero_density_paths: zero,
        samples,
    })
}
