//! Kernel-smoothed empirical fields rho_eps, j_eps and j2_eps on 1-d grids.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, DkError, Result};
use crate::io::{write_csv, write_json};
use crate::periodic_kernel::bessel_i_scaled;

const TWO_PI: f64 = 2.0 * PI;

/// A uniform grid. Line grids hold n_cells nodes including both ends;
/// periodic grids hold n_cells nodes on [x_min, x_min + 2 pi).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub periodic: bool,
}

impl Grid1D {
    pub fn line(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        let g = Self { x_min, x_max, n_cells, periodic: false };
        g.validate()?;
        Ok(g)
    }

    pub fn torus(n_cells: usize) -> Result<Self> {
        let g = Self { x_min: 0.0, x_max: TWO_PI, n_cells, periodic: true };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.n_cells >= 2, || format!("grid needs at least 2 cells, got {}", self.n_cells))?;
        ensure(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max, || {
            format!("bad grid bounds [{}, {}]", self.x_min, self.x_max)
        })?;
        if self.periodic {
            ensure((self.x_max - self.x_min - TWO_PI).abs() < 1e-12, || "periodic grids must span 2 pi".into())?;
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.x_max - self.x_min) / self.n_cells as f64
        } else {
            (self.x_max - self.x_min) / (self.n_cells - 1) as f64
        }
    }

    pub fn point(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_cells).map(|k| self.point(k)).collect()
    }

    /// Trapezoid rule for sampled values on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let h = self.spacing();
        let s: f64 = values.iter().sum();
        if self.periodic {
            h * s
        } else {
            h * (s - 0.5 * (values[0] + values[values.len() - 1]))
        }
    }

    /// Centred first differences, wrapped on periodic grids and second-order
    /// one-sided at the ends of a line.
    pub fn derivative(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let h = self.spacing();
        (0..n)
            .map(|k| {
                if self.periodic {
                    (v[(k + 1) % n] - v[(k + n - 1) % n]) / (2.0 * h)
                } else if k == 0 {
                    (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
                } else if k == n - 1 {
                    (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
                } else {
                    (v[k + 1] - v[k - 1]) / (2.0 * h)
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// Gaussian w_eps; wrapped over images on periodic grids.
    GaussLine,
    /// Von Mises density with concentration 1/eps^2 (periodic grids only).
    VonMisesTorus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Density,
    Current,
    MomentumFlux,
}

impl FieldKind {
    pub fn name(&self) -> &'static str {
        match self {
            FieldKind::Density => "density",
            FieldKind::Current => "current",
            FieldKind::MomentumFlux => "momentum-flux",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub kind: FieldKind,
    pub epsilon: f64,
    pub kernel: KernelKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    L2,
    L4,
    H1,
}

/// Run metadata written next to a field dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub n: usize,
    pub theta: Option<f64>,
    pub seed: u64,
    pub time: f64,
}

/// Kernel value (deriv = 0) or derivative (deriv = 1) at displacement d.
struct Kernel {
    kind: KernelKind,
    eps: f64,
    periodic: bool,
    cutoff: f64,
    norm: f64,
    kappa: f64,
}

impl Kernel {
    fn new(kind: KernelKind, eps: f64, periodic: bool) -> Result<Self> {
        ensure(eps > 0.0 && eps.is_finite(), || format!("epsilon must be positive, got {eps}"))?;
        match kind {
            KernelKind::GaussLine => Ok(Self {
                kind,
                eps,
                periodic,
                cutoff: 8.0 * eps,
                norm: 1.0 / (TWO_PI * eps * eps).sqrt(),
                kappa: 0.0,
            }),
            KernelKind::VonMisesTorus => {
                ensure(periodic, || "the von Mises kernel needs a periodic grid".into())?;
                let kappa = 1.0 / (eps * eps);
                // exp(kappa (cos d - 1)) < e^{-32} beyond this distance.
                let c = 1.0 - 32.0 / kappa;
                let cutoff = if c > -1.0 { c.acos() } else { PI };
                Ok(Self { kind, eps, periodic, cutoff, norm: 1.0 / (TWO_PI * bessel_i_scaled(0, kappa)?), kappa })
            }
        }
    }

    #[inline]
    fn eval(&self, d: f64, deriv: u32) -> f64 {
        match self.kind {
            KernelKind::GaussLine => {
                let e2 = self.eps * self.eps;
                let mut acc = 0.0;
                let mut add = |u: f64| {
                    if u.abs() <= self.cutoff {
                        let w = self.norm * (-0.5 * u * u / e2).exp();
                        acc += if deriv == 0 { w } else { -u / e2 * w };
                    }
                };
                if self.periodic {
                    let images = (self.cutoff / TWO_PI).ceil() as i64 + 1;
                    for k in -images..=images {
                        add(d + k as f64 * TWO_PI);
                    }
                } else {
                    add(d);
                }
                acc
            }
            KernelKind::VonMisesTorus => {
                let w = self.norm * (self.kappa * (d.cos() - 1.0)).exp();
                if deriv == 0 {
                    w
                } else {
                    -self.kappa * d.sin() * w
                }
            }
        }
    }
}

/// Particles sorted into grid-aligned bins (CSR layout, stable order).
struct Bins {
    start: Vec<usize>,
    members: Vec<usize>,
    offset: i64,
}

impl Bins {
    fn build(q: &[f64], grid: &Grid1D, reach: usize) -> Self {
        let h = grid.spacing();
        let n = grid.n_cells as i64;
        let offset = if grid.periodic { 0 } else { reach as i64 + 1 };
        let nbins = (n + 2 * offset) as usize;
        let bin_of = |x: f64| -> Option<usize> {
            if grid.periodic {
                let r = (x - grid.x_min).rem_euclid(TWO_PI);
                Some(((r / h).floor() as i64).clamp(0, n - 1) as usize)
            } else {
                let b = ((x - grid.x_min) / h).round() as i64 + offset;
                (0..nbins as i64).contains(&b).then_some(b as usize)
            }
        };
        let assigned: Vec<Option<usize>> = q.iter().map(|&x| bin_of(x)).collect();
        let mut start = vec![0usize; nbins + 1];
        for b in assigned.iter().flatten() {
            start[b + 1] += 1;
        }
        for i in 0..nbins {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut members = vec![0usize; start[nbins]];
        for (i, b) in assigned.iter().enumerate() {
            if let Some(b) = b {
                members[fill[*b]] = i;
                fill[*b] += 1;
            }
        }
        Self { start, members, offset }
    }
}

fn smooth(
    q: &[f64],
    weights: Option<&[f64]>,
    eps: f64,
    grid: &Grid1D,
    kernel: KernelKind,
    deriv: u32,
) -> Result<Vec<f64>> {
    grid.validate()?;
    ensure(!q.is_empty(), || "smoothing needs at least one particle".into())?;
    if q.iter().any(|v| !v.is_finite()) {
        return Err(DkError::Numerical("non-finite particle position".into()));
    }
    let k = Kernel::new(kernel, eps, grid.periodic)?;
    let h = grid.spacing();
    let n = grid.n_cells;
    let reach = (k.cutoff / h).ceil() as usize + 1;
    let bins = Bins::build(q, grid, reach);
    let inv_n = 1.0 / q.len() as f64;
    let nbins = bins.start.len() - 1;
    let value_at = |idx: usize| -> f64 {
        let x = grid.point(idx);
        let mut acc = 0.0;
        let mut visit = |b: usize| {
            for &i in &bins.members[bins.start[b]..bins.start[b + 1]] {
                let mut d = x - q[i];
                if grid.periodic {
                    d = (d + PI).rem_euclid(TWO_PI) - PI;
                }
                let w = weights.map_or(1.0, |ws| ws[i]);
                acc += w * k.eval(d, deriv);
            }
        };
        if grid.periodic {
            if 2 * reach + 1 >= n {
                (0..n).for_each(&mut visit);
            } else {
                for o in 0..=2 * reach {
                    visit((idx + n + o - reach) % n);
                }
            }
        } else {
            let centre = idx as i64 + bins.offset;
            let lo = (centre - reach as i64).max(0) as usize;
            let hi = ((centre + reach as i64) as usize).min(nbins - 1);
            (lo..=hi).for_each(&mut visit);
        }
        acc * inv_n
    };
    #[cfg(feature = "parallel")]
    let values: Vec<f64> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(value_at).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let values: Vec<f64> = (0..n).map(value_at).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DkError::Numerical("non-finite smoothed field".into()));
    }
    Ok(values)
}

/// rho_eps(x) = N^{-1} sum_i w_eps(x - q_i).
pub fn smoothed_density(q: &[f64], eps: f64, grid: &Grid1D, kernel: KernelKind) -> Result<Field> {
    let values = smooth(q, None, eps, grid, kernel, 0)?;
    Ok(Field { grid: *grid, values, kind: FieldKind::Density, epsilon: eps, kernel })
}

/// j_eps(x) = N^{-1} sum_i p_i w_eps(x - q_i).
pub fn smoothed_current(q: &[f64], p: &[f64], eps: f64, grid: &Grid1D, kernel: KernelKind) -> Result<Field> {
    ensure(q.len() == p.len(), || "positions and momenta differ in length".into())?;
    let values = smooth(q, Some(p), eps, grid, kernel, 0)?;
    Ok(Field { grid: *grid, values, kind: FieldKind::Current, epsilon: eps, kernel })
}

/// j2_eps(x) = N^{-1} sum_i p_i^2 w'_eps(x - q_i).
pub fn smoothed_j2(q: &[f64], p: &[f64], eps: f64, grid: &Grid1D, kernel: KernelKind) -> Result<Field> {
    ensure(q.len() == p.len(), || "positions and momenta differ in length".into())?;
    let p2: Vec<f64> = p.iter().map(|v| v * v).collect();
    let values = smooth(q, Some(&p2), eps, grid, kernel, 1)?;
    Ok(Field { grid: *grid, values, kind: FieldKind::MomentumFlux, epsilon: eps, kernel })
}

pub fn field_norm(field: &Field, kind: NormKind) -> Result<f64> {
    let g = &field.grid;
    let v = &field.values;
    match kind {
        NormKind::L2 => Ok(g.integrate(&v.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt()),
        NormKind::L4 => Ok(g.integrate(&v.iter().map(|x| x.powi(4)).collect::<Vec<_>>()).powf(0.25)),
        NormKind::H1 => {
            ensure(g.n_cells >= 4, || "H1 norm needs at least 4 cells".into())?;
            let d = g.derivative(v);
            let l2: f64 = g.integrate(&v.iter().map(|x| x * x).collect::<Vec<_>>());
            let d2: f64 = g.integrate(&d.iter().map(|x| x * x).collect::<Vec<_>>());
            Ok((l2 + d2).sqrt())
        }
    }
}

impl Field {
    /// CSV `x,value` plus a JSON sidecar describing the run.
    pub fn write(&self, csv: &Path, sidecar: &Path, meta: &FieldMeta) -> Result<()> {
        write_csv(csv, "x,value", self.grid.points().into_iter().zip(&self.values).map(|(x, v)| [x, *v]))?;
        write_json(
            sidecar,
            &serde_json::json!({
                "epsilon": self.epsilon,
                "kind": self.kind.name(),
                "kernel": self.kernel,
                "N": meta.n,
                "theta": meta.theta,
                "seed": meta.seed,
                "time": meta.time,
            }),
        )
    }
}
