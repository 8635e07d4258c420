//! Browser bindings for three small dklab computations.
//!
//! The plain functions do the work and are tested natively; the exported
//! wrappers only turn errors into JS exceptions.

use std::f64::consts::PI;

use dklab::fields::{smoothed_density, Grid1D, KernelKind};
use dklab::gaussian::BivariateGaussian;
use dklab::particles::{ParticleEnsemble, Potential};
use dklab::periodic_kernel::kernel_eigenvalues;
use dklab::spde::{Solver, SolverParams, SpectralState};
use wasm_bindgen::prelude::*;

/// Sample N positions from N(pi, 10^0.2), smooth them at eps = N^(-1/theta)
/// and return [eps, roughness, rho_0, ..., rho_{n_grid-1}] on [0, 2 pi].
pub fn density_profile(n: usize, theta: f64, seed: u64, n_grid: usize) -> Result<Vec<f64>, String> {
    if !(theta > 0.0) {
        return Err(format!("theta must be positive, got {theta}"));
    }
    let eps = (n.max(1) as f64).powf(-1.0 / theta);
    let law = BivariateGaussian { mean_q: PI, mean_p: 0.0, var_q: 10f64.powf(0.2), var_p: 1.0, corr: 0.0 };
    let ens = ParticleEnsemble::sample(n, &law, seed).map_err(|e| e.to_string())?;
    let grid = Grid1D::line(0.0, 2.0 * PI, n_grid).map_err(|e| e.to_string())?;
    let rho = smoothed_density(&ens.q, eps, &grid, KernelKind::GaussLine).map_err(|e| e.to_string())?;
    let d = grid.derivative(&rho.values);
    let rough = grid.integrate(&d.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    let mut out = vec![eps, rough];
    out.extend(rho.values);
    Ok(out)
}

/// lambda_j for j = 0..count of the periodic kernel at width eps.
pub fn spectrum(eps: f64, count: usize) -> Result<Vec<f64>, String> {
    let spec = kernel_eigenvalues(eps, None).map_err(|e| e.to_string())?;
    Ok((0..count as i64).map(|j| spec.lambda(j)).collect())
}

/// One noisy SPDE path from rho0 = 1 + a cos x, j0 = 0 with N = eps^-theta.
/// Returns `snapshots + 1` rows of `n_grid` density values followed by the
/// running minimum of rho, all flattened.
pub fn spde_density_path(
    eps: f64,
    theta: f64,
    amplitude: f64,
    t_final: f64,
    snapshots: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    const M: usize = 32;
    const N_GRID: usize = 128;
    let n = eps.powf(-theta);
    let x0 = SpectralState::from_functions(|x| 1.0 + amplitude * x.cos(), |_| 0.0, M, 4 * (M + 1)).map_err(|e| e.to_string())?;
    let eta = 1.0 - amplitude.abs();
    if !(eta > 0.0) {
        return Err("amplitude must be below 1 so the initial density stays positive".into());
    }
    let params = SolverParams {
        m_trunc: M,
        dt: 2e-3,
        potential: Potential::Zero,
        ..SolverParams::defaults(eps, n, eta)
    };
    let mut solver = Solver::new(params).map_err(|e| e.to_string())?;
    let steps = (t_final / 2e-3).round().max(1.0) as usize;
    let every = (steps / snapshots.max(1)).max(1);
    let mut rows = Vec::new();
    let mut lo = f64::INFINITY;
    let mut k = 0;
    let mut failed = None;
    solver
        .run_path(&x0, t_final, seed, 0, |x, m| {
            lo = lo.min(m);
            if k % every == 0 || k == steps {
                match x.to_grid(N_GRID) {
                    Ok((r, _)) => rows.extend(r),
                    Err(e) => failed = Some(e.to_string()),
                }
            }
            k += 1;
        })
        .map_err(|e| e.to_string())?;
    if let Some(e) = failed {
        return Err(e);
    }
    rows.push(lo);
    Ok(rows)
}

#[wasm_bindgen(js_name = densityProfile)]
pub fn density_profile_js(n: usize, theta: f64, seed: u32, n_grid: usize) -> Result<Vec<f64>, JsError> {
    density_profile(n, theta, seed as u64, n_grid).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = kernelSpectrum)]
pub fn spectrum_js(eps: f64, count: usize) -> Result<Vec<f64>, JsError> {
    spectrum(eps, count).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = spdeDensityPath)]
pub fn spde_density_path_js(
    eps: f64,
    theta: f64,
    amplitude: f64,
    t_final: f64,
    snapshots: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    spde_density_path(eps, theta, amplitude, t_final, snapshots, seed as u64).map_err(|e| JsError::new(&e))
}

/// Number of grid points per row of `spdeDensityPath`.
#[wasm_bindgen(js_name = spdeGridPoints)]
pub fn spde_grid_points() -> usize {
    128
}
