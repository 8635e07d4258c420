//! Mean smoothed densities from two different scalings converge to the same profile.

use dklab::fields::{smoothed_density, Grid1D, KernelKind};
use dklab::gaussian::normal_pdf;
use dklab::noise::default_init;
use dklab::particles::{ou_moments, LangevinParams, ParticleEnsemble, Potential};

const T: f64 = 0.5;
const REPS: u64 = 40;

fn mean_field(n: usize, eps: f64, grid: &Grid1D) -> Vec<f64> {
    let params = LangevinParams::new(1.0, std::f64::consts::SQRT_2, Potential::Zero).unwrap();
    let mut acc = vec![0.0; grid.n_cells];
    for seed in 0..REPS {
        let mut ens = ParticleEnsemble::sample(n, &default_init(), 1000 + seed).unwrap();
        ens.ou_exact_step(&params, T).unwrap();
        let f = smoothed_density(&ens.q, eps, grid, KernelKind::GaussLine).unwrap();
        for (a, v) in acc.iter_mut().zip(&f.values) {
            *a += v / REPS as f64;
        }
    }
    acc
}

fn l2(grid: &Grid1D, a: &[f64], b: &[f64]) -> f64 {
    grid.integrate(&a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect::<Vec<_>>()).sqrt()
}

/// E rho_eps(x, t) = N(mean_q(t), var_q(t) + eps^2) density for the free dynamics.
fn exact_mean(grid: &Grid1D, eps: f64) -> Vec<f64> {
    let params = LangevinParams::new(1.0, std::f64::consts::SQRT_2, Potential::Zero).unwrap();
    let law = ou_moments(&default_init(), &params, T).unwrap();
    grid.points().iter().map(|&x| normal_pdf(x, law.mean_q, law.var_q + eps * eps).unwrap()).collect()
}

#[test]
fn two_scalings_give_close_mean_fields() {
    let grid = Grid1D::line(0.0, 2.0 * std::f64::consts::PI, 1025).unwrap();
    let mut gaps = Vec::new();
    for n in [250usize, 2000] {
        let a = (n as f64).powf(-1.0 / 3.0);
        let b = (n as f64).powf(-1.0 / 2.0);
        let fa = mean_field(n, a, &grid);
        let fb = mean_field(n, b, &grid);
        let (ea, eb) = (exact_mean(&grid, a), exact_mean(&grid, b));
        // Monte Carlo error of the averaged field is about (N REPS b)^-1/2 (4 pi)^-1/4 in L2.
        let mc = ((n as f64) * REPS as f64 * b).powf(-0.5) * (4.0 * std::f64::consts::PI).powf(-0.25);
        assert!(l2(&grid, &fa, &ea) < 4.0 * mc, "n = {n}: {} vs {mc}", l2(&grid, &fa, &ea));
        assert!(l2(&grid, &fb, &eb) < 4.0 * mc, "n = {n}: {} vs {mc}", l2(&grid, &fb, &eb));
        gaps.push((l2(&grid, &fa, &fb), l2(&grid, &ea, &eb)));
    }
    // the exact gap shrinks like a^2 and the empirical one follows it
    assert!(gaps[1].1 < 0.5 * gaps[0].1, "{gaps:?}");
    assert!(gaps[1].0 < gaps[0].0, "{gaps:?}");
    assert!(gaps[1].0 < 0.05, "{gaps:?}");
}
