use std::f64::consts::PI;

use dklab::particles::Potential;
use dklab::periodic_kernel::{sample_noise_increment, von_mises_kernel, NoiseIncrement};
use dklab::rng::stream;
use dklab::spde::*;
use num_complex::Complex64;

type C = Complex64;

fn rk4_mode(m: f64, gamma: f64, kbt: f64, t: f64, h: f64, x0: [C; 2]) -> [C; 2] {
    let i = C::new(0.0, 1.0);
    let f = |x: [C; 2]| [-i * m * x[1], -i * kbt * m * x[0] - gamma * x[1]];
    let n = (t / h).round() as usize;
    let h = t / n as f64;
    let mut x = x0;
    for _ in 0..n {
        let k1 = f(x);
        let k2 = f([x[0] + k1[0] * (h / 2.0), x[1] + k1[1] * (h / 2.0)]);
        let k3 = f([x[0] + k2[0] * (h / 2.0), x[1] + k2[1] * (h / 2.0)]);
        let k4 = f([x[0] + k3[0] * h, x[1] + k3[1] * h]);
        for c in 0..2 {
            x[c] += (k1[c] + k2[c] * 2.0 + k3[c] * 2.0 + k4[c]) * (h / 6.0);
        }
    }
    x
}

fn apply(e: &[[C; 2]; 2], x: [C; 2]) -> [C; 2] {
    [e[0][0] * x[0] + e[0][1] * x[1], e[1][0] * x[0] + e[1][1] * x[1]]
}

#[test]
fn mode_exponential_against_rk4() {
    let x0 = [C::new(0.3, -0.2), C::new(-0.1, 0.5)];
    let e = mode_exponential(3, 1.0, 1.0, 0.7);
    let r = rk4_mode(3.0, 1.0, 1.0, 0.7, 1e-5, x0);
    let a = apply(&e, x0);
    for c in 0..2 {
        assert!((a[c] - r[c]).norm() < 1e-9);
    }
}

#[test]
fn near_degenerate_modes_against_rk4() {
    let x0 = [C::new(1.0, 0.0), C::new(0.0, 1.0)];
    // gamma^2 / 4 = kbt m^2 exactly, and just either side of it
    for &(gamma, kbt) in &[(2.0, 1.0), (2.0 + 1e-9, 1.0), (2.0 - 1e-9, 1.0), (4.0, 4.0)] {
        for &t in &[0.01, 0.5, 3.0] {
            let a = apply(&mode_exponential(1, gamma, kbt, t), x0);
            let r = rk4_mode(1.0, gamma, kbt, t, 1e-4, x0);
            for c in 0..2 {
                assert!((a[c] - r[c]).norm() < 1e-10, "gamma {gamma} t {t}");
            }
        }
    }
}

fn state(m: usize, seed: u64) -> SpectralState {
    let mut r = stream(seed, 77, &[]);
    let mut s = SpectralState::zeros(m);
    for k in 0..=m {
        let w = 1.0 / (1.0 + (k * k) as f64);
        s.rho[k] = C::new(dklab::rng::normal(&mut r), dklab::rng::normal(&mut r)) * w;
        s.j[k] = C::new(dklab::rng::normal(&mut r), dklab::rng::normal(&mut r)) * w;
    }
    s.rho[0] = C::new(1.0, 0.0);
    s.j[0].im = 0.0;
    s
}

#[test]
fn semigroup_trivial_cases() {
    let s = state(8, 1);
    let same = semigroup_apply(&s, 0.0, 1.0, 1.0).unwrap();
    assert_eq!(same.rho, s.rho);
    assert_eq!(same.j, s.j);
    let later = semigroup_apply(&s, 0.9, 1.5, 1.0).unwrap();
    assert_eq!(later.rho[0], s.rho[0]);
    assert_eq!(later.j[0], s.j[0] * (-1.5f64 * 0.9).exp());
    assert!(semigroup_apply(&s, -0.1, 1.0, 1.0).is_err());
}

#[test]
fn semigroup_against_rk4_for_random_modes() {
    let mut r = stream(3, 3, &[]);
    use rand::Rng;
    for &gamma in &[0.5, 1.0, 2.0] {
        for _ in 0..20 {
            let m = r.random_range(1..=64) as f64;
            let t = r.random_range(0.05..1.0);
            let x0 = [C::new(0.2, 0.1), C::new(-0.4, 0.3)];
            let a = apply(&mode_exponential(m as i64, gamma, 1.0, t), x0);
            let h = (0.02 / m).min(1e-4);
            let b = rk4_mode(m, gamma, 1.0, t, h, x0);
            for c in 0..2 {
                assert!((a[c] - b[c]).norm() < 1e-9, "m {m} gamma {gamma} t {t}");
            }
        }
    }
}

#[test]
fn energy_decrement_matches_dissipation() {
    let (gamma, kbt, dt) = (1.3, 1.0, 0.05);
    let s = state(16, 5);
    let e0 = weighted_energy(&s, kbt);
    let e1 = weighted_energy(&semigroup_apply(&s, dt, gamma, kbt).unwrap(), kbt);
    // Simpson rule of 2 gamma sum (1 + m^2) |j_m|^2 over [0, dt]
    let n = 2000;
    let h = dt / n as f64;
    let diss = |t: f64| {
        let x = semigroup_apply(&s, t, gamma, kbt).unwrap();
        let z = SpectralState { rho: vec![C::new(0.0, 0.0); x.rho.len()], ..x };
        2.0 * gamma * weighted_energy(&z, kbt)
    };
    let mut integral = diss(0.0) + diss(dt);
    for k in 1..n {
        integral += diss(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    integral *= h / 3.0;
    assert!(e1 < e0);
    assert!(((e0 - e1) - integral).abs() < 1e-8 * e0, "{} vs {integral}", e0 - e1);
}

#[test]
fn w_norm_examples() {
    assert_eq!(w_norm(&SpectralState::zeros(4)), 0.0);
    let s = SpectralState::from_functions(|x| (2.0 * x).cos(), |_| 0.0, 8, 64).unwrap();
    assert!((w_norm(&s).powi(2) - 5.0 * PI).abs() < 1e-12);
    let a = state(10, 2);
    let mut b = a.clone();
    for m in 0..=10 {
        let phase = C::from_polar(1.0, -(m as f64) * 0.37);
        b.rho[m] *= phase;
        b.j[m] *= phase;
    }
    assert!((w_norm(&a) - w_norm(&b)).abs() < 1e-13 * w_norm(&a));
}

#[test]
fn hermitian_storage_gives_real_fields() {
    let s = state(6, 4);
    assert_eq!(s.rho_coeff(-3), s.rho_coeff(3).conj());
    assert_eq!(s.j_coeff(9), C::new(0.0, 0.0));
    let (rho, _) = s.to_grid(32).unwrap();
    for (k, v) in rho.iter().enumerate() {
        let x = 2.0 * PI * k as f64 / 32.0;
        let direct: C = (-6i64..=6).map(|m| s.rho_coeff(m) * C::from_polar(1.0, m as f64 * x)).sum();
        assert!(direct.im.abs() < 1e-14);
        assert!((direct.re - v).abs() < 1e-13);
    }
    assert!(s.to_grid(12).is_err());
}

/// Solve the 3x3 matching conditions for the quartic blend.
fn blend_by_elimination(delta: f64) -> [f64; 3] {
    let sd = delta.sqrt();
    let mut a = [
        [1.0, delta * delta, delta.powi(4), sd],
        [0.0, 2.0 * delta, 4.0 * delta.powi(3), 0.5 / sd],
        [0.0, 2.0, 12.0 * delta * delta, -0.25 / (delta * sd)],
    ];
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in 0..4 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}

#[test]
fn blend_coefficients_solve_the_matching_system() {
    for &delta in &[0.1, 0.01, 2.0] {
        let b = SqrtBlend::new(delta).unwrap();
        let [a, bb, c] = blend_by_elimination(delta);
        assert!((b.a - a).abs() < 1e-12 * a.abs());
        assert!((b.b - bb).abs() < 1e-10 * bb.abs());
        assert!((b.c - c).abs() < 1e-10 * c.abs());
        assert_eq!(b.value(delta), delta.sqrt());
        let inside = |z: f64| b.a + z * z * (b.b + b.c * z * z);
        assert!((inside(delta) - delta.sqrt()).abs() < 1e-14);
        assert!((b.derivative(delta * (1.0 - 1e-15)) - 0.5 / delta.sqrt()).abs() < 1e-9 / delta.sqrt());
        assert!((b.second_derivative(delta * (1.0 - 1e-15)) + 0.25 / delta.powf(1.5)).abs() < 1e-8 / delta.powf(1.5));
    }
    assert!(SqrtBlend::new(0.0).is_err());
    assert!(h_delta(1.0, -1.0).is_err());
}

#[test]
fn blend_derivative_against_finite_differences() {
    let delta = 0.1;
    let b = SqrtBlend::new(delta).unwrap();
    let mut r = stream(1, 1, &[]);
    use rand::Rng;
    let h = 1e-6;
    for k in 0..100 {
        let z = if k < 20 {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            s * delta + r.random_range(-1e-3..1e-3)
        } else {
            r.random_range(-0.5..0.5)
        };
        if (z.abs() - delta).abs() < 2.0 * h {
            continue;
        }
        let fd = (b.value(z + h) - b.value(z - h)) / (2.0 * h);
        assert!((fd - h_delta_prime(z, delta).unwrap()).abs() < 1e-6, "z = {z}");
    }
}

#[test]
fn blend_is_positive_and_monotone() {
    let b = SqrtBlend::new(0.1).unwrap();
    let c0 = b.a / 0.1f64.sqrt();
    let mut prev = b.value(0.0);
    for k in 1..=1000 {
        let z = 0.1 * k as f64 / 1000.0;
        let v = b.value(z);
        assert!(v >= prev && v >= (0.1f64.sqrt() * c0).min(z.sqrt()));
        assert_eq!(b.value(-z), v);
        prev = v;
    }
    assert!(b.a > 0.0);
}

fn params(eps: f64, n: f64, m: usize) -> SolverParams {
    SolverParams { m_trunc: m, ..SolverParams::defaults(eps, n, 1.0) }
}

#[test]
fn solver_parameter_validation() {
    let ok = params(0.3, 100.0, 16);
    assert!(ok.validate().is_ok());
    assert!(SolverParams { gamma: 0.0, ..ok.clone() }.validate().is_err());
    assert!(SolverParams { delta: 0.0, ..ok.clone() }.validate().is_err());
    assert!(SolverParams { potential: Potential::EvenPolynomial { coeffs: vec![0.0, 0.0, 1.0] }, ..ok.clone() }
        .validate()
        .is_err());
    assert!((small_noise_scale(0.25, 65536.0) - 65536f64.powf(-0.5) * 0.25f64.powf(-3.5)).abs() < 1e-15);
}

#[test]
fn drift_of_constant_potential_vanishes() {
    let mut s = Solver::new(params(0.3, 100.0, 16)).unwrap();
    let d = s.drift_apply(&state(16, 1)).unwrap();
    assert!(d.iter().all(|c| *c == C::new(0.0, 0.0)));
}

#[test]
fn drift_of_cosine_potential_on_constant_density() {
    let c = 0.8;
    let p = SolverParams { potential: Potential::PeriodicTrig { a: vec![1.0], b: vec![] }, ..params(0.3, 100.0, 16) };
    let mut s = Solver::new(p).unwrap();
    let mut x = SpectralState::zeros(16);
    x.rho[0] = C::new(c, 0.0);
    let d = s.drift_apply(&x).unwrap();
    // c sin x = c (e^{ix} - e^{-ix}) / 2i
    assert!((d[1] - C::new(0.0, -c / 2.0)).norm() < 1e-15);
    for (m, v) in d.iter().enumerate() {
        if m != 1 {
            assert!(v.norm() < 1e-15, "mode {m}");
        }
    }
}

#[test]
fn drift_matches_direct_convolution() {
    let (a, b) = (vec![0.4, -0.1, 0.25], vec![0.2, 0.0, -0.3]);
    let m = 12;
    let p = SolverParams { potential: Potential::PeriodicTrig { a: a.clone(), b: b.clone() }, ..params(0.3, 100.0, m) };
    let mut s = Solver::new(p).unwrap();
    let x = state(m, 9);
    let d = s.drift_apply(&x).unwrap();
    let vp = |k: i64| -> C {
        let ku = k.unsigned_abs() as usize;
        if ku == 0 || ku > a.len() {
            return C::new(0.0, 0.0);
        }
        let kf = ku as f64;
        let pos = C::new(kf * b[ku - 1] / 2.0, kf * a[ku - 1] / 2.0);
        if k > 0 {
            pos
        } else {
            pos.conj()
        }
    };
    for mm in 0..=m as i64 {
        let direct: C = (-3i64..=3).map(|k| -vp(k) * x.rho_coeff(mm - k)).sum();
        assert!((direct - d[mm as usize]).norm() < 1e-12, "mode {mm}");
    }
}

#[test]
fn zero_noise_increment_gives_zero() {
    let mut s = Solver::new(params(0.3, 100.0, 16)).unwrap();
    let inc = NoiseIncrement { dt: 0.0, cos: vec![0.0; 10], sin: vec![0.0; 10] };
    let (n, min_rho) = s.noise_apply(&state(16, 3), &inc).unwrap();
    assert!(n.iter().all(|c| *c == C::new(0.0, 0.0)));
    assert!(min_rho.is_finite());
}

#[test]
fn frozen_field_noise_covariance() {
    let (eps, n_part, c) = (0.5, 50.0, 2.0);
    let p = params(eps, n_part, 96);
    let dt = p.dt;
    let mut s = Solver::new(p.clone()).unwrap();
    assert!(s.noise_modes() <= 96);
    let mut x = SpectralState::zeros(96);
    x.rho[0] = C::new(c, 0.0);
    let pts = [0.0, 0.3, 1.0, 2.5];
    let draws = 10_000;
    let mut prod = vec![vec![Vec::with_capacity(draws); 4]; 4];
    for d in 0..draws {
        let inc = s.sample_increment(7, 0, d as u64).unwrap();
        let (j, _) = s.noise_apply(&x, &inc).unwrap();
        let field = SpectralState { rho: vec![C::new(0.0, 0.0); 97], j, time: 0.0 };
        let vals: Vec<f64> = pts
            .iter()
            .map(|&xx| (-96i64..=96).map(|m| field.j_coeff(m) * C::from_polar(1.0, m as f64 * xx)).sum::<C>().re)
            .collect();
        for a in 0..4 {
            for b in 0..4 {
                prod[a][b].push(vals[a] * vals[b]);
            }
        }
    }
    for a in 0..4 {
        for b in 0..4 {
            let m = dklab::stats::mean_se(&prod[a][b]);
            let exact = p.sigma * p.sigma / n_part * c * dt * von_mises_kernel(pts[a] - pts[b], eps).unwrap();
            assert!((m.mean - exact).abs() < 3.0 * m.se, "({a},{b}): {} vs {exact} se {}", m.mean, m.se);
        }
    }
}

#[test]
fn noiseless_step_is_the_semigroup() {
    let p = params(0.3, 100.0, 16);
    let mut s = Solver::new(p.clone()).unwrap();
    let x = state(16, 6);
    let a = s.step_mild(&x, None).unwrap();
    let b = semigroup_apply(&x, p.dt, p.gamma, p.kbt()).unwrap();
    assert_eq!(a.rho[0], b.rho[0]);
    for m in 0..=16 {
        assert!((a.rho[m] - b.rho[m]).norm() <= 2.0 * f64::EPSILON * b.rho[m].norm().max(1e-300));
        assert!((a.j[m] - b.j[m]).norm() <= 2.0 * f64::EPSILON * b.j[m].norm().max(1e-300));
    }
    let traj = s.solve_deterministic(&x, 5.0 * p.dt).unwrap();
    assert_eq!(traj.len(), 6);
    assert_eq!(traj[1], a);
}

#[test]
fn constant_state_is_stationary() {
    let mut s = Solver::new(params(0.3, 100.0, 16)).unwrap();
    let mut x = SpectralState::zeros(16);
    x.rho[0] = C::new(1.0, 0.0);
    let traj = s.solve_deterministic(&x, 1.0).unwrap();
    let last = traj.last().unwrap();
    assert_eq!(last.rho, x.rho);
    assert!(last.j.iter().all(|c| c.norm() < 1e-14));
}

#[test]
fn deterministic_energy_is_monotone() {
    let mut s = Solver::new(params(0.3, 100.0, 32)).unwrap();
    let mut x = state(32, 12);
    x.rho[0] = C::new(0.0, 0.0);
    let traj = s.solve_deterministic(&x, 1.0).unwrap();
    for w in traj.windows(2) {
        assert!(weighted_energy(&w[1], 1.0) - weighted_energy(&w[0], 1.0) < 1e-10);
    }
}

/// RK4 in Fourier space with the drift as a direct convolution.
fn rk4_reference(x0: &SpectralState, a1: f64, gamma: f64, kbt: f64, t: f64, h: f64) -> SpectralState {
    let m = x0.m_trunc();
    let i = C::new(0.0, 1.0);
    // V = a1 cos x: V'_{+1} = i a1 / 2
    let rhs = |rho: &[C], j: &[C]| -> (Vec<C>, Vec<C>) {
        let get = |v: &[C], k: i64| -> C {
            let ku = k.unsigned_abs() as usize;
            if ku > m {
                C::new(0.0, 0.0)
            } else if k >= 0 {
                v[ku]
            } else {
                v[ku].conj()
            }
        };
        let vp1 = i * (a1 / 2.0);
        let mut dr = vec![C::new(0.0, 0.0); m + 1];
        let mut dj = vec![C::new(0.0, 0.0); m + 1];
        for k in 0..=m {
            let kf = k as f64;
            let drift = -(vp1 * get(rho, k as i64 - 1) + vp1.conj() * get(rho, k as i64 + 1));
            dr[k] = -i * kf * j[k];
            dj[k] = -gamma * j[k] - i * kbt * kf * rho[k] + drift;
        }
        (dr, dj)
    };
    let n = (t / h).round() as usize;
    let (mut rho, mut j) = (x0.rho.clone(), x0.j.clone());
    let axpy = |a: &[C], b: &[C], s: f64| -> Vec<C> { a.iter().zip(b).map(|(x, y)| x + y * s).collect() };
    for _ in 0..n {
        let (k1r, k1j) = rhs(&rho, &j);
        let (k2r, k2j) = rhs(&axpy(&rho, &k1r, h / 2.0), &axpy(&j, &k1j, h / 2.0));
        let (k3r, k3j) = rhs(&axpy(&rho, &k2r, h / 2.0), &axpy(&j, &k2j, h / 2.0));
        let (k4r, k4j) = rhs(&axpy(&rho, &k3r, h), &axpy(&j, &k3j, h));
        for k in 0..=m {
            rho[k] += (k1r[k] + k2r[k] * 2.0 + k3r[k] * 2.0 + k4r[k]) * (h / 6.0);
            j[k] += (k1j[k] + k2j[k] * 2.0 + k3j[k] * 2.0 + k4j[k]) * (h / 6.0);
        }
    }
    SpectralState { rho, j, time: t }
}

#[test]
fn deterministic_drift_against_rk4_reference() {
    let m = 24;
    let p = SolverParams {
        potential: Potential::PeriodicTrig { a: vec![0.1], b: vec![] },
        dt: 1e-5,
        ..params(0.3, 100.0, m)
    };
    let mut s = Solver::new(p.clone()).unwrap();
    let x0 = SpectralState::from_functions(|x| 1.0 + 0.1 * x.cos(), |_| 0.0, m, 128).unwrap();
    let mut x = x0.clone();
    for _ in 0..100_000 {
        x = s.step_mild(&x, None).unwrap();
    }
    let r = rk4_reference(&x0, 0.1, p.gamma, p.kbt(), 1.0, 1e-3);
    let (a, _) = x.to_grid(128).unwrap();
    let (b, _) = r.to_grid(128).unwrap();
    let err = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "sup error {err}");
}

fn aggregate(fine: &[NoiseIncrement]) -> NoiseIncrement {
    let mut out = NoiseIncrement { dt: 0.0, cos: vec![0.0; fine[0].cos.len()], sin: vec![0.0; fine[0].sin.len()] };
    for f in fine {
        out.dt += f.dt;
        for k in 0..out.cos.len() {
            out.cos[k] += f.cos[k];
            out.sin[k] += f.sin[k];
        }
    }
    out
}

#[test]
fn strong_convergence_in_the_step() {
    let m = 16;
    let t_final = 0.25;
    let base = SolverParams {
        potential: Potential::PeriodicTrig { a: vec![0.2], b: vec![] },
        ..params(0.4, 20.0, m)
    };
    let x0 = SpectralState::from_functions(|x| 1.0 + 0.3 * x.cos(), |x| 0.2 * x.sin(), m, 64).unwrap();
    let steps = [8usize, 16, 32, 64];
    let fine_per_min = 64;
    let n_fine = steps[steps.len() - 1] * fine_per_min;
    let dt_fine = t_final / n_fine as f64;
    let spec = Solver::new(base.clone()).unwrap().spectrum.clone();
    let mut errs = vec![0.0; steps.len()];
    let paths = 8;
    for path in 0..paths {
        let mut r = stream(99, 1, &[path]);
        let fine: Vec<NoiseIncrement> =
            (0..n_fine).map(|_| sample_noise_increment(&spec, 16, dt_fine, &mut r).unwrap()).collect();
        let run = |n: usize| -> Vec<SpectralState> {
            let mut s = Solver::new(SolverParams { dt: t_final / n as f64, noise_modes: Some(16), ..base.clone() }).unwrap();
            let per = n_fine / n;
            let mut x = x0.clone();
            let mut out = vec![x.clone()];
            for k in 0..n {
                let inc = aggregate(&fine[k * per..(k + 1) * per]);
                x = s.step_mild(&x, Some(&inc)).unwrap();
                out.push(x.clone());
            }
            out
        };
        let reference = run(n_fine);
        for (e, &n) in errs.iter_mut().zip(&steps) {
            let coarse = run(n);
            let per = n_fine / n;
            let sup = (0..=n).map(|k| w_distance(&coarse[k], &reference[k * per])).fold(0.0, f64::max);
            *e += sup / paths as f64;
        }
    }
    let dts: Vec<f64> = steps.iter().map(|&n| t_final / n as f64).collect();
    let fit = dklab::stats::loglog_fit(&dts, &errs).unwrap();
    assert!(fit.slope >= 0.5, "order {} errors {errs:?}", fit.slope);
}

#[test]
fn mass_mode_is_bit_constant_along_noisy_paths() {
    let p = params(0.3, 10.0, 16);
    let mut s = Solver::new(p).unwrap();
    let x0 = SpectralState::from_functions(|x| 1.0 + 0.2 * x.cos(), |_| 0.0, 16, 64).unwrap();
    let r0 = x0.rho[0];
    let mut ok = true;
    s.run_path(&x0, 0.5, 1, 0, |x, _| ok &= x.rho[0] == r0).unwrap();
    assert!(ok);
}

#[test]
fn small_noise_without_noise_is_zero() {
    let p = SolverParams { sigma: 0.0, ..params(0.3, 100.0, 16) };
    let x0 = SpectralState::from_functions(|x| 1.0 + 0.2 * x.cos(), |_| 0.0, 16, 64).unwrap();
    let rep = small_noise_experiment(&p, &x0, 0.1, 4, 2.0, &[1e-3], 1).unwrap();
    assert_eq!(rep.moment.mean, 0.0);
    assert_eq!(rep.tails[0].probability, 0.0);
    assert!(rep.warning.is_some());
    assert!(small_noise_experiment(&p, &x0, 0.1, 4, 1.0, &[], 1).is_err());
}

#[test]
fn doubling_n_halves_the_small_noise_statistic() {
    let x0 = SpectralState::from_functions(|_| 1.0, |_| 0.0, 16, 64).unwrap();
    let p1 = SolverParams { potential: Potential::PeriodicTrig { a: vec![0.05], b: vec![] }, ..params(0.3, 1e4, 16) };
    let p2 = SolverParams { n_particles: 2e4, ..p1.clone() };
    let a = small_noise_experiment(&p1, &x0, 0.2, 60, 2.0, &[], 4).unwrap();
    let b = small_noise_experiment(&p2, &x0, 0.2, 60, 2.0, &[], 4).unwrap();
    let ratio = a.moment.mean / b.moment.mean;
    assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn positivity_without_noise() {
    let p = SolverParams { sigma: 0.0, ..params(0.25, 100.0, 16) };
    let x0 = SpectralState::from_functions(|_| 1.0, |_| 0.0, 16, 64).unwrap();
    let rep = positivity_probability(&p, &x0, 0.2, 10, 1).unwrap();
    assert_eq!(rep.exceedances, 0);
    assert_eq!(rep.fraction, 0.0);
    let low = SpectralState::from_functions(|_| 0.05, |_| 0.0, 16, 64).unwrap();
    assert!(positivity_probability(&p, &low, 0.2, 10, 1).is_err());
}

#[test]
fn exceedance_fraction_falls_with_n() {
    let x0 = SpectralState::from_functions(|_| 1.0, |_| 0.0, 16, 64).unwrap();
    let fracs: Vec<_> = [1.0, 4.0, 16.0]
        .iter()
        .map(|&n| {
            let p = params(0.25, n, 16);
            positivity_probability(&p, &x0, 0.5, 200, 3).unwrap()
        })
        .collect();
    assert!(fracs[0].fraction > 0.0);
    for w in fracs.windows(2) {
        assert!(w[1].fraction <= w[0].fraction || w[1].wilson_low <= w[0].wilson_high);
    }
    assert!(fracs[2].fraction < fracs[0].fraction);
}

#[test]
fn trajectory_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Solver::new(params(0.3, 100.0, 8)).unwrap();
    let x0 = SpectralState::from_functions(|x| 1.0 + 0.1 * x.cos(), |_| 0.0, 8, 32).unwrap();
    let traj = s.solve_deterministic(&x0, 0.002).unwrap();
    let path = dir.path().join("t.csv");
    write_trajectory(&path, &traj, 20).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("time,x,rho,j"));
    assert_eq!(text.lines().count(), 1 + 3 * 20);
}

#[test]
fn noisy_paths_are_reproducible() {
    let p = params(0.3, 50.0, 16);
    let x0 = SpectralState::from_functions(|x| 1.0 + 0.2 * x.cos(), |_| 0.0, 16, 64).unwrap();
    let run = || {
        let mut s = Solver::new(p.clone()).unwrap();
        s.run_path(&x0, 0.05, 11, 3, |_, _| {}).unwrap()
    };
    assert_eq!(run(), run());
}
