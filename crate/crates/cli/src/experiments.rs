//! One function per named experiment. Each writes its artifacts and returns a
//! small summary used by `--check` and by the sweep aggregate.

use std::f64::consts::PI;

use dklab::fields::{self, field_norm, FieldMeta, Grid1D, KernelKind, NormKind};
use dklab::noise::{self, default_init, Integrator, NoiseConfig};
use dklab::particles::{ou_moments, LangevinParams, ParticleEnsemble, TrajectoryWriter};
use dklab::periodic_kernel::kernel_eigenvalues;
use dklab::spde::{self, SolverParams, SpectralState, Solver};
use dklab::stats::{loglog_fit, mean_se};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig, FourierInit, GridSpec};
use crate::error::CliError;
use crate::manifest::Artifacts;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    /// Headline statistic of the run; sweeps fit and envelope it.
    pub primary: f64,
    pub primary_name: &'static str,
    pub stats: Value,
    /// Threshold failures; only fatal under `--check`.
    pub check_failures: Vec<String>,
}

type Out<T> = Result<T, CliError>;

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    module: &'static str,
}

impl Ctx<'_> {
    fn lib<T>(&self, r: dklab::Result<T>) -> Out<T> {
        r.map_err(|e| CliError::from_lib(self.module, e))
    }

    fn theta(&self) -> Out<Option<f64>> {
        self.cfg.single_theta()
    }

    fn n_for(&self, eps: f64) -> Out<usize> {
        self.cfg.particles_for(eps, self.theta()?)
    }

    fn t_final(&self, default: f64) -> f64 {
        self.cfg.t_final.unwrap_or(default)
    }

    fn n_paths(&self, default: usize) -> usize {
        self.cfg.n_paths.unwrap_or(default)
    }

    fn noise_config(&self, eps: f64) -> Out<NoiseConfig> {
        let cfg = NoiseConfig {
            gamma: self.cfg.gamma,
            sigma: self.cfg.sigma,
            potential: self.cfg.potential.clone(),
            init: self.cfg.init.unwrap_or_else(default_init),
            epsilon: eps,
            n_particles: self.n_for(eps)?,
            steps_per_unit: self.cfg.dt.map(|dt| (1.0 / dt).round().max(1.0) as usize).unwrap_or(256),
            integrator: self.cfg.integrator.unwrap_or(Integrator::EulerMaruyama),
            y_cells_per_eps: 2.0,
            seed: self.cfg.single_seed()?,
        };
        self.lib(cfg.validate())?;
        Ok(cfg)
    }

    fn solver_params(&self, eps: f64, x0: &SpectralState) -> Out<SolverParams> {
        let n = self.n_for(eps)? as f64;
        let m_trunc = self.cfg.m_trunc.unwrap_or(128);
        let eta = min_initial_density(x0)?;
        let delta = match self.cfg.delta {
            Some(d) => d,
            None if eta > 0.0 => 0.1 * eta,
            None => return Err(CliError::Config("field `delta`: required when the initial density is not positive".into())),
        };
        let p = SolverParams {
            gamma: self.cfg.gamma,
            sigma: self.cfg.sigma,
            n_particles: n,
            epsilon: eps,
            delta,
            m_trunc,
            dt: self.cfg.dt.unwrap_or(1e-3),
            potential: self.cfg.potential.clone(),
            noise_modes: None,
        };
        self.lib(p.validate())?;
        Ok(p)
    }

    fn initial_state(&self) -> Out<SpectralState> {
        let m = self.cfg.m_trunc.unwrap_or(128);
        let rho0 = self.cfg.rho0.clone().unwrap_or(FourierInit { mean: 1.0, ..Default::default() });
        let j0 = self.cfg.j0.clone().unwrap_or_default();
        for (name, f) in [("rho0", &rho0), ("j0", &j0)] {
            if f.cos.len().max(f.sin.len()) > m {
                return Err(CliError::Config(format!("field `{name}`: modes beyond m_trunc = {m}")));
            }
        }
        self.lib(SpectralState::from_functions(|x| rho0.eval(x), |x| j0.eval(x), m, 4 * (m + 1)))
    }

    fn output_points(&self, m_trunc: usize) -> usize {
        match self.cfg.grid {
            Some(GridSpec::Torus { n_cells }) => n_cells,
            _ => (2 * m_trunc + 2).max(64),
        }
    }
}

fn min_initial_density(x0: &SpectralState) -> Out<f64> {
    let n = 8 * (x0.m_trunc() + 1);
    let (r, _) = x0.to_grid(n).map_err(|e| CliError::from_lib("spde", e))?;
    Ok(r.into_iter().fold(f64::INFINITY, f64::min))
}

fn summary(primary_name: &'static str, primary: f64, stats: Value) -> Summary {
    Summary { primary, primary_name, stats, check_failures: Vec::new() }
}

pub fn run(cfg: &ExperimentConfig, art: &mut Artifacts) -> Out<Summary> {
    let ctx = Ctx { cfg, module: cfg.experiment.module() };
    match cfg.experiment {
        Experiment::Particles => particles(&ctx, art),
        Experiment::Fields => fields(&ctx, art),
        Experiment::Covariance => covariance(&ctx, art),
        Experiment::VarianceScaling => variance_scaling(&ctx, art),
        Experiment::Tightness => tightness(&ctx, art),
        Experiment::InverseMoment => inverse_moment(&ctx, art),
        Experiment::KernelSpectrum => kernel_spectrum(&ctx, art),
        Experiment::Spde => spde_run(&ctx, art),
        Experiment::SmallNoise => small_noise(&ctx, art),
        Experiment::Positivity => positivity(&ctx, art),
    }
}

/// Sample the ensemble and advance it to T, calling `visit` after sampling and after each step.
fn evolve<F: FnMut(&ParticleEnsemble) -> Out<()>>(ctx: &Ctx, nc: &NoiseConfig, t: f64, mut visit: F) -> Out<ParticleEnsemble> {
    let params = ctx.lib(LangevinParams::new(nc.gamma, nc.sigma, nc.potential.clone()))?;
    let mut ens = ctx.lib(ParticleEnsemble::sample(nc.n_particles, &nc.init, nc.seed))?;
    visit(&ens)?;
    if t > 0.0 {
        let n = ((t * nc.steps_per_unit as f64).round() as usize).max(1);
        let dt = t / n as f64;
        for _ in 0..n {
            match nc.integrator {
                Integrator::EulerMaruyama => ctx.lib(ens.em_step(&params, dt))?,
                Integrator::ExactOu => ctx.lib(ens.ou_exact_step(&params, dt))?,
            }
            visit(&ens)?;
        }
    }
    Ok(ens)
}

fn particles(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps = ctx.cfg.single_epsilon()?;
    let nc = ctx.noise_config(eps)?;
    let t = ctx.t_final(0.0);
    let n_steps = if t > 0.0 { ((t * nc.steps_per_unit as f64).round() as usize).max(1) } else { 0 };
    let every = (n_steps / ctx.cfg.snapshots.unwrap_or(1).max(1)).max(1) as u64;
    let path = art.path("trajectory.csv");
    let mut writer = ctx.lib(TrajectoryWriter::create(&path))?;
    let ens = evolve(ctx, &nc, t, |e| {
        if e.step % every == 0 || e.step == n_steps as u64 {
            writer.record(e).map_err(|x| CliError::from_lib("particles", x))?;
        }
        Ok(())
    })?;
    ctx.lib(writer.finish())?;
    art.adopt_csv("trajectory.csv", json!({ "columns": ["step", "time", "particle", "q", "p"] }))?;

    let mq = mean_se(&ens.q);
    let mp = mean_se(&ens.p);
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64;
    let (vq, vp) = (var(&ens.q, mq.mean), var(&ens.p, mp.mean));
    let exact = if nc.potential.is_zero() {
        Some(ctx.lib(ou_moments(&nc.init, &LangevinParams::new(nc.gamma, nc.sigma, nc.potential.clone()).unwrap(), t))?)
    } else {
        None
    };
    let report = json!({
        "n_particles": nc.n_particles,
        "time": ens.time,
        "steps": ens.step,
        "mean_q": mq.mean, "var_q": vq,
        "mean_p": mp.mean, "var_p": vp,
        "ou_moments": exact,
    });
    art.json("particles.json", &report)?;
    Ok(summary("var_q", vq, report))
}

fn default_field_grid(eps: f64, kernel: KernelKind) -> Out<Grid1D> {
    let cells = ((2.0 * PI / (eps / 8.0)).ceil() as usize).max(1024);
    let g = match kernel {
        KernelKind::VonMisesTorus => Grid1D::torus(cells),
        KernelKind::GaussLine => Grid1D::line(0.0, 2.0 * PI, cells + 1),
    };
    g.map_err(|e| CliError::from_lib("fields", e))
}

fn fields(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps = ctx.cfg.single_epsilon()?;
    let nc = ctx.noise_config(eps)?;
    let t = ctx.t_final(0.0);
    let kernel = ctx.cfg.kernel.unwrap_or(KernelKind::GaussLine);
    let grid = match ctx.cfg.grid {
        Some(g) => ctx.lib(g.build())?,
        None => default_field_grid(eps, kernel)?,
    };
    let ens = evolve(ctx, &nc, t, |_| Ok(()))?;
    let meta = FieldMeta { n: nc.n_particles, theta: ctx.theta()?, seed: nc.seed, time: ens.time };
    let rho = ctx.lib(fields::smoothed_density(&ens.q, eps, &grid, kernel))?;
    let cur = ctx.lib(fields::smoothed_current(&ens.q, &ens.p, eps, &grid, kernel))?;
    let j2 = ctx.lib(fields::smoothed_j2(&ens.q, &ens.p, eps, &grid, kernel))?;
    for (name, f) in [("density", &rho), ("current", &cur), ("momentum_flux", &j2)] {
        let csv = format!("{name}.csv");
        ctx.lib(f.write(&art.path(&csv), &art.path(&Artifacts::sidecar_name(&csv)), &meta))?;
        art.adopt_csv(&csv, Value::Null)?;
    }
    let d = grid.derivative(&rho.values);
    let roughness = grid.integrate(&d.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    let report = json!({
        "n_particles": nc.n_particles,
        "epsilon": eps,
        "time": ens.time,
        "kernel": kernel,
        "mass": grid.integrate(&rho.values),
        "density_l2": ctx.lib(field_norm(&rho, NormKind::L2))?,
        "density_l4": ctx.lib(field_norm(&rho, NormKind::L4))?,
        "density_h1": ctx.lib(field_norm(&rho, NormKind::H1))?,
        "roughness": roughness,
    });
    art.json("fields.json", &report)?;
    Ok(summary("roughness", roughness, report))
}

fn covariance(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps = ctx.cfg.single_epsilon()?;
    let nc = ctx.noise_config(eps)?;
    let x = ctx.cfg.x.unwrap_or(PI);
    let offsets = ctx.cfg.pair_offsets.clone().unwrap_or_else(|| vec![-1.5, -0.5, 0.5, 1.5]);
    let points: Vec<f64> = offsets.iter().map(|o| x + o * eps).collect();
    let mut pairs = Vec::new();
    for i in 0..points.len() {
        for j in i..points.len() {
            pairs.push((points[i], points[j]));
        }
    }
    let rep = ctx.lib(noise::theorem1_report(&nc, &pairs, ctx.t_final(1.0), ctx.n_paths(1000)))?;
    art.csv(
        "covariance_pairs.csv",
        "x1,x2,cov_z,cov_z_se,cov_y,cov_y_se,cov_z_formula,cov_z_formula_se,diff,diff_se,bound_diff_unit,bound_abs_unit,noise_dominated",
        rep.pairs.iter().map(|p| {
            [
                p.x1,
                p.x2,
                p.cov_z.mean,
                p.cov_z.se,
                p.cov_y.mean,
                p.cov_y.se,
                p.cov_z_formula.mean,
                p.cov_z_formula.se,
                p.diff.mean,
                p.diff.se,
                p.bound_diff_unit,
                p.bound_abs_unit,
                if p.noise_dominated { 1.0 } else { 0.0 },
            ]
        }),
    )?;
    art.json("covariance.json", &rep)?;
    let dev = rep.max_formula_deviation();
    let mut s = summary(
        "c_diff",
        rep.c_diff,
        json!({
            "n_particles": rep.n_particles,
            "c_diff": rep.c_diff,
            "c_abs": rep.c_abs,
            "max_formula_deviation": dev,
            "diff_bound_holds": rep.diff_bound_holds(rep.c_diff),
            "abs_bound_holds": rep.abs_bound_holds(rep.c_abs),
            "warning": rep.warning,
        }),
    );
    if !(dev <= 3.0) {
        s.check_failures.push(format!("closed-form covariance deviates by {dev:.2} standard errors (limit 3)"));
    }
    Ok(s)
}

fn variance_scaling(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let theta = ctx.theta()?.ok_or_else(|| CliError::Config("field `theta`: required for variance-scaling".into()))?;
    let eps = ctx.cfg.epsilons();
    let base = ctx.noise_config(eps[0])?;
    let rep = ctx.lib(noise::variance_scaling(&base, &eps, theta, ctx.cfg.x.unwrap_or(PI), ctx.t_final(1.0), ctx.n_paths(1000)))?;
    art.set_particles(rep.z.n_particles.clone());
    art.csv(
        "variance_scaling.csv",
        "epsilon,N,var_z,var_z_se,var_y,var_y_se,var_z_formula,var_z_formula_se",
        (0..eps.len()).map(|k| {
            [
                rep.z.epsilons[k],
                rep.z.n_particles[k] as f64,
                rep.z.variances[k],
                rep.z.variance_se[k],
                rep.y.variances[k],
                rep.y.variance_se[k],
                rep.z_formula.variances[k],
                rep.z_formula.variance_se[k],
            ]
        }),
    )?;
    art.json("variance_scaling.json", &rep)?;
    let target = theta - 1.0;
    let mut s = summary(
        "slope_z",
        rep.z.fitted_slope(),
        json!({
            "slope_z": rep.z.fitted_slope(),
            "slope_z_se": rep.z.slope_stderr(),
            "slope_y": rep.y.fitted_slope(),
            "slope_y_se": rep.y.slope_stderr(),
            "target": target,
        }),
    );
    for (name, slope) in [("Z", rep.z.fitted_slope()), ("Y", rep.y.fitted_slope())] {
        if !((slope - target).abs() <= 0.4) {
            s.check_failures.push(format!("Var {name} slope {slope:.3} outside {target} +- 0.4"));
        }
    }
    Ok(s)
}

fn tightness(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps = ctx.cfg.single_epsilon()?;
    let nc = ctx.noise_config(eps)?;
    let times = ctx.cfg.times.clone().unwrap_or_else(|| vec![0.0, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0]);
    let grid = match ctx.cfg.grid {
        Some(g) => ctx.lib(g.build())?,
        None => ctx.lib(noise::default_tightness_grid(&nc, *times.last().unwrap()))?,
    };
    let est = ctx.lib(noise::tightness_lattice(&nc, &times, ctx.n_paths(200), &grid))?;
    let ratio = |e: &noise::TightnessEstimate| e.mean / (e.t - e.s).powi(2);
    art.csv(
        "tightness.csv",
        "s,t,mean,se,i1_component,ct_component,ratio",
        est.iter().map(|e| [e.s, e.t, e.mean, e.se, e.i1_component, e.ct_component, ratio(e)]),
    )?;
    art.json("tightness.json", &est)?;
    let (lo, hi) = est.iter().map(ratio).fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r), b.max(r)));
    let spread = hi / lo;
    let mut s = summary("ratio_spread", spread, json!({ "n_particles": nc.n_particles, "ratio_min": lo, "ratio_max": hi, "ratio_spread": spread }));
    if !(spread < 10.0) {
        s.check_failures.push(format!("E||rho(t)-rho(s)||^2 / |t-s|^2 varies by {spread:.2} (limit 10)"));
    }
    Ok(s)
}

fn inverse_moment(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps = ctx.cfg.single_epsilon()?;
    let nc = ctx.noise_config(eps)?;
    let rep = ctx.lib(noise::inverse_density_moment(&nc, ctx.cfg.x.unwrap_or(PI), ctx.t_final(1.0), ctx.n_paths(1000)))?;
    let batches = rep.batch_means(5);
    art.csv("inverse_moment_samples.csv", "path,inverse_square_density", rep.samples.iter().enumerate().map(|(k, v)| [k as f64, *v]))?;
    let stats = json!({
        "n_particles": rep.n_particles,
        "estimate": rep.estimate,
        "batch_means": batches,
        "zero_density_paths": rep.zero_density_paths,
    });
    art.json("inverse_moment.json", &json!({ "epsilon": rep.epsilon, "x": rep.x, "t": rep.t, "stats": stats }))?;
    let mut s = summary("estimate", rep.estimate.mean, stats);
    if rep.zero_density_paths > 0 || !rep.estimate.mean.is_finite() {
        s.check_failures.push(format!("{} paths with zero density; moment not finite", rep.zero_density_paths));
    }
    Ok(s)
}

fn kernel_spectrum(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps = ctx.cfg.single_epsilon()?;
    let spec = ctx.lib(kernel_eigenvalues(eps, ctx.cfg.j_max))?;
    ctx.lib(spec.write(&art.path("spectrum.csv"), &art.path(&Artifacts::sidecar_name("spectrum.csv"))))?;
    art.adopt_csv("spectrum.csv", Value::Null)?;
    let monotone = spec.lambda.windows(2).all(|w| w[1] <= w[0]);
    let positive = spec.lambda.iter().take_while(|l| **l > 1e-290).count();
    let stats = json!({
        "j_max": spec.j_max,
        "lambda0": spec.lambda[0],
        "lambda1": spec.lambda.get(1),
        "nonincreasing": monotone,
        "representable_modes": positive,
        "trace": dklab::periodic_kernel::eigen_sum(&spec, 0),
    });
    art.json("spectrum.json", &stats)?;
    let mut s = summary("lambda1", spec.lambda.get(1).copied().unwrap_or(0.0), stats);
    if spec.lambda[0] != 1.0 {
        s.check_failures.push(format!("lambda_0 = {} instead of 1", spec.lambda[0]));
    }
    if !monotone {
        s.check_failures.push("eigenvalues are not non-increasing in |j|".into());
    }
    Ok(s)
}

fn spde_run(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps = ctx.cfg.single_epsilon()?;
    let x0 = ctx.initial_state()?;
    let params = ctx.solver_params(eps, &x0)?;
    let mut solver = ctx.lib(Solver::new(params.clone()))?;
    let t = ctx.t_final(1.0);
    let states = if params.sigma == 0.0 {
        ctx.lib(solver.solve_deterministic(&x0, t))?
    } else {
        let mut all = Vec::new();
        ctx.lib(solver.run_path(&x0, t, ctx.cfg.single_seed()?, 0, |x, _| all.push(x.clone())))?;
        all
    };
    let n_steps = states.len() - 1;
    let every = (n_steps / ctx.cfg.snapshots.unwrap_or(10).max(1)).max(1);
    let picked: Vec<SpectralState> =
        states.iter().enumerate().filter(|(k, _)| k % every == 0 || *k == n_steps).map(|(_, s)| s.clone()).collect();
    let n_grid = ctx.output_points(params.m_trunc);
    ctx.lib(spde::write_trajectory(&art.path("trajectory.csv"), &picked, n_grid))?;
    art.adopt_csv("trajectory.csv", json!({ "columns": ["time", "x", "rho", "j"], "n_grid": n_grid }))?;
    let kbt = params.kbt();
    let mut rows = Vec::new();
    for s in &picked {
        rows.push([
            s.time,
            s.rho[0].re,
            solver.min_rho(s),
            spde::w_norm(s),
            spde::weighted_energy(s, kbt),
            spde::w_distance(s, &x0),
        ]);
    }
    art.csv("spde_summary.csv", "time,mass,min_rho,w_norm,energy,w_distance_from_initial", &rows)?;
    let min_rho = states.iter().map(|s| solver.min_rho(s)).fold(f64::INFINITY, f64::min);
    let last = states.last().unwrap();
    let stats = json!({
        "n_particles": params.n_particles,
        "delta": params.delta,
        "steps": n_steps,
        "min_rho": min_rho,
        "final_w_norm": spde::w_norm(last),
        "max_w_distance_from_initial": states.iter().map(|s| spde::w_distance(s, &x0)).fold(0.0, f64::max),
        "mass_initial": x0.rho[0].re,
        "mass_final": last.rho[0].re,
    });
    art.json("spde.json", &json!({ "params": params, "stats": stats }))?;
    Ok(summary("min_rho", min_rho, stats))
}

fn small_noise(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps_list = ctx.cfg.epsilons();
    let x0 = ctx.initial_state()?;
    let q = ctx.cfg.q.unwrap_or(2.0);
    let radii = ctx.cfg.radii.clone().unwrap_or_default();
    let seed = ctx.cfg.single_seed()?;
    let mut reports = Vec::new();
    for &eps in &eps_list {
        let params = ctx.solver_params(eps, &x0)?;
        reports.push(ctx.lib(spde::small_noise_experiment(&params, &x0, ctx.t_final(1.0), ctx.n_paths(200), q, &radii, seed))?);
    }
    art.set_particles(reports.iter().map(|r| r.n_particles as usize).collect());
    art.csv(
        "small_noise.csv",
        "epsilon,N,scale_m,moment,moment_se",
        reports.iter().map(|r| [r.epsilon, r.n_particles, r.scale_m, r.moment.mean, r.moment.se]),
    )?;
    let fit = if reports.len() >= 2 {
        let m2: Vec<f64> = reports.iter().map(|r| r.scale_m * r.scale_m).collect();
        let mo: Vec<f64> = reports.iter().map(|r| r.moment.mean).collect();
        Some(ctx.lib(loglog_fit(&m2, &mo))?)
    } else {
        None
    };
    art.json("small_noise.json", &json!({ "reports": reports, "fit_against_m_squared": fit }))?;
    let slope = fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let mut s = summary("slope", slope, json!({ "slope": slope, "slope_se": fit.map(|f| f.slope_se), "q": q }));
    if !((slope - 1.0).abs() <= 0.3) {
        s.check_failures.push(format!("slope {slope:.3} against M^2 outside 1 +- 0.3"));
    }
    Ok(s)
}

fn positivity(ctx: &Ctx, art: &mut Artifacts) -> Out<Summary> {
    let eps = ctx.cfg.single_epsilon()?;
    let x0 = ctx.initial_state()?;
    let params = ctx.solver_params(eps, &x0)?;
    let rep = ctx.lib(spde::positivity_probability(&params, &x0, ctx.t_final(1.0), ctx.n_paths(500), ctx.cfg.single_seed()?))?;
    art.csv("positivity_min_rho.csv", "path,min_rho", rep.min_rho.iter().enumerate().map(|(k, m)| [k as f64, *m]))?;
    art.json("positivity.json", &rep)?;
    let mut s = summary(
        "fraction",
        rep.fraction,
        json!({
            "n_particles": params.n_particles,
            "delta": rep.threshold,
            "exceedances": rep.exceedances,
            "fraction": rep.fraction,
            "wilson_high": rep.wilson_high,
        }),
    );
    if !(rep.fraction < 0.05 && rep.wilson_high < 0.10) {
        s.check_failures.push(format!(
            "fraction below delta {:.4} (Wilson high {:.4}); limits 0.05 and 0.10",
            rep.fraction, rep.wilson_high
        ));
    }
    Ok(s)
}

/// Particle counts the run will use, for the metadata stamp.
pub fn particle_counts(cfg: &ExperimentConfig) -> Result<Vec<usize>, CliError> {
    if cfg.experiment == Experiment::KernelSpectrum {
        return Ok(Vec::new());
    }
    let theta = cfg.single_theta()?;
    let eps = if cfg.experiment.takes_epsilon_list() { cfg.epsilons() } else { vec![cfg.single_epsilon()?] };
    eps.iter().map(|&e| cfg.particles_for(e, theta)).collect()
}
