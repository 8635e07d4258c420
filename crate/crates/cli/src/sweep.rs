//! Cartesian sweeps over theta x epsilon x seed with one aggregate report.

use std::collections::BTreeMap;
use std::path::Path;

use dklab::stats::{loglog_fit, mann_kendall, LinearFit, MannKendall};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Cell, Experiment, ExperimentConfig, OneOrMany};
use crate::error::CliError;
use crate::experiments::Summary;
use crate::manifest::{config_hash, Versions};
use crate::run_single;

pub const AGGREGATE: &str = "sweep.json";

#[derive(Debug, Serialize)]
pub struct CellResult {
    pub label: String,
    pub theta: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub dir: String,
    pub manifest_sha256: Option<String>,
    pub summary: Option<Summary>,
    pub error: Option<String>,
    #[serde(skip)]
    pub exit: Option<CliError>,
}

#[derive(Debug, Serialize)]
pub struct SlopeFit {
    pub theta: Option<f64>,
    pub seed: u64,
    pub epsilons: Vec<f64>,
    pub fit: LinearFit,
}

#[derive(Debug, Serialize)]
pub struct Envelope {
    pub theta: Option<f64>,
    pub epsilon: Option<f64>,
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Serialize)]
pub struct TrendTest {
    pub theta: Option<f64>,
    /// Ordering variable is 1/epsilon.
    pub test: MannKendall,
}

#[derive(Debug, Serialize)]
pub struct Aggregate {
    pub experiment: String,
    pub config_hash: String,
    pub versions: Versions,
    pub primary: Option<String>,
    pub n_cells: usize,
    pub n_failed: usize,
    pub cells: Vec<CellResult>,
    /// log-log slope of the primary statistic against epsilon, per (theta, seed).
    pub fits: Vec<SlopeFit>,
    /// Spread of the primary statistic over seeds, per (theta, epsilon).
    pub envelopes: Vec<Envelope>,
    pub trends: Vec<TrendTest>,
    /// Seeds whose roughness strictly decreases along increasing theta.
    pub roughness_decreasing: Option<(usize, usize)>,
}

fn label(cell: &Cell, with_eps: bool) -> String {
    let mut parts = Vec::new();
    if let Some(t) = cell.theta {
        parts.push(format!("theta{t}"));
    }
    if with_eps {
        parts.push(format!("eps{}", cell.epsilon));
    }
    parts.push(format!("seed{}", cell.seed));
    parts.join("_")
}

fn plan(cfg: &ExperimentConfig) -> Vec<(Cell, Option<f64>, String, ExperimentConfig)> {
    let list = cfg.experiment.takes_epsilon_list();
    let mut cells = cfg.cells();
    if list {
        let mut seen = Vec::new();
        cells.retain(|c| {
            let key = (c.theta.map(f64::to_bits), c.seed);
            !seen.contains(&key) && {
                seen.push(key);
                true
            }
        });
    }
    cells
        .into_iter()
        .map(|c| {
            let name = label(&c, !list && cfg.epsilon.is_some());
            let dir = cfg.output_dir.join("cells").join(&name);
            let mut sub = cfg.for_cell(c, dir);
            if list {
                sub.epsilon = cfg.epsilon.clone().map(|e| OneOrMany::Many(e.values()));
            }
            (c, (!list).then_some(c.epsilon), name, sub)
        })
        .collect()
}

pub fn sweep(cfg: &ExperimentConfig, check: bool) -> Result<Aggregate, CliError> {
    let plan = plan(cfg);
    if plan.is_empty() {
        return Err(CliError::Config("sweep has no cells".into()));
    }
    let cells: Vec<CellResult> = plan
        .par_iter()
        .map(|(c, eps, name, sub)| {
            let dir = format!("cells/{name}");
            let mut out = CellResult {
                label: name.clone(),
                theta: c.theta,
                epsilon: *eps,
                seed: c.seed,
                dir,
                manifest_sha256: None,
                summary: None,
                error: None,
                exit: None,
            };
            match run_single(sub) {
                Ok((_, summary)) => {
                    let m = sub.output_dir.join(crate::manifest::MANIFEST);
                    out.manifest_sha256 = crate::manifest::file_sha256(&m).ok().map(|(h, _)| h);
                    if check && !summary.check_failures.is_empty() {
                        out.exit = Some(CliError::Check(format!("{name}: {}", summary.check_failures.join("; "))));
                    }
                    out.summary = Some(summary);
                }
                Err(e) => {
                    out.error = Some(e.to_string());
                    out.exit = Some(e);
                }
            }
            out
        })
        .collect();
    Ok(aggregate(cfg, cells))
}

fn aggregate(cfg: &ExperimentConfig, cells: Vec<CellResult>) -> Aggregate {
    let ok: Vec<&CellResult> = cells.iter().filter(|c| c.summary.is_some()).collect();
    let primary = |c: &CellResult| c.summary.as_ref().map(|s| s.primary).unwrap_or(f64::NAN);
    let key = |t: Option<f64>| t.map(f64::to_bits);

    let mut by_theta_seed: BTreeMap<(Option<u64>, u64), Vec<&CellResult>> = BTreeMap::new();
    let mut by_theta_eps: BTreeMap<(Option<u64>, Option<u64>), Vec<&CellResult>> = BTreeMap::new();
    let mut by_theta: BTreeMap<Option<u64>, Vec<&CellResult>> = BTreeMap::new();
    for c in &ok {
        by_theta_seed.entry((key(c.theta), c.seed)).or_default().push(c);
        by_theta_eps.entry((key(c.theta), key(c.epsilon))).or_default().push(c);
        by_theta.entry(key(c.theta)).or_default().push(c);
    }

    let mut fits = Vec::new();
    for group in by_theta_seed.values() {
        let eps: Vec<f64> = group.iter().filter_map(|c| c.epsilon).collect();
        let ys: Vec<f64> = group.iter().map(|c| primary(c)).collect();
        if eps.len() == group.len() && eps.len() >= 2 && ys.iter().all(|y| *y > 0.0) {
            if let Ok(fit) = loglog_fit(&eps, &ys) {
                fits.push(SlopeFit { theta: group[0].theta, seed: group[0].seed, epsilons: eps, fit });
            }
        }
    }

    let envelopes = by_theta_eps
        .values()
        .map(|g| {
            let ys: Vec<f64> = g.iter().map(|c| primary(c)).collect();
            Envelope {
                theta: g[0].theta,
                epsilon: g[0].epsilon,
                n: ys.len(),
                min: ys.iter().copied().fold(f64::INFINITY, f64::min),
                max: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean: ys.iter().sum::<f64>() / ys.len() as f64,
            }
        })
        .collect();

    let mut trends = Vec::new();
    if cfg.experiment == Experiment::InverseMoment {
        for g in by_theta.values() {
            let order: Vec<f64> = g.iter().filter_map(|c| c.epsilon.map(|e| 1.0 / e)).collect();
            let ys: Vec<f64> = g.iter().map(|c| primary(c)).collect();
            if let Ok(test) = mann_kendall(&order, &ys) {
                trends.push(TrendTest { theta: g[0].theta, test });
            }
        }
    }

    let roughness_decreasing = (cfg.experiment == Experiment::Fields).then(|| {
        let mut per_seed: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for c in &ok {
            if let Some(t) = c.theta {
                per_seed.entry(c.seed).or_default().push((t, primary(c)));
            }
        }
        let mut good = 0;
        for v in per_seed.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            if v.len() >= 2 && v.windows(2).all(|w| w[1].1 < w[0].1) {
                good += 1;
            }
        }
        (good, per_seed.len())
    });

    Aggregate {
        experiment: cfg.experiment.name().to_string(),
        config_hash: config_hash(cfg),
        versions: Versions::current(),
        primary: ok.first().and_then(|c| c.summary.as_ref()).map(|s| s.primary_name.to_string()),
        n_cells: cells.len(),
        n_failed: cells.len() - ok.len(),
        fits,
        envelopes,
        trends,
        roughness_decreasing,
        cells,
    }
}

pub fn write(agg: &Aggregate, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    dklab::io::write_json(&dir.join(AGGREGATE), agg).map_err(|e| CliError::Io(e.to_string()))
}
