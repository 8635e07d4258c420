//! `dklab`: run experiments from JSON configs and write CSV/JSON artifacts.

mod config;
mod error;
mod experiments;
mod manifest;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{BigN, ExperimentConfig};
use error::CliError;
use experiments::Summary;
use manifest::{config_hash, Artifacts, Manifest, Meta, Versions};

#[derive(Parser)]
#[command(name = "dklab", version, about = "Regularised Dean-Kawasaki experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        /// Exit with status 4 when the experiment's acceptance thresholds fail.
        #[arg(long)]
        check: bool,
    },
    /// Run the cartesian product of the theta, epsilon and seed lists.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        check: bool,
    },
    /// Print the JSON schema for configs.
    Schema,
    /// Print library and CLI versions.
    Version,
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Re-run a manifest's config and compare content hashes.
    Verify { manifest: PathBuf },
}

pub(crate) fn run_single(cfg: &ExperimentConfig) -> Result<(Manifest, Summary), CliError> {
    let theta = cfg.single_theta()?;
    let epsilon = if cfg.experiment.takes_epsilon_list() { cfg.epsilons() } else { vec![cfg.single_epsilon()?] };
    let meta = Meta {
        experiment: cfg.experiment.name().to_string(),
        config_hash: config_hash(cfg),
        seed: cfg.single_seed()?,
        theta,
        epsilon,
        n_particles: experiments::particle_counts(cfg)?,
        n_from_scaling: !matches!(cfg.big_n, Some(BigN::Count(_))),
        versions: Versions::current(),
    };
    let mut art = Artifacts::new(&cfg.output_dir, meta)?;
    let summary = experiments::run(cfg, &mut art)?;
    art.json("summary.json", &summary)?;
    let manifest = art.finish(cfg)?;
    Ok((manifest, summary))
}

fn set_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Config(format!("DK_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))
}

fn report(summary: &Summary, check: bool) -> Result<(), CliError> {
    println!("{} = {}", summary.primary_name, summary.primary);
    for f in &summary.check_failures {
        eprintln!("threshold not met: {f}");
    }
    if check && !summary.check_failures.is_empty() {
        return Err(CliError::Check(summary.check_failures.join("; ")));
    }
    Ok(())
}

fn verify(path: &Path) -> Result<(), CliError> {
    let old = manifest::read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scratch = base.join(".verify");
    let mut cfg = old.config.clone();
    cfg.output_dir = scratch.clone();
    let result = run_single(&cfg);
    let _ = std::fs::remove_dir_all(&scratch);
    let (new, _) = result?;
    let mut bad = Vec::new();
    for f in &old.files {
        match new.files.iter().find(|g| g.path == f.path) {
            Some(g) if g.sha256 == f.sha256 => {}
            Some(_) => bad.push(format!("{} differs", f.path)),
            None => bad.push(format!("{} not produced", f.path)),
        }
    }
    if new.config_hash != old.config_hash {
        bad.push("config hash differs".into());
    }
    if !bad.is_empty() {
        return Err(CliError::Numerical { module: "cli", message: format!("not reproduced: {}", bad.join(", ")) });
    }
    println!("{} files reproduced", old.files.len());
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Schema => {
            print!("{}", config::SCHEMA);
            Ok(())
        }
        Command::Version => {
            let v = Versions::current();
            println!("dklab {}\ndklab-cli {}", v.dklab, v.dklab_cli);
            Ok(())
        }
        Command::Run { config, check } => {
            set_threads()?;
            let cfg = ExperimentConfig::from_file(&config)?;
            let (_, summary) = run_single(&cfg)?;
            println!("wrote {}", cfg.output_dir.join(manifest::MANIFEST).display());
            report(&summary, check)
        }
        Command::Sweep { config, check } => {
            set_threads()?;
            let cfg = ExperimentConfig::from_file(&config)?;
            let mut agg = sweep::sweep(&cfg, check)?;
            sweep::write(&agg, &cfg.output_dir)?;
            println!(
                "{} cells, {} failed; wrote {}",
                agg.n_cells,
                agg.n_failed,
                cfg.output_dir.join(sweep::AGGREGATE).display()
            );
            let mut worst: Option<CliError> = None;
            for c in agg.cells.iter_mut() {
                if let Some(e) = c.exit.take() {
                    eprintln!("cell {}: {e}", c.label);
                    let replace = match (&worst, &e) {
                        (None, _) => true,
                        (Some(CliError::Check(_)), CliError::Check(_)) => false,
                        (Some(CliError::Check(_)), _) => true,
                        _ => false,
                    };
                    if replace {
                        worst = Some(e);
                    }
                }
            }
            match worst {
                None => Ok(()),
                Some(CliError::Check(m)) => Err(CliError::Check(m)),
                Some(e) if agg.n_failed > 0 => Err(CliError::Numerical {
                    module: "cli",
                    message: format!("{} of {} cells failed; first: {e}", agg.n_failed, agg.n_cells),
                }),
                Some(e) => Err(e),
            }
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            println!("{}: {} ok, {} cell(s)", config.display(), cfg.experiment.name(), cfg.cells().len());
            Ok(())
        }
        Command::Verify { manifest } => verify(&manifest),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dklab: {e}");
            e.exit_code()
        }
    }
}
