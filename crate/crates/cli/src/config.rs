use std::path::{Path, PathBuf};

use dklab::fields::KernelKind;
use dklab::gaussian::BivariateGaussian;
use dklab::noise::Integrator;
use dklab::particles::Potential;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Particles,
    Fields,
    Covariance,
    VarianceScaling,
    Tightness,
    InverseMoment,
    KernelSpectrum,
    Spde,
    SmallNoise,
    Positivity,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Particles => "particles",
            Experiment::Fields => "fields",
            Experiment::Covariance => "covariance",
            Experiment::VarianceScaling => "variance-scaling",
            Experiment::Tightness => "tightness",
            Experiment::InverseMoment => "inverse-moment",
            Experiment::KernelSpectrum => "kernel-spectrum",
            Experiment::Spde => "spde",
            Experiment::SmallNoise => "small-noise",
            Experiment::Positivity => "positivity",
        }
    }

    /// Library module that does the numerical work, for error messages.
    pub fn module(self) -> &'static str {
        match self {
            Experiment::Particles => "particles",
            Experiment::Fields => "fields",
            Experiment::Covariance | Experiment::VarianceScaling | Experiment::InverseMoment => "noise",
            Experiment::Tightness => "noise (tightness)",
            Experiment::KernelSpectrum => "periodic_kernel",
            Experiment::Spde | Experiment::SmallNoise | Experiment::Positivity => "spde",
        }
    }

    /// Experiments whose single run spans a list of epsilons.
    pub fn takes_epsilon_list(self) -> bool {
        matches!(self, Experiment::VarianceScaling | Experiment::SmallNoise)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    pub fn single(&self) -> Option<T> {
        match self {
            OneOrMany::One(v) => Some(v.clone()),
            OneOrMany::Many(v) if v.len() == 1 => Some(v[0].clone()),
            OneOrMany::Many(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingTag {
    #[serde(rename = "from-scaling")]
    FromScaling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BigN {
    Count(u64),
    Scaling(ScalingTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    Line { x_min: f64, x_max: f64, n_cells: usize },
    Torus { n_cells: usize },
}

/// f(x) = mean + sum_m cos[m-1] cos(m x) + sin[m-1] sin(m x).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierInit {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl FourierInit {
    pub fn eval(&self, x: f64) -> f64 {
        let mut v = self.mean;
        for (m, c) in self.cos.iter().enumerate() {
            v += c * ((m + 1) as f64 * x).cos();
        }
        for (m, s) in self.sin.iter().enumerate() {
            v += s * ((m + 1) as f64 * x).sin();
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<OneOrMany<f64>>,
    /// Absent: derived from a fixed N and theta as eps = N^(-1/theta).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_n: Option<BigN>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default = "default_potential")]
    pub potential: Potential,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    pub seed: OneOrMany<u64>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<BivariateGaussian>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<Integrator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    /// Pair points as offsets from `x` in units of epsilon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_offsets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_trunc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<FourierInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j0: Option<FourierInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<usize>,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    std::f64::consts::SQRT_2
}

fn default_potential() -> Potential {
    Potential::Zero
}

/// One fully scalar point of a configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub theta: Option<f64>,
    pub epsilon: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate().map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(locate(text, msg)),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: String| Err(CliError::Config(format!("field `{field}`: {why}")));
        match &self.epsilon {
            Some(e) => {
                let eps = e.values();
                if eps.is_empty() {
                    return bad("epsilon", "empty sweep list".into());
                }
                if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
                    return bad("epsilon", format!("must be positive, got {e}"));
                }
            }
            None => {
                if !matches!(self.big_n, Some(BigN::Count(_))) || self.theta.is_none() {
                    return bad("epsilon", "required unless big_n is a count and theta is given".into());
                }
                if self.experiment.takes_epsilon_list() {
                    return bad("epsilon", "this experiment needs an explicit list".into());
                }
            }
        }
        if self.seed.values().is_empty() {
            return bad("seed", "empty sweep list".into());
        }
        if let Some(t) = &self.theta {
            let v = t.values();
            if v.is_empty() {
                return bad("theta", "empty sweep list".into());
            }
            if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                return bad("theta", format!("must be finite, got {x}"));
            }
        }
        match self.big_n {
            Some(BigN::Count(0)) => return bad("big_n", "must be at least 1".into()),
            Some(BigN::Scaling(_)) | None if self.theta.is_none() && self.needs_particles() => {
                return bad("theta", "required when big_n is \"from-scaling\" or absent".into())
            }
            _ => {}
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", format!("must be positive, got {}", self.gamma));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", format!("must be non-negative, got {}", self.sigma));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad("delta", format!("must be positive, got {d}"));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad("dt", format!("must be positive, got {dt}"));
            }
        }
        if let Some(t) = self.t_final {
            if !(t >= 0.0 && t.is_finite()) {
                return bad("T", format!("must be non-negative, got {t}"));
            }
        }
        if self.n_paths == Some(0) {
            return bad("n_paths", "must be at least 1".into());
        }
        if let Some(times) = &self.times {
            if times.len() < 2 || times.windows(2).any(|w| w[0] >= w[1]) || times[0] < 0.0 {
                return bad("times", "need at least two increasing non-negative times".into());
            }
        }
        if let Some(Err(e)) = self.grid.map(|g| g.build()) {
            return bad("grid", e.to_string());
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir", "must not be empty".into());
        }
        self.potential.validate().map_err(|e| CliError::Config(format!("field `potential`: {e}")))?;
        if let Some(init) = &self.init {
            init.validate().map_err(|e| CliError::Config(format!("field `init`: {e}")))?;
        }
        Ok(())
    }

    fn needs_particles(&self) -> bool {
        !matches!(self.experiment, Experiment::KernelSpectrum)
    }

    /// Cartesian product theta x epsilon x seed.
    pub fn cells(&self) -> Vec<Cell> {
        let thetas: Vec<Option<f64>> = match &self.theta {
            Some(t) => t.values().into_iter().map(Some).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for theta in &thetas {
            let eps = match (&self.epsilon, self.big_n, theta) {
                (Some(e), _, _) => e.values(),
                (None, Some(BigN::Count(n)), Some(th)) => vec![(n as f64).powf(-1.0 / th)],
                _ => Vec::new(),
            };
            for &epsilon in &eps {
                for &seed in &self.seed.values() {
                    out.push(Cell { theta: *theta, epsilon, seed });
                }
            }
        }
        out
    }

    /// The same configuration restricted to one cell.
    pub fn for_cell(&self, cell: Cell, output_dir: PathBuf) -> Self {
        Self {
            theta: cell.theta.map(OneOrMany::One),
            epsilon: Some(OneOrMany::One(cell.epsilon)),
            seed: OneOrMany::One(cell.seed),
            output_dir,
            ..self.clone()
        }
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.epsilon.as_ref().map(|e| e.values()).unwrap_or_default()
    }

    pub fn particles_for(&self, eps: f64, theta: Option<f64>) -> Result<usize, CliError> {
        match (self.big_n, theta) {
            (Some(BigN::Count(n)), _) => Ok(n as usize),
            (_, Some(th)) => Ok(dklab::noise::particles_from_scaling(eps, th)),
            (_, None) => Err(CliError::Config("field `theta`: required to derive N from the scaling".into())),
        }
    }

    pub fn single_theta(&self) -> Result<Option<f64>, CliError> {
        match &self.theta {
            None => Ok(None),
            Some(t) => t
                .single()
                .map(Some)
                .ok_or_else(|| CliError::Config("field `theta`: a list needs `sweep`".into())),
        }
    }

    pub fn single_seed(&self) -> Result<u64, CliError> {
        self.seed.single().ok_or_else(|| CliError::Config("field `seed`: a list needs `sweep`".into()))
    }

    pub fn single_epsilon(&self) -> Result<f64, CliError> {
        let cells = self.cells();
        let first = cells.first().map(|c| c.epsilon);
        first
            .filter(|_| cells.iter().all(|c| Some(c.epsilon) == first))
            .ok_or_else(|| CliError::Config("field `epsilon`: a list needs `sweep` for this experiment".into()))
    }
}

impl GridSpec {
    pub fn build(self) -> dklab::Result<dklab::fields::Grid1D> {
        match self {
            GridSpec::Line { x_min, x_max, n_cells } => dklab::fields::Grid1D::line(x_min, x_max, n_cells),
            GridSpec::Torus { n_cells } => dklab::fields::Grid1D::torus(n_cells),
        }
    }
}

/// Append the line of the offending key to a "field `name`: ..." message.
fn locate(text: &str, msg: String) -> String {
    let field = msg.strip_prefix("field `").and_then(|r| r.split('`').next());
    let Some(field) = field else {
        return msg;
    };
    let key = format!("\"{field}\"");
    match text.lines().position(|l| l.contains(&key)) {
        Some(k) => format!("{msg} at line {}", k + 1),
        None => msg,
    }
}
