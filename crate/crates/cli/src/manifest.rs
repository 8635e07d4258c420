//! Artifact bookkeeping: every file gets run metadata and lands in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub dklab: String,
    pub dklab_cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Self { dklab: dklab::VERSION.to_string(), dklab_cli: env!("CARGO_PKG_VERSION").to_string() }
    }
}

/// Metadata stamped on every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub theta: Option<f64>,
    pub epsilon: Vec<f64>,
    /// Particle counts actually used, one per epsilon.
    #[serde(rename = "N")]
    pub n_particles: Vec<usize>,
    pub n_from_scaling: bool,
    pub versions: Versions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub config: ExperimentConfig,
    pub files: Vec<FileEntry>,
}

/// sha256 of the config with `output_dir` blanked, so moving a run does not change it.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    let text = serde_json::to_string(&c).expect("config serialises");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn file_sha256(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = fs::read(path)?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

pub struct Artifacts {
    dir: PathBuf,
    meta: Meta,
    files: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, meta: Meta) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), meta, files: Vec::new() })
    }

    pub fn set_particles(&mut self, n: Vec<usize>) {
        self.meta.n_particles = n;
    }

    /// Path for a new file; names are plain file names inside the output directory.
    pub fn path(&self, name: &str) -> PathBuf {
        debug_assert!(!name.contains('/') && !name.contains(".."));
        self.dir.join(name)
    }

    fn lib(e: dklab::DkError) -> CliError {
        CliError::Io(e.to_string())
    }

    /// `{meta, report}` as pretty JSON.
    pub fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<(), CliError> {
        let value = serde_json::json!({ "meta": self.meta, "report": report });
        dklab::io::write_json(&self.path(name), &value).map_err(Self::lib)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// A CSV plus its `<stem>.meta.json` sidecar.
    pub fn csv<I, R>(&mut self, name: &str, header: &str, rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        dklab::io::write_csv(&self.path(name), header, rows).map_err(Self::lib)?;
        let _ = fs::remove_file(self.path(&Self::sidecar_name(name)));
        self.adopt_csv(name, Value::Null)
    }

    pub fn sidecar_name(csv: &str) -> String {
        format!("{}.meta.json", csv.trim_end_matches(".csv"))
    }

    /// Register a CSV written by the library. Its sidecar may already hold
    /// library metadata; the run metadata is merged in under `meta`.
    pub fn adopt_csv(&mut self, name: &str, extra: Value) -> Result<(), CliError> {
        let side = Self::sidecar_name(name);
        let side_path = self.path(&side);
        let mut value = match fs::read_to_string(&side_path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| CliError::Io(e.to_string()))?,
            Err(_) => Value::Object(Default::default()),
        };
        let obj = value.as_object_mut().ok_or_else(|| CliError::Io(format!("{side} is not an object")))?;
        obj.insert("meta".into(), serde_json::to_value(&self.meta).expect("meta serialises"));
        if let Value::Object(m) = extra {
            obj.extend(m);
        }
        dklab::io::write_json(&side_path, &value).map_err(Self::lib)?;
        self.files.push(name.to_string());
        self.files.push(side);
        Ok(())
    }

    pub fn finish(self, cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
        let mut files = Vec::new();
        for name in &self.files {
            let (sha256, bytes) = file_sha256(&self.dir.join(name))?;
            files.push(FileEntry { path: name.clone(), sha256, bytes });
        }
        let manifest = Manifest {
            experiment: self.meta.experiment.clone(),
            config_hash: self.meta.config_hash.clone(),
            seed: self.meta.seed,
            versions: self.meta.versions.clone(),
            config: cfg.clone(),
            files,
        };
        dklab::io::write_json(&self.dir.join(MANIFEST), &manifest).map_err(Self::lib)?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
