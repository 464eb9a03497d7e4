//! Experiment configs, per-run output directories and file helpers.

use std::fs;
use std::path::{Path, PathBuf};

use greenwave::datasetgen::{load_sample_set, read_csv, DatasetMeta, SampleSet};
use greenwave::gaopt::GaConfig;
use greenwave::microsim::SimConfig;
use greenwave::roadnet::{load_native, RoadNetwork};
use greenwave::surrogates::ModelConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Kind};

/// Optional experiment file (TOML or JSON). Command-line flags override it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub dataset: DatasetParams,
    pub model: Option<ModelConfig>,
    pub train: TrainParams,
    pub ga: GaConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    pub n: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self { n: 1000, seed: 0, workers: 1 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub net: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Parent of the per-run output directories.
    pub runs_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Loads and checks that every referenced path exists.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let cfg: Self = read_structured(path)?;
        for p in [&cfg.paths.net, &cfg.paths.data, &cfg.paths.model].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::new(
                    Kind::Io,
                    format!("config {} references missing path {}", path.display(), p.display()),
                ));
            }
        }
        Ok(cfg)
    }
}

/// Parses a `.toml` file with TOML and anything else as JSON.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed =
        if is_toml { toml::from_str(&text).map_err(CliError::from) } else { serde_json::from_str(&text).map_err(CliError::from) };
    parsed.map_err(|e| e.context(path.display()))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::from(e).context(parent.display()))?;
    }
    fs::write(path, text).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Path and content hash of an input file, recorded in resolved configs.
#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::from(e).context(path.display()))?;
        Ok(Self { path: path.to_path_buf(), sha256: sha256_hex(&bytes) })
    }
}

/// A run's output directory. Named `<command>-<hash>` from the resolved
/// config unless the caller gave an explicit directory.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create<C: Serialize>(
        command: &str,
        resolved: &C,
        explicit: Option<&Path>,
        runs_dir: Option<&Path>,
    ) -> CliResult<Self> {
        let json = serde_json::to_string_pretty(resolved)?;
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let hash = sha256_hex(format!("{command}\n{json}").as_bytes());
                runs_dir.unwrap_or(Path::new("runs")).join(format!("{command}-{}", &hash[..12]))
            }
        };
        fs::create_dir_all(&path).map_err(|e| CliError::from(e).context(path.display()))?;
        write_text(&path.join("config.resolved.json"), &(json + "\n"))?;
        Ok(Self { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.file(name);
        write_text(&p, text)?;
        Ok(p)
    }
}

pub fn load_net(path: &Path) -> CliResult<RoadNetwork> {
    load_native(&read_text(path)?).map_err(|e| CliError::from(e).context(path.display()))
}

/// Sidecar metadata path: `data.csv` -> `data.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

/// Loads a dataset CSV and, when present, its metadata sidecar (which fixes
/// the split). Without metadata the split is derived from `fallback_seed`.
pub fn load_dataset(csv_path: &Path, fallback_seed: u64) -> CliResult<SampleSet> {
    let file = fs::File::open(csv_path).map_err(|e| CliError::from(e).context(csv_path.display()))?;
    let rows = read_csv(file).map_err(|e| CliError::from(e).context(csv_path.display()))?;
    let meta_file = meta_path(csv_path);
    let meta: Option<DatasetMeta> = if meta_file.exists() { Some(read_structured(&meta_file)?) } else { None };
    load_sample_set(rows, meta.as_ref(), fallback_seed).map_err(|e| CliError::from(e).context(csv_path.display()))
}

pub fn pick<T: Clone>(flag: Option<T>, config: Option<&T>, what: &str) -> CliResult<T> {
    flag.or_else(|| config.cloned()).ok_or_else(|| CliError::usage(format!("missing {what} (flag or config path)")))
}
