//! On-disk layout shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use stream_etm::pipeline::SimulationConfig;
use stream_etm::{Error, Result};

pub const DATA_MANIFEST: &str = "data.json";
pub const RUN_MANIFEST: &str = "manifest.json";

/// Inputs produced by `preprocess` or `simulate`. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub vocab: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub batches: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessSettings {
    pub corpus: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub min_count: usize,
    pub max_df: f64,
    pub vocab_cap: usize,
    pub docs_per_step: usize,
    pub documents: usize,
    pub dropped_documents: usize,
    pub vocabulary_size: usize,
    pub vocab_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationInfo {
    pub config: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    /// Schedule row behind each batch.
    pub schedule_rows: Vec<usize>,
    pub change_steps: Vec<usize>,
}

impl DataManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let path = if path.is_dir() { path.join(DATA_MANIFEST) } else { path.to_path_buf() };
        let manifest: Self = read_json(&path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }
}

pub fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), msg: format!("{}: {e}", path.display()) })
}

pub fn step_dir(out: &Path, step: usize) -> PathBuf {
    out.join(format!("step_{step}"))
}

pub fn batch_file(step: usize) -> PathBuf {
    PathBuf::from("batches").join(format!("step_{step}.jsonl"))
}
