use std::fs;
use std::path::{Path, PathBuf};

use prefopt::analysis::{CurveKind, COLLAPSE_THRESHOLD};
use prefopt::data::{NearDuplicateConfig, PairwiseConfig};
use prefopt::{Arch, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "PREFOPT_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub seed: u64,
    pub generator: Generator,
    #[serde(default = "one")]
    pub pairing_ratio: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    Pairwise(PairwiseConfig),
    NearDuplicate(NearDuplicateConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    #[serde(default)]
    pub embed_dim: usize,
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Initialization seed; the training seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_init_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommand {
    pub dataset: PathBuf,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Exit with status 2 when mean per-token log π(y_l) drops below this value.
    #[serde(default)]
    pub collapse_guard: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveCommand {
    pub pi_ref: f64,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<CurveKind>,
}

fn default_grid() -> usize {
    99
}

fn default_kinds() -> Vec<CurveKind> {
    vec![CurveKind::Nll, CurveKind::Bnf]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Dataset,
    Greedy { max_len: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeCommand {
    pub policy: PathBuf,
    pub reference: PathBuf,
    pub dataset: PathBuf,
    /// Greedy decoding up to the longest dataset response when absent.
    #[serde(default)]
    pub source: Option<SourceSpec>,
    #[serde(default)]
    pub metrics: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub collapse_threshold: f64,
}

fn default_threshold() -> f64 {
    COLLAPSE_THRESHOLD
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinMapCommand {
    /// `report.json` whose token shifts define the decile edges.
    pub anchor: PathBuf,
    pub other: PathBuf,
}

/// Reads a config file, checks its `command` field and parses the rest strictly.
pub fn load<C: DeserializeOwned>(path: &Path, command: &str) -> Result<C, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::Usage("config must be a JSON object".into()))?;
    match obj.remove("command") {
        Some(serde_json::Value::String(c)) if c == command => {}
        Some(other) => {
            return Err(CliError::Usage(format!("config command {other} does not match subcommand \"{command}\"")))
        }
        None => return Err(CliError::Usage("config is missing the \"command\" field".into())),
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Usage(format!("config field `{path}`: {}", e.into_inner()))
    })
}

/// Config with the `command` field restored, as written next to the outputs.
pub fn resolved<C: Serialize>(command: &str, cfg: &C) -> Result<String, CliError> {
    let mut value = serde_json::to_value(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(obj) = value.as_object_mut() {
        obj.insert("command".into(), serde_json::Value::String(command.into()));
    }
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Seed precedence: flag, then environment, then config.
pub fn seed_override(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned 64-bit integer"))),
        Err(_) => Ok(None),
    }
}

pub fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    fs::canonicalize(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}
