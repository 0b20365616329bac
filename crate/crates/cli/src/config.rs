//! Run configuration: a JSON file mirroring the training hyper-parameters
//! plus data paths and split fractions. Unknown keys are rejected; flags
//! override file keys; the resolved config is hashed into every manifest.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use wavecorr_core::policy::CorrKind;
use wavecorr_core::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Price CSV consumed by train/backtest.
    pub data: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub corr_kind: CorrKind,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            output_dir: None,
            train_frac: 0.7,
            val_frac: 0.15,
            corr_kind: CorrKind::WaveCorr,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// All referenced paths must exist before any work starts.
    pub fn validate_paths(&self) -> Result<(), String> {
        if let Some(data) = &self.data {
            if !data.exists() {
                return Err(format!("data file {} does not exist", data.display()));
            }
        }
        Ok(())
    }
}

/// FNV-1a over the canonical JSON rendering; stable across reruns.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Deterministic run manifest written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, T: Serialize> {
    pub tool_version: &'a str,
    pub command: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a T,
}

pub fn write_manifest<T: Serialize>(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &T,
) -> std::io::Result<()> {
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config_hash: config_hash(config),
        config,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), json)
}
