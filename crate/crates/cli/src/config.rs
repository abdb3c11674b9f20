use std::path::Path;

use hyperx::dataset::SyntheticSpec;
use hyperx::model::{EncoderVariant, ModelConfig};
use hyperx::signal::PipelineConfig;
use hyperx::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::error::{io_err, CliError, CliResult};

/// Version of every JSON report and `run.json` written by the CLI.
pub const SCHEMA_VERSION: u32 = 1;

/// Everything a run can be configured with. A config file holds any subset;
/// missing fields take their defaults and command-line flags override both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SyntheticSpec,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed of the stratified split (kept apart from the training seeds so
    /// every seed and variant sees the same split).
    pub split_seed: u64,
    /// Training seeds; `train.seed` is used when empty.
    pub seeds: Vec<u64>,
    /// Variants to train; `model.variant` is used when empty.
    pub variants: Vec<EncoderVariant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: SyntheticSpec::default(),
            pipeline: PipelineConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split_seed: 1,
            seeds: Vec::new(),
            variants: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid with `path` if given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() { vec![self.train.seed] } else { self.seeds.clone() }
    }

    pub fn variant_list(&self) -> Vec<EncoderVariant> {
        if self.variants.is_empty() { vec![self.model.variant] } else { self.variants.clone() }
    }
}

/// Git's blob hash: SHA-1 over `"blob <len>\0"` followed by the content.
pub fn git_blob_sha1(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(CliError::Usage(format!("{} exists and is not empty (use --force to overwrite)", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_sha1(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(git_blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}, "model": {"variant": "conv"}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.patience, 10);
        assert_eq!(cfg.model.variant, EncoderVariant::Conv);
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
    }
}
