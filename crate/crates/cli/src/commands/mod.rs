pub mod eval;
pub mod gradcheck;
pub mod preprocess;
pub mod synth;
pub mod train;

use std::path::Path;

use hyperx::dataset::{load_trials, parse_manifest, Dataset, Manifest, Segment};
use hyperx::signal::PipelineConfig;

use crate::config::git_blob_sha1;
use crate::error::{io_err, CliResult};

/// A dataset directory read into memory.
pub struct LoadedData {
    pub manifest: Manifest,
    pub manifest_sha1: String,
    pub dataset: Dataset,
}

pub fn load_data(dir: &Path) -> CliResult<LoadedData> {
    let path = dir.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    let manifest = parse_manifest(&bytes)?;
    let trials = load_trials(dir, &manifest).collect::<hyperx::Result<Vec<_>>>()?;
    let dataset = Dataset { stage: manifest.stage, trials, splits: manifest.splits.clone() };
    Ok(LoadedData { manifest_sha1: git_blob_sha1(&bytes), manifest, dataset })
}

impl LoadedData {
    pub fn segments(&self, pipeline: &PipelineConfig) -> CliResult<Vec<Segment>> {
        Ok(self.dataset.segments(pipeline)?)
    }
}
