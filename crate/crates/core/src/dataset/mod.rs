//! Dataset container, synthetic generator, splitting and augmentation.

mod augment;
mod format;
mod split;
mod synth;
mod trial;

pub use augment::{augment, AugmentConfig};
pub use format::{
    decode_payload, encode_trial, load_dataset, load_trials, modality_table, parse_manifest, read_manifest,
    save_dataset, DatasetWriter, Manifest, ModalityEntry, TrialEntry, FORMAT_NAME, FORMAT_VERSION,
};
pub use split::{stratified_indices, stratified_split, SplitAssignment, SplitUnit};
pub use synth::{
    generate_synthetic, generate_trial, phase_label, phase_oracle_accuracy, synthetic_segments, SyntheticSpec,
};
pub use trial::{collate, Segment, Signals, Stage, Target, Trial};

use crate::error::Result;
use crate::signal::{preprocess_trial, segment, PipelineConfig};

/// Trials of one processing stage with an optional recorded split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub stage: Stage,
    pub trials: Vec<Trial>,
    pub splits: Option<SplitAssignment>,
}

impl Dataset {
    /// Preprocesses (if raw) and segments every trial, in trial order.
    pub fn segments(&self, pipeline: &PipelineConfig) -> Result<Vec<Segment>> {
        let mut out = Vec::new();
        for t in &self.trials {
            let pre = match self.stage {
                Stage::Raw => preprocess_trial(t, pipeline)?,
                Stage::Preprocessed => t.clone(),
            };
            out.extend(segment(&pre, pipeline.window_s, pipeline.hop_s)?);
        }
        Ok(out)
    }
}
