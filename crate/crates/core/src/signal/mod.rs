//! Biosignal preprocessing.

pub mod filter;
pub mod pipeline;

pub use filter::{filtfilt, frequency_response, FilterSpec, Section};
pub use pipeline::{
    apply_filter, average_reference, baseline_correct_gsr, downsample_by2, merge_eyes, preprocess_trial, segment,
    PipelineConfig, EYE_MISSING,
};
