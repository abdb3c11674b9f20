use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Modality, SegmentBatch};
use crate::tensor::Tensor;

/// Processing stage of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Native rates: EEG/ECG/GSR at 256 Hz, 8 eye channels at 60 Hz, with
    /// pre-trial context.
    Raw,
    /// Output of the preprocessing pipeline: 128 Hz, 4 merged eye channels,
    /// trial portion only.
    Preprocessed,
}

impl Stage {
    pub fn channels(self, m: Modality) -> usize {
        match (m, self) {
            (Modality::Eeg, _) => 10,
            (Modality::Ecg, _) => 3,
            (Modality::Gsr, _) => 1,
            (Modality::Eye, Stage::Raw) => 8,
            (Modality::Eye, Stage::Preprocessed) => 4,
        }
    }

    pub fn rate_hz(self, m: Modality) -> f64 {
        match (m, self) {
            (Modality::Eye, _) => 60.0,
            (_, Stage::Raw) => 256.0,
            (_, Stage::Preprocessed) => 128.0,
        }
    }
}

/// One `[channels, samples]` array per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Signals {
    pub eeg: Tensor,
    pub ecg: Tensor,
    pub gsr: Tensor,
    pub eye: Tensor,
}

impl Signals {
    pub fn get(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Eeg => &self.eeg,
            Modality::Ecg => &self.ecg,
            Modality::Gsr => &self.gsr,
            Modality::Eye => &self.eye,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut Tensor {
        match m {
            Modality::Eeg => &mut self.eeg,
            Modality::Ecg => &mut self.ecg,
            Modality::Gsr => &mut self.gsr,
            Modality::Eye => &mut self.eye,
        }
    }

    /// Samples per channel of modality `m`.
    pub fn len(&self, m: Modality) -> usize {
        self.get(m).shape()[1]
    }
}

/// One labelled recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub id: String,
    pub subject: u32,
    pub arousal: u8,
    pub valence: u8,
    /// Context recorded before stimulus onset (0 once preprocessed).
    pub pre_trial_ms: u32,
    pub signals: Signals,
}

impl Trial {
    /// Checks channel counts, rank and label range for `stage`.
    pub fn validate(&self, stage: Stage) -> Result<()> {
        for label in [self.arousal, self.valence] {
            if label > 2 {
                return Err(Error::Integrity {
                    trial: self.id.clone(),
                    detail: format!("label {label} outside 0..=2"),
                });
            }
        }
        for m in Modality::ALL {
            let t = self.signals.get(m);
            let want = stage.channels(m);
            if t.rank() != 2 || t.shape()[0] != want {
                return Err(Error::Integrity {
                    trial: self.id.clone(),
                    detail: format!("{} has shape {:?}, expected [{want}, samples]", m.name(), t.shape()),
                });
            }
        }
        Ok(())
    }
}

/// Which label a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Arousal,
    Valence,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Arousal => "arousal",
            Target::Valence => "valence",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arousal" => Ok(Target::Arousal),
            "valence" => Ok(Target::Valence),
            _ => Err(Error::Config(format!("unknown target {s:?} (expected arousal or valence)"))),
        }
    }
}

/// A fixed-length window cut from a preprocessed trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub trial_id: String,
    /// Position of this window within its trial.
    pub index: usize,
    pub subject: u32,
    pub arousal: u8,
    pub valence: u8,
    pub signals: Signals,
}

impl Segment {
    pub fn label(&self, target: Target) -> usize {
        match target {
            Target::Arousal => self.arousal as usize,
            Target::Valence => self.valence as usize,
        }
    }

    /// Stable identifier used by split assignments.
    pub fn key(&self) -> String {
        format!("{}#{}", self.trial_id, self.index)
    }
}

/// Stacks segments into a model batch.
pub fn collate<'a>(segments: impl IntoIterator<Item = &'a Segment>) -> Result<SegmentBatch> {
    let segs: Vec<&Segment> = segments.into_iter().collect();
    let first = segs
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot collate an empty batch".into()))?;
    let stack = |m: Modality| -> Result<Tensor> {
        let shape = first.signals.get(m).shape().to_vec();
        let mut data = Vec::with_capacity(segs.len() * shape.iter().product::<usize>());
        for s in &segs {
            let t = s.signals.get(m);
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("collate", &shape, t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let mut full = vec![segs.len()];
        full.extend_from_slice(&shape);
        Tensor::new(&full, data)
    };
    Ok(SegmentBatch {
        eeg: stack(Modality::Eeg)?,
        ecg: stack(Modality::Ecg)?,
        gsr: stack(Modality::Gsr)?,
        eye: stack(Modality::Eye)?,
    })
}
