use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::AlgebraInit;

/// Encoder family, one per row of the encoder ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Dense layers on the flattened signal.
    Linear,
    /// PHM layers on the flattened signal.
    Phm,
    /// Real-valued 1-D convolutions.
    Conv,
    /// Parameterized hypercomplex convolutions.
    #[default]
    Phc,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 4] = [
        EncoderVariant::Linear,
        EncoderVariant::Phm,
        EncoderVariant::Conv,
        EncoderVariant::Phc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::Linear => "linear",
            EncoderVariant::Phm => "phm",
            EncoderVariant::Conv => "conv",
            EncoderVariant::Phc => "phc",
        }
    }

    pub fn is_convolutional(self) -> bool {
        matches!(self, EncoderVariant::Conv | EncoderVariant::Phc)
    }
}

impl std::str::FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder variant {s:?} (expected linear, phm, conv or phc)")))
    }
}

impl std::fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Eeg,
    Ecg,
    Gsr,
    Eye,
}

impl Modality {
    /// Concatenation order of the embeddings.
    pub const ALL: [Modality; 4] = [Modality::Eeg, Modality::Ecg, Modality::Gsr, Modality::Eye];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Eeg => "eeg",
            Modality::Ecg => "ecg",
            Modality::Gsr => "gsr",
            Modality::Eye => "eye",
        }
    }
}

/// Input geometry of one modality in a sample segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub length: usize,
}

/// Widths of a two-stage encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderWidths {
    /// Hypercomplex dimension used by PHC/PHM layers of this encoder.
    pub n: usize,
    /// Output channels of the first convolution stage.
    pub hidden: usize,
    /// Embedding width (output channels of the second stage).
    pub embed: usize,
    /// First-layer width of the flattened (linear / phm) variants.
    pub flat_hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: EncoderVariant,
    pub eeg_input: InputShape,
    pub ecg_input: InputShape,
    pub gsr_input: InputShape,
    pub eye_input: InputShape,
    pub eeg: EncoderWidths,
    pub ecg: EncoderWidths,
    pub eye: EncoderWidths,
    /// Hypercomplex dimension of the GSR encoder's single PHM layer.
    pub gsr_n: usize,
    pub gsr_width: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub fusion_n: usize,
    /// Output widths of the fusion PHM layers; the input width is the sum of the
    /// four embedding widths.
    pub fusion_widths: Vec<usize>,
    pub dropout: f64,
    pub num_classes: usize,
    /// Both convolution stages of an encoder use one algebra tensor.
    pub share_algebra: bool,
    pub algebra_init: AlgebraInit,
    pub bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: EncoderVariant::Phc,
            eeg_input: InputShape { channels: 10, length: 1280 },
            ecg_input: InputShape { channels: 3, length: 1280 },
            gsr_input: InputShape { channels: 1, length: 1280 },
            eye_input: InputShape { channels: 4, length: 600 },
            eeg: EncoderWidths { n: 10, hidden: 40, embed: 160, flat_hidden: 20 },
            ecg: EncoderWidths { n: 3, hidden: 36, embed: 144, flat_hidden: 18 },
            eye: EncoderWidths { n: 4, hidden: 32, embed: 128, flat_hidden: 16 },
            gsr_n: 1,
            gsr_width: 32,
            kernel_size: 7,
            stride: 2,
            padding: 3,
            fusion_n: 4,
            fusion_widths: vec![2048, 2048, 1024],
            dropout: 0.5,
            num_classes: 3,
            share_algebra: false,
            algebra_init: AlgebraInit::Auto,
            bias: true,
        }
    }
}

impl ModelConfig {
    pub fn input(&self, m: Modality) -> InputShape {
        match m {
            Modality::Eeg => self.eeg_input,
            Modality::Ecg => self.ecg_input,
            Modality::Gsr => self.gsr_input,
            Modality::Eye => self.eye_input,
        }
    }

    /// Widths of a multichannel encoder; `None` for GSR.
    pub fn widths(&self, m: Modality) -> Option<EncoderWidths> {
        match m {
            Modality::Eeg => Some(self.eeg),
            Modality::Ecg => Some(self.ecg),
            Modality::Eye => Some(self.eye),
            Modality::Gsr => None,
        }
    }

    pub fn embed_width(&self, m: Modality) -> usize {
        self.widths(m).map_or(self.gsr_width, |w| w.embed)
    }

    pub fn fusion_input_width(&self) -> usize {
        Modality::ALL.iter().map(|&m| self.embed_width(m)).sum()
    }

    /// Checks every divisibility and shape constraint before any parameter is
    /// allocated, so errors can name the offending setting.
    pub fn validate(&self) -> Result<()> {
        let div = |n: usize, what: &'static str, value: usize| -> Result<()> {
            if n == 0 {
                return Err(Error::Config(format!("{what}: hypercomplex dimension must be positive")));
            }
            if !value.is_multiple_of(n) {
                return Err(Error::Divisibility { n, what, value });
            }
            Ok(())
        };
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::Config("kernel_size and stride must be at least 1".into()));
        }
        for m in [Modality::Eeg, Modality::Ecg, Modality::Eye] {
            let w = self.widths(m).expect("multichannel modality");
            let input = self.input(m);
            if input.channels == 0 || input.length == 0 {
                return Err(Error::Config(format!("{} input shape must be non-empty", m.name())));
            }
            match self.variant {
                EncoderVariant::Phc => {
                    div(w.n, "encoder input channels", input.channels)?;
                    div(w.n, "encoder hidden width", w.hidden)?;
                    div(w.n, "encoder embedding width", w.embed)?;
                }
                EncoderVariant::Phm => {
                    div(w.n, "flattened encoder input", input.channels * input.length)?;
                    div(w.n, "encoder flat hidden width", w.flat_hidden)?;
                    div(w.n, "encoder embedding width", w.embed)?;
                }
                EncoderVariant::Conv | EncoderVariant::Linear => {}
            }
            if self.variant.is_convolutional() {
                let mut len = input.length;
                for _ in 0..2 {
                    if self.kernel_size > len + 2 * self.padding {
                        return Err(Error::Config(format!(
                            "{} encoder: kernel {} exceeds padded length {}",
                            m.name(),
                            self.kernel_size,
                            len + 2 * self.padding
                        )));
                    }
                    len = (len + 2 * self.padding - self.kernel_size) / self.stride + 1;
                }
            }
        }
        if self.variant != EncoderVariant::Linear {
            let gsr = self.gsr_input;
            div(self.gsr_n, "gsr flattened input", gsr.channels * gsr.length)?;
            div(self.gsr_n, "gsr width", self.gsr_width)?;
        }
        if self.fusion_widths.is_empty() {
            return Err(Error::Config("fusion needs at least one PHM layer".into()));
        }
        div(self.fusion_n, "fusion input width", self.fusion_input_width())?;
        for &w in &self.fusion_widths {
            div(self.fusion_n, "fusion width", w)?;
        }
        Ok(())
    }
}
