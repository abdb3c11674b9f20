//! The H2 network: four modality encoders, a hypercomplex fusion stack and a
//! dense classifier head.

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{EncoderVariant, EncoderWidths, InputShape, Modality, ModelConfig};

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hyper::{PhcLayer, PhmLayer};
use crate::layers::{Conv1d, Dense};
use crate::tensor::{BatchNormState, ParamId, ParamStore, Tape, Tensor, Var};

/// One batch of aligned segments, `[B, C, L]` per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBatch {
    pub eeg: Tensor,
    pub ecg: Tensor,
    pub gsr: Tensor,
    pub eye: Tensor,
}

impl SegmentBatch {
    pub fn get(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Eeg => &self.eeg,
            Modality::Ecg => &self.ecg,
            Modality::Gsr => &self.gsr,
            Modality::Eye => &self.eye,
        }
    }

    /// All-zero batch matching `cfg`.
    pub fn zeros(cfg: &ModelConfig, batch: usize) -> Self {
        let z = |s: InputShape| Tensor::zeros(&[batch, s.channels, s.length]);
        SegmentBatch {
            eeg: z(cfg.eeg_input),
            ecg: z(cfg.ecg_input),
            gsr: z(cfg.gsr_input),
            eye: z(cfg.eye_input),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.eeg.shape().first().copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Dense(Dense),
    Conv(Conv1d),
    Phm(PhmLayer),
    Phc(PhcLayer),
}

impl Layer {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            Layer::Dense(l) => l.forward(tape, store, x),
            Layer::Conv(l) => l.forward(tape, store, x),
            Layer::Phm(l) => l.forward(tape, store, x),
            Layer::Phc(l) => l.forward(tape, store, x),
        }
    }

    fn info(&self, name: &str, store: &ParamStore) -> LayerInfo {
        let (kind, n, dense, formula, measured, bias) = match self {
            Layer::Dense(l) => (
                "dense",
                1,
                l.d_in * l.d_out,
                l.param_count(),
                l.param_count(),
                l.bias.is_some(),
            ),
            Layer::Conv(l) => (
                "conv",
                1,
                l.c_in * l.c_out * l.kernel,
                l.param_count(),
                l.param_count(),
                l.bias.is_some(),
            ),
            Layer::Phm(l) => (
                "phm",
                l.weight.n,
                l.d_in * l.d_out,
                l.param_count(),
                l.owned_scalars(store),
                l.bias.is_some(),
            ),
            Layer::Phc(l) => (
                "phc",
                l.weight.n,
                l.c_in * l.c_out * l.kernel,
                l.param_count(),
                l.owned_scalars(store),
                l.bias.is_some(),
            ),
        };
        let filter_scalars = match self {
            Layer::Phm(l) => store.value(l.weight.filters).numel(),
            Layer::Phc(l) => store.value(l.weight.filters).numel(),
            _ => dense,
        };
        let shares_algebra = match self {
            Layer::Phm(l) => !l.weight.owns_algebra,
            Layer::Phc(l) => !l.weight.owns_algebra,
            _ => false,
        };
        LayerInfo {
            name: name.to_string(),
            kind,
            n,
            dense_equivalent: dense,
            filter_scalars,
            bias,
            shares_algebra,
            formula_count: formula,
            measured_count: measured,
        }
    }

    fn algebra(&self) -> Option<ParamId> {
        match self {
            Layer::Phm(l) => Some(l.weight.algebra),
            Layer::Phc(l) => Some(l.weight.algebra),
            _ => None,
        }
    }
}

/// Per-layer parameter accounting.
#[derive(Clone, Debug, Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    pub n: usize,
    /// Weight scalars of the equivalent real-valued layer.
    pub dense_equivalent: usize,
    /// Scalars stored for the weight itself (F for hypercomplex layers).
    pub filter_scalars: usize,
    pub bias: bool,
    pub shares_algebra: bool,
    /// `n³ + dense/n + bias` for hypercomplex layers, `dense + bias` otherwise.
    pub formula_count: usize,
    /// Scalars actually held in the parameter store for this layer.
    pub measured_count: usize,
}

#[derive(Clone, Debug)]
struct NormLayer {
    gamma: ParamId,
    beta: ParamId,
    /// Index into `H2Model::bn_states`.
    state: usize,
}

#[derive(Clone, Debug)]
struct Stage {
    name: String,
    layer: Layer,
    norm: NormLayer,
}

#[derive(Clone, Debug)]
struct Encoder {
    modality: Modality,
    /// Flattened-input encoders reshape `[B, C, L]` to `[B, C·L]` first.
    flatten: bool,
    stages: Vec<Stage>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub eeg: usize,
    pub ecg: usize,
    pub gsr: usize,
    pub eye: usize,
    pub fusion: usize,
    pub head: usize,
    pub total: usize,
}

impl ParamBreakdown {
    pub fn encoder(&self, m: Modality) -> usize {
        match m {
            Modality::Eeg => self.eeg,
            Modality::Ecg => self.ecg,
            Modality::Gsr => self.gsr,
            Modality::Eye => self.eye,
        }
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Concatenated encoder embeddings (the fusion input).
    pub embedding: Var,
}

#[derive(Clone, Debug)]
pub struct H2Model {
    config: ModelConfig,
    store: ParamStore,
    bn_names: Vec<String>,
    bn_states: Vec<BatchNormState>,
    encoders: Vec<Encoder>,
    fusion: Vec<PhmLayer>,
    head: Dense,
}

struct Builder<'a, R: Rng + ?Sized> {
    cfg: &'a ModelConfig,
    store: ParamStore,
    bn_names: Vec<String>,
    bn_states: Vec<BatchNormState>,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn norm(&mut self, name: &str, channels: usize) -> NormLayer {
        let gamma = self.store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = self.store.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        self.bn_names.push(name.to_string());
        self.bn_states.push(BatchNormState::new(channels));
        NormLayer { gamma, beta, state: self.bn_states.len() - 1 }
    }

    fn linear_layer(&mut self, name: &str, hyper: bool, n: usize, d_in: usize, d_out: usize, shared: Option<ParamId>) -> Result<Layer> {
        let cfg = self.cfg;
        Ok(if hyper {
            Layer::Phm(PhmLayer::with_algebra(
                &mut self.store,
                name,
                n,
                d_in,
                d_out,
                cfg.bias,
                cfg.algebra_init,
                shared,
                self.rng,
            )?)
        } else {
            Layer::Dense(Dense::new(&mut self.store, name, d_in, d_out, cfg.bias, self.rng))
        })
    }

    fn conv_layer(&mut self, name: &str, hyper: bool, n: usize, c_in: usize, c_out: usize, shared: Option<ParamId>) -> Result<Layer> {
        let cfg = self.cfg;
        let (k, s, p) = (cfg.kernel_size, cfg.stride, cfg.padding);
        Ok(if hyper {
            Layer::Phc(PhcLayer::new(
                &mut self.store,
                name,
                n,
                c_in,
                c_out,
                k,
                s,
                p,
                cfg.bias,
                cfg.algebra_init,
                shared,
                self.rng,
            )?)
        } else {
            Layer::Conv(Conv1d::new(&mut self.store, name, c_in, c_out, k, s, p, cfg.bias, self.rng))
        })
    }

    fn encoder(&mut self, m: Modality) -> Result<Encoder> {
        let cfg = self.cfg;
        let input = cfg.input(m);
        let prefix = m.name();
        let variant = cfg.variant;
        let hyper = matches!(variant, EncoderVariant::Phm | EncoderVariant::Phc);
        let mut stages = Vec::new();
        let Some(w) = cfg.widths(m) else {
            // GSR: one flattened stage; a PHM with n = 1 is a dense layer with an
            // extra scalar, so only the linear variant swaps in Dense.
            let name = format!("{prefix}.0");
            let d_in = input.channels * input.length;
            let layer = self.linear_layer(&name, variant != EncoderVariant::Linear, cfg.gsr_n, d_in, cfg.gsr_width, None)?;
            let norm = self.norm(&format!("{name}.bn"), cfg.gsr_width);
            stages.push(Stage { name, layer, norm });
            return Ok(Encoder { modality: m, flatten: true, stages });
        };
        let conv = variant.is_convolutional();
        let widths = if conv {
            [(input.channels, w.hidden), (w.hidden, w.embed)]
        } else {
            [(input.channels * input.length, w.flat_hidden), (w.flat_hidden, w.embed)]
        };
        let mut shared = None;
        for (i, (c_in, c_out)) in widths.into_iter().enumerate() {
            let name = format!("{prefix}.{i}");
            let share = if cfg.share_algebra { shared } else { None };
            let layer = if conv {
                self.conv_layer(&name, hyper, w.n, c_in, c_out, share)?
            } else {
                self.linear_layer(&name, hyper, w.n, c_in, c_out, share)?
            };
            shared = shared.or(layer.algebra());
            let norm = self.norm(&format!("{name}.bn"), c_out);
            stages.push(Stage { name, layer, norm });
        }
        Ok(Encoder { modality: m, flatten: !conv, stages })
    }
}

impl H2Model {
    /// Builds and initializes a model. All randomness comes from `rng`.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            cfg: &config,
            store: ParamStore::new(),
            bn_names: Vec::new(),
            bn_states: Vec::new(),
            rng,
        };
        let encoders = Modality::ALL
            .into_iter()
            .map(|m| b.encoder(m))
            .collect::<Result<Vec<_>>>()?;
        let mut fusion = Vec::new();
        let mut width = config.fusion_input_width();
        for (i, &w) in config.fusion_widths.iter().enumerate() {
            fusion.push(PhmLayer::new(
                &mut b.store,
                &format!("fusion.{i}"),
                config.fusion_n,
                width,
                w,
                config.bias,
                config.algebra_init,
                b.rng,
            )?);
            width = w;
        }
        let head = Dense::new(&mut b.store, "head", width, config.num_classes, true, b.rng);
        let Builder { store, bn_names, bn_states, .. } = b;
        Ok(H2Model { config, store, bn_names, bn_states, encoders, fusion, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Batch-norm layer names paired with their running statistics.
    pub fn bn_states(&self) -> impl Iterator<Item = (&str, &BatchNormState)> {
        self.bn_names.iter().map(String::as_str).zip(&self.bn_states)
    }

    pub(crate) fn bn_states_mut(&mut self) -> impl Iterator<Item = (&str, &mut BatchNormState)> {
        self.bn_names.iter().map(String::as_str).zip(self.bn_states.iter_mut())
    }

    /// Checks the batch against the configured segment shapes.
    pub fn check_batch(&self, batch: &SegmentBatch) -> Result<usize> {
        let b = batch.batch_size();
        for m in Modality::ALL {
            let t = batch.get(m);
            let s = self.config.input(m);
            let want = [b, s.channels, s.length];
            if t.rank() != 3 {
                return Err(Error::Rank { op: "h2_forward", expected: 3, got: t.shape().to_vec() });
            }
            if t.shape() != want {
                return Err(Error::dim("h2_forward", t.shape(), &want));
            }
            if !t.is_finite() {
                return Err(Error::InvalidInput(format!("{} segment contains non-finite values", m.name())));
            }
        }
        Ok(b)
    }

    /// Training or eval-mode forward pass. In training mode batch-norm running
    /// statistics are updated and dropout masks are drawn from `rng`.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        batch: &SegmentBatch,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardOutput> {
        let mut states = std::mem::take(&mut self.bn_states);
        let out = self.run(&self.store, tape, batch, train, rng, &mut states);
        self.bn_states = states;
        out
    }

    /// Eval-mode forward pass that leaves the model untouched.
    pub fn forward_eval(&self, tape: &mut Tape, batch: &SegmentBatch) -> Result<ForwardOutput> {
        let mut states = self.bn_states.clone();
        // Dropout is the identity in eval mode, so no randomness is consumed.
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        self.run(&self.store, tape, batch, false, &mut rng, &mut states)
    }

    /// Forward pass reading parameters from `store` instead of the model's own
    /// (same layout, e.g. a perturbed copy). Running statistics are not updated.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &SegmentBatch,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardOutput> {
        if store.len() != self.store.len() {
            return Err(Error::Config("parameter store does not match the model layout".into()));
        }
        let mut states = self.bn_states.clone();
        self.run(store, tape, batch, train, rng, &mut states)
    }

    /// Eval-mode logits `[B, num_classes]`.
    pub fn predict(&self, batch: &SegmentBatch) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let out = self.forward_eval(&mut tape, batch)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode fusion input `[B, fusion_input_width]`.
    pub fn embed(&self, batch: &SegmentBatch) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let out = self.forward_eval(&mut tape, batch)?;
        Ok(tape.value(out.embedding).clone())
    }

    fn run(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &SegmentBatch,
        train: bool,
        rng: &mut dyn RngCore,
        states: &mut [BatchNormState],
    ) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let mut embeddings = Vec::with_capacity(self.encoders.len());
        for enc in &self.encoders {
            let mut x = tape.leaf(batch.get(enc.modality).clone());
            if enc.flatten {
                x = tape.flatten(x)?;
            }
            for stage in &enc.stages {
                x = stage.layer.forward(tape, store, x)?;
                let g = tape.param(store, stage.norm.gamma);
                let b = tape.param(store, stage.norm.beta);
                x = tape.batch_norm(x, g, b, &mut states[stage.norm.state], train)?;
                x = tape.relu(x);
            }
            if !enc.flatten {
                x = tape.global_avg_pool(x)?;
            }
            embeddings.push(x);
        }
        let embedding = tape.concat(&embeddings)?;
        let p = self.config.dropout;
        let mut x = embedding;
        for layer in &self.fusion {
            x = tape.dropout(x, p, train, rng)?;
            x = layer.forward(tape, store, x)?;
            x = tape.relu(x);
        }
        x = tape.dropout(x, p, train, rng)?;
        let logits = self.head.forward(tape, store, x)?;
        Ok(ForwardOutput { logits, embedding })
    }

    /// Learnable scalars grouped by module.
    pub fn count_parameters(&self) -> ParamBreakdown {
        let mut out = ParamBreakdown::default();
        for (_, p) in self.store.iter() {
            if !p.requires_grad {
                continue;
            }
            let k = p.value.numel();
            let slot = match p.name.split('.').next().unwrap_or("") {
                "eeg" => &mut out.eeg,
                "ecg" => &mut out.ecg,
                "gsr" => &mut out.gsr,
                "eye" => &mut out.eye,
                "fusion" => &mut out.fusion,
                _ => &mut out.head,
            };
            *slot += k;
            out.total += k;
        }
        out
    }

    /// Accounting for every weight layer (batch norms excluded), in build order.
    pub fn layer_infos(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        for enc in &self.encoders {
            for s in &enc.stages {
                out.push(s.layer.info(&s.name, &self.store));
            }
        }
        for (i, l) in self.fusion.iter().enumerate() {
            out.push(Layer::Phm(l.clone()).info(&format!("fusion.{i}"), &self.store));
        }
        out.push(Layer::Dense(self.head.clone()).info("head", &self.store));
        out
    }
}
