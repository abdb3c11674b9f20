//! Plain real-valued layers: dense, 1-D convolution and batch normalization.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub use crate::tensor::BatchNormState;

/// He-uniform sample with gain √2: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), he_uniform(&[d_out, d_in], d_in, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[d_out])));
        Dense { weight, bias, d_in, d_out }
    }

    /// `y = x·Wᵀ + b` for `x: [B, d_in]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        check_features("dense", tape, x, self.d_in)?;
        let w = tape.param(store, self.weight);
        let wt = tape.transpose(w)?;
        let y = tape.matmul(x, wt)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_channel_bias(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.bias.map_or(0, |_| self.d_out)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_uniform(&[c_out, c_in, kernel], c_in * kernel, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Conv1d { weight, bias, c_in, c_out, kernel, stride, padding }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv1d(x, w, b, self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.c_in * self.c_out * self.kernel + self.bias.map_or(0, |_| self.c_out)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BatchNormState,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            state: BatchNormState::new(channels),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, store: &ParamStore, x: Var, train: bool) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batch_norm(x, g, b, &mut self.state, train)
    }

    pub fn channels(&self) -> usize {
        self.state.running_mean.len()
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }
}

pub(crate) fn check_features(op: &'static str, tape: &Tape, x: Var, d_in: usize) -> Result<()> {
    let s = tape.shape(x);
    if s.len() != 2 {
        return Err(Error::Rank { op, expected: 2, got: s.to_vec() });
    }
    if s[1] != d_in {
        return Err(Error::dim(op, s, &[s[0], d_in]));
    }
    Ok(())
}
