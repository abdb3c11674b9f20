use std::collections::HashMap;

use rand::Rng;

use super::kernels::{self, ConvGeom, KronSumGeom};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running statistics of a batch-norm layer. Updated in place by training-mode
/// forward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddChannelBias(Var, Var),
    Reshape(Var),
    Relu(Var),
    Sum(Var),
    Kron(Var, Var),
    KronSum {
        algebra: Var,
        filters: Var,
        geom: KronSumGeom,
    },
    Conv1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    GlobalAvgPool(Var),
    Concat {
        inputs: Vec<Var>,
        widths: Vec<usize>,
    },
    Select {
        x: Var,
        index: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Values are stored in recording order; [`Tape::backward`] walks them in
/// reverse exactly once. A tape is single-threaded; the kernels it calls may
/// use the rayon pool internally.
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
    corrupt_backward: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every leaf and parameter that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the parameter gradients into `store` (accumulating, not overwriting).
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, var) in &self.params {
            if let Some(g) = self.get(var) {
                let p = store.get_mut(id);
                p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let batch = shape[0];
    let channels = shape[1];
    let inner: usize = shape[2..].iter().product();
    (batch, channels, inner)
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, g: Vec<f64>) {
    match &mut grads[var.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn transpose2(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
            corrupt_backward: false,
        }
    }

    /// A tape that records no gradient bookkeeping; parameters are treated as constants.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Debug switch for gradient-check self tests: the ReLU backward rule is
    /// deliberately scaled by one half.
    pub fn set_corrupt_backward(&mut self, on: bool) {
        self.corrupt_backward = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is wanted (returned through [`Gradients::get`]).
    pub fn leaf_with_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Brings a parameter onto the tape. Repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.requires_grad);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 {
            return Err(Error::Rank { op: "matmul", expected: 2, got: sa.to_vec() });
        }
        if sb.len() != 2 {
            return Err(Error::Rank { op: "matmul", expected: 2, got: sb.to_vec() });
        }
        if sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Rank { op: "transpose", expected: 2, got: s.to_vec() });
        }
        let (r, c) = (s[0], s[1]);
        let t = transpose2(r, c, self.value(a).data());
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_parts(vec![c, r], t), Op::Transpose(a), needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor::from_parts(shape, out), Op::Scale(a, s), needs)
    }

    /// Adds `bias[c]` along axis 1 of a `[B, C, ...]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() < 2 {
            return Err(Error::Rank { op: "add_channel_bias", expected: 2, got: sx.to_vec() });
        }
        if self.shape(bias) != [sx[1]] {
            return Err(Error::dim("add_channel_bias", sx, self.shape(bias)));
        }
        let (_, c, inner) = channel_layout(sx);
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[(i / inner) % c])
            .collect();
        let shape = sx.to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddChannelBias(x, bias), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// `[B, d1, d2, ...] -> [B, d1*d2*...]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.is_empty() {
            return Err(Error::Rank { op: "flatten", expected: 1, got: vec![] });
        }
        let shape = [s[0], s[1..].iter().product()];
        self.reshape(x, &shape)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::from_parts(shape, out), Op::Relu(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Kronecker product of two matrices.
    pub fn kron(&mut self, a: Var, b: Var) -> Result<Var> {
        for v in [a, b] {
            if self.shape(v).len() != 2 {
                return Err(Error::Rank { op: "kron", expected: 2, got: self.shape(v).to_vec() });
            }
        }
        let (p, q) = (self.shape(a)[0], self.shape(a)[1]);
        let (r, s) = (self.shape(b)[0], self.shape(b)[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let cols = q * s;
        let mut out = vec![0.0; p * r * cols];
        for i in 0..p {
            for j in 0..q {
                let coef = av[i * q + j];
                for k in 0..r {
                    let dst = &mut out[(i * r + k) * cols + j * s..(i * r + k) * cols + (j + 1) * s];
                    dst.iter_mut().zip(&bv[k * s..(k + 1) * s]).for_each(|(d, x)| *d = coef * x);
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![p * r, cols], out), Op::Kron(a, b), needs))
    }

    /// `Σ_i algebra[i] ⊗ filters[i]`, with `algebra: [n,n,n]` and
    /// `filters: [n, p, q, rest...]`. Trailing filter dims (kernel taps) are
    /// carried through, so `[n, Cout/n, Cin/n, K]` yields `[Cout, Cin, K]` with one
    /// Kronecker sum per tap.
    pub fn kron_sum(&mut self, algebra: Var, filters: Var) -> Result<Var> {
        let sa = self.shape(algebra).to_vec();
        let sf = self.shape(filters).to_vec();
        if sa.len() != 3 || sa[0] != sa[1] || sa[1] != sa[2] {
            return Err(Error::dim("kron_sum (algebra must be [n,n,n])", &sa, &sf));
        }
        if sf.len() < 3 {
            return Err(Error::Rank { op: "kron_sum", expected: 3, got: sf });
        }
        let n = sa[0];
        if sf[0] != n {
            return Err(Error::dim("kron_sum", &sa, &sf));
        }
        let geom = KronSumGeom {
            n,
            rows: sf[1],
            cols: sf[2..].iter().product(),
        };
        let w = kernels::kron_sum_forward(&geom, self.value(algebra).data(), self.value(filters).data());
        let mut shape = vec![n * sf[1], n * sf[2]];
        shape.extend_from_slice(&sf[3..]);
        let needs = self.needs(algebra) || self.needs(filters);
        Ok(self.push(Tensor::from_parts(shape, w), Op::KronSum { algebra, filters, geom }, needs))
    }

    /// 1-D cross-correlation: `x [B,Cin,L]`, `w [Cout,Cin,K]`, optional `bias [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 {
            return Err(Error::Rank { op: "conv1d", expected: 3, got: sx });
        }
        if sw.len() != 3 {
            return Err(Error::Rank { op: "conv1d", expected: 3, got: sw });
        }
        if sx[1] != sw[1] {
            return Err(Error::dim("conv1d", &sx, &sw));
        }
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be at least 1".into()));
        }
        let (batch, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, kernel) = (sw[0], sw[2]);
        if kernel > len + 2 * padding {
            return Err(Error::dim("conv1d (kernel larger than padded input)", &sx, &sw));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::dim("conv1d bias", &sw, self.shape(b)));
            }
        }
        let out_len = (len + 2 * padding - kernel) / stride + 1;
        let geom = ConvGeom { batch, cin, cout, len, kernel, stride, padding, out_len };
        let y = kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let needs = self.needs(x) || self.needs(w) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Tensor::from_parts(vec![batch, cout, out_len], y),
            Op::Conv1d { x, w, bias, geom },
            needs,
        ))
    }

    /// Batch normalization over axis 1 of `[B,C]` or `[B,C,L]`.
    ///
    /// In training mode batch statistics are used and `state` is updated with
    /// momentum (unbiased variance for the running estimate); in eval mode the
    /// running statistics are used and `state` is left alone.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        train: bool,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(Error::Rank { op: "batch_norm", expected: 2, got: sx });
        }
        let (batch, c, inner) = channel_layout(&sx);
        for v in [gamma, beta] {
            if self.shape(v) != [c] {
                return Err(Error::dim("batch_norm", &sx, self.shape(v)));
            }
        }
        if state.running_mean.len() != c || state.running_var.len() != c {
            return Err(Error::Config(format!(
                "batch_norm state has {} channels, input has {c}",
                state.running_mean.len()
            )));
        }
        if train && batch < 2 {
            return Err(Error::DegenerateBatch { batch, len: inner });
        }
        let xv = self.value(x).data();
        let m = (batch * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if train {
            for b in 0..batch {
                for ch in 0..c {
                    let s = &xv[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                    mean[ch] += s.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for b in 0..batch {
                for ch in 0..c {
                    let s = &xv[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                    var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            let mom = state.momentum;
            for ch in 0..c {
                state.running_mean[ch] = (1.0 - mom) * state.running_mean[ch] + mom * mean[ch];
                let unbiased = var[ch] * m / (m - 1.0);
                state.running_var[ch] = (1.0 - mom) * state.running_var[ch] + mom * unbiased;
            }
        } else {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for (i, (&v, (xh, o))) in xv.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / inner) % c;
            *xh = (v - mean[ch]) * inv_std[ch];
            *o = g[ch] * *xh + bt[ch];
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let keep = needs && self.grad_enabled;
        Ok(self.push(
            Tensor::from_parts(sx, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: if keep { xhat } else { Vec::new() },
                inv_std,
                batch_stats: train,
            },
            needs,
        ))
    }

    /// Inverted dropout. In eval mode (or with `p == 0`) this is the identity
    /// and returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mask { x, mask }, needs))
    }

    /// `[B,C,L] -> [B,C]` mean over the last axis.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::Rank { op: "global_avg_pool", expected: 3, got: sx });
        }
        let len = sx[2];
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(len)
            .map(|row| row.iter().sum::<f64>() / len as f64)
            .collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_parts(vec![sx[0], sx[1]], out), Op::GlobalAvgPool(x), needs))
    }

    /// Concatenation along axis 1. All inputs share axis 0 and trailing axes.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() < 2 {
            return Err(Error::Rank { op: "concat", expected: 2, got: s0 });
        }
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(Error::dim("concat", &s0, s));
            }
            widths.push(s[1]);
        }
        let (batch, inner) = (s0[0], s0[2..].iter().product::<usize>());
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total * inner);
        for b in 0..batch {
            for (&v, &w) in inputs.iter().zip(&widths) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[b * w * inner..(b + 1) * w * inner]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total;
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat { inputs: inputs.to_vec(), widths },
            needs,
        ))
    }

    /// Slice `x[index]` along axis 0, dropping that axis.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(Error::Rank { op: "select", expected: 2, got: sx });
        }
        if index >= sx[0] {
            return Err(Error::InvalidInput(format!("select index {index} out of range for {sx:?}")));
        }
        let inner: usize = sx[1..].iter().product();
        let out = self.value(x).data()[index * inner..(index + 1) * inner].to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_parts(sx[1..].to_vec(), out), Op::Select { x, index }, needs))
    }

    /// Mean softmax cross-entropy of `[B,K]` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 {
            return Err(Error::Rank { op: "softmax_cross_entropy", expected: 2, got: s });
        }
        let (batch, k) = (s[0], s[1]);
        if labels.len() != batch {
            return Err(Error::dim("softmax_cross_entropy", &s, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label: bad, classes: k });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; batch * k];
        let mut loss = 0.0;
        for b in 0..batch {
            let row = &z[b * k..(b + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..k {
                probs[b * k + j] = (row[j] - lse).exp();
            }
            loss += lse - row[labels[b]];
        }
        loss /= batch as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            needs,
        ))
    }

    /// Reverse pass from a scalar `loss`. The tape itself is not consumed, so a
    /// second call yields the same gradients again; parameter gradients
    /// accumulate in the store via [`Gradients::accumulate_into`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Rank { op: "backward", expected: 0, got: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.needs(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(node, &g, &mut grads);
        }
        let params = self
            .params
            .iter()
            .filter(|(_, v)| v.0 <= loss.0)
            .map(|(&id, &v)| (id, v))
            .collect();
        Ok(Gradients { grads, params })
    }

    /// Backward and accumulate parameter gradients into `store` in one call.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let g = self.backward(loss)?;
        g.accumulate_into(store);
        Ok(g)
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, self.value(*b).data(), true, &mut da, false);
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, self.value(*a).data(), true, g, false, &mut db, false);
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                accumulate(grads, *a, transpose2(s[0], s[1], g));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(grads, v, g.to_vec());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.iter().map(|v| v * s).collect()),
            Op::AddChannelBias(x, bias) => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if self.needs(*bias) {
                    let (_, c, inner) = channel_layout(node.value.shape());
                    let mut db = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        db[(i / inner) % c] += v;
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::Reshape(x) => accumulate(grads, *x, g.to_vec()),
            Op::Relu(x) => {
                let factor = if self.corrupt_backward { 0.5 } else { 1.0 };
                let d = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(gv, xv)| if *xv > 0.0 { gv * factor } else { 0.0 })
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::Sum(x) => accumulate(grads, *x, vec![g[0]; self.value(*x).numel()]),
            Op::Kron(a, b) => {
                let (p, q) = (self.shape(*a)[0], self.shape(*a)[1]);
                let (r, s) = (self.shape(*b)[0], self.shape(*b)[1]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let cols = q * s;
                let mut da = vec![0.0; p * q];
                let mut db = vec![0.0; r * s];
                for i in 0..p {
                    for j in 0..q {
                        let coef = av[i * q + j];
                        for k in 0..r {
                            let blk = &g[(i * r + k) * cols + j * s..(i * r + k) * cols + (j + 1) * s];
                            let brow = &bv[k * s..(k + 1) * s];
                            da[i * q + j] += blk.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            db[k * s..(k + 1) * s]
                                .iter_mut()
                                .zip(blk)
                                .for_each(|(d, x)| *d += coef * x);
                        }
                    }
                }
                if self.needs(*a) {
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::KronSum { algebra, filters, geom } => {
                let (da, df) = kernels::kron_sum_backward(
                    geom,
                    self.value(*algebra).data(),
                    self.value(*filters).data(),
                    g,
                );
                if self.needs(*algebra) {
                    accumulate(grads, *algebra, da);
                }
                if self.needs(*filters) {
                    accumulate(grads, *filters, df);
                }
            }
            Op::Conv1d { x, w, bias, geom } => {
                let (dx, dw, db) = kernels::conv1d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    self.needs(*x),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let (batch, c, inner) = channel_layout(node.value.shape());
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (&gi, &xh)) in g.iter().zip(xhat).enumerate() {
                    let ch = (i / inner) % c;
                    dgamma[ch] += gi * xh;
                    dbeta[ch] += gi;
                }
                if self.needs(*x) {
                    let dx: Vec<f64> = if *batch_stats {
                        let m = (batch * inner) as f64;
                        g.iter()
                            .zip(xhat)
                            .enumerate()
                            .map(|(i, (&gi, &xh))| {
                                let ch = (i / inner) % c;
                                // dxhat = g*gamma; sums of dxhat and dxhat*xhat are gamma*dbeta and gamma*dgamma.
                                gv[ch] * inv_std[ch] / m * (m * gi - dbeta[ch] - xh * dgamma[ch])
                            })
                            .collect()
                    } else {
                        g.iter()
                            .enumerate()
                            .map(|(i, &gi)| {
                                let ch = (i / inner) % c;
                                gi * gv[ch] * inv_std[ch]
                            })
                            .collect()
                    };
                    accumulate(grads, *x, dx);
                }
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::Mask { x, mask } => {
                accumulate(grads, *x, g.iter().zip(mask).map(|(a, b)| a * b).collect());
            }
            Op::GlobalAvgPool(x) => {
                let len = self.shape(*x)[2];
                let mut d = Vec::with_capacity(self.value(*x).numel());
                for &gv in g {
                    d.extend(std::iter::repeat_n(gv / len as f64, len));
                }
                accumulate(grads, *x, d);
            }
            Op::Concat { inputs, widths } => {
                let s = node.value.shape();
                let (batch, inner) = (s[0], s[2..].iter().product::<usize>());
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(batch * w * inner);
                        for b in 0..batch {
                            let start = (b * total + offset) * inner;
                            d.extend_from_slice(&g[start..start + w * inner]);
                        }
                        accumulate(grads, v, d);
                    }
                    offset += w;
                }
            }
            Op::Select { x, index } => {
                let inner = node.value.numel();
                let mut d = vec![0.0; self.value(*x).numel()];
                d[index * inner..(index + 1) * inner].copy_from_slice(g);
                accumulate(grads, *x, d);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let batch = labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * g[0] / batch).collect();
                for (b, &l) in labels.iter().enumerate() {
                    d[b * k + l] -= g[0] / batch;
                }
                accumulate(grads, *logits, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let y = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);

        let a = tape.leaf(t(&[1, 2], &[1., 2.]));
        let b = tape.leaf(t(&[2, 1], &[3., 4.]));
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn conv1d_identity_kernel_and_moving_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 3], &[1., 2., 3.]));
        let w = tape.leaf(t(&[1, 1, 1], &[1.]));
        let y = tape.conv1d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3.]);

        let x = tape.leaf(t(&[1, 1, 4], &[1., 2., 3., 4.]));
        let w = tape.leaf(t(&[1, 1, 2], &[1., 1.]));
        let y = tape.conv1d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[3., 5., 7.]);
    }

    #[test]
    fn conv1d_output_length_and_kernel_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3, 16]));
        let w = tape.leaf(Tensor::zeros(&[4, 3, 7]));
        let y = tape.conv1d(x, w, None, 2, 3).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 8]);

        let w = tape.leaf(Tensor::zeros(&[4, 3, 23]));
        assert!(matches!(tape.conv1d(x, w, None, 1, 3), Err(Error::Dimension { .. })));
        let w = tape.leaf(Tensor::zeros(&[4, 3, 22]));
        assert!(tape.conv1d(x, w, None, 1, 3).is_ok());
    }

    #[test]
    fn relu_pool_and_cross_entropy_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1., 0., 2.]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0., 0., 2.]);

        let x = tape.leaf(t(&[1, 2, 4], &[1., 1., 1., 1., 2., 4., 6., 8.]));
        let p = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(p).data(), &[1., 5.]);

        let z = tape.leaf(t(&[1, 3], &[0., 0., 0.]));
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((tape.value(l).item() - 3f64.ln()).abs() < 1e-15);
        assert!(matches!(
            tape.softmax_cross_entropy(z, &[3]),
            Err(Error::Label { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn backward_sum_and_square() {
        let mut tape = Tape::new();
        let x = tape.leaf_with_grad(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);

        let mut tape = Tape::new();
        let x = tape.leaf_with_grad(t(&[1], &[3.]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf_with_grad(Tensor::zeros(&[2]));
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::Rank { .. })));
    }

    #[test]
    fn repeated_backward_accumulates_in_store() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[2], &[1., -2.]));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        tape.backward_into(s, &mut store).unwrap();
        assert_eq!(store.grad(id), &[2., -4.]);
        tape.backward_into(s, &mut store).unwrap();
        assert_eq!(store.grad(id), &[4., -8.]);
        store.zero_grads();
        assert_eq!(store.grad(id), &[0., 0.]);
    }

    #[test]
    fn frozen_param_gets_no_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[2], &[1., 2.]));
        store.set_requires_grad(id, false);
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let s = tape.sum(w);
        tape.backward_into(s, &mut store).unwrap();
        assert_eq!(store.grad(id), &[0., 0.]);
    }

    #[test]
    fn batch_norm_degenerate_batch_and_eval() {
        let mut tape = Tape::new();
        let mut st = BatchNormState::new(2);
        let g = tape.leaf(t(&[2], &[1., 1.]));
        let b = tape.leaf(t(&[2], &[0., 0.]));
        let x1 = tape.leaf(Tensor::zeros(&[1, 2, 5]));
        assert!(matches!(
            tape.batch_norm(x1, g, b, &mut st, true),
            Err(Error::DegenerateBatch { .. })
        ));
        // eval mode with default running stats (mean 0, var 1) is ~identity
        let x = tape.leaf(t(&[1, 2], &[3., -4.]));
        let y = tape.batch_norm(x, g, b, &mut st, false).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((tape.value(y).data()[0] - 3.0 * scale).abs() < 1e-15);
        assert_eq!(st, BatchNormState::new(2));
    }

    #[test]
    fn batch_norm_updates_running_stats() {
        let mut tape = Tape::new();
        let mut st = BatchNormState::new(1);
        let g = tape.leaf(t(&[1], &[1.]));
        let b = tape.leaf(t(&[1], &[0.]));
        let x = tape.leaf(t(&[2, 1, 2], &[1., 3., 5., 7.]));
        tape.batch_norm(x, g, b, &mut st, true).unwrap();
        // batch mean 4, unbiased var 20/3
        assert!((st.running_mean[0] - 0.4).abs() < 1e-15);
        assert!((st.running_var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_seeded() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[4, 8], |i| i as f64 + 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(y, x);

        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = tape.dropout(x, 0.5, true, &mut r1).unwrap();
        let b = tape.dropout(x, 0.5, true, &mut r2).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert!(tape.value(a).data().iter().all(|&v| v == 0.0 || v > 1.0));
    }

    #[test]
    fn concat_and_select() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 1], &[1., 2.]));
        let b = tape.leaf(t(&[2, 2], &[3., 4., 5., 6.]));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[2, 3]);
        assert_eq!(tape.value(c).data(), &[1., 3., 4., 2., 5., 6.]);
        let r = tape.select(c, 1).unwrap();
        assert_eq!(tape.value(r).data(), &[2., 5., 6.]);
    }

    #[test]
    fn kron_examples() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(&[2, 2], &[0., 1., 1., 0.]));
        let m = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let k = tape.kron(p, m).unwrap();
        assert_eq!(
            tape.value(k).data(),
            &[0., 0., 1., 2., 0., 0., 3., 4., 1., 2., 0., 0., 3., 4., 0., 0.]
        );
        let v = tape.leaf(Tensor::zeros(&[4]));
        assert!(matches!(tape.kron(v, m), Err(Error::Rank { .. })));
    }

    #[test]
    fn inference_tape_tracks_nothing() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[1], &[2.]));
        let mut tape = Tape::inference();
        let w = tape.param(&store, id);
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert!(g.get(w).is_none());
    }
}
