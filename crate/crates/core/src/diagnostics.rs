//! Self-checks shared by the `gradcheck` command and the acceptance suite.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hyper::{AlgebraInit, PhcLayer, PhmLayer};
use crate::layers::{BatchNorm, Conv1d, Dense};
use crate::model::{H2Model, InputShape, ModelConfig, SegmentBatch};
use crate::tensor::{grad_check_with, GradCheckOptions, GradCheckReport, ParamStore, Tape, Tensor, Var};

/// Per-layer relative-error tolerance.
pub const LAYER_TOL: f64 = 1e-6;
/// Whole-model relative-error tolerance.
pub const MODEL_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tol: f64,
    pub checked: usize,
    pub passed: bool,
    /// Worst entry or other context.
    pub detail: Option<String>,
}

impl CheckResult {
    fn from_report(name: String, r: GradCheckReport) -> Self {
        CheckResult {
            name,
            max_error: r.max_rel_error,
            tol: r.tol,
            checked: r.checked,
            passed: r.passed,
            detail: r.worst.map(|(p, i)| format!("{p}[{i}]")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv,
    BatchNorm,
    Phm,
    Phc,
    /// ReLU, global average pooling and concatenation.
    Activations,
    CrossEntropy,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Dense,
        LayerKind::Conv,
        LayerKind::BatchNorm,
        LayerKind::Phm,
        LayerKind::Phc,
        LayerKind::Activations,
        LayerKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv => "conv",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Phm => "phm",
            LayerKind::Phc => "phc",
            LayerKind::Activations => "activations",
            LayerKind::CrossEntropy => "cross_entropy",
        }
    }

    fn is_hypercomplex(self) -> bool {
        matches!(self, LayerKind::Phm | LayerKind::Phc)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer {s:?}")))
    }
}

#[derive(Clone, Debug)]
#[derive(Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Halve the ReLU backward rule (harness self-test; checks must fail).
    pub break_backward: bool,
}


fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `Σ y ⊙ w` for fixed random `w`, turning any output into a scalar loss whose
/// gradient exercises every output entry.
fn probe_loss(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.leaf(rand_tensor(&mut rng, tape.shape(y)));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Central-difference check of one layer type with hypercomplex dimension `n`
/// (ignored for plain layers). The input is registered as a parameter so its
/// gradient is checked too.
pub fn layer_gradcheck(kind: LayerKind, n: usize, opts: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37);
    let mut store = ParamStore::new();
    let gc = GradCheckOptions {
        h: 1e-5,
        tol: LAYER_TOL,
        corrupt_backward: opts.break_backward,
        seed: opts.seed,
        ..Default::default()
    };
    let name = if kind.is_hypercomplex() { format!("{kind} n={n}") } else { kind.to_string() };
    let report = match kind {
        LayerKind::Dense => {
            let layer = Dense::new(&mut store, "dense", 5, 4, true, &mut rng);
            let x = store.add("x", rand_tensor(&mut rng, &[3, 5]));
            grad_check_with(&store, |t, s| {
                let xv = t.param(s, x);
                let y = layer.forward(t, s, xv)?;
                probe_loss(t, y, 1)
            }, &gc)?
        }
        LayerKind::Conv => {
            let layer = Conv1d::new(&mut store, "conv", 3, 4, 5, 2, 2, true, &mut rng);
            let x = store.add("x", rand_tensor(&mut rng, &[2, 3, 11]));
            grad_check_with(&store, |t, s| {
                let xv = t.param(s, x);
                let y = layer.forward(t, s, xv)?;
                probe_loss(t, y, 2)
            }, &gc)?
        }
        LayerKind::BatchNorm => {
            let mut layer = BatchNorm::new(&mut store, "bn", 3);
            store.get_mut(layer.gamma).value = rand_tensor(&mut rng, &[3]);
            store.get_mut(layer.beta).value = rand_tensor(&mut rng, &[3]);
            let x = store.add("x", rand_tensor(&mut rng, &[4, 3, 5]));
            grad_check_with(&store, |t, s| {
                let xv = t.param(s, x);
                let y = layer.forward(t, s, xv, true)?;
                probe_loss(t, y, 3)
            }, &gc)?
        }
        LayerKind::Phm => {
            let layer = PhmLayer::new(&mut store, "phm", n, 2 * n, 3 * n, true, AlgebraInit::RandomSign, &mut rng)?;
            if let Some(b) = layer.bias {
                store.get_mut(b).value = rand_tensor(&mut rng, &[3 * n]);
            }
            let x = store.add("x", rand_tensor(&mut rng, &[3, 2 * n]));
            grad_check_with(&store, |t, s| {
                let xv = t.param(s, x);
                let y = layer.forward(t, s, xv)?;
                probe_loss(t, y, 4)
            }, &gc)?
        }
        LayerKind::Phc => {
            let layer =
                PhcLayer::new(&mut store, "phc", n, n, 2 * n, 3, 2, 1, true, AlgebraInit::RandomSign, None, &mut rng)?;
            if let Some(b) = layer.bias {
                store.get_mut(b).value = rand_tensor(&mut rng, &[2 * n]);
            }
            let x = store.add("x", rand_tensor(&mut rng, &[2, n, 9]));
            grad_check_with(&store, |t, s| {
                let xv = t.param(s, x);
                let y = layer.forward(t, s, xv)?;
                probe_loss(t, y, 5)
            }, &gc)?
        }
        LayerKind::Activations => {
            // Inputs are kept at least 0.05 away from the ReLU kink.
            let away = |rng: &mut ChaCha8Rng, shape: &[usize]| {
                Tensor::from_fn(shape, |_| {
                    let v: f64 = rng.gen_range(0.05..1.0);
                    if rng.gen::<bool>() { v } else { -v }
                })
            };
            let a = store.add("a", away(&mut rng, &[2, 3, 6]));
            let b = store.add("b", away(&mut rng, &[2, 4]));
            grad_check_with(&store, |t, s| {
                let av = t.param(s, a);
                let r = t.relu(av);
                let pooled = t.global_avg_pool(r)?;
                let bv = t.param(s, b);
                let rb = t.relu(bv);
                let y = t.concat(&[pooled, rb])?;
                probe_loss(t, y, 6)
            }, &gc)?
        }
        LayerKind::CrossEntropy => {
            let z = store.add("logits", rand_tensor(&mut rng, &[4, 3]));
            let labels = [0, 2, 1, 2];
            grad_check_with(&store, |t, s| {
                let zv = t.param(s, z);
                t.softmax_cross_entropy(zv, &labels)
            }, &gc)?
        }
    };
    Ok(CheckResult::from_report(name, report))
}

/// Every layer type, with n ∈ {1, 2, 3, 4} for the hypercomplex ones.
pub fn layer_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for kind in LayerKind::ALL {
        if kind.is_hypercomplex() {
            for n in 1..=4 {
                out.push(layer_gradcheck(kind, n, opts)?);
            }
        } else {
            out.push(layer_gradcheck(kind, 1, opts)?);
        }
    }
    Ok(out)
}

/// Forward + cross-entropy of a freshly initialized model on a random batch of
/// three segments, batch-norm in training mode, dropout masks fixed. Uses a
/// smaller step than the per-layer checks because the default model has ~10⁵
/// ReLU units and a 1e-5 perturbation regularly moves one across its kink.
pub fn model_gradcheck(cfg: &ModelConfig, entries_per_param: usize, opts: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let model = H2Model::new(cfg.clone(), &mut rng)?;
    let b = 3;
    let mut r = |s: InputShape| Tensor::from_fn(&[b, s.channels, s.length], |_| rng.gen_range(-1.0..1.0));
    let batch = SegmentBatch {
        eeg: r(cfg.eeg_input),
        ecg: r(cfg.ecg_input),
        gsr: r(cfg.gsr_input),
        eye: r(cfg.eye_input),
    };
    let labels: Vec<usize> = (0..b).map(|i| i % cfg.num_classes).collect();
    let gc = GradCheckOptions {
        h: 1e-6,
        tol: MODEL_TOL,
        max_entries_per_param: Some(entries_per_param),
        seed: opts.seed.wrapping_add(5),
        corrupt_backward: opts.break_backward,
        ..Default::default()
    };
    let report = grad_check_with(
        model.store(),
        |tape, store| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(77);
            let out = model.forward_with(store, tape, &batch, true, &mut drop_rng)?;
            tape.softmax_cross_entropy(out.logits, &labels)
        },
        &gc,
    )?;
    Ok(CheckResult::from_report(format!("model {}", cfg.variant), report))
}

/// Hamilton product `p q` written out component by component.
pub fn quaternion_product(p: [f64; 4], q: [f64; 4]) -> [f64; 4] {
    let [a1, b1, c1, d1] = p;
    let [a2, b2, c2, d2] = q;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

/// A 4→4 PHM layer with its algebra frozen to the quaternion structure
/// constants and filters set to `p` maps `q` to `p q`. Compares `pairs` random
/// pairs against [`quaternion_product`].
pub fn quaternion_check(pairs: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = PhmLayer::new(&mut store, "q", 4, 4, 4, false, AlgebraInit::Hamilton, &mut rng)?;
    store.set_requires_grad(layer.weight.algebra, false);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let p: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        store.get_mut(layer.weight.filters).value = Tensor::new(&[4, 1, 1], p.to_vec())?;
        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::new(&[1, 4], q.to_vec())?);
        let y = layer.forward(&mut tape, &store, x)?;
        let want = quaternion_product(p, q);
        for (a, b) in tape.value(y).data().iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    let tol = 1e-12;
    Ok(CheckResult {
        name: "phm n=4 hamilton vs quaternion product".into(),
        max_error: worst,
        tol,
        checked: pairs,
        passed: worst <= tol,
        detail: None,
    })
}
