use hyperx::model::{EncoderVariant, H2Model, InputShape, ModelConfig, SegmentBatch};
use hyperx::tensor::{grad_check_with, GradCheckOptions, Tape, Tensor};
use hyperx::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn build(cfg: ModelConfig) -> H2Model {
    H2Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
}

fn random_batch(cfg: &ModelConfig, b: usize, seed: u64) -> SegmentBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: InputShape| Tensor::from_fn(&[b, s.channels, s.length], |_| rng.gen_range(-1.0..1.0));
    SegmentBatch {
        eeg: r(cfg.eeg_input),
        ecg: r(cfg.ecg_input),
        gsr: r(cfg.gsr_input),
        eye: r(cfg.eye_input),
    }
}

fn small(variant: EncoderVariant) -> ModelConfig {
    ModelConfig {
        variant,
        eeg_input: InputShape { channels: 10, length: 40 },
        ecg_input: InputShape { channels: 3, length: 40 },
        gsr_input: InputShape { channels: 1, length: 40 },
        eye_input: InputShape { channels: 4, length: 20 },
        fusion_widths: vec![16, 12, 8],
        ..Default::default()
    }
}

/// Hand enumeration of the default PHC model, layer by layer.
fn expected_default_phc_total() -> usize {
    let phc = |n: usize, cin: usize, cout: usize, k: usize| n * n * n + cin * cout * k / n + cout;
    let phm = |n: usize, din: usize, dout: usize| n * n * n + din * dout / n + dout;
    let bn = |c: usize| 2 * c;
    let eeg = phc(10, 10, 40, 7) + bn(40) + phc(10, 40, 160, 7) + bn(160);
    let ecg = phc(3, 3, 36, 7) + bn(36) + phc(3, 36, 144, 7) + bn(144);
    let eye = phc(4, 4, 32, 7) + bn(32) + phc(4, 32, 128, 7) + bn(128);
    let gsr = phm(1, 1280, 32) + bn(32);
    let fusion = phm(4, 464, 2048) + phm(4, 2048, 2048) + phm(4, 2048, 1024);
    let head = 1024 * 3 + 3;
    eeg + ecg + eye + gsr + fusion + head
}

#[test]
fn default_model_counts_match_enumeration() {
    let model = build(ModelConfig::default());
    let b = model.count_parameters();
    assert_eq!(b.total, expected_default_phc_total());
    assert!((1_000_000..=5_000_000).contains(&b.total), "total {}", b.total);
    for l in model.layer_infos() {
        assert_eq!(l.formula_count, l.measured_count, "{}", l.name);
        if l.kind == "phm" || l.kind == "phc" {
            assert_eq!(l.filter_scalars * l.n, l.dense_equivalent, "{}", l.name);
        }
    }
}

#[test]
fn variant_ordering_for_default_widths() {
    let totals: Vec<usize> = [
        EncoderVariant::Phc,
        EncoderVariant::Phm,
        EncoderVariant::Conv,
        EncoderVariant::Linear,
    ]
    .into_iter()
    .map(|variant| build(ModelConfig { variant, ..Default::default() }).count_parameters().total)
    .collect();
    assert!(totals.windows(2).all(|w| w[0] < w[1]), "{totals:?}");
}

#[test]
fn phc_layers_hold_one_nth_of_conv_weights() {
    let phc = build(ModelConfig::default());
    let conv = build(ModelConfig { variant: EncoderVariant::Conv, ..Default::default() });
    let conv_layers = conv.layer_infos();
    for l in phc.layer_infos().iter().filter(|l| l.kind == "phc") {
        let c = conv_layers.iter().find(|c| c.name == l.name).unwrap();
        assert_eq!(c.kind, "conv");
        assert_eq!(c.filter_scalars, l.filter_scalars * l.n);
    }
}

#[test]
fn n_one_phm_variant_is_linear_plus_cubes() {
    let mut cfg = small(EncoderVariant::Phm);
    cfg.eeg.n = 1;
    cfg.ecg.n = 1;
    cfg.eye.n = 1;
    let phm = build(cfg.clone());
    let lin = build(ModelConfig { variant: EncoderVariant::Linear, ..cfg });
    let hyper_layers = phm.layer_infos().iter().filter(|l| l.kind == "phm" && !l.name.starts_with("fusion")).count();
    assert_eq!(hyper_layers, 7);
    assert_eq!(phm.count_parameters().total, lin.count_parameters().total + hyper_layers);
}

#[test]
fn fusion_divisibility_is_checked() {
    let mut cfg = ModelConfig::default();
    cfg.eye.embed = 128 - 48 + 2; // 160 + 144 + 32 + 82 = 418
    cfg.variant = EncoderVariant::Conv;
    assert_eq!(cfg.fusion_input_width(), 418);
    assert!(matches!(
        H2Model::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)),
        Err(Error::Divisibility { n: 4, value: 418, .. })
    ));
    cfg.eye.embed = 80; // 416
    assert_eq!(cfg.fusion_input_width(), 416);
    H2Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
}

#[test]
fn default_shapes_and_logits() {
    let cfg = ModelConfig::default();
    let model = build(cfg.clone());
    let batch = random_batch(&cfg, 2, 3);
    let e = model.embed(&batch).unwrap();
    assert_eq!(e.shape(), &[2, 464]);
    let logits = model.predict(&batch).unwrap();
    assert_eq!(logits.shape(), &[2, 3]);
    assert!(logits.is_finite());
    assert_eq!(logits, model.predict(&batch).unwrap());
}

#[test]
fn zero_input_logits_equal_bias_path() {
    // Encoder and fusion biases start at zero and batch norm in eval mode maps
    // zero to beta = 0, so a zero batch reaches the head as a zero vector and the
    // logits are exactly the head bias.
    let cfg = small(EncoderVariant::Phc);
    let mut model = build(cfg.clone());
    let bias = [0.5, -1.25, 2.0];
    let id = model.store().find("head.bias").unwrap();
    model.store_mut().get_mut(id).value.data_mut().copy_from_slice(&bias);
    let logits = model.predict(&SegmentBatch::zeros(&cfg, 3)).unwrap();
    for row in logits.data().chunks(3) {
        assert_eq!(row, bias);
    }
}

#[test]
fn gradients_reach_every_parameter() {
    for variant in EncoderVariant::ALL {
        let cfg = small(variant);
        let mut model = build(cfg.clone());
        let batch = random_batch(&cfg, 4, 9);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = model.forward(&mut tape, &batch, true, &mut rng).unwrap();
        let loss = tape.softmax_cross_entropy(out.logits, &[0, 1, 2, 1]).unwrap();
        tape.backward_into(loss, model.store_mut()).unwrap();
        for (_, p) in model.store().iter() {
            assert!(p.grad.iter().any(|g| *g != 0.0), "{variant}: {} has no gradient", p.name);
        }
    }
}

#[test]
fn full_model_gradient_check() {
    let cfg = ModelConfig::default();
    let model = build(cfg.clone());
    let batch = random_batch(&cfg, 3, 21);
    let labels = [0, 2, 1];
    // A smaller step than the per-layer checks: the default model has ~10⁵ ReLU
    // units, and with h = 1e-5 some perturbation of an algebra entry
    // usually pushes one of them across its kink.
    let opts = GradCheckOptions {
        tol: 1e-4,
        h: 1e-6,
        max_entries_per_param: Some(4),
        seed: 5,
        ..Default::default()
    };
    let report = grad_check_with(
        model.store(),
        |tape, store| {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let out = model.forward_with(store, tape, &batch, true, &mut rng)?;
            tape.softmax_cross_entropy(out.logits, &labels)
        },
        &opts,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn argmax_ignores_constant_logit_shift() {
    let cfg = small(EncoderVariant::Phc);
    let model = build(cfg.clone());
    let logits = model.predict(&random_batch(&cfg, 5, 2)).unwrap();
    let argmax = |d: &[f64]| -> Vec<usize> {
        d.chunks(3)
            .map(|r| (0..3).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
            .collect()
    };
    let shifted: Vec<f64> = logits.data().iter().map(|v| v + 123.5).collect();
    assert_eq!(argmax(logits.data()), argmax(&shifted));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_variant_yields_documented_shapes(
        variant in prop::sample::select(EncoderVariant::ALL.to_vec()),
        eeg_mult in 1usize..4,
        ecg_mult in 1usize..4,
        eye_mult in 1usize..4,
        len in 16usize..48,
        batch in 2usize..4,
        fusion_n in prop::sample::select(vec![1usize, 2, 4]),
    ) {
        let mut cfg = small(variant);
        cfg.eeg_input.length = len;
        cfg.ecg_input.length = len;
        cfg.gsr_input.length = len;
        cfg.eye_input.length = len / 2;
        cfg.eeg.hidden = 10 * eeg_mult;
        cfg.eeg.embed = 20 * eeg_mult;
        cfg.ecg.hidden = 3 * ecg_mult;
        cfg.ecg.embed = 12 * ecg_mult;
        cfg.eye.hidden = 4 * eye_mult;
        cfg.eye.embed = 8 * eye_mult;
        cfg.gsr_width = 4;
        cfg.fusion_n = fusion_n;
        cfg.fusion_widths = vec![8, 8, 4];
        prop_assume!(cfg.fusion_input_width().is_multiple_of(fusion_n));
        // Flattened hypercomplex encoders need n | C·L.
        if variant == EncoderVariant::Phm {
            cfg.eeg_input.length = len - len % 10 + 10;
            cfg.eye_input.length = len / 2 - (len / 2) % 4 + 4;
        }
        let model = H2Model::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = random_batch(&cfg, batch, 1);
        let e = model.embed(&b).unwrap();
        prop_assert_eq!(e.shape(), &[batch, cfg.fusion_input_width()][..]);
        let mut tape = Tape::new();
        let mut m = model.clone();
        let out = m.forward(&mut tape, &b, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(tape.shape(out.logits), &[batch, 3][..]);
        prop_assert!(tape.value(out.logits).is_finite());
    }
}
