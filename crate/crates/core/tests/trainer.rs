use hyperx::dataset::{stratified_split, synthetic_segments, Segment, SplitUnit, SyntheticSpec, Target};
use hyperx::model::{encode_checkpoint, EncoderWidths, H2Model, ModelConfig};
use hyperx::signal::PipelineConfig;
use hyperx::tensor::{ParamStore, Tensor};
use hyperx::trainer::{
    evaluate, history_csv, one_cycle, peak_step, rng_for, train, Adam, EarlyStopping, MetricsReport, RngStream,
    StopReason, TrainConfig,
};
use hyperx::Error;
use proptest::prelude::*;

fn scalar_store(w: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.add("w", Tensor::scalar(w));
    s
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut s = ParamStore::new();
    s.add("a", Tensor::new(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
    let before = s.clone();
    let mut adam = Adam::new(&s);
    for _ in 0..5 {
        adam.step(&mut s, 0.1, 0.9).unwrap();
    }
    assert_eq!(s.iter().next().unwrap().1.value, before.iter().next().unwrap().1.value);
}

#[test]
fn adam_constant_gradient_moves_lr_per_step() {
    // With g ≡ 1 the bias-corrected moments are m̂ = v̂ = 1 at every step, so
    // each update is exactly lr / (1 + eps).
    let mut s = scalar_store(0.0);
    let mut adam = Adam::new(&s);
    for t in 1..=3 {
        s.iter_mut().next().unwrap().1.grad[0] = 1.0;
        adam.step(&mut s, 0.01, 0.9).unwrap();
        let w = s.iter().next().unwrap().1.value.item();
        let expected = -(t as f64) * 0.01 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-15, "step {t}: {w} vs {expected}");
    }
}

#[test]
fn adam_matches_hand_trajectory_with_cycled_beta1() {
    // w₀ = 0.5, lr = 0.1, grads (1, −2, 0.5), β₁ per step (0.8314, 0.8, 0.7403).
    // Step 1: m̂ = 1, v̂ = 1 → w = 0.5 − 0.1/(1 + 1e-8).
    // Steps 2 and 3 worked by hand from m_t = β₁m + (1−β₁)g, v_t = 0.999v + 0.001g²,
    // m̂ = m/(1−β₁(t)^t), v̂ = v/(1−0.999^t).
    let expected = [0.40000000099999994, 0.44656984855063964, 0.45501887696497295];
    let mut s = scalar_store(0.5);
    let mut adam = Adam::new(&s);
    for ((g, b1), want) in [1.0, -2.0, 0.5].into_iter().zip([0.8314, 0.8, 0.7403]).zip(expected) {
        s.iter_mut().next().unwrap().1.grad[0] = g;
        adam.step(&mut s, 0.1, b1).unwrap();
        let w = s.iter().next().unwrap().1.value.item();
        assert!((w - want).abs() < 1e-12, "{w} vs {want}");
    }
}

#[test]
fn adam_descends_quadratic_bowl_under_schedule() {
    let cfg = TrainConfig { max_lr: 1e-3, ..Default::default() };
    let total = 200;
    let mut s = scalar_store(1.0);
    let mut adam = Adam::new(&s);
    let mut prev = 1.0f64;
    for step in 0..total {
        let (lr, b1) = one_cycle(step, total, &cfg).unwrap();
        let p = s.iter_mut().next().unwrap().1;
        p.grad[0] = 2.0 * p.value.item();
        adam.step(&mut s, lr, b1).unwrap();
        let w = s.iter().next().unwrap().1.value.item();
        assert!(w.abs() < prev.abs(), "step {step}: |{w}| did not decrease");
        prev = w;
    }
    assert!(prev < 0.95);
}

#[test]
fn adam_aborts_on_nan_gradient() {
    let mut s = ParamStore::new();
    s.add("layer.weight", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let before = s.clone();
    let mut adam = Adam::new(&s);
    s.iter_mut().next().unwrap().1.grad = vec![0.1, f64::NAN, 0.2];
    let err = adam.step(&mut s, 0.1, 0.9).unwrap_err();
    assert!(matches!(&err, Error::NonFinite(m) if m.contains("layer.weight") && m.contains("index 1")), "{err}");
    assert_eq!(s.iter().next().unwrap().1.value, before.iter().next().unwrap().1.value);
    assert_eq!(adam.steps_taken(), 0);
}

#[test]
fn schedule_anchor_points() {
    let cfg = TrainConfig::default();
    for total in [100, 1000, 2050] {
        let peak = peak_step(total, &cfg);
        assert_eq!(peak, (0.425 * total as f64).round() as usize);
        assert_eq!(one_cycle(0, total, &cfg).unwrap(), (7.96e-7, 0.8314));
        assert_eq!(one_cycle(peak, total, &cfg).unwrap(), (7.96e-6, 0.7403));
        assert_eq!(one_cycle(total - 1, total, &cfg).unwrap(), (7.96e-8, 0.8314));
    }
    assert!(matches!(one_cycle(100, 100, &cfg), Err(Error::InvalidInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_is_continuous_piecewise_linear(total in 3usize..3000, pct in 0.05f64..0.95, max_lr in 1e-6f64..1.0) {
        let cfg = TrainConfig { max_lr, pct_start: pct, ..Default::default() };
        let peak = peak_step(total, &cfg);
        let pts: Vec<(f64, f64)> = (0..total).map(|s| one_cycle(s, total, &cfg).unwrap()).collect();
        let max = pts.iter().map(|p| p.0).fold(f64::MIN, f64::max);
        prop_assert_eq!(max, max_lr);
        let argmax = pts.iter().position(|p| p.0 == max).unwrap();
        prop_assert_eq!(argmax, peak);
        // Each phase has a constant slope, so adjacent differences are equal
        // within a phase and bounded by the phase's rise/fall over its length.
        let up = (max_lr - cfg.initial_lr()) / peak as f64;
        let down = (max_lr - cfg.final_lr()) / (total - 1 - peak) as f64;
        for s in 1..total {
            let d = pts[s].0 - pts[s - 1].0;
            let slope = if s <= peak { up } else { -down };
            prop_assert!((d - slope).abs() <= 1e-12 * max_lr, "step {}: {} vs {}", s, d, slope);
            let dm = pts[s].1 - pts[s - 1].1;
            prop_assert!(dm.signum() == -d.signum() || dm == 0.0);
        }
    }

    #[test]
    fn early_stopping_counter(scores in prop::collection::vec(0.0f64..1.0, 1..60), patience in 1usize..12) {
        let mut es = EarlyStopping::new(patience);
        let mut best = f64::NEG_INFINITY;
        let mut since = 0;
        for (i, &s) in scores.iter().enumerate() {
            let (improved, stop) = es.update(s);
            prop_assert_eq!(improved, s > best);
            if improved { best = s; since = 0 } else { since += 1 }
            prop_assert_eq!(stop, since >= patience);
            if stop {
                // at least patience + 1 epochs ran: the first epoch always improves
                prop_assert!(i + 1 > patience);
                break;
            }
        }
    }

    #[test]
    fn metrics_invariants(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
        let m = MetricsReport::from_predictions(&pred, &truth, 3).unwrap();
        for c in 0..3 {
            prop_assert_eq!(m.confusion[c].iter().sum::<usize>(), truth.iter().filter(|&&t| t == c).count());
            prop_assert_eq!(m.support[c], m.confusion[c].iter().sum::<usize>());
            // independent per-class counts
            let tp = pairs.iter().filter(|&&(p, t)| p == c && t == c).count() as f64;
            let fp = pairs.iter().filter(|&&(p, t)| p == c && t != c).count() as f64;
            let fneg = pairs.iter().filter(|&&(p, t)| p != c && t == c).count() as f64;
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
            prop_assert!((m.f1[c] - f1).abs() < 1e-12);
        }
        let trace: usize = (0..3).map(|c| m.confusion[c][c]).sum();
        prop_assert!((m.accuracy - trace as f64 / pred.len() as f64).abs() < 1e-15);
        prop_assert!((m.accuracy_pct - 100.0 * m.accuracy).abs() < 1e-12);
        for v in m.precision.iter().chain(&m.recall).chain(&m.f1).chain([&m.accuracy, &m.macro_f1]) {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}

#[test]
fn all_class_zero_macro_f1() {
    let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let m = MetricsReport::from_predictions(&vec![0; 30], &truth, 3).unwrap();
    // class 0: P = 1/3, R = 1 → F1 = 0.5; classes 1, 2 never predicted → 0.
    assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
    assert!((m.macro_f1 - 0.5 / 3.0).abs() < 1e-15);
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        eeg: EncoderWidths { n: 2, hidden: 8, embed: 16, flat_hidden: 8 },
        ecg: EncoderWidths { n: 3, hidden: 6, embed: 12, flat_hidden: 6 },
        eye: EncoderWidths { n: 2, hidden: 8, embed: 16, flat_hidden: 8 },
        gsr_width: 8,
        fusion_widths: vec![16, 8],
        ..Default::default()
    }
}

fn tiny_data(noise: f64) -> (Vec<Segment>, Vec<usize>, Vec<usize>) {
    let spec = SyntheticSpec { num_subjects: 2, trials_per_subject: 9, noise, ..Default::default() };
    let segs = synthetic_segments(&spec, &PipelineConfig::default()).unwrap();
    let split = stratified_split(&segs, Target::Arousal, 0.8, 5, SplitUnit::Segment).unwrap();
    let (tr, te) = split.resolve(&segs).unwrap();
    (segs, tr, te)
}

fn tiny_model(seed: u64) -> H2Model {
    H2Model::new(tiny_model_config(), &mut rng_for(seed, RngStream::Init)).unwrap()
}

#[test]
fn evaluate_is_pure() {
    let (segs, _, te) = tiny_data(1.0);
    let model = tiny_model(3);
    let a = evaluate(&model, &segs, &te, Target::Arousal).unwrap();
    let b = evaluate(&model, &segs, &te, Target::Arousal).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.total, te.len());
    assert!(evaluate(&model, &segs, &[], Target::Arousal).is_err());
}

#[test]
fn training_is_deterministic() {
    let (segs, tr, te) = tiny_data(1.0);
    let cfg = TrainConfig { epochs: 3, patience: 3, batch_size: 8, max_lr: 1e-3, seed: 9, ..Default::default() };
    let run = || {
        let out = train(tiny_model(cfg.seed), &segs, &tr, &te, &cfg, &mut |_| {}).unwrap();
        let bytes = encode_checkpoint(&out.best, &serde_json::to_value(&cfg).unwrap()).unwrap();
        (history_csv(&out.history), bytes, out)
    };
    let (csv_a, ck_a, out) = run();
    let (csv_b, ck_b, _) = run();
    assert_eq!(csv_a, csv_b);
    assert_eq!(ck_a, ck_b);
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.steps_per_epoch, tr.len().div_ceil(8));
    assert_eq!(out.steps_taken, 3 * out.steps_per_epoch);
    // the reported best metrics are those of the returned model
    let again = evaluate(&out.best, &segs, &te, Target::Arousal).unwrap();
    assert_eq!(Some(again), out.best_metrics);
}

#[test]
fn training_rejects_empty_splits() {
    let (segs, tr, _) = tiny_data(1.0);
    let cfg = TrainConfig { epochs: 1, patience: 1, ..Default::default() };
    assert!(matches!(train(tiny_model(1), &segs, &tr, &[], &cfg, &mut |_| {}), Err(Error::InvalidInput(_))));
    assert!(matches!(train(tiny_model(1), &segs, &[], &tr, &cfg, &mut |_| {}), Err(Error::InvalidInput(_))));
}

#[test]
fn divergence_returns_last_good_model() {
    let (segs, tr, te) = tiny_data(1.0);
    let cfg = TrainConfig { epochs: 4, patience: 4, batch_size: 8, max_lr: 1e200, ..Default::default() };
    let out = train(tiny_model(2), &segs, &tr, &te, &cfg, &mut |_| {}).unwrap();
    assert!(matches!(out.stop, StopReason::NonFinite(_)), "{:?}", out.stop);
    assert!(out.best.store().iter().all(|(_, p)| p.value.is_finite()));
    assert!(out.best.bn_states().all(|(_, s)| s.running_mean.iter().chain(&s.running_var).all(|v| v.is_finite())));
}

#[test]
fn small_model_fits_noiseless_data() {
    let (segs, tr, te) = tiny_data(0.0);
    let cfg = TrainConfig {
        epochs: 30,
        patience: 30,
        batch_size: 8,
        max_lr: 1e-2,
        stop_at_train_accuracy: Some(0.9),
        ..Default::default()
    };
    let out = train(tiny_model(4), &segs, &tr, &te, &cfg, &mut |_| {}).unwrap();
    let best_train = out.history.iter().filter_map(|r| r.train_accuracy).fold(0.0, f64::max);
    assert!(best_train >= 0.9, "train accuracy {best_train}");
    assert_eq!(out.stop, StopReason::TargetReached);
}
