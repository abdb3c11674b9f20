use std::f64::consts::PI;

use hyperx::dataset::{Signals, Trial};
use hyperx::signal::{
    apply_filter, average_reference, baseline_correct_gsr, downsample_by2, filtfilt, merge_eyes, preprocess_trial,
    segment, FilterSpec, PipelineConfig,
};
use hyperx::tensor::Tensor;
use hyperx::Error;
use proptest::prelude::*;

fn sine(freq: f64, fs: f64, seconds: f64, amp: f64) -> Vec<f64> {
    let n = (fs * seconds).round() as usize;
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

/// Least-squares amplitude of the `freq` component over the middle half of `y`.
fn amplitude(y: &[f64], freq: f64, fs: f64) -> f64 {
    let (lo, hi) = (y.len() / 4, 3 * y.len() / 4);
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in y.iter().enumerate().take(hi).skip(lo) {
        let w = 2.0 * PI * freq * i as f64 / fs;
        let (s, c) = w.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    a.hypot(b)
}

fn rms(y: &[f64]) -> f64 {
    (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt()
}

fn gain(spec: FilterSpec, freq: f64, fs: f64) -> f64 {
    let sos = spec.design(fs).unwrap();
    let y = filtfilt(&sos, &sine(freq, fs, 30.0, 1.0)).unwrap();
    amplitude(&y, freq, fs)
}

const EEG_BAND: FilterSpec = FilterSpec::Bandpass { low_hz: 1.0, high_hz: 45.0, order: 4 };
const NOTCH: FilterSpec = FilterSpec::Notch { freq_hz: 50.0, q: 30.0 };

fn reference_input() -> Vec<f64> {
    (0..300)
        .map(|i| {
            let i = i as f64;
            (0.3 * i).sin() + 0.5 * (1.7 * i).cos() + 0.01 * i
        })
        .collect()
}

/// Forward-backward outputs at indices 0, 1, 50, 150, 298, 299 of
/// `reference_input`, computed with scipy.signal (butter / iirnotch + sosfiltfilt
/// with default odd padding).
#[test]
fn filtfilt_matches_reference_implementation() {
    let idx = [0, 1, 50, 150, 298, 299];
    let cases = [
        (
            EEG_BAND,
            128.0,
            [0.11376736849884667, -0.19981543801734114, 0.15691687659392817, 0.37708109894991537, -0.893364223279962, -0.16813778648077038],
        ),
        (
            FilterSpec::Lowpass { cutoff_hz: 51.2, order: 8 },
            256.0,
            [0.49971589139625616, 0.3349344373800852, 1.149931146192349, 2.350576808699755, 3.9806568114582843, 4.37814958723955],
        ),
        (
            NOTCH,
            128.0,
            [0.506242175804861, 0.22986394935871338, 0.6592645102034277, 1.9213997340496007, 3.6211706135404538, 4.376250834036039],
        ),
    ];
    let x = reference_input();
    for (spec, fs, expected) in cases {
        let y = filtfilt(&spec.design(fs).unwrap(), &x).unwrap();
        for (&i, e) in idx.iter().zip(expected) {
            assert!((y[i] - e).abs() < 1e-9, "{spec:?} at {i}: {} vs {e}", y[i]);
        }
    }
}

#[test]
fn band_pass_sweep() {
    for k in 0..=62 {
        let f = 4.0 + 0.5 * k as f64;
        let g = gain(EEG_BAND, f, 128.0);
        assert!((g - 1.0).abs() < 0.02, "{f} Hz: gain {g}");
    }
    let g20 = gain(EEG_BAND, 20.0, 128.0);
    assert!((g20 - 1.0).abs() < 0.02);
    let g55 = gain(EEG_BAND, 55.0, 128.0);
    assert!(20.0 * g55.log10() < -20.0, "55 Hz: {g55}");
}

#[test]
fn notch_depth() {
    let sos = NOTCH.design(128.0).unwrap();
    let x = sine(50.0, 128.0, 30.0, 1.0);
    let y = filtfilt(&sos, &x).unwrap();
    let n = y.len();
    assert!(rms(&y[n / 4..3 * n / 4]) < 0.05 * rms(&x));
    assert!(20.0 * gain(NOTCH, 50.0, 128.0).log10() < -25.0);
    // Away from 50 Hz the notch is transparent.
    assert!((gain(NOTCH, 20.0, 128.0) - 1.0).abs() < 0.01);
}

#[test]
fn band_pass_removes_dc_offset() {
    let x = Tensor::full(&[1, 128 * 30], 3.0);
    let y = apply_filter(&x, &EEG_BAND, 128.0).unwrap();
    let d = y.data();
    let trimmed = &d[128 * 5..d.len() - 128 * 5];
    let mean_abs = trimmed.iter().map(|v| v.abs()).sum::<f64>() / trimmed.len() as f64;
    assert!(mean_abs < 0.03, "{mean_abs}");
}

#[test]
fn zero_phase_keeps_pulse_symmetric() {
    let fs = 128.0;
    let n = 1025;
    let c = 512;
    let x: Vec<f64> = (0..n).map(|i| (-((i as f64 - c as f64) / 6.0).powi(2)).exp()).collect();
    for spec in [EEG_BAND, NOTCH, FilterSpec::Lowpass { cutoff_hz: 20.0, order: 4 }] {
        let y = filtfilt(&spec.design(fs).unwrap(), &x).unwrap();
        let peak = (0..n).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        assert!((peak as i64 - c as i64).abs() < 1, "{spec:?}: peak at {peak}");
        for k in 1..200 {
            assert!((y[c - k] - y[c + k]).abs() < 1e-6, "{spec:?}: asymmetric at ±{k}");
        }
    }
}

#[test]
fn downsampling_examples() {
    let dc = Tensor::full(&[2, 512], 5.0);
    let y = downsample_by2(&dc, 256.0, 8, 0.8).unwrap();
    assert_eq!(y.shape(), &[2, 256]);
    assert!(y.data().iter().all(|v| (v - 5.0).abs() < 1e-9));

    let x = Tensor::new(&[1, 2048], sine(10.0, 256.0, 8.0, 1.0)).unwrap();
    let y = downsample_by2(&x, 256.0, 8, 0.8).unwrap();
    assert_eq!(y.shape(), &[1, 1024]);
    let a = amplitude(y.data(), 10.0, 128.0);
    assert!((a - 1.0).abs() < 0.01, "{a}");

    let x = Tensor::new(&[1, 2048], sine(100.0, 256.0, 8.0, 1.0)).unwrap();
    let y = downsample_by2(&x, 256.0, 8, 0.8).unwrap();
    assert!(rms(y.data()) < 0.01 * rms(x.data()));

    // Odd length: trailing sample dropped.
    let y = downsample_by2(&Tensor::zeros(&[1, 101]), 256.0, 8, 0.8).unwrap();
    assert_eq!(y.shape(), &[1, 50]);
    assert!(matches!(
        downsample_by2(&Tensor::zeros(&[1, 20]), 256.0, 8, 0.8),
        Err(Error::TooShort { .. })
    ));
}

#[test]
fn baseline_ramp() {
    let fs = 128.0;
    let x = Tensor::from_fn(&[1, 512], |i| 0.5 * i as f64);
    let y = baseline_correct_gsr(&x, fs, 200.0, 1000.0).unwrap();
    // Window: the 26 samples before onset (index 128).
    let mean = (102..128).map(|i| 0.5 * i as f64).sum::<f64>() / 26.0;
    assert_eq!(y.shape(), &[1, 384]);
    for (k, v) in y.data().iter().enumerate() {
        assert!((v - (0.5 * (128 + k) as f64 - mean)).abs() < 1e-12);
    }
    let y = baseline_correct_gsr(&Tensor::full(&[1, 300], 7.0), fs, 200.0, 1000.0).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

fn raw_trial(seconds: f64, pre_ms: u32) -> Trial {
    let total = seconds + pre_ms as f64 / 1000.0;
    let n256 = (total * 256.0).round() as usize;
    let n60 = (total * 60.0).round() as usize;
    let wave = |c: usize, n: usize, fs: f64| {
        Tensor::from_fn(&[c, n], |i| {
            let (ch, t) = (i / n, (i % n) as f64 / fs);
            (2.0 * PI * (5.0 + ch as f64) * t).sin() + 0.1 * ch as f64
        })
    };
    Trial {
        id: "t0".into(),
        subject: 1,
        arousal: 2,
        valence: 0,
        pre_trial_ms: pre_ms,
        signals: Signals {
            eeg: wave(10, n256, 256.0),
            ecg: wave(3, n256, 256.0),
            gsr: wave(1, n256, 256.0),
            eye: wave(8, n60, 60.0),
        },
    }
}

#[test]
fn pipeline_shapes_and_segments() {
    let cfg = PipelineConfig::default();
    let pre = preprocess_trial(&raw_trial(30.0, 1000), &cfg).unwrap();
    assert_eq!(pre.signals.eeg.shape(), &[10, 3840]);
    assert_eq!(pre.signals.ecg.shape(), &[3, 3840]);
    assert_eq!(pre.signals.gsr.shape(), &[1, 3840]);
    assert_eq!(pre.signals.eye.shape(), &[4, 1800]);
    // Average reference survives the (linear, channel-independent) filters.
    for t in (0..3840).step_by(97) {
        let s: f64 = (0..10).map(|c| pre.signals.eeg.at(&[c, t])).sum();
        assert!(s.abs() < 1e-9);
    }
    let segs = segment(&pre, 10.0, 10.0).unwrap();
    assert_eq!(segs.len(), 3);
    for (k, s) in segs.iter().enumerate() {
        assert_eq!(s.index, k);
        assert_eq!((s.arousal, s.valence), (2, 0));
        assert_eq!(s.signals.eeg.shape(), &[10, 1280]);
        assert_eq!(s.signals.eye.shape(), &[4, 600]);
        assert_eq!(s.signals.eeg.at(&[3, 0]), pre.signals.eeg.at(&[3, k * 1280]));
        assert_eq!(s.signals.eye.at(&[1, 599]), pre.signals.eye.at(&[1, k * 600 + 599]));
    }

    let short = preprocess_trial(&raw_trial(10.0, 1000), &cfg).unwrap();
    assert_eq!(segment(&short, 10.0, 10.0).unwrap().len(), 1);
    let odd = preprocess_trial(&raw_trial(25.0, 1000), &cfg).unwrap();
    assert_eq!(segment(&odd, 10.0, 10.0).unwrap().len(), 2);
    // Overlapping windows when the hop is shorter than the window.
    assert_eq!(segment(&pre, 10.0, 5.0).unwrap().len(), 5);
}

#[test]
fn pipeline_is_pure_and_keeps_blinks() {
    let cfg = PipelineConfig::default();
    let mut raw = raw_trial(12.0, 1000);
    let n60 = raw.signals.eye.shape()[1];
    // Blink in the left pupil (channel 3) after onset.
    raw.signals.eye.data_mut()[3 * n60 + 100] = -1.0;
    let a = preprocess_trial(&raw, &cfg).unwrap();
    let b = preprocess_trial(&raw, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.signals.eye.at(&[3, 40]), -1.0);
}

#[test]
fn pipeline_rejects_missing_context() {
    let cfg = PipelineConfig::default();
    let raw = raw_trial(12.0, 100);
    assert!(matches!(preprocess_trial(&raw, &cfg), Err(Error::Integrity { .. })));
}

#[test]
fn merge_eyes_pairs_quantities() {
    let x = Tensor::from_fn(&[8, 2], |i| (i / 2) as f64 * 10.0);
    let y = merge_eyes(&x).unwrap();
    // quantity q averages channels q and q + 4
    for q in 0..4 {
        assert_eq!(y.at(&[q, 0]), (q as f64 * 10.0 + (q + 4) as f64 * 10.0) / 2.0);
    }
}

proptest! {
    #[test]
    fn average_reference_is_idempotent_and_zero_mean(
        data in prop::collection::vec(-100.0f64..100.0, 10 * 16),
    ) {
        let x = Tensor::new(&[10, 16], data).unwrap();
        let once = average_reference(&x).unwrap();
        let twice = average_reference(&once).unwrap();
        prop_assert!(once.max_abs_diff(&twice) < 1e-12);
        for t in 0..16 {
            let s: f64 = (0..10).map(|c| once.at(&[c, t])).sum();
            prop_assert!(s.abs() < 1e-11);
        }
    }

    #[test]
    fn identical_channels_reference_to_zero(row in prop::collection::vec(-50.0f64..50.0, 8)) {
        let x = Tensor::from_fn(&[10, 8], |i| row[i % 8]);
        let y = average_reference(&x).unwrap();
        prop_assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn filtering_is_linear(a in -3.0f64..3.0, seed in 0u64..1000) {
        let fs = 128.0;
        let sos = EEG_BAND.design(fs).unwrap();
        let x: Vec<f64> = (0..400).map(|i| ((i as u64 * 7919 + seed) % 101) as f64 / 50.0 - 1.0).collect();
        let y = filtfilt(&sos, &x).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
        let ys = filtfilt(&sos, &xs).unwrap();
        for (u, v) in y.iter().zip(&ys) {
            prop_assert!((a * u - v).abs() < 1e-9);
        }
    }
}
