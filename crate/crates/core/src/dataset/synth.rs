//! Synthetic multimodal trials whose labels live only in inter-channel phase
//! relations.
//!
//! Channel `c` of a labelled modality carries two sinusoids:
//!
//! ```text
//! x_c(t) = g·[sin(2π f_a t + φ + c·δ(a)) + sin(2π f_v t + ψ + c·δ(v))] + noise
//! δ(k)   = phase_base + k·phase_step
//! ```
//!
//! where `a`/`v` are the arousal/valence labels, `φ`, `ψ` are uniform per-trial
//! phases and `g` a per-subject gain. Every channel has the same amplitude
//! spectrum whatever the class; only the relative phases differ. With the
//! default `phase_base = π/5`, `phase_step = 3π/5`, each class pattern sums to
//! zero over the 10 EEG channels, so average referencing leaves it untouched.
//! Eye channels use the same construction per quantity (both eyes share the
//! phase) on a positive offset and carry occasional −1 blink runs. GSR is a
//! slow, label-free drift on a subject-dependent baseline.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Segment, Signals, Stage, Target, Trial};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::signal::{preprocess_trial, segment, PipelineConfig, EYE_MISSING};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_subjects: u32,
    pub trials_per_subject: u32,
    pub seed: u64,
    /// White-noise standard deviation relative to the unit component amplitude.
    pub noise: f64,
    pub duration_s: f64,
    pub pre_trial_ms: u32,
    pub arousal_hz: f64,
    pub valence_hz: f64,
    pub phase_base: f64,
    pub phase_step: f64,
    /// Expected blinks per second in the eye channels.
    pub blink_rate_hz: f64,
    pub blink_ms: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_subjects: 27,
            trials_per_subject: 20,
            seed: 1,
            noise: 1.0,
            duration_s: 30.0,
            pre_trial_ms: 1000,
            arousal_hz: 6.0,
            valence_hz: 11.0,
            phase_base: PI / 5.0,
            phase_step: 3.0 * PI / 5.0,
            blink_rate_hz: 0.2,
            blink_ms: 150.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("synthetic spec: {what}")));
        if self.num_subjects == 0 || self.trials_per_subject == 0 {
            return bad("needs at least one subject and one trial");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite non-negative number");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        let eye_nyquist = Stage::Raw.rate_hz(Modality::Eye) / 2.0;
        for f in [self.arousal_hz, self.valence_hz] {
            if !(f > 0.0 && f < eye_nyquist) {
                return bad("component frequencies must lie below the eye Nyquist frequency (30 Hz)");
            }
        }
        if !(self.blink_rate_hz >= 0.0 && self.blink_ms >= 0.0) {
            return bad("blink rate and length must be non-negative");
        }
        Ok(())
    }

    pub fn num_trials(&self) -> usize {
        self.num_subjects as usize * self.trials_per_subject as usize
    }

    /// Inter-channel phase step of class `k`.
    pub fn delta(&self, k: usize) -> f64 {
        self.phase_base + k as f64 * self.phase_step
    }

    /// Labels of trial `g`: arousal cycles fastest, valence every three trials,
    /// so both are balanced whenever the trial count is a multiple of 9.
    pub fn labels(&self, g: usize) -> (u8, u8) {
        ((g % 3) as u8, ((g / 3) % 3) as u8)
    }
}

fn subject_gain(spec: &SyntheticSpec, subject: u32) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream((1 << 40) + subject as u64);
    (rng.gen_range(0.8..1.2), rng.gen_range(1.0..3.0))
}

/// Rounds to the nearest f32 so that storing the trial is lossless.
fn q(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates trial `g` (0-based, subject-major). Each trial has its own random
/// stream, so trials can be produced independently and in any order.
pub fn generate_trial(spec: &SyntheticSpec, g: usize) -> Result<Trial> {
    spec.validate()?;
    if g >= spec.num_trials() {
        return Err(Error::InvalidInput(format!("trial {g} out of range for {} trials", spec.num_trials())));
    }
    let subject = (g / spec.trials_per_subject as usize) as u32;
    let index = g % spec.trials_per_subject as usize;
    let (arousal, valence) = spec.labels(g);
    let (gain, gsr_base) = subject_gain(spec, subject);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(g as u64);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let psi = rng.gen_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let total_s = spec.duration_s + spec.pre_trial_ms as f64 / 1000.0;
    let (da, dv) = (spec.delta(arousal as usize), spec.delta(valence as usize));

    let mut coupled = |channels: usize, phase_of: &dyn Fn(usize) -> usize, fs: f64, offset: f64| -> Tensor {
        let n = (total_s * fs).round() as usize;
        let mut data = Vec::with_capacity(channels * n);
        for c in 0..channels {
            let p = phase_of(c) as f64;
            for i in 0..n {
                let t = i as f64 / fs;
                let clean = (2.0 * PI * spec.arousal_hz * t + phi + p * da).sin()
                    + (2.0 * PI * spec.valence_hz * t + psi + p * dv).sin();
                let e = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push(q(offset + gain * clean + e));
            }
        }
        Tensor::new(&[channels, n], data).expect("generated shape")
    };
    let fs = Stage::Raw.rate_hz(Modality::Eeg);
    let eeg = coupled(10, &|c| c, fs, 0.0);
    let ecg = coupled(3, &|c| c, fs, 0.0);
    let eye_fs = Stage::Raw.rate_hz(Modality::Eye);
    // Left and right eye share the phase of their quantity.
    let mut eye = coupled(8, &|c| c % 4, eye_fs, 3.0);

    let n_gsr = (total_s * fs).round() as usize;
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let gsr = (0..n_gsr)
        .map(|i| {
            let t = i as f64 / fs;
            let e = if spec.noise > 0.0 { 0.05 * noise.sample(&mut rng) } else { 0.0 };
            q(gsr_base + 0.3 * (2.0 * PI * 0.05 * t + drift_phase).sin() + e)
        })
        .collect();
    let gsr = Tensor::new(&[1, n_gsr], gsr).expect("generated shape");

    let n_eye = eye.shape()[1];
    let blink = ((spec.blink_ms / 1000.0) * eye_fs).round().max(1.0) as usize;
    let p_start = spec.blink_rate_hz / eye_fs;
    let mut i = 0;
    while i < n_eye {
        if p_start > 0.0 && rng.gen::<f64>() < p_start {
            // Usually both eyes, sometimes only one.
            let eyes: &[usize] = match rng.gen_range(0..4) {
                0 => &[0],
                1 => &[1],
                _ => &[0, 1],
            };
            for &side in eyes {
                for qn in 0..4 {
                    let row = side * 4 + qn;
                    for k in i..(i + blink).min(n_eye) {
                        eye.data_mut()[row * n_eye + k] = EYE_MISSING;
                    }
                }
            }
            i += blink;
        } else {
            i += 1;
        }
    }

    Ok(Trial {
        id: format!("s{:02}_t{:02}", subject + 1, index),
        subject: subject + 1,
        arousal,
        valence,
        pre_trial_ms: spec.pre_trial_ms,
        signals: Signals { eeg, ecg, gsr, eye },
    })
}

/// All trials of `spec` as a raw-stage dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let trials = (0..spec.num_trials())
        .into_par_iter()
        .map(|g| generate_trial(spec, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { stage: Stage::Raw, trials, splits: None })
}

/// Generates, preprocesses and segments every trial without keeping the raw
/// signals around.
pub fn synthetic_segments(spec: &SyntheticSpec, pipeline: &PipelineConfig) -> Result<Vec<Segment>> {
    spec.validate()?;
    let per_trial = (0..spec.num_trials())
        .into_par_iter()
        .map(|g| {
            let raw = generate_trial(spec, g)?;
            let pre = preprocess_trial(&raw, pipeline)?;
            segment(&pre, pipeline.window_s, pipeline.hop_s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Least-squares phasor of the `freq` component of one channel.
fn phasor(x: &[f64], freq: f64, fs: f64) -> num_complex::Complex64 {
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let (s, c) = (2.0 * PI * freq * i as f64 / fs).sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    // a·sin(ωt) + b·cos(ωt) = R·sin(ωt + θ) with θ = arg(a + ib).
    num_complex::Complex64::new(a, b)
}

/// Label recovered from the mean adjacent-channel phase difference of the
/// `freq` component in `x: [C, L]`.
pub fn phase_label(x: &Tensor, fs: f64, freq: f64, spec: &SyntheticSpec, classes: usize) -> usize {
    let (c, l) = (x.shape()[0], x.shape()[1]);
    let z: Vec<_> = x.data().chunks(l).map(|row| phasor(row, freq, fs)).collect();
    let step: num_complex::Complex64 = (1..c).map(|i| z[i] * z[i - 1].conj()).sum();
    let observed = step.arg();
    let dist = |k: usize| {
        let d = (observed - spec.delta(k)).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    };
    (0..classes).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap_or(0)
}

/// Fraction of segments whose EEG phase pattern gives back their label.
pub fn phase_oracle_accuracy(segments: &[Segment], spec: &SyntheticSpec, target: Target) -> f64 {
    if segments.is_empty() {
        return 0.0;
    }
    let fs = Stage::Preprocessed.rate_hz(Modality::Eeg);
    let freq = match target {
        Target::Arousal => spec.arousal_hz,
        Target::Valence => spec.valence_hz,
    };
    let hits = segments
        .iter()
        .filter(|s| phase_label(&s.signals.eeg, fs, freq, spec, 3) == s.label(target))
        .count();
    hits as f64 / segments.len() as f64
}
