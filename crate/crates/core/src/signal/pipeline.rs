//! The preprocessing chain from raw trials to fixed-length segments.

use serde::{Deserialize, Serialize};

use super::filter::{filtfilt_rows, FilterSpec};
use crate::dataset::{Segment, Signals, Stage, Trial};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::tensor::Tensor;

/// Marker for blinks and lost tracking in eye data.
pub const EYE_MISSING: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Anti-alias filter order for the 256 → 128 Hz step.
    pub downsample_order: usize,
    /// Anti-alias cutoff as a fraction of the new Nyquist frequency.
    pub downsample_cutoff: f64,
    pub eeg_band_hz: (f64, f64),
    pub ecg_band_hz: (f64, f64),
    pub band_order: usize,
    pub gsr_lowpass_hz: f64,
    pub gsr_lowpass_order: usize,
    /// Apply the GSR low-pass at the native rate, before downsampling. A
    /// 60 Hz corner cannot be realized at 128 Hz, so turning this off only
    /// works with a lower `gsr_lowpass_hz`.
    pub gsr_lowpass_before_downsample: bool,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub gsr_baseline_ms: f64,
    pub window_s: f64,
    /// Distance between consecutive window starts; equal to `window_s` for
    /// non-overlapping segments.
    pub hop_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            downsample_order: 8,
            downsample_cutoff: 0.8,
            eeg_band_hz: (1.0, 45.0),
            ecg_band_hz: (0.5, 45.0),
            band_order: 4,
            gsr_lowpass_hz: 60.0,
            gsr_lowpass_order: 4,
            gsr_lowpass_before_downsample: true,
            notch_hz: 50.0,
            notch_q: 30.0,
            gsr_baseline_ms: 200.0,
            window_s: 10.0,
            hop_s: 10.0,
        }
    }
}

fn rows(x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [c, l] => Ok((c, l)),
        _ => Err(Error::Rank { op: "signal", expected: 2, got: x.shape().to_vec() }),
    }
}

/// Zero-phase filtering of every channel of `x: [C, L]` sampled at `fs`.
pub fn apply_filter(x: &Tensor, spec: &FilterSpec, fs: f64) -> Result<Tensor> {
    let (_, l) = rows(x)?;
    let sos = spec.design(fs)?;
    let mut out = x.clone();
    filtfilt_rows(&sos, out.data_mut(), l)?;
    Ok(out)
}

/// Halves the sampling rate: zero-phase Butterworth low-pass at
/// `cutoff · fs/4`, then every second sample. An odd trailing sample is dropped.
pub fn downsample_by2(x: &Tensor, fs: f64, order: usize, cutoff: f64) -> Result<Tensor> {
    let (c, l) = rows(x)?;
    let spec = FilterSpec::Lowpass { cutoff_hz: cutoff * fs / 4.0, order };
    let filtered = apply_filter(x, &spec, fs)?;
    let half = l / 2;
    let data = filtered
        .data()
        .chunks(l)
        .flat_map(|row| row.iter().step_by(2).take(half).copied())
        .collect();
    Tensor::new(&[c, half], data)
}

/// Subtracts the instantaneous cross-channel mean.
pub fn average_reference(x: &Tensor) -> Result<Tensor> {
    let (c, l) = rows(x)?;
    let mut out = x.clone();
    let d = out.data_mut();
    for t in 0..l {
        let mean = (0..c).map(|ch| d[ch * l + t]).sum::<f64>() / c as f64;
        for ch in 0..c {
            d[ch * l + t] -= mean;
        }
    }
    Ok(out)
}

/// Number of samples spanning `ms` milliseconds at `fs`.
pub fn samples_for_ms(ms: f64, fs: f64) -> usize {
    (ms * fs / 1000.0).round() as usize
}

/// Subtracts the mean of the `baseline_ms` window right before onset (at
/// `pre_trial_ms`) and returns the trial portion only.
pub fn baseline_correct_gsr(gsr: &Tensor, fs: f64, baseline_ms: f64, pre_trial_ms: f64) -> Result<Tensor> {
    let (c, l) = rows(gsr)?;
    let onset = samples_for_ms(pre_trial_ms, fs);
    let window = samples_for_ms(baseline_ms, fs);
    if window == 0 {
        return Err(Error::Config("GSR baseline window is shorter than one sample".into()));
    }
    if onset < window {
        return Err(Error::TooShort { what: "GSR pre-trial baseline", needed: window, got: onset });
    }
    if onset >= l {
        return Err(Error::TooShort { what: "GSR trial after onset", needed: onset + 1, got: l });
    }
    let mut data = Vec::with_capacity(c * (l - onset));
    for row in gsr.data().chunks(l) {
        let mean = row[onset - window..onset].iter().sum::<f64>() / window as f64;
        data.extend(row[onset..].iter().map(|v| v - mean));
    }
    Tensor::new(&[c, l - onset], data)
}

/// Drops the first `samples` columns.
pub fn crop_front(x: &Tensor, samples: usize) -> Result<Tensor> {
    let (c, l) = rows(x)?;
    if samples >= l {
        return Err(Error::TooShort { what: "trial after onset", needed: samples + 1, got: l });
    }
    let data = x.data().chunks(l).flat_map(|row| row[samples..].iter().copied()).collect();
    Tensor::new(&[c, l - samples], data)
}

/// Averages the left and right eye. Channels are `[left q0..q3, right q0..q3]`;
/// a missing sample (−1) in either eye yields −1.
pub fn merge_eyes(eye: &Tensor) -> Result<Tensor> {
    let (c, l) = rows(eye)?;
    if c % 2 != 0 {
        return Err(Error::InvalidInput(format!("eye data needs paired channels, got {c}")));
    }
    let half = c / 2;
    let d = eye.data();
    let mut out = Vec::with_capacity(half * l);
    for q in 0..half {
        let (left, right) = (&d[q * l..(q + 1) * l], &d[(q + half) * l..(q + half + 1) * l]);
        out.extend(left.iter().zip(right).map(|(&a, &b)| {
            if a == EYE_MISSING || b == EYE_MISSING {
                EYE_MISSING
            } else {
                (a + b) / 2.0
            }
        }));
    }
    Tensor::new(&[half, l], out)
}

/// Runs the full chain on a raw trial:
///
/// 1. GSR low-pass at the native rate (see `gsr_lowpass_before_downsample`)
/// 2. EEG/ECG/GSR downsampled 256 → 128 Hz
/// 3. EEG average reference
/// 4. EEG and ECG band-pass
/// 5. 50 Hz notch on EEG, ECG and GSR
/// 6. GSR baseline correction; the other modalities are cropped to onset
/// 7. left/right eye merge
pub fn preprocess_trial(raw: &Trial, cfg: &PipelineConfig) -> Result<Trial> {
    raw.validate(Stage::Raw)?;
    let fs_in = Stage::Raw.rate_hz(Modality::Eeg);
    let fs = Stage::Preprocessed.rate_hz(Modality::Eeg);
    let ctx = |e: Error| match e {
        Error::TooShort { .. } | Error::InvalidInput(_) => Error::Integrity { trial: raw.id.clone(), detail: e.to_string() },
        other => other,
    };
    let gsr_lp = FilterSpec::Lowpass { cutoff_hz: cfg.gsr_lowpass_hz, order: cfg.gsr_lowpass_order };
    let down = |x: &Tensor| downsample_by2(x, fs_in, cfg.downsample_order, cfg.downsample_cutoff);
    let notch = FilterSpec::Notch { freq_hz: cfg.notch_hz, q: cfg.notch_q };
    let s = &raw.signals;

    let mut gsr = s.gsr.clone();
    if cfg.gsr_lowpass_before_downsample {
        gsr = apply_filter(&gsr, &gsr_lp, fs_in).map_err(ctx)?;
    }
    let mut gsr = down(&gsr).map_err(ctx)?;
    if !cfg.gsr_lowpass_before_downsample {
        gsr = apply_filter(&gsr, &gsr_lp, fs).map_err(ctx)?;
    }
    let eeg = average_reference(&down(&s.eeg).map_err(ctx)?)?;
    let ecg = down(&s.ecg).map_err(ctx)?;

    let (lo, hi) = cfg.eeg_band_hz;
    let eeg = apply_filter(&eeg, &FilterSpec::Bandpass { low_hz: lo, high_hz: hi, order: cfg.band_order }, fs).map_err(ctx)?;
    let (lo, hi) = cfg.ecg_band_hz;
    let ecg = apply_filter(&ecg, &FilterSpec::Bandpass { low_hz: lo, high_hz: hi, order: cfg.band_order }, fs).map_err(ctx)?;
    let eeg = apply_filter(&eeg, &notch, fs).map_err(ctx)?;
    let ecg = apply_filter(&ecg, &notch, fs).map_err(ctx)?;
    let gsr = apply_filter(&gsr, &notch, fs).map_err(ctx)?;

    let pre = raw.pre_trial_ms as f64;
    let gsr = baseline_correct_gsr(&gsr, fs, cfg.gsr_baseline_ms, pre).map_err(ctx)?;
    let onset = samples_for_ms(pre, fs);
    let eeg = crop_front(&eeg, onset).map_err(ctx)?;
    let ecg = crop_front(&ecg, onset).map_err(ctx)?;
    let eye_fs = Stage::Raw.rate_hz(Modality::Eye);
    let eye = crop_front(&s.eye, samples_for_ms(pre, eye_fs)).map_err(ctx)?;
    let eye = merge_eyes(&eye)?;

    Ok(Trial {
        id: raw.id.clone(),
        subject: raw.subject,
        arousal: raw.arousal,
        valence: raw.valence,
        pre_trial_ms: 0,
        signals: Signals { eeg, ecg, gsr, eye },
    })
}

/// Cuts a preprocessed trial into windows of `window_s` seconds whose starts
/// are `hop_s` apart. A trial that does not divide evenly keeps only the full
/// windows (with a warning).
pub fn segment(trial: &Trial, window_s: f64, hop_s: f64) -> Result<Vec<Segment>> {
    if !(window_s > 0.0 && hop_s > 0.0) {
        return Err(Error::Config(format!("window {window_s} s and hop {hop_s} s must be positive")));
    }
    trial.validate(Stage::Preprocessed)?;
    let geometry = |m: Modality| {
        let fs = Stage::Preprocessed.rate_hz(m);
        let win = (window_s * fs).round() as usize;
        let hop = (hop_s * fs).round() as usize;
        let len = trial.signals.len(m);
        let count = if len < win { 0 } else { (len - win) / hop + 1 };
        (win, hop, len, count)
    };
    let count = Modality::ALL.iter().map(|&m| geometry(m).3).min().unwrap_or(0);
    let duration = trial.signals.len(Modality::Eeg) as f64 / Stage::Preprocessed.rate_hz(Modality::Eeg);
    let leftover = duration - (window_s + hop_s * count.saturating_sub(1) as f64);
    if count == 0 || leftover > 1e-9 {
        log::warn!(
            "trial {}: {duration:.2} s yields {count} window(s) of {window_s} s",
            trial.id
        );
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let cut = |m: Modality| -> Result<Tensor> {
            let (win, hop, len, _) = geometry(m);
            let t = trial.signals.get(m);
            let c = t.shape()[0];
            let data = t
                .data()
                .chunks(len)
                .flat_map(|row| row[k * hop..k * hop + win].iter().copied())
                .collect();
            Tensor::new(&[c, win], data)
        };
        out.push(Segment {
            trial_id: trial.id.clone(),
            index: k,
            subject: trial.subject,
            arousal: trial.arousal,
            valence: trial.valence,
            signals: Signals {
                eeg: cut(Modality::Eeg)?,
                ecg: cut(Modality::Ecg)?,
                gsr: cut(Modality::Gsr)?,
                eye: cut(Modality::Eye)?,
            },
        });
    }
    Ok(out)
}
